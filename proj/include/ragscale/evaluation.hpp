#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ragscale {

struct MetricTriple {
    int em = 0;
    double f1 = 0.0;
    int acc = 0;
};

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace. Applied to both predictions and gold answers before scoring.
std::string normalize_answer(std::string_view text);

/// 1 iff the normalized prediction equals any normalized gold.
int exact_match(std::string_view pred, const std::vector<std::string>& golds);

/// Token-multiset precision/recall harmonic mean on normalized text, max over
/// golds. Either side empty scores 0; both empty scores 1.
double f1_score(std::string_view pred, const std::vector<std::string>& golds);

/// 1 iff any normalized gold is a substring of the normalized prediction.
int accuracy_contains(std::string_view pred, const std::vector<std::string>& golds);

MetricTriple score_answer(std::string_view pred, const std::vector<std::string>& golds);

}  // namespace ragscale
