#include "ragscale/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "ragscale/tokenize.hpp"

namespace ragscale {

namespace {

bool is_punct(char c) {
    return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

std::map<std::string, int> token_bag(const std::string& normalized) {
    std::map<std::string, int> bag;
    for (auto& tok : whitespace_tokens(normalized)) {
        ++bag[tok];
    }
    return bag;
}

double f1_single(const std::string& pred_norm, const std::string& gold_norm) {
    auto pred_bag = token_bag(pred_norm);
    auto gold_bag = token_bag(gold_norm);
    if (pred_bag.empty() || gold_bag.empty()) {
        return (pred_bag.empty() && gold_bag.empty()) ? 1.0 : 0.0;
    }
    int common = 0;
    int pred_total = 0;
    int gold_total = 0;
    for (const auto& [tok, n] : pred_bag) {
        pred_total += n;
        auto it = gold_bag.find(tok);
        if (it != gold_bag.end()) common += std::min(n, it->second);
    }
    for (const auto& [tok, n] : gold_bag) gold_total += n;
    if (common == 0) return 0.0;
    const double precision = static_cast<double>(common) / pred_total;
    const double recall = static_cast<double>(common) / gold_total;
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

std::string normalize_answer(std::string_view text) {
    std::string lowered;
    lowered.reserve(text.size());
    for (char c : text) {
        if (is_punct(c)) continue;
        lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    std::string out;
    for (auto& tok : whitespace_tokens(lowered)) {
        if (tok == "a" || tok == "an" || tok == "the") continue;
        if (!out.empty()) out += ' ';
        out += tok;
    }
    return out;
}

int exact_match(std::string_view pred, const std::vector<std::string>& golds) {
    const auto pred_norm = normalize_answer(pred);
    return std::any_of(golds.begin(), golds.end(), [&](const std::string& gold) {
               return normalize_answer(gold) == pred_norm;
           })
               ? 1
               : 0;
}

double f1_score(std::string_view pred, const std::vector<std::string>& golds) {
    const auto pred_norm = normalize_answer(pred);
    double best = 0.0;
    for (const auto& gold : golds) {
        best = std::max(best, f1_single(pred_norm, normalize_answer(gold)));
    }
    return best;
}

int accuracy_contains(std::string_view pred, const std::vector<std::string>& golds) {
    const auto pred_norm = normalize_answer(pred);
    return std::any_of(golds.begin(), golds.end(), [&](const std::string& gold) {
               return pred_norm.find(normalize_answer(gold)) != std::string::npos;
           })
               ? 1
               : 0;
}

MetricTriple score_answer(std::string_view pred, const std::vector<std::string>& golds) {
    return {exact_match(pred, golds), f1_score(pred, golds), accuracy_contains(pred, golds)};
}

}  // namespace ragscale
