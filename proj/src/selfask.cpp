#include "ragscale/selfask.hpp"

#include "ragscale/errors.hpp"

namespace ragscale {

namespace {

std::string_view trim(std::string_view text) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t' || text.front() == '\r')) {
        text.remove_prefix(1);
    }
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
        text.remove_suffix(1);
    }
    return text;
}

}  // namespace

std::string_view prefix_of(StepKind kind) {
    switch (kind) {
        case StepKind::kSubQuery: return kFollowUpPrefix;
        case StepKind::kIntermediateAnswer: return kIntermediatePrefix;
        case StepKind::kFinalAnswer: return kFinalPrefix;
    }
    return {};
}

Step parse_step(std::string_view text) {
    std::string_view first_line = text.substr(0, text.find('\n'));
    StepKind kind{};
    std::size_t best_len = 0;
    for (auto prefix : kAllStepPrefixes) {
        if (first_line.starts_with(prefix) && prefix.size() > best_len) {
            best_len = prefix.size();
            kind = prefix == kFollowUpPrefix        ? StepKind::kSubQuery
                   : prefix == kIntermediatePrefix  ? StepKind::kIntermediateAnswer
                                                    : StepKind::kFinalAnswer;
        }
    }
    if (best_len == 0) {
        throw UnparseableStep(std::string(first_line));
    }
    auto payload = trim(first_line.substr(best_len));
    if (payload.empty()) {
        throw UnparseableStep(std::string(first_line));
    }
    return {kind, std::string(payload)};
}

std::string render_step(const Step& step) {
    return std::string(prefix_of(step.kind)) + step.payload;
}

std::string to_string(StepKind kind) {
    switch (kind) {
        case StepKind::kSubQuery: return "sub_query";
        case StepKind::kIntermediateAnswer: return "intermediate_answer";
        case StepKind::kFinalAnswer: return "final_answer";
    }
    return "unknown";
}

StepKind step_kind_from_string(const std::string& name) {
    if (name == "sub_query") return StepKind::kSubQuery;
    if (name == "intermediate_answer") return StepKind::kIntermediateAnswer;
    if (name == "final_answer") return StepKind::kFinalAnswer;
    throw Error("unknown step kind: " + name);
}

}  // namespace ragscale
