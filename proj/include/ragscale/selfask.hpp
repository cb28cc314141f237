#pragma once

#include <array>
#include <string>
#include <string_view>

namespace ragscale {

// The constrained generation grammar: every step is a single line starting
// with one of these prefixes.
inline constexpr std::string_view kFollowUpPrefix = "Follow up: ";
inline constexpr std::string_view kIntermediatePrefix = "Intermediate answer: ";
inline constexpr std::string_view kFinalPrefix = "So the final answer is: ";

inline constexpr std::array<std::string_view, 3> kAllStepPrefixes = {
    kFollowUpPrefix, kIntermediatePrefix, kFinalPrefix};

enum class StepKind { kSubQuery, kIntermediateAnswer, kFinalAnswer };

struct Step {
    StepKind kind = StepKind::kFinalAnswer;
    std::string payload;
};

std::string_view prefix_of(StepKind kind);

/// Classify by longest matching prefix; payload is the remainder up to the
/// first line break, trimmed. Throws UnparseableStep when no prefix matches
/// or the payload is empty.
Step parse_step(std::string_view text);

/// Inverse of parse_step for single-line payloads.
std::string render_step(const Step& step);

std::string to_string(StepKind kind);
StepKind step_kind_from_string(const std::string& name);

}  // namespace ragscale
