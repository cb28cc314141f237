#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ragscale/backend.hpp"
#include "ragscale/prompting.hpp"
#include "ragscale/retrieval.hpp"

namespace ragscale {

enum class Strategy { kDrag, kIterDrag };

std::string to_string(Strategy strategy);
Strategy parse_strategy(const std::string& name);

/// The tunable parameter vector theta = (k, m, n): documents per retrieval,
/// in-context examples, and max decomposition iterations.
struct InferenceConfig {
    int k = 0;
    int m = 0;
    int n = 1;

    friend auto operator<=>(const InferenceConfig&, const InferenceConfig&) = default;
};

/// k >= 0, m >= 0, n >= 1; DRAG requires n == 1, IterDRAG allows n <= 5.
void validate_config(const InferenceConfig& config, Strategy strategy);

struct CallRecord {
    RenderedPrompt prompt;
    std::string response;
    Step step;
};

struct EpisodeTrace {
    Strategy strategy = Strategy::kDrag;
    InferenceConfig config;
    std::string query;
    std::vector<CallRecord> calls;
    std::vector<RetrievalRun> retrieval_events;
    std::string final_answer;
    long effective_length = 0;
    bool failed = false;
    std::string failure_reason;
    int constraint_retries = 0;  // violations recovered by the single retry
    int demo_doc_cap = 0;        // documents rendered per demonstration
};

/// Total input tokens across every generation call; output tokens excluded.
long effective_context_length(const EpisodeTrace& trace);

struct EpisodeOptions {
    const PromptTemplates* templates = nullptr;  // nullptr = defaults
    std::shared_ptr<const Tokenizer> tokenizer;  // nullptr = whitespace
    int max_output_tokens = 64;
    double timeout_seconds = 120.0;
};

/// Single retrieval (when k > 0), single render, single generation; the raw
/// response is the final answer. Backend failures yield a flagged trace.
EpisodeTrace run_drag(const InferenceConfig& config, const std::string& query, const Index* index,
                      std::span<const Demonstration> demos, Backend& backend,
                      const EpisodeOptions& options = {});

/// Interleaved retrieval and constrained generation in the Self-Ask format;
/// after n sub-query rounds without a final answer the next call is
/// constrained to the final-answer prefix alone.
EpisodeTrace run_iterdrag(const InferenceConfig& config, const std::string& query,
                          const Index* index, std::span<const Demonstration> demos,
                          Backend& backend, const EpisodeOptions& options = {});

EpisodeTrace run_episode(Strategy strategy, const InferenceConfig& config,
                         const std::string& query, const Index* index,
                         std::span<const Demonstration> demos, Backend& backend,
                         const EpisodeOptions& options = {});

struct DemoBuildResult {
    std::vector<Demonstration> demos;
    bool quota_met = false;
    std::size_t attempted = 0;
};

/// Runs the strategy over training instances (no demonstrations, constrained
/// decoding) and keeps one demonstration per instance whose final answer is an
/// exact match. Order is fixed by a seeded shuffle. A partial result is
/// returned when the training set runs out before the quota.
DemoBuildResult build_demonstrations(std::span<const QAInstance> train, const Index* index,
                                     Backend& backend, Strategy strategy, std::size_t quota,
                                     const InferenceConfig& config, std::uint64_t seed,
                                     const EpisodeOptions& options = {});

nlohmann::json trace_to_json(const EpisodeTrace& trace);

void save_demonstrations(std::span<const Demonstration> demos, const std::filesystem::path& path);
std::vector<Demonstration> load_demonstrations(const std::filesystem::path& path);

}  // namespace ragscale
