#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ragscale/evaluation.hpp"
#include "ragscale/orchestrator.hpp"

namespace ragscale {

enum class Metric { kEm, kF1, kAcc };

std::string to_string(Metric metric);
Metric parse_metric(const std::string& name);

struct ExampleResult {
    std::string id;
    MetricTriple metrics;
    long eff_len = 0;
    bool failed = false;
};

struct ExperimentRecord {
    std::string dataset;
    Strategy strategy = Strategy::kDrag;
    InferenceConfig config;
    std::uint64_t seed = 0;
    std::size_t sample_size = 0;  // 0 = whole dataset
    std::string manifest_hash;
    std::vector<ExampleResult> examples;
    double mean_em = 0.0;
    double mean_f1 = 0.0;
    double mean_acc = 0.0;
    long max_eff_len = 0;
    double mean_eff_len = 0.0;

    void recompute_aggregates();
};

double aggregate(const ExperimentRecord& record, Metric metric);

struct RecordKey {
    std::string dataset;
    std::string strategy;
    InferenceConfig config;

    friend auto operator<=>(const RecordKey&, const RecordKey&) = default;
};

RecordKey key_of(const ExperimentRecord& record);

nlohmann::json record_to_json(const ExperimentRecord& record);
ExperimentRecord record_from_json(const nlohmann::json& obj);

/// Append-only JSONL store keyed by (dataset, strategy, theta); the unit of
/// grid resumability.
class RecordStore {
public:
    explicit RecordStore(std::filesystem::path path);

    bool contains(const RecordKey& key) const { return keys_.contains(key); }
    void append(const ExperimentRecord& record);
    std::vector<ExperimentRecord> load_all() const;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::set<RecordKey> keys_;
};

struct RunOptions {
    EpisodeOptions episode;
    int parallel = 1;
    std::uint64_t seed = 0;
    std::size_t sample_size = 0;  // 0 = all instances
    std::string manifest_hash;
    std::filesystem::path trace_path;  // when set, one JSON line per episode
};

/// Evaluate one configuration over (a seeded sample of) the dataset. Failed
/// episodes score zero and stay in the denominator.
ExperimentRecord run_config(const std::string& dataset_id, std::span<const QAInstance> instances,
                            Strategy strategy, const InferenceConfig& config, const Index* index,
                            std::span<const Demonstration> demos, Backend& backend,
                            const RunOptions& options);

/// One record per configuration; configurations already in the store are
/// skipped. Newly produced records are appended to the store.
std::vector<ExperimentRecord> run_grid(const std::string& dataset_id,
                                       std::span<const QAInstance> instances, Strategy strategy,
                                       std::span<const InferenceConfig> grid, const Index* index,
                                       std::span<const Demonstration> demos, Backend& backend,
                                       const RunOptions& options, RecordStore* store);

/// The default sweep: k in {0,1,2,5,10,20,50,100,200,500,1000},
/// m in {0,1,2,4,...,256}, n = 1 for DRAG and 1..5 for IterDRAG.
std::vector<InferenceConfig> default_grid(Strategy strategy);

struct OptimalResult {
    double p_star = 0.0;
    RecordKey key;
    long max_eff_len = 0;
};

/// Best average metric over configurations whose every example stays within
/// the budget. Ties prefer the smaller max effective length, then the
/// lexicographically smaller (k, m, n). Throws NoFeasibleConfig.
OptimalResult optimal_performance(std::span<const ExperimentRecord> records, long l_max,
                                  Metric metric);

/// Diagnostic variant constraining the mean effective length instead.
OptimalResult optimal_performance_mean_constraint(std::span<const ExperimentRecord> records,
                                                  long l_max, Metric metric);

struct SummaryRow {
    std::string dataset;
    std::string strategy;
    InferenceConfig config;
    std::string metric;
    double value = 0.0;
    long max_eff_len = 0;
    double mean_eff_len = 0.0;
};

std::vector<SummaryRow> summarize(std::span<const ExperimentRecord> records);
void write_summary_csv(std::span<const SummaryRow> rows, const std::filesystem::path& path);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);

}  // namespace ragscale
