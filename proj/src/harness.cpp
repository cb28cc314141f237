#include "ragscale/harness.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <numeric>
#include <random>
#include <sstream>

#include "ragscale/errors.hpp"

namespace ragscale {

namespace {

std::vector<std::size_t> sample_indices(std::size_t total, std::size_t sample_size,
                                        std::uint64_t seed) {
    std::vector<std::size_t> indices(total);
    std::iota(indices.begin(), indices.end(), 0);
    if (sample_size == 0 || sample_size >= total) {
        return indices;
    }
    std::mt19937_64 rng(seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(sample_size);
    std::sort(indices.begin(), indices.end());  // keep dataset order
    return indices;
}

ExampleResult score_trace(const QAInstance& instance, const EpisodeTrace& trace) {
    ExampleResult result;
    result.id = instance.id;
    result.eff_len = trace.effective_length;
    result.failed = trace.failed;
    if (!trace.failed) {
        result.metrics = score_answer(trace.final_answer, instance.answers);
    }
    return result;
}

const ExperimentRecord* pick_better(const ExperimentRecord* best, const ExperimentRecord* cand,
                                    Metric metric) {
    if (best == nullptr) return cand;
    const double best_value = aggregate(*best, metric);
    const double cand_value = aggregate(*cand, metric);
    if (cand_value != best_value) return cand_value > best_value ? cand : best;
    if (cand->max_eff_len != best->max_eff_len) {
        return cand->max_eff_len < best->max_eff_len ? cand : best;
    }
    if (cand->config != best->config) return cand->config < best->config ? cand : best;
    if (key_of(*cand) < key_of(*best)) return cand;
    return best;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

void check_csv_safe(const std::string& value) {
    if (value.find(',') != std::string::npos || value.find('\n') != std::string::npos) {
        throw Error("value cannot be written to CSV (contains comma or newline): " + value);
    }
}

}  // namespace

std::string to_string(Metric metric) {
    switch (metric) {
        case Metric::kEm: return "em";
        case Metric::kF1: return "f1";
        case Metric::kAcc: return "acc";
    }
    return "unknown";
}

Metric parse_metric(const std::string& name) {
    if (name == "em") return Metric::kEm;
    if (name == "f1") return Metric::kF1;
    if (name == "acc") return Metric::kAcc;
    throw InvalidConfig("unknown metric: " + name);
}

void ExperimentRecord::recompute_aggregates() {
    mean_em = mean_f1 = mean_acc = mean_eff_len = 0.0;
    max_eff_len = 0;
    if (examples.empty()) return;
    for (const auto& ex : examples) {
        mean_em += ex.metrics.em;
        mean_f1 += ex.metrics.f1;
        mean_acc += ex.metrics.acc;
        mean_eff_len += static_cast<double>(ex.eff_len);
        max_eff_len = std::max(max_eff_len, ex.eff_len);
    }
    const double n = static_cast<double>(examples.size());
    mean_em /= n;
    mean_f1 /= n;
    mean_acc /= n;
    mean_eff_len /= n;
}

double aggregate(const ExperimentRecord& record, Metric metric) {
    switch (metric) {
        case Metric::kEm: return record.mean_em;
        case Metric::kF1: return record.mean_f1;
        case Metric::kAcc: return record.mean_acc;
    }
    return 0.0;
}

RecordKey key_of(const ExperimentRecord& record) {
    return {record.dataset, to_string(record.strategy), record.config};
}

nlohmann::json record_to_json(const ExperimentRecord& record) {
    nlohmann::json examples = nlohmann::json::array();
    for (const auto& ex : record.examples) {
        examples.push_back({
            {"id", ex.id},
            {"em", ex.metrics.em},
            {"f1", ex.metrics.f1},
            {"acc", ex.metrics.acc},
            {"eff_len", ex.eff_len},
            {"failed", ex.failed},
        });
    }
    return {
        {"dataset", record.dataset},
        {"strategy", to_string(record.strategy)},
        {"k", record.config.k},
        {"m", record.config.m},
        {"n", record.config.n},
        {"seed", record.seed},
        {"sample_size", record.sample_size},
        {"manifest_hash", record.manifest_hash},
        {"examples", std::move(examples)},
        {"aggregates",
         {{"em", record.mean_em},
          {"f1", record.mean_f1},
          {"acc", record.mean_acc},
          {"max_eff_len", record.max_eff_len},
          {"mean_eff_len", record.mean_eff_len}}},
    };
}

ExperimentRecord record_from_json(const nlohmann::json& obj) {
    ExperimentRecord record;
    record.dataset = obj.at("dataset").get<std::string>();
    record.strategy = parse_strategy(obj.at("strategy").get<std::string>());
    record.config = {obj.at("k").get<int>(), obj.at("m").get<int>(), obj.at("n").get<int>()};
    record.seed = obj.value("seed", 0ULL);
    record.sample_size = obj.value("sample_size", std::size_t{0});
    record.manifest_hash = obj.value("manifest_hash", "");
    for (const auto& ex : obj.at("examples")) {
        ExampleResult result;
        result.id = ex.at("id").get<std::string>();
        result.metrics = {ex.at("em").get<int>(), ex.at("f1").get<double>(),
                          ex.at("acc").get<int>()};
        result.eff_len = ex.at("eff_len").get<long>();
        result.failed = ex.at("failed").get<bool>();
        record.examples.push_back(std::move(result));
    }
    record.recompute_aggregates();
    return record;
}

RecordStore::RecordStore(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;  // store starts empty
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        keys_.insert(key_of(record_from_json(nlohmann::json::parse(line))));
    }
}

void RecordStore::append(const ExperimentRecord& record) {
    RecordKey key = key_of(record);
    if (keys_.contains(key)) {
        throw Error("record already present: " + key.dataset + "/" + key.strategy);
    }
    std::ofstream out(path_, std::ios::app);
    if (!out) {
        throw Error("cannot append to record store: " + path_.string());
    }
    out << record_to_json(record).dump() << '\n';
    keys_.insert(std::move(key));
}

std::vector<ExperimentRecord> RecordStore::load_all() const {
    std::vector<ExperimentRecord> records;
    std::ifstream in(path_);
    if (!in) return records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        try {
            records.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw MalformedRecord(line_no, e.what());
        }
    }
    return records;
}

ExperimentRecord run_config(const std::string& dataset_id, std::span<const QAInstance> instances,
                            Strategy strategy, const InferenceConfig& config, const Index* index,
                            std::span<const Demonstration> demos, Backend& backend,
                            const RunOptions& options) {
    validate_config(config, strategy);
    ExperimentRecord record;
    record.dataset = dataset_id;
    record.strategy = strategy;
    record.config = config;
    record.seed = options.seed;
    record.sample_size = options.sample_size;
    record.manifest_hash = options.manifest_hash;

    auto indices = sample_indices(instances.size(), options.sample_size, options.seed);
    std::vector<EpisodeTrace> traces(indices.size());
    auto run_one = [&](std::size_t slot) {
        const auto& instance = instances[indices[slot]];
        traces[slot] =
            run_episode(strategy, config, instance.question, index, demos, backend, options.episode);
    };

    const bool concurrent = options.parallel > 1 && backend.supports_concurrency();
    if (concurrent) {
        std::size_t next = 0;
        while (next < indices.size()) {
            std::vector<std::future<void>> batch;
            for (int j = 0; j < options.parallel && next < indices.size(); ++j, ++next) {
                batch.push_back(std::async(std::launch::async, run_one, next));
            }
            for (auto& f : batch) f.get();
        }
    } else {
        for (std::size_t i = 0; i < indices.size(); ++i) run_one(i);
    }

    std::ofstream trace_out;
    if (!options.trace_path.empty()) {
        trace_out.open(options.trace_path, std::ios::app);
        if (!trace_out) {
            throw Error("cannot write traces to " + options.trace_path.string());
        }
    }
    for (std::size_t i = 0; i < indices.size(); ++i) {
        record.examples.push_back(score_trace(instances[indices[i]], traces[i]));
        if (trace_out.is_open()) {
            nlohmann::json obj = trace_to_json(traces[i]);
            obj["example_id"] = instances[indices[i]].id;
            obj["dataset"] = dataset_id;
            obj["manifest_hash"] = options.manifest_hash;
            trace_out << obj.dump() << '\n';
        }
    }
    record.recompute_aggregates();
    return record;
}

std::vector<ExperimentRecord> run_grid(const std::string& dataset_id,
                                       std::span<const QAInstance> instances, Strategy strategy,
                                       std::span<const InferenceConfig> grid, const Index* index,
                                       std::span<const Demonstration> demos, Backend& backend,
                                       const RunOptions& options, RecordStore* store) {
    if (grid.empty()) {
        throw InvalidConfig("grid is empty");
    }
    for (const auto& config : grid) validate_config(config, strategy);
    std::vector<ExperimentRecord> records;
    for (const auto& config : grid) {
        RecordKey key{dataset_id, to_string(strategy), config};
        if (store != nullptr && store->contains(key)) {
            continue;
        }
        ExperimentRecord record =
            run_config(dataset_id, instances, strategy, config, index, demos, backend, options);
        if (store != nullptr) store->append(record);
        records.push_back(std::move(record));
    }
    return records;
}

std::vector<InferenceConfig> default_grid(Strategy strategy) {
    static const int kDocCounts[] = {0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000};
    static const int kShotCounts[] = {0, 1, 2, 4, 8, 16, 32, 64, 128, 256};
    std::vector<InferenceConfig> grid;
    const int max_n = strategy == Strategy::kDrag ? 1 : 5;
    for (int n = 1; n <= max_n; ++n) {
        for (int k : kDocCounts) {
            for (int m : kShotCounts) {
                grid.push_back({k, m, n});
            }
        }
    }
    return grid;
}

OptimalResult optimal_performance(std::span<const ExperimentRecord> records, long l_max,
                                  Metric metric) {
    if (records.empty()) {
        throw InvalidConfig("no records given");
    }
    const ExperimentRecord* best = nullptr;
    for (const auto& record : records) {
        const bool feasible = std::all_of(record.examples.begin(), record.examples.end(),
                                          [&](const ExampleResult& ex) { return ex.eff_len <= l_max; });
        if (!feasible) continue;
        best = pick_better(best, &record, metric);
    }
    if (best == nullptr) {
        throw NoFeasibleConfig();
    }
    return {aggregate(*best, metric), key_of(*best), best->max_eff_len};
}

OptimalResult optimal_performance_mean_constraint(std::span<const ExperimentRecord> records,
                                                  long l_max, Metric metric) {
    if (records.empty()) {
        throw InvalidConfig("no records given");
    }
    const ExperimentRecord* best = nullptr;
    for (const auto& record : records) {
        if (record.mean_eff_len > static_cast<double>(l_max)) continue;
        best = pick_better(best, &record, metric);
    }
    if (best == nullptr) {
        throw NoFeasibleConfig();
    }
    return {aggregate(*best, metric), key_of(*best), best->max_eff_len};
}

std::vector<SummaryRow> summarize(std::span<const ExperimentRecord> records) {
    std::vector<SummaryRow> rows;
    for (const auto& record : records) {
        for (Metric metric : {Metric::kEm, Metric::kF1, Metric::kAcc}) {
            rows.push_back({record.dataset, to_string(record.strategy), record.config,
                            to_string(metric), aggregate(record, metric), record.max_eff_len,
                            record.mean_eff_len});
        }
    }
    return rows;
}

void write_summary_csv(std::span<const SummaryRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write summary CSV: " + path.string());
    }
    out << "dataset,strategy,k,m,n,metric,value,max_eff_len,mean_eff_len\n";
    out.precision(17);
    for (const auto& row : rows) {
        check_csv_safe(row.dataset);
        check_csv_safe(row.strategy);
        out << row.dataset << ',' << row.strategy << ',' << row.config.k << ',' << row.config.m
            << ',' << row.config.n << ',' << row.metric << ',' << row.value << ','
            << row.max_eff_len << ',' << row.mean_eff_len << '\n';
    }
}

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open summary CSV: " + path.string());
    }
    std::vector<SummaryRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;  // header
        auto fields = split_csv_line(line);
        if (fields.size() != 9) {
            throw MalformedRecord(line_no, "expected 9 CSV fields");
        }
        SummaryRow row;
        row.dataset = fields[0];
        row.strategy = fields[1];
        row.config = {std::stoi(fields[2]), std::stoi(fields[3]), std::stoi(fields[4])};
        row.metric = fields[5];
        row.value = std::stod(fields[6]);
        row.max_eff_len = std::stol(fields[7]);
        row.mean_eff_len = std::stod(fields[8]);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace ragscale
