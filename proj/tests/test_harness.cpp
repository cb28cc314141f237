#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <random>

#include "ragscale/errors.hpp"
#include "ragscale/harness.hpp"
#include "support/temp_dir.hpp"

using namespace ragscale;
using ragscale::testing::TempDir;

namespace {

std::shared_ptr<const Corpus> small_corpus() {
    std::vector<Document> docs;
    for (int i = 0; i < 6; ++i) {
        docs.push_back({"d" + std::to_string(i), "Doc " + std::to_string(i),
                        "passage about topic " + std::to_string(i)});
    }
    return std::make_shared<Corpus>(Corpus::from_documents(std::move(docs)));
}

std::vector<QAInstance> small_dataset() {
    return {
        {"q0", "what is topic 0?", {"alpha"}, {"d0"}},
        {"q1", "what is topic 1?", {"beta"}, {"d1"}},
        {"q2", "what is topic 2?", {"gamma"}, {"d2"}},
    };
}

ExperimentRecord synthetic_record(const std::string& dataset, Strategy strategy,
                                  InferenceConfig config, std::vector<double> f1s,
                                  std::vector<long> lengths) {
    ExperimentRecord record;
    record.dataset = dataset;
    record.strategy = strategy;
    record.config = config;
    for (std::size_t i = 0; i < f1s.size(); ++i) {
        ExampleResult ex;
        ex.id = "e" + std::to_string(i);
        ex.metrics = {f1s[i] >= 1.0 ? 1 : 0, f1s[i], f1s[i] > 0 ? 1 : 0};
        ex.eff_len = lengths[i];
        record.examples.push_back(ex);
    }
    record.recompute_aggregates();
    return record;
}

}  // namespace

TEST_CASE("run_config scores every sampled example") {
    auto corpus = small_corpus();
    auto index = build_index(corpus);
    auto dataset = small_dataset();
    FunctionBackend backend([&](const GenerationRequest& req) -> std::string {
        if (req.prompt.find("what is topic 0?") != std::string::npos) return "alpha";
        if (req.prompt.find("what is topic 1?") != std::string::npos) return "wrong";
        return "gamma";
    });
    RunOptions options;
    auto record = run_config("tiny", dataset, Strategy::kDrag, {2, 0, 1}, index.get(), {}, backend,
                             options);
    REQUIRE(record.examples.size() == 3);
    CHECK(record.examples[0].metrics.em == 1);
    CHECK(record.examples[1].metrics.em == 0);
    CHECK(record.mean_em == doctest::Approx(2.0 / 3.0));
    CHECK(record.mean_eff_len > 0.0);
    CHECK(record.max_eff_len >= static_cast<long>(record.mean_eff_len));

    // Aggregates equal recomputed means.
    double em = 0;
    for (const auto& ex : record.examples) em += ex.metrics.em;
    CHECK(record.mean_em == doctest::Approx(em / 3.0));
}

TEST_CASE("failed episodes count as zeros") {
    auto corpus = small_corpus();
    auto index = build_index(corpus);
    auto dataset = small_dataset();
    // Exhausts after the first episode; remaining episodes fail.
    ScriptedBackend backend({{std::nullopt, "alpha"}});
    RunOptions options;
    auto record =
        run_config("tiny", dataset, Strategy::kDrag, {1, 0, 1}, index.get(), {}, backend, options);
    REQUIRE(record.examples.size() == 3);
    CHECK(record.examples[0].failed == false);
    CHECK(record.examples[1].failed == true);
    CHECK(record.examples[1].metrics.f1 == 0.0);
    CHECK(record.mean_em == doctest::Approx(1.0 / 3.0));  // denominator keeps failures
}

TEST_CASE("seeded subsampling is recorded and deterministic") {
    auto corpus = small_corpus();
    auto index = build_index(corpus);
    auto dataset = small_dataset();
    FunctionBackend backend([](const GenerationRequest&) { return std::string("alpha"); });
    RunOptions options;
    options.sample_size = 2;
    options.seed = 42;
    auto a = run_config("tiny", dataset, Strategy::kDrag, {0, 0, 1}, index.get(), {}, backend,
                        options);
    auto b = run_config("tiny", dataset, Strategy::kDrag, {0, 0, 1}, index.get(), {}, backend,
                        options);
    REQUIRE(a.examples.size() == 2);
    CHECK(a.sample_size == 2);
    CHECK(a.seed == 42);
    CHECK(a.examples[0].id == b.examples[0].id);
    CHECK(a.examples[1].id == b.examples[1].id);
}

TEST_CASE("run_grid resumes from the record store") {
    auto corpus = small_corpus();
    auto index = build_index(corpus);
    auto dataset = small_dataset();
    std::atomic<int> calls{0};
    FunctionBackend backend([&](const GenerationRequest&) {
        ++calls;
        return std::string("alpha");
    });
    TempDir dir;
    std::vector<InferenceConfig> grid = {{0, 0, 1}, {1, 0, 1}, {2, 0, 1}};
    RunOptions options;
    {
        RecordStore store(dir.path() / "records.jsonl");
        auto fresh = run_grid("tiny", dataset, Strategy::kDrag, grid, index.get(), {}, backend,
                              options, &store);
        CHECK(fresh.size() == 3);
    }
    const int first_pass_calls = calls.exchange(0);
    CHECK(first_pass_calls == 9);

    RecordStore reopened(dir.path() / "records.jsonl");
    auto resumed = run_grid("tiny", dataset, Strategy::kDrag, grid, index.get(), {}, backend,
                            options, &reopened);
    CHECK(resumed.empty());
    CHECK(calls == 0);  // nothing re-run
    auto all = reopened.load_all();
    CHECK(all.size() == 3);
    std::set<RecordKey> keys;
    for (const auto& record : all) keys.insert(key_of(record));
    CHECK(keys.size() == 3);
}

TEST_CASE("concurrent episodes aggregate in dataset order") {
    auto corpus = small_corpus();
    auto index = build_index(corpus);
    std::vector<QAInstance> dataset;
    for (int i = 0; i < 12; ++i) {
        dataset.push_back({"q" + std::to_string(i), "question number " + std::to_string(i) + "?",
                           {"answer" + std::to_string(i)}, {}});
    }
    FunctionBackend backend(
        [&](const GenerationRequest& req) -> std::string {
            for (int i = 0; i < 12; ++i) {
                if (req.prompt.find("question number " + std::to_string(i) + "?") !=
                    std::string::npos) {
                    return "answer" + std::to_string(i);
                }
            }
            return "?";
        },
        /*concurrent=*/true);
    RunOptions serial;
    RunOptions parallel;
    parallel.parallel = 4;
    auto a = run_config("tiny", dataset, Strategy::kDrag, {1, 0, 1}, index.get(), {}, backend,
                        serial);
    auto b = run_config("tiny", dataset, Strategy::kDrag, {1, 0, 1}, index.get(), {}, backend,
                        parallel);
    REQUIRE(a.examples.size() == b.examples.size());
    for (std::size_t i = 0; i < a.examples.size(); ++i) {
        CHECK(a.examples[i].id == b.examples[i].id);
        CHECK(a.examples[i].metrics.em == b.examples[i].metrics.em);
        CHECK(a.examples[i].eff_len == b.examples[i].eff_len);
    }
    CHECK(a.mean_em == doctest::Approx(1.0));
}

TEST_CASE("default grids match the sweep sizes") {
    CHECK(default_grid(Strategy::kDrag).size() == 11 * 10);
    CHECK(default_grid(Strategy::kIterDrag).size() == 11 * 10 * 5);
}

TEST_CASE("optimal performance under the per-example budget") {
    std::vector<ExperimentRecord> records;
    records.push_back(synthetic_record("ds", Strategy::kDrag, {1, 0, 1}, {0.3, 0.3}, {100, 120}));
    records.push_back(synthetic_record("ds", Strategy::kDrag, {2, 0, 1}, {0.5, 0.5}, {150, 180}));

    SUBCASE("max over feasible configs") {
        auto result = optimal_performance(records, 1000, Metric::kF1);
        CHECK(result.p_star == doctest::Approx(0.5));
        CHECK(result.key.config == InferenceConfig{2, 0, 1});
    }
    SUBCASE("a single over-budget example excludes the config") {
        records.push_back(
            synthetic_record("ds", Strategy::kDrag, {5, 0, 1}, {0.9, 0.9}, {100, 1001}));
        auto result = optimal_performance(records, 1000, Metric::kF1);
        CHECK(result.key.config == InferenceConfig{2, 0, 1});  // 0.9 config infeasible
        // ... even though its mean length is far below the budget
        CHECK(records.back().mean_eff_len < 1000.0);
        auto diagnostic = optimal_performance_mean_constraint(records, 1000, Metric::kF1);
        CHECK(diagnostic.key.config == InferenceConfig{5, 0, 1});
    }
    SUBCASE("no feasible config") {
        CHECK_THROWS_AS(optimal_performance(records, 110, Metric::kF1), NoFeasibleConfig);
    }
    SUBCASE("ties prefer smaller max length then lexicographic theta") {
        records.clear();
        records.push_back(synthetic_record("ds", Strategy::kDrag, {5, 2, 1}, {0.5}, {300}));
        records.push_back(synthetic_record("ds", Strategy::kDrag, {2, 9, 1}, {0.5}, {200}));
        records.push_back(synthetic_record("ds", Strategy::kDrag, {2, 4, 1}, {0.5}, {200}));
        auto result = optimal_performance(records, 1000, Metric::kF1);
        CHECK(result.key.config == InferenceConfig{2, 4, 1});
    }
    SUBCASE("record order does not matter") {
        auto forward = optimal_performance(records, 1000, Metric::kF1);
        std::vector<ExperimentRecord> reversed(records.rbegin(), records.rend());
        auto backward = optimal_performance(reversed, 1000, Metric::kF1);
        CHECK(forward.key == backward.key);
        CHECK(forward.p_star == backward.p_star);
    }
}

TEST_CASE("p_star is non-decreasing in the budget") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> metric_dist(0.0, 1.0);
    std::uniform_int_distribution<long> len_dist(10, 5000);
    std::uniform_int_distribution<int> n_records(1, 8);
    std::uniform_int_distribution<int> n_examples(1, 6);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ExperimentRecord> records;
        const int nr = n_records(rng);
        for (int r = 0; r < nr; ++r) {
            std::vector<double> f1s;
            std::vector<long> lens;
            const int ne = n_examples(rng);
            for (int e = 0; e < ne; ++e) {
                f1s.push_back(metric_dist(rng));
                lens.push_back(len_dist(rng));
            }
            records.push_back(
                synthetic_record("ds", Strategy::kDrag, {r, 0, 1}, f1s, lens));
        }
        double previous = -1.0;
        for (long budget : {100L, 500L, 1000L, 2500L, 6000L}) {
            double p_star;
            try {
                p_star = optimal_performance(records, budget, Metric::kF1).p_star;
            } catch (const NoFeasibleConfig&) {
                continue;
            }
            CHECK(p_star >= previous);
            previous = p_star;
        }
    }
}

TEST_CASE("records serialize to JSONL and summaries to CSV") {
    TempDir dir;
    auto record = synthetic_record("ds", Strategy::kIterDrag, {5, 2, 3}, {0.25, 0.75}, {64, 640});
    record.seed = 9;
    record.sample_size = 2;
    record.manifest_hash = "abc123";

    auto obj = record_to_json(record);
    auto parsed = record_from_json(obj);
    CHECK(parsed.dataset == record.dataset);
    CHECK(parsed.config == record.config);
    CHECK(parsed.mean_f1 == doctest::Approx(record.mean_f1));
    CHECK(parsed.max_eff_len == record.max_eff_len);
    CHECK(parsed.manifest_hash == "abc123");

    std::vector<ExperimentRecord> records = {record};
    auto rows = summarize(records);
    REQUIRE(rows.size() == 3);  // one per metric
    auto csv_path = dir.path() / "summary.csv";
    write_summary_csv(rows, csv_path);
    auto loaded = read_summary_csv(csv_path);
    REQUIRE(loaded.size() == 3);
    CHECK(loaded[1].metric == "f1");
    CHECK(loaded[1].value == doctest::Approx(0.5));
    CHECK(loaded[1].config == InferenceConfig{5, 2, 3});
    CHECK(loaded[1].max_eff_len == 640);
}
