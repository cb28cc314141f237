// Command-line front end: corpus indexing, single runs, grids, allocation
// model fitting, prediction, and budget reports.

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ragscale/allocation.hpp"
#include "ragscale/backend.hpp"
#include "ragscale/errors.hpp"
#include "ragscale/harness.hpp"
#include "ragscale/manifest.hpp"

namespace {

using namespace ragscale;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitError = 2;       // bad input, validation failure, missing file
constexpr int kExitExists = 3;      // output present without --force
constexpr int kExitNoFeasible = 4;  // no configuration fits the budget

struct GlobalFlags {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> backend;
    std::optional<std::string> tokenizer;
    std::optional<std::string> out;
    std::optional<int> parallel;
    bool force = false;
};

std::unique_ptr<Backend> make_backend(const std::string& spec) {
    if (spec == "remote") {
        return std::make_unique<RemoteBackend>(RemoteBackend::config_from_env());
    }
    if (spec.starts_with("scripted:")) {
        return std::make_unique<ScriptedBackend>(
            load_script(spec.substr(std::string("scripted:").size())));
    }
    throw InvalidConfig("unknown backend spec: " + spec + " (expected scripted:<path> or remote)");
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> values;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto comma = text.find(',', start);
        const auto piece = text.substr(start, comma == std::string::npos ? comma : comma - start);
        if (!piece.empty()) values.push_back(std::stoi(piece));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (values.empty()) {
        throw InvalidConfig("empty list: " + text);
    }
    return values;
}

std::vector<InferenceConfig> grid_from_lists(const std::string& k_list, const std::string& m_list,
                                             const std::string& n_list) {
    std::vector<InferenceConfig> grid;
    for (int k : parse_int_list(k_list)) {
        for (int m : parse_int_list(m_list)) {
            for (int n : parse_int_list(n_list)) grid.push_back({k, m, n});
        }
    }
    return grid;
}

struct LoadedExperiment {
    RunManifest manifest;
    std::shared_ptr<const Corpus> corpus;
    std::unique_ptr<Index> index;
    std::vector<QAInstance> dataset;
    std::vector<Demonstration> demos;
    std::unique_ptr<Backend> backend;
    PromptTemplates templates = PromptTemplates::defaults();
    std::shared_ptr<const Tokenizer> tokenizer;
    std::string dataset_id;
};

LoadedExperiment load_experiment(const std::string& manifest_path, const GlobalFlags& flags) {
    LoadedExperiment exp;
    exp.manifest = load_manifest(manifest_path);
    if (flags.seed) exp.manifest.seed = *flags.seed;
    if (flags.backend) exp.manifest.backend = *flags.backend;
    if (flags.tokenizer) exp.manifest.tokenizer = *flags.tokenizer;
    if (flags.out) exp.manifest.out = *flags.out;
    if (flags.parallel) exp.manifest.parallel = *flags.parallel;

    exp.corpus = std::make_shared<Corpus>(load_corpus(exp.manifest.corpus));
    if (exp.corpus->empty_text_count() > 0) {
        std::cerr << "warning: " << exp.corpus->empty_text_count()
                  << " documents have empty or whitespace-only text\n";
    }
    if (exp.manifest.index_file) {
        exp.index = Bm25Index::load(*exp.manifest.index_file);
    } else {
        exp.index = build_index(exp.corpus);
    }
    exp.dataset = load_dataset(exp.manifest.dataset);
    exp.dataset_id = exp.manifest.dataset.stem().string();
    if (exp.manifest.templates) {
        exp.templates = load_templates(*exp.manifest.templates);
    }
    exp.tokenizer = get_tokenizer(exp.manifest.tokenizer);
    exp.backend = make_backend(exp.manifest.backend);
    return exp;
}

void prepare_demos(LoadedExperiment& exp, Strategy strategy) {
    if (exp.manifest.demos) {
        exp.demos = load_demonstrations(*exp.manifest.demos);
        return;
    }
    if (!exp.manifest.train_dataset) return;
    auto train = load_dataset(*exp.manifest.train_dataset);
    EpisodeOptions options;
    options.templates = &exp.templates;
    options.tokenizer = exp.tokenizer;
    auto result = build_demonstrations(train, exp.index.get(), *exp.backend, strategy,
                                       exp.manifest.demo_quota, {5, 0, strategy == Strategy::kDrag ? 1 : 3},
                                       exp.manifest.seed, options);
    if (!result.quota_met) {
        std::cerr << "warning: training data exhausted with " << result.demos.size() << " of "
                  << exp.manifest.demo_quota << " demonstrations\n";
    }
    exp.demos = std::move(result.demos);
    fs::create_directories(exp.manifest.out);
    save_demonstrations(exp.demos, exp.manifest.out / "demos.jsonl");
}

RunOptions run_options_for(const LoadedExperiment& exp) {
    RunOptions options;
    options.episode.templates = &exp.templates;
    options.episode.tokenizer = exp.tokenizer;
    options.parallel = exp.manifest.parallel;
    options.seed = exp.manifest.seed;
    options.sample_size = exp.manifest.sample_size;
    options.manifest_hash = exp.manifest.hash;
    options.trace_path = exp.manifest.out / "traces.jsonl";
    return options;
}

void refresh_summary(const RecordStore& store, const fs::path& out_dir) {
    auto records = store.load_all();
    auto rows = summarize(records);
    write_summary_csv(rows, out_dir / "summary.csv");
}

int cmd_index(const std::string& corpus_path, const std::string& out_path, bool force) {
    if (fs::exists(out_path) && !force) {
        std::cerr << "error: " << out_path << " exists (pass --force to overwrite)\n";
        return kExitExists;
    }
    auto corpus = std::make_shared<Corpus>(load_corpus(corpus_path));
    Bm25Index index(corpus);
    index.save(out_path);
    std::cout << "indexed " << corpus->size() << " documents -> " << out_path << "\n";
    return kExitOk;
}

int cmd_run(const std::string& manifest_path, const std::string& strategy_name,
            const InferenceConfig& config, bool resume, const GlobalFlags& flags) {
    const Strategy strategy = parse_strategy(strategy_name);
    validate_config(config, strategy);
    auto exp = load_experiment(manifest_path, flags);
    prepare_demos(exp, strategy);
    fs::create_directories(exp.manifest.out);
    RecordStore store(exp.manifest.out / "records.jsonl");
    const RecordKey key{exp.dataset_id, to_string(strategy), config};
    if (store.contains(key)) {
        if (resume) {
            std::cout << "record already present; nothing to do\n";
            return kExitOk;
        }
        std::cerr << "error: record already present (pass --resume to skip silently)\n";
        return kExitExists;
    }
    auto options = run_options_for(exp);
    auto record = run_config(exp.dataset_id, exp.dataset, strategy, config, exp.index.get(),
                             exp.demos, *exp.backend, options);
    store.append(record);
    refresh_summary(store, exp.manifest.out);
    std::cout << to_string(strategy) << " k=" << config.k << " m=" << config.m
              << " n=" << config.n << ": em=" << record.mean_em << " f1=" << record.mean_f1
              << " acc=" << record.mean_acc << " max_len=" << record.max_eff_len << "\n";
    return kExitOk;
}

int cmd_grid(const std::string& manifest_path, const std::string& strategy_name,
             const std::string& k_list, const std::string& m_list, const std::string& n_list,
             const GlobalFlags& flags) {
    const Strategy strategy = parse_strategy(strategy_name);
    std::vector<InferenceConfig> grid;
    if (k_list.empty() && m_list.empty() && n_list.empty()) {
        grid = default_grid(strategy);
    } else {
        grid = grid_from_lists(k_list.empty() ? "0,1,2,5,10,20,50,100,200,500,1000" : k_list,
                               m_list.empty() ? "0,1,2,4,8,16,32,64,128,256" : m_list,
                               n_list.empty() ? (strategy == Strategy::kDrag ? "1" : "1,2,3,4,5")
                                              : n_list);
    }
    auto exp = load_experiment(manifest_path, flags);
    prepare_demos(exp, strategy);
    fs::create_directories(exp.manifest.out);
    RecordStore store(exp.manifest.out / "records.jsonl");
    auto options = run_options_for(exp);
    auto fresh = run_grid(exp.dataset_id, exp.dataset, strategy, grid, exp.index.get(), exp.demos,
                          *exp.backend, options, &store);
    refresh_summary(store, exp.manifest.out);
    std::cout << "grid complete: " << fresh.size() << " new records, "
              << (grid.size() - fresh.size()) << " skipped\n";
    return kExitOk;
}

int cmd_fit(const std::string& summary_path, const std::string& metric_name,
            const std::string& variant_name, const std::string& trim_mode, double trim_sigmas,
            const std::string& out_path) {
    parse_metric(metric_name);  // validates the name
    auto rows = read_summary_csv(summary_path);
    auto [normalized, stats] = normalize_scores(rows);
    auto points = assemble_fit_points(normalized, metric_name);
    if (trim_mode == "peaks") {
        points = trim_outliers(points, OutlierMode::kPeaks, trim_sigmas);
    } else if (trim_mode != "off") {
        throw InvalidConfig("unknown trim mode: " + trim_mode);
    }
    auto report = fit(points, parse_variant(variant_name));
    std::ofstream out(out_path);
    if (!out) {
        throw Error("cannot write fit report: " + out_path);
    }
    auto obj = fit_report_to_json(report);
    obj["input_hash"] = hash_file(summary_path);
    obj["metric"] = metric_name;
    out << obj.dump(2) << "\n";
    std::cout << "fit " << to_string(report.variant) << " on " << report.n_points
              << " points: r2=" << report.r_squared << " mse=" << report.mse << "\n";
    return kExitOk;
}

int cmd_predict(const std::string& fit_path, double i_doc, double i_shot,
                const std::string& budget_text, const std::string& strategy_name,
                const std::string& k_list, const std::string& m_list, const std::string& n_list,
                double avg_doc_tokens, double avg_query_tokens, double overhead_tokens,
                const std::string& calibrate_manifest, std::size_t calibrate_examples,
                const std::string& out_path, const GlobalFlags& flags) {
    std::ifstream in(fit_path);
    if (!in) {
        throw Error("cannot open fit report: " + fit_path);
    }
    nlohmann::json obj;
    in >> obj;
    auto report = fit_report_from_json(obj);
    const long budget = parse_budget(budget_text);
    const Informativeness info{i_doc, i_shot};
    const Strategy strategy = parse_strategy(strategy_name);

    std::vector<InferenceConfig> grid;
    if (k_list.empty() && m_list.empty() && n_list.empty()) {
        grid = default_grid(strategy);
    } else {
        grid = grid_from_lists(k_list.empty() ? "0,1,2,5,10,20,50,100,200,500,1000" : k_list,
                               m_list.empty() ? "0,1,2,4,8,16,32,64,128,256" : m_list,
                               n_list.empty() ? (strategy == Strategy::kDrag ? "1" : "1,2,3,4,5")
                                              : n_list);
    }

    // Measured calibration when a manifest is supplied; analytic model otherwise.
    LengthEstimator lengths;
    std::optional<LoadedExperiment> exp;
    if (!calibrate_manifest.empty()) {
        exp.emplace(load_experiment(calibrate_manifest, flags));
        prepare_demos(*exp, strategy);
        EpisodeOptions episode;
        episode.templates = &exp->templates;
        episode.tokenizer = exp->tokenizer;
        lengths = measured_length_estimator(exp->dataset, strategy, exp->index.get(), exp->demos,
                                            *exp->backend, episode, exp->manifest.seed,
                                            calibrate_examples);
    } else {
        lengths = analytic_length_estimator(avg_doc_tokens, avg_query_tokens, overhead_tokens);
    }

    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) {
            throw Error("cannot write prediction CSV: " + out_path);
        }
        out << "k,m,n,predicted_z,estimated_len,feasible\n";
        out.precision(17);
        for (const auto& theta : grid) {
            const double est = lengths(theta);
            out << theta.k << ',' << theta.m << ',' << theta.n << ','
                << predict_z(report.params, info, theta) << ',' << est << ','
                << (est <= static_cast<double>(budget) ? 1 : 0) << '\n';
        }
    }
    InferenceConfig best;
    try {
        best = predict_optimal(report.params, info, grid, static_cast<double>(budget), lengths);
    } catch (const NoFeasibleConfig&) {
        std::cerr << "error: no configuration fits within " << budget << " tokens\n";
        return kExitNoFeasible;
    }
    std::cout << "theta* for budget " << budget << ": k=" << best.k << " m=" << best.m
              << " n=" << best.n << " predicted_z=" << predict_z(report.params, info, best)
              << "\n";
    return kExitOk;
}

int cmd_report(const std::string& records_path, const std::string& budgets_text,
               const std::string& out_path) {
    RecordStore store(records_path);
    auto records = store.load_all();
    if (records.empty()) {
        throw Error("no records in " + records_path);
    }
    std::vector<long> budgets;
    std::size_t start = 0;
    while (start <= budgets_text.size()) {
        auto comma = budgets_text.find(',', start);
        auto piece =
            budgets_text.substr(start, comma == std::string::npos ? comma : comma - start);
        if (!piece.empty()) budgets.push_back(parse_budget(piece));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }

    std::set<std::string> datasets;
    std::set<std::string> strategies;
    for (const auto& record : records) {
        datasets.insert(record.dataset);
        strategies.insert(to_string(record.strategy));
    }

    std::ofstream csv;
    if (!out_path.empty()) {
        csv.open(out_path);
        csv << "dataset,budget,strategy,metric,p_star,k,m,n,max_eff_len,p_star_mean_constraint\n";
        csv.precision(17);
    }
    std::cout << "dataset\tbudget\tstrategy\tem\tf1\tacc\ttheta*(acc)\n";
    for (const auto& dataset : datasets) {
        std::vector<ExperimentRecord> subset;
        for (const auto& record : records) {
            if (record.dataset == dataset) subset.push_back(record);
        }
        for (long budget : budgets) {
            for (const auto& strategy : strategies) {
                std::vector<ExperimentRecord> rows;
                for (const auto& record : subset) {
                    if (to_string(record.strategy) == strategy) rows.push_back(record);
                }
                if (rows.empty()) continue;
                std::cout << dataset << '\t' << budget << '\t' << strategy;
                bool feasible = true;
                std::string theta_note = "-";
                for (Metric metric : {Metric::kEm, Metric::kF1, Metric::kAcc}) {
                    try {
                        auto result = optimal_performance(rows, budget, metric);
                        std::cout << '\t' << result.p_star;
                        if (metric == Metric::kAcc) {
                            theta_note = "(" + std::to_string(result.key.config.k) + "," +
                                         std::to_string(result.key.config.m) + "," +
                                         std::to_string(result.key.config.n) + ")";
                        }
                        if (csv.is_open()) {
                            double mean_p = 0.0;
                            try {
                                mean_p =
                                    optimal_performance_mean_constraint(rows, budget, metric).p_star;
                            } catch (const NoFeasibleConfig&) {
                            }
                            csv << dataset << ',' << budget << ',' << strategy << ','
                                << to_string(metric) << ',' << result.p_star << ','
                                << result.key.config.k << ',' << result.key.config.m << ','
                                << result.key.config.n << ',' << result.max_eff_len << ','
                                << mean_p << '\n';
                        }
                    } catch (const NoFeasibleConfig&) {
                        std::cout << "\t-";
                        feasible = false;
                    }
                }
                std::cout << '\t' << (feasible ? theta_note : "-") << '\n';
            }
        }
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Inference-scaling toolkit for retrieval-augmented generation"};
    app.require_subcommand(1);
    GlobalFlags flags;

    // index
    auto* index_cmd = app.add_subcommand("index", "Build and persist a BM25 index");
    std::string corpus_path, index_out = "index.json";
    bool index_force = false;
    index_cmd->add_option("--corpus", corpus_path, "corpus JSONL")->required();
    index_cmd->add_option("--out", index_out, "output index file");
    index_cmd->add_flag("--force", index_force, "overwrite existing output");

    // shared run/grid options
    std::string manifest_path, strategy_name = "drag";
    InferenceConfig theta;
    bool resume = false;
    std::string k_list, m_list, n_list;

    auto add_global = [&](CLI::App* cmd, bool with_out = true) {
        cmd->add_option("--seed", [&](const std::vector<std::string>& v) {
               flags.seed = std::stoull(v.front());
               return true;
           }, "override manifest seed");
        cmd->add_option("--backend", [&](const std::vector<std::string>& v) {
               flags.backend = v.front();
               return true;
           }, "scripted:<path> or remote");
        cmd->add_option("--tokenizer", [&](const std::vector<std::string>& v) {
               flags.tokenizer = v.front();
               return true;
           }, "tokenizer name");
        if (with_out) {
            cmd->add_option("--out", [&](const std::vector<std::string>& v) {
                   flags.out = v.front();
                   return true;
               }, "output directory override");
        }
        cmd->add_option("--parallel", [&](const std::vector<std::string>& v) {
               flags.parallel = std::stoi(v.front());
               return true;
           }, "concurrent episodes (backend permitting)");
    };

    auto* run_cmd = app.add_subcommand("run", "Run one configuration and record it");
    run_cmd->add_option("--manifest", manifest_path, "manifest JSON")->required();
    run_cmd->add_option("--strategy", strategy_name, "drag or iterdrag")->required();
    run_cmd->add_option("--k", theta.k, "documents per retrieval");
    run_cmd->add_option("--m", theta.m, "in-context examples");
    run_cmd->add_option("--n", theta.n, "max decomposition iterations");
    run_cmd->add_flag("--resume", resume, "treat an existing record as success");
    add_global(run_cmd);

    auto* grid_cmd = app.add_subcommand("grid", "Run a configuration grid (resumable)");
    grid_cmd->add_option("--manifest", manifest_path, "manifest JSON")->required();
    grid_cmd->add_option("--strategy", strategy_name, "drag or iterdrag")->required();
    grid_cmd->add_option("--k-list", k_list, "comma-separated document counts");
    grid_cmd->add_option("--m-list", m_list, "comma-separated shot counts");
    grid_cmd->add_option("--n-list", n_list, "comma-separated iteration caps");
    add_global(grid_cmd);

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "Fit the computation allocation model");
    std::string summary_path, metric_name = "acc", variant_name = "sigmoidal", trim_mode = "off";
    std::string fit_out = "fit.json";
    double trim_sigmas = 2.0;
    fit_cmd->add_option("--summary", summary_path, "summary CSV from grid runs")->required();
    fit_cmd->add_option("--metric", metric_name, "em, f1 or acc");
    fit_cmd->add_option("--variant", variant_name,
                        "sigmoidal, exclude_b, quadratic_theta or linear_sigma");
    fit_cmd->add_option("--trim", trim_mode, "outlier handling: off or peaks");
    fit_cmd->add_option("--trim-sigmas", trim_sigmas, "residual threshold in sample stddevs");
    fit_cmd->add_option("--out", fit_out, "output fit JSON");

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "Pick theta* for a budget from a fit");
    std::string fit_path, budget_text = "1M", predict_out, calibrate_manifest;
    double i_doc = 0.0, i_shot = 0.0;
    double avg_doc_tokens = 1024.0, avg_query_tokens = 32.0, overhead_tokens = 64.0;
    std::size_t calibrate_examples = 16;
    predict_cmd->add_option("--fit", fit_path, "fit JSON")->required();
    predict_cmd->add_option("--i-doc", i_doc, "document informativeness (normalized units)");
    predict_cmd->add_option("--i-shot", i_shot, "shot informativeness (normalized units)");
    predict_cmd->add_option("--budget", budget_text, "token budget, e.g. 128k or 1M");
    predict_cmd->add_option("--strategy", strategy_name, "grid default when no lists given");
    predict_cmd->add_option("--k-list", k_list, "candidate document counts");
    predict_cmd->add_option("--m-list", m_list, "candidate shot counts");
    predict_cmd->add_option("--n-list", n_list, "candidate iteration caps");
    predict_cmd->add_option("--avg-doc-tokens", avg_doc_tokens, "length model: tokens per document");
    predict_cmd->add_option("--avg-query-tokens", avg_query_tokens, "length model: tokens per query");
    predict_cmd->add_option("--overhead-tokens", overhead_tokens, "length model: fixed overhead");
    predict_cmd->add_option("--manifest", calibrate_manifest,
                            "calibrate lengths by running a subsample from this manifest");
    predict_cmd->add_option("--calibrate-examples", calibrate_examples,
                            "subsample size for measured calibration");
    predict_cmd->add_option("--out", predict_out, "per-candidate prediction CSV");
    add_global(predict_cmd, /*with_out=*/false);

    // report
    auto* report_cmd = app.add_subcommand("report", "Best budget-constrained performance table");
    std::string records_path, budgets_text = "16k,32k,128k,1M,5M", report_out;
    report_cmd->add_option("--records", records_path, "records JSONL")->required();
    report_cmd->add_option("--budgets", budgets_text, "comma-separated budgets");
    report_cmd->add_option("--out", report_out, "long-form CSV output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitError;
    }

    try {
        if (index_cmd->parsed()) return cmd_index(corpus_path, index_out, index_force);
        if (run_cmd->parsed()) return cmd_run(manifest_path, strategy_name, theta, resume, flags);
        if (grid_cmd->parsed()) {
            return cmd_grid(manifest_path, strategy_name, k_list, m_list, n_list, flags);
        }
        if (fit_cmd->parsed()) {
            return cmd_fit(summary_path, metric_name, variant_name, trim_mode, trim_sigmas,
                           fit_out);
        }
        if (predict_cmd->parsed()) {
            return cmd_predict(fit_path, i_doc, i_shot, budget_text, strategy_name, k_list,
                               m_list, n_list, avg_doc_tokens, avg_query_tokens, overhead_tokens,
                               calibrate_manifest, calibrate_examples, predict_out, flags);
        }
        if (report_cmd->parsed()) return cmd_report(records_path, budgets_text, report_out);
    } catch (const NoFeasibleConfig& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNoFeasible;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitOk;
}
