#include "ragscale/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>

#include "ragscale/errors.hpp"
#include "ragscale/evaluation.hpp"

namespace ragscale {

namespace {

using Clock = std::chrono::steady_clock;

const PromptTemplates& templates_of(const EpisodeOptions& options) {
    return options.templates ? *options.templates : PromptTemplates::defaults();
}

std::shared_ptr<const Tokenizer> tokenizer_of(const EpisodeOptions& options) {
    return options.tokenizer ? options.tokenizer : get_tokenizer("whitespace");
}

std::vector<Document> resolve_docs(const Index* index, const RetrievalRun& run) {
    std::vector<Document> docs;
    docs.reserve(run.items.size());
    for (const auto& item : run.items) {
        const Document* doc = index->corpus().find(item.doc_id);
        if (doc == nullptr) {
            throw Error("retrieval returned unknown document id: " + item.doc_id);
        }
        docs.push_back(*doc);
    }
    return docs;
}

std::vector<Demonstration> prepare_demos(std::span<const Demonstration> demos, int m, int k) {
    if (static_cast<int>(demos.size()) < m) {
        throw InsufficientDemos("need " + std::to_string(m) + " demonstrations, have " +
                                std::to_string(demos.size()));
    }
    std::vector<Demonstration> out(demos.begin(), demos.begin() + m);
    for (auto& demo : out) {
        if (static_cast<int>(demo.docs.size()) > k) {
            demo.docs.resize(static_cast<std::size_t>(k));
        }
    }
    return out;
}

void finish_lengths(EpisodeTrace& trace) {
    trace.effective_length = effective_context_length(trace);
}

}  // namespace

std::string to_string(Strategy strategy) {
    return strategy == Strategy::kDrag ? "drag" : "iterdrag";
}

Strategy parse_strategy(const std::string& name) {
    if (name == "drag") return Strategy::kDrag;
    if (name == "iterdrag") return Strategy::kIterDrag;
    throw InvalidConfig("unknown strategy: " + name);
}

void validate_config(const InferenceConfig& config, Strategy strategy) {
    if (config.k < 0 || config.m < 0 || config.n < 1) {
        throw InvalidConfig("config requires k >= 0, m >= 0, n >= 1");
    }
    if (strategy == Strategy::kDrag && config.n != 1) {
        throw InvalidConfig("drag requires n = 1");
    }
    if (strategy == Strategy::kIterDrag && config.n > 5) {
        throw InvalidConfig("iterdrag allows at most 5 iterations");
    }
}

long effective_context_length(const EpisodeTrace& trace) {
    long total = 0;
    for (const auto& call : trace.calls) {
        total += call.prompt.token_count;
    }
    return total;
}

EpisodeTrace run_drag(const InferenceConfig& config, const std::string& query, const Index* index,
                      std::span<const Demonstration> demos, Backend& backend,
                      const EpisodeOptions& options) {
    validate_config(config, Strategy::kDrag);
    EpisodeTrace trace;
    trace.strategy = Strategy::kDrag;
    trace.config = config;
    trace.query = query;
    trace.demo_doc_cap = config.k;

    auto demo_view = prepare_demos(demos, config.m, config.k);
    std::vector<Document> docs;
    if (config.k > 0) {
        if (index == nullptr) {
            throw InvalidConfig("k > 0 requires an index");
        }
        trace.retrieval_events.push_back(index->retrieve(query, static_cast<std::size_t>(config.k)));
        docs = resolve_docs(index, trace.retrieval_events.back());
    }

    auto tokenizer = tokenizer_of(options);
    RenderedPrompt prompt =
        render_drag_prompt(templates_of(options), demo_view, docs, query, *tokenizer);
    GenerationRequest request{prompt.text, {}, options.max_output_tokens};
    std::string response;
    try {
        response = generate(backend, request, &trace.constraint_retries);
    } catch (const Error& e) {
        trace.calls.push_back({std::move(prompt), "", Step{StepKind::kFinalAnswer, ""}});
        trace.failed = true;
        trace.failure_reason = e.what();
        finish_lengths(trace);
        return trace;
    }
    trace.final_answer = response;
    trace.calls.push_back({std::move(prompt), response, Step{StepKind::kFinalAnswer, response}});
    finish_lengths(trace);
    return trace;
}

EpisodeTrace run_iterdrag(const InferenceConfig& config, const std::string& query,
                          const Index* index, std::span<const Demonstration> demos,
                          Backend& backend, const EpisodeOptions& options) {
    validate_config(config, Strategy::kIterDrag);
    if (config.k > 0 && index == nullptr) {
        throw InvalidConfig("k > 0 requires an index");
    }
    EpisodeTrace trace;
    trace.strategy = Strategy::kIterDrag;
    trace.config = config;
    trace.query = query;
    trace.demo_doc_cap = config.k;

    auto demo_view = prepare_demos(demos, config.m, config.k);
    auto tokenizer = tokenizer_of(options);
    const auto& templates = templates_of(options);
    const auto started = Clock::now();

    RetrievalRun merged;
    merged.query = query;
    std::vector<Document> merged_docs;
    if (config.k > 0) {
        merged = index->retrieve(query, static_cast<std::size_t>(config.k));
        trace.retrieval_events.push_back(merged);
        merged_docs = resolve_docs(index, merged);
    }

    std::vector<Step> transcript;
    auto fail = [&](const std::string& reason) {
        trace.failed = true;
        trace.failure_reason = reason;
        finish_lengths(trace);
    };

    // Issues one generation call: renders the current state with the cue line
    // listing exactly the prefixes this call may produce.
    auto call = [&](std::span<const std::string_view> cue_prefixes) -> std::optional<Step> {
        const double elapsed = std::chrono::duration<double>(Clock::now() - started).count();
        if (elapsed > options.timeout_seconds) {
            fail("episode timeout after " + std::to_string(trace.calls.size()) + " calls");
            return std::nullopt;
        }
        RenderedPrompt prompt = render_iterdrag_prompt(templates, demo_view, merged_docs, query,
                                                       transcript, cue_prefixes, *tokenizer);
        GenerationRequest request;
        request.prompt = prompt.text;
        request.max_output_tokens = options.max_output_tokens;
        for (auto prefix : cue_prefixes) request.allowed_prefixes.emplace_back(prefix);
        std::string response;
        try {
            response = generate(backend, request, &trace.constraint_retries);
        } catch (const Error& e) {
            trace.calls.push_back({std::move(prompt), "", Step{StepKind::kFinalAnswer, ""}});
            fail(e.what());
            return std::nullopt;
        }
        Step step;
        try {
            step = parse_step(response);
        } catch (const UnparseableStep& e) {
            trace.calls.push_back({std::move(prompt), response, Step{StepKind::kFinalAnswer, ""}});
            fail(e.what());
            return std::nullopt;
        }
        trace.calls.push_back({std::move(prompt), response, step});
        return step;
    };

    int sub_rounds = 0;
    for (;;) {
        if (sub_rounds == config.n) {
            // Iteration budget spent: force the final answer.
            const std::string_view forced[] = {kFinalPrefix};
            auto step = call(forced);
            if (!step) return trace;
            trace.final_answer = step->payload;
            break;
        }
        auto step = call(kAllStepPrefixes);
        if (!step) return trace;
        if (step->kind == StepKind::kFinalAnswer) {
            trace.final_answer = step->payload;
            break;
        }
        if (step->kind == StepKind::kIntermediateAnswer) {
            fail("intermediate answer generated without a pending sub-query");
            return trace;
        }
        transcript.push_back(*step);
        ++sub_rounds;
        if (config.k > 0) {
            RetrievalRun sub_run = index->retrieve(step->payload, static_cast<std::size_t>(config.k));
            trace.retrieval_events.push_back(sub_run);
            merged = merge_runs(merged, {sub_run});
            merged_docs = resolve_docs(index, merged);
        }
        const std::string_view intermediate[] = {kIntermediatePrefix};
        auto answer_step = call(intermediate);
        if (!answer_step) return trace;
        transcript.push_back(*answer_step);
    }
    finish_lengths(trace);
    return trace;
}

EpisodeTrace run_episode(Strategy strategy, const InferenceConfig& config,
                         const std::string& query, const Index* index,
                         std::span<const Demonstration> demos, Backend& backend,
                         const EpisodeOptions& options) {
    return strategy == Strategy::kDrag
               ? run_drag(config, query, index, demos, backend, options)
               : run_iterdrag(config, query, index, demos, backend, options);
}

DemoBuildResult build_demonstrations(std::span<const QAInstance> train, const Index* index,
                                     Backend& backend, Strategy strategy, std::size_t quota,
                                     const InferenceConfig& config, std::uint64_t seed,
                                     const EpisodeOptions& options) {
    if (quota < 1) {
        throw InvalidConfig("demonstration quota must be >= 1");
    }
    DemoBuildResult result;
    InferenceConfig build_config = config;
    build_config.m = 0;  // bootstrap without demonstrations
    for (const auto& instance : train) {
        if (result.demos.size() >= quota) break;
        ++result.attempted;
        EpisodeTrace trace =
            run_episode(strategy, build_config, instance.question, index, {}, backend, options);
        if (trace.failed) continue;
        if (exact_match(trace.final_answer, instance.answers) != 1) continue;

        Demonstration demo;
        demo.question = instance.question;
        if (strategy == Strategy::kDrag) {
            if (!trace.retrieval_events.empty()) {
                demo.docs = resolve_docs(index, trace.retrieval_events.front());
            }
            demo.answer = instance.answers.front();
        } else {
            if (!trace.retrieval_events.empty()) {
                RetrievalRun merged = trace.retrieval_events.front();
                std::vector<RetrievalRun> rest(trace.retrieval_events.begin() + 1,
                                               trace.retrieval_events.end());
                merged = merge_runs(merged, rest);
                demo.docs = resolve_docs(index, merged);
            }
            SelfAskChain chain;
            SelfAskPair pending;
            bool have_pending = false;
            for (const auto& call : trace.calls) {
                switch (call.step.kind) {
                    case StepKind::kSubQuery:
                        pending.sub_query = call.step.payload;
                        have_pending = true;
                        break;
                    case StepKind::kIntermediateAnswer:
                        if (have_pending) {
                            pending.answer = call.step.payload;
                            chain.pairs.push_back(pending);
                            have_pending = false;
                        }
                        break;
                    case StepKind::kFinalAnswer:
                        chain.final_answer = call.step.payload;
                        break;
                }
            }
            demo.answer = std::move(chain);
        }
        result.demos.push_back(std::move(demo));
    }
    result.quota_met = result.demos.size() >= quota;
    std::mt19937_64 rng(seed);
    std::shuffle(result.demos.begin(), result.demos.end(), rng);
    return result;
}

nlohmann::json trace_to_json(const EpisodeTrace& trace) {
    nlohmann::json calls = nlohmann::json::array();
    for (const auto& call : trace.calls) {
        calls.push_back({
            {"prompt_tokens", call.prompt.token_count},
            {"response", call.response},
            {"step", {{"kind", to_string(call.step.kind)}, {"payload", call.step.payload}}},
        });
    }
    nlohmann::json events = nlohmann::json::array();
    for (const auto& run : trace.retrieval_events) {
        nlohmann::json ids = nlohmann::json::array();
        for (const auto& item : run.items) ids.push_back(item.doc_id);
        events.push_back({{"query", run.query}, {"doc_ids", std::move(ids)}});
    }
    return {
        {"strategy", to_string(trace.strategy)},
        {"config", {{"k", trace.config.k}, {"m", trace.config.m}, {"n", trace.config.n}}},
        {"query", trace.query},
        {"calls", std::move(calls)},
        {"retrieval_events", std::move(events)},
        {"final_answer", trace.final_answer},
        {"effective_length", trace.effective_length},
        {"failed", trace.failed},
        {"failure_reason", trace.failure_reason},
        {"constraint_retries", trace.constraint_retries},
        {"demo_doc_cap", trace.demo_doc_cap},
    };
}

void save_demonstrations(std::span<const Demonstration> demos, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write demonstrations file: " + path.string());
    }
    for (const auto& demo : demos) {
        nlohmann::json docs = nlohmann::json::array();
        for (const auto& doc : demo.docs) {
            docs.push_back({{"id", doc.id}, {"title", doc.title}, {"text", doc.text}});
        }
        nlohmann::json obj = {{"docs", std::move(docs)}, {"question", demo.question}};
        if (demo.is_chain()) {
            const auto& chain = std::get<SelfAskChain>(demo.answer);
            nlohmann::json pairs = nlohmann::json::array();
            for (const auto& pair : chain.pairs) {
                pairs.push_back({{"sub_query", pair.sub_query}, {"answer", pair.answer}});
            }
            obj["chain"] = {{"pairs", std::move(pairs)}, {"final_answer", chain.final_answer}};
        } else {
            obj["answer"] = std::get<std::string>(demo.answer);
        }
        out << obj.dump() << '\n';
    }
}

std::vector<Demonstration> load_demonstrations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open demonstrations file: " + path.string());
    }
    std::vector<Demonstration> demos;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw MalformedRecord(line_no, e.what());
        }
        Demonstration demo;
        demo.question = obj.at("question").get<std::string>();
        for (const auto& d : obj.at("docs")) {
            demo.docs.push_back({d.at("id").get<std::string>(), d.at("title").get<std::string>(),
                                 d.at("text").get<std::string>()});
        }
        if (obj.contains("chain")) {
            SelfAskChain chain;
            for (const auto& p : obj.at("chain").at("pairs")) {
                chain.pairs.push_back(
                    {p.at("sub_query").get<std::string>(), p.at("answer").get<std::string>()});
            }
            chain.final_answer = obj.at("chain").at("final_answer").get<std::string>();
            demo.answer = std::move(chain);
        } else {
            demo.answer = obj.at("answer").get<std::string>();
        }
        demos.push_back(std::move(demo));
    }
    return demos;
}

}  // namespace ragscale
