#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "ragscale/errors.hpp"
#include "ragscale/orchestrator.hpp"
#include "ragscale/tokenize.hpp"
#include "support/temp_dir.hpp"

using namespace ragscale;
using ragscale::testing::TempDir;

namespace {

std::shared_ptr<const Corpus> film_corpus() {
    std::vector<Document> docs;
    docs.push_back({"b1", "Boggy Creek II: And The Legend Continues",
                    "Boggy Creek II: And The Legend Continues is a 1984 film directed by Charles "
                    "B. Pierce."});
    docs.push_back({"b2", "Charles B. Pierce",
                    "Charles B. Pierce was an American filmmaker born in Indiana."});
    docs.push_back({"b3", "Death Of A Friend", "Death Of A Friend is a 1959 drama film."});
    for (int i = 0; i < 8; ++i) {
        docs.push_back({"filler" + std::to_string(i), "Filler " + std::to_string(i),
                        "unrelated filler passage number " + std::to_string(i)});
    }
    return std::make_shared<Corpus>(Corpus::from_documents(std::move(docs)));
}

const std::string kBoggyQuestion =
    "What nationality is the director of film Boggy Creek Ii: And The Legend Continues?";

std::vector<ScriptEntry> boggy_script() {
    return {
        {std::nullopt,
         "Follow up: Who is the director of the film Boggy Creek II: And The Legend Continues?"},
        {std::nullopt,
         "Intermediate answer: The director of the film Boggy Creek II: And The Legend Continues "
         "is Charles B. Pierce."},
        {std::nullopt, "Follow up: What is the nationality of Charles B. Pierce?"},
        {std::nullopt, "Intermediate answer: The nationality of Charles B. Pierce is American."},
        {std::nullopt, "So the final answer is: American"},
    };
}

// Top-of-loop prompts carry the full three-prefix cue; the forced call is the
// only one whose transcript tail is followed directly by the final cue; the
// catch-all covers intermediate calls.
std::vector<ScriptEntry> always_subquery_script() {
    return {
        {"Follow up: | Intermediate answer: | So the final answer is: ",
         "Follow up: what else could it be?", /*once=*/false},
        {"still unclear.\n\nSo the final answer is: ", "So the final answer is: forced",
         /*once=*/false},
        {std::nullopt, "Intermediate answer: still unclear.", /*once=*/false},
    };
}

int count_steps(const EpisodeTrace& trace, StepKind kind) {
    int n = 0;
    for (const auto& call : trace.calls) n += call.step.kind == kind ? 1 : 0;
    return n;
}

}  // namespace

TEST_CASE("config validation") {
    CHECK_THROWS_AS(validate_config({-1, 0, 1}, Strategy::kDrag), InvalidConfig);
    CHECK_THROWS_AS(validate_config({0, -1, 1}, Strategy::kDrag), InvalidConfig);
    CHECK_THROWS_AS(validate_config({0, 0, 0}, Strategy::kDrag), InvalidConfig);
    CHECK_THROWS_AS(validate_config({0, 0, 2}, Strategy::kDrag), InvalidConfig);
    CHECK_THROWS_AS(validate_config({0, 0, 6}, Strategy::kIterDrag), InvalidConfig);
    CHECK_NOTHROW(validate_config({1000, 256, 1}, Strategy::kDrag));
    CHECK_NOTHROW(validate_config({0, 0, 5}, Strategy::kIterDrag));
}

TEST_CASE("drag degenerate configurations") {
    auto corpus = film_corpus();
    auto index = build_index(corpus);
    SUBCASE("zero-shot QA: no retrieval, one call") {
        ScriptedBackend backend({{std::nullopt, "Indiana"}});
        auto trace = run_drag({0, 0, 1}, "Where was Charles B. Pierce born?", nullptr, {}, backend);
        CHECK(!trace.failed);
        CHECK(trace.calls.size() == 1);
        CHECK(trace.retrieval_events.empty());
        CHECK(trace.final_answer == "Indiana");
        CHECK(trace.effective_length == trace.calls[0].prompt.token_count);
    }
    SUBCASE("many-shot QA uses demonstrations without documents") {
        std::vector<Demonstration> demos;
        for (int i = 0; i < 8; ++i) {
            Demonstration d;
            d.question = "demo question " + std::to_string(i);
            d.answer = std::string("demo answer " + std::to_string(i));
            demos.push_back(d);
        }
        ScriptedBackend backend({{std::nullopt, "answer"}});
        auto trace = run_drag({0, 8, 1}, "q?", index.get(), demos, backend);
        CHECK(trace.calls.size() == 1);
        CHECK(trace.retrieval_events.empty());
        CHECK(trace.calls[0].prompt.text.find("demo question 7") != std::string::npos);
    }
    SUBCASE("naive RAG retrieves once") {
        ScriptedBackend backend({{std::nullopt, "American"}});
        auto trace = run_drag({5, 0, 1}, kBoggyQuestion, index.get(), {}, backend);
        CHECK(trace.retrieval_events.size() == 1);
        CHECK(trace.retrieval_events[0].items.size() == 5);
        CHECK(trace.calls.size() == 1);
    }
    SUBCASE("missing demos violate the precondition") {
        ScriptedBackend backend({{std::nullopt, "x"}});
        CHECK_THROWS_AS(run_drag({0, 2, 1}, "q?", index.get(), {}, backend), InsufficientDemos);
    }
    SUBCASE("backend failure flags the trace") {
        ScriptedBackend backend({});  // immediately exhausted
        auto trace = run_drag({0, 0, 1}, "q?", nullptr, {}, backend);
        CHECK(trace.failed);
        CHECK(!trace.failure_reason.empty());
    }
}

TEST_CASE("iterdrag replays the Boggy Creek chain") {
    auto corpus = film_corpus();
    auto index = build_index(corpus);
    ScriptedBackend backend(boggy_script());
    auto trace = run_iterdrag({5, 0, 5}, kBoggyQuestion, index.get(), {}, backend);

    CHECK(!trace.failed);
    CHECK(trace.calls.size() == 5);
    CHECK(trace.retrieval_events.size() == 3);
    CHECK(trace.final_answer == "American");
    CHECK(count_steps(trace, StepKind::kSubQuery) == 2);
    CHECK(count_steps(trace, StepKind::kIntermediateAnswer) == 2);
    CHECK(count_steps(trace, StepKind::kFinalAnswer) == 1);
    CHECK(trace.calls.back().step.kind == StepKind::kFinalAnswer);

    // Effective length equals the independently recounted per-call sum.
    auto tokenizer = get_tokenizer("whitespace");
    long recount = 0;
    for (const auto& call : trace.calls) {
        recount += static_cast<long>(tokenizer->count(call.prompt.text));
    }
    CHECK(trace.effective_length == recount);
    CHECK(effective_context_length(trace) == recount);
}

TEST_CASE("iterdrag forces the final answer after n rounds") {
    auto corpus = film_corpus();
    auto index = build_index(corpus);
    ScriptedBackend backend(always_subquery_script());
    auto trace = run_iterdrag({2, 0, 5}, kBoggyQuestion, index.get(), {}, backend);

    CHECK(!trace.failed);
    CHECK(trace.calls.size() == 11);  // 5 rounds of 2 calls + forced final
    CHECK(count_steps(trace, StepKind::kSubQuery) == 5);
    CHECK(count_steps(trace, StepKind::kIntermediateAnswer) == 5);
    CHECK(count_steps(trace, StepKind::kFinalAnswer) == 1);
    CHECK(trace.calls.back().step.kind == StepKind::kFinalAnswer);
    CHECK(trace.final_answer == "forced");
    CHECK(trace.retrieval_events.size() == 6);  // initial + one per sub-query
    CHECK(trace.calls.back().prompt.text.ends_with("So the final answer is: "));
}

TEST_CASE("iterdrag immediate final answer") {
    auto corpus = film_corpus();
    auto index = build_index(corpus);
    ScriptedBackend backend({{std::nullopt, "So the final answer is: American"}});
    auto trace = run_iterdrag({3, 0, 5}, kBoggyQuestion, index.get(), {}, backend);
    CHECK(trace.calls.size() == 1);
    CHECK(trace.retrieval_events.size() == 1);
    CHECK(trace.final_answer == "American");
}

TEST_CASE("iterdrag steps alternate and contexts grow monotonically") {
    auto corpus = film_corpus();
    auto index = build_index(corpus);
    ScriptedBackend backend(boggy_script());
    auto trace = run_iterdrag({3, 0, 5}, kBoggyQuestion, index.get(), {}, backend);
    REQUIRE(!trace.failed);

    // (SubQuery, IntermediateAnswer)* FinalAnswer
    for (std::size_t i = 0; i + 1 < trace.calls.size(); ++i) {
        const auto expected =
            (i % 2 == 0) ? StepKind::kSubQuery : StepKind::kIntermediateAnswer;
        CHECK(trace.calls[i].step.kind == expected);
    }
    CHECK(trace.calls.back().step.kind == StepKind::kFinalAnswer);

    // Folding merge_runs over the retrieval events reproduces a list whose
    // prefixes are the per-call contexts.
    RetrievalRun merged = trace.retrieval_events.front();
    std::vector<std::string> previous;
    for (const auto& item : merged.items) previous.push_back(item.doc_id);
    for (std::size_t e = 1; e < trace.retrieval_events.size(); ++e) {
        merged = merge_runs(merged, {trace.retrieval_events[e]});
        std::vector<std::string> current;
        for (const auto& item : merged.items) current.push_back(item.doc_id);
        REQUIRE(current.size() >= previous.size());
        for (std::size_t i = 0; i < previous.size(); ++i) CHECK(current[i] == previous[i]);
        std::set<std::string> unique(current.begin(), current.end());
        CHECK(unique.size() == current.size());
        previous = std::move(current);
    }
}

TEST_CASE("iterdrag with k=0 performs no retrieval") {
    ScriptedBackend backend({{std::nullopt, "So the final answer is: ok"}});
    auto trace = run_iterdrag({0, 0, 1}, "q?", nullptr, {}, backend);
    CHECK(trace.retrieval_events.empty());
    CHECK(trace.calls.size() == 1);
}

TEST_CASE("k=0 m=0 n=1 single-call invariant for both strategies") {
    ScriptedBackend drag_backend({{std::nullopt, "plain answer"}});
    auto drag_trace = run_drag({0, 0, 1}, "q?", nullptr, {}, drag_backend);
    CHECK(drag_trace.calls.size() == 1);

    ScriptedBackend iter_backend({{std::nullopt, "So the final answer is: x", false}});
    auto iter_trace = run_iterdrag({0, 0, 1}, "q?", nullptr, {}, iter_backend);
    CHECK(iter_trace.calls.size() == 1);
}

TEST_CASE("protocol violations mark the episode failed") {
    auto corpus = film_corpus();
    auto index = build_index(corpus);
    SUBCASE("intermediate answer without a pending sub-query") {
        ScriptedBackend backend({{std::nullopt, "Intermediate answer: out of order", false}});
        auto trace = run_iterdrag({2, 0, 3}, "q?", index.get(), {}, backend);
        CHECK(trace.failed);
        CHECK(trace.failure_reason.find("pending sub-query") != std::string::npos);
    }
    SUBCASE("constraint violation after the retry") {
        ScriptedBackend backend({{std::nullopt, "free-form chatter", false}});
        auto trace = run_iterdrag({2, 0, 3}, "q?", index.get(), {}, backend);
        CHECK(trace.failed);
        CHECK(trace.constraint_retries == 1);
    }
    SUBCASE("prefix with empty payload is unparseable") {
        ScriptedBackend backend({{std::nullopt, "Follow up: ", false}});
        auto trace = run_iterdrag({2, 0, 3}, "q?", index.get(), {}, backend);
        CHECK(trace.failed);
    }
    SUBCASE("timeout") {
        EpisodeOptions options;
        options.timeout_seconds = -1.0;
        ScriptedBackend backend({{std::nullopt, "So the final answer is: x", false}});
        auto trace = run_iterdrag({0, 0, 1}, "q?", nullptr, {}, backend, options);
        CHECK(trace.failed);
        CHECK(trace.failure_reason.find("timeout") != std::string::npos);
    }
}

TEST_CASE("demo document lists are capped at the live k") {
    auto corpus = film_corpus();
    auto index = build_index(corpus);
    Demonstration demo;
    demo.question = "demo q";
    demo.answer = std::string("demo a");
    for (int i = 0; i < 6; ++i) {
        demo.docs.push_back({"filler" + std::to_string(i), "Filler " + std::to_string(i),
                             "unrelated filler passage number " + std::to_string(i)});
    }
    std::vector<Demonstration> demos = {demo};
    ScriptedBackend backend({{std::nullopt, "a"}});
    auto trace = run_drag({2, 1, 1}, "q?", index.get(), demos, backend);
    CHECK(trace.demo_doc_cap == 2);
    CHECK(trace.calls[0].prompt.text.find("filler passage number 0") != std::string::npos);
    CHECK(trace.calls[0].prompt.text.find("filler passage number 1") != std::string::npos);
    CHECK(trace.calls[0].prompt.text.find("filler passage number 2") == std::string::npos);
}

TEST_CASE("build_demonstrations filters by exact match") {
    auto corpus = film_corpus();
    auto index = build_index(corpus);
    std::vector<QAInstance> train = {
        {"t1", "question one", {"alpha"}, {}},
        {"t2", "question two", {"beta"}, {}},
        {"t3", "question three", {"gamma"}, {}},
    };

    SUBCASE("oracle backend retains everything up to quota") {
        FunctionBackend backend([&](const GenerationRequest& req) -> std::string {
            for (const auto& inst : train) {
                if (req.prompt.find(inst.question) != std::string::npos) {
                    return inst.answers.front();
                }
            }
            return "unknown";
        });
        auto result =
            build_demonstrations(train, index.get(), backend, Strategy::kDrag, 2, {2, 0, 1}, 7);
        CHECK(result.quota_met);
        CHECK(result.demos.size() == 2);
        auto again =
            build_demonstrations(train, index.get(), backend, Strategy::kDrag, 2, {2, 0, 1}, 7);
        REQUIRE(again.demos.size() == 2);
        CHECK(again.demos[0].question == result.demos[0].question);  // seeded order
    }
    SUBCASE("wrong answers are dropped") {
        FunctionBackend backend([&](const GenerationRequest& req) -> std::string {
            if (req.prompt.find("question two") != std::string::npos) return "beta";
            return "wrong";
        });
        auto result =
            build_demonstrations(train, index.get(), backend, Strategy::kDrag, 3, {1, 0, 1}, 0);
        CHECK(!result.quota_met);
        REQUIRE(result.demos.size() == 1);
        CHECK(result.demos[0].question == "question two");
        CHECK(std::get<std::string>(result.demos[0].answer) == "beta");
    }
    SUBCASE("iterdrag demos keep well-formed chains") {
        std::vector<QAInstance> iter_train;
        for (int i = 0; i < 10; ++i) {
            iter_train.push_back({"i" + std::to_string(i), "iter question " + std::to_string(i),
                                  {"gold" + std::to_string(i)}, {}});
        }
        // Correct chain for even instances, wrong final for odd ones.
        FunctionBackend backend([&](const GenerationRequest& req) -> std::string {
            int idx = -1;
            for (int i = 0; i < 10; ++i) {
                if (req.prompt.find("iter question " + std::to_string(i)) != std::string::npos) {
                    idx = i;
                    break;
                }
            }
            REQUIRE(idx >= 0);
            const bool has_subquery = req.prompt.find("Follow up: probe") != std::string::npos;
            if (!has_subquery) {
                if (req.prompt.ends_with("| So the final answer is: ")) {
                    return "Follow up: probe " + std::to_string(idx);
                }
                return "Intermediate answer: probe result " + std::to_string(idx);
            }
            if (req.prompt.ends_with("Intermediate answer: ")) {
                return "Intermediate answer: probe result " + std::to_string(idx);
            }
            return std::string("So the final answer is: ") +
                   (idx % 2 == 0 ? "gold" + std::to_string(idx) : "nope");
        });
        auto result = build_demonstrations(iter_train, index.get(), backend, Strategy::kIterDrag, 4,
                                           {2, 0, 3}, 11);
        CHECK(result.quota_met);
        REQUIRE(result.demos.size() == 4);
        for (const auto& demo : result.demos) {
            REQUIRE(demo.is_chain());
            const auto& chain = std::get<SelfAskChain>(demo.answer);
            CHECK(chain.pairs.size() == 1);
            CHECK(!chain.final_answer.empty());
            CHECK(!demo.docs.empty());  // merged retrieval context retained
        }
    }
    SUBCASE("quota of zero is rejected") {
        FunctionBackend backend([](const GenerationRequest&) { return std::string("x"); });
        CHECK_THROWS_AS(
            build_demonstrations(train, index.get(), backend, Strategy::kDrag, 0, {1, 0, 1}, 0),
            InvalidConfig);
    }
}

TEST_CASE("trace serialization and demo persistence") {
    auto corpus = film_corpus();
    auto index = build_index(corpus);
    ScriptedBackend backend(boggy_script());
    auto trace = run_iterdrag({2, 0, 5}, kBoggyQuestion, index.get(), {}, backend);
    auto obj = trace_to_json(trace);
    CHECK(obj.at("strategy") == "iterdrag");
    CHECK(obj.at("final_answer") == "American");
    CHECK(obj.at("effective_length").get<long>() == trace.effective_length);
    CHECK(obj.at("calls").size() == 5);
    CHECK(obj.at("retrieval_events").size() == 3);
    CHECK(obj.at("calls")[0].at("step").at("kind") == "sub_query");

    TempDir dir;
    Demonstration plain;
    plain.question = "q";
    plain.answer = std::string("a");
    plain.docs = {{"d1", "T", "text"}};
    SelfAskChain chain;
    chain.pairs.push_back({"sq", "ia"});
    chain.final_answer = "fin";
    Demonstration chained;
    chained.question = "q2";
    chained.answer = chain;
    std::vector<Demonstration> demos = {plain, chained};
    auto path = dir.path() / "demos.jsonl";
    save_demonstrations(demos, path);
    auto loaded = load_demonstrations(path);
    REQUIRE(loaded.size() == 2);
    CHECK(!loaded[0].is_chain());
    CHECK(std::get<std::string>(loaded[0].answer) == "a");
    CHECK(loaded[0].docs.size() == 1);
    REQUIRE(loaded[1].is_chain());
    CHECK(std::get<SelfAskChain>(loaded[1].answer).pairs[0].sub_query == "sq");
    CHECK(std::get<SelfAskChain>(loaded[1].answer).final_answer == "fin");
}
