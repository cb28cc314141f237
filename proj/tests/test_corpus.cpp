#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <sstream>

#include <json.hpp>

#include "ragscale/corpus.hpp"
#include "ragscale/errors.hpp"
#include "ragscale/tokenize.hpp"
#include "support/temp_dir.hpp"

using namespace ragscale;
using ragscale::testing::TempDir;

namespace {

std::string repeated_tokens(std::size_t n, const std::string& stem = "tok") {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0) out += ' ';
        out += stem + std::to_string(i);
    }
    return out;
}

std::string random_text(std::mt19937_64& rng) {
    static const char* words[] = {"alpha", "beta",  "gamma", "delta", "x", "y9",
                                  "quux",  "corge", "1984",  "a",     "", "zz"};
    std::uniform_int_distribution<int> n_words(0, 12);
    std::uniform_int_distribution<std::size_t> pick(0, std::size(words) - 1);
    std::uniform_int_distribution<int> sep(0, 3);
    std::string out;
    const int n = n_words(rng);
    for (int i = 0; i < n; ++i) {
        out += words[pick(rng)];
        switch (sep(rng)) {
            case 0: out += ' '; break;
            case 1: out += "  "; break;
            case 2: out += '\t'; break;
            default: out += '\n'; break;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("truncate_text keeps a token prefix") {
    CHECK(truncate_text("a b c", 2) == "a b");
    CHECK(truncate_text("a b", 5) == "a b");

    const auto long_text = repeated_tokens(1500);
    const auto truncated = truncate_text(long_text, 1024);
    CHECK(count_tokens(truncated, "whitespace") == 1024);
    const auto in_tokens = whitespace_tokens(long_text);
    const auto out_tokens = whitespace_tokens(truncated);
    REQUIRE(out_tokens.size() == 1024);
    for (std::size_t i = 0; i < out_tokens.size(); ++i) {
        CHECK(out_tokens[i] == in_tokens[i]);
    }
}

TEST_CASE("truncate_text is idempotent and respects the cap") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const auto text = random_text(rng);
        for (std::size_t cap : {1, 2, 3, 5, 100}) {
            const auto once = truncate_text(text, cap);
            CHECK(truncate_text(once, cap) == once);
            CHECK(count_tokens(once, "whitespace") <= cap);
        }
    }
    CHECK_THROWS_AS(truncate_text("a b", 0), InvalidConfig);
}

TEST_CASE("count_tokens whitespace semantics") {
    CHECK(count_tokens("", "whitespace") == 0);
    CHECK(count_tokens("Follow up: X", "whitespace") == 3);
    CHECK(count_tokens("  padded \t tokens \n here ", "whitespace") == 3);
    CHECK_THROWS_AS(count_tokens("x", "no-such-tokenizer"), UnknownTokenizer);

    // Additivity over a single-space join.
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        auto s1 = random_text(rng);
        auto s2 = random_text(rng);
        if (whitespace_tokens(s1).empty() || whitespace_tokens(s2).empty()) continue;
        CHECK(count_tokens(s1 + " " + s2, "whitespace") ==
              count_tokens(s1, "whitespace") + count_tokens(s2, "whitespace"));
    }
}

TEST_CASE("load_corpus reads JSONL and truncates bodies") {
    TempDir dir;
    std::ostringstream lines;
    lines << R"({"id":"d1","title":"One","text":"first doc"})" << '\n'
          << R"({"id":"d2","title":"Two","text":"second doc"})" << '\n'
          << R"({"id":"d3","title":"Three","text":")" << repeated_tokens(2000) << R"("})" << '\n';
    auto path = dir.write_file("corpus.jsonl", lines.str());

    auto corpus = load_corpus(path);
    REQUIRE(corpus.size() == 3);
    CHECK(corpus.find("d1")->title == "One");
    const auto& truncated = corpus.find("d3")->text;
    CHECK(count_tokens(truncated, "whitespace") == 1024);
    CHECK(whitespace_tokens(truncated).front() == "tok0");
    CHECK(whitespace_tokens(truncated).back() == "tok1023");
}

TEST_CASE("load_corpus rejects duplicates and malformed rows") {
    TempDir dir;
    auto dup = dir.write_file("dup.jsonl",
                              R"({"id":"d1","title":"a","text":"x"})"
                              "\n"
                              R"({"id":"d1","title":"b","text":"y"})"
                              "\n");
    CHECK_THROWS_AS(load_corpus(dup), DuplicateId);

    auto bad = dir.write_file("bad.jsonl",
                              R"({"id":"d1","title":"a","text":"x"})"
                              "\nnot json\n");
    try {
        load_corpus(bad);
        FAIL("expected MalformedRecord");
    } catch (const MalformedRecord& e) {
        CHECK(e.line() == 2);
    }

    auto missing = dir.write_file("missing.jsonl", R"({"id":"d1","title":"a"})" "\n");
    CHECK_THROWS_AS(load_corpus(missing), MalformedRecord);
    CHECK_THROWS_AS(load_corpus(dir.path() / "does_not_exist.jsonl"), Error);
}

TEST_CASE("empty document text is accepted but counted") {
    auto corpus = Corpus::from_documents({{"d1", "t", "real text"}, {"d2", "t", "   "}, {"d3", "t", ""}});
    CHECK(corpus.size() == 3);
    CHECK(corpus.empty_text_count() == 2);
}

TEST_CASE("corpus load-dump-load round trip") {
    TempDir dir;
    std::mt19937_64 rng(23);
    std::ostringstream lines;
    for (int i = 0; i < 20; ++i) {
        nlohmann::json obj = {{"id", "doc" + std::to_string(i)},
                              {"title", "Title \"quoted\" #" + std::to_string(i)},
                              {"text", random_text(rng) + " trailing"}};
        lines << obj.dump() << '\n';
    }
    auto first_path = dir.write_file("round1.jsonl", lines.str());
    auto corpus1 = load_corpus(first_path);
    save_corpus(corpus1, dir.path() / "round2.jsonl");
    auto corpus2 = load_corpus(dir.path() / "round2.jsonl");
    REQUIRE(corpus1.size() == corpus2.size());
    for (std::size_t i = 0; i < corpus1.size(); ++i) {
        CHECK(corpus1.docs()[i].id == corpus2.docs()[i].id);
        CHECK(corpus1.docs()[i].title == corpus2.docs()[i].title);
        CHECK(corpus1.docs()[i].text == corpus2.docs()[i].text);
    }
}

TEST_CASE("load_dataset validation") {
    TempDir dir;
    auto good = dir.write_file(
        "data.jsonl",
        R"({"id":"q1","question":"Who?","answers":["Ada"],"relevant_doc_ids":["d1","d2"]})"
        "\n"
        R"({"id":"q2","question":"Where?","answers":["Paris","France"]})"
        "\n");
    auto instances = load_dataset(good);
    REQUIRE(instances.size() == 2);
    CHECK(instances[0].relevant_doc_ids == std::set<std::string>{"d1", "d2"});
    CHECK(instances[1].relevant_doc_ids.empty());
    CHECK(instances[1].answers.size() == 2);

    auto no_answers =
        dir.write_file("no_answers.jsonl", R"({"id":"q1","question":"Who?","answers":[]})" "\n");
    CHECK_THROWS_AS(load_dataset(no_answers), MalformedRecord);
    auto blank_answer = dir.write_file("blank.jsonl",
                                       R"({"id":"q1","question":"Who?","answers":["  "]})" "\n");
    CHECK_THROWS_AS(load_dataset(blank_answer), MalformedRecord);
}
