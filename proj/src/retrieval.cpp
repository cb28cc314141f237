#include "ragscale/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "ragscale/errors.hpp"

namespace ragscale {

namespace {

using nlohmann::json;

RetrievalRun rank_scores(const Corpus& corpus, const std::string& query,
                         const std::vector<double>& scores, std::size_t k) {
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t lhs, std::size_t rhs) {
        if (scores[lhs] != scores[rhs]) return scores[lhs] > scores[rhs];
        return corpus.docs()[lhs].id < corpus.docs()[rhs].id;
    });
    RetrievalRun run;
    run.query = query;
    std::size_t take = std::min(k, corpus.size());
    run.items.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        run.items.push_back({corpus.docs()[order[i]].id, static_cast<int>(i + 1), scores[order[i]]});
    }
    return run;
}

}  // namespace

std::vector<std::string> lexical_terms(std::string_view text) {
    std::vector<std::string> terms;
    std::string current;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!current.empty()) {
            terms.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) terms.push_back(std::move(current));
    return terms;
}

Bm25Index::Bm25Index(std::shared_ptr<const Corpus> corpus, Bm25Params params)
    : corpus_(std::move(corpus)), params_(params) {
    if (!corpus_ || corpus_->empty()) {
        throw EmptyCorpus();
    }
    build();
}

void Bm25Index::build() {
    const auto& docs = corpus_->docs();
    doc_lens_.resize(docs.size());
    std::size_t total_len = 0;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        auto terms = lexical_terms(docs[i].title + " " + docs[i].text);
        doc_lens_[i] = terms.size();
        total_len += terms.size();
        std::unordered_map<std::string, std::size_t> tf;
        for (auto& t : terms) ++tf[t];
        for (auto& [term, freq] : tf) {
            postings_[term].emplace_back(i, freq);
        }
    }
    for (auto& [term, posting] : postings_) {
        std::sort(posting.begin(), posting.end());
    }
    avg_len_ = docs.empty() ? 0.0 : static_cast<double>(total_len) / static_cast<double>(docs.size());
}

RetrievalRun Bm25Index::retrieve(const std::string& query, std::size_t k) const {
    std::vector<double> scores(corpus_->size(), 0.0);
    auto query_terms = lexical_terms(query);
    std::unordered_set<std::string> unique_terms(query_terms.begin(), query_terms.end());
    const double n_docs = static_cast<double>(corpus_->size());
    for (const auto& term : unique_terms) {
        auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        const double df = static_cast<double>(it->second.size());
        const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
        for (const auto& [doc_idx, tf] : it->second) {
            const double f = static_cast<double>(tf);
            const double norm =
                params_.k1 * (1.0 - params_.b + params_.b * static_cast<double>(doc_lens_[doc_idx]) / avg_len_);
            scores[doc_idx] += idf * f * (params_.k1 + 1.0) / (f + norm);
        }
    }
    return rank_scores(*corpus_, query, scores, k);
}

void Bm25Index::save(const std::filesystem::path& path) const {
    json postings = json::object();
    for (const auto& [term, posting] : postings_) {
        json rows = json::array();
        for (const auto& [doc_idx, tf] : posting) {
            rows.push_back(json::array({doc_idx, tf}));
        }
        postings[term] = std::move(rows);
    }
    json docs = json::array();
    for (const auto& doc : corpus_->docs()) {
        docs.push_back({{"id", doc.id}, {"title", doc.title}, {"text", doc.text}});
    }
    json obj = {
        {"format", "ragscale.bm25_index.v1"},
        {"k1", params_.k1},
        {"b", params_.b},
        {"avg_len", avg_len_},
        {"doc_lens", doc_lens_},
        {"docs", std::move(docs)},
        {"postings", std::move(postings)},
    };
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write index file: " + path.string());
    }
    out << obj.dump() << '\n';
}

std::unique_ptr<Bm25Index> Bm25Index::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open index file: " + path.string());
    }
    json obj;
    try {
        in >> obj;
    } catch (const json::parse_error& e) {
        throw Error("malformed index file " + path.string() + ": " + e.what());
    }
    if (obj.value("format", "") != "ragscale.bm25_index.v1") {
        throw Error("unrecognized index format in " + path.string());
    }
    std::vector<Document> docs;
    for (const auto& d : obj.at("docs")) {
        docs.push_back({d.at("id").get<std::string>(), d.at("title").get<std::string>(),
                        d.at("text").get<std::string>()});
    }
    auto corpus = std::make_shared<Corpus>(Corpus::from_documents(std::move(docs)));
    Bm25Params params{obj.at("k1").get<double>(), obj.at("b").get<double>()};
    auto index = std::make_unique<Bm25Index>(std::move(corpus), params);
    // Postings were rebuilt from the embedded documents; trust but verify shape.
    if (index->doc_lens_ != obj.at("doc_lens").get<std::vector<std::size_t>>()) {
        throw Error("index file is inconsistent with its embedded corpus: " + path.string());
    }
    return index;
}

PrecomputedIndex::PrecomputedIndex(std::shared_ptr<const Corpus> corpus,
                                   const std::filesystem::path& score_file)
    : corpus_(std::move(corpus)) {
    if (!corpus_ || corpus_->empty()) {
        throw EmptyCorpus();
    }
    std::ifstream in(score_file);
    if (!in) {
        throw Error("cannot open score file: " + score_file.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw MalformedRecord(line_no, e.what());
        }
        if (!obj.is_object() || !obj.contains("query_id") || !obj.contains("doc_id") ||
            !obj.contains("score")) {
            throw MalformedRecord(line_no, "expected {query_id, doc_id, score}");
        }
        scores_[obj.at("query_id").get<std::string>()][obj.at("doc_id").get<std::string>()] =
            obj.at("score").get<double>();
    }
}

RetrievalRun PrecomputedIndex::retrieve(const std::string& query, std::size_t k) const {
    std::vector<double> scores(corpus_->size(), 0.0);
    auto it = scores_.find(query);
    if (it != scores_.end()) {
        for (std::size_t i = 0; i < corpus_->size(); ++i) {
            auto score_it = it->second.find(corpus_->docs()[i].id);
            if (score_it != it->second.end()) scores[i] = score_it->second;
        }
    }
    return rank_scores(*corpus_, query, scores, k);
}

std::unique_ptr<Index> build_index(std::shared_ptr<const Corpus> corpus, const std::string& scorer) {
    if (scorer == "bm25") {
        return std::make_unique<Bm25Index>(std::move(corpus));
    }
    if (scorer.starts_with("precomputed:")) {
        return std::make_unique<PrecomputedIndex>(std::move(corpus),
                                                  scorer.substr(std::string("precomputed:").size()));
    }
    throw InvalidConfig("unknown scorer: " + scorer);
}

RetrievalRun merge_runs(const RetrievalRun& initial, const std::vector<RetrievalRun>& step_runs) {
    RetrievalRun merged;
    merged.query = initial.query;
    std::unordered_set<std::string> seen;
    auto append = [&](const ScoredDoc& item) {
        if (seen.insert(item.doc_id).second) {
            merged.items.push_back({item.doc_id, static_cast<int>(merged.items.size()) + 1, item.score});
        }
    };
    for (const auto& item : initial.items) append(item);
    for (const auto& run : step_runs) {
        for (const auto& item : run.items) append(item);
    }
    return merged;
}

double recall_at(const RetrievalRun& run, const std::set<std::string>& relevant) {
    if (relevant.empty()) {
        throw EmptyRelevantSet();
    }
    std::size_t hits = 0;
    for (const auto& item : run.items) {
        if (relevant.contains(item.doc_id)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at(const RetrievalRun& run, const std::set<std::string>& relevant) {
    if (relevant.empty()) {
        throw EmptyRelevantSet();
    }
    if (run.items.empty()) return 0.0;
    double dcg = 0.0;
    for (std::size_t i = 0; i < run.items.size(); ++i) {
        if (relevant.contains(run.items[i].doc_id)) {
            dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
        }
    }
    const std::size_t ideal_hits = std::min(relevant.size(), run.items.size());
    double idcg = 0.0;
    for (std::size_t i = 0; i < ideal_hits; ++i) {
        idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    }
    return dcg / idcg;
}

double mrr(const RetrievalRun& run, const std::set<std::string>& relevant) {
    if (relevant.empty()) {
        throw EmptyRelevantSet();
    }
    for (std::size_t i = 0; i < run.items.size(); ++i) {
        if (relevant.contains(run.items[i].doc_id)) {
            return 1.0 / static_cast<double>(i + 1);
        }
    }
    return 0.0;
}

}  // namespace ragscale
