#pragma once

#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "ragscale/corpus.hpp"

namespace ragscale {

struct ScoredDoc {
    std::string doc_id;
    int rank = 0;  // 1-based
    double score = 0.0;
};

struct RetrievalRun {
    std::string query;
    std::vector<ScoredDoc> items;
};

/// Immutable after build; concurrent retrieve calls are allowed.
class Index {
public:
    virtual ~Index() = default;
    virtual RetrievalRun retrieve(const std::string& query, std::size_t k) const = 0;
    virtual const Corpus& corpus() const = 0;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Okapi BM25 with the non-negative idf variant ln(1 + (N - df + 0.5) / (df + 0.5)).
/// Terms are lowercased alphanumeric runs over "title text". Score ties and
/// zero-score padding order by ascending doc id.
class Bm25Index : public Index {
public:
    Bm25Index(std::shared_ptr<const Corpus> corpus, Bm25Params params = {});

    RetrievalRun retrieve(const std::string& query, std::size_t k) const override;
    const Corpus& corpus() const override { return *corpus_; }
    const Bm25Params& params() const { return params_; }

    void save(const std::filesystem::path& path) const;
    static std::unique_ptr<Bm25Index> load(const std::filesystem::path& path);

private:
    std::shared_ptr<const Corpus> corpus_;
    Bm25Params params_;
    std::vector<std::size_t> doc_lens_;
    double avg_len_ = 0.0;
    // term -> (doc index, term frequency), doc indices ascending
    std::unordered_map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> postings_;

    void build();
};

/// Scores supplied by an external retriever via a JSONL file of
/// {query_id, doc_id, score}; the query string is the lookup key.
/// Unlisted documents score zero and pad in ascending-id order.
class PrecomputedIndex : public Index {
public:
    PrecomputedIndex(std::shared_ptr<const Corpus> corpus, const std::filesystem::path& score_file);

    RetrievalRun retrieve(const std::string& query, std::size_t k) const override;
    const Corpus& corpus() const override { return *corpus_; }

private:
    std::shared_ptr<const Corpus> corpus_;
    std::unordered_map<std::string, std::unordered_map<std::string, double>> scores_;
};

/// scorer is "bm25" or "precomputed:<score file path>".
std::unique_ptr<Index> build_index(std::shared_ptr<const Corpus> corpus,
                                   const std::string& scorer = "bm25");

/// Lowercased alphanumeric runs; the lexical unit of the BM25 scorer.
std::vector<std::string> lexical_terms(std::string_view text);

/// Deduplicate by doc_id: initial items first in original order, then each
/// step run's items in order, skipping ids already present. Ranks renumbered
/// from 1; scores keep their originating-run values.
RetrievalRun merge_runs(const RetrievalRun& initial, const std::vector<RetrievalRun>& step_runs);

double recall_at(const RetrievalRun& run, const std::set<std::string>& relevant);
/// Binary gain, 1/log2(rank+1) discount, ideal ranking of the same length.
double ndcg_at(const RetrievalRun& run, const std::set<std::string>& relevant);
double mrr(const RetrievalRun& run, const std::set<std::string>& relevant);

}  // namespace ragscale
