#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace ragscale {

/// One identified, titled passage; the unit of retrieval. Body text is capped
/// at 1024 whitespace tokens on ingestion (titles are not counted toward the
/// cap and are rendered separately).
struct Document {
    std::string id;
    std::string title;
    std::string text;
};

struct QAInstance {
    std::string id;
    std::string question;
    std::vector<std::string> answers;
    std::set<std::string> relevant_doc_ids;
};

/// Immutable after construction; safe for concurrent reads.
class Corpus {
public:
    static constexpr std::size_t kMaxDocTokens = 1024;

    /// Validates ids, truncates bodies, counts empty-text rows.
    static Corpus from_documents(std::vector<Document> docs);

    const std::vector<Document>& docs() const { return docs_; }
    const Document* find(const std::string& id) const;
    std::size_t size() const { return docs_.size(); }
    bool empty() const { return docs_.empty(); }

    /// Number of documents whose text was empty or whitespace-only at load.
    std::size_t empty_text_count() const { return empty_text_count_; }

private:
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::size_t empty_text_count_ = 0;
};

/// Line-delimited JSON objects {id, title, text}.
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// Line-delimited JSON objects {id, question, answers, relevant_doc_ids?}.
std::vector<QAInstance> load_dataset(const std::filesystem::path& path);

}  // namespace ragscale
