#include "ragscale/corpus.hpp"

#include <fstream>

#include <json.hpp>

#include "ragscale/errors.hpp"
#include "ragscale/tokenize.hpp"

namespace ragscale {

namespace {

using nlohmann::json;

std::string require_string(const json& obj, const char* field, std::size_t line) {
    auto it = obj.find(field);
    if (it == obj.end() || !it->is_string()) {
        throw MalformedRecord(line, std::string("missing or non-string field '") + field + "'");
    }
    return it->get<std::string>();
}

bool whitespace_only(const std::string& text) {
    return whitespace_tokens(text).empty();
}

}  // namespace

Corpus Corpus::from_documents(std::vector<Document> docs) {
    Corpus corpus;
    corpus.docs_.reserve(docs.size());
    for (auto& doc : docs) {
        if (doc.id.empty()) {
            throw MalformedRecord(corpus.docs_.size() + 1, "empty document id");
        }
        if (corpus.by_id_.contains(doc.id)) {
            throw DuplicateId(doc.id);
        }
        doc.text = truncate_text(doc.text, kMaxDocTokens);
        if (whitespace_only(doc.text)) {
            ++corpus.empty_text_count_;
        }
        corpus.by_id_.emplace(doc.id, corpus.docs_.size());
        corpus.docs_.push_back(std::move(doc));
    }
    return corpus;
}

const Document* Corpus::find(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &docs_[it->second];
}

Corpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open corpus file: " + path.string());
    }
    std::vector<Document> docs;
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
        if (!obj.is_object()) {
            throw MalformedRecord(line_no, "record is not a JSON object");
        }
        Document doc;
        doc.id = require_string(obj, "id", line_no);
        doc.title = require_string(obj, "title", line_no);
        doc.text = require_string(obj, "text", line_no);
        if (doc.id.empty()) {
            throw MalformedRecord(line_no, "empty document id");
        }
        docs.push_back(std::move(doc));
    }
    // Truncation, duplicate rejection and empty-text counting happen here.
    return Corpus::from_documents(std::move(docs));
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write corpus file: " + path.string());
    }
    for (const auto& doc : corpus.docs()) {
        json obj = {{"id", doc.id}, {"title", doc.title}, {"text", doc.text}};
        out << obj.dump() << '\n';
    }
}

std::vector<QAInstance> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open dataset file: " + path.string());
    }
    std::vector<QAInstance> instances;
    std::set<std::string> seen_ids;
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
        if (!obj.is_object()) {
            throw MalformedRecord(line_no, "record is not a JSON object");
        }
        QAInstance inst;
        inst.id = require_string(obj, "id", line_no);
        inst.question = require_string(obj, "question", line_no);
        auto answers_it = obj.find("answers");
        if (answers_it == obj.end() || !answers_it->is_array() || answers_it->empty()) {
            throw MalformedRecord(line_no, "field 'answers' must be a non-empty array");
        }
        for (const auto& a : *answers_it) {
            if (!a.is_string()) {
                throw MalformedRecord(line_no, "answers must be strings");
            }
            auto answer = a.get<std::string>();
            if (whitespace_tokens(answer).empty()) {
                throw MalformedRecord(line_no, "answers must be non-empty after trimming");
            }
            inst.answers.push_back(std::move(answer));
        }
        if (auto it = obj.find("relevant_doc_ids"); it != obj.end() && !it->is_null()) {
            if (!it->is_array()) {
                throw MalformedRecord(line_no, "relevant_doc_ids must be an array");
            }
            for (const auto& r : *it) {
                if (!r.is_string()) {
                    throw MalformedRecord(line_no, "relevant_doc_ids must be strings");
                }
                inst.relevant_doc_ids.insert(r.get<std::string>());
            }
        }
        if (!seen_ids.insert(inst.id).second) {
            throw DuplicateId(inst.id);
        }
        instances.push_back(std::move(inst));
    }
    return instances;
}

}  // namespace ragscale
