#include "ragscale/tokenize.hpp"

#include <cctype>
#include <mutex>
#include <unordered_map>

#include "ragscale/errors.hpp"

namespace ragscale {

namespace {

bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

std::unordered_map<std::string, std::shared_ptr<const Tokenizer>>& registry() {
    static std::unordered_map<std::string, std::shared_ptr<const Tokenizer>> map = {
        {"whitespace", std::make_shared<WhitespaceTokenizer>()},
    };
    return map;
}

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

std::size_t WhitespaceTokenizer::count(std::string_view text) const {
    std::size_t n = 0;
    bool in_token = false;
    for (char c : text) {
        if (is_space(c)) {
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++n;
        }
    }
    return n;
}

std::shared_ptr<const Tokenizer> get_tokenizer(const std::string& name) {
    std::lock_guard lock(registry_mutex());
    auto it = registry().find(name);
    if (it == registry().end()) {
        throw UnknownTokenizer(name);
    }
    return it->second;
}

void register_tokenizer(std::shared_ptr<const Tokenizer> tokenizer) {
    std::lock_guard lock(registry_mutex());
    registry()[tokenizer->name()] = std::move(tokenizer);
}

std::size_t count_tokens(std::string_view text, const Tokenizer& tokenizer) {
    return tokenizer.count(text);
}

std::size_t count_tokens(std::string_view text, const std::string& tokenizer_name) {
    return get_tokenizer(tokenizer_name)->count(text);
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) tokens.emplace_back(text.substr(start, i - start));
    }
    return tokens;
}

std::string truncate_text(std::string_view text, std::size_t max_tokens) {
    if (max_tokens < 1) {
        throw InvalidConfig("truncate_text requires max_tokens >= 1");
    }
    WhitespaceTokenizer ws;
    if (ws.count(text) <= max_tokens) {
        return std::string(text);
    }
    auto tokens = whitespace_tokens(text);
    std::string out;
    for (std::size_t i = 0; i < max_tokens; ++i) {
        if (i > 0) out += ' ';
        out += tokens[i];
    }
    return out;
}

}  // namespace ragscale
