#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace ragscale {

/// Pluggable token accounting. Counting must be deterministic and additive
/// enough for context-length bookkeeping; it does not need to match any
/// particular model's vocabulary.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::string name() const = 0;
    virtual std::size_t count(std::string_view text) const = 0;
};

/// Splits on runs of ASCII whitespace. The default unit of accounting.
class WhitespaceTokenizer : public Tokenizer {
public:
    std::string name() const override { return "whitespace"; }
    std::size_t count(std::string_view text) const override;
};

/// Registry access. "whitespace" is always registered.
/// Throws UnknownTokenizer for unregistered names.
std::shared_ptr<const Tokenizer> get_tokenizer(const std::string& name);
void register_tokenizer(std::shared_ptr<const Tokenizer> tokenizer);

std::size_t count_tokens(std::string_view text, const Tokenizer& tokenizer);
std::size_t count_tokens(std::string_view text, const std::string& tokenizer_name);

std::vector<std::string> whitespace_tokens(std::string_view text);

/// Keeps at most `max_tokens` leading whitespace tokens. Text already within
/// the limit is returned unchanged; otherwise the kept tokens are joined by
/// single spaces.
std::string truncate_text(std::string_view text, std::size_t max_tokens = 1024);

}  // namespace ragscale
