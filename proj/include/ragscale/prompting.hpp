#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ragscale/corpus.hpp"
#include "ragscale/selfask.hpp"
#include "ragscale/tokenize.hpp"

namespace ragscale {

struct SelfAskPair {
    std::string sub_query;
    std::string answer;
};

/// Ordered sub-query/intermediate-answer pairs plus exactly one final answer.
struct SelfAskChain {
    std::vector<SelfAskPair> pairs;
    std::string final_answer;
};

/// One in-context example: its retrieved documents in rank order, the
/// question, and either a plain answer or a full Self-Ask chain.
struct Demonstration {
    std::vector<Document> docs;
    std::string question;
    std::variant<std::string, SelfAskChain> answer;

    bool is_chain() const { return std::holds_alternative<SelfAskChain>(answer); }
};

struct RenderedPrompt {
    std::string text;
    long token_count = 0;
};

/// Prompt wording. The instruction and closing paragraphs are fixed template
/// constants; all pieces can be overridden from a JSON template file. The
/// skeleton supports the placeholders {instructions}, {examples}, {closing},
/// {context}, {question} and {cue}.
struct PromptTemplates {
    std::string drag_header;
    std::string drag_closing;
    std::string drag_context_label;
    std::string drag_cue;
    std::string iter_header;
    std::string iter_closing;
    std::string iter_context_label;
    std::string doc_format;  // {title}, {text}
    std::string skeleton;

    static const PromptTemplates& defaults();
};

/// Partial overrides merged onto the defaults.
PromptTemplates load_templates(const std::filesystem::path& path);

/// DRAG layout: optional example-intro header (only with demonstrations),
/// example blocks, closing instruction, test context, question, "Answer:".
/// Documents in every context block appear in reverse rank order so rank 1
/// sits next to the question.
RenderedPrompt render_drag_prompt(const PromptTemplates& templates,
                                  std::span<const Demonstration> demos,
                                  std::span<const Document> docs, std::string_view query,
                                  const Tokenizer& tokenizer);

/// IterDRAG layout: chains rendered in full in the examples; the test block
/// shows the merged documents (reverse rank order), the question, the
/// transcript so far, and a cue line listing the prefixes allowed for this
/// call. Throws MalformedTranscript if the transcript is not an alternating
/// prefix of a Self-Ask chain.
RenderedPrompt render_iterdrag_prompt(const PromptTemplates& templates,
                                      std::span<const Demonstration> demos,
                                      std::span<const Document> merged_docs,
                                      std::string_view query, std::span<const Step> transcript,
                                      std::span<const std::string_view> cue_prefixes,
                                      const Tokenizer& tokenizer);

}  // namespace ragscale
