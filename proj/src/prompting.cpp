#include "ragscale/prompting.hpp"

#include <fstream>

#include <json.hpp>

#include "ragscale/errors.hpp"

namespace ragscale {

namespace {

constexpr const char* kDragHeader =
    "You are an expert in question answering. I am going to give you one or more example "
    "triples of context, question and answer, in which the context may or may not be relevant "
    "to the question. The examples will be written.";

constexpr const char* kDragClosing =
    "After the examples, I am going to provide another pair of context and question, in which "
    "the context may or may not be relevant to the question. I want you to answer the question. "
    "Give only the answer, and no extra commentary, formatting, or chattiness. Answer the "
    "question.";

constexpr const char* kIterHeader =
    "You are an expert in question answering. I am going to give you one or more example sets "
    "of context, question, potential follow up questions and their respective answers, in which "
    "the context may or may not be relevant to the questions. The examples will be written.";

constexpr const char* kIterClosing =
    "After the examples, I am going to provide another pair of context and question, in which "
    "the context may or may not be relevant to the question. I want you to answer the question. "
    "When needed, generate follow up question(s) using the format 'Follow up: X', where X is "
    "the follow up question. Then, answer each follow up question using 'Intermediate answer: "
    "X' with X being the answer. Finally, answer to the main question with the format 'So the "
    "final answer is: X', where X is the final answer.";

void replace_all(std::string& text, std::string_view placeholder, std::string_view value) {
    std::size_t pos = 0;
    while ((pos = text.find(placeholder, pos)) != std::string::npos) {
        text.replace(pos, placeholder.size(), value);
        pos += value.size();
    }
}

std::string render_document(const PromptTemplates& templates, const Document& doc) {
    std::string out = templates.doc_format;
    replace_all(out, "{title}", doc.title);
    replace_all(out, "{text}", doc.text);
    return out;
}

// Rank 1 is rendered last, adjacent to the question.
std::string context_block(const PromptTemplates& templates, const std::string& label,
                          std::span<const Document> docs) {
    if (docs.empty()) return {};
    std::string block = label + "\n\n";
    for (std::size_t i = docs.size(); i-- > 0;) {
        block += render_document(templates, docs[i]);
        block += "\n\n";
    }
    return block;
}

std::string answer_block(const Demonstration& demo) {
    if (const auto* plain = std::get_if<std::string>(&demo.answer)) {
        return "Answer: " + *plain;
    }
    const auto& chain = std::get<SelfAskChain>(demo.answer);
    std::string block;
    for (const auto& pair : chain.pairs) {
        block += std::string(kFollowUpPrefix) + pair.sub_query + "\n\n";
        block += std::string(kIntermediatePrefix) + pair.answer + "\n\n";
    }
    block += std::string(kFinalPrefix) + chain.final_answer;
    return block;
}

std::string examples_block(const PromptTemplates& templates, const std::string& label,
                           std::span<const Demonstration> demos) {
    std::string block;
    for (const auto& demo : demos) {
        block += context_block(templates, label, demo.docs);
        block += "Question: " + demo.question + "\n\n";
        block += answer_block(demo);
        block += "\n\n";
    }
    return block;
}

RenderedPrompt assemble(const PromptTemplates& templates, const std::string& instructions,
                        const std::string& examples, const std::string& closing,
                        const std::string& context, std::string_view question,
                        const std::string& cue, const Tokenizer& tokenizer) {
    std::string text = templates.skeleton;
    replace_all(text, "{instructions}", instructions);
    replace_all(text, "{examples}", examples);
    replace_all(text, "{closing}", closing);
    replace_all(text, "{context}", context);
    replace_all(text, "{question}", question);
    replace_all(text, "{cue}", cue);
    RenderedPrompt prompt;
    prompt.token_count = static_cast<long>(tokenizer.count(text));
    prompt.text = std::move(text);
    return prompt;
}

void validate_transcript(std::span<const Step> transcript) {
    for (std::size_t i = 0; i < transcript.size(); ++i) {
        const StepKind expected = (i % 2 == 0) ? StepKind::kSubQuery : StepKind::kIntermediateAnswer;
        if (transcript[i].kind != expected) {
            throw MalformedTranscript("transcript step " + std::to_string(i + 1) +
                                      " is not an alternating Self-Ask prefix");
        }
    }
}

}  // namespace

const PromptTemplates& PromptTemplates::defaults() {
    static const PromptTemplates templates = {
        kDragHeader,
        kDragClosing,
        "Context (which may or may not be relevant):",
        "Answer:",
        kIterHeader,
        kIterClosing,
        "Context:",
        "Title: {title}\n{text}",
        "{instructions}{examples}{closing}{context}Question: {question}\n\n{cue}",
    };
    return templates;
}

PromptTemplates load_templates(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open template file: " + path.string());
    }
    nlohmann::json obj;
    try {
        in >> obj;
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("malformed template file " + path.string() + ": " + e.what());
    }
    PromptTemplates templates = PromptTemplates::defaults();
    auto maybe = [&](const nlohmann::json& section, const char* field, std::string& target) {
        if (section.contains(field)) target = section.at(field).get<std::string>();
    };
    if (obj.contains("drag")) {
        const auto& d = obj.at("drag");
        maybe(d, "header", templates.drag_header);
        maybe(d, "closing", templates.drag_closing);
        maybe(d, "context_label", templates.drag_context_label);
        maybe(d, "cue", templates.drag_cue);
    }
    if (obj.contains("iterdrag")) {
        const auto& d = obj.at("iterdrag");
        maybe(d, "header", templates.iter_header);
        maybe(d, "closing", templates.iter_closing);
        maybe(d, "context_label", templates.iter_context_label);
    }
    maybe(obj, "doc_format", templates.doc_format);
    maybe(obj, "skeleton", templates.skeleton);
    return templates;
}

RenderedPrompt render_drag_prompt(const PromptTemplates& templates,
                                  std::span<const Demonstration> demos,
                                  std::span<const Document> docs, std::string_view query,
                                  const Tokenizer& tokenizer) {
    const std::string instructions =
        demos.empty() ? std::string() : templates.drag_header + "\n\n";
    const std::string examples = examples_block(templates, templates.drag_context_label, demos);
    const std::string closing = templates.drag_closing + "\n\n";
    const std::string context = context_block(templates, templates.drag_context_label, docs);
    return assemble(templates, instructions, examples, closing, context, query,
                    templates.drag_cue, tokenizer);
}

RenderedPrompt render_iterdrag_prompt(const PromptTemplates& templates,
                                      std::span<const Demonstration> demos,
                                      std::span<const Document> merged_docs,
                                      std::string_view query, std::span<const Step> transcript,
                                      std::span<const std::string_view> cue_prefixes,
                                      const Tokenizer& tokenizer) {
    validate_transcript(transcript);
    const std::string instructions =
        demos.empty() ? std::string() : templates.iter_header + "\n\n";
    const std::string examples = examples_block(templates, templates.iter_context_label, demos);
    const std::string closing = templates.iter_closing + "\n\n";
    const std::string context = context_block(templates, templates.iter_context_label, merged_docs);
    std::string cue;
    for (const auto& step : transcript) {
        cue += render_step(step);
        cue += "\n\n";
    }
    for (std::size_t i = 0; i < cue_prefixes.size(); ++i) {
        if (i > 0) cue += "| ";
        cue += cue_prefixes[i];
    }
    return assemble(templates, instructions, examples, closing, context, query, cue, tokenizer);
}

}  // namespace ragscale
