#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ragscale/selfask.hpp"

namespace ragscale {

struct GenerationRequest {
    std::string prompt;
    // Empty means unconstrained. Otherwise the returned text must start with
    // one of these.
    std::vector<std::string> allowed_prefixes;
    int max_output_tokens = 64;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string generate(const GenerationRequest& request) = 0;
    /// Whether independent requests may be issued concurrently.
    virtual bool supports_concurrency() const { return false; }
};

/// Enforces the prefix contract on top of any backend: one retry on a
/// violating response, then ConstraintViolation. Never returns a string that
/// violates the request's allowed_prefixes. When retry_count is given it is
/// incremented for each violation recovered by the retry.
std::string generate(Backend& backend, const GenerationRequest& request,
                     int* retry_count = nullptr);

/// One scripted response. Entries are scanned in order; the first live entry
/// whose matcher accepts the prompt fires. `contains` is a substring matcher;
/// absent means match any prompt (pure sequence position). `once` entries are
/// consumed when they fire.
struct ScriptEntry {
    std::optional<std::string> contains;
    std::string response;
    bool once = true;
};

/// Deterministic test backend. Sequential consumption is stateful, so
/// concurrent use is not supported.
class ScriptedBackend : public Backend {
public:
    explicit ScriptedBackend(std::vector<ScriptEntry> entries);

    std::string generate(const GenerationRequest& request) override;
    std::size_t call_count() const { return calls_; }

private:
    std::vector<ScriptEntry> entries_;
    std::vector<bool> used_;
    std::size_t calls_ = 0;
};

/// JSON array of {response, contains?, once?}.
std::vector<ScriptEntry> load_script(const std::filesystem::path& path);

/// Adapter for test oracles and embedded models.
class FunctionBackend : public Backend {
public:
    using Fn = std::function<std::string(const GenerationRequest&)>;
    explicit FunctionBackend(Fn fn, bool concurrent = false)
        : fn_(std::move(fn)), concurrent_(concurrent) {}

    std::string generate(const GenerationRequest& request) override { return fn_(request); }
    bool supports_concurrency() const override { return concurrent_; }

private:
    Fn fn_;
    bool concurrent_;
};

inline constexpr const char* kEndpointEnvVar = "RAGSCALE_LLM_ENDPOINT";
inline constexpr const char* kAuthTokenEnvVar = "RAGSCALE_LLM_TOKEN";

struct RemoteConfig {
    std::string endpoint;                           // http(s)://host[:port]/path
    std::string auth_token;                         // sent as Bearer token when non-empty
    std::vector<std::string> stop_sequences{"\n"};  // forwarded with every request
    int timeout_seconds = 60;
};

/// Wire client for a single generation endpoint: POST {prompt,
/// max_output_tokens, stop_sequences}, response {text}. Constrained decoding
/// is emulated by the caller via prompt cues plus the generate() wrapper.
class RemoteBackend : public Backend {
public:
    explicit RemoteBackend(RemoteConfig config);

    /// Reads RAGSCALE_LLM_ENDPOINT and RAGSCALE_LLM_TOKEN.
    static RemoteConfig config_from_env();

    std::string generate(const GenerationRequest& request) override;
    bool supports_concurrency() const override { return true; }

private:
    RemoteConfig config_;
    std::string host_;  // scheme://host[:port]
    std::string path_;
};

}  // namespace ragscale
