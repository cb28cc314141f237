#include "ragscale/backend.hpp"

#include <cstdlib>
#include <fstream>

#include <httplib.h>
#include <json.hpp>

#include "ragscale/errors.hpp"

namespace ragscale {

namespace {

bool matches_any_prefix(const std::string& text, const std::vector<std::string>& prefixes) {
    for (const auto& prefix : prefixes) {
        if (text.starts_with(prefix)) return true;
    }
    return false;
}

}  // namespace

std::string generate(Backend& backend, const GenerationRequest& request, int* retry_count) {
    if (request.prompt.empty()) {
        throw InvalidConfig("generation request has an empty prompt");
    }
    for (const auto& prefix : request.allowed_prefixes) {
        if (prefix.empty()) {
            throw InvalidConfig("allowed prefixes must be non-empty");
        }
    }
    std::string text = backend.generate(request);
    if (request.allowed_prefixes.empty() || matches_any_prefix(text, request.allowed_prefixes)) {
        return text;
    }
    // One retry, then hard failure.
    if (retry_count != nullptr) ++*retry_count;
    try {
        text = backend.generate(request);
    } catch (const ScriptExhausted&) {
        throw ConstraintViolation("response matched no allowed prefix and the retry exhausted the script");
    }
    if (matches_any_prefix(text, request.allowed_prefixes)) {
        return text;
    }
    throw ConstraintViolation("response matched no allowed prefix after one retry: " +
                              text.substr(0, 80));
}

ScriptedBackend::ScriptedBackend(std::vector<ScriptEntry> entries)
    : entries_(std::move(entries)), used_(entries_.size(), false) {}

std::string ScriptedBackend::generate(const GenerationRequest& request) {
    ++calls_;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (used_[i]) continue;
        const auto& entry = entries_[i];
        if (entry.contains && request.prompt.find(*entry.contains) == std::string::npos) {
            continue;
        }
        if (entry.once) used_[i] = true;
        return entry.response;
    }
    throw ScriptExhausted("no scripted response left for call " + std::to_string(calls_));
}

std::vector<ScriptEntry> load_script(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open script file: " + path.string());
    }
    nlohmann::json arr;
    try {
        in >> arr;
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("malformed script file " + path.string() + ": " + e.what());
    }
    if (!arr.is_array()) {
        throw Error("script file must contain a JSON array: " + path.string());
    }
    std::vector<ScriptEntry> entries;
    for (const auto& obj : arr) {
        ScriptEntry entry;
        entry.response = obj.at("response").get<std::string>();
        if (obj.contains("contains")) entry.contains = obj.at("contains").get<std::string>();
        entry.once = obj.value("once", true);
        entries.push_back(std::move(entry));
    }
    return entries;
}

RemoteBackend::RemoteBackend(RemoteConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) {
        throw BackendUnavailable("remote backend endpoint is not configured (set " +
                                 std::string(kEndpointEnvVar) + ")");
    }
    auto scheme_end = config_.endpoint.find("://");
    std::size_t path_start =
        config_.endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_start == std::string::npos) {
        host_ = config_.endpoint;
        path_ = "/";
    } else {
        host_ = config_.endpoint.substr(0, path_start);
        path_ = config_.endpoint.substr(path_start);
    }
}

RemoteConfig RemoteBackend::config_from_env() {
    RemoteConfig config;
    if (const char* endpoint = std::getenv(kEndpointEnvVar)) config.endpoint = endpoint;
    if (const char* token = std::getenv(kAuthTokenEnvVar)) config.auth_token = token;
    return config;
}

std::string RemoteBackend::generate(const GenerationRequest& request) {
    nlohmann::json body = {
        {"prompt", request.prompt},
        {"max_output_tokens", request.max_output_tokens},
        {"stop_sequences", config_.stop_sequences},
    };
    httplib::Client client(host_);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);
    httplib::Headers headers;
    if (!config_.auth_token.empty()) {
        headers.emplace("Authorization", "Bearer " + config_.auth_token);
    }
    auto result = client.Post(path_, headers, body.dump(), "application/json");
    if (!result) {
        throw BackendUnavailable("request to " + config_.endpoint +
                                 " failed: " + httplib::to_string(result.error()));
    }
    if (result->status != 200) {
        throw BackendUnavailable("endpoint " + config_.endpoint + " returned status " +
                                 std::to_string(result->status));
    }
    nlohmann::json response;
    try {
        response = nlohmann::json::parse(result->body);
    } catch (const nlohmann::json::parse_error& e) {
        throw BackendUnavailable(std::string("endpoint returned malformed JSON: ") + e.what());
    }
    if (!response.contains("text") || !response.at("text").is_string()) {
        throw BackendUnavailable("endpoint response is missing the 'text' field");
    }
    return response.at("text").get<std::string>();
}

}  // namespace ragscale
