#include "ragscale/manifest.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ragscale/errors.hpp"

namespace ragscale {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& relative) {
    std::filesystem::path p(relative);
    return p.is_absolute() ? p : base / p;
}

}  // namespace

RunManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open manifest: " + path.string());
    }
    nlohmann::json obj;
    try {
        in >> obj;
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("malformed manifest " + path.string() + ": " + e.what());
    }
    RunManifest manifest;
    manifest.source_path = path;
    manifest.hash = hash_file(path);
    const auto base = path.parent_path();
    manifest.corpus = resolve(base, obj.at("corpus").get<std::string>());
    manifest.dataset = resolve(base, obj.at("dataset").get<std::string>());
    if (obj.contains("train_dataset")) {
        manifest.train_dataset = resolve(base, obj.at("train_dataset").get<std::string>());
    }
    if (obj.contains("demos")) {
        manifest.demos = resolve(base, obj.at("demos").get<std::string>());
    }
    if (obj.contains("index")) {
        manifest.index_file = resolve(base, obj.at("index").get<std::string>());
    }
    if (obj.contains("templates")) {
        manifest.templates = resolve(base, obj.at("templates").get<std::string>());
    }
    manifest.backend = obj.value("backend", manifest.backend);
    if (manifest.backend.starts_with("scripted:")) {
        const auto script = manifest.backend.substr(std::string("scripted:").size());
        manifest.backend = "scripted:" + resolve(base, script).string();
    }
    manifest.tokenizer = obj.value("tokenizer", manifest.tokenizer);
    manifest.seed = obj.value("seed", manifest.seed);
    if (obj.contains("out")) {
        manifest.out = resolve(base, obj.at("out").get<std::string>());
    }
    manifest.sample_size = obj.value("sample_size", manifest.sample_size);
    manifest.demo_quota = obj.value("demo_quota", manifest.demo_quota);
    manifest.parallel = obj.value("parallel", manifest.parallel);
    return manifest;
}

std::string hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open file for hashing: " + path.string());
    }
    std::uint64_t hash = 1469598103934665603ULL;
    char c;
    while (in.get(c)) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 1099511628211ULL;
    }
    std::ostringstream out;
    out << std::hex << hash;
    return out.str();
}

long parse_budget(const std::string& text) {
    if (text.empty()) {
        throw InvalidConfig("empty budget");
    }
    std::size_t digits = 0;
    while (digits < text.size() &&
           (std::isdigit(static_cast<unsigned char>(text[digits])) || text[digits] == '.')) {
        ++digits;
    }
    if (digits == 0) {
        throw InvalidConfig("budget must start with a number: " + text);
    }
    const double value = std::stod(text.substr(0, digits));
    const std::string suffix = text.substr(digits);
    double multiplier = 1.0;
    if (suffix == "k" || suffix == "K") {
        multiplier = 1e3;
    } else if (suffix == "M") {
        multiplier = 1e6;
    } else if (suffix == "G" || suffix == "B") {
        multiplier = 1e9;
    } else if (!suffix.empty()) {
        throw InvalidConfig("unknown budget suffix: " + suffix);
    }
    const double result = value * multiplier;
    if (result < 1.0) {
        throw InvalidConfig("budget must be at least 1 token");
    }
    return static_cast<long>(result);
}

}  // namespace ragscale
