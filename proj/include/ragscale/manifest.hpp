#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace ragscale {

/// Experiment configuration file. Paths are resolved relative to the manifest
/// location. The manifest hash is stamped into every output artifact.
struct RunManifest {
    std::filesystem::path source_path;
    std::string hash;

    std::filesystem::path corpus;
    std::filesystem::path dataset;
    std::optional<std::filesystem::path> train_dataset;
    std::optional<std::filesystem::path> demos;
    std::optional<std::filesystem::path> index_file;
    std::optional<std::filesystem::path> templates;
    std::string backend = "scripted:script.json";  // scripted:<path> or remote
    std::string tokenizer = "whitespace";
    std::uint64_t seed = 0;
    std::filesystem::path out = "out";
    std::size_t sample_size = 0;
    std::size_t demo_quota = 8;
    int parallel = 1;
};

RunManifest load_manifest(const std::filesystem::path& path);

/// FNV-1a 64-bit of the raw file bytes, hex encoded.
std::string hash_file(const std::filesystem::path& path);

/// Budget strings use decimal multipliers: "16k" = 16000, "1M" = 1000000.
long parse_budget(const std::string& text);

}  // namespace ragscale
