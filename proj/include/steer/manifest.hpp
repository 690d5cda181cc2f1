#pragma once

#include "json.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace steer {

constexpr std::string_view k_tool_version = "0.1.0";

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path & path);

// UTC ISO-8601. Honors SOURCE_DATE_EPOCH so reruns can be byte-identical.
std::string current_timestamp();

struct RunManifest {
    std::string command;
    std::string config_digest;
    std::string checkpoint_digest;
    std::map<std::string, std::string> dataset_digests;
    std::map<std::string, std::string> vector_digests;
    uint64_t seed = 0;
    std::string tool_version{k_tool_version};
    std::string timestamp;

    nlohmann::json to_json() const;
    // Digest over every field except the timestamp.
    std::string digest() const;
};

} // namespace steer
