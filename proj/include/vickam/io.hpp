#pragma once

#include "vickam/error.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace vickam {

using json = nlohmann::json;

inline void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::format, "cannot open file for writing", path.string());
    out << j.dump(2) << "\n";
    if (!out) fail(ErrorCode::format, "write failed", path.string());
}

inline json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::format, "cannot open file for reading", path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::format, std::string("invalid JSON: ") + e.what(), path.string());
    }
}

/// Reads a required field, converting type errors into format errors.
template <typename T>
T json_get(const json& j, const char* key, const std::string& path = {}) {
    if (!j.contains(key)) fail(ErrorCode::format, std::string("missing field '") + key + "'", path);
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(ErrorCode::format, std::string("bad field '") + key + "': " + e.what(), path);
    }
}

template <typename T>
T json_get_or(const json& j, const char* key, T fallback, const std::string& path = {}) {
    if (!j.contains(key)) return fallback;
    return json_get<T>(j, key, path);
}

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorCode::format, "cannot create directory: " + ec.message(), dir.string());
}

} // namespace vickam
