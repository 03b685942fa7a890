#pragma once

// Internal JSON/NDJSON plumbing. Not installed; public headers stay
// stdlib-only.

#include <fstream>
#include <functional>
#include <string>

#include <json.hpp>

#include "instcache/error.hpp"

namespace instcache::jsonio {

using json = nlohmann::ordered_json;

// Calls fn(parsed, line_number) for every non-empty line. Throws
// InvalidArgument with path:line on JSON parse errors.
void for_each_line(const std::string& path, const std::function<void(json&, size_t)>& fn);

// Same, but malformed lines are counted instead of thrown.
struct LenientStats {
    size_t total_lines = 0;
    size_t malformed = 0;
};
LenientStats for_each_line_lenient(const std::string& path,
                                   const std::function<bool(json&, size_t)>& fn);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

std::ofstream open_out(const std::string& path);
std::ifstream open_in(const std::string& path);

template <typename T>
T require(const json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) {
        throw InvalidArgument(where + ": missing required field \"" + key + "\"");
    }
    try {
        return it->get<T>();
    } catch (const std::exception&) {
        throw InvalidArgument(where + ": field \"" + key + "\" has wrong type");
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    return it->get<T>();
}

} // namespace instcache::jsonio
