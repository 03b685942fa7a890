#include "json_util.hpp"

#include <sstream>

#include "instcache/digest.hpp"

namespace instcache::jsonio {

void for_each_line(const std::string& path, const std::function<void(json&, size_t)>& fn) {
    std::ifstream in = open_in(path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw InvalidArgument(path + ":" + std::to_string(lineno) +
                                  ": malformed JSON line: " + e.what());
        }
        fn(j, lineno);
    }
}

LenientStats for_each_line_lenient(const std::string& path,
                                   const std::function<bool(json&, size_t)>& fn) {
    std::ifstream in = open_in(path);
    LenientStats stats;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ++stats.total_lines;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception&) {
            ++stats.malformed;
            continue;
        }
        if (!fn(j, lineno)) ++stats.malformed;
    }
    return stats;
}

std::string read_file(const std::string& path) {
    std::ifstream in = open_in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out = open_out(path);
    out << contents;
    if (!out) throw Error("failed writing " + path);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open for reading: " + path);
    return in;
}

} // namespace instcache::jsonio

namespace instcache {

std::string digest_file(const std::string& path) {
    return digest_hex(jsonio::read_file(path));
}

} // namespace instcache
