#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pearlm/common.hpp"

namespace pearlm::tsv {

inline std::vector<std::string_view> split(std::string_view line, char sep = '\t') {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

// Calls fn(fields, line_number) for every non-blank, non-comment line.
inline void for_each_row(const std::string& path,
                         const std::function<void(const std::vector<std::string_view>&, std::size_t)>& fn) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        fn(split(line), lineno);
    }
}

template <typename Int>
Int parse_int(std::string_view s, const std::string& where) {
    Int v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw DataError(where + ": expected integer, got '" + std::string(s) + "'");
    return v;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline std::uint64_t file_hash(const std::string& path) { return fnv1a(read_file(path)); }

// Fixed-notation double rendering with a stable number of digits.
inline std::string fixed(double v, int digits = 6) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(digits);
    ss << v;
    return ss.str();
}

inline std::string scientific(double v, int digits = 3) {
    std::ostringstream ss;
    ss.setf(std::ios::scientific);
    ss.precision(digits);
    ss << v;
    return ss.str();
}

}  // namespace pearlm::tsv
