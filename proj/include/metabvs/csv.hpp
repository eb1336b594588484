#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "types.hpp"

namespace metabvs::csv {

/// Dialect: comma separated, mandatory header row, '.' decimal point, no
/// quoting. Names are restricted to [A-Za-z0-9_] so files diff cleanly and
/// round-trip exactly; doubles print with 17 significant digits.

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int ncols() const { return static_cast<int>(header.size()); }
    int nrows() const { return static_cast<int>(rows.size()); }

    int column(const std::string& name) const {
        for (int c = 0; c < ncols(); ++c)
            if (header[c] == name) return c;
        throw MalformedCsv("csv: missing column '" + name + "'");
    }
};

inline bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char ch : s)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_')) return false;
    return true;
}

inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline double parse_double(const std::string& s) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw MalformedCsv("csv: trailing characters in number '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw MalformedCsv("csv: cannot parse number '" + s + "'");
    }
}

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

inline Table read(std::istream& in, const std::string& what = "input") {
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw MalformedCsv("csv: " + what + " is empty (no header)");
    t.header = split_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (cells.size() != t.header.size())
            throw MalformedCsv("csv: " + what + " row " + std::to_string(t.rows.size() + 1) +
                               " has " + std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

inline Table read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MalformedCsv("csv: cannot open '" + path + "'");
    return read(in, path);
}

inline void write(std::ostream& out, const Table& t) {
    for (int c = 0; c < t.ncols(); ++c) out << (c ? "," : "") << t.header[c];
    out << "\n";
    for (const auto& row : t.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
        out << "\n";
    }
}

inline void write_file(const std::string& path, const Table& t) {
    std::ofstream out(path);
    if (!out) throw MalformedCsv("csv: cannot open '" + path + "' for writing");
    write(out, t);
}

}  // namespace metabvs::csv
