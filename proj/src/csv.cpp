#include "psim/csv.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "psim/errors.hpp"

namespace psim::csv {

namespace {

bool parse_double(const std::string& s, double& out) {
    const char* b = s.c_str();
    char* end = nullptr;
    out = std::strtod(b, &end);
    if (end == b) return false;
    while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
    return *end == '\0';
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) fields.push_back(cur);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

} // namespace

std::vector<std::vector<double>> read_numeric(std::istream& is, std::size_t n_cols,
                                              const std::string& what) {
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_fields(line);
        if (first) {
            first = false;
            double probe;
            if (!parse_double(fields[0], probe)) continue; // header line
        }
        if (fields.size() != n_cols)
            throw ConfigError(what + ": line " + std::to_string(lineno) + " has " +
                              std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(n_cols));
        std::vector<double> row(n_cols);
        for (std::size_t i = 0; i < n_cols; ++i) {
            if (!parse_double(fields[i], row[i]))
                throw ConfigError(what + ": non-numeric field '" + fields[i] + "' on line " +
                                  std::to_string(lineno));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<std::vector<double>> read_numeric_file(const std::string& path, std::size_t n_cols) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open file: " + path);
    return read_numeric(f, n_cols, path);
}

std::string format_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

} // namespace psim::csv
