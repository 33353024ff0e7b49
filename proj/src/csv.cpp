#include "bsde/csv.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bsde::csv {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

Writer::Writer(const std::filesystem::path& file, std::vector<std::string> header)
    : path_(file), out_(file), n_cols_(header.size()) {
    if (!out_) throw std::invalid_argument("csv::Writer: cannot open " + file.string());
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out_ << ',';
        out_ << header[i];
    }
    out_ << '\n';
}

void Writer::row(const std::vector<std::string>& cells) {
    if (cells.size() != n_cols_)
        throw std::invalid_argument("csv::Writer: row width disagrees with the header");
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out_ << ',';
        out_ << cells[i];
    }
    out_ << '\n';
}

std::size_t Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw std::invalid_argument("csv::Table: no column named " + std::string(name));
}

Table read(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::invalid_argument("csv::read: cannot open " + file.string());
    Table t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            t.rows.push_back(std::move(cells));
        }
    }
    return t;
}

}  // namespace bsde::csv
