#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace bsde::csv {

// Shortest round-trip decimal representation; keeps golden files stable.
std::string format_double(double v);

class Writer {
public:
    Writer(const std::filesystem::path& file, std::vector<std::string> header);

    void row(const std::vector<std::string>& cells);
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::size_t n_cols_;
};

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const;
};

Table read(const std::filesystem::path& file);

}  // namespace bsde::csv
