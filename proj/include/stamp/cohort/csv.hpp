#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace stamp::cohort {

/// A comma-separated table with a header row (RFC 4180 quoting).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;   // padded to header width

    /// Index of `name` in the header, if present.
    std::optional<std::size_t> column(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);

/// Quotes a field when it contains a comma, quote or line break.
std::string csv_field(const std::string& value);
std::string csv_line(const std::vector<std::string>& fields);

} // namespace stamp::cohort
