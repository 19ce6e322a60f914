#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace flourish::csv {

/// Minimal comma-separated reader: handles quoted fields with embedded commas
/// and doubled quotes, tolerates CRLF line endings. Rows are returned as raw
/// string fields; interpretation is the caller's job.
class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    /// Next record, or nullopt at end of input. Blank lines are skipped.
    std::optional<std::vector<std::string>> next();

    /// 1-based line number of the most recently returned record.
    long line() const { return line_; }

private:
    std::istream& in_;
    long line_ = 0;
};

std::string escape_field(const std::string& field);
std::string join_row(const std::vector<std::string>& fields);

/// Fixed 6-decimal rendering used by the correlation and score exports.
std::string format_fixed6(double x);

/// Shortest decimal string that parses back to exactly the same double.
std::string format_roundtrip(double x);

/// Strict double parse of a whole field; nullopt on garbage or trailing text.
std::optional<double> parse_double(const std::string& field);

}  // namespace flourish::csv
