#pragma once

#include <compare>
#include <optional>
#include <string>

namespace flourish {

/// Calendar date, no timezone. Inputs are expected to be pre-normalized to
/// local calendar days, so a (year, month, day) triple is all we track.
struct Date {
    int year = 1970;
    int month = 1;
    int day = 1;

    auto operator<=>(const Date&) const = default;

    bool valid() const;

    /// Days since 1970-01-01 (proleptic Gregorian).
    long serial() const;
    static Date from_serial(long days);

    /// Parses strict ISO-8601 "YYYY-MM-DD". Rejects impossible dates.
    static std::optional<Date> parse(const std::string& text);
    std::string to_string() const;

    Date first_of_month() const { return {year, month, 1}; }
    Date last_of_month() const;
    /// First day of the following month.
    Date next_month() const;
};

/// Inclusive date interval.
struct DateRange {
    Date start;
    Date end;

    auto operator<=>(const DateRange&) const = default;

    bool contains(const Date& d) const { return start <= d && d <= end; }
    long n_days() const { return end.serial() - start.serial() + 1; }
    std::string to_string() const { return start.to_string() + ".." + end.to_string(); }
};

}  // namespace flourish
