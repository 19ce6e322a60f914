#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "flourish/datamodel.hpp"
#include "flourish/dates.hpp"

namespace flourish {

/// Label-to-score recoding. The default map is low=-1, medium=+0.5, high=+1,
/// not_present=0; every score on the half-integer grid in [-1, +1], so sums
/// of recoded labels are exactly representable up to 2^51 records.
struct RecodingScheme {
    std::array<double, 4> scores{0.0, -1.0, 0.5, 1.0};  // indexed by Label

    double at(Label l) const { return scores[static_cast<std::size_t>(l)]; }
    bool valid() const;
};

inline double recode(Label label, const RecodingScheme& scheme) { return scheme.at(label); }

/// Per (census area, day, question) accumulator: sum of recoded scores plus
/// the count of related (label != not_present) records.
struct DailyAreaCell {
    CensusAreaId area;
    Date day;
    QuestionId question;
    double sum = 0.0;
    long related_count = 0;
};

struct DailyCellKey {
    std::string geoid;
    long day_serial = 0;
    std::string question;
    auto operator<=>(const DailyCellKey&) const = default;
};

using DailyCells = std::map<DailyCellKey, DailyAreaCell>;

DailyCells aggregate_daily(const std::vector<LabelRecord>& records, const RecodingScheme& scheme);

/// Cell-wise merge of shard results; commutative and associative.
void merge_cells(DailyCells& into, const DailyCells& from);

/// County-question sums over a period: numerator C and related-tweet support n.
struct CountySums {
    struct Cell {
        double sum = 0.0;
        long support = 0;
    };
    // county fips -> question key -> cell
    std::map<std::string, std::map<std::string, Cell>> cells;
    DateRange period;
};

CountySums aggregate_county(const DailyCells& cells, const DateRange& period);

/// County-by-indicator score table. A cell with zero support is missing
/// (NaN), never zero: 0 means "balanced signal", absence means "no signal".
class IndicatorMatrix {
public:
    IndicatorMatrix() = default;
    IndicatorMatrix(std::vector<std::string> counties, std::vector<std::string> indicators,
                    DateRange period);

    const std::vector<std::string>& counties() const { return counties_; }
    const std::vector<std::string>& indicators() const { return indicators_; }
    const DateRange& period() const { return period_; }

    std::optional<std::size_t> county_index(const std::string& fips) const;
    std::optional<std::size_t> indicator_index(const std::string& name) const;

    bool has_value(std::size_t county, std::size_t indicator) const;
    double value(std::size_t county, std::size_t indicator) const;       // NaN when missing
    long support(std::size_t county, std::size_t indicator) const;

    void set(std::size_t county, std::size_t indicator, double value, long support);
    void append_indicator(const std::string& name);

    /// Column values over all counties, NaN for missing cells.
    std::vector<double> column(std::size_t indicator) const;

    void write(std::ostream& out) const;
    static IndicatorMatrix read(std::istream& in, const DateRange& period);

    bool operator==(const IndicatorMatrix&) const = default;

private:
    std::vector<std::string> counties_;    // sorted fips
    std::vector<std::string> indicators_;  // column order
    DateRange period_{{2013, 1, 1}, {2023, 6, 30}};
    std::vector<double> values_;           // county-major
    std::vector<long> support_;
    std::unordered_map<std::string, std::size_t> county_ix_;
    std::unordered_map<std::string, std::size_t> indicator_ix_;
};

/// I = C / n over related records; zero-support cells stay missing.
IndicatorMatrix normalize(const CountySums& sums, const std::vector<std::string>& indicator_order);

/// Derived column definition: target = sign * source (sign is -1 for the
/// *_sec security indicators, which flip a worry scale).
struct DerivationRule {
    std::string target;
    std::string source;
    double sign = -1.0;
};

IndicatorMatrix derive(const IndicatorMatrix& matrix, const std::vector<DerivationRule>& rules);

struct ScreenResult {
    IndicatorMatrix retained;
    std::vector<std::string> dropped;
};

/// Drops indicator columns whose cross-county sample variance over present
/// cells falls below the threshold (columns with <2 present cells count as
/// zero variance).
ScreenResult screen_variance(const IndicatorMatrix& matrix, double threshold);

/// One question-dictionary entry. Raw questions have no derived_from; derived
/// indicators name their source and carry the sign of the transform. Inactive
/// entries are recognized in input but excluded from aggregation.
struct DictionaryEntry {
    std::string key;
    std::string description;
    std::string derived_from;  // empty for raw questions
    double sign = 1.0;
    bool active = true;
};

struct QuestionDictionary {
    std::vector<DictionaryEntry> entries;  // file order = output column order

    std::set<std::string> raw_keys() const;          // all raw question keys (any activity)
    std::vector<std::string> active_raw_keys() const;
    std::vector<DerivationRule> derivation_rules() const;  // active derived entries
    std::vector<std::string> column_order() const;         // active entries, file order
    const DictionaryEntry* find(const std::string& key) const;

    static QuestionDictionary load(const std::string& path);
    static QuestionDictionary parse(const std::string& json_text);
};

}  // namespace flourish
