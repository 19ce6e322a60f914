#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "flourish/dates.hpp"

namespace flourish {

class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 5-digit county FIPS code.
struct CountyId {
    std::string fips;

    static std::optional<CountyId> parse(const std::string& text);
    auto operator<=>(const CountyId&) const = default;
};

/// 11-digit census-tract GEOID; the first five digits are the county.
struct CensusAreaId {
    std::string geoid;
    CountyId county;

    static std::optional<CensusAreaId> parse(const std::string& text);
    bool consistent() const;
    auto operator<=>(const CensusAreaId&) const = default;
};

/// Key of one flourishing question (e.g. "happiness"); valid keys come from
/// the question dictionary.
struct QuestionId {
    std::string key;
    auto operator<=>(const QuestionId&) const = default;
};

enum class Label : std::uint8_t { NotPresent = 0, Low = 1, Medium = 2, High = 3 };

std::optional<Label> parse_label(const std::string& text);
const char* label_name(Label l);

/// One tweet classified against one question.
struct LabelRecord {
    std::string tweet;
    Date day;
    CensusAreaId area;
    QuestionId question;
    Label label = Label::NotPresent;
};

enum class UnknownQuestionPolicy { SkipWithCount, Reject };

struct IngestOptions {
    DateRange window{{2013, 1, 1}, {2023, 6, 30}};
    UnknownQuestionPolicy unknown_questions = UnknownQuestionPolicy::SkipWithCount;
};

/// Row-level counters; rejected rows are counted per cause, never silently
/// dropped.
struct IngestCounters {
    long rows_read = 0;
    long accepted = 0;
    long out_of_window = 0;
    long malformed = 0;
    long unknown_question = 0;
    long invalid_area = 0;

    long rejected() const { return out_of_window + malformed + unknown_question + invalid_area; }
};

struct LabelIngestResult {
    std::vector<LabelRecord> records;
    IngestCounters counters;
    std::vector<std::string> issues;  // first few offending rows, for reports
};

/// Reads `tweet_id,day,geoid,question,label` rows. Throws PipelineError on an
/// unreadable source or a malformed header; data-row problems are counted.
LabelIngestResult ingest_labels(std::istream& in, const std::set<std::string>& known_questions,
                                const IngestOptions& options);
LabelIngestResult ingest_labels_file(const std::string& path, const std::set<std::string>& known_questions,
                                     const IngestOptions& options);

/// Validates already-constructed records against the same invariants.
LabelIngestResult validate_records(const std::vector<LabelRecord>& rows,
                                   const std::set<std::string>& known_questions,
                                   const IngestOptions& options);

void write_labels(std::ostream& out, const std::vector<LabelRecord>& records);

inline constexpr std::array<const char*, 6> kHazardNames = {"heat",   "fire",    "drought",
                                                            "inland", "coastal", "wind"};

/// County-level hazard percentile scores, one row per county, all six hazards
/// present, each in [0, 100].
struct ClimateTable {
    std::vector<CountyId> counties;                 // sorted, unique
    std::vector<std::array<double, 6>> scores;      // parallel to counties

    std::optional<std::size_t> index_of(const CountyId& county) const;
};

ClimateTable ingest_climate(std::istream& in);
ClimateTable ingest_climate_file(const std::string& path);
void write_climate(std::ostream& out, const ClimateTable& table);

/// County roster with display names; geometry_key, when set, names the
/// GeoJSON property value that identifies the county.
struct CountyRegistry {
    struct Entry {
        CountyId county;
        std::string name;
        std::string geometry_key;
    };
    std::vector<Entry> entries;  // unique FIPS, sorted

    static CountyRegistry from_counties(const std::vector<CountyId>& counties);
};

/// Indicator-by-hazard Pearson correlations over counties. A cell is computed
/// pairwise-complete and is missing (NaN) with fewer than `min_pairs`
/// complete county pairs or when either variable is constant over them.
struct CorrelationMatrix {
    std::vector<std::string> row_names;   // indicators
    std::vector<std::string> col_names;   // hazards
    std::vector<std::vector<double>> values;  // NaN = missing

    void write(std::ostream& out) const;
};

class IndicatorMatrix;  // defined in indicators.hpp

CorrelationMatrix correlate(const IndicatorMatrix& indicators, const ClimateTable& climate,
                            int min_pairs = 3);

/// Pairwise-complete Pearson r; NaN when degenerate. Missing values are NaN
/// entries in either input.
double pearson(const std::vector<double>& x, const std::vector<double>& y, int min_pairs = 3);

}  // namespace flourish
