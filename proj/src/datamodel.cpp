#include "flourish/datamodel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>

#include "flourish/csv.hpp"
#include "flourish/indicators.hpp"
#include "flourish/kernels.hpp"

namespace flourish {

namespace {

bool all_digits(const std::string& s) {
    return !s.empty() &&
           std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

}  // namespace

std::optional<CountyId> CountyId::parse(const std::string& text) {
    if (text.size() != 5 || !all_digits(text)) return std::nullopt;
    return CountyId{text};
}

std::optional<CensusAreaId> CensusAreaId::parse(const std::string& text) {
    if (text.size() != 11 || !all_digits(text)) return std::nullopt;
    return CensusAreaId{text, CountyId{text.substr(0, 5)}};
}

bool CensusAreaId::consistent() const {
    return geoid.size() == 11 && all_digits(geoid) && county.fips == geoid.substr(0, 5);
}

std::optional<Label> parse_label(const std::string& text) {
    if (text == "not_present") return Label::NotPresent;
    if (text == "low") return Label::Low;
    if (text == "medium") return Label::Medium;
    if (text == "high") return Label::High;
    return std::nullopt;
}

const char* label_name(Label l) {
    switch (l) {
        case Label::NotPresent: return "not_present";
        case Label::Low: return "low";
        case Label::Medium: return "medium";
        case Label::High: return "high";
    }
    return "?";
}

namespace {

constexpr std::size_t kMaxReportedIssues = 20;

void note_issue(LabelIngestResult& result, long line, const std::string& what) {
    if (result.issues.size() < kMaxReportedIssues) {
        result.issues.push_back("line " + std::to_string(line) + ": " + what);
    }
}

void expect_header(const std::vector<std::string>& header, const std::vector<std::string>& expected,
                   const char* what) {
    for (const auto& name : expected) {
        if (std::find(header.begin(), header.end(), name) == header.end()) {
            throw PipelineError(std::string(what) + ": missing column '" + name + "'");
        }
    }
}

std::size_t column_of(const std::vector<std::string>& header, const std::string& name) {
    return static_cast<std::size_t>(
        std::find(header.begin(), header.end(), name) - header.begin());
}

}  // namespace

LabelIngestResult ingest_labels(std::istream& in, const std::set<std::string>& known_questions,
                                const IngestOptions& options) {
    csv::Reader reader(in);
    auto header = reader.next();
    if (!header) throw PipelineError("label input: empty source");
    expect_header(*header, {"tweet_id", "day", "geoid", "question", "label"}, "label input");
    const std::size_t c_tweet = column_of(*header, "tweet_id");
    const std::size_t c_day = column_of(*header, "day");
    const std::size_t c_geoid = column_of(*header, "geoid");
    const std::size_t c_question = column_of(*header, "question");
    const std::size_t c_label = column_of(*header, "label");
    const std::size_t width = header->size();

    LabelIngestResult result;
    while (auto row = reader.next()) {
        ++result.counters.rows_read;
        if (row->size() != width) {
            ++result.counters.malformed;
            note_issue(result, reader.line(), "wrong field count");
            continue;
        }
        auto day = Date::parse((*row)[c_day]);
        auto label = parse_label((*row)[c_label]);
        const std::string& tweet = (*row)[c_tweet];
        if (!day || !label || tweet.empty()) {
            ++result.counters.malformed;
            note_issue(result, reader.line(), "malformed day/label/tweet_id");
            continue;
        }
        auto area = CensusAreaId::parse((*row)[c_geoid]);
        if (!area) {
            ++result.counters.invalid_area;
            note_issue(result, reader.line(), "invalid geoid '" + (*row)[c_geoid] + "'");
            continue;
        }
        const std::string& question = (*row)[c_question];
        if (!known_questions.count(question)) {
            if (options.unknown_questions == UnknownQuestionPolicy::Reject) {
                throw PipelineError("label input: unknown question '" + question + "' at line " +
                                    std::to_string(reader.line()));
            }
            ++result.counters.unknown_question;
            note_issue(result, reader.line(), "unknown question '" + question + "'");
            continue;
        }
        if (!options.window.contains(*day)) {
            ++result.counters.out_of_window;
            continue;
        }
        ++result.counters.accepted;
        result.records.push_back(LabelRecord{tweet, *day, *area, QuestionId{question}, *label});
    }
    return result;
}

LabelIngestResult ingest_labels_file(const std::string& path,
                                     const std::set<std::string>& known_questions,
                                     const IngestOptions& options) {
    std::ifstream in(path);
    if (!in) throw PipelineError("label input: cannot open '" + path + "'");
    return ingest_labels(in, known_questions, options);
}

LabelIngestResult validate_records(const std::vector<LabelRecord>& rows,
                                   const std::set<std::string>& known_questions,
                                   const IngestOptions& options) {
    LabelIngestResult result;
    long line = 0;
    for (const auto& rec : rows) {
        ++line;
        ++result.counters.rows_read;
        if (rec.tweet.empty() || !rec.day.valid()) {
            ++result.counters.malformed;
            note_issue(result, line, "malformed record");
            continue;
        }
        if (!rec.area.consistent()) {
            ++result.counters.invalid_area;
            note_issue(result, line, "geoid/county mismatch for '" + rec.area.geoid + "'");
            continue;
        }
        if (!known_questions.count(rec.question.key)) {
            if (options.unknown_questions == UnknownQuestionPolicy::Reject) {
                throw PipelineError("unknown question '" + rec.question.key + "'");
            }
            ++result.counters.unknown_question;
            continue;
        }
        if (!options.window.contains(rec.day)) {
            ++result.counters.out_of_window;
            continue;
        }
        ++result.counters.accepted;
        result.records.push_back(rec);
    }
    return result;
}

void write_labels(std::ostream& out, const std::vector<LabelRecord>& records) {
    out << "tweet_id,day,geoid,question,label\n";
    for (const auto& rec : records) {
        out << csv::join_row({rec.tweet, rec.day.to_string(), rec.area.geoid, rec.question.key,
                              label_name(rec.label)})
            << "\n";
    }
}

std::optional<std::size_t> ClimateTable::index_of(const CountyId& county) const {
    auto it = std::lower_bound(counties.begin(), counties.end(), county);
    if (it == counties.end() || !(*it == county)) return std::nullopt;
    return static_cast<std::size_t>(it - counties.begin());
}

ClimateTable ingest_climate(std::istream& in) {
    csv::Reader reader(in);
    auto header = reader.next();
    if (!header) throw PipelineError("climate input: empty source");
    std::vector<std::string> expected{"fips"};
    for (const char* h : kHazardNames) expected.push_back(h);
    expect_header(*header, expected, "climate input");
    const std::size_t c_fips = column_of(*header, "fips");
    std::array<std::size_t, 6> c_hazard{};
    for (std::size_t h = 0; h < kHazardNames.size(); ++h) {
        c_hazard[h] = column_of(*header, kHazardNames[h]);
    }

    std::vector<std::pair<CountyId, std::array<double, 6>>> rows;
    while (auto row = reader.next()) {
        if (row->size() != header->size()) {
            throw PipelineError("climate input: wrong field count at line " +
                                std::to_string(reader.line()));
        }
        auto county = CountyId::parse((*row)[c_fips]);
        if (!county) {
            throw PipelineError("climate input: invalid fips '" + (*row)[c_fips] + "' at line " +
                                std::to_string(reader.line()));
        }
        std::array<double, 6> scores{};
        for (std::size_t h = 0; h < 6; ++h) {
            auto v = csv::parse_double((*row)[c_hazard[h]]);
            if (!v) {
                throw PipelineError("climate input: unparsable " + std::string(kHazardNames[h]) +
                                    " for county " + county->fips);
            }
            if (!(*v >= 0.0 && *v <= 100.0)) {
                throw PipelineError("climate input: score out of range [0,100]: " +
                                    std::string(kHazardNames[h]) + "=" + (*row)[c_hazard[h]] +
                                    " for county " + county->fips);
            }
            scores[h] = *v;
        }
        rows.emplace_back(*county, scores);
    }

    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    ClimateTable table;
    for (auto& [county, scores] : rows) {
        if (!table.counties.empty() && table.counties.back() == county) {
            throw PipelineError("climate input: duplicate county " + county.fips);
        }
        table.counties.push_back(county);
        table.scores.push_back(scores);
    }
    return table;
}

ClimateTable ingest_climate_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PipelineError("climate input: cannot open '" + path + "'");
    return ingest_climate(in);
}

void write_climate(std::ostream& out, const ClimateTable& table) {
    out << "fips";
    for (const char* h : kHazardNames) out << "," << h;
    out << "\n";
    for (std::size_t i = 0; i < table.counties.size(); ++i) {
        out << table.counties[i].fips;
        for (double v : table.scores[i]) out << "," << csv::format_roundtrip(v);
        out << "\n";
    }
}

CountyRegistry CountyRegistry::from_counties(const std::vector<CountyId>& counties) {
    CountyRegistry reg;
    std::set<std::string> seen;
    for (const auto& c : counties) {
        if (seen.insert(c.fips).second) {
            reg.entries.push_back({c, "county " + c.fips, c.fips});
        }
    }
    std::sort(reg.entries.begin(), reg.entries.end(),
              [](const Entry& a, const Entry& b) { return a.county < b.county; });
    return reg;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y, int min_pairs) {
    // compact complete pairs so the moment sums run on contiguous data
    std::vector<double> xs, ys;
    xs.reserve(x.size());
    ys.reserve(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isnan(x[i]) && !std::isnan(y[i])) {
            xs.push_back(x[i]);
            ys.push_back(y[i]);
        }
    }
    const std::size_t n = xs.size();
    if (n < static_cast<std::size_t>(min_pairs)) return std::nan("");

    const auto& k = kernels::active();
    const double nx = static_cast<double>(n);
    const double mx = k.sum(xs.data(), n) / nx;
    const double my = k.sum(ys.data(), n) / nx;
    for (auto& v : xs) v -= mx;
    for (auto& v : ys) v -= my;
    const double sxx = k.sumsq(xs.data(), n);
    const double syy = k.sumsq(ys.data(), n);
    if (sxx <= 0.0 || syy <= 0.0) return std::nan("");  // constant variable
    const double sxy = k.dot(xs.data(), ys.data(), n);
    double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

CorrelationMatrix correlate(const IndicatorMatrix& indicators, const ClimateTable& climate,
                            int min_pairs) {
    // counties present in both tables, in indicator row order
    std::vector<std::size_t> ind_rows;
    std::vector<std::size_t> cli_rows;
    for (std::size_t i = 0; i < indicators.counties().size(); ++i) {
        auto ci = climate.index_of(CountyId{indicators.counties()[i]});
        if (ci) {
            ind_rows.push_back(i);
            cli_rows.push_back(*ci);
        }
    }
    if (ind_rows.empty()) throw PipelineError("correlate: no county overlaps between tables");

    CorrelationMatrix out;
    out.row_names = indicators.indicators();
    out.col_names.assign(kHazardNames.begin(), kHazardNames.end());
    out.values.assign(out.row_names.size(), std::vector<double>(6, std::nan("")));

    for (std::size_t q = 0; q < out.row_names.size(); ++q) {
        std::vector<double> ind(ind_rows.size());
        for (std::size_t i = 0; i < ind_rows.size(); ++i) {
            ind[i] = indicators.value(ind_rows[i], q);
        }
        for (std::size_t h = 0; h < 6; ++h) {
            std::vector<double> haz(cli_rows.size());
            for (std::size_t i = 0; i < cli_rows.size(); ++i) {
                haz[i] = climate.scores[cli_rows[i]][h];
            }
            out.values[q][h] = pearson(ind, haz, min_pairs);
        }
    }
    return out;
}

void CorrelationMatrix::write(std::ostream& out) const {
    out << "indicator";
    for (const auto& c : col_names) out << "," << c;
    out << "\n";
    for (std::size_t r = 0; r < row_names.size(); ++r) {
        out << row_names[r];
        for (double v : values[r]) {
            out << ",";
            if (!std::isnan(v)) out << csv::format_fixed6(v);
        }
        out << "\n";
    }
}

}  // namespace flourish
