#include "flourish/indicators.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "flourish/csv.hpp"
#include <nlohmann/json.hpp>

namespace flourish {

bool RecodingScheme::valid() const {
    for (double s : scores) {
        if (!std::isfinite(s)) return false;
    }
    // unrelated tweets must not move the numerator
    return scores[static_cast<std::size_t>(Label::NotPresent)] == 0.0;
}

DailyCells aggregate_daily(const std::vector<LabelRecord>& records, const RecodingScheme& scheme) {
    DailyCells cells;
    for (const auto& rec : records) {
        DailyCellKey key{rec.area.geoid, rec.day.serial(), rec.question.key};
        auto [it, fresh] = cells.try_emplace(key);
        if (fresh) {
            it->second.area = rec.area;
            it->second.day = rec.day;
            it->second.question = rec.question;
        }
        it->second.sum += recode(rec.label, scheme);
        if (rec.label != Label::NotPresent) ++it->second.related_count;
    }
    return cells;
}

void merge_cells(DailyCells& into, const DailyCells& from) {
    for (const auto& [key, cell] : from) {
        auto [it, fresh] = into.try_emplace(key, cell);
        if (!fresh) {
            it->second.sum += cell.sum;
            it->second.related_count += cell.related_count;
        }
    }
}

CountySums aggregate_county(const DailyCells& cells, const DateRange& period) {
    CountySums sums;
    sums.period = period;
    for (const auto& [key, cell] : cells) {
        if (!period.contains(cell.day)) continue;
        auto& slot = sums.cells[cell.area.county.fips][cell.question.key];
        slot.sum += cell.sum;
        slot.support += cell.related_count;
    }
    return sums;
}

IndicatorMatrix::IndicatorMatrix(std::vector<std::string> counties,
                                 std::vector<std::string> indicators, DateRange period)
    : counties_(std::move(counties)), indicators_(std::move(indicators)), period_(period) {
    values_.assign(counties_.size() * indicators_.size(), std::nan(""));
    support_.assign(counties_.size() * indicators_.size(), 0);
    for (std::size_t i = 0; i < counties_.size(); ++i) county_ix_[counties_[i]] = i;
    for (std::size_t i = 0; i < indicators_.size(); ++i) indicator_ix_[indicators_[i]] = i;
}

std::optional<std::size_t> IndicatorMatrix::county_index(const std::string& fips) const {
    auto it = county_ix_.find(fips);
    if (it == county_ix_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::size_t> IndicatorMatrix::indicator_index(const std::string& name) const {
    auto it = indicator_ix_.find(name);
    if (it == indicator_ix_.end()) return std::nullopt;
    return it->second;
}

bool IndicatorMatrix::has_value(std::size_t county, std::size_t indicator) const {
    return !std::isnan(values_[county * indicators_.size() + indicator]);
}

double IndicatorMatrix::value(std::size_t county, std::size_t indicator) const {
    return values_[county * indicators_.size() + indicator];
}

long IndicatorMatrix::support(std::size_t county, std::size_t indicator) const {
    return support_[county * indicators_.size() + indicator];
}

void IndicatorMatrix::set(std::size_t county, std::size_t indicator, double value, long support) {
    values_[county * indicators_.size() + indicator] = value;
    support_[county * indicators_.size() + indicator] = support;
}

void IndicatorMatrix::append_indicator(const std::string& name) {
    const std::size_t old_width = indicators_.size();
    const std::size_t new_width = old_width + 1;
    std::vector<double> values(counties_.size() * new_width, std::nan(""));
    std::vector<long> supports(counties_.size() * new_width, 0);
    for (std::size_t c = 0; c < counties_.size(); ++c) {
        std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(c * old_width), old_width,
                    values.begin() + static_cast<std::ptrdiff_t>(c * new_width));
        std::copy_n(support_.begin() + static_cast<std::ptrdiff_t>(c * old_width), old_width,
                    supports.begin() + static_cast<std::ptrdiff_t>(c * new_width));
    }
    indicator_ix_[name] = old_width;
    indicators_.push_back(name);
    values_ = std::move(values);
    support_ = std::move(supports);
}

std::vector<double> IndicatorMatrix::column(std::size_t indicator) const {
    std::vector<double> out(counties_.size());
    for (std::size_t c = 0; c < counties_.size(); ++c) out[c] = value(c, indicator);
    return out;
}

void IndicatorMatrix::write(std::ostream& out) const {
    out << "fips";
    for (const auto& q : indicators_) out << "," << q << "," << q << "__n";
    out << "\n";
    for (std::size_t c = 0; c < counties_.size(); ++c) {
        out << counties_[c];
        for (std::size_t q = 0; q < indicators_.size(); ++q) {
            out << ",";
            if (has_value(c, q)) out << csv::format_roundtrip(value(c, q));
            out << "," << support(c, q);
        }
        out << "\n";
    }
}

IndicatorMatrix IndicatorMatrix::read(std::istream& in, const DateRange& period) {
    csv::Reader reader(in);
    auto header = reader.next();
    if (!header) throw PipelineError("indicator input: empty source");
    if (header->empty() || (*header)[0] != "fips") {
        throw PipelineError("indicator input: first column must be 'fips'");
    }
    // columns come in <name>,<name>__n pairs after fips
    std::vector<std::string> names;
    for (std::size_t i = 1; i < header->size(); i += 2) {
        if (i + 1 >= header->size() || (*header)[i + 1] != (*header)[i] + "__n") {
            throw PipelineError("indicator input: column '" + (*header)[i] +
                                "' missing its __n companion");
        }
        names.push_back((*header)[i]);
    }

    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> counties;
    while (auto row = reader.next()) {
        if (row->size() != header->size()) {
            throw PipelineError("indicator input: wrong field count at line " +
                                std::to_string(reader.line()));
        }
        counties.push_back((*row)[0]);
        rows.push_back(std::move(*row));
    }
    std::vector<std::string> sorted = counties;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw PipelineError("indicator input: duplicate county rows");
    }

    IndicatorMatrix m(sorted, names, period);
    for (const auto& row : rows) {
        auto c = m.county_index(row[0]);
        for (std::size_t q = 0; q < names.size(); ++q) {
            const std::string& value_text = row[1 + 2 * q];
            const std::string& support_text = row[2 + 2 * q];
            auto support = csv::parse_double(support_text);
            if (!support || *support < 0 || *support != std::floor(*support)) {
                throw PipelineError("indicator input: bad support count '" + support_text + "'");
            }
            if (value_text.empty()) {
                m.set(*c, q, std::nan(""), static_cast<long>(*support));
                continue;
            }
            auto v = csv::parse_double(value_text);
            if (!v) {
                throw PipelineError("indicator input: unparsable value '" + value_text + "'");
            }
            m.set(*c, q, *v, static_cast<long>(*support));
        }
    }
    return m;
}

IndicatorMatrix normalize(const CountySums& sums, const std::vector<std::string>& indicator_order) {
    std::vector<std::string> counties;
    counties.reserve(sums.cells.size());
    for (const auto& [fips, _] : sums.cells) counties.push_back(fips);

    IndicatorMatrix m(counties, indicator_order, sums.period);
    for (const auto& [fips, by_question] : sums.cells) {
        auto c = m.county_index(fips);
        for (const auto& [question, cell] : by_question) {
            auto q = m.indicator_index(question);
            if (!q) continue;  // question not requested in this export
            if (cell.support > 0) {
                m.set(*c, *q, cell.sum / static_cast<double>(cell.support), cell.support);
            } else {
                m.set(*c, *q, std::nan(""), 0);
            }
        }
    }
    return m;
}

IndicatorMatrix derive(const IndicatorMatrix& matrix, const std::vector<DerivationRule>& rules) {
    IndicatorMatrix out = matrix;
    for (const auto& rule : rules) {
        auto src = out.indicator_index(rule.source);
        if (!src) throw PipelineError("derive: unknown source indicator '" + rule.source + "'");
        if (out.indicator_index(rule.target)) {
            throw PipelineError("derive: target '" + rule.target + "' already present");
        }
        out.append_indicator(rule.target);
        auto dst = *out.indicator_index(rule.target);
        for (std::size_t c = 0; c < out.counties().size(); ++c) {
            // NaN sources stay NaN; support carries over unchanged
            out.set(c, dst, rule.sign * out.value(c, *src), out.support(c, *src));
        }
    }
    return out;
}

ScreenResult screen_variance(const IndicatorMatrix& matrix, double threshold) {
    std::vector<std::string> kept;
    std::vector<std::string> dropped;
    for (std::size_t q = 0; q < matrix.indicators().size(); ++q) {
        std::vector<double> present;
        for (std::size_t c = 0; c < matrix.counties().size(); ++c) {
            if (matrix.has_value(c, q)) present.push_back(matrix.value(c, q));
        }
        double variance = 0.0;
        if (present.size() >= 2) {
            double mean = 0.0;
            for (double v : present) mean += v;
            mean /= static_cast<double>(present.size());
            for (double v : present) variance += (v - mean) * (v - mean);
            variance /= static_cast<double>(present.size() - 1);
        }
        (variance > threshold ? kept : dropped).push_back(matrix.indicators()[q]);
    }

    ScreenResult result;
    result.dropped = std::move(dropped);
    result.retained = IndicatorMatrix(matrix.counties(), kept, matrix.period());
    for (std::size_t q = 0; q < kept.size(); ++q) {
        auto src = *matrix.indicator_index(kept[q]);
        for (std::size_t c = 0; c < matrix.counties().size(); ++c) {
            result.retained.set(c, q, matrix.value(c, src), matrix.support(c, src));
        }
    }
    return result;
}

std::set<std::string> QuestionDictionary::raw_keys() const {
    std::set<std::string> keys;
    for (const auto& e : entries) {
        if (e.derived_from.empty()) keys.insert(e.key);
    }
    return keys;
}

std::vector<std::string> QuestionDictionary::active_raw_keys() const {
    std::vector<std::string> keys;
    for (const auto& e : entries) {
        if (e.derived_from.empty() && e.active) keys.push_back(e.key);
    }
    return keys;
}

std::vector<DerivationRule> QuestionDictionary::derivation_rules() const {
    std::vector<DerivationRule> rules;
    for (const auto& e : entries) {
        if (!e.derived_from.empty() && e.active) rules.push_back({e.key, e.derived_from, e.sign});
    }
    return rules;
}

std::vector<std::string> QuestionDictionary::column_order() const {
    std::vector<std::string> order;
    for (const auto& e : entries) {
        if (e.active) order.push_back(e.key);
    }
    return order;
}

const DictionaryEntry* QuestionDictionary::find(const std::string& key) const {
    for (const auto& e : entries) {
        if (e.key == key) return &e;
    }
    return nullptr;
}

QuestionDictionary QuestionDictionary::parse(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw PipelineError(std::string("dictionary: invalid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("questions") || !doc["questions"].is_array()) {
        throw PipelineError("dictionary: expected top-level object with 'questions' array");
    }
    QuestionDictionary dict;
    std::set<std::string> seen;
    for (const auto& item : doc["questions"]) {
        DictionaryEntry entry;
        if (!item.contains("key") || !item["key"].is_string()) {
            throw PipelineError("dictionary: question entry missing string 'key'");
        }
        entry.key = item["key"].get<std::string>();
        if (!seen.insert(entry.key).second) {
            throw PipelineError("dictionary: duplicate key '" + entry.key + "'");
        }
        entry.description = item.value("description", std::string{});
        entry.derived_from = item.value("derived_from", std::string{});
        entry.sign = item.value("sign", 1.0);
        entry.active = item.value("active", true);
        dict.entries.push_back(std::move(entry));
    }
    for (const auto& e : dict.entries) {
        if (!e.derived_from.empty() && !seen.count(e.derived_from)) {
            throw PipelineError("dictionary: '" + e.key + "' derives from unknown '" +
                                e.derived_from + "'");
        }
    }
    return dict;
}

QuestionDictionary QuestionDictionary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PipelineError("dictionary: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

}  // namespace flourish
