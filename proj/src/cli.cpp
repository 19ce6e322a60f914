#include "flourish/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flourish/csv.hpp"
#include "flourish/datamodel.hpp"
#include "flourish/indicators.hpp"
#include "flourish/scoring.hpp"
#include "flourish/sem/engine.hpp"
#include "flourish/sem/model.hpp"
#include "flourish/synth.hpp"
#include "flourish/version.hpp"

namespace flourish::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PipelineError("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PipelineError("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw PipelineError("write failed for '" + path.string() + "'");
}

std::string now_utc() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

ordered_json report_open(const char* command) {
    ordered_json report;
    report["tool"] = {{"name", "flourish"}, {"version", kVersion}};
    report["command"] = command;
    // the one volatile field in any artifact; determinism checks mask it
    report["timestamp"] = now_utc();
    report["inputs"] = ordered_json::object();
    report["outputs"] = ordered_json::object();
    report["counts"] = ordered_json::object();
    report["warnings"] = ordered_json::array();
    return report;
}

void add_input(ordered_json& report, const std::string& name, const std::string& path) {
    report["inputs"][name] = {{"path", path}, {"digest", file_digest(path)}};
}

void add_output(ordered_json& report, const fs::path& out_dir, const std::string& filename) {
    report["outputs"][filename] = file_digest((out_dir / filename).string());
}

void write_report(ordered_json& report, const fs::path& out_dir, const char* command) {
    write_file(out_dir / (std::string(command) + "_report.json"), report.dump(2) + "\n");
}

int fail(const char* command, const std::string& what) {
    std::cerr << "flourish " << command << ": " << what << "\n";
    return 2;
}

fs::path prepare_out_dir(const std::string& out_dir) {
    fs::path dir = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
    fs::create_directories(dir);
    return dir;
}

Date parse_date_field(const std::string& text, const char* what) {
    auto d = Date::parse(text);
    if (!d) throw PipelineError(std::string(what) + ": bad date '" + text + "'");
    return *d;
}

std::string fmt(double v, const char* spec = "%.6f") {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

double json_number(const ordered_json& v) {
    return v.is_number() ? v.get<double>() : kNaN;
}

// --- shared stage plumbing ---

struct LoadedDictionary {
    QuestionDictionary dict;
    std::set<std::string> known;
};

LoadedDictionary load_dictionary(const RunConfig& config) {
    if (config.dictionary_path.empty()) throw PipelineError("no dictionary path configured");
    LoadedDictionary loaded;
    loaded.dict = QuestionDictionary::load(config.dictionary_path);
    loaded.known = loaded.dict.raw_keys();
    return loaded;
}

IndicatorMatrix reorder_columns(const IndicatorMatrix& m, const std::vector<std::string>& order) {
    IndicatorMatrix out(m.counties(), order, m.period());
    for (std::size_t q = 0; q < order.size(); ++q) {
        auto src = m.indicator_index(order[q]);
        if (!src) throw PipelineError("indicator reorder: missing column '" + order[q] + "'");
        for (std::size_t c = 0; c < m.counties().size(); ++c) {
            out.set(c, q, m.value(c, *src), m.support(c, *src));
        }
    }
    return out;
}

IndicatorMatrix read_indicators(const RunConfig& config) {
    if (config.indicators_path.empty()) throw PipelineError("no indicator table configured");
    std::ifstream in(config.indicators_path);
    if (!in) throw PipelineError("cannot open '" + config.indicators_path + "'");
    return IndicatorMatrix::read(in, config.window);
}

bool is_hazard(const std::string& name) {
    return std::find_if(kHazardNames.begin(), kHazardNames.end(), [&](const char* h) {
               return name == h;
           }) != kHazardNames.end();
}

/// One observed table keyed by county: hazard columns come from the climate
/// table, everything else from the indicator table; counties are the sorted
/// union, with absent cells missing (listwise deletion drops them later).
sem::ObservedTable build_observed_table(const sem::ModelLayout& layout,
                                        const IndicatorMatrix& indicators,
                                        const ClimateTable& climate) {
    for (const auto& name : layout.observed) {
        if (!is_hazard(name) && !indicators.indicator_index(name)) {
            throw PipelineError("model variable '" + name +
                                "' is neither a hazard nor an indicator column");
        }
    }
    std::vector<std::string> counties = indicators.counties();
    for (const auto& c : climate.counties) counties.push_back(c.fips);
    std::sort(counties.begin(), counties.end());
    counties.erase(std::unique(counties.begin(), counties.end()), counties.end());

    sem::ObservedTable table;
    table.cases = counties;
    table.variables = layout.observed;
    table.values = linalg::Matrix(counties.size(), layout.n_observed(), kNaN);
    for (std::size_t i = 0; i < counties.size(); ++i) {
        const auto ind_row = indicators.county_index(counties[i]);
        const auto cli_row = climate.index_of(CountyId{counties[i]});
        for (std::size_t j = 0; j < layout.observed.size(); ++j) {
            const std::string& name = layout.observed[j];
            if (is_hazard(name)) {
                if (cli_row) {
                    const std::size_t h = static_cast<std::size_t>(
                        std::find_if(kHazardNames.begin(), kHazardNames.end(),
                                     [&](const char* hn) { return name == hn; }) -
                        kHazardNames.begin());
                    table.values(i, j) = climate.scores[*cli_row][h];
                }
            } else if (ind_row) {
                const auto q = indicators.indicator_index(name);
                if (indicators.has_value(*ind_row, *q)) {
                    table.values(i, j) = indicators.value(*ind_row, *q);
                }
            }
        }
    }
    return table;
}

const char* kind_name(sem::ParamKind kind) {
    switch (kind) {
        case sem::ParamKind::Loading: return "loading";
        case sem::ParamKind::Path: return "path";
        case sem::ParamKind::LatentVariance: return "latent_variance";
        case sem::ParamKind::LatentResidual: return "latent_residual";
        case sem::ParamKind::MeasurementResidual: return "measurement_residual";
    }
    return "?";
}

std::string fit_to_json(const sem::FitResult& result) {
    ordered_json doc;
    doc["model"] = {{"latents", result.layout.latents},
                    {"observed", result.layout.observed},
                    {"free_parameters", result.layout.params.size()},
                    {"degrees_of_freedom", result.layout.degrees_of_freedom()}};
    doc["convergence"] = {{"converged", result.converged},
                          {"iterations", result.iterations},
                          {"gradient_norm", result.grad_norm},
                          {"discrepancy", result.discrepancy},
                          {"cases", result.n_cases}};
    doc["fit"] = {{"chi_square", result.stats.chi_square},
                  {"df", result.stats.df},
                  {"p_value", result.stats.p_value},
                  {"rmsea", result.stats.rmsea},
                  {"cfi", result.stats.cfi},
                  {"baseline_chi_square", result.stats.baseline_chi_square},
                  {"baseline_df", result.stats.baseline_df}};
    auto& params = doc["parameters"];
    params = ordered_json::array();
    for (const auto& row : result.table) {
        ordered_json entry;
        entry["label"] = row.label;
        entry["kind"] = kind_name(row.kind);
        entry["fixed"] = row.fixed;
        entry["estimate"] = row.estimate;
        entry["standardized"] = row.standardized;
        entry["se"] = row.se;
        entry["z"] = row.z;
        entry["p"] = row.p;
        params.push_back(std::move(entry));
    }
    doc["warnings"] = result.warnings;
    return doc.dump(2) + "\n";
}

std::string significance_stars(double p) {
    if (std::isnan(p)) return "";
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "";
}

std::string fit_to_text(const sem::FitResult& result) {
    std::size_t label_width = 9;
    for (const auto& row : result.table) label_width = std::max(label_width, row.label.size());

    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-*s %12s %10s %8s %8s %12s\n",
                  static_cast<int>(label_width), "parameter", "estimate", "se", "z", "p",
                  "standardized");
    out << line;
    out << std::string(label_width + 54 + 4, '-') << "\n";
    for (const auto& row : result.table) {
        auto cell = [&](double v, const char* spec) {
            std::string s = fmt(v, spec);
            return s.empty() ? std::string(row.fixed ? "-" : "") : s;
        };
        std::snprintf(line, sizeof line, "%-*s %12s %10s %8s %8s %12s %s\n",
                      static_cast<int>(label_width), row.label.c_str(),
                      fmt(row.estimate, "%.4f").c_str(), cell(row.se, "%.4f").c_str(),
                      cell(row.z, "%.2f").c_str(), cell(row.p, "%.4f").c_str(),
                      fmt(row.standardized, "%.4f").c_str(), significance_stars(row.p).c_str());
        out << line;
    }
    out << "\n";
    out << "cases: " << result.n_cases << "   converged: " << (result.converged ? "yes" : "no")
        << "   iterations: " << result.iterations << "\n";
    std::snprintf(line, sizeof line,
                  "discrepancy: %.6f   chi-square: %.3f (df %ld, p %s)\n", result.discrepancy,
                  result.stats.chi_square, result.stats.df,
                  fmt(result.stats.p_value, "%.4f").empty()
                      ? "-"
                      : fmt(result.stats.p_value, "%.4f").c_str());
    out << line;
    std::snprintf(line, sizeof line, "rmsea: %s   cfi: %.4f   baseline chi-square: %.3f (df %ld)\n",
                  fmt(result.stats.rmsea, "%.4f").empty() ? "-"
                                                          : fmt(result.stats.rmsea, "%.4f").c_str(),
                  result.stats.cfi, result.stats.baseline_chi_square, result.stats.baseline_df);
    out << line;
    for (const auto& warning : result.warnings) out << "warning: " << warning << "\n";
    return out.str();
}

sem::FitResult fit_from_json(const std::string& text, const sem::ModelSpec& spec) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw PipelineError(std::string("fit artifact: invalid JSON: ") + e.what());
    }
    sem::FitResult result;
    result.layout = sem::ModelLayout::from_spec(spec);
    result.converged = doc.value("/convergence/converged"_json_pointer, false);
    result.iterations = doc.value("/convergence/iterations"_json_pointer, 0);
    result.n_cases = doc.value("/convergence/cases"_json_pointer, 0L);
    result.discrepancy = json_number(doc.value("/convergence/discrepancy"_json_pointer,
                                               ordered_json()));

    if (!doc.contains("parameters") || !doc["parameters"].is_array()) {
        throw PipelineError("fit artifact: no parameter table");
    }
    auto expected = sem::parameter_estimates(result.layout, result.theta);
    std::map<std::string, double> estimate, standardized;
    for (const auto& entry : doc["parameters"]) {
        estimate[entry.value("label", "")] = json_number(entry.value("estimate", ordered_json()));
        standardized[entry.value("label", "")] =
            json_number(entry.value("standardized", ordered_json()));
    }
    // rebuild theta through the display-order walk used when writing
    result.theta.loading.assign(result.layout.n_observed(), 1.0);
    result.theta.path.assign(result.layout.n_endogenous, 0.0);
    result.theta.latent_residual.assign(result.layout.n_endogenous, 1.0);
    result.theta.measurement_residual.assign(result.layout.n_observed(), 1.0);
    std::map<std::string, double> overrides;
    for (const auto& [label, value] : estimate) {
        if (std::isnan(value)) {
            throw PipelineError("fit artifact: parameter '" + label + "' has no estimate");
        }
        overrides[label] = value;
    }
    for (const auto& row : expected) {
        if (!overrides.count(row.label)) {
            throw PipelineError("fit artifact: missing parameter '" + row.label +
                                "' for this model");
        }
    }
    synth::apply_truth_overrides(result.layout, result.theta, overrides);
    result.table = sem::parameter_estimates(result.layout, result.theta);
    for (auto& row : result.table) {
        auto it = standardized.find(row.label);
        row.standardized = it == standardized.end() ? kNaN : it->second;
    }
    return result;
}

std::vector<DateRange> aggregation_periods(const RunConfig& config) {
    if (config.period == "full") return {config.window};
    if (config.period == "custom") return {config.custom_period};
    if (config.period != "monthly") {
        throw PipelineError("period must be \"full\", \"monthly\", or a {start,end} range");
    }
    std::vector<DateRange> months;
    Date cursor = config.window.start.first_of_month();
    while (cursor <= config.window.end) {
        DateRange month{std::max(cursor, config.window.start),
                        std::min(cursor.last_of_month(), config.window.end)};
        months.push_back(month);
        cursor = cursor.next_month();
    }
    return months;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string digest_hex(std::uint64_t d) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(d));
    return buf;
}

std::string file_digest(const std::string& path) {
    const std::string content = slurp(path);
    return digest_hex(fnv1a64(content.data(), content.size()));
}

RunConfig RunConfig::parse_json(const std::string& text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw PipelineError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw PipelineError("config: expected a JSON object");

    RunConfig c;
    c.labels_path = doc.value("labels", "");
    c.climate_path = doc.value("climate", "");
    c.dictionary_path = doc.value("dictionary", "");
    c.model_path = doc.value("model", "");
    c.indicators_path = doc.value("indicators", "");
    c.fit_path = doc.value("fit", "");
    c.geometry_path = doc.value("geometry", "");
    c.geometry_key = doc.value("geometry_key", "GEOID");

    if (doc.contains("window")) {
        c.window.start = parse_date_field(doc["window"].value("start", ""), "config window");
        c.window.end = parse_date_field(doc["window"].value("end", ""), "config window");
        c.custom_period = c.window;
    }
    if (doc.contains("period")) {
        const auto& period = doc["period"];
        if (period.is_string()) {
            c.period = period.get<std::string>();
            if (c.period != "full" && c.period != "monthly") {
                throw PipelineError("config: period must be \"full\", \"monthly\", or an object");
            }
        } else if (period.is_object()) {
            c.period = "custom";
            c.custom_period.start = parse_date_field(period.value("start", ""), "config period");
            c.custom_period.end = parse_date_field(period.value("end", ""), "config period");
        } else {
            throw PipelineError("config: bad period value");
        }
    }
    c.variance_threshold = doc.value("variance_threshold", 0.0);
    if (doc.contains("unknown_questions")) {
        const std::string policy = doc["unknown_questions"].get<std::string>();
        if (policy == "reject") {
            c.reject_unknown_questions = true;
        } else if (policy != "skip") {
            throw PipelineError("config: unknown_questions must be \"skip\" or \"reject\"");
        }
    }
    if (doc.contains("optimizer")) {
        const auto& opt = doc["optimizer"];
        c.gradient_tolerance = opt.value("gradient_tolerance", c.gradient_tolerance);
        c.max_iterations = opt.value("max_iterations", c.max_iterations);
        c.residual_floor = opt.value("residual_floor", c.residual_floor);
    }
    if (doc.contains("fit_input")) {
        const std::string on = doc["fit_input"].get<std::string>();
        if (on == "correlation") {
            c.fit_on_correlation = true;
        } else if (on != "covariance") {
            throw PipelineError("config: fit_input must be \"covariance\" or \"correlation\"");
        }
    }
    c.score_method = doc.value("score_method", c.score_method);
    if (c.score_method != "regression" && c.score_method != "bartlett") {
        throw PipelineError("config: score_method must be \"regression\" or \"bartlett\"");
    }
    c.threads = doc.value("threads", 1u);

    if (doc.contains("simulate")) {
        const auto& sim = doc["simulate"];
        c.simulate_mode = sim.value("mode", c.simulate_mode);
        if (c.simulate_mode != "pipeline" && c.simulate_mode != "labels" &&
            c.simulate_mode != "observations") {
            throw PipelineError(
                "config: simulate.mode must be \"pipeline\", \"labels\", or \"observations\"");
        }
        c.sim_counties = sim.value("counties", c.sim_counties);
        c.sim_areas_per_county = sim.value("areas_per_county", c.sim_areas_per_county);
        c.sim_days = sim.value("days", c.sim_days);
        c.sim_tweets_per_cell = sim.value("tweets_per_cell", c.sim_tweets_per_cell);
        c.sim_cases = sim.value("cases", c.sim_cases);
        if (sim.contains("start")) {
            c.sim_start = parse_date_field(sim["start"].get<std::string>(), "config simulate");
        }
        c.sim_related_prob = sim.value("related_prob", c.sim_related_prob);
        c.sim_medium_prob = sim.value("medium_prob", c.sim_medium_prob);
        c.sim_hazard_scale = sim.value("hazard_scale", c.sim_hazard_scale);
        if (sim.contains("truth")) {
            for (const auto& [label, value] : sim["truth"].items()) {
                if (!value.is_number()) {
                    throw PipelineError("config: simulate.truth values must be numbers");
                }
                c.sim_truth[label] = value.get<double>();
            }
        }
        if (sim.contains("label_probs")) {
            for (const auto& [question, probs] : sim["label_probs"].items()) {
                if (!probs.is_array() || probs.size() != 4) {
                    throw PipelineError(
                        "config: simulate.label_probs entries must be 4-element arrays");
                }
                std::array<double, 4> arr{};
                for (std::size_t i = 0; i < 4; ++i) arr[i] = probs[i].get<double>();
                c.sim_label_probs[question] = arr;
            }
        }
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) { return parse_json(slurp(path)); }

int cmd_aggregate(const RunConfig& config, const std::string& out_dir) {
    try {
        if (config.labels_path.empty()) throw PipelineError("no labels path configured");
        const fs::path dir = prepare_out_dir(out_dir);
        auto report = report_open("aggregate");
        add_input(report, "labels", config.labels_path);
        add_input(report, "dictionary", config.dictionary_path);

        auto loaded = load_dictionary(config);
        IngestOptions options;
        options.window = config.window;
        options.unknown_questions = config.reject_unknown_questions
                                        ? UnknownQuestionPolicy::Reject
                                        : UnknownQuestionPolicy::SkipWithCount;
        auto ingest = ingest_labels_file(config.labels_path, loaded.known, options);

        const auto cells = aggregate_daily(ingest.records, RecodingScheme{});
        const auto rules = loaded.dict.derivation_rules();
        const auto active_raw = loaded.dict.active_raw_keys();
        const auto order = loaded.dict.column_order();

        ordered_json period_counts = ordered_json::array();
        std::vector<std::string> written;
        for (const auto& period : aggregation_periods(config)) {
            auto sums = aggregate_county(cells, period);
            auto matrix = reorder_columns(derive(normalize(sums, active_raw), rules), order);
            auto screened = screen_variance(matrix, config.variance_threshold);

            std::string filename = "indicators.csv";
            if (config.period == "monthly") {
                char suffix[16];
                std::snprintf(suffix, sizeof suffix, "_%04d-%02d", period.start.year,
                              period.start.month);
                filename = "indicators" + std::string(suffix) + ".csv";
            }
            std::ostringstream out;
            screened.retained.write(out);
            write_file(dir / filename, out.str());
            add_output(report, dir, filename);
            written.push_back(filename);

            ordered_json entry;
            entry["period"] = period.to_string();
            entry["file"] = filename;
            entry["counties"] = screened.retained.counties().size();
            entry["indicators"] = screened.retained.indicators().size();
            entry["dropped_low_variance"] = screened.dropped;
            period_counts.push_back(std::move(entry));
        }

        auto& counts = report["counts"];
        counts["rows_read"] = ingest.counters.rows_read;
        counts["accepted"] = ingest.counters.accepted;
        counts["out_of_window"] = ingest.counters.out_of_window;
        counts["malformed"] = ingest.counters.malformed;
        counts["unknown_question"] = ingest.counters.unknown_question;
        counts["invalid_area"] = ingest.counters.invalid_area;
        counts["periods"] = std::move(period_counts);
        report["issues"] = ingest.issues;
        if (ingest.counters.accepted == 0) {
            report["warnings"].push_back("no records accepted in the aggregation window");
        }
        if (ingest.counters.rejected() > 0) {
            report["warnings"].push_back(std::to_string(ingest.counters.rejected()) +
                                         " records rejected; see counts and issues");
        }
        write_report(report, dir, "aggregate");
        for (const auto& warning : report["warnings"]) {
            std::cerr << "flourish aggregate: warning: " << warning.get<std::string>() << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        return fail("aggregate", e.what());
    }
}

int cmd_correlate(const RunConfig& config, const std::string& out_dir) {
    try {
        if (config.climate_path.empty()) throw PipelineError("no climate path configured");
        const fs::path dir = prepare_out_dir(out_dir);
        auto report = report_open("correlate");
        add_input(report, "indicators", config.indicators_path);
        add_input(report, "climate", config.climate_path);

        const auto indicators = read_indicators(config);
        const auto climate = ingest_climate_file(config.climate_path);
        const auto corr = correlate(indicators, climate);

        std::ostringstream out;
        corr.write(out);
        write_file(dir / "correlations.csv", out.str());
        add_output(report, dir, "correlations.csv");

        long missing = 0;
        for (const auto& row : corr.values) {
            missing += std::count_if(row.begin(), row.end(),
                                     [](double v) { return std::isnan(v); });
        }
        report["counts"]["indicators"] = corr.row_names.size();
        report["counts"]["hazards"] = corr.col_names.size();
        report["counts"]["missing_cells"] = missing;
        if (missing > 0) {
            report["warnings"].push_back(std::to_string(missing) +
                                         " correlation cells missing (insufficient pairs)");
        }
        write_report(report, dir, "correlate");
        return 0;
    } catch (const std::exception& e) {
        return fail("correlate", e.what());
    }
}

int cmd_fit(const RunConfig& config, const std::string& out_dir, bool allow_nonconverged) {
    try {
        if (config.model_path.empty()) throw PipelineError("no model path configured");
        if (config.climate_path.empty()) throw PipelineError("no climate path configured");
        const fs::path dir = prepare_out_dir(out_dir);
        auto report = report_open("fit");
        add_input(report, "indicators", config.indicators_path);
        add_input(report, "climate", config.climate_path);
        add_input(report, "model", config.model_path);

        const auto spec = sem::ModelSpec::load(config.model_path);
        const auto layout = sem::ModelLayout::from_spec(spec);
        const auto indicators = read_indicators(config);
        const auto climate = ingest_climate_file(config.climate_path);
        const auto table = build_observed_table(layout, indicators, climate);

        auto moments = sem::sample_moments(table);
        if (config.fit_on_correlation) moments = sem::to_correlation(moments);

        sem::FitOptions options;
        options.grad_tol = config.gradient_tolerance;
        options.max_iterations = config.max_iterations;
        options.residual_floor = config.residual_floor;
        options.threads = config.threads;
        const auto result = sem::fit(spec, moments, options);

        write_file(dir / "fit.json", fit_to_json(result));
        write_file(dir / "fit.txt", fit_to_text(result));
        add_output(report, dir, "fit.json");
        add_output(report, dir, "fit.txt");

        report["counts"]["counties_in_union"] = table.cases.size();
        report["counts"]["complete_cases"] = moments.complete_cases.size();
        report["counts"]["observed_variables"] = layout.n_observed();
        report["counts"]["free_parameters"] = layout.params.size();
        report["counts"]["iterations"] = result.iterations;
        report["parameters"] = {{"fit_input",
                                 config.fit_on_correlation ? "correlation" : "covariance"},
                                {"gradient_tolerance", config.gradient_tolerance},
                                {"max_iterations", config.max_iterations}};
        for (const auto& warning : result.warnings) report["warnings"].push_back(warning);
        write_report(report, dir, "fit");

        if (!result.converged) {
            std::cerr << "flourish fit: did not converge (gradient max-norm "
                      << result.grad_norm << " after " << result.iterations << " iterations)"
                      << (allow_nonconverged ? "; continuing as requested" : "") << "\n";
            if (!allow_nonconverged) return 3;
        }
        return 0;
    } catch (const std::exception& e) {
        return fail("fit", e.what());
    }
}

int cmd_scores(const RunConfig& config, const std::string& out_dir) {
    try {
        if (config.model_path.empty()) throw PipelineError("no model path configured");
        if (config.fit_path.empty()) throw PipelineError("no fit artifact configured");
        const fs::path dir = prepare_out_dir(out_dir);
        auto report = report_open("scores");
        add_input(report, "indicators", config.indicators_path);
        add_input(report, "climate", config.climate_path);
        add_input(report, "model", config.model_path);
        add_input(report, "fit", config.fit_path);

        const auto spec = sem::ModelSpec::load(config.model_path);
        const auto fitted = fit_from_json(slurp(config.fit_path), spec);
        if (!fitted.converged) {
            throw PipelineError("fit artifact '" + config.fit_path + "' is not converged");
        }
        const auto indicators = read_indicators(config);
        const auto climate = ingest_climate_file(config.climate_path);
        const auto table = build_observed_table(fitted.layout, indicators, climate);

        ScoreOptions options;
        options.method = config.score_method == "bartlett" ? ScoreMethod::Bartlett
                                                           : ScoreMethod::Regression;
        options.threads = config.threads;
        const auto scores = factor_scores(fitted, table, options);
        const auto order = export_order(fitted);

        std::ostringstream out;
        write_scores(out, scores, order);
        write_file(dir / "scores.csv", out.str());
        add_output(report, dir, "scores.csv");

        report["counts"]["scored_counties"] = scores.counties.size();
        report["counts"]["excluded_counties"] = scores.excluded.size();
        if (!scores.excluded.empty()) {
            report["warnings"].push_back(std::to_string(scores.excluded.size()) +
                                         " counties excluded for missing observed values");
            report["excluded"] = scores.excluded;
        }

        if (!config.geometry_path.empty()) {
            add_input(report, "geometry", config.geometry_path);
            const auto join =
                geojson_join(slurp(config.geometry_path), scores, order, config.geometry_key);
            write_file(dir / "scores.geojson", join.text);
            add_output(report, dir, "scores.geojson");
            report["counts"]["geometry_matched"] = join.matched;
            report["counts"]["geometry_gaps"] = join.gaps;
            if (join.gaps > 0) {
                report["warnings"].push_back(std::to_string(join.gaps) +
                                             " geometry features have no score row");
            }
        }
        write_report(report, dir, "scores");
        return 0;
    } catch (const std::exception& e) {
        return fail("scores", e.what());
    }
}

int cmd_simulate(const RunConfig& config, const std::string& out_dir, std::uint64_t seed) {
    try {
        const fs::path dir = prepare_out_dir(out_dir);
        auto report = report_open("simulate");
        report["parameters"] = {{"mode", config.simulate_mode}, {"seed", seed}};

        if (config.simulate_mode == "labels") {
            synth::LabelSynthConfig sc;
            sc.seed = seed;
            sc.counties = config.sim_counties;
            sc.areas_per_county = config.sim_areas_per_county;
            sc.days = config.sim_days;
            sc.start = config.sim_start;
            sc.tweets_per_cell = config.sim_tweets_per_cell;
            if (!config.sim_label_probs.empty()) {
                for (const auto& [question, probs] : config.sim_label_probs) {
                    sc.questions.emplace_back(question, probs);
                }
            } else if (!config.dictionary_path.empty()) {
                add_input(report, "dictionary", config.dictionary_path);
                auto loaded = load_dictionary(config);
                for (const auto& key : loaded.dict.active_raw_keys()) {
                    sc.questions.emplace_back(key,
                                              std::array<double, 4>{0.25, 0.25, 0.25, 0.25});
                }
            } else {
                throw PipelineError(
                    "labels mode needs simulate.label_probs or a dictionary path");
            }
            const auto records = synth::generate_labels(sc);
            std::ostringstream out;
            write_labels(out, records);
            write_file(dir / "labels.csv", out.str());
            add_output(report, dir, "labels.csv");
            report["counts"]["records"] = records.size();
        } else {
            if (config.model_path.empty()) throw PipelineError("no model path configured");
            add_input(report, "model", config.model_path);
            const auto spec = sem::ModelSpec::load(config.model_path);
            const auto layout = sem::ModelLayout::from_spec(spec);
            auto truth = synth::default_truth(layout);
            synth::apply_truth_overrides(layout, truth, config.sim_truth);

            if (config.simulate_mode == "observations") {
                const auto result =
                    synth::generate_observations(spec, truth, config.sim_cases, seed);
                std::ostringstream out;
                out << "case";
                for (const auto& name : result.table.variables) out << "," << name;
                out << "\n";
                for (std::size_t i = 0; i < result.table.cases.size(); ++i) {
                    out << result.table.cases[i];
                    const double* row = result.table.values.row(i);
                    for (std::size_t j = 0; j < result.table.variables.size(); ++j) {
                        out << "," << csv::format_roundtrip(row[j]);
                    }
                    out << "\n";
                }
                write_file(dir / "observations.csv", out.str());
                write_file(dir / "truth.json",
                           synth::truth_manifest(spec, truth, seed, config.sim_cases));
                add_output(report, dir, "observations.csv");
                add_output(report, dir, "truth.json");
                report["counts"]["cases"] = result.table.cases.size();
            } else {
                synth::PipelineSynthConfig sc;
                sc.seed = seed;
                sc.counties = config.sim_counties;
                sc.areas_per_county = config.sim_areas_per_county;
                sc.days = config.sim_days;
                sc.start = config.sim_start;
                sc.tweets_per_cell = config.sim_tweets_per_cell;
                sc.related_prob = config.sim_related_prob;
                sc.medium_prob = config.sim_medium_prob;
                sc.hazard_scale = config.sim_hazard_scale;
                const auto result = synth::generate_pipeline(spec, truth, sc);

                std::ostringstream labels_out;
                write_labels(labels_out, result.records);
                write_file(dir / "labels.csv", labels_out.str());
                std::ostringstream climate_out;
                write_climate(climate_out, result.climate);
                write_file(dir / "climate.csv", climate_out.str());
                write_file(dir / "truth.json", result.truth_json);
                add_output(report, dir, "labels.csv");
                add_output(report, dir, "climate.csv");
                add_output(report, dir, "truth.json");
                report["counts"]["records"] = result.records.size();
                report["counts"]["counties"] = result.climate.counties.size();
            }
        }
        write_report(report, dir, "simulate");
        return 0;
    } catch (const std::exception& e) {
        return fail("simulate", e.what());
    }
}

}  // namespace flourish::cli
