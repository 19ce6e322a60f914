#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include "flourish/dates.hpp"

namespace flourish::cli {

/// Effective settings for one subcommand invocation: a JSON config file plus
/// command-line overrides (overrides win). Paths are taken as given, relative
/// to the working directory.
struct RunConfig {
    // stage inputs
    std::string labels_path;
    std::string climate_path;
    std::string dictionary_path;
    std::string model_path;
    std::string indicators_path;
    std::string fit_path;
    std::string geometry_path;
    std::string geometry_key = "GEOID";

    // aggregation
    DateRange window{{2013, 1, 1}, {2023, 6, 30}};
    std::string period = "full";  // "full" | "monthly" | "custom"
    DateRange custom_period{{2013, 1, 1}, {2023, 6, 30}};
    double variance_threshold = 0.0;
    bool reject_unknown_questions = false;

    // estimation
    double gradient_tolerance = 1e-6;
    int max_iterations = 500;
    double residual_floor = 1e-8;
    bool fit_on_correlation = false;
    std::string score_method = "regression";  // or "bartlett"

    // simulate
    std::string simulate_mode = "pipeline";  // "pipeline" | "labels" | "observations"
    int sim_counties = 100;
    int sim_areas_per_county = 2;
    int sim_days = 5;
    int sim_tweets_per_cell = 4;
    long sim_cases = 5000;
    Date sim_start{2022, 1, 1};
    double sim_related_prob = 0.7;
    double sim_medium_prob = 0.2;
    double sim_hazard_scale = 40.0;
    std::map<std::string, double> sim_truth;  // parameter label -> generating value
    std::map<std::string, std::array<double, 4>> sim_label_probs;

    unsigned threads = 1;

    static RunConfig load(const std::string& path);
    static RunConfig parse_json(const std::string& text);
};

/// Subcommand bodies; each writes its artifacts plus a `<command>_report.json`
/// into `out_dir` and returns the process exit code (0 success, 2 failure).
/// Failures print a diagnostic to stderr.
int cmd_aggregate(const RunConfig& config, const std::string& out_dir);
int cmd_correlate(const RunConfig& config, const std::string& out_dir);
int cmd_fit(const RunConfig& config, const std::string& out_dir, bool allow_nonconverged);
int cmd_scores(const RunConfig& config, const std::string& out_dir);
int cmd_simulate(const RunConfig& config, const std::string& out_dir, std::uint64_t seed);

/// FNV-1a 64-bit over raw bytes; input digests for run reports.
std::uint64_t fnv1a64(const void* data, std::size_t n);
std::string digest_hex(std::uint64_t d);
std::string file_digest(const std::string& path);  // "fnv1a64:<16 hex>"

}  // namespace flourish::cli
