#include "flourish/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

namespace flourish::synth {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t init = seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
    for (auto& word : s_) word = splitmix64(init);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    for (;;) {
        const double u = 2.0 * uniform() - 1.0;
        const double v = 2.0 * uniform() - 1.0;
        const double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            const double m = std::sqrt(-2.0 * std::log(s) / s);
            cached_ = v * m;
            has_cached_ = true;
            return u * m;
        }
    }
}

std::string synthetic_fips(int county_index) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%02d%03d", 1 + county_index % 50,
                  1 + 2 * (county_index / 50));
    return buf;
}

std::string synthetic_geoid(int county_index, int area_index) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%06d", area_index + 1);
    return synthetic_fips(county_index) + buf;
}

std::vector<LabelRecord> generate_labels(const LabelSynthConfig& config) {
    for (const auto& [key, probs] : config.questions) {
        double sum = 0.0;
        for (double p : probs) {
            if (p < 0.0) throw PipelineError("label synth: negative probability for " + key);
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-12) {
            throw PipelineError("label synth: probabilities for " + key + " sum to " +
                                std::to_string(sum));
        }
    }
    constexpr Label kEnumOrder[4] = {Label::NotPresent, Label::Low, Label::Medium, Label::High};

    std::vector<LabelRecord> records;
    for (int c = 0; c < config.counties; ++c) {
        for (int a = 0; a < config.areas_per_county; ++a) {
            const auto area = *CensusAreaId::parse(synthetic_geoid(c, a));
            for (int d = 0; d < config.days; ++d) {
                const Date day = Date::from_serial(config.start.serial() + d);
                const std::uint64_t cell =
                    (static_cast<std::uint64_t>(c) * config.areas_per_county + a) * config.days +
                    d;
                Rng rng(config.seed, cell);
                for (const auto& [question, probs] : config.questions) {
                    for (int t = 0; t < config.tweets_per_cell; ++t) {
                        const double u = rng.uniform();
                        double cdf = 0.0;
                        Label label = Label::High;
                        for (int k = 0; k < 4; ++k) {
                            cdf += probs[static_cast<std::size_t>(k)];
                            if (u < cdf) {
                                label = kEnumOrder[k];
                                break;
                            }
                        }
                        records.push_back(LabelRecord{
                            "t" + std::to_string(cell) + "-" + question + "-" +
                                std::to_string(t),
                            day, area, QuestionId{question}, label});
                    }
                }
            }
        }
    }
    return records;
}

ObservationSynthResult generate_observations(const sem::ModelSpec& spec,
                                             const sem::ParameterVector& truth, long n_cases,
                                             std::uint64_t seed) {
    const auto layout = sem::ModelLayout::from_spec(spec);
    const std::size_t p = layout.n_observed();
    const std::size_t m = layout.n_endogenous;
    if (n_cases <= static_cast<long>(p)) {
        throw PipelineError("observation synth: need more cases than observed variables");
    }

    ObservationSynthResult result;
    result.table.variables = layout.observed;
    result.table.values = linalg::Matrix(static_cast<std::size_t>(n_cases), p);
    result.population_covariance = sem::implied_covariance(layout, truth);

    std::vector<double> latent(1 + m);
    for (long i = 0; i < n_cases; ++i) {
        Rng rng(seed, static_cast<std::uint64_t>(i));
        latent[0] = rng.normal() * std::sqrt(truth.exo_variance);
        for (std::size_t j = 0; j < m; ++j) {
            latent[1 + j] = truth.path[j] * latent[0] +
                            rng.normal() * std::sqrt(truth.latent_residual[j]);
        }
        char buf[16];
        std::snprintf(buf, sizeof buf, "case_%06ld", i + 1);
        result.table.cases.emplace_back(buf);
        double* row = result.table.values.row(static_cast<std::size_t>(i));
        for (std::size_t r = 0; r < p; ++r) {
            row[r] = truth.loading[r] * latent[layout.latent_of[r]] +
                     rng.normal() * std::sqrt(truth.measurement_residual[r]);
        }
    }
    return result;
}

std::string truth_manifest(const sem::ModelSpec& spec, const sem::ParameterVector& truth,
                           std::uint64_t seed, long cases) {
    const auto layout = sem::ModelLayout::from_spec(spec);
    sem::FitResult shell;
    shell.layout = layout;
    shell.theta = truth;
    shell.table = sem::parameter_estimates(layout, truth);
    sem::standardize(shell);

    nlohmann::ordered_json doc;
    doc["seed"] = seed;
    doc["cases"] = cases;
    doc["latents"] = layout.latents;
    doc["observed"] = layout.observed;
    auto& params = doc["parameters"];
    params = nlohmann::ordered_json::array();
    for (const auto& row : shell.table) {
        nlohmann::ordered_json entry;
        entry["label"] = row.label;
        entry["fixed"] = row.fixed;
        entry["value"] = row.estimate;
        entry["standardized"] = row.standardized;
        params.push_back(std::move(entry));
    }
    return doc.dump(2) + "\n";
}

sem::ParameterVector default_truth(const sem::ModelLayout& layout) {
    sem::ParameterVector truth;
    truth.exo_variance = 1.0;
    truth.loading.resize(layout.n_observed());
    truth.measurement_residual.resize(layout.n_observed());
    const std::size_t x_count =
        static_cast<std::size_t>(std::count(layout.latent_of.begin(), layout.latent_of.end(),
                                            static_cast<std::size_t>(0)));
    std::size_t within = 0;
    std::size_t current_latent = 0;
    for (std::size_t r = 0; r < layout.n_observed(); ++r) {
        if (layout.latent_of[r] != current_latent) {
            current_latent = layout.latent_of[r];
            within = 0;
        }
        truth.loading[r] = 0.25 + 0.05 * static_cast<double>(within % 3);
        truth.measurement_residual[r] = r < x_count
                                            ? 0.05 + 0.01 * static_cast<double>(within % 3)
                                            : 0.04 + 0.005 * static_cast<double>(within % 4);
        ++within;
    }
    truth.path.resize(layout.n_endogenous);
    truth.latent_residual.resize(layout.n_endogenous);
    for (std::size_t j = 0; j < layout.n_endogenous; ++j) {
        truth.path[j] = -(0.55 + 0.03 * static_cast<double>(j % 4));
        truth.latent_residual[j] = 0.17 + 0.01 * static_cast<double>(j % 3);
    }
    return truth;
}

void apply_truth_overrides(const sem::ModelLayout& layout, sem::ParameterVector& truth,
                           const std::map<std::string, double>& overrides) {
    if (overrides.empty()) return;
    auto rows = sem::parameter_estimates(layout, truth);
    for (const auto& [label, value] : overrides) {
        bool found = false;
        for (const auto& row : rows) {
            if (row.label != label) continue;
            found = true;
            break;
        }
        if (!found) throw PipelineError("truth override: unknown parameter '" + label + "'");
    }
    // apply by walking the same display order the labels came from
    std::size_t ix = 0;
    for (std::size_t r = 0; r < layout.n_observed(); ++r, ++ix) {
        auto it = overrides.find(rows[ix].label);
        if (it != overrides.end()) truth.loading[r] = it->second;
    }
    for (std::size_t j = 0; j < layout.n_endogenous; ++j, ++ix) {
        auto it = overrides.find(rows[ix].label);
        if (it != overrides.end()) truth.path[j] = it->second;
    }
    {
        auto it = overrides.find(rows[ix].label);
        if (it != overrides.end()) truth.exo_variance = it->second;
        ++ix;
    }
    for (std::size_t j = 0; j < layout.n_endogenous; ++j, ++ix) {
        auto it = overrides.find(rows[ix].label);
        if (it != overrides.end()) truth.latent_residual[j] = it->second;
    }
    for (std::size_t r = 0; r < layout.n_observed(); ++r, ++ix) {
        auto it = overrides.find(rows[ix].label);
        if (it != overrides.end()) truth.measurement_residual[r] = it->second;
    }
}

PipelineSynthResult generate_pipeline(const sem::ModelSpec& spec,
                                      const sem::ParameterVector& truth,
                                      const PipelineSynthConfig& config) {
    const auto layout = sem::ModelLayout::from_spec(spec);
    const std::size_t m = layout.n_endogenous;

    // exogenous indicators must map onto the climate table's hazard columns
    std::vector<std::size_t> hazard_col;
    for (const auto& name : spec.exogenous.indicators) {
        auto it = std::find_if(kHazardNames.begin(), kHazardNames.end(),
                               [&](const char* h) { return name == h; });
        if (it == kHazardNames.end()) {
            throw PipelineError("pipeline synth: exogenous indicator '" + name +
                                "' is not a hazard column");
        }
        hazard_col.push_back(static_cast<std::size_t>(it - kHazardNames.begin()));
    }
    if (hazard_col.size() != kHazardNames.size()) {
        throw PipelineError("pipeline synth: the exogenous latent must use all six hazards");
    }

    const double pm = config.medium_prob;
    // P(high | related) = (1 + v - 1.5 pm) / 2 and P(low | related) =
    // (1 - v - 0.5 pm) / 2 give E[recode | related] = v; both stay in [0, 1]
    // for v in [1.5 pm - 1, 1 - 0.5 pm], so target values are clamped inside
    const double v_lo = 1.5 * pm - 1.0 + 0.01;
    const double v_hi = 1.0 - 0.5 * pm - 0.01;

    PipelineSynthResult result;
    std::vector<std::pair<CountyId, std::array<double, 6>>> climate_rows;
    const std::uint64_t county_tag = 1ULL << 48;
    const std::uint64_t tweet_tag = 1ULL << 49;

    for (int c = 0; c < config.counties; ++c) {
        Rng rng(config.seed, county_tag + static_cast<std::uint64_t>(c));
        const double xi = rng.normal() * std::sqrt(truth.exo_variance);
        std::vector<double> latent(1 + m);
        latent[0] = xi;
        for (std::size_t j = 0; j < m; ++j) {
            latent[1 + j] =
                truth.path[j] * xi + rng.normal() * std::sqrt(truth.latent_residual[j]);
        }

        // hazards: direct observation through an affine map onto [0, 100]
        const auto fips = *CountyId::parse(synthetic_fips(c));
        std::array<double, 6> scores{};
        for (std::size_t r = 0; r < spec.exogenous.indicators.size(); ++r) {
            const double x = truth.loading[r] * xi +
                             rng.normal() * std::sqrt(truth.measurement_residual[r]);
            scores[hazard_col[r]] = std::clamp(50.0 + config.hazard_scale * x, 0.0, 100.0);
        }
        climate_rows.emplace_back(fips, scores);

        // flourishing indicators: per-question target values for this county
        const std::size_t x_count = spec.exogenous.indicators.size();
        std::vector<double> target(layout.n_observed() - x_count);
        for (std::size_t r = x_count; r < layout.n_observed(); ++r) {
            const double v = truth.loading[r] * latent[layout.latent_of[r]] +
                             rng.normal() * std::sqrt(truth.measurement_residual[r]);
            target[r - x_count] = std::clamp(v, v_lo, v_hi);
        }

        for (int a = 0; a < config.areas_per_county; ++a) {
            const auto area = *CensusAreaId::parse(synthetic_geoid(c, a));
            for (int d = 0; d < config.days; ++d) {
                const Date day = Date::from_serial(config.start.serial() + d);
                const std::uint64_t cell =
                    (static_cast<std::uint64_t>(c) * config.areas_per_county + a) * config.days +
                    d;
                Rng tweet_rng(config.seed, tweet_tag + cell);
                for (std::size_t r = x_count; r < layout.n_observed(); ++r) {
                    const std::string& question = layout.observed[r];
                    const double v = target[r - x_count];
                    const double ph = (1.0 + v - 1.5 * pm) / 2.0;
                    const double pl = (1.0 - v - 0.5 * pm) / 2.0;
                    for (int t = 0; t < config.tweets_per_cell; ++t) {
                        Label label = Label::NotPresent;
                        if (tweet_rng.uniform() < config.related_prob) {
                            const double u = tweet_rng.uniform();
                            if (u < pl) {
                                label = Label::Low;
                            } else if (u < pl + pm) {
                                label = Label::Medium;
                            } else {
                                label = Label::High;
                            }
                        }
                        result.records.push_back(LabelRecord{
                            "t" + std::to_string(cell) + "-" + question + "-" +
                                std::to_string(t),
                            day, area, QuestionId{question}, label});
                    }
                }
            }
        }
    }

    std::sort(climate_rows.begin(), climate_rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [county, scores] : climate_rows) {
        result.climate.counties.push_back(county);
        result.climate.scores.push_back(scores);
    }
    result.truth_json = truth_manifest(spec, truth, config.seed, config.counties);
    return result;
}

}  // namespace flourish::synth
