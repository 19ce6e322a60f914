#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "flourish/datamodel.hpp"
#include "flourish/dates.hpp"
#include "flourish/linalg.hpp"
#include "flourish/sem/engine.hpp"

namespace flourish::synth {

/// Portable seeded generator for fixtures, reproducible bit-for-bit across
/// platforms and reimplementable from this comment alone:
///   - State: xoshiro256++ (Blackman/Vigna). Stream `id` under master `seed`
///     is seeded by four successive outputs of SplitMix64 starting from
///     seed ^ (0x9E3779B97F4A7C15 * (id + 1)).
///   - uniform(): (next_u64() >> 11) * 2^-53, in [0, 1).
///   - normal(): polar Box-Muller. Draw u, v = 2*uniform() - 1 until
///     0 < s = u^2 + v^2 < 1; with m = sqrt(-2 ln(s) / s) return u*m and
///     cache v*m for the next call. The cache never crosses stream or
///     reseed boundaries.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64();
    double uniform();
    double normal();

private:
    std::array<std::uint64_t, 4> s_{};
    double cached_ = 0.0;
    bool has_cached_ = false;
};

std::string synthetic_fips(int county_index);
std::string synthetic_geoid(int county_index, int area_index);

/// Label-stream generation: every (county, area, day, question) cell gets
/// `tweets_per_cell` records with labels drawn i.i.d. from the question's
/// probability 4-vector (enum order: not_present, low, medium, high). Cell
/// streams are independent, so output is reproducible and order-stable.
struct LabelSynthConfig {
    std::uint64_t seed = 1;
    int counties = 50;
    int areas_per_county = 2;
    int days = 10;
    Date start{2020, 1, 1};
    int tweets_per_cell = 1;
    std::vector<std::pair<std::string, std::array<double, 4>>> questions;
};

std::vector<LabelRecord> generate_labels(const LabelSynthConfig& config);

/// Multivariate draws straight from the structural recipe: per case,
/// xi ~ N(0, phi), zeta_j ~ N(0, psi_j), eta_j = beta_j xi + zeta_j, then
/// each observed r = loading_r * (its latent) + N(0, theta_r). Draw order
/// per case: xi, zeta_1..zeta_m, then one residual per observed variable in
/// model order; case i uses stream i.
struct ObservationSynthResult {
    sem::ObservedTable table;
    linalg::Matrix population_covariance;  // exact Sigma(theta*)
};

ObservationSynthResult generate_observations(const sem::ModelSpec& spec,
                                             const sem::ParameterVector& truth, long n_cases,
                                             std::uint64_t seed);

/// Closed-loop fixture: county latents drawn from the model, hazards written
/// as a climate table (affine map of the exogenous indicators), flourishing
/// indicators expressed as tweet label streams whose related-label mean
/// equals the indicator value. County c uses stream 2^48 + c for its latent
/// and indicator draws; tweet cell (c, area, day) uses stream
/// 2^49 + ((c * areas + area) * days + day).
struct PipelineSynthConfig {
    std::uint64_t seed = 1;
    int counties = 200;
    int areas_per_county = 2;
    int days = 5;
    Date start{2022, 1, 1};
    int tweets_per_cell = 6;     // per (area, day, question)
    double related_prob = 0.7;   // P(label != not_present)
    double medium_prob = 0.2;    // P(medium | related), fixed
    double hazard_scale = 60.0;  // climate score = clamp(50 + scale * x, 0, 100)
};

struct PipelineSynthResult {
    std::vector<LabelRecord> records;
    ClimateTable climate;
    std::string truth_json;  // generating parameters with standardized values
};

/// The spec's exogenous indicators must be exactly the six hazard names; its
/// endogenous indicators become the question keys of the label stream.
PipelineSynthResult generate_pipeline(const sem::ModelSpec& spec,
                                      const sem::ParameterVector& truth,
                                      const PipelineSynthConfig& config);

/// Serialized truth manifest shared by both observation modes.
std::string truth_manifest(const sem::ModelSpec& spec, const sem::ParameterVector& truth,
                           std::uint64_t seed, long cases);

/// Deterministic generating parameters scaled for the pipeline fixture:
/// latent values land mostly inside the label-distribution range, hazards
/// inside the score clamp. Loadings cycle over a few distinct values so no
/// two blocks are accidentally identical.
sem::ParameterVector default_truth(const sem::ModelLayout& layout);

/// Overrides entries by engine parameter label (e.g. "swb~climate_risk");
/// unknown labels throw.
void apply_truth_overrides(const sem::ModelLayout& layout, sem::ParameterVector& truth,
                           const std::map<std::string, double>& overrides);

}  // namespace flourish::synth
