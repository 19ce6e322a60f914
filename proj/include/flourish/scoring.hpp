#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "flourish/linalg.hpp"
#include "flourish/sem/engine.hpp"

namespace flourish {

/// Per-county latent scores: one row per listwise-complete county, one column
/// per latent in `latents` order.
struct FactorScoreTable {
    std::vector<std::string> counties;
    std::vector<std::string> latents;
    linalg::Matrix values;
    std::vector<std::string> excluded;  // counties dropped for missing cells

    std::vector<double> column(const std::string& latent) const;
};

enum class ScoreMethod {
    Regression,  // Sigma_lo Sigma^-1 (z - mean); shrunk, always defined
    Bartlett,    // (L^T Th^-1 L)^-1 L^T Th^-1 (z - mean); unbiased, needs Th > 0
};

struct ScoreOptions {
    ScoreMethod method = ScoreMethod::Regression;
    unsigned threads = 1;
};

/// Scores every listwise-complete case in `data` (columns must match the
/// fitted model's observed variables, in order). Centering uses the complete
/// cases' own means, so a case at the sample mean scores zero everywhere.
FactorScoreTable factor_scores(const sem::FitResult& fit, const sem::ObservedTable& data,
                               const ScoreOptions& options = {});

/// Model-implied latent-observed covariance A L^T (latents by observed).
linalg::Matrix latent_observed_covariance(const sem::ModelLayout& layout,
                                          const sem::ParameterVector& theta);

/// Export column order: exogenous latent first, then endogenous latents by
/// descending absolute standardized path, ties in declaration order.
std::vector<std::string> export_order(const sem::FitResult& fit);

/// `fips,<latent...>` with 6-decimal values, columns in `column_order`.
void write_scores(std::ostream& out, const FactorScoreTable& table,
                  const std::vector<std::string>& column_order);

FactorScoreTable read_scores(std::istream& in);

struct GeoJoin {
    std::string text;   // serialized FeatureCollection
    long matched = 0;
    long gaps = 0;      // features whose key has no score row
};

/// Joins scores onto a GeoJSON FeatureCollection as numeric properties named
/// by latent (values rounded to 6 decimals, matching the delimited export).
/// Features without a matching county keep their properties untouched and are
/// counted as gaps. `key_property` names the feature property holding the
/// county FIPS (numeric values are zero-padded to five digits).
GeoJoin geojson_join(const std::string& geojson_text, const FactorScoreTable& table,
                     const std::vector<std::string>& column_order,
                     const std::string& key_property = "GEOID");

}  // namespace flourish
