#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace flourish::sem {

/// One latent with its measurement block. `reference` indexes the indicator
/// whose loading is fixed to 1 to set the latent's scale.
struct LatentBlock {
    std::string name;
    std::vector<std::string> indicators;
    std::size_t reference = 0;
};

/// Confirmatory model: one exogenous latent, any number of endogenous latents
/// each regressed on it, simple structure (every indicator loads on exactly
/// one latent, no cross-loadings, no endogenous-to-endogenous paths).
///
/// Text format, line oriented:
///   latent =~ ind1 ind2 ind3     measurement block; first indicator is the
///                                reference unless it is suffixed `*free`, in
///                                which case a `=1@ind` token must name one
///   latent ~ predictor           structural path onto the exogenous latent
///   # comment                    (also allowed after content on a line)
struct ModelSpec {
    LatentBlock exogenous;
    std::vector<LatentBlock> endogenous;  // declaration order

    static ModelSpec parse(const std::string& text);
    static ModelSpec parse_stream(std::istream& in);
    static ModelSpec load(const std::string& path);

    /// Exogenous indicators first, then endogenous blocks in declaration
    /// order. This is the row/column order of every matrix downstream.
    std::vector<std::string> observed_order() const;

    std::size_t n_observed() const;
    std::size_t n_endogenous() const { return endogenous.size(); }

    /// Free parameters: non-reference loadings + one path per endogenous
    /// latent + exogenous variance + endogenous residual variances +
    /// measurement residual variances.
    std::size_t free_parameter_count() const;
    long degrees_of_freedom() const;  // p(p+1)/2 - free parameters
};

enum class ParamKind { Loading, Path, LatentVariance, LatentResidual, MeasurementResidual };

/// Handle for one model parameter. `row` is the observed-variable index for
/// Loading/MeasurementResidual and the endogenous index for
/// Path/LatentResidual; `latent` is the latent column (0 = exogenous,
/// 1 + j = endogenous j) for Loading.
struct ParamRef {
    ParamKind kind = ParamKind::Loading;
    std::size_t row = 0;
    std::size_t latent = 0;
    std::string label;
};

/// Flattened view of a ModelSpec used by the estimation engine: per observed
/// variable, its latent column and whether its loading is fixed, plus the
/// free-parameter packing order. Packing order is fixed and documented:
/// free loadings (exogenous block first, then endogenous blocks in
/// declaration order), then paths, then the exogenous variance, then latent
/// residual variances, then measurement residual variances in observed order.
struct ModelLayout {
    std::vector<std::string> observed;      // model order
    std::vector<std::string> latents;       // exogenous name then endogenous names
    std::vector<std::size_t> latent_of;     // latent column per observed variable
    std::vector<bool> fixed_loading;        // reference indicators
    std::size_t n_endogenous = 0;
    std::vector<ParamRef> params;           // free parameters, packing order

    static ModelLayout from_spec(const ModelSpec& spec);

    std::size_t n_observed() const { return observed.size(); }
    std::size_t n_latent() const { return 1 + n_endogenous; }
    long degrees_of_freedom() const;
    std::optional<std::size_t> observed_index(const std::string& name) const;
};

}  // namespace flourish::sem
