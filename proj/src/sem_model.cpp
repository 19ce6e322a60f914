#include "flourish/sem/model.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "flourish/datamodel.hpp"

namespace flourish::sem {

namespace {

std::vector<std::string> tokenize(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

struct RawBlock {
    LatentBlock block;
    bool first_freed = false;
    std::string pinned;  // indicator named by a =1@ token, if any
};

RawBlock parse_measurement(const std::vector<std::string>& tokens, long line_no) {
    RawBlock raw;
    raw.block.name = tokens[0];
    for (std::size_t i = 2; i < tokens.size(); ++i) {
        const std::string& tok = tokens[i];
        if (tok.rfind("=1@", 0) == 0) {
            if (!raw.pinned.empty()) {
                throw PipelineError("model spec line " + std::to_string(line_no) +
                                    ": more than one =1@ marker");
            }
            raw.pinned = tok.substr(3);
            if (raw.pinned.empty()) {
                throw PipelineError("model spec line " + std::to_string(line_no) +
                                    ": =1@ marker names no indicator");
            }
            continue;
        }
        std::string name = tok;
        bool freed = false;
        if (name.size() > 5 && name.compare(name.size() - 5, 5, "*free") == 0) {
            name.resize(name.size() - 5);
            freed = true;
        }
        if (freed && !raw.block.indicators.empty()) {
            throw PipelineError("model spec line " + std::to_string(line_no) +
                                ": *free only applies to the first indicator");
        }
        if (freed) raw.first_freed = true;
        raw.block.indicators.push_back(name);
    }
    if (raw.block.indicators.empty()) {
        throw PipelineError("model spec line " + std::to_string(line_no) + ": latent '" +
                            raw.block.name + "' has no indicators");
    }
    if (raw.first_freed && raw.pinned.empty()) {
        throw PipelineError("model spec line " + std::to_string(line_no) +
                            ": *free requires a =1@ marker naming the reference");
    }
    if (!raw.pinned.empty()) {
        auto it = std::find(raw.block.indicators.begin(), raw.block.indicators.end(), raw.pinned);
        if (it == raw.block.indicators.end()) {
            throw PipelineError("model spec line " + std::to_string(line_no) + ": =1@" +
                                raw.pinned + " names an indicator not in the block");
        }
        raw.block.reference = static_cast<std::size_t>(it - raw.block.indicators.begin());
        if (raw.first_freed && raw.block.reference == 0) {
            throw PipelineError("model spec line " + std::to_string(line_no) +
                                ": first indicator is marked *free but also pinned by =1@");
        }
    } else {
        raw.block.reference = 0;
    }
    return raw;
}

}  // namespace

ModelSpec ModelSpec::parse_stream(std::istream& in) {
    std::vector<RawBlock> blocks;
    std::vector<std::pair<std::string, std::string>> paths;  // target, predictor
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        auto tokens = tokenize(line);
        if (tokens.empty()) continue;
        if (tokens.size() >= 2 && tokens[1] == "=~") {
            blocks.push_back(parse_measurement(tokens, line_no));
        } else if (tokens.size() == 3 && tokens[1] == "~") {
            paths.emplace_back(tokens[0], tokens[2]);
        } else {
            throw PipelineError("model spec line " + std::to_string(line_no) +
                                ": expected 'latent =~ indicators...' or 'latent ~ predictor'");
        }
    }
    if (blocks.empty()) throw PipelineError("model spec: no measurement blocks");

    std::map<std::string, std::size_t> block_of;
    std::set<std::string> seen_indicators;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (!block_of.emplace(blocks[b].block.name, b).second) {
            throw PipelineError("model spec: latent '" + blocks[b].block.name +
                                "' declared twice");
        }
        for (const auto& ind : blocks[b].block.indicators) {
            if (!seen_indicators.insert(ind).second) {
                throw PipelineError("model spec: indicator '" + ind +
                                    "' assigned to more than one latent");
            }
        }
    }

    std::string predictor;
    std::map<std::string, int> inbound;
    for (const auto& [target, pred] : paths) {
        if (!block_of.count(target)) {
            throw PipelineError("model spec: path target '" + target + "' is not a latent");
        }
        if (!block_of.count(pred)) {
            throw PipelineError("model spec: path predictor '" + pred + "' is not a latent");
        }
        if (predictor.empty()) {
            predictor = pred;
        } else if (predictor != pred) {
            throw PipelineError("model spec: multiple predictors ('" + predictor + "', '" + pred +
                                "'); a single exogenous latent is required");
        }
        if (++inbound[target] > 1) {
            throw PipelineError("model spec: latent '" + target + "' has more than one path");
        }
    }

    if (paths.empty()) {
        if (blocks.size() != 1) {
            throw PipelineError(
                "model spec: multiple latents but no paths; declare one predictor latent");
        }
        ModelSpec spec;
        spec.exogenous = blocks[0].block;
        return spec;
    }

    if (inbound.count(predictor)) {
        throw PipelineError("model spec: predictor latent '" + predictor +
                            "' cannot also receive a path");
    }
    ModelSpec spec;
    spec.exogenous = blocks[block_of[predictor]].block;
    for (const auto& raw : blocks) {
        if (raw.block.name == predictor) continue;
        if (!inbound.count(raw.block.name)) {
            throw PipelineError("model spec: latent '" + raw.block.name +
                                "' has no inbound path and is not the predictor");
        }
        spec.endogenous.push_back(raw.block);
    }
    return spec;
}

ModelSpec ModelSpec::parse(const std::string& text) {
    std::istringstream in(text);
    return parse_stream(in);
}

ModelSpec ModelSpec::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PipelineError("model spec: cannot open '" + path + "'");
    return parse_stream(in);
}

std::vector<std::string> ModelSpec::observed_order() const {
    std::vector<std::string> order = exogenous.indicators;
    for (const auto& block : endogenous) {
        order.insert(order.end(), block.indicators.begin(), block.indicators.end());
    }
    return order;
}

std::size_t ModelSpec::n_observed() const {
    std::size_t n = exogenous.indicators.size();
    for (const auto& block : endogenous) n += block.indicators.size();
    return n;
}

std::size_t ModelSpec::free_parameter_count() const {
    const std::size_t p = n_observed();
    const std::size_t latents = 1 + endogenous.size();
    // (loadings - one reference each) + paths + exogenous variance
    // + latent residuals + measurement residuals
    return (p - latents) + endogenous.size() + 1 + endogenous.size() + p;
}

long ModelSpec::degrees_of_freedom() const {
    const long p = static_cast<long>(n_observed());
    return p * (p + 1) / 2 - static_cast<long>(free_parameter_count());
}

ModelLayout ModelLayout::from_spec(const ModelSpec& spec) {
    ModelLayout layout;
    layout.n_endogenous = spec.endogenous.size();
    layout.latents.push_back(spec.exogenous.name);
    for (const auto& block : spec.endogenous) layout.latents.push_back(block.name);

    auto add_block = [&](const LatentBlock& block, std::size_t latent) {
        for (std::size_t i = 0; i < block.indicators.size(); ++i) {
            layout.observed.push_back(block.indicators[i]);
            layout.latent_of.push_back(latent);
            layout.fixed_loading.push_back(i == block.reference);
        }
    };
    add_block(spec.exogenous, 0);
    for (std::size_t j = 0; j < spec.endogenous.size(); ++j) {
        add_block(spec.endogenous[j], 1 + j);
    }

    for (std::size_t r = 0; r < layout.observed.size(); ++r) {
        if (layout.fixed_loading[r]) continue;
        layout.params.push_back({ParamKind::Loading, r, layout.latent_of[r],
                                 layout.latents[layout.latent_of[r]] + "=~" +
                                     layout.observed[r]});
    }
    for (std::size_t j = 0; j < layout.n_endogenous; ++j) {
        layout.params.push_back(
            {ParamKind::Path, j, 1 + j, layout.latents[1 + j] + "~" + layout.latents[0]});
    }
    layout.params.push_back(
        {ParamKind::LatentVariance, 0, 0, layout.latents[0] + "~~" + layout.latents[0]});
    for (std::size_t j = 0; j < layout.n_endogenous; ++j) {
        layout.params.push_back({ParamKind::LatentResidual, j, 1 + j,
                                 layout.latents[1 + j] + "~~" + layout.latents[1 + j]});
    }
    for (std::size_t r = 0; r < layout.observed.size(); ++r) {
        layout.params.push_back({ParamKind::MeasurementResidual, r, 0,
                                 layout.observed[r] + "~~" + layout.observed[r]});
    }
    return layout;
}

long ModelLayout::degrees_of_freedom() const {
    const long p = static_cast<long>(observed.size());
    return p * (p + 1) / 2 - static_cast<long>(params.size());
}

std::optional<std::size_t> ModelLayout::observed_index(const std::string& name) const {
    auto it = std::find(observed.begin(), observed.end(), name);
    if (it == observed.end()) return std::nullopt;
    return static_cast<std::size_t>(it - observed.begin());
}

}  // namespace flourish::sem
