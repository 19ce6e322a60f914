#include "flourish/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "flourish/csv.hpp"
#include "flourish/datamodel.hpp"
#include "flourish/kernels.hpp"
#include "flourish/parallel.hpp"
#include <nlohmann/json.hpp>

namespace flourish {

std::vector<double> FactorScoreTable::column(const std::string& latent) const {
    auto it = std::find(latents.begin(), latents.end(), latent);
    if (it == latents.end()) throw PipelineError("score table: no latent '" + latent + "'");
    const std::size_t j = static_cast<std::size_t>(it - latents.begin());
    std::vector<double> out(counties.size());
    for (std::size_t i = 0; i < counties.size(); ++i) out[i] = values(i, j);
    return out;
}

linalg::Matrix latent_observed_covariance(const sem::ModelLayout& layout,
                                          const sem::ParameterVector& theta) {
    const auto a = sem::latent_covariance(layout, theta);
    linalg::Matrix lo(layout.n_latent(), layout.n_observed());
    for (std::size_t i = 0; i < layout.n_latent(); ++i) {
        for (std::size_t r = 0; r < layout.n_observed(); ++r) {
            lo(i, r) = theta.loading[r] * a(i, layout.latent_of[r]);
        }
    }
    return lo;
}

FactorScoreTable factor_scores(const sem::FitResult& fit, const sem::ObservedTable& data,
                               const ScoreOptions& options) {
    const auto& layout = fit.layout;
    const std::size_t p = layout.n_observed();
    const std::size_t q = layout.n_latent();
    if (data.variables != layout.observed) {
        throw PipelineError("factor scores: data columns do not match the fitted model");
    }

    FactorScoreTable table;
    table.latents = layout.latents;
    std::vector<std::size_t> complete;
    for (std::size_t i = 0; i < data.values.rows(); ++i) {
        const double* row = data.values.row(i);
        if (std::any_of(row, row + p, [](double v) { return std::isnan(v); })) {
            table.excluded.push_back(data.cases[i]);
        } else {
            complete.push_back(i);
            table.counties.push_back(data.cases[i]);
        }
    }
    const std::size_t n = complete.size();
    if (n == 0) throw PipelineError("factor scores: no listwise-complete cases");

    const auto& k = kernels::active();
    std::vector<double> mean(p, 0.0);
    for (std::size_t j = 0; j < p; ++j) {
        // column gather keeps the summation order fixed regardless of layout
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = data.values(complete[i], j);
        mean[j] = k.sum(col.data(), n) / static_cast<double>(n);
    }

    // weight matrix B (latents by observed), method dependent
    linalg::Matrix b(q, p);
    if (options.method == ScoreMethod::Regression) {
        const auto sigma = sem::implied_covariance(layout, fit.theta);
        auto chol = linalg::cholesky(sigma);
        if (!chol.ok) throw PipelineError("factor scores: implied covariance not PD");
        const auto lo = latent_observed_covariance(layout, fit.theta);
        const auto bt = linalg::cholesky_solve(chol, linalg::transpose(lo));  // p x q
        b = linalg::transpose(bt);
    } else {
        // Bartlett: (L^T Th^-1 L)^-1 L^T Th^-1
        linalg::Matrix lt_thinv(q, p);  // L^T Th^-1
        for (std::size_t r = 0; r < p; ++r) {
            const double th = fit.theta.measurement_residual[r];
            if (!(th > 0.0)) {
                throw PipelineError("factor scores: Bartlett needs positive residual variances");
            }
            lt_thinv(layout.latent_of[r], r) = fit.theta.loading[r] / th;
        }
        linalg::Matrix m(q, q);  // L^T Th^-1 L
        for (std::size_t r = 0; r < p; ++r) {
            const std::size_t c = layout.latent_of[r];
            m(c, c) += lt_thinv(c, r) * fit.theta.loading[r];
        }
        auto chol = linalg::cholesky(m);
        if (!chol.ok) {
            throw PipelineError("factor scores: Bartlett weight matrix is singular");
        }
        b = linalg::cholesky_solve(chol, lt_thinv);
    }

    table.values = linalg::Matrix(n, q);
    parallel_for(n, options.threads, [&](std::size_t i) {
        std::vector<double> centered(p);
        const double* row = data.values.row(complete[i]);
        for (std::size_t j = 0; j < p; ++j) centered[j] = row[j] - mean[j];
        for (std::size_t l = 0; l < q; ++l) {
            table.values(i, l) = k.dot(b.row(l), centered.data(), p);
        }
    });
    return table;
}

std::vector<std::string> export_order(const sem::FitResult& fit) {
    const auto& layout = fit.layout;
    std::vector<double> abs_path(layout.n_endogenous, 0.0);
    for (const auto& row : fit.table) {
        if (row.kind != sem::ParamKind::Path) continue;
        for (std::size_t j = 0; j < layout.n_endogenous; ++j) {
            if (row.label == layout.latents[1 + j] + "~" + layout.latents[0]) {
                abs_path[j] = std::abs(row.standardized);
            }
        }
    }
    std::vector<std::size_t> order(layout.n_endogenous);
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return abs_path[a] > abs_path[b]; });

    std::vector<std::string> names{layout.latents[0]};
    for (std::size_t j : order) names.push_back(layout.latents[1 + j]);
    return names;
}

void write_scores(std::ostream& out, const FactorScoreTable& table,
                  const std::vector<std::string>& column_order) {
    std::vector<std::size_t> cols;
    for (const auto& name : column_order) {
        auto it = std::find(table.latents.begin(), table.latents.end(), name);
        if (it == table.latents.end()) {
            throw PipelineError("score export: no latent '" + name + "'");
        }
        cols.push_back(static_cast<std::size_t>(it - table.latents.begin()));
    }
    out << "fips";
    for (const auto& name : column_order) out << "," << name;
    out << "\n";
    for (std::size_t i = 0; i < table.counties.size(); ++i) {
        out << table.counties[i];
        for (std::size_t j : cols) out << "," << csv::format_fixed6(table.values(i, j));
        out << "\n";
    }
}

FactorScoreTable read_scores(std::istream& in) {
    csv::Reader reader(in);
    auto header = reader.next();
    if (!header) throw PipelineError("score input: empty source");
    if (header->size() < 2 || (*header)[0] != "fips") {
        throw PipelineError("score input: expected 'fips' plus at least one latent column");
    }
    FactorScoreTable table;
    table.latents.assign(header->begin() + 1, header->end());

    std::vector<std::vector<double>> rows;
    while (auto row = reader.next()) {
        if (row->size() != header->size()) {
            throw PipelineError("score input: wrong field count at line " +
                                std::to_string(reader.line()));
        }
        table.counties.push_back((*row)[0]);
        std::vector<double> values;
        for (std::size_t j = 1; j < row->size(); ++j) {
            auto v = csv::parse_double((*row)[j]);
            if (!v) throw PipelineError("score input: unparsable value '" + (*row)[j] + "'");
            values.push_back(*v);
        }
        rows.push_back(std::move(values));
    }
    table.values = linalg::Matrix(rows.size(), table.latents.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < table.latents.size(); ++j) table.values(i, j) = rows[i][j];
    }
    return table;
}

namespace {

std::string feature_key(const nlohmann::ordered_json& value) {
    if (value.is_string()) return value.get<std::string>();
    if (value.is_number_integer()) {
        std::string s = std::to_string(value.get<long long>());
        while (s.size() < 5) s.insert(s.begin(), '0');
        return s;
    }
    return {};
}

}  // namespace

GeoJoin geojson_join(const std::string& geojson_text, const FactorScoreTable& table,
                     const std::vector<std::string>& column_order,
                     const std::string& key_property) {
    nlohmann::ordered_json doc;
    try {
        doc = nlohmann::ordered_json::parse(geojson_text);
    } catch (const nlohmann::json::exception& e) {
        throw PipelineError(std::string("geometry: invalid JSON: ") + e.what());
    }
    if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" ||
        !doc.contains("features") || !doc["features"].is_array()) {
        throw PipelineError("geometry: expected a GeoJSON FeatureCollection");
    }
    std::vector<std::size_t> cols;
    for (const auto& name : column_order) {
        auto it = std::find(table.latents.begin(), table.latents.end(), name);
        if (it == table.latents.end()) {
            throw PipelineError("geometry join: no latent '" + name + "'");
        }
        cols.push_back(static_cast<std::size_t>(it - table.latents.begin()));
    }
    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < table.counties.size(); ++i) row_of[table.counties[i]] = i;

    GeoJoin join;
    for (auto& feature : doc["features"]) {
        if (!feature.is_object() || !feature.contains("properties") ||
            !feature["properties"].is_object()) {
            ++join.gaps;
            continue;
        }
        auto& props = feature["properties"];
        const std::string key =
            props.contains(key_property) ? feature_key(props[key_property]) : std::string{};
        auto it = row_of.find(key);
        if (it == row_of.end()) {
            ++join.gaps;
            continue;
        }
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const double v = table.values(it->second, cols[c]);
            props[column_order[c]] = std::round(v * 1e6) / 1e6;
        }
        ++join.matched;
    }
    join.text = doc.dump(2);
    join.text += "\n";
    return join;
}

}  // namespace flourish
