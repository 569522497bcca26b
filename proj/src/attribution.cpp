#include "ctxlens/attribution.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace ctxlens {

ContributionMatrix layer_contributions(const TraceBundle& trace, int layer) {
    check_input(layer >= 0 && layer < static_cast<int>(trace.layers.size()),
                "layer_contributions: layer out of range");
    const LayerTrace& lt = trace.layers[layer];
    const int n = trace.n;
    const int d = trace.d_model;

    ContributionMatrix out;
    out.values = Matrix(n, n);
    out.layer = layer;
    out.rolled = false;

    std::vector<double> relevance(n);
    std::vector<double> diff(d);
    for (int i = 0; i < n; ++i) {
        const auto y = lt.block_output.row(i);
        const double y_norm = l1_norm(y);
        double total = 0.0;
        for (int j = 0; j <= i; ++j) {
            const std::vector<double> t = trace.transformed_vector(layer, i, j);
            for (int k = 0; k < d; ++k) diff[k] = y[k] - t[k];
            const double r = y_norm - l1_norm(diff);
            relevance[j] = r > 0.0 ? r : 0.0;
            total += relevance[j];
        }
        if (total > 0.0) {
            for (int j = 0; j <= i; ++j) out.values(i, j) = relevance[j] / total;
        } else {
            // degenerate row: average the heads' attention, already a
            // probability vector over j <= i
            const double inv_heads = 1.0 / trace.num_heads;
            for (int j = 0; j <= i; ++j) {
                double a = 0.0;
                for (int h = 0; h < trace.num_heads; ++h) a += lt.attention[h](i, j);
                out.values(i, j) = a * inv_heads;
            }
        }
    }
    return out;
}

std::vector<ContributionMatrix> all_layer_contributions(const TraceBundle& trace) {
    std::vector<ContributionMatrix> out;
    out.reserve(trace.layers.size());
    for (int l = 0; l < static_cast<int>(trace.layers.size()); ++l)
        out.push_back(layer_contributions(trace, l));
    return out;
}

ContributionMatrix rollout(std::span<const ContributionMatrix> layers) {
    check_input(!layers.empty(), "rollout: empty layer list");
    const int n = layers.front().n();
    for (const auto& c : layers)
        check_input(c.n() == n && c.values.cols() == n, "rollout: dimension mismatch across layers");

    ContributionMatrix result;
    result.values = layers.front().values;
    for (size_t l = 1; l < layers.size(); ++l) {
        const Matrix& next = layers[l].values; // C^{l+1}
        const Matrix& acc = result.values;     // C^l ... C^1
        Matrix product(n, n);
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k <= i; ++k) {
                const double w = next(i, k);
                if (w == 0.0) continue;
                const auto accrow = acc.row(k);
                auto prow = product.row(i);
                for (int j = 0; j <= k; ++j) prow[j] += w * accrow[j];
            }
        }
        result.values = std::move(product);
    }
    result.layer = layers.back().layer;
    result.rolled = true;
    return result;
}

OutputContributionRows output_rows(const ContributionMatrix& rolled, int generated_len) {
    const int n = rolled.n();
    check_input(generated_len >= 1 && generated_len <= n, "output_rows: generated length out of range");
    OutputContributionRows out;
    out.prompt_len = n - generated_len;
    out.generated_len = generated_len;
    out.values = Matrix(generated_len, n);
    for (int t = 0; t < generated_len; ++t) {
        const auto src = rolled.values.row(n - generated_len + t);
        auto dst = out.values.row(t);
        for (int j = 0; j < n; ++j) dst[j] = src[j];
    }
    return out;
}

OutputContributionRows prediction_rows(const ContributionMatrix& rolled, int generated_len) {
    const int n = rolled.n();
    check_input(generated_len >= 1 && generated_len < n,
                "prediction_rows: need a non-empty prompt before the generated tokens");
    OutputContributionRows out;
    out.prompt_len = n - generated_len;
    out.generated_len = generated_len;
    out.values = Matrix(generated_len, n);
    for (int t = 0; t < generated_len; ++t) {
        // token t sits at position S+t and was predicted at position S+t-1
        const auto src = rolled.values.row(out.prompt_len + t - 1);
        auto dst = out.values.row(t);
        for (int j = 0; j < n; ++j) dst[j] = src[j];
    }
    return out;
}

void write_matrix_csv(std::ostream& out, const Matrix& m) {
    char buf[40];
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
            out << buf;
            out << (j + 1 == m.cols() ? '\n' : ',');
        }
    }
}

} // namespace ctxlens
