#pragma once

// shared helpers for the unit and acceptance suites

#include <cmath>
#include <string>
#include <vector>

#include "ctxlens/attribution.hpp"
#include "ctxlens/model.hpp"
#include "ctxlens/pipeline.hpp"

namespace testsup {

using namespace ctxlens;

inline ModelConfig tiny_config(int layers, int heads, int d_head, int d_ff, int vocab, int max_seq) {
    ModelConfig c;
    c.num_layers = layers;
    c.num_heads = heads;
    c.d_head = d_head;
    c.d_model = heads * d_head;
    c.d_ff = d_ff;
    c.vocab_size = vocab;
    c.max_seq_len = max_seq;
    c.layernorm_epsilon = 1e-5;
    c.stop_id = vocab - 1;
    return c;
}

// all-zero weights; handy for steering argmax through single entries
inline ModelWeights zero_model(const ModelConfig& config) {
    ModelWeights w;
    w.config = config;
    const int d = config.d_model;
    w.token_embedding = Matrix(config.vocab_size, d);
    w.position_embedding = Matrix(config.max_seq_len, d);
    for (int l = 0; l < config.num_layers; ++l) {
        LayerWeights lw;
        lw.attn_ln_gain.assign(d, 0.0);
        lw.attn_ln_bias.assign(d, 0.0);
        for (int h = 0; h < config.num_heads; ++h) {
            lw.w_query.emplace_back(d, config.d_head);
            lw.w_key.emplace_back(d, config.d_head);
            lw.w_value.emplace_back(d, config.d_head);
        }
        lw.attn_out_proj = Matrix(d, d);
        lw.attn_out_bias.assign(d, 0.0);
        lw.mlp_ln_gain.assign(d, 0.0);
        lw.mlp_ln_bias.assign(d, 0.0);
        lw.mlp_in = Matrix(d, config.d_ff);
        lw.mlp_in_bias.assign(config.d_ff, 0.0);
        lw.mlp_out = Matrix(config.d_ff, d);
        lw.mlp_out_bias.assign(d, 0.0);
        w.layers.push_back(std::move(lw));
    }
    w.final_ln_gain.assign(d, 0.0);
    w.final_ln_bias.assign(d, 0.0);
    w.unembedding = Matrix(d, config.vocab_size);
    return w;
}

inline std::vector<int> random_tokens(SeededRng& rng, int len, int vocab) {
    std::vector<int> t(len);
    for (int& x : t) x = rng.uniform_int(0, vocab - 1);
    return t;
}

// largest |row sum - 1| over all heads and layers; also verifies entries lie
// in [0,1] and vanish beyond the diagonal (returns 2 on any violation)
inline double attention_row_error(const TraceBundle& trace) {
    double worst = 0.0;
    for (const auto& layer : trace.layers) {
        for (const auto& head : layer.attention) {
            for (int i = 0; i < trace.n; ++i) {
                double sum = 0.0;
                for (int j = 0; j < trace.n; ++j) {
                    const double a = head(i, j);
                    if (a < 0.0 || a > 1.0) return 2.0;
                    if (j > i && a != 0.0) return 2.0;
                    sum += a;
                }
                worst = std::max(worst, std::abs(sum - 1.0));
            }
        }
    }
    return worst;
}

// largest relative L1 error of sum_j T_i(x_j) + bias against the recorded
// block output, over all layers and positions
inline double decomposition_error(const TraceBundle& trace) {
    double worst = 0.0;
    for (int l = 0; l < static_cast<int>(trace.layers.size()); ++l) {
        const LayerTrace& lt = trace.layers[l];
        for (int i = 0; i < trace.n; ++i) {
            std::vector<double> recon(lt.out_bias);
            for (int j = 0; j <= i; ++j) {
                const std::vector<double> t = trace.transformed_vector(l, i, j);
                for (int k = 0; k < trace.d_model; ++k) recon[k] += t[k];
            }
            double diff = 0.0, ref = 0.0;
            const auto y = lt.block_output.row(i);
            for (int k = 0; k < trace.d_model; ++k) {
                diff += std::abs(recon[k] - y[k]);
                ref += std::abs(y[k]);
            }
            worst = std::max(worst, diff / std::max(ref, 1e-12));
        }
    }
    return worst;
}

// worst |row sum - 1| over the rows of a contribution matrix; returns 2 when
// causality or positivity is violated
inline double contribution_row_error(const Matrix& values) {
    double worst = 0.0;
    for (int i = 0; i < values.rows(); ++i) {
        double sum = 0.0;
        for (int j = 0; j < values.cols(); ++j) {
            const double v = values(i, j);
            if (v < 0.0) return 2.0;
            if (j > i && v != 0.0) return 2.0;
            sum += v;
        }
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    return worst;
}

inline Matrix random_causal_stochastic(SeededRng& rng, int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int j = 0; j <= i; ++j) {
            m(i, j) = rng.uniform01() + 1e-9;
            sum += m(i, j);
        }
        for (int j = 0; j <= i; ++j) m(i, j) /= sum;
    }
    return m;
}

// hand-assembled trace for directed attribution cases; block outputs are
// derived from the pieces so the bundle is internally consistent
struct TraceBuilder {
    TraceBundle trace;

    TraceBuilder(int n, int heads, int d) {
        trace.n = n;
        trace.num_heads = heads;
        trace.d_model = d;
    }

    LayerTrace& add_layer() {
        LayerTrace lt;
        lt.attention.assign(trace.num_heads, Matrix(trace.n, trace.n));
        lt.ln_input = Matrix(trace.n, trace.d_model);
        lt.residual_input = Matrix(trace.n, trace.d_model);
        lt.projected_values.assign(trace.num_heads, Matrix(trace.n, trace.d_model));
        lt.block_output = Matrix(trace.n, trace.d_model);
        lt.out_bias.assign(trace.d_model, 0.0);
        trace.layers.push_back(std::move(lt));
        return trace.layers.back();
    }

    TraceBundle finish() {
        for (int l = 0; l < static_cast<int>(trace.layers.size()); ++l) {
            LayerTrace& lt = trace.layers[l];
            for (int i = 0; i < trace.n; ++i) {
                auto out = lt.block_output.row(i);
                for (int k = 0; k < trace.d_model; ++k) out[k] = lt.out_bias[k];
                for (int j = 0; j <= i; ++j) {
                    const std::vector<double> t = trace.transformed_vector(l, i, j);
                    for (int k = 0; k < trace.d_model; ++k) out[k] += t[k];
                }
            }
        }
        return trace;
    }
};

} // namespace testsup
