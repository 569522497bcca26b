#include "ctxlens/model.hpp"

#include <algorithm>
#include <cmath>

namespace ctxlens {

void ModelConfig::validate() const {
    check_input(num_layers > 0, "model config: num_layers must be positive");
    check_input(num_heads > 0, "model config: num_heads must be positive");
    check_input(d_model > 0, "model config: d_model must be positive");
    check_input(d_head > 0, "model config: d_head must be positive");
    check_input(d_ff > 0, "model config: d_ff must be positive");
    check_input(num_heads * d_head == d_model, "model config: num_heads * d_head must equal d_model");
    check_input(vocab_size >= 2, "model config: vocab_size must be at least 2");
    check_input(max_seq_len >= 1, "model config: max_seq_len must be at least 1");
    check_input(layernorm_epsilon > 0.0, "model config: layernorm_epsilon must be positive");
    check_input(stop_id < vocab_size, "model config: stop_id out of vocabulary");
    check_input(bos_id < vocab_size, "model config: bos_id out of vocabulary");
}

namespace {

bool all_finite(const Matrix& m) {
    for (double x : m.data())
        if (!std::isfinite(x)) return false;
    return true;
}

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

void check_dims(const Matrix& m, int rows, int cols, const std::string& name) {
    check_input(m.rows() == rows && m.cols() == cols, "model weights: bad shape for " + name);
    check_input(all_finite(m), "model weights: non-finite entries in " + name);
}

void check_len(const std::vector<double>& v, int len, const std::string& name) {
    check_input(static_cast<int>(v.size()) == len, "model weights: bad length for " + name);
    check_input(all_finite(v), "model weights: non-finite entries in " + name);
}

void layernorm(std::span<const double> x, std::span<const double> gain, std::span<const double> bias,
               double eps, std::span<double> out) {
    const int d = static_cast<int>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= d;
    double var = 0.0;
    for (double v : x) {
        const double c = v - mean;
        var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < d; ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
}

double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

// y = x * W with x a row vector (len = W.rows()).
void row_times_matrix(std::span<const double> x, const Matrix& w, std::span<double> y) {
    const int in = w.rows();
    const int out = w.cols();
    std::fill(y.begin(), y.end(), 0.0);
    for (int i = 0; i < in; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* wrow = w.row(i).data();
        for (int o = 0; o < out; ++o) y[o] += xi * wrow[o];
    }
}

} // namespace

void ModelWeights::validate() const {
    config.validate();
    const int d = config.d_model;
    check_dims(token_embedding, config.vocab_size, d, "token_embedding");
    check_dims(position_embedding, config.max_seq_len, d, "position_embedding");
    check_input(static_cast<int>(layers.size()) == config.num_layers, "model weights: layer count mismatch");
    for (size_t l = 0; l < layers.size(); ++l) {
        const auto& lw = layers[l];
        const std::string tag = "layers." + std::to_string(l) + ".";
        check_len(lw.attn_ln_gain, d, tag + "attn_ln_gain");
        check_len(lw.attn_ln_bias, d, tag + "attn_ln_bias");
        check_input(static_cast<int>(lw.w_query.size()) == config.num_heads &&
                        static_cast<int>(lw.w_key.size()) == config.num_heads &&
                        static_cast<int>(lw.w_value.size()) == config.num_heads,
                    "model weights: head count mismatch in " + tag);
        for (int h = 0; h < config.num_heads; ++h) {
            const std::string head = tag + "heads." + std::to_string(h) + ".";
            check_dims(lw.w_query[h], d, config.d_head, head + "w_query");
            check_dims(lw.w_key[h], d, config.d_head, head + "w_key");
            check_dims(lw.w_value[h], d, config.d_head, head + "w_value");
        }
        check_dims(lw.attn_out_proj, d, d, tag + "attn_out_proj");
        check_len(lw.attn_out_bias, d, tag + "attn_out_bias");
        check_len(lw.mlp_ln_gain, d, tag + "mlp_ln_gain");
        check_len(lw.mlp_ln_bias, d, tag + "mlp_ln_bias");
        check_dims(lw.mlp_in, d, config.d_ff, tag + "mlp_in");
        check_len(lw.mlp_in_bias, config.d_ff, tag + "mlp_in_bias");
        check_dims(lw.mlp_out, config.d_ff, d, tag + "mlp_out");
        check_len(lw.mlp_out_bias, d, tag + "mlp_out_bias");
    }
    check_len(final_ln_gain, d, "final_ln_gain");
    check_len(final_ln_bias, d, "final_ln_bias");
    check_dims(unembedding, d, config.vocab_size, "unembedding");
}

std::vector<double> TraceBundle::transformed_vector(int layer, int i, int j) const {
    check_input(layer >= 0 && layer < static_cast<int>(layers.size()), "trace: layer out of range");
    check_input(i >= 0 && i < n && j >= 0 && j < n, "trace: position out of range");
    const LayerTrace& lt = layers[layer];
    std::vector<double> t(d_model, 0.0);
    if (j > i) return t; // causal: no flow from later positions
    for (int h = 0; h < num_heads; ++h) {
        const double a = lt.attention[h](i, j);
        if (a == 0.0) continue;
        const auto pv = lt.projected_values[h].row(j);
        for (int k = 0; k < d_model; ++k) t[k] += a * pv[k];
    }
    if (i == j) {
        const auto res = lt.residual_input.row(i);
        for (int k = 0; k < d_model; ++k) t[k] += res[k];
    }
    return t;
}

ForwardResult forward_trace(const ModelWeights& weights, std::span<const int> tokens) {
    const ModelConfig& cfg = weights.config;
    const int n = static_cast<int>(tokens.size());
    check_input(n >= 1, "forward: empty token sequence");
    check_input(n <= cfg.max_seq_len, "forward: sequence longer than max_seq_len");
    for (int t : tokens)
        check_input(t >= 0 && t < cfg.vocab_size, "forward: token id out of range");

    const int d = cfg.d_model;
    const int dh = cfg.d_head;
    const int heads = cfg.num_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    ForwardResult result;
    result.trace.n = n;
    result.trace.num_heads = heads;
    result.trace.d_model = d;
    result.trace.layers.reserve(cfg.num_layers);

    Matrix x(n, d);
    for (int i = 0; i < n; ++i) {
        const auto emb = weights.token_embedding.row(tokens[i]);
        const auto pos = weights.position_embedding.row(i);
        auto xi = x.row(i);
        for (int k = 0; k < d; ++k) xi[k] = emb[k] + pos[k];
    }

    std::vector<double> q(dh), kvec(dh), scores;
    for (int l = 0; l < cfg.num_layers; ++l) {
        const LayerWeights& lw = weights.layers[l];
        LayerTrace lt;
        lt.residual_input = x;
        lt.ln_input = Matrix(n, d);
        for (int i = 0; i < n; ++i)
            layernorm(x.row(i), lw.attn_ln_gain, lw.attn_ln_bias, cfg.layernorm_epsilon, lt.ln_input.row(i));

        lt.attention.assign(heads, Matrix(n, n));
        lt.projected_values.assign(heads, Matrix(n, d));
        for (int h = 0; h < heads; ++h) {
            // keys and values for the head, plus values already pushed through
            // the head's slice of the output projection
            Matrix keys(n, dh), values(n, dh);
            for (int j = 0; j < n; ++j) {
                row_times_matrix(lt.ln_input.row(j), lw.w_key[h], keys.row(j));
                row_times_matrix(lt.ln_input.row(j), lw.w_value[h], values.row(j));
            }
            Matrix& proj = lt.projected_values[h];
            for (int j = 0; j < n; ++j) {
                auto pj = proj.row(j);
                const auto vj = values.row(j);
                for (int r = 0; r < dh; ++r) {
                    const double vr = vj[r];
                    if (vr == 0.0) continue;
                    const double* wrow = lw.attn_out_proj.row(h * dh + r).data();
                    for (int c = 0; c < d; ++c) pj[c] += vr * wrow[c];
                }
            }
            Matrix& attn = lt.attention[h];
            for (int i = 0; i < n; ++i) {
                row_times_matrix(lt.ln_input.row(i), lw.w_query[h], q);
                scores.assign(i + 1, 0.0);
                for (int j = 0; j <= i; ++j) {
                    double dot = 0.0;
                    const auto kj = keys.row(j);
                    for (int r = 0; r < dh; ++r) dot += q[r] * kj[r];
                    scores[j] = dot * scale;
                }
                double mx = scores[0];
                for (int j = 1; j <= i; ++j) mx = std::max(mx, scores[j]);
                double sum = 0.0;
                for (int j = 0; j <= i; ++j) {
                    scores[j] = std::exp(scores[j] - mx);
                    sum += scores[j];
                }
                for (int j = 0; j <= i; ++j) attn(i, j) = scores[j] / sum;
            }
        }

        // attention sub-block output through the per-source decomposition
        lt.out_bias = lw.attn_out_bias;
        lt.block_output = Matrix(n, d);
        for (int i = 0; i < n; ++i) {
            auto out = lt.block_output.row(i);
            const auto res = x.row(i);
            for (int k = 0; k < d; ++k) out[k] = res[k] + lw.attn_out_bias[k];
            for (int h = 0; h < heads; ++h) {
                const Matrix& attn = lt.attention[h];
                const Matrix& proj = lt.projected_values[h];
                for (int j = 0; j <= i; ++j) {
                    const double a = attn(i, j);
                    if (a == 0.0) continue;
                    const auto pj = proj.row(j);
                    for (int k = 0; k < d; ++k) out[k] += a * pj[k];
                }
            }
        }
        x = lt.block_output;

        // MLP sub-block: per-position only, no cross-token mixing
        std::vector<double> ln2(d), hidden(cfg.d_ff), mlp(d);
        for (int i = 0; i < n; ++i) {
            layernorm(x.row(i), lw.mlp_ln_gain, lw.mlp_ln_bias, cfg.layernorm_epsilon, ln2);
            row_times_matrix(ln2, lw.mlp_in, hidden);
            for (int k = 0; k < cfg.d_ff; ++k) hidden[k] = gelu(hidden[k] + lw.mlp_in_bias[k]);
            row_times_matrix(hidden, lw.mlp_out, mlp);
            auto xi = x.row(i);
            for (int k = 0; k < d; ++k) xi[k] += mlp[k] + lw.mlp_out_bias[k];
        }

        result.trace.layers.push_back(std::move(lt));
    }

    result.logits = Matrix(n, cfg.vocab_size);
    std::vector<double> lnf(d);
    for (int i = 0; i < n; ++i) {
        layernorm(x.row(i), weights.final_ln_gain, weights.final_ln_bias, cfg.layernorm_epsilon, lnf);
        row_times_matrix(lnf, weights.unembedding, result.logits.row(i));
    }
    return result;
}

namespace {

int argmax_lowest_id(std::span<const double> logits) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i)
        if (logits[i] > logits[best]) best = i;
    return best;
}

} // namespace

GenerateResult greedy_generate(const ModelWeights& weights, std::span<const int> prompt,
                               int max_new, std::span<const int> stop_ids) {
    const ModelConfig& cfg = weights.config;
    check_input(!prompt.empty(), "generate: empty prompt");
    check_input(max_new >= 1, "generate: max_new must be at least 1");
    check_input(static_cast<int>(prompt.size()) + max_new <= cfg.max_seq_len,
                "generate: prompt plus max_new exceeds max_seq_len");

    std::vector<int> sequence(prompt.begin(), prompt.end());
    GenerateResult result;
    for (int step = 0; step < max_new; ++step) {
        ForwardResult fwd = forward_trace(weights, sequence);
        const int next = argmax_lowest_id(fwd.logits.row(static_cast<int>(sequence.size()) - 1));
        sequence.push_back(next);
        result.generated.push_back(next);
        if (std::find(stop_ids.begin(), stop_ids.end(), next) != stop_ids.end()) break;
    }
    result.trace = forward_trace(weights, sequence).trace;
    return result;
}

std::vector<int> encode_bytes(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    return ids;
}

std::string decode_bytes(std::span<const int> ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids)
        if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
    return out;
}

} // namespace ctxlens
