#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxlens/common.hpp"

namespace ctxlens {

// Minimal decoder-only transformer, double precision throughout. Blocks are
// pre-layernorm: attention sub-block with residual, then MLP sub-block with
// residual. Positions are learned absolute embeddings added at the input.
// Token ids 0..255 are raw bytes; ids at or above 256 are reserved specials
// declared in the config (stop_id, optional bos_id).
//
// Loaded weights are immutable and safe to share across threads; every
// forward or generate call owns its trace state.

struct ModelConfig {
    int num_layers = 0;
    int num_heads = 0;
    int d_model = 0;
    int d_head = 0;
    int d_ff = 0;
    int vocab_size = 0;
    int max_seq_len = 0;
    double layernorm_epsilon = 1e-5;
    int stop_id = -1; // reserved stop token, -1 if unset
    int bos_id = -1;  // optional sequence-start token, -1 disables

    void validate() const; // throws InputError on inconsistent dimensions
};

struct LayerWeights {
    std::vector<double> attn_ln_gain, attn_ln_bias; // d_model
    std::vector<Matrix> w_query;                    // per head, d_model x d_head
    std::vector<Matrix> w_key;
    std::vector<Matrix> w_value;
    Matrix attn_out_proj;                           // d_model x d_model
    std::vector<double> attn_out_bias;              // d_model
    std::vector<double> mlp_ln_gain, mlp_ln_bias;   // d_model
    Matrix mlp_in;                                  // d_model x d_ff
    std::vector<double> mlp_in_bias;                // d_ff
    Matrix mlp_out;                                 // d_ff x d_model
    std::vector<double> mlp_out_bias;               // d_model
};

struct ModelWeights {
    ModelConfig config;
    Matrix token_embedding;    // vocab_size x d_model
    Matrix position_embedding; // max_seq_len x d_model
    std::vector<LayerWeights> layers;
    std::vector<double> final_ln_gain, final_ln_bias; // d_model
    Matrix unembedding;        // d_model x vocab_size

    void validate() const; // dimension consistency + finite entries
};

// Everything the attribution pass needs from one forward run. Attention holds
// one causal row-stochastic n x n matrix per head. projected_values[h] row j
// is the head's value vector for position j already pushed through the output
// projection, so the per-source transformed vectors can be rebuilt on demand:
//   T_i(x_j) = sum_h attention[h](i,j) * projected_values[h].row(j)
//            + (i == j ? residual_input.row(i) : 0)
// and sum_j T_i(x_j) + out_bias reconstructs block_output.row(i).
struct LayerTrace {
    std::vector<Matrix> attention;        // per head, n x n
    Matrix ln_input;                      // n x d_model, layernormed residual entering attention
    Matrix residual_input;                // n x d_model, raw residual entering the layer
    std::vector<Matrix> projected_values; // per head, n x d_model
    Matrix block_output;                  // n x d_model, residual + attention output
    std::vector<double> out_bias;         // d_model
};

struct TraceBundle {
    int n = 0;
    int num_heads = 0;
    int d_model = 0;
    std::vector<LayerTrace> layers;

    std::vector<double> transformed_vector(int layer, int i, int j) const;
};

struct ForwardResult {
    Matrix logits; // n x vocab_size
    TraceBundle trace;
};

ForwardResult forward_trace(const ModelWeights& weights, std::span<const int> tokens);

struct GenerateResult {
    std::vector<int> generated;
    TraceBundle trace; // covers prompt + generated, so all positions are visible
};

// Greedy decoding; argmax ties break toward the lowest token id. A stop id is
// appended to the output before halting. The prompt must leave room for
// max_new tokens within max_seq_len.
GenerateResult greedy_generate(const ModelWeights& weights, std::span<const int> prompt,
                               int max_new, std::span<const int> stop_ids);

// Byte-level tokenizer: one token per byte. Reserved ids decode to nothing.
std::vector<int> encode_bytes(std::string_view text);
std::string decode_bytes(std::span<const int> ids);

} // namespace ctxlens
