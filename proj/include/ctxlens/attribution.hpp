#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "ctxlens/model.hpp"

namespace ctxlens {

// Token-to-token contribution matrices. Each row is a probability vector over
// source positions; entries past the diagonal are zero (causal support).

struct ContributionMatrix {
    Matrix values;       // n x n
    int layer = 0;       // highest layer folded in (0-based)
    bool rolled = false; // false: single layer; true: product through `layer`

    int n() const { return values.rows(); }
};

// Rows selected from a rolled-out matrix for the generated part of the
// sequence: T rows over S+T columns. Rows are copied as-is; they are already
// stochastic, so slicing applies no renormalization.
struct OutputContributionRows {
    Matrix values;
    int prompt_len = 0;    // S
    int generated_len = 0; // T
};

// Per-layer contribution of source token j to output token i:
//   r(i,j) = max(0, ||y_i||_1 - ||y_i - T_i(x_j)||_1)      for j <= i
//   c(i,j) = r(i,j) / sum_k r(i,k)
// where y_i is the attention block output and T_i(x_j) the per-source
// transformed vector (residual folded into the self term). A row whose
// relevances all clip to zero falls back to the head-averaged attention row,
// which keeps the matrix row-stochastic.
ContributionMatrix layer_contributions(const TraceBundle& trace, int layer);

std::vector<ContributionMatrix> all_layer_contributions(const TraceBundle& trace);

// Product C_L * ... * C_1 over matrices ordered from first to last layer,
// expressing final representations as mixtures of input tokens.
ContributionMatrix rollout(std::span<const ContributionMatrix> layers);

// Literal slice of the last T rows.
OutputContributionRows output_rows(const ContributionMatrix& rolled, int generated_len);

// Rows used to attribute generated tokens: for generated token t the row of
// the position that predicted it (one position earlier), whose context is the
// prompt plus the t previously generated tokens and nothing else. These rows
// sum to 1 over exactly the positions a span map plus the target prefix cover.
OutputContributionRows prediction_rows(const ContributionMatrix& rolled, int generated_len);

// Debug dump, row-major, 17 significant digits, comma separated.
void write_matrix_csv(std::ostream& out, const Matrix& m);

} // namespace ctxlens
