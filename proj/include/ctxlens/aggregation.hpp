#pragma once

#include <utility>
#include <vector>

#include "ctxlens/attribution.hpp"
#include "ctxlens/segmentation.hpp"

namespace ctxlens {

// Column order for part-level matrices: distinct parts in span order, then
// TargetPrefix appended last.
std::vector<PartId> part_columns(const PartSpanMap& spans);

// T x P matrix; entry (t, p) sums the row of generated token t over the token
// columns of part p. The TargetPrefix column of row t sums the positions of
// the t previously generated tokens. Sums run left to right over ascending
// indices, one subtotal per span, so merging two parts adds their columns
// exactly.
Matrix part_token_contributions(const OutputContributionRows& rows, const PartSpanMap& spans);

// Column means; the contribution of each part to the whole translated
// sequence.
std::vector<double> sequence_contributions(const Matrix& per_token);

struct PartProfile {
    std::vector<PartId> parts;
    Matrix per_token; // T x P
    std::vector<double> sequence_level;

    int find(const PartId& id) const; // column index or -1
};

PartProfile make_part_profile(const OutputContributionRows& rows, const PartSpanMap& spans);

struct StageProfile {
    Matrix bins;                                     // B x P, mean row per bin
    std::vector<std::pair<int, int>> bin_boundaries; // [begin, end) over 0..T
};

// Near-equal-length bins over the generated tokens: bin b covers rows
// [floor(b*T/B), floor((b+1)*T/B)). Requires T >= B >= 1.
StageProfile stage_profile(const Matrix& per_token, int num_bins);

} // namespace ctxlens
