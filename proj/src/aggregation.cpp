#include "ctxlens/aggregation.hpp"

#include <algorithm>

namespace ctxlens {

std::vector<PartId> part_columns(const PartSpanMap& spans) {
    std::vector<PartId> parts;
    for (const Span& s : spans.spans) {
        if (std::find(parts.begin(), parts.end(), s.part) == parts.end()) parts.push_back(s.part);
    }
    parts.push_back(PartId{PartKind::TargetPrefix, 0});
    return parts;
}

Matrix part_token_contributions(const OutputContributionRows& rows, const PartSpanMap& spans) {
    const int s = rows.prompt_len;
    const int t = rows.generated_len;
    check_input(rows.values.cols() == s + t, "part aggregation: row width mismatch");
    check_input(spans.prompt_len == s, "part aggregation: span map does not match prompt length");
    spans.validate();

    const std::vector<PartId> parts = part_columns(spans);
    const int p = static_cast<int>(parts.size());
    const int prefix_col = p - 1;

    auto column_of = [&](const PartId& id) {
        return static_cast<int>(std::find(parts.begin(), parts.end(), id) - parts.begin());
    };

    Matrix out(t, p);
    for (int r = 0; r < t; ++r) {
        const auto row = rows.values.row(r);
        for (const Span& span : spans.spans) {
            double subtotal = 0.0;
            for (int j = span.begin; j < span.end; ++j) subtotal += row[j];
            out(r, column_of(span.part)) += subtotal;
        }
        double prefix = 0.0;
        for (int j = s; j < s + r; ++j) prefix += row[j]; // previously generated tokens only
        out(r, prefix_col) = prefix;
    }
    return out;
}

std::vector<double> sequence_contributions(const Matrix& per_token) {
    check_input(per_token.rows() >= 1, "sequence contributions: empty matrix");
    std::vector<double> means(per_token.cols(), 0.0);
    for (int r = 0; r < per_token.rows(); ++r) {
        const auto row = per_token.row(r);
        for (int c = 0; c < per_token.cols(); ++c) means[c] += row[c];
    }
    for (double& m : means) m /= per_token.rows();
    return means;
}

int PartProfile::find(const PartId& id) const {
    const auto it = std::find(parts.begin(), parts.end(), id);
    return it == parts.end() ? -1 : static_cast<int>(it - parts.begin());
}

PartProfile make_part_profile(const OutputContributionRows& rows, const PartSpanMap& spans) {
    PartProfile profile;
    profile.parts = part_columns(spans);
    profile.per_token = part_token_contributions(rows, spans);
    profile.sequence_level = sequence_contributions(profile.per_token);
    return profile;
}

StageProfile stage_profile(const Matrix& per_token, int num_bins) {
    const int t = per_token.rows();
    check_input(num_bins >= 1, "stage profile: need at least one bin");
    check_input(t >= num_bins, "stage profile: fewer generated tokens than bins");

    StageProfile out;
    out.bins = Matrix(num_bins, per_token.cols());
    for (int b = 0; b < num_bins; ++b) {
        const int begin = static_cast<int>(static_cast<int64_t>(b) * t / num_bins);
        const int end = static_cast<int>(static_cast<int64_t>(b + 1) * t / num_bins);
        out.bin_boundaries.emplace_back(begin, end);
        auto bin_row = out.bins.row(b);
        for (int r = begin; r < end; ++r) {
            const auto row = per_token.row(r);
            for (int c = 0; c < per_token.cols(); ++c) bin_row[c] += row[c];
        }
        for (int c = 0; c < per_token.cols(); ++c) bin_row[c] /= (end - begin);
    }
    return out;
}

} // namespace ctxlens
