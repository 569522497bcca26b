#include "ctxlens/analyses.hpp"

#include <algorithm>
#include <numeric>

namespace ctxlens {

std::vector<double> example_contributions(const PartProfile& profile, DominanceMode mode) {
    std::vector<double> totals;
    for (int k = 1;; ++k) {
        const int src = profile.find(PartId{PartKind::ExampleSrc, k});
        if (src < 0) break;
        double total = profile.sequence_level[src];
        if (mode == DominanceMode::BothSides) {
            const int tgt = profile.find(PartId{PartKind::ExampleTgt, k});
            check_input(tgt >= 0, "example contributions: example " + std::to_string(k) + " has no target part");
            total += profile.sequence_level[tgt];
        }
        totals.push_back(total);
    }
    check_input(!totals.empty(), "example contributions: profile has no example parts");
    return totals;
}

bool k_dominance(std::span<const double> contributions, int k) {
    const int n = static_cast<int>(contributions.size());
    check_input(k >= 1 && k <= n - 1, "k_dominance: k must be in 1..n-1");
    for (int i = 1; i < k; ++i)
        if (!(contributions[i - 1] > contributions[i])) return false;
    const double head_min = contributions[k - 1];
    for (int i = k; i < n; ++i)
        if (!(head_min > contributions[i])) return false;
    return true;
}

double dominance_baseline(int n, int k) {
    check_input(k >= 1 && k <= n - 1, "dominance baseline: k must be in 1..n-1");
    uint64_t falling = 1;
    for (int i = 0; i < k; ++i) falling *= static_cast<uint64_t>(n - i);
    return 1.0 / static_cast<double>(falling);
}

BiasReport bias_report(const std::vector<std::vector<double>>& contribution_vectors,
                       std::span<const int> ks) {
    check_input(!contribution_vectors.empty(), "bias report: empty dataset");
    const int n = static_cast<int>(contribution_vectors.front().size());
    for (const auto& v : contribution_vectors)
        check_input(static_cast<int>(v.size()) == n, "bias report: vectors of mixed length");

    BiasReport report;
    report.num_examples = n;
    report.sample_count = static_cast<int>(contribution_vectors.size());
    for (int k : ks) {
        BiasReport::Entry entry;
        entry.k = k;
        entry.baseline = dominance_baseline(n, k);
        for (const auto& v : contribution_vectors)
            if (k_dominance(v, k)) ++entry.satisfied;
        entry.observed = static_cast<double>(entry.satisfied) / report.sample_count;
        report.entries.push_back(entry);
    }
    return report;
}

std::vector<double> contribution_ratio(const PartProfile& profile, const PartId& reference) {
    const int ref = profile.find(reference);
    check_input(ref >= 0, "contribution ratio: reference part not in profile: " + part_name(reference));
    const double denom = profile.sequence_level[ref];
    check_input(denom > 0.0, "contribution ratio: reference part has zero contribution");
    std::vector<double> ratios(profile.sequence_level.size());
    for (size_t i = 0; i < ratios.size(); ++i) ratios[i] = profile.sequence_level[i] / denom;
    ratios[ref] = 1.0;
    return ratios;
}

double source_anomaly_score(const PartProfile& profile) {
    const int src = profile.find(PartId{PartKind::Source, 0});
    check_input(src >= 0, "anomaly score: profile has no source part");
    return -profile.sequence_level[src];
}

AurocReport auroc(std::span<const double> scores, const std::vector<bool>& labels) {
    check_input(scores.size() == labels.size(), "auroc: scores and labels differ in length");
    const int n = static_cast<int>(scores.size());
    AurocReport report;
    for (bool l : labels) (l ? report.positives : report.negatives)++;
    check_input(report.positives >= 1 && report.negatives >= 1,
                "auroc: need at least one positive and one negative label");

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] < scores[b]; });

    // midranks over tie groups, then the rank-sum form of the statistic
    double positive_rank_sum = 0.0;
    int i = 0;
    while (i < n) {
        int j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double rank = (i + j + 1) / 2.0; // average of 1-based ranks i+1..j
        for (int k = i; k < j; ++k)
            if (labels[order[k]]) positive_rank_sum += rank;
        i = j;
    }
    const double np = report.positives;
    const double nn = report.negatives;
    report.auroc = (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
    return report;
}

} // namespace ctxlens
