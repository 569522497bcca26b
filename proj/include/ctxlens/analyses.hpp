#pragma once

#include <span>
#include <string>
#include <vector>

#include "ctxlens/aggregation.hpp"

namespace ctxlens {

enum class DominanceMode { BothSides, SourceOnly };

// Per-example totals: entry k is the example's source-plus-target sequence
// contribution (or source side only).
std::vector<double> example_contributions(const PartProfile& profile, DominanceMode mode);

// True when the first k entries are strictly descending and all of them
// strictly exceed every remaining entry. The tail is not required sorted.
// Comparisons are exact; no epsilon.
bool k_dominance(std::span<const double> contributions, int k);

// Probability that a uniformly random permutation satisfies k-dominance:
// (n-k)!/n!, computed as 1 over the falling product n*(n-1)*...*(n-k+1).
double dominance_baseline(int n, int k);

struct BiasReport {
    int num_examples = 0; // n
    int sample_count = 0;
    struct Entry {
        int k = 0;
        int satisfied = 0;
        double observed = 0.0;
        double baseline = 0.0;
    };
    std::vector<Entry> entries;
};

BiasReport bias_report(const std::vector<std::vector<double>>& contribution_vectors,
                       std::span<const int> ks);

// Every part's sequence contribution divided by the reference part's; the
// reference maps to exactly 1.
std::vector<double> contribution_ratio(const PartProfile& profile, const PartId& reference);

// Negated source contribution, so that higher means more anomalous.
double source_anomaly_score(const PartProfile& profile);

struct AurocReport {
    double auroc = 0.0;
    int positives = 0;
    int negatives = 0;
    std::string orientation = "higher score = more anomalous (lower source contribution)";
};

// Mann-Whitney statistic over all (positive, negative) pairs with half credit
// for ties, computed through midranks.
AurocReport auroc(std::span<const double> scores, const std::vector<bool>& labels);

} // namespace ctxlens
