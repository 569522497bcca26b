#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "ctxlens/analyses.hpp"
#include "ctxlens/model.hpp"

namespace ctxlens {

enum class AnomalyScoreMode { Source, SourcePlusExampleSources };

struct RunConfig {
    std::string model_path;
    std::string dataset_path;
    std::string output_dir;
    Intervention intervention = Intervention::None;
    bool with_task_description = false;
    std::optional<uint64_t> shuffle_seed; // shuffles each sample's examples when set
    AdmissionThresholds thresholds;
    int num_bins = 10;
    int max_new_tokens = 300;
    DominanceMode dominance_mode = DominanceMode::BothSides;
    AnomalyScoreMode anomaly_mode = AnomalyScoreMode::Source;
    std::string run_label; // defaults to the model file stem
    bool emit_per_token = true;
};

struct RunSummary {
    int dataset_size = 0;
    int admitted = 0;
    int rejected_length = 0;
    int rejected_short_generation = 0;
    bool bias_report_written = false;
    bool auroc_report_written = false;
};

// Full pass over a dataset: generate, attribute, segment, aggregate, analyze.
// Writes profiles.jsonl, parts_mean.csv, stage_profile.csv, bias_report.json,
// bias_report.csv, auroc_report.json (when labels allow) and summary.json
// under output_dir. Deterministic for a fixed config; output bytes do not
// depend on the output directory.
RunSummary run_pipeline(const RunConfig& config);

struct SynthConfig {
    ModelConfig model;
    uint64_t seed = 1;
    int dataset_size = 20;
    int examples_per_sample = 5;
    std::string model_path;
    std::string dataset_path;
    bool text_format = false; // write the text manifest instead of binary
};

// Seeded synthetic model plus dataset. All randomness flows through SeededRng
// (mt19937_64 with explicit transforms), so files are identical across
// platforms for a given seed.
void make_synthetic(const SynthConfig& config);

// Gaussian-initialized weights: projections scale with 1/sqrt(fan_in),
// layernorm gains sit near 1, biases near 0.
ModelWeights random_model_weights(const ModelConfig& config, SeededRng& rng);

// Prints one sample's part profile and its contribution ratios as a table.
// The admission filter is not applied; a sample a run would drop is flagged
// in the header line instead. A non-empty dump path additionally writes the
// sample's rolled-out contribution matrix as CSV.
void inspect_sample(const RunConfig& config, int sample_index, const PartId& ratio_reference,
                    std::ostream& out, const std::string& dump_rollout_path = "");

} // namespace ctxlens
