#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ctxlens/pipeline.hpp"

namespace {

using namespace ctxlens;

void add_run_options(CLI::App* cmd, RunConfig& config, std::optional<uint64_t>& shuffle_seed) {
    cmd->add_option("--model", config.model_path, "model weights file (binary or text manifest)")
        ->required();
    cmd->add_option("--dataset", config.dataset_path, "dataset file, one JSON record per line")
        ->required();
    cmd->add_option("--intervention", [&config](const std::vector<std::string>& vals) {
            if (vals[0] == "none") {
                config.intervention = Intervention::None;
            } else if (vals[0] == "replace-last-ex") {
                config.intervention = Intervention::ReplaceLastExample;
            } else {
                return false;
            }
            return true;
        }, "none | replace-last-ex");
    cmd->add_flag("--task-description", config.with_task_description,
                  "prepend the translation task description");
    cmd->add_option("--shuffle-seed", shuffle_seed, "shuffle each sample's examples with this seed");
    cmd->add_option("--max-total-tokens", config.thresholds.max_total_tokens,
                    "admit samples whose prompt plus generation stays within this many tokens");
    cmd->add_option("--min-generated-tokens", config.thresholds.min_generated_tokens,
                    "admit samples that generate strictly more than this many tokens");
    cmd->add_option("--bins", config.num_bins, "generation-stage bins");
    cmd->add_option("--max-new", config.max_new_tokens, "generation cap per sample");
    cmd->add_option("--dominance-score", [&config](const std::vector<std::string>& vals) {
            if (vals[0] == "both-sides") {
                config.dominance_mode = DominanceMode::BothSides;
            } else if (vals[0] == "src-only") {
                config.dominance_mode = DominanceMode::SourceOnly;
            } else {
                return false;
            }
            return true;
        }, "per-example contribution: both-sides | src-only");
    cmd->add_option("--anomaly-score", [&config](const std::vector<std::string>& vals) {
            if (vals[0] == "source") {
                config.anomaly_mode = AnomalyScoreMode::Source;
            } else if (vals[0] == "source-plus-example-sources") {
                config.anomaly_mode = AnomalyScoreMode::SourcePlusExampleSources;
            } else {
                return false;
            }
            return true;
        }, "source | source-plus-example-sources");
    cmd->add_option("--label", config.run_label, "run label for corpus CSV rows (default: model stem)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"context-part contribution analysis for few-shot translation prompts"};
    app.require_subcommand(1);

    RunConfig run_config;
    std::optional<uint64_t> run_shuffle;
    bool no_per_token = false;
    CLI::App* run = app.add_subcommand("run", "run the full pipeline over a dataset");
    add_run_options(run, run_config, run_shuffle);
    run->add_option("--out", run_config.output_dir, "output directory for reports")->required();
    run->add_flag("--no-per-token", no_per_token, "omit per-token matrices from profiles.jsonl");

    SynthConfig synth_config;
    synth_config.model.num_layers = 2;
    synth_config.model.num_heads = 2;
    synth_config.model.d_model = 16;
    synth_config.model.d_head = 8;
    synth_config.model.d_ff = 32;
    synth_config.model.vocab_size = 258;
    synth_config.model.max_seq_len = 512;
    synth_config.model.stop_id = 256;
    synth_config.model.bos_id = -1;
    CLI::App* synth = app.add_subcommand("synth", "write a seeded synthetic model and dataset");
    synth->add_option("--seed", synth_config.seed, "seed for weights and dataset");
    synth->add_option("--out-model", synth_config.model_path, "model file to write")->required();
    synth->add_option("--out-dataset", synth_config.dataset_path, "dataset file to write")->required();
    synth->add_option("--samples", synth_config.dataset_size, "number of samples");
    synth->add_option("--examples", synth_config.examples_per_sample, "few-shot examples per sample");
    synth->add_option("--layers", synth_config.model.num_layers, "transformer layers");
    synth->add_option("--heads", synth_config.model.num_heads, "attention heads");
    synth->add_option("--d-model", synth_config.model.d_model, "model width");
    synth->add_option("--d-head", synth_config.model.d_head, "per-head width");
    synth->add_option("--d-ff", synth_config.model.d_ff, "MLP hidden width");
    synth->add_option("--vocab", synth_config.model.vocab_size, "vocabulary size");
    synth->add_option("--max-seq-len", synth_config.model.max_seq_len, "maximum sequence length");
    synth->add_option("--ln-eps", synth_config.model.layernorm_epsilon, "layernorm epsilon");
    synth->add_option("--stop-id", synth_config.model.stop_id, "reserved stop token id");
    synth->add_option("--bos-id", synth_config.model.bos_id, "reserved sequence-start id, -1 disables");
    synth->add_flag("--text", synth_config.text_format, "write the text manifest format");

    RunConfig inspect_config;
    std::optional<uint64_t> inspect_shuffle;
    int inspect_index = 0;
    std::string ratio_ref = "example1_src";
    std::string dump_rollout;
    CLI::App* inspect = app.add_subcommand("inspect", "print one sample's part profile and ratios");
    add_run_options(inspect, inspect_config, inspect_shuffle);
    inspect->add_option("--index", inspect_index, "sample index in the dataset")->required();
    inspect->add_option("--ratio-ref", ratio_ref, "part the ratio column is relative to");
    inspect->add_option("--dump-rollout", dump_rollout,
                        "also write the sample's rolled-out contribution matrix as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (run->parsed()) {
            run_config.shuffle_seed = run_shuffle;
            run_config.emit_per_token = !no_per_token;
            const RunSummary summary = run_pipeline(run_config);
            std::cout << "admitted " << summary.admitted << " of " << summary.dataset_size
                      << " samples (rejected: " << summary.rejected_length << " length, "
                      << summary.rejected_short_generation << " short generation)\n"
                      << "reports written to " << run_config.output_dir << "\n";
        } else if (synth->parsed()) {
            make_synthetic(synth_config);
            std::cout << "wrote " << synth_config.model_path << " and " << synth_config.dataset_path
                      << "\n";
        } else if (inspect->parsed()) {
            inspect_config.shuffle_seed = inspect_shuffle;
            const auto ref = parse_part_name(ratio_ref);
            if (!ref) {
                std::cerr << "error: unknown part name '" << ratio_ref << "'\n";
                return 1;
            }
            inspect_sample(inspect_config, inspect_index, *ref, std::cout, dump_rollout);
        }
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
