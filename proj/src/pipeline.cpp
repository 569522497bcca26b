#include "ctxlens/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <tuple>

#include <json.hpp>

#include "ctxlens/attribution.hpp"
#include "ctxlens/model_io.hpp"

namespace ctxlens {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// canonical ordering for corpus-level tables: description, examples in
// position order (source before target), test source, other, target prefix
std::tuple<int, int, int> part_order_key(const PartId& id) {
    switch (id.kind) {
        case PartKind::TaskDescription: return {0, 0, 0};
        case PartKind::ExampleSrc: return {1, id.example, 0};
        case PartKind::ExampleTgt: return {1, id.example, 1};
        case PartKind::Source: return {2, 0, 0};
        case PartKind::Other: return {3, 0, 0};
        case PartKind::TargetPrefix: return {4, 0, 0};
    }
    return {5, 0, 0};
}

struct PartOrderLess {
    bool operator()(const PartId& a, const PartId& b) const {
        return part_order_key(a) < part_order_key(b);
    }
};

struct ProcessedSample {
    int index = 0;
    Sample sample;
    int prompt_len = 0;
    int generated_len = 0;
    PartProfile profile;
    std::optional<StageProfile> stage;
    double anomaly_score = 0.0;
};

struct ModelRun {
    ModelWeights weights;
    std::vector<int> stop_ids;
};

// one sample end to end: shuffle, build, generate, attribute, aggregate;
// rolled_out, when given, receives the rolled-out contribution matrix
ProcessedSample process_one(const RunConfig& config, const ModelRun& model, const Sample& raw,
                            int index, Matrix* rolled_out = nullptr) {
    Sample sample = raw;
    if (config.shuffle_seed) {
        SeededRng rng(*config.shuffle_seed ^ (0x9E3779B97F4A7C15ULL * static_cast<uint64_t>(index + 1)));
        rng.shuffle(sample.examples);
    }

    PromptOptions options;
    options.with_task_description = config.with_task_description;
    options.intervention = config.intervention;
    options.bos_id = model.weights.config.bos_id;
    BuiltPrompt prompt = build_prompt(sample, options);
    const int prompt_len = static_cast<int>(prompt.tokens.size());

    const int room = model.weights.config.max_seq_len - prompt_len;
    check_input(room >= 1, "sample " + std::to_string(index) + ": prompt leaves no room to generate");
    const int max_new = std::min(config.max_new_tokens, room);

    GenerateResult gen = greedy_generate(model.weights, prompt.tokens, max_new, model.stop_ids);
    const int generated_len = static_cast<int>(gen.generated.size());

    const auto layer_matrices = all_layer_contributions(gen.trace);
    const ContributionMatrix rolled = rollout(layer_matrices);
    const OutputContributionRows rows = prediction_rows(rolled, generated_len);
    if (rolled_out) *rolled_out = rolled.values;

    ProcessedSample out;
    out.index = index;
    out.sample = std::move(sample);
    out.prompt_len = prompt_len;
    out.generated_len = generated_len;
    out.profile = make_part_profile(rows, prompt.spans);

    for (int r = 0; r < out.profile.per_token.rows(); ++r) {
        double sum = 0.0;
        for (double v : out.profile.per_token.row(r)) sum += v;
        check_internal(std::abs(sum - 1.0) <= 1e-6,
                       "sample " + std::to_string(index) + ": part contributions do not conserve mass");
    }

    if (generated_len >= config.num_bins)
        out.stage = stage_profile(out.profile.per_token, config.num_bins);

    out.anomaly_score = source_anomaly_score(out.profile);
    if (config.anomaly_mode == AnomalyScoreMode::SourcePlusExampleSources) {
        for (int k = 1;; ++k) {
            const int col = out.profile.find(PartId{PartKind::ExampleSrc, k});
            if (col < 0) break;
            out.anomaly_score -= out.profile.sequence_level[col];
        }
    }
    return out;
}

// pipeline wrapper: applies the admission filter and tallies the reject bins
std::optional<ProcessedSample> process_admitted(const RunConfig& config, const ModelRun& model,
                                                const Sample& raw, int index, RunSummary& summary) {
    // a prompt the model cannot extend at all counts as an over-length reject;
    // shuffling permutes examples without changing the token count, so the
    // unshuffled length check is exact
    {
        PromptOptions options;
        options.with_task_description = config.with_task_description;
        options.intervention = config.intervention;
        options.bos_id = model.weights.config.bos_id;
        const BuiltPrompt prompt = build_prompt(raw, options);
        if (model.weights.config.max_seq_len - static_cast<int>(prompt.tokens.size()) < 1) {
            ++summary.rejected_length;
            return std::nullopt;
        }
    }

    ProcessedSample out = process_one(config, model, raw, index);
    if (!admit_sample(out.prompt_len, out.generated_len, config.thresholds)) {
        if (out.prompt_len + out.generated_len > config.thresholds.max_total_tokens) {
            ++summary.rejected_length;
        } else {
            ++summary.rejected_short_generation;
        }
        return std::nullopt;
    }
    ++summary.admitted;
    return out;
}

json profile_record(const ProcessedSample& p, const RunConfig& config) {
    json record;
    record["id"] = p.index;
    record["language_pair"] = p.sample.language_pair;
    record["num_examples"] = p.sample.examples.size();
    record["prompt_len"] = p.prompt_len;
    record["generated_len"] = p.generated_len;
    json names = json::array();
    for (const PartId& id : p.profile.parts) names.push_back(part_name(id));
    record["parts"] = names;
    record["sequence_level"] = p.profile.sequence_level;
    if (config.emit_per_token) {
        json rows = json::array();
        for (int r = 0; r < p.profile.per_token.rows(); ++r) {
            const auto row = p.profile.per_token.row(r);
            rows.push_back(std::vector<double>(row.begin(), row.end()));
        }
        record["per_token"] = rows;
    }
    if (p.stage) {
        json stage;
        json bounds = json::array();
        for (const auto& [b, e] : p.stage->bin_boundaries) bounds.push_back({b, e});
        stage["boundaries"] = bounds;
        json bins = json::array();
        for (int b = 0; b < p.stage->bins.rows(); ++b) {
            const auto row = p.stage->bins.row(b);
            bins.push_back(std::vector<double>(row.begin(), row.end()));
        }
        stage["bins"] = bins;
        record["stage"] = stage;
    }
    record["anomaly_score"] = p.anomaly_score;
    if (p.sample.hallucination_label) record["hallucination_label"] = *p.sample.hallucination_label;
    return record;
}

void write_parts_mean_csv(const std::vector<ProcessedSample>& admitted, const std::string& label,
                          const fs::path& path) {
    std::map<PartId, std::pair<int, double>, PartOrderLess> totals;
    for (const auto& p : admitted) {
        for (size_t c = 0; c < p.profile.parts.size(); ++c) {
            auto& slot = totals[p.profile.parts[c]];
            slot.first += 1;
            slot.second += p.profile.sequence_level[c];
        }
    }
    std::ofstream out(path);
    check_input(static_cast<bool>(out), "cannot write " + path.string());
    out << "run,part,samples,mean_contribution\n";
    for (const auto& [id, slot] : totals)
        out << label << ',' << part_name(id) << ',' << slot.first << ','
            << fmt17(slot.second / slot.first) << '\n';
}

void write_stage_csv(const std::vector<ProcessedSample>& admitted, int num_bins,
                     const std::string& label, const fs::path& path) {
    // mean of bin rows across samples that had enough tokens for binning
    std::map<PartId, std::pair<int, std::vector<double>>, PartOrderLess> totals;
    for (const auto& p : admitted) {
        if (!p.stage) continue;
        for (size_t c = 0; c < p.profile.parts.size(); ++c) {
            auto& slot = totals[p.profile.parts[c]];
            if (slot.second.empty()) slot.second.assign(num_bins, 0.0);
            slot.first += 1;
            for (int b = 0; b < num_bins; ++b) slot.second[b] += p.stage->bins(b, static_cast<int>(c));
        }
    }
    std::ofstream out(path);
    check_input(static_cast<bool>(out), "cannot write " + path.string());
    out << "run,bin,part,samples,mean_contribution\n";
    for (int b = 0; b < num_bins; ++b)
        for (const auto& [id, slot] : totals)
            out << label << ',' << (b + 1) << ',' << part_name(id) << ',' << slot.first << ','
                << fmt17(slot.second[b] / slot.first) << '\n';
}

const char* intervention_name(Intervention i) {
    return i == Intervention::ReplaceLastExample ? "replace-last-ex" : "none";
}

const char* dominance_name(DominanceMode m) {
    return m == DominanceMode::SourceOnly ? "src-only" : "both-sides";
}

const char* anomaly_name(AnomalyScoreMode m) {
    return m == AnomalyScoreMode::SourcePlusExampleSources ? "source-plus-example-sources" : "source";
}

} // namespace

RunSummary run_pipeline(const RunConfig& config) {
    check_input(config.thresholds.max_total_tokens > 0 && config.thresholds.min_generated_tokens > 0,
                "run: thresholds must be positive");
    check_input(config.num_bins >= 1, "run: num_bins must be at least 1");
    check_input(config.max_new_tokens >= 1, "run: max_new_tokens must be at least 1");

    ModelRun model;
    model.weights = load_model(config.model_path);
    if (model.weights.config.stop_id >= 0) model.stop_ids.push_back(model.weights.config.stop_id);

    const std::vector<Sample> dataset = load_dataset_jsonl(config.dataset_path);
    const std::string label =
        config.run_label.empty() ? fs::path(config.model_path).stem().string() : config.run_label;

    fs::create_directories(config.output_dir);
    const fs::path out_dir(config.output_dir);

    RunSummary summary;
    summary.dataset_size = static_cast<int>(dataset.size());

    std::vector<ProcessedSample> admitted;
    for (int i = 0; i < static_cast<int>(dataset.size()); ++i) {
        auto processed = process_admitted(config, model, dataset[i], i, summary);
        if (processed) admitted.push_back(std::move(*processed));
    }
    check_input(!admitted.empty(), "run: no admitted samples");

    {
        std::ofstream out(out_dir / "profiles.jsonl");
        check_input(static_cast<bool>(out), "cannot write profiles.jsonl");
        for (const auto& p : admitted) out << profile_record(p, config).dump() << '\n';
    }

    write_parts_mean_csv(admitted, label, out_dir / "parts_mean.csv");
    write_stage_csv(admitted, config.num_bins, label, out_dir / "stage_profile.csv");

    // positional-bias report over samples sharing the leading sample's example
    // count; mismatched sizes are counted and left out
    const int bias_n = static_cast<int>(admitted.front().sample.examples.size());
    std::vector<std::vector<double>> vectors;
    int excluded_mismatched = 0;
    for (const auto& p : admitted) {
        if (static_cast<int>(p.sample.examples.size()) != bias_n) {
            ++excluded_mismatched;
            continue;
        }
        vectors.push_back(example_contributions(p.profile, config.dominance_mode));
    }
    if (bias_n >= 2 && !vectors.empty()) {
        std::vector<int> ks;
        for (int k = 1; k <= bias_n - 1; ++k) ks.push_back(k);
        const BiasReport report = bias_report(vectors, ks);
        json doc;
        doc["num_examples"] = report.num_examples;
        doc["sample_count"] = report.sample_count;
        doc["excluded_mismatched_n"] = excluded_mismatched;
        doc["dominance_score"] = dominance_name(config.dominance_mode);
        json entries = json::array();
        for (const auto& e : report.entries)
            entries.push_back({{"k", e.k},
                               {"satisfied", e.satisfied},
                               {"observed", e.observed},
                               {"baseline", e.baseline}});
        doc["entries"] = entries;
        std::ofstream jout(out_dir / "bias_report.json");
        check_input(static_cast<bool>(jout), "cannot write bias_report.json");
        jout << doc.dump(2) << '\n';

        std::ofstream cout_(out_dir / "bias_report.csv");
        check_input(static_cast<bool>(cout_), "cannot write bias_report.csv");
        cout_ << "K,observed,baseline\n";
        for (const auto& e : report.entries)
            cout_ << e.k << ',' << fmt17(e.observed) << ',' << fmt17(e.baseline) << '\n';
        summary.bias_report_written = true;
    }

    // anomaly scores against ingested hallucination labels
    std::vector<double> scores;
    std::vector<bool> labels;
    for (const auto& p : admitted) {
        if (!p.sample.hallucination_label) continue;
        scores.push_back(p.anomaly_score);
        labels.push_back(*p.sample.hallucination_label);
    }
    std::string auroc_note;
    const int positives = static_cast<int>(std::count(labels.begin(), labels.end(), true));
    if (!labels.empty() && positives >= 1 && positives < static_cast<int>(labels.size())) {
        const AurocReport report = auroc(scores, labels);
        json doc;
        doc["auroc"] = report.auroc;
        doc["positives"] = report.positives;
        doc["negatives"] = report.negatives;
        doc["orientation"] = report.orientation;
        doc["score_mode"] = anomaly_name(config.anomaly_mode);
        std::ofstream out(out_dir / "auroc_report.json");
        check_input(static_cast<bool>(out), "cannot write auroc_report.json");
        out << doc.dump(2) << '\n';
        summary.auroc_report_written = true;
    } else if (labels.empty()) {
        auroc_note = "no labeled samples admitted";
    } else {
        auroc_note = "labeled samples are single-class";
    }

    json doc;
    doc["dataset_size"] = summary.dataset_size;
    doc["admitted"] = summary.admitted;
    doc["rejected_length"] = summary.rejected_length;
    doc["rejected_short_generation"] = summary.rejected_short_generation;
    doc["bias_report_written"] = summary.bias_report_written;
    doc["auroc_report_written"] = summary.auroc_report_written;
    if (!auroc_note.empty()) doc["auroc_skipped"] = auroc_note;
    json run;
    run["label"] = label;
    run["intervention"] = intervention_name(config.intervention);
    run["task_description"] = config.with_task_description;
    if (config.shuffle_seed) run["shuffle_seed"] = *config.shuffle_seed;
    run["max_total_tokens"] = config.thresholds.max_total_tokens;
    run["min_generated_tokens"] = config.thresholds.min_generated_tokens;
    run["num_bins"] = config.num_bins;
    run["max_new_tokens"] = config.max_new_tokens;
    run["dominance_score"] = dominance_name(config.dominance_mode);
    run["anomaly_score"] = anomaly_name(config.anomaly_mode);
    doc["run"] = run;
    std::ofstream out(out_dir / "summary.json");
    check_input(static_cast<bool>(out), "cannot write summary.json");
    out << doc.dump(2) << '\n';

    return summary;
}

namespace {

Matrix random_matrix(SeededRng& rng, int rows, int cols, double scale) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.gaussian() * scale;
    return m;
}

std::vector<double> random_vector(SeededRng& rng, int len, double center, double scale) {
    std::vector<double> v(len);
    for (double& x : v) x = center + rng.gaussian() * scale;
    return v;
}

std::string random_word(SeededRng& rng) {
    const int len = rng.uniform_int(3, 7);
    std::string w;
    for (int i = 0; i < len; ++i) w.push_back(static_cast<char>('a' + rng.uniform_int(0, 25)));
    return w;
}

std::string random_text(SeededRng& rng, int min_words, int max_words) {
    const int words = rng.uniform_int(min_words, max_words);
    std::string text;
    for (int i = 0; i < words; ++i) {
        if (i) text.push_back(' ');
        text += random_word(rng);
    }
    return text;
}

} // namespace

ModelWeights random_model_weights(const ModelConfig& config, SeededRng& rng) {
    config.validate();
    const ModelConfig& c = config;
    const double proj_scale = 1.0 / std::sqrt(static_cast<double>(c.d_model));

    ModelWeights w;
    w.config = c;
    w.token_embedding = random_matrix(rng, c.vocab_size, c.d_model, 0.5);
    w.position_embedding = random_matrix(rng, c.max_seq_len, c.d_model, 0.3);
    for (int l = 0; l < c.num_layers; ++l) {
        LayerWeights lw;
        lw.attn_ln_gain = random_vector(rng, c.d_model, 1.0, 0.05);
        lw.attn_ln_bias = random_vector(rng, c.d_model, 0.0, 0.02);
        for (int h = 0; h < c.num_heads; ++h) {
            lw.w_query.push_back(random_matrix(rng, c.d_model, c.d_head, proj_scale));
            lw.w_key.push_back(random_matrix(rng, c.d_model, c.d_head, proj_scale));
            lw.w_value.push_back(random_matrix(rng, c.d_model, c.d_head, proj_scale));
        }
        lw.attn_out_proj = random_matrix(rng, c.d_model, c.d_model, proj_scale);
        lw.attn_out_bias = random_vector(rng, c.d_model, 0.0, 0.02);
        lw.mlp_ln_gain = random_vector(rng, c.d_model, 1.0, 0.05);
        lw.mlp_ln_bias = random_vector(rng, c.d_model, 0.0, 0.02);
        lw.mlp_in = random_matrix(rng, c.d_model, c.d_ff, proj_scale);
        lw.mlp_in_bias = random_vector(rng, c.d_ff, 0.0, 0.02);
        lw.mlp_out = random_matrix(rng, c.d_ff, c.d_model, 1.0 / std::sqrt(static_cast<double>(c.d_ff)));
        lw.mlp_out_bias = random_vector(rng, c.d_model, 0.0, 0.02);
        w.layers.push_back(std::move(lw));
    }
    w.final_ln_gain = random_vector(rng, c.d_model, 1.0, 0.05);
    w.final_ln_bias = random_vector(rng, c.d_model, 0.0, 0.02);
    w.unembedding = random_matrix(rng, c.d_model, c.vocab_size, proj_scale);
    return w;
}

void make_synthetic(const SynthConfig& config) {
    config.model.validate();
    check_input(config.dataset_size >= 1, "synth: dataset_size must be at least 1");
    check_input(config.examples_per_sample >= 1, "synth: examples_per_sample must be at least 1");

    SeededRng rng(config.seed);
    ModelWeights w = random_model_weights(config.model, rng);
    w.validate();
    if (config.text_format) {
        save_model_text(w, config.model_path);
    } else {
        save_model_binary(w, config.model_path);
    }

    std::vector<Sample> samples;
    for (int i = 0; i < config.dataset_size; ++i) {
        Sample s;
        s.language_pair = "de-en";
        for (int k = 0; k < config.examples_per_sample; ++k)
            s.examples.push_back({random_text(rng, 1, 3), random_text(rng, 1, 3)});
        s.source = random_text(rng, 1, 3);
        s.reference = random_text(rng, 1, 3);
        s.hallucination_label = rng.uniform01() < 0.25;
        samples.push_back(std::move(s));
    }
    save_dataset_jsonl(samples, config.dataset_path);
}

void inspect_sample(const RunConfig& config, int sample_index, const PartId& ratio_reference,
                    std::ostream& out, const std::string& dump_rollout_path) {
    ModelRun model;
    model.weights = load_model(config.model_path);
    if (model.weights.config.stop_id >= 0) model.stop_ids.push_back(model.weights.config.stop_id);
    const std::vector<Sample> dataset = load_dataset_jsonl(config.dataset_path);
    check_input(sample_index >= 0 && sample_index < static_cast<int>(dataset.size()),
                "inspect: sample index out of range");

    // single-sample view: the corpus admission filter does not apply here,
    // but note when a run would have dropped the sample
    Matrix rolled;
    const ProcessedSample processed =
        process_one(config, model, dataset[sample_index], sample_index,
                    dump_rollout_path.empty() ? nullptr : &rolled);
    if (!dump_rollout_path.empty()) {
        std::ofstream dump(dump_rollout_path);
        check_input(static_cast<bool>(dump), "cannot write " + dump_rollout_path);
        write_matrix_csv(dump, rolled);
    }

    const PartProfile& profile = processed.profile;
    const std::vector<double> ratios = contribution_ratio(profile, ratio_reference);

    out << "sample " << sample_index << " (" << processed.sample.language_pair << "), prompt "
        << processed.prompt_len << " tokens, generated " << processed.generated_len << " tokens";
    if (!admit_sample(processed.prompt_len, processed.generated_len, config.thresholds))
        out << " [below admission thresholds]";
    out << '\n';
    char line[128];
    std::snprintf(line, sizeof(line), "%-20s %14s %14s\n", "part", "contribution",
                  ("vs " + part_name(ratio_reference)).c_str());
    out << line;
    for (size_t c = 0; c < profile.parts.size(); ++c) {
        std::snprintf(line, sizeof(line), "%-20s %14.6f %14.4f\n", part_name(profile.parts[c]).c_str(),
                      profile.sequence_level[c], ratios[c]);
        out << line;
    }
    std::snprintf(line, sizeof(line), "anomaly score: %.6f\n", processed.anomaly_score);
    out << line;
}

} // namespace ctxlens
