#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctxlens/common.hpp"

namespace ctxlens {

// Named regions of a few-shot translation prompt. Example parts carry the
// 1-based position of the example they belong to.
enum class PartKind { TaskDescription, ExampleSrc, ExampleTgt, Source, TargetPrefix, Other };

struct PartId {
    PartKind kind = PartKind::Other;
    int example = 0; // 1-based, Example* kinds only

    friend bool operator==(const PartId&, const PartId&) = default;
};

std::string part_name(const PartId& id);
std::optional<PartId> parse_part_name(const std::string& name);

// Half-open token range [begin, end) tagged with its part.
struct Span {
    PartId part;
    int begin = 0;
    int end = 0;
};

// Ordered spans partitioning the prompt positions [0, prompt_len) exactly.
// Generated positions are not listed; they all belong to TargetPrefix.
struct PartSpanMap {
    std::vector<Span> spans;
    int prompt_len = 0;

    void validate() const; // throws InternalError if spans do not partition
};

struct ExamplePair {
    std::string src;
    std::string tgt;
};

struct Sample {
    std::vector<ExamplePair> examples;
    std::string source;
    std::optional<std::string> reference;
    std::optional<bool> hallucination_label;
    std::string language_pair; // "srclang-tgtlang", rendered verbatim as labels
};

enum class Intervention { None, ReplaceLastExample };

struct PromptOptions {
    bool with_task_description = false;
    Intervention intervention = Intervention::None;
    int bos_id = -1; // when >= 0, prepended and tagged Other
};

struct BuiltPrompt {
    std::vector<int> tokens;
    PartSpanMap spans;
    std::string text; // prompt text without the bos token
};

// Renders the few-shot template: one labeled line per example side, the
// labeled source line, then the bare target-language label the continuation
// hangs off. Label scaffolding belongs to the span it introduces; the final
// dangling label is tagged Other. ReplaceLastExample swaps the final example
// for (source, reference).
BuiltPrompt build_prompt(const Sample& sample, const PromptOptions& options);

struct AdmissionThresholds {
    int max_total_tokens = 400;    // prompt + generated must not exceed this
    int min_generated_tokens = 10; // generated must strictly exceed this
};

bool admit_sample(int prompt_len, int generated_len, const AdmissionThresholds& thresholds = {});

// One JSON object per line: {"examples":[{"src":..,"tgt":..},..],"source":..,
// "reference"?:.., "hallucination_label"?:bool, "language_pair":..}. Blank
// lines are skipped.
std::vector<Sample> load_dataset_jsonl(const std::string& path);
void save_dataset_jsonl(const std::vector<Sample>& samples, const std::string& path);

} // namespace ctxlens
