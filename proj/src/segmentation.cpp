#include "ctxlens/segmentation.hpp"

#include <fstream>

#include <json.hpp>

#include "ctxlens/model.hpp"

namespace ctxlens {

std::string part_name(const PartId& id) {
    switch (id.kind) {
        case PartKind::TaskDescription: return "task_description";
        case PartKind::ExampleSrc: return "example" + std::to_string(id.example) + "_src";
        case PartKind::ExampleTgt: return "example" + std::to_string(id.example) + "_tgt";
        case PartKind::Source: return "source";
        case PartKind::TargetPrefix: return "target_prefix";
        case PartKind::Other: return "other";
    }
    return "other";
}

std::optional<PartId> parse_part_name(const std::string& name) {
    if (name == "task_description") return PartId{PartKind::TaskDescription, 0};
    if (name == "source") return PartId{PartKind::Source, 0};
    if (name == "target_prefix") return PartId{PartKind::TargetPrefix, 0};
    if (name == "other") return PartId{PartKind::Other, 0};
    if (name.starts_with("example")) {
        const size_t underscore = name.rfind('_');
        if (underscore == std::string::npos || underscore <= 7) return std::nullopt;
        const std::string num = name.substr(7, underscore - 7);
        const std::string side = name.substr(underscore + 1);
        try {
            const int k = std::stoi(num);
            if (k < 1) return std::nullopt;
            if (side == "src") return PartId{PartKind::ExampleSrc, k};
            if (side == "tgt") return PartId{PartKind::ExampleTgt, k};
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }
    return std::nullopt;
}

void PartSpanMap::validate() const {
    int cursor = 0;
    for (const Span& s : spans) {
        check_internal(s.begin == cursor && s.end > s.begin, "span map: spans must tile the prompt");
        cursor = s.end;
    }
    check_internal(cursor == prompt_len, "span map: spans do not cover the prompt");
}

namespace {

std::pair<std::string, std::string> split_language_pair(const std::string& pair) {
    const size_t dash = pair.find('-');
    check_input(dash != std::string::npos && dash > 0 && dash + 1 < pair.size(),
                "sample: language_pair must look like 'srclang-tgtlang', got '" + pair + "'");
    return {pair.substr(0, dash), pair.substr(dash + 1)};
}

void validate_sample(const Sample& sample) {
    check_input(!sample.examples.empty(), "sample: needs at least one example");
    for (const auto& ex : sample.examples) {
        check_input(!ex.src.empty(), "sample: example source text is empty");
        check_input(!ex.tgt.empty(), "sample: example target text is empty");
    }
    check_input(!sample.source.empty(), "sample: source text is empty");
}

} // namespace

BuiltPrompt build_prompt(const Sample& sample, const PromptOptions& options) {
    validate_sample(sample);
    const auto [src_label, tgt_label] = split_language_pair(sample.language_pair);

    std::vector<ExamplePair> examples = sample.examples;
    if (options.intervention == Intervention::ReplaceLastExample) {
        check_input(sample.reference.has_value(),
                    "replace-last-ex intervention needs a reference translation");
        examples.back() = ExamplePair{sample.source, *sample.reference};
    }

    BuiltPrompt built;
    const int bos_offset = options.bos_id >= 0 ? 1 : 0;
    if (bos_offset) {
        built.tokens.push_back(options.bos_id);
        built.spans.spans.push_back({PartId{PartKind::Other, 0}, 0, 1});
    }

    auto append = [&](const std::string& piece, PartId part) {
        const int begin = static_cast<int>(built.tokens.size());
        for (int id : encode_bytes(piece)) built.tokens.push_back(id);
        built.text += piece;
        built.spans.spans.push_back({part, begin, static_cast<int>(built.tokens.size())});
    };

    if (options.with_task_description) {
        append("Translate the following text from " + src_label + " to " + tgt_label + "\n",
               PartId{PartKind::TaskDescription, 0});
    }
    for (size_t k = 0; k < examples.size(); ++k) {
        const int num = static_cast<int>(k) + 1;
        append(src_label + ": " + examples[k].src + "\n", PartId{PartKind::ExampleSrc, num});
        append(tgt_label + ": " + examples[k].tgt + "\n", PartId{PartKind::ExampleTgt, num});
    }
    append(src_label + ": " + sample.source + "\n", PartId{PartKind::Source, 0});
    append(tgt_label + ":", PartId{PartKind::Other, 0});

    built.spans.prompt_len = static_cast<int>(built.tokens.size());
    built.spans.validate();
    return built;
}

bool admit_sample(int prompt_len, int generated_len, const AdmissionThresholds& thresholds) {
    return prompt_len + generated_len <= thresholds.max_total_tokens &&
           generated_len > thresholds.min_generated_tokens;
}

std::vector<Sample> load_dataset_jsonl(const std::string& path) {
    std::ifstream in(path);
    check_input(static_cast<bool>(in), "cannot open dataset file: " + path);
    std::vector<Sample> samples;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw InputError("dataset line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            Sample s;
            for (const auto& ex : record.at("examples")) {
                s.examples.push_back({ex.at("src").get<std::string>(), ex.at("tgt").get<std::string>()});
            }
            s.source = record.at("source").get<std::string>();
            s.language_pair = record.at("language_pair").get<std::string>();
            if (record.contains("reference") && !record["reference"].is_null())
                s.reference = record["reference"].get<std::string>();
            if (record.contains("hallucination_label") && !record["hallucination_label"].is_null())
                s.hallucination_label = record["hallucination_label"].get<bool>();
            samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw InputError("dataset line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return samples;
}

void save_dataset_jsonl(const std::vector<Sample>& samples, const std::string& path) {
    std::ofstream out(path);
    check_input(static_cast<bool>(out), "cannot write dataset file: " + path);
    for (const Sample& s : samples) {
        nlohmann::json record;
        record["examples"] = nlohmann::json::array();
        for (const auto& ex : s.examples) record["examples"].push_back({{"src", ex.src}, {"tgt", ex.tgt}});
        record["source"] = s.source;
        record["language_pair"] = s.language_pair;
        if (s.reference) record["reference"] = *s.reference;
        if (s.hallucination_label) record["hallucination_label"] = *s.hallucination_label;
        out << record.dump() << '\n';
    }
    check_input(static_cast<bool>(out), "write failure: " + path);
}

} // namespace ctxlens
