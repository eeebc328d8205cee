#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dagan/data.hpp"
#include "dagan/detector.hpp"
#include "dagan/gan.hpp"
#include "dagan/metrics.hpp"

namespace dagan {

struct EvalSettings {
    double iou_threshold = 0.5;
    ApMode ap_mode = ApMode::AllPoint;
    CorLocMode corloc_mode = CorLocMode::Literal;
    double conf_threshold = 0.05;
    double nms_iou = 0.45;
    void validate() const;
};

struct CompareSettings {
    int seeds = 3;
    // classical-augmentation baselines swept by the compare command
    std::vector<AugmentKind> augment_grid = {{AugmentKind::Noise, 0.01, 5},
                                             {AugmentKind::Noise, 0.05, 5},
                                             {AugmentKind::Noise, 0.1, 5},
                                             {AugmentKind::Blur, 2.0, 5}};
    // the upper-bound regime reads target boxes and stays off by default
    bool allow_target_labels = false;
    void validate() const;
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    std::filesystem::path out_dir = "runs/default";
    GenCorpusConfig corpus;  // corpus/gan stage seeds derive from the global seed
    DegradeConfig degrade;
    GanConfig gan;
    DetectorSpec detector;  // n_classes always mirrors corpus.n_classes
    int detector_epochs = 12;
    EvalSettings eval;
    CompareSettings compare;
    void validate() const;
};

// JSON object -> config. Unknown keys are rejected with their dotted path;
// overrides are (dotted key, value text) pairs that win over file values; an
// empty text means all defaults. DAGAN_OUT_ROOT, when set, is prepended to a
// relative out_dir.
PipelineConfig parse_config_text(const std::string& text,
                                 const std::vector<std::pair<std::string, std::string>>& overrides = {});
PipelineConfig parse_config(const std::filesystem::path& path,
                            const std::vector<std::pair<std::string, std::string>>& overrides = {});

// resolved echo of every effective value; parse_config_text accepts it back
std::string config_to_json(const PipelineConfig& cfg);
// writes the echo to dir/config.json
void write_resolved_config(const PipelineConfig& cfg, const std::filesystem::path& dir);

}  // namespace dagan
