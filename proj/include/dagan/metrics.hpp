#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dagan/data.hpp"

namespace dagan {

struct MatchOutcome {
    std::vector<bool> is_tp;       // per detection, confidence-descending order
    std::vector<bool> gt_matched;  // per ground-truth box
};

// Greedy single-class matching: each detection takes the highest-IoU
// unmatched GT if IoU >= threshold, otherwise it is a false positive;
// duplicates on an already matched GT are false positives. Detections must
// arrive sorted by confidence descending.
MatchOutcome match_detections(const std::vector<Detection>& detections, const std::vector<BoundingBox>& gt_boxes,
                              double iou_threshold = 0.5);

enum class ApMode { AllPoint, Voc11 };

// Area under the precision envelope (all_point) or the 11-point PASCAL
// interpolation, over a verdict stream already in confidence order.
double average_precision(const std::vector<bool>& is_tp, int n_gt, ApMode mode = ApMode::AllPoint);

struct MeanApResult {
    std::vector<double> per_class_ap;  // indexed by class id, manifest registry order
    std::vector<bool> evaluated;       // false when the class has no ground truth
    std::vector<int> n_gt;
    double map = 0.0;  // unweighted mean over evaluated classes
};

// detections[i] belongs to manifest.samples[i]; matching is per image and
// per class, the PR curve pools each class across images by confidence.
MeanApResult mean_ap(const std::vector<std::vector<Detection>>& detections, const DatasetManifest& manifest,
                     double iou_threshold = 0.5, ApMode mode = ApMode::AllPoint);

enum class CorLocMode {
    Literal,       // TP / (TP + FP) over every emitted detection
    PerImageTop1,  // fraction of annotated images whose top-scoring detection hits
};

// absent (nullopt) when the formula is undefined: no detections at all in
// literal mode, no annotated images in top-1 mode
std::optional<double> corloc(const std::vector<std::vector<Detection>>& detections, const DatasetManifest& manifest,
                             double iou_threshold = 0.5, CorLocMode mode = CorLocMode::Literal);

struct EvalConfig {
    double iou_threshold = 0.5;
    ApMode ap_mode = ApMode::AllPoint;
    CorLocMode corloc_mode = CorLocMode::Literal;
};

struct EvalReport {
    std::map<std::string, double> per_class_ap;  // evaluated classes only
    double map = 0.0;
    std::optional<double> corloc;
    int n_images = 0;
    EvalConfig config;
};

EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& detections,
                               const DatasetManifest& manifest, const EvalConfig& cfg = {});

// {"per_class_ap": {...}, "map": r, "corloc": r|null, "n_images": n, "config": {...}}
void write_eval_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_eval_report(const std::filesystem::path& path);

}  // namespace dagan
