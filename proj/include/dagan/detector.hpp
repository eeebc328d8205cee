#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "dagan/adam.hpp"
#include "dagan/data.hpp"
#include "dagan/ops.hpp"

namespace dagan {

// Single-shot anchor-grid detector: 4 stride-2 conv blocks take side
// grid*16 down to the grid, a linear head emits per anchor one objectness
// logit, 4 box offsets, and n_classes class logits.
struct DetectorSpec {
    int n_classes = 3;
    int grid = 4;  // cells per side; input side is grid * 16
    std::vector<double> anchor_sizes = {0.25, 0.5};  // square side / image side
    int base_width = 16;

    int anchors_per_cell() const { return static_cast<int>(anchor_sizes.size()); }
    int input_side() const { return grid * 16; }
    int head_channels() const { return anchors_per_cell() * (5 + n_classes); }
    void validate() const;
};

struct DetectorParams {
    DetectorSpec spec;
    ParamMap params;
};

DetectorParams build_detector(const DetectorSpec& spec, std::uint64_t seed);

// [B, 3, S, S] -> [B, A*(5+C), G, G] raw logits; channel blocks are
// [objectness A | offsets 4A | classes C*A], anchor-major inside each block
Tensor detector_forward(const DetectorParams& d, const Tensor& image);

// pixel-space anchor boxes, flat index (a*grid + row)*grid + col; boxes may
// overhang the image edge
std::vector<BoundingBox> anchor_grid(const DetectorSpec& spec);

struct AnchorAssignment {
    // >= 0: positive with that GT index; -1 negative; -2 ignore
    std::vector<int> labels;
};

// IoU >= 0.5 against the best GT is positive, [0.4, 0.5) ignore, else
// negative; every GT is guaranteed at least one positive anchor
AnchorAssignment match_anchors(const std::vector<BoxAnnotation>& gt, const DetectorSpec& spec);

// offsets relative to an anchor: (d cx / w_a, d cy / h_a, log w ratio, log h ratio)
std::array<double, 4> encode_box(const BoundingBox& gt, const BoundingBox& anchor);
// inverse of encode_box, then clamped to [0, side]
BoundingBox decode_box(const std::array<double, 4>& t, const BoundingBox& anchor, double side);

// objectness bce over non-ignored anchors + class cross-entropy and L1
// offset loss over positives, unit weights; image is [3, S, S]
Tensor detector_loss(const DetectorParams& d, const Tensor& image, const AnchorAssignment& assignment,
                     const std::vector<BoxAnnotation>& gt);

// per-class greedy suppression, survivors sorted by confidence descending
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

std::vector<Detection> detect(const DetectorParams& d, const Tensor& image, double conf_threshold = 0.05,
                              double nms_iou = 0.45);

struct DetectorTrainResult {
    DetectorParams params;
    std::vector<double> epoch_loss;  // mean per epoch
};

// Adam on shuffled single-image steps; optionally writes "epoch,loss" rows
DetectorTrainResult train_detector(const DatasetManifest& manifest, const DetectorSpec& spec, int epochs,
                                   std::uint64_t seed, const std::filesystem::path& loss_csv = {});

// JSON lines {"image": id, "class": c, "confidence": p, "box": [...]},
// aligned to and validated against the manifest on load
void save_detections(const std::vector<std::vector<Detection>>& dets, const DatasetManifest& manifest,
                     const std::filesystem::path& path);
std::vector<std::vector<Detection>> load_detections(const std::filesystem::path& path,
                                                    const DatasetManifest& manifest);

}  // namespace dagan
