#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dagan/boxes.hpp"
#include "dagan/image.hpp"
#include "dagan/rng.hpp"

namespace dagan {

struct ImageSample {
    std::string image;   // path relative to the manifest directory
    std::string domain;  // "source" or "target"
    std::vector<int> labels;
    std::vector<BoxAnnotation> boxes;
};

struct DatasetManifest {
    std::vector<ImageSample> samples;
    std::vector<std::string> classes;
    std::string provenance;
    std::filesystem::path root;  // directory the sample paths resolve against

    std::filesystem::path resolve(const ImageSample& s) const { return root / s.image; }
};

// JSON-lines manifest plus a classes.json sidecar in the same directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

struct GenCorpusConfig {
    int n_train_source = 200;
    int n_train_target = 200;
    int n_test_target = 100;
    int n_classes = 3;
    int image_side = 64;
    std::uint64_t seed = 1;
};

struct DegradeConfig {
    double blur_sigma_lo = 1.0, blur_sigma_hi = 2.5;
    std::vector<int> motion_lengths = {3, 5, 7};
    double desat_lo = 0.3, desat_hi = 0.7;
    double contrast_lo = 0.2, contrast_hi = 0.5;
    double noise_lo = 0.01, noise_hi = 0.03;  // fraction of the dynamic range (2)
    void validate() const;
};

struct SyntheticCorpus {
    DatasetManifest source_train;
    DatasetManifest target_train;          // boxes withheld
    DatasetManifest target_train_labeled;  // same images, boxes kept; upper-bound regime only
    DatasetManifest target_test;
};

// Renders one scene; boxes are exact mask envelopes. Exposed for tests.
struct Scene {
    Tensor image;
    std::vector<BoxAnnotation> boxes;
};
Scene render_scene(Rng& rng, int side, int n_classes);

SyntheticCorpus gen_synthetic_corpus(const GenCorpusConfig& cfg, const DegradeConfig& deg,
                                     const std::filesystem::path& out_dir);

// Applies, in order: gaussian blur, horizontal motion blur, desaturation
// toward luma, contrast compression toward the scene mean, additive noise;
// clamps to [-1,1]. Parameters are drawn from rng up front.
Tensor degrade(const Tensor& image, const DegradeConfig& cfg, Rng& rng);

struct AugmentKind {
    enum Type { Noise, Blur } type = Noise;
    double sigma = 0.05;  // noise: fraction of dynamic range; blur: gaussian sigma
    int kernel = 5;       // blur only, odd
};

// Writes augmented copies next to out_manifest and returns a manifest holding
// the originals followed by the copies. Boxes are carried over unchanged.
DatasetManifest classic_augment(const DatasetManifest& src, const AugmentKind& kind,
                                const std::filesystem::path& out_manifest, std::uint64_t seed);

// Bilinear resize to resize_to, then a random (train) or centered (rng null)
// crop_to x crop_to window.
Tensor resize_and_crop(const Tensor& image, int resize_to, int crop_to, Rng* rng);

}  // namespace dagan
