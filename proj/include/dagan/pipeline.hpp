#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dagan/config.hpp"
#include "dagan/detector.hpp"
#include "dagan/metrics.hpp"

namespace dagan {

struct CorpusPaths {
    std::filesystem::path dir, source_train, target_train, target_train_labeled, target_test;
};

CorpusPaths corpus_paths(const PipelineConfig& cfg);
// generates the corpus under <out>/corpus; an existing corpus is reused only
// when its recorded config matches, otherwise the mismatch is an error
CorpusPaths run_gen_corpus(const PipelineConfig& cfg);

// derived per-stage seeds so every stage is a pure function of cfg.seed
std::uint64_t stage_seed(const PipelineConfig& cfg, const std::string& stage);

GanArtifacts run_train_gan(const PipelineConfig& cfg, const std::filesystem::path& source_manifest,
                           const std::filesystem::path& target_manifest, const std::filesystem::path& out_dir,
                           std::uint64_t seed);

// loads the generators from a train-gan output directory and translates the
// source manifest; returns the new manifest path
std::filesystem::path run_transform(const PipelineConfig& cfg, const std::filesystem::path& gan_dir,
                                    const std::filesystem::path& source_manifest,
                                    const std::filesystem::path& out_dir);

struct DetectorArtifacts {
    std::filesystem::path checkpoint, loss_csv;
};

DetectorArtifacts run_train_detector(const PipelineConfig& cfg, const std::filesystem::path& train_manifest,
                                     const std::filesystem::path& out_dir, std::uint64_t seed);

DetectorParams load_detector(const std::filesystem::path& checkpoint, const DetectorSpec& spec);

// runs the detector over the test manifest (detections are rescaled back to
// native image coordinates), writes detections.jsonl + report.json
EvalReport run_evaluate(const PipelineConfig& cfg, const std::filesystem::path& detector_checkpoint,
                        const std::filesystem::path& test_manifest, const std::filesystem::path& out_dir);
// scores a precomputed detections file instead of running a detector
EvalReport run_evaluate_detections(const PipelineConfig& cfg, const std::filesystem::path& detections,
                                   const std::filesystem::path& test_manifest, const std::filesystem::path& out_dir);

// the unsupervised premise, enforced at every training entry point: only the
// upper-bound regime may see target-domain boxes
void audit_unsupervised(const DatasetManifest& m, const std::string& regime);

struct RegimeRow {
    std::string regime;
    double map = 0.0;                 // median over compare seeds
    std::optional<double> corloc;     // median; absent if any seed lacks one
    std::vector<double> seed_maps;
    std::filesystem::path train_manifest;  // what the detector consumed
};

struct CompareResult {
    std::vector<RegimeRow> rows;  // table order: lower bound first, upper bound last
    std::filesystem::path table_csv, results_json;
};

CompareResult run_compare(const PipelineConfig& cfg);

// merges evaluation report JSONs into one plot-ready CSV
void run_report(const std::vector<std::filesystem::path>& report_jsons, const std::filesystem::path& out_csv);

// full command-line entry point; returns the process exit code
// (0 ok, 1 usage, 2 config error, 3 missing artifact, 4 numeric failure)
int cli_main(int argc, const char* const* argv);

}  // namespace dagan
