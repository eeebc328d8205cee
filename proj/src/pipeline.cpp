#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include "dagan/gan.hpp"
#include "dagan/image.hpp"
#include "dagan/pipeline.hpp"
#include "json.hpp"

namespace dagan {
namespace fs = std::filesystem;

namespace {

using nlohmann::json;

std::string format_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string augment_regime_name(const AugmentKind& k) {
    if (k.type == AugmentKind::Noise) return "augment-noise-" + format_g(k.sigma);
    return "augment-blur-k" + std::to_string(k.kernel) + "-" + format_g(k.sigma);
}

// the determinism domain of the corpus stage: global seed + corpus + degrade
json corpus_fingerprint(const json& full) {
    json fp = json::object();
    for (const char* key : {"seed", "corpus", "degrade"})
        if (full.contains(key)) fp[key] = full.at(key);
    return fp;
}

std::string rel_to(const fs::path& p, const fs::path& base) {
    std::error_code ec;
    fs::path r = fs::relative(p, base, ec);
    return ec || r.empty() ? p.generic_string() : r.generic_string();
}

}  // namespace

CorpusPaths corpus_paths(const PipelineConfig& cfg) {
    const fs::path dir = cfg.out_dir / "corpus";
    return {dir, dir / "source_train.jsonl", dir / "target_train.jsonl", dir / "target_train_labeled.jsonl",
            dir / "target_test.jsonl"};
}

std::uint64_t stage_seed(const PipelineConfig& cfg, const std::string& stage) {
    return Rng(cfg.seed).fork(stage.c_str()).seed();
}

CorpusPaths run_gen_corpus(const PipelineConfig& cfg) {
    cfg.validate();
    CorpusPaths paths = corpus_paths(cfg);
    const json fp = corpus_fingerprint(json::parse(config_to_json(cfg)));

    if (fs::exists(paths.dir / "config.json")) {
        json stored;
        try {
            std::ifstream in(paths.dir / "config.json");
            stored = json::parse(in);
        } catch (const json::exception&) {
            throw ConfigError("unreadable corpus config at " + (paths.dir / "config.json").string());
        }
        if (corpus_fingerprint(stored) != fp)
            throw ConfigError("corpus at " + paths.dir.string() +
                              " was generated with a different config; remove it or pick another out_dir");
        const bool complete = fs::exists(paths.source_train) && fs::exists(paths.target_train) &&
                              fs::exists(paths.target_train_labeled) && fs::exists(paths.target_test);
        if (complete) return paths;
    }

    GenCorpusConfig gc = cfg.corpus;
    gc.seed = stage_seed(cfg, "corpus");
    gen_synthetic_corpus(gc, cfg.degrade, paths.dir);
    write_resolved_config(cfg, paths.dir);
    return paths;
}

GanArtifacts run_train_gan(const PipelineConfig& cfg, const fs::path& source_manifest, const fs::path& target_manifest,
                           const fs::path& out_dir, std::uint64_t seed) {
    DatasetManifest source = load_manifest(source_manifest);
    DatasetManifest target = load_manifest(target_manifest);
    GanConfig gan = cfg.gan;
    gan.seed = seed;
    GanArtifacts art = run_training(source, target, gan, out_dir);
    write_resolved_config(cfg, out_dir);
    return art;
}

std::filesystem::path run_transform(const PipelineConfig& cfg, const fs::path& gan_dir,
                                    const fs::path& source_manifest, const fs::path& out_dir) {
    if (!fs::is_directory(gan_dir)) throw MissingArtifactError("gan directory not found: " + gan_dir.string());
    std::map<int, fs::path> checkpoints;
    if (fs::exists(gan_dir / "gan.dagn")) checkpoints[-1] = gan_dir / "gan.dagn";
    for (const auto& entry : fs::directory_iterator(gan_dir)) {
        const std::string name = entry.path().filename().string();
        int k = -1;
        if (std::sscanf(name.c_str(), "gan_class%d.dagn", &k) == 1) checkpoints[k] = entry.path();
    }
    if (checkpoints.empty()) throw MissingArtifactError("no gan checkpoints under " + gan_dir.string());

    DatasetManifest source = load_manifest(source_manifest);
    transform_dataset(load_generators(checkpoints), source, cfg.gan.crop_to, out_dir);
    write_resolved_config(cfg, out_dir);
    return out_dir / "manifest.jsonl";
}

DetectorArtifacts run_train_detector(const PipelineConfig& cfg, const fs::path& train_manifest,
                                     const fs::path& out_dir, std::uint64_t seed) {
    DatasetManifest train = load_manifest(train_manifest);
    DetectorArtifacts art{out_dir / "detector.dagn", out_dir / "loss.csv"};
    DetectorTrainResult res = train_detector(train, cfg.detector, cfg.detector_epochs, seed, art.loss_csv);
    save_checkpoint(res.params.params, art.checkpoint);
    write_resolved_config(cfg, out_dir);
    return art;
}

DetectorParams load_detector(const fs::path& checkpoint, const DetectorSpec& spec) {
    spec.validate();
    DetectorParams d{spec, load_checkpoint(checkpoint)};
    if (!d.params.contains("head.w") || d.params.at("head.w").dim(0) != spec.head_channels())
        throw ConfigError("checkpoint " + checkpoint.string() + " does not match the configured detector head");
    return d;
}

namespace {

EvalReport score_and_write(const PipelineConfig& cfg, const std::vector<std::vector<Detection>>& dets,
                           const DatasetManifest& test, const fs::path& out_dir) {
    EvalConfig ec{cfg.eval.iou_threshold, cfg.eval.ap_mode, cfg.eval.corloc_mode};
    EvalReport report = evaluate_detections(dets, test, ec);
    write_eval_report(report, out_dir / "report.json");
    write_resolved_config(cfg, out_dir);
    return report;
}

}  // namespace

EvalReport run_evaluate(const PipelineConfig& cfg, const fs::path& detector_checkpoint, const fs::path& test_manifest,
                        const fs::path& out_dir) {
    DatasetManifest test = load_manifest(test_manifest);
    DetectorParams d = load_detector(detector_checkpoint, cfg.detector);
    const int side = cfg.detector.input_side();

    std::vector<std::vector<Detection>> dets;
    for (const auto& sample : test.samples) {
        Tensor img = load_image(test.resolve(sample));
        const double sx = static_cast<double>(img.dim(2)) / side;
        const double sy = static_cast<double>(img.dim(1)) / side;
        if (img.dim(1) != side || img.dim(2) != side) img = bilinear_resize(img, side, side);
        auto v = detect(d, img, cfg.eval.conf_threshold, cfg.eval.nms_iou);
        for (auto& det : v) {  // back to native image coordinates
            det.box.x_min *= sx;
            det.box.x_max *= sx;
            det.box.y_min *= sy;
            det.box.y_max *= sy;
        }
        dets.push_back(std::move(v));
    }
    save_detections(dets, test, out_dir / "detections.jsonl");
    return score_and_write(cfg, dets, test, out_dir);
}

EvalReport run_evaluate_detections(const PipelineConfig& cfg, const fs::path& detections, const fs::path& test_manifest,
                                   const fs::path& out_dir) {
    DatasetManifest test = load_manifest(test_manifest);
    return score_and_write(cfg, load_detections(detections, test), test, out_dir);
}

void audit_unsupervised(const DatasetManifest& m, const std::string& regime) {
    for (const auto& s : m.samples)
        if (s.domain == "target" && !s.boxes.empty())
            throw ConfigError("unsupervised premise violated: regime '" + regime +
                              "' would read target-domain boxes from " + s.image);
}

CompareResult run_compare(const PipelineConfig& cfg) {
    cfg.validate();
    const CorpusPaths cp = run_gen_corpus(cfg);
    const fs::path cmp = cfg.out_dir / "compare";
    write_resolved_config(cfg, cmp);

    DatasetManifest source_train = load_manifest(cp.source_train);
    audit_unsupervised(load_manifest(cp.target_train), "gan-training");

    struct SeedEval {
        double map;
        std::optional<double> corloc;
        fs::path report, train_manifest;
    };
    std::vector<std::string> order;
    std::map<std::string, std::vector<SeedEval>> acc;

    for (int s = 0; s < cfg.compare.seeds; ++s) {
        const fs::path sd = cmp / ("seed" + std::to_string(s));
        Rng sr = Rng(stage_seed(cfg, "compare")).fork(static_cast<std::uint64_t>(s));

        auto eval_regime = [&](const std::string& regime, const fs::path& train_manifest) {
            DatasetManifest tm = load_manifest(train_manifest);
            if (regime != "upper-bound") audit_unsupervised(tm, regime);
            auto det = run_train_detector(cfg, train_manifest, sd / "detector" / regime,
                                          sr.fork(("det:" + regime).c_str()).seed());
            EvalReport rep = run_evaluate(cfg, det.checkpoint, cp.target_test, sd / "eval" / regime);
            acc[regime].push_back({rep.map, rep.corloc, sd / "eval" / regime / "report.json", train_manifest});
            if (s == 0) order.push_back(regime);
        };

        auto gan_regime = [&](const std::string& regime, GanMode mode, bool conditioned) {
            PipelineConfig rc = cfg;
            rc.gan.mode = mode;
            rc.gan.conditioned = conditioned;
            const fs::path gd = sd / "gan" / regime;
            run_train_gan(rc, cp.source_train, cp.target_train, gd, sr.fork(("gan:" + regime).c_str()).seed());
            const fs::path tm = run_transform(rc, gd, cp.source_train, sd / "translated" / regime);
            eval_regime(regime, tm);
        };

        eval_regime("lower-bound", cp.source_train);
        for (const auto& kind : cfg.compare.augment_grid) {
            const std::string name = augment_regime_name(kind);
            const fs::path manifest = sd / "augment" / name / "manifest.jsonl";
            classic_augment(source_train, kind, manifest, sr.fork(("aug:" + name).c_str()).seed());
            eval_regime(name, manifest);
        }
        gan_regime("forward-gan", GanMode::Forward, false);
        gan_regime("cycle-gan", GanMode::Cycle, false);
        gan_regime("conditioned", GanMode::Cycle, true);
        if (cfg.compare.allow_target_labels) eval_regime("upper-bound", cp.target_train_labeled);
    }

    CompareResult result;
    result.table_csv = cmp / "table.csv";
    result.results_json = cmp / "results.json";

    json rows_json = json::array();
    std::ofstream table(result.table_csv);
    if (!table) throw ConfigError("cannot write compare table: " + result.table_csv.string());
    table << "regime,map,corloc\n";

    for (const auto& regime : order) {
        const auto& evals = acc.at(regime);
        RegimeRow row;
        row.regime = regime;
        row.train_manifest = evals.front().train_manifest;
        std::vector<double> maps, corlocs;
        bool all_corloc = true;
        json seeds_json = json::array();
        for (const auto& e : evals) {
            maps.push_back(e.map);
            if (e.corloc)
                corlocs.push_back(*e.corloc);
            else
                all_corloc = false;
            json se{{"map", e.map},
                    {"report", rel_to(e.report, cmp)},
                    {"train_manifest", rel_to(e.train_manifest, cmp)}};
            se["corloc"] = e.corloc ? json(*e.corloc) : json();
            seeds_json.push_back(se);
        }
        row.seed_maps = maps;
        row.map = median(maps);
        if (all_corloc && !corlocs.empty()) row.corloc = median(corlocs);

        table << regime << ',' << format_full(row.map) << ',' << (row.corloc ? format_full(*row.corloc) : "") << "\n";
        json rj{{"regime", regime}, {"map", row.map}, {"seeds", seeds_json}};
        rj["corloc"] = row.corloc ? json(*row.corloc) : json();
        rows_json.push_back(rj);
        result.rows.push_back(std::move(row));
    }
    table.close();

    std::ofstream rj(result.results_json);
    if (!rj) throw ConfigError("cannot write compare results: " + result.results_json.string());
    rj << json{{"rows", rows_json}}.dump(2) << "\n";
    return result;
}

void run_report(const std::vector<fs::path>& report_jsons, const fs::path& out_csv) {
    require(!report_jsons.empty(), "report: need at least one report JSON");
    std::vector<std::pair<std::string, EvalReport>> reports;
    std::vector<std::string> classes;
    for (const auto& p : report_jsons) {
        EvalReport r = load_eval_report(p);
        const fs::path parent = p.parent_path();
        reports.emplace_back(parent.empty() ? p.stem().string() : parent.filename().string(), std::move(r));
        for (const auto& [cls, ap] : reports.back().second.per_class_ap)
            if (std::find(classes.begin(), classes.end(), cls) == classes.end()) classes.push_back(cls);
    }
    std::sort(classes.begin(), classes.end());

    if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
    std::ofstream out(out_csv);
    if (!out) throw ConfigError("cannot write report csv: " + out_csv.string());
    out << "name,map,corloc";
    for (const auto& c : classes) out << ",ap:" << c;
    out << "\n";
    for (const auto& [name, r] : reports) {
        out << name << ',' << format_full(r.map) << ',' << (r.corloc ? format_full(*r.corloc) : "");
        for (const auto& c : classes) {
            out << ',';
            auto it = r.per_class_ap.find(c);
            if (it != r.per_class_ap.end()) out << format_full(it->second);
        }
        out << "\n";
    }
}

}  // namespace dagan
