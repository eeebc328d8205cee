#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "dagan/pipeline.hpp"

namespace dagan {
namespace {

namespace fs = std::filesystem;

std::string mode_tag(const GanConfig& gan) {
    if (gan.conditioned) return "conditioned";
    return gan.mode == GanMode::Forward ? "forward" : "cycle";
}

void print_report(const EvalReport& rep) {
    for (const auto& [cls, ap] : rep.per_class_ap) std::printf("ap %-12s %.4f\n", cls.c_str(), ap);
    std::printf("map %.4f\n", rep.map);
    if (rep.corloc) std::printf("corloc %.4f\n", *rep.corloc);
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"unpaired image translation pipeline for cross-domain detection"};
    app.require_subcommand(1);

    std::string config_path, seed_txt, out_dir, lambda_txt, steps_txt, epochs_txt, mode;
    std::vector<std::string> sets;
    bool conditioned = false, allow_target = false;

    app.add_option("--config", config_path, "JSON config file; omitted means all defaults");
    app.add_option("--set", sets, "override one config value, dotted.key=value")->type_size(1);
    auto* seed_opt = app.add_option("--seed", seed_txt, "global seed")->check(CLI::Number);
    auto* out_opt = app.add_option("--out-dir", out_dir, "output root");
    auto* lam_opt = app.add_option("--lambda-cycle", lambda_txt, "cycle-consistency weight")->check(CLI::Number);
    auto* steps_opt = app.add_option("--steps", steps_txt, "gan training steps")->check(CLI::Number);
    auto* epochs_opt = app.add_option("--epochs", epochs_txt, "detector training epochs")->check(CLI::Number);
    auto* mode_opt = app.add_option("--mode", mode, "gan mode")->check(CLI::IsMember({"cycle", "forward"}));
    auto* cond_opt = app.add_flag("--conditioned,!--no-conditioned", conditioned, "one generator per class");
    auto* upper_opt = app.add_flag("--allow-target-labels", allow_target, "enable the box-reading upper bound");

    std::string src_arg, tgt_arg, gan_out, gan_dir, tf_out, train_arg, det_out;
    std::string det_ckpt, dets_file, test_arg, eval_out, report_out;
    std::vector<std::string> report_inputs;

    auto* gen = app.add_subcommand("gen-corpus", "render the synthetic two-domain corpus");
    auto* tg = app.add_subcommand("train-gan", "train the translation networks");
    tg->add_option("--source", src_arg, "source manifest (default: generated corpus)");
    tg->add_option("--target", tgt_arg, "target manifest (default: generated corpus)");
    tg->add_option("--gan-out", gan_out, "output directory (default: <out>/gan/<mode>)");
    auto* tf = app.add_subcommand("transform", "translate a dataset with a trained model");
    tf->add_option("--gan-dir", gan_dir, "train-gan output directory (default: <out>/gan/<mode>)");
    tf->add_option("--source", src_arg, "manifest to translate (default: corpus source train)");
    tf->add_option("--transform-out", tf_out, "output directory (default: <out>/translated/<mode>)");
    auto* td = app.add_subcommand("train-detector", "train the detector on a manifest");
    td->add_option("--train", train_arg, "training manifest (default: <out>/translated/<mode>/manifest.jsonl)");
    td->add_option("--detector-out", det_out, "output directory (default: <out>/detector/main)");
    auto* ev = app.add_subcommand("evaluate", "run and score the detector on a test manifest");
    auto* det_opt = ev->add_option("--detector", det_ckpt, "checkpoint (default: <out>/detector/main/detector.dagn)");
    auto* dets_opt = ev->add_option("--detections", dets_file, "score a saved detections file instead");
    det_opt->excludes(dets_opt);
    ev->add_option("--test", test_arg, "test manifest (default: corpus target test)");
    ev->add_option("--eval-out", eval_out, "output directory (default: <out>/eval/main)");
    auto* cmp = app.add_subcommand("compare", "train and evaluate every regime, emit the comparison table");
    auto* rp = app.add_subcommand("report", "merge evaluation reports into one csv");
    rp->add_option("inputs", report_inputs, "report.json files")->required();
    rp->add_option("--report-out", report_out, "output csv (default: <out>/report.csv)");

    for (auto* sub : {gen, tg, tf, td, ev, cmp, rp}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        std::vector<std::pair<std::string, std::string>> overrides;
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos || eq == 0)
                throw ConfigError("--set expects dotted.key=value, got '" + kv + "'");
            overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
        }
        // convenience flags win over --set and the file
        if (seed_opt->count()) overrides.emplace_back("seed", seed_txt);
        if (out_opt->count()) overrides.emplace_back("out_dir", out_dir);
        if (lam_opt->count()) overrides.emplace_back("gan.lambda_cycle", lambda_txt);
        if (steps_opt->count()) overrides.emplace_back("gan.total_steps", steps_txt);
        if (epochs_opt->count()) overrides.emplace_back("detector.epochs", epochs_txt);
        if (mode_opt->count()) overrides.emplace_back("gan.mode", mode);
        if (cond_opt->count()) overrides.emplace_back("gan.conditioned", conditioned ? "true" : "false");
        if (upper_opt->count()) overrides.emplace_back("compare.allow_target_labels", allow_target ? "true" : "false");

        const PipelineConfig cfg =
            config_path.empty() ? parse_config_text("", overrides) : parse_config(config_path, overrides);
        const CorpusPaths cp = corpus_paths(cfg);
        const std::string tag = mode_tag(cfg.gan);
        auto or_default = [](const std::string& given, const fs::path& fallback) {
            return given.empty() ? fallback : fs::path(given);
        };

        if (*gen) {
            std::printf("corpus %s\n", run_gen_corpus(cfg).dir.string().c_str());
        } else if (*tg) {
            GanArtifacts art =
                run_train_gan(cfg, or_default(src_arg, cp.source_train), or_default(tgt_arg, cp.target_train),
                              or_default(gan_out, cfg.out_dir / "gan" / tag), stage_seed(cfg, "gan"));
            for (const auto& [k, path] : art.checkpoints) std::printf("checkpoint %d %s\n", k, path.string().c_str());
        } else if (*tf) {
            fs::path m = run_transform(cfg, or_default(gan_dir, cfg.out_dir / "gan" / tag),
                                       or_default(src_arg, cp.source_train),
                                       or_default(tf_out, cfg.out_dir / "translated" / tag));
            std::printf("manifest %s\n", m.string().c_str());
        } else if (*td) {
            DetectorArtifacts art =
                run_train_detector(cfg, or_default(train_arg, cfg.out_dir / "translated" / tag / "manifest.jsonl"),
                                   or_default(det_out, cfg.out_dir / "detector" / "main"), stage_seed(cfg, "detector"));
            std::printf("checkpoint %s\n", art.checkpoint.string().c_str());
        } else if (*ev) {
            const fs::path out = or_default(eval_out, cfg.out_dir / "eval" / "main");
            const fs::path test = or_default(test_arg, cp.target_test);
            EvalReport rep =
                dets_opt->count()
                    ? run_evaluate_detections(cfg, dets_file, test, out)
                    : run_evaluate(cfg, or_default(det_ckpt, cfg.out_dir / "detector" / "main" / "detector.dagn"),
                                   test, out);
            print_report(rep);
        } else if (*cmp) {
            CompareResult res = run_compare(cfg);
            for (const auto& row : res.rows) {
                std::printf("%-24s map %.4f", row.regime.c_str(), row.map);
                if (row.corloc) std::printf(" corloc %.4f", *row.corloc);
                std::printf("\n");
            }
            std::printf("table %s\n", res.table_csv.string().c_str());
        } else if (*rp) {
            const fs::path out = or_default(report_out, cfg.out_dir / "report.csv");
            run_report(std::vector<fs::path>(report_inputs.begin(), report_inputs.end()), out);
            std::printf("report %s\n", out.string().c_str());
        }
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "dagan: %s\n", e.what());
        return 2;
    } catch (const MissingArtifactError& e) {
        std::fprintf(stderr, "dagan: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "dagan: %s\n", e.what());
        return 4;
    }
}

}  // namespace dagan
