#include <cstdlib>
#include <fstream>
#include <initializer_list>

#include "dagan/config.hpp"
#include "json.hpp"

namespace dagan {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& prefix, std::initializer_list<const char*> allowed) {
    if (!j.is_object())
        throw ConfigError("config: " + (prefix.empty() ? std::string("document") : prefix) + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* a : allowed) known |= it.key() == a;
        if (!known) throw ConfigError("config: unknown key " + prefix + it.key());
    }
}

template <typename T>
void get_to(const json& j, const char* key, const std::string& prefix, T& out) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for " + prefix + key + ": " + e.what());
    }
}

void get_path(const json& j, const char* key, const std::string& prefix, std::filesystem::path& out) {
    std::string s = out.generic_string();
    get_to(j, key, prefix, s);
    out = s;
}

GanMode mode_from_string(const std::string& s) {
    if (s == "cycle") return GanMode::Cycle;
    if (s == "forward") return GanMode::Forward;
    throw ConfigError("config: gan.mode must be \"cycle\" or \"forward\", got \"" + s + "\"");
}

ApMode ap_mode_from_string(const std::string& s) {
    if (s == "all_point") return ApMode::AllPoint;
    if (s == "voc11") return ApMode::Voc11;
    throw ConfigError("config: eval.ap_mode must be \"all_point\" or \"voc11\", got \"" + s + "\"");
}

CorLocMode corloc_mode_from_string(const std::string& s) {
    if (s == "literal") return CorLocMode::Literal;
    if (s == "image_top1") return CorLocMode::PerImageTop1;
    throw ConfigError("config: eval.corloc_mode must be \"literal\" or \"image_top1\", got \"" + s + "\"");
}

std::vector<AugmentKind> augment_grid_from_json(const json& arr) {
    if (!arr.is_array()) throw ConfigError("config: compare.augment_grid must be an array");
    std::vector<AugmentKind> grid;
    for (const auto& e : arr) {
        check_keys(e, "compare.augment_grid[].", {"type", "sigma", "kernel"});
        AugmentKind k;
        std::string type = "noise";
        get_to(e, "type", "compare.augment_grid[].", type);
        if (type == "noise")
            k.type = AugmentKind::Noise;
        else if (type == "blur")
            k.type = AugmentKind::Blur;
        else
            throw ConfigError("config: augment type must be \"noise\" or \"blur\", got \"" + type + "\"");
        get_to(e, "sigma", "compare.augment_grid[].", k.sigma);
        get_to(e, "kernel", "compare.augment_grid[].", k.kernel);
        grid.push_back(k);
    }
    return grid;
}

PipelineConfig decode(const json& root) {
    PipelineConfig cfg;
    check_keys(root, "", {"seed", "out_dir", "corpus", "degrade", "gan", "detector", "eval", "compare"});
    get_to(root, "seed", "", cfg.seed);
    get_path(root, "out_dir", "", cfg.out_dir);

    if (root.contains("corpus")) {
        const json& c = root.at("corpus");
        check_keys(c, "corpus.", {"n_train_source", "n_train_target", "n_test_target", "n_classes", "image_side"});
        get_to(c, "n_train_source", "corpus.", cfg.corpus.n_train_source);
        get_to(c, "n_train_target", "corpus.", cfg.corpus.n_train_target);
        get_to(c, "n_test_target", "corpus.", cfg.corpus.n_test_target);
        get_to(c, "n_classes", "corpus.", cfg.corpus.n_classes);
        get_to(c, "image_side", "corpus.", cfg.corpus.image_side);
    }

    if (root.contains("degrade")) {
        const json& d = root.at("degrade");
        check_keys(d, "degrade.",
                   {"blur_sigma_lo", "blur_sigma_hi", "motion_lengths", "desat_lo", "desat_hi", "contrast_lo",
                    "contrast_hi", "noise_lo", "noise_hi"});
        get_to(d, "blur_sigma_lo", "degrade.", cfg.degrade.blur_sigma_lo);
        get_to(d, "blur_sigma_hi", "degrade.", cfg.degrade.blur_sigma_hi);
        get_to(d, "motion_lengths", "degrade.", cfg.degrade.motion_lengths);
        get_to(d, "desat_lo", "degrade.", cfg.degrade.desat_lo);
        get_to(d, "desat_hi", "degrade.", cfg.degrade.desat_hi);
        get_to(d, "contrast_lo", "degrade.", cfg.degrade.contrast_lo);
        get_to(d, "contrast_hi", "degrade.", cfg.degrade.contrast_hi);
        get_to(d, "noise_lo", "degrade.", cfg.degrade.noise_lo);
        get_to(d, "noise_hi", "degrade.", cfg.degrade.noise_hi);
    }

    if (root.contains("gan")) {
        const json& g = root.at("gan");
        check_keys(g, "gan.",
                   {"lambda_cycle", "learning_rate", "beta1", "beta2", "batch_size", "resize_to", "crop_to",
                    "total_steps", "mode", "conditioned", "generator", "discriminator"});
        get_to(g, "lambda_cycle", "gan.", cfg.gan.lambda_cycle);
        get_to(g, "learning_rate", "gan.", cfg.gan.learning_rate);
        get_to(g, "beta1", "gan.", cfg.gan.beta1);
        get_to(g, "beta2", "gan.", cfg.gan.beta2);
        get_to(g, "batch_size", "gan.", cfg.gan.batch_size);
        get_to(g, "resize_to", "gan.", cfg.gan.resize_to);
        get_to(g, "crop_to", "gan.", cfg.gan.crop_to);
        get_to(g, "total_steps", "gan.", cfg.gan.total_steps);
        if (g.contains("mode")) {
            std::string m;
            get_to(g, "mode", "gan.", m);
            cfg.gan.mode = mode_from_string(m);
        }
        get_to(g, "conditioned", "gan.", cfg.gan.conditioned);
        if (g.contains("generator")) {
            const json& gg = g.at("generator");
            check_keys(gg, "gan.generator.", {"base_width", "n_resblocks", "n_downsample"});
            get_to(gg, "base_width", "gan.generator.", cfg.gan.gen.base_width);
            get_to(gg, "n_resblocks", "gan.generator.", cfg.gan.gen.n_resblocks);
            get_to(gg, "n_downsample", "gan.generator.", cfg.gan.gen.n_downsample);
        }
        if (g.contains("discriminator")) {
            const json& gd = g.at("discriminator");
            check_keys(gd, "gan.discriminator.", {"n_layers", "base_width"});
            get_to(gd, "n_layers", "gan.discriminator.", cfg.gan.disc.n_layers);
            get_to(gd, "base_width", "gan.discriminator.", cfg.gan.disc.base_width);
        }
    }

    if (root.contains("detector")) {
        const json& d = root.at("detector");
        check_keys(d, "detector.", {"grid", "anchor_sizes", "base_width", "epochs"});
        get_to(d, "grid", "detector.", cfg.detector.grid);
        get_to(d, "anchor_sizes", "detector.", cfg.detector.anchor_sizes);
        get_to(d, "base_width", "detector.", cfg.detector.base_width);
        get_to(d, "epochs", "detector.", cfg.detector_epochs);
    }

    if (root.contains("eval")) {
        const json& e = root.at("eval");
        check_keys(e, "eval.", {"iou_threshold", "ap_mode", "corloc_mode", "conf_threshold", "nms_iou"});
        get_to(e, "iou_threshold", "eval.", cfg.eval.iou_threshold);
        if (e.contains("ap_mode")) {
            std::string m;
            get_to(e, "ap_mode", "eval.", m);
            cfg.eval.ap_mode = ap_mode_from_string(m);
        }
        if (e.contains("corloc_mode")) {
            std::string m;
            get_to(e, "corloc_mode", "eval.", m);
            cfg.eval.corloc_mode = corloc_mode_from_string(m);
        }
        get_to(e, "conf_threshold", "eval.", cfg.eval.conf_threshold);
        get_to(e, "nms_iou", "eval.", cfg.eval.nms_iou);
    }

    if (root.contains("compare")) {
        const json& c = root.at("compare");
        check_keys(c, "compare.", {"seeds", "augment_grid", "allow_target_labels"});
        get_to(c, "seeds", "compare.", cfg.compare.seeds);
        if (c.contains("augment_grid")) cfg.compare.augment_grid = augment_grid_from_json(c.at("augment_grid"));
        get_to(c, "allow_target_labels", "compare.", cfg.compare.allow_target_labels);
    }

    cfg.detector.n_classes = cfg.corpus.n_classes;
    return cfg;
}

void deep_merge(json& base, const json& patch) {
    if (!base.is_object() || !patch.is_object()) {
        base = patch;
        return;
    }
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        if (base.contains(it.key()))
            deep_merge(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
}

json override_patch(const std::vector<std::pair<std::string, std::string>>& overrides) {
    json patch = json::object();
    for (const auto& [key, text] : overrides) {
        require(!key.empty(), "config: override with empty key");
        json value;
        try {
            value = json::parse(text);
        } catch (const json::exception&) {
            value = text;  // bare words like paths or mode names
        }
        // build the nested object along the dotted path
        json* node = &patch;
        std::size_t start = 0;
        for (std::size_t dot = key.find('.'); dot != std::string::npos; dot = key.find('.', start)) {
            const std::string part = key.substr(start, dot - start);
            require(!part.empty(), "config: malformed override key " + key);
            if (!node->contains(part)) (*node)[part] = json::object();
            node = &(*node)[part];
            start = dot + 1;
        }
        (*node)[key.substr(start)] = value;
    }
    return patch;
}

}  // namespace

void EvalSettings::validate() const {
    require(iou_threshold > 0.0 && iou_threshold <= 1.0, "eval config: iou_threshold must lie in (0,1]");
    require(conf_threshold >= 0.0 && conf_threshold < 1.0, "eval config: conf_threshold must lie in [0,1)");
    require(nms_iou > 0.0 && nms_iou <= 1.0, "eval config: nms_iou must lie in (0,1]");
}

void CompareSettings::validate() const {
    require(seeds >= 1, "compare config: seeds must be positive");
    for (const auto& k : augment_grid) {
        require(k.sigma >= 0.0, "compare config: augment sigma must be >= 0");
        if (k.type == AugmentKind::Blur)
            require(k.kernel >= 1 && k.kernel % 2 == 1, "compare config: blur kernel must be odd and positive");
    }
}

void PipelineConfig::validate() const {
    require(!out_dir.empty(), "config: out_dir must not be empty");
    require(corpus.n_train_source >= 1, "corpus config: n_train_source must be positive");
    require(corpus.n_train_target >= 1, "corpus config: n_train_target must be positive");
    require(corpus.n_test_target >= 1, "corpus config: n_test_target must be positive");
    require(corpus.n_classes >= 1 && corpus.n_classes <= 3, "corpus config: n_classes must lie in [1,3]");
    require(corpus.image_side >= 16, "corpus config: image_side must be at least 16");
    require(detector.n_classes == corpus.n_classes, "config: detector classes must mirror the corpus");
    require(detector_epochs >= 1, "config: detector.epochs must be positive");
    degrade.validate();
    gan.validate();
    detector.validate();
    eval.validate();
    compare.validate();
}

PipelineConfig parse_config_text(const std::string& text,
                                 const std::vector<std::pair<std::string, std::string>>& overrides) {
    json root = json::object();
    bool blank = true;
    for (char c : text) blank &= std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!blank) {
        try {
            root = nlohmann::json::parse(text);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config: not valid JSON: ") + e.what());
        }
    }
    deep_merge(root, override_patch(overrides));
    PipelineConfig cfg = decode(root);
    if (const char* env = std::getenv("DAGAN_OUT_ROOT"); env && *env && cfg.out_dir.is_relative())
        cfg.out_dir = std::filesystem::path(env) / cfg.out_dir;
    cfg.validate();
    return cfg;
}

PipelineConfig parse_config(const std::filesystem::path& path,
                            const std::vector<std::pair<std::string, std::string>>& overrides) {
    if (path.empty()) return parse_config_text("", overrides);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config file not found: " + path.string());
    std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse_config_text(text, overrides);
}

std::string config_to_json(const PipelineConfig& cfg) {
    json grid = json::array();
    for (const auto& k : cfg.compare.augment_grid) {
        json e{{"type", k.type == AugmentKind::Noise ? "noise" : "blur"}, {"sigma", k.sigma}};
        if (k.type == AugmentKind::Blur) e["kernel"] = k.kernel;
        grid.push_back(e);
    }
    json root{
        {"seed", cfg.seed},
        {"out_dir", cfg.out_dir.generic_string()},
        {"corpus",
         {{"n_train_source", cfg.corpus.n_train_source},
          {"n_train_target", cfg.corpus.n_train_target},
          {"n_test_target", cfg.corpus.n_test_target},
          {"n_classes", cfg.corpus.n_classes},
          {"image_side", cfg.corpus.image_side}}},
        {"degrade",
         {{"blur_sigma_lo", cfg.degrade.blur_sigma_lo},
          {"blur_sigma_hi", cfg.degrade.blur_sigma_hi},
          {"motion_lengths", cfg.degrade.motion_lengths},
          {"desat_lo", cfg.degrade.desat_lo},
          {"desat_hi", cfg.degrade.desat_hi},
          {"contrast_lo", cfg.degrade.contrast_lo},
          {"contrast_hi", cfg.degrade.contrast_hi},
          {"noise_lo", cfg.degrade.noise_lo},
          {"noise_hi", cfg.degrade.noise_hi}}},
        {"gan",
         {{"lambda_cycle", cfg.gan.lambda_cycle},
          {"learning_rate", cfg.gan.learning_rate},
          {"beta1", cfg.gan.beta1},
          {"beta2", cfg.gan.beta2},
          {"batch_size", cfg.gan.batch_size},
          {"resize_to", cfg.gan.resize_to},
          {"crop_to", cfg.gan.crop_to},
          {"total_steps", cfg.gan.total_steps},
          {"mode", cfg.gan.mode == GanMode::Cycle ? "cycle" : "forward"},
          {"conditioned", cfg.gan.conditioned},
          {"generator",
           {{"base_width", cfg.gan.gen.base_width},
            {"n_resblocks", cfg.gan.gen.n_resblocks},
            {"n_downsample", cfg.gan.gen.n_downsample}}},
          {"discriminator", {{"n_layers", cfg.gan.disc.n_layers}, {"base_width", cfg.gan.disc.base_width}}}}},
        {"detector",
         {{"grid", cfg.detector.grid},
          {"anchor_sizes", cfg.detector.anchor_sizes},
          {"base_width", cfg.detector.base_width},
          {"epochs", cfg.detector_epochs}}},
        {"eval",
         {{"iou_threshold", cfg.eval.iou_threshold},
          {"ap_mode", cfg.eval.ap_mode == ApMode::AllPoint ? "all_point" : "voc11"},
          {"corloc_mode", cfg.eval.corloc_mode == CorLocMode::Literal ? "literal" : "image_top1"},
          {"conf_threshold", cfg.eval.conf_threshold},
          {"nms_iou", cfg.eval.nms_iou}}},
        {"compare",
         {{"seeds", cfg.compare.seeds},
          {"augment_grid", grid},
          {"allow_target_labels", cfg.compare.allow_target_labels}}}};
    return root.dump(2) + "\n";
}

void write_resolved_config(const PipelineConfig& cfg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "config.json", std::ios::binary);
    if (!out) throw ConfigError("cannot write resolved config under " + dir.string());
    out << config_to_json(cfg);
}

}  // namespace dagan
