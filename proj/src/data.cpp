#include <algorithm>
#include <cmath>
#include <fstream>

#include "dagan/data.hpp"
#include "json.hpp"

namespace dagan {
namespace {

using nlohmann::json;

const char* kClassNames[3] = {"circle", "triangle", "rectangle"};

json box_to_json(const BoxAnnotation& a) {
    return json{{"class", a.class_id}, {"box", {a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max}}};
}

BoxAnnotation box_from_json(const json& j) {
    BoxAnnotation a;
    a.class_id = j.at("class").get<int>();
    const auto& b = j.at("box");
    if (!b.is_array() || b.size() != 4) throw ConfigError("manifest box must be [x_min,y_min,x_max,y_max]");
    a.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    a.box.validate();
    return a;
}

// exact at both endpoints: t=0 gives a, t=1 gives b
double lerp(double a, double b, double t) { return (1.0 - t) * a + t * b; }

// h in [0,1), s,v in [0,1]
void hsv_to_rgb(double h, double s, double v, double out[3]) {
    const double hh = h * 6.0;
    const int i = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: out[0] = v; out[1] = t; out[2] = p; break;
        case 1: out[0] = q; out[1] = v; out[2] = p; break;
        case 2: out[0] = p; out[1] = v; out[2] = t; break;
        case 3: out[0] = p; out[1] = q; out[2] = v; break;
        case 4: out[0] = t; out[1] = p; out[2] = v; break;
        default: out[0] = v; out[1] = p; out[2] = q; break;
    }
}

// Rasterizes one shape mask; returns false if it has no foreground.
bool raster_shape(std::vector<std::uint8_t>& mask, int side, int cls, double cx, double cy, double sw, double sh,
                  Rng& rng) {
    std::fill(mask.begin(), mask.end(), 0);
    bool any = false;
    if (cls == 0) {  // circle; sw is the diameter
        const double r = sw / 2.0;
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                if (dx * dx + dy * dy <= r * r) {
                    mask[static_cast<std::size_t>(y) * side + x] = 1;
                    any = true;
                }
            }
    } else if (cls == 1) {  // triangle: apex jittered, base at the bottom
        const double ax = cx + rng.uniform(-sw / 4.0, sw / 4.0), ay = cy - sh / 2.0;
        const double bx = cx - sw / 2.0, by = cy + sh / 2.0;
        const double qx = cx + sw / 2.0, qy = cy + sh / 2.0;
        auto edge = [](double ex0, double ey0, double ex1, double ey1, double px, double py) {
            return (ex1 - ex0) * (py - ey0) - (ey1 - ey0) * (px - ex0);
        };
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                const double e0 = edge(ax, ay, bx, by, px, py);
                const double e1 = edge(bx, by, qx, qy, px, py);
                const double e2 = edge(qx, qy, ax, ay, px, py);
                if ((e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0)) {
                    mask[static_cast<std::size_t>(y) * side + x] = 1;
                    any = true;
                }
            }
    } else {  // rectangle
        const int x0 = static_cast<int>(std::lround(cx - sw / 2.0)), x1 = static_cast<int>(std::lround(cx + sw / 2.0));
        const int y0 = static_cast<int>(std::lround(cy - sh / 2.0)), y1 = static_cast<int>(std::lround(cy + sh / 2.0));
        for (int y = std::max(0, y0); y < std::min(side, y1); ++y)
            for (int x = std::max(0, x0); x < std::min(side, x1); ++x) {
                mask[static_cast<std::size_t>(y) * side + x] = 1;
                any = true;
            }
    }
    return any;
}

}  // namespace

void DegradeConfig::validate() const {
    require(blur_sigma_lo <= blur_sigma_hi && blur_sigma_lo >= 0.0, "degrade: blur sigma range invalid");
    require(desat_lo <= desat_hi && desat_lo >= 0.0 && desat_hi <= 1.0, "degrade: desaturation range invalid");
    require(contrast_lo <= contrast_hi && contrast_lo >= 0.0 && contrast_hi <= 1.0, "degrade: contrast range invalid");
    require(noise_lo <= noise_hi && noise_lo >= 0.0, "degrade: noise range invalid");
    require(!motion_lengths.empty(), "degrade: motion kernel set empty");
    for (int l : motion_lengths) require(l >= 1 && l % 2 == 1, "degrade: motion kernel lengths must be odd");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("manifest not found: " + path.string());
    DatasetManifest m;
    m.root = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": bad manifest line: " + e.what());
        }
        ImageSample s;
        s.image = j.at("image").get<std::string>();
        s.domain = j.at("domain").get<std::string>();
        if (s.domain != "source" && s.domain != "target")
            throw ConfigError(path.string() + ": domain must be source|target");
        for (const auto& l : j.at("labels")) s.labels.push_back(l.get<int>());
        for (const auto& b : j.at("boxes")) s.boxes.push_back(box_from_json(b));
        m.samples.push_back(std::move(s));
    }
    const auto sidecar = m.root / "classes.json";
    std::ifstream sc(sidecar);
    if (!sc) throw MissingArtifactError("class registry not found: " + sidecar.string());
    json j = json::parse(sc, nullptr, true, true);
    for (const auto& c : j.at("classes")) m.classes.push_back(c.get<std::string>());
    if (j.contains("provenance")) m.provenance = j.at("provenance").get<std::string>();
    for (const auto& s : m.samples) {
        for (int l : s.labels)
            if (l < 0 || l >= static_cast<int>(m.classes.size()))
                throw ConfigError(path.string() + ": label id out of range");
        for (const auto& b : s.boxes)
            if (b.class_id < 0 || b.class_id >= static_cast<int>(m.classes.size()))
                throw ConfigError(path.string() + ": box class id out of range");
    }
    return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write manifest: " + path.string());
    for (const auto& s : m.samples) {
        json j{{"image", s.image}, {"domain", s.domain}, {"labels", s.labels}, {"boxes", json::array()}};
        for (const auto& b : s.boxes) j["boxes"].push_back(box_to_json(b));
        out << j.dump() << "\n";
    }
    const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    std::ofstream sc(dir / "classes.json");
    json j{{"classes", m.classes}, {"provenance", m.provenance}};
    sc << j.dump(2) << "\n";
}

Scene render_scene(Rng& rng, int side, int n_classes) {
    require(side >= 32, "render_scene: side must be >= 32");
    require(n_classes >= 1 && n_classes <= 3, "render_scene: n_classes must be 1..3");
    const std::size_t plane = static_cast<std::size_t>(side) * side;
    std::vector<double> img(3 * plane);

    // background: smooth gradient between two muted colors + texture noise
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) c0[c] = rng.uniform(-0.7, 0.3);
    for (int c = 0; c < 3; ++c) c1[c] = rng.uniform(-0.7, 0.3);
    const double theta = rng.uniform(0.0, 2.0 * 3.141592653589793);
    const double dx = std::cos(theta), dy = std::sin(theta);
    const double pmin = std::min(0.0, dx * (side - 1)) + std::min(0.0, dy * (side - 1));
    const double pmax = std::max(0.0, dx * (side - 1)) + std::max(0.0, dy * (side - 1));
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double t = (dx * x + dy * y - pmin) / (pmax - pmin);
            for (int c = 0; c < 3; ++c)
                img[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * side + x] =
                    lerp(c0[c], c1[c], t);
        }
    // texture amplitude keeps clean-scene edge energy well above what the
    // degrade pipeline's additive noise can reintroduce after blurring
    for (double& v : img) v += rng.uniform(-0.12, 0.12);

    Scene scene;
    const int n_shapes = static_cast<int>(rng.uniform_int(1, 3));
    std::vector<std::uint8_t> mask(plane);
    for (int si = 0; si < n_shapes; ++si) {
        for (int attempt = 0; attempt < 40; ++attempt) {
            const int cls = static_cast<int>(rng.uniform_int(0, n_classes - 1));
            const double sw = rng.uniform(10.0, 28.0);
            const double sh = cls == 0 ? sw : rng.uniform(10.0, 28.0);
            const double margin = std::max(sw, sh) / 2.0 + 1.0;
            const double cx = rng.uniform(margin, side - margin);
            const double cy = rng.uniform(margin, side - margin);
            if (!raster_shape(mask, side, cls, cx, cy, sw, sh, rng)) continue;
            BoundingBox bb = mask_to_bbox(mask, side, side);
            bool clash = false;
            for (const auto& prev : scene.boxes) clash |= iou(prev.box, bb) >= 0.3;
            if (clash) continue;

            double col[3];
            hsv_to_rgb(rng.uniform(0.0, 1.0), rng.uniform(0.8, 1.0), rng.uniform(0.75, 1.0), col);
            for (std::size_t p = 0; p < plane; ++p)
                if (mask[p])
                    for (int c = 0; c < 3; ++c) img[static_cast<std::size_t>(c) * plane + p] = col[c] * 2.0 - 1.0;
            scene.boxes.push_back({cls, bb});
            break;
        }
        // placement failure after the retry budget: scene keeps fewer shapes
    }
    for (double& v : img) v = std::clamp(v, -1.0, 1.0);
    scene.image = Tensor::from_data({3, side, side}, std::move(img));
    return scene;
}

Tensor degrade(const Tensor& image, const DegradeConfig& cfg, Rng& rng) {
    cfg.validate();
    // all parameters drawn before any are applied, in a fixed order
    const double sigma = rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi);
    const int mlen = rng.pick(cfg.motion_lengths);
    const double desat = rng.uniform(cfg.desat_lo, cfg.desat_hi);
    const double contrast = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
    const double noise = rng.uniform(cfg.noise_lo, cfg.noise_hi);

    Tensor out = gaussian_blur(image, sigma);
    out = motion_blur_h(out, mlen);

    std::vector<double> d(out.data());
    const std::size_t plane = static_cast<std::size_t>(out.dim(1)) * out.dim(2);
    if (desat > 0.0) {
        auto y = luma(out);
        for (std::size_t p = 0; p < plane; ++p)
            for (int c = 0; c < 3; ++c) {
                double& v = d[static_cast<std::size_t>(c) * plane + p];
                v = lerp(v, y[p], desat);
            }
    }
    if (contrast > 0.0) {
        double mean = 0.0;
        for (double v : d) mean += v;
        mean /= static_cast<double>(d.size());
        for (double& v : d) v = lerp(v, mean, contrast);
    }
    if (noise > 0.0)
        for (double& v : d) v += rng.normal() * noise * 2.0;
    for (double& v : d) v = std::clamp(v, -1.0, 1.0);
    return Tensor::from_data(out.shape(), std::move(d));
}

SyntheticCorpus gen_synthetic_corpus(const GenCorpusConfig& cfg, const DegradeConfig& deg,
                                     const std::filesystem::path& out_dir) {
    require(cfg.n_train_source >= 1 && cfg.n_train_target >= 1 && cfg.n_test_target >= 1,
            "gen_synthetic_corpus: split sizes must be >= 1");
    require(cfg.n_classes >= 1 && cfg.n_classes <= 3, "gen_synthetic_corpus: n_classes must be 1..3");
    deg.validate();
    std::filesystem::create_directories(out_dir);

    Rng root(cfg.seed);
    std::vector<std::string> classes(kClassNames, kClassNames + cfg.n_classes);
    const std::string prov = "synthetic corpus, seed " + std::to_string(cfg.seed);

    auto make_split = [&](const char* split, int n, bool degrade_images, bool keep_boxes, bool keep_labels,
                          const char* domain) -> DatasetManifest {
        DatasetManifest m;
        m.classes = classes;
        m.provenance = prov;
        m.root = out_dir;
        Rng split_rng = root.fork(split);
        for (int i = 0; i < n; ++i) {
            Rng img_rng = split_rng.fork(static_cast<std::uint64_t>(i));
            Rng scene_rng = img_rng.fork("scene");
            Scene sc = render_scene(scene_rng, cfg.image_side, cfg.n_classes);
            Tensor img = sc.image;
            if (degrade_images) {
                Rng deg_rng = img_rng.fork("degrade");
                img = degrade(img, deg, deg_rng);
            }
            char name[64];
            std::snprintf(name, sizeof(name), "images/%s/%05d.ppm", split, i);
            save_image(img, out_dir / name);
            ImageSample s;
            s.image = name;
            s.domain = domain;
            if (keep_boxes) s.boxes = sc.boxes;
            if (keep_labels)
                for (const auto& b : sc.boxes) s.labels.push_back(b.class_id);
            m.samples.push_back(std::move(s));
        }
        return m;
    };

    SyntheticCorpus corpus;
    corpus.source_train = make_split("source_train", cfg.n_train_source, false, true, true, "source");
    // boxes withheld; image-level class tags stay, mirroring category-tagged
    // video collections
    corpus.target_train = make_split("target_train", cfg.n_train_target, true, false, true, "target");
    // identical images and rng streams as target_train, boxes retained
    corpus.target_train_labeled = make_split("target_train", cfg.n_train_target, true, true, true, "target");
    corpus.target_test = make_split("target_test", cfg.n_test_target, true, true, true, "target");

    save_manifest(corpus.source_train, out_dir / "source_train.jsonl");
    save_manifest(corpus.target_train, out_dir / "target_train.jsonl");
    save_manifest(corpus.target_train_labeled, out_dir / "target_train_labeled.jsonl");
    save_manifest(corpus.target_test, out_dir / "target_test.jsonl");
    return corpus;
}

DatasetManifest classic_augment(const DatasetManifest& src, const AugmentKind& kind,
                                const std::filesystem::path& out_manifest, std::uint64_t seed) {
    if (kind.type == AugmentKind::Blur) require(kind.kernel >= 1 && kind.kernel % 2 == 1, "augment: kernel must be odd");
    require(kind.sigma >= 0.0, "augment: sigma must be >= 0");
    const auto out_dir = out_manifest.has_parent_path() ? out_manifest.parent_path() : std::filesystem::path(".");
    std::filesystem::create_directories(out_dir);

    DatasetManifest out;
    out.classes = src.classes;
    out.provenance = src.provenance + "; classic augment";
    out.root = out_dir;
    for (const auto& s : src.samples) {
        ImageSample orig = s;
        orig.image = std::filesystem::relative(src.resolve(s), out_dir).generic_string();
        out.samples.push_back(std::move(orig));
    }
    for (std::size_t i = 0; i < src.samples.size(); ++i) {
        const auto& s = src.samples[i];
        Tensor img = load_image(src.resolve(s));
        Tensor aug;
        if (kind.type == AugmentKind::Noise) {
            Rng rng(Rng::mix(seed, i));
            std::vector<double> d(img.data());
            if (kind.sigma > 0.0)
                for (double& v : d) v += rng.normal() * kind.sigma * 2.0;
            for (double& v : d) v = std::clamp(v, -1.0, 1.0);
            aug = Tensor::from_data(img.shape(), std::move(d));
        } else {
            aug = clamp_image(gaussian_blur(img, kind.sigma, kind.kernel / 2));
        }
        char name[64];
        std::snprintf(name, sizeof(name), "images/aug/%05zu.ppm", i);
        save_image(aug, out_dir / name);
        ImageSample copy = s;
        copy.image = name;
        out.samples.push_back(std::move(copy));
    }
    save_manifest(out, out_manifest);
    return out;
}

Tensor resize_and_crop(const Tensor& image, int resize_to, int crop_to, Rng* rng) {
    require(resize_to >= 1 && crop_to >= 1, "resize_and_crop: sizes must be positive");
    if (crop_to > resize_to) throw ConfigError("resize_and_crop: crop_to must not exceed resize_to");
    Tensor r = bilinear_resize(image, resize_to, resize_to);
    const int span = resize_to - crop_to;
    int oy = span / 2, ox = span / 2;
    if (rng != nullptr && span > 0) {
        oy = static_cast<int>(rng->uniform_int(0, span));
        ox = static_cast<int>(rng->uniform_int(0, span));
    }
    return crop_image(r, oy, ox, crop_to, crop_to);
}

}  // namespace dagan
