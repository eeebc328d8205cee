#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dagan/detector.hpp"
#include "json.hpp"

namespace dagan {
namespace fs = std::filesystem;

namespace {

void add_conv(ParamMap& p, const std::string& name, int cout, int cin, int k, Rng& rng, bool with_norm) {
    p.insert(name + ".w", Tensor::randn({cout, cin, k, k}, rng, 0.02, true));
    p.insert(name + ".b", Tensor::zeros({cout}, true));
    if (with_norm) {
        p.insert(name + ".in_g", Tensor::full({cout}, 1.0, true));
        p.insert(name + ".in_b", Tensor::zeros({cout}, true));
    }
}

// canonical GT order makes anchor assignment independent of input order
std::vector<std::size_t> canonical_order(const std::vector<BoxAnnotation>& gt) {
    std::vector<std::size_t> order(gt.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto key = [&](std::size_t i) {
            const auto& g = gt[i];
            return std::make_tuple(g.box.x_min, g.box.y_min, g.box.x_max, g.box.y_max, g.class_id);
        };
        return key(a) < key(b);
    });
    return order;
}

Tensor as_batch(const Tensor& image, int side) {
    if (image.shape().size() != 3 || image.dim(0) != 3 || image.dim(1) != side || image.dim(2) != side)
        throw ConfigError("detector expects a [3," + std::to_string(side) + "," + std::to_string(side) + "] image");
    return image.reshape({1, 3, side, side});
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

void DetectorSpec::validate() const {
    require(n_classes >= 1, "detector spec: n_classes must be positive");
    require(grid >= 1, "detector spec: grid must be positive");
    require(base_width >= 1, "detector spec: base_width must be positive");
    require(!anchor_sizes.empty(), "detector spec: anchor_sizes must not be empty");
    for (double s : anchor_sizes)
        require(s > 0.0 && s <= 1.0, "detector spec: anchor sizes must lie in (0,1]");
}

DetectorParams build_detector(const DetectorSpec& spec, std::uint64_t seed) {
    spec.validate();
    DetectorParams d;
    d.spec = spec;
    Rng rng(seed);
    int cin = 3;
    for (int i = 0; i < 4; ++i) {
        const int cout = spec.base_width << i;
        add_conv(d.params, "conv" + std::to_string(i), cout, cin, 3, rng, i > 0);
        cin = cout;
    }
    add_conv(d.params, "head", spec.head_channels(), cin, 3, rng, false);
    return d;
}

Tensor detector_forward(const DetectorParams& d, const Tensor& image) {
    d.spec.validate();
    const int s = d.spec.input_side();
    if (image.shape().size() != 4 || image.dim(1) != 3 || image.dim(2) != s || image.dim(3) != s)
        throw ConfigError("detector_forward: input must be [B,3," + std::to_string(s) + "," + std::to_string(s) + "]");
    const ParamMap& p = d.params;
    Tensor h = image;
    for (int i = 0; i < 4; ++i) {
        const std::string base = "conv" + std::to_string(i);
        h = conv2d(h, p.at(base + ".w"), p.at(base + ".b"), 2, PadMode::Zero, 1);
        if (i > 0) h = instance_norm(h, p.at(base + ".in_g"), p.at(base + ".in_b"));
        h = leaky_relu(h, 0.2);
    }
    return conv2d(h, p.at("head.w"), p.at("head.b"), 1, PadMode::Zero, 1);
}

std::vector<BoundingBox> anchor_grid(const DetectorSpec& spec) {
    spec.validate();
    const double side = spec.input_side();
    const double cell = side / spec.grid;
    std::vector<BoundingBox> out;
    out.reserve(static_cast<std::size_t>(spec.anchors_per_cell()) * spec.grid * spec.grid);
    for (int a = 0; a < spec.anchors_per_cell(); ++a) {
        const double half = 0.5 * spec.anchor_sizes[static_cast<std::size_t>(a)] * side;
        for (int i = 0; i < spec.grid; ++i)
            for (int j = 0; j < spec.grid; ++j) {
                const double cx = (j + 0.5) * cell;
                const double cy = (i + 0.5) * cell;
                out.push_back({cx - half, cy - half, cx + half, cy + half});
            }
    }
    return out;
}

AnchorAssignment match_anchors(const std::vector<BoxAnnotation>& gt, const DetectorSpec& spec) {
    const auto anchors = anchor_grid(spec);
    AnchorAssignment out;
    out.labels.assign(anchors.size(), -1);
    if (gt.empty()) return out;
    for (const auto& g : gt) g.box.validate();

    const auto order = canonical_order(gt);
    std::vector<std::vector<double>> overlap(anchors.size(), std::vector<double>(gt.size()));
    for (std::size_t k = 0; k < anchors.size(); ++k)
        for (std::size_t j = 0; j < gt.size(); ++j) overlap[k][j] = iou(anchors[k], gt[j].box);

    // threshold stage: argmax GT in canonical scan order
    for (std::size_t k = 0; k < anchors.size(); ++k) {
        double best = 0.0;
        int arg = -1;
        for (std::size_t j : order)
            if (overlap[k][j] > best) {
                best = overlap[k][j];
                arg = static_cast<int>(j);
            }
        if (best >= 0.5)
            out.labels[k] = arg;
        else if (best >= 0.4)
            out.labels[k] = -2;
    }

    // forcing stage: every GT keeps at least one positive anchor; claimed
    // anchors and sole positives of other GTs are skipped
    std::vector<int> pos_count(gt.size(), 0);
    for (int v : out.labels)
        if (v >= 0) ++pos_count[static_cast<std::size_t>(v)];
    std::vector<bool> forced(anchors.size(), false);
    for (std::size_t j : order) {
        if (pos_count[j] > 0) continue;
        std::vector<std::size_t> by_iou(anchors.size());
        std::iota(by_iou.begin(), by_iou.end(), 0);
        std::stable_sort(by_iou.begin(), by_iou.end(),
                         [&](std::size_t a, std::size_t b) { return overlap[a][j] > overlap[b][j]; });
        for (std::size_t k : by_iou) {
            if (forced[k]) continue;
            const int old = out.labels[k];
            if (old >= 0 && pos_count[static_cast<std::size_t>(old)] <= 1) continue;
            if (old >= 0) --pos_count[static_cast<std::size_t>(old)];
            out.labels[k] = static_cast<int>(j);
            ++pos_count[j];
            forced[k] = true;
            break;
        }
    }
    return out;
}

std::array<double, 4> encode_box(const BoundingBox& gt, const BoundingBox& anchor) {
    gt.validate();
    anchor.validate();
    return {(gt.cx() - anchor.cx()) / anchor.width(), (gt.cy() - anchor.cy()) / anchor.height(),
            std::log(gt.width() / anchor.width()), std::log(gt.height() / anchor.height())};
}

BoundingBox decode_box(const std::array<double, 4>& t, const BoundingBox& anchor, double side) {
    const double cx = anchor.cx() + t[0] * anchor.width();
    const double cy = anchor.cy() + t[1] * anchor.height();
    const double w = anchor.width() * std::exp(t[2]);
    const double h = anchor.height() * std::exp(t[3]);
    const auto clamp = [side](double v) { return std::min(std::max(v, 0.0), side); };
    return {clamp(cx - 0.5 * w), clamp(cy - 0.5 * h), clamp(cx + 0.5 * w), clamp(cy + 0.5 * h)};
}

Tensor detector_loss(const DetectorParams& d, const Tensor& image, const AnchorAssignment& assignment,
                     const std::vector<BoxAnnotation>& gt) {
    const DetectorSpec& spec = d.spec;
    const int a = spec.anchors_per_cell(), g = spec.grid, c = spec.n_classes;
    const std::size_t slots = static_cast<std::size_t>(a) * g * g;
    if (assignment.labels.size() != slots) throw ConfigError("detector_loss: assignment size mismatch");
    const auto anchors = anchor_grid(spec);

    Tensor head = detector_forward(d, as_batch(image, spec.input_side()));
    Tensor obj = slice_channels(head, 0, a);
    Tensor box = slice_channels(head, a, 5 * a);
    Tensor cls = slice_channels(head, 5 * a, 5 * a + c * a);

    const std::size_t plane = static_cast<std::size_t>(g) * g;
    std::vector<double> obj_target(slots, 0.0), obj_mask(slots, 1.0);
    std::vector<double> box_target(4 * slots, 0.0), box_mask(4 * slots, 0.0);
    std::vector<int> cls_label(slots, 0);
    std::vector<double> cls_sel(slots, 0.0);

    for (std::size_t k = 0; k < slots; ++k) {
        const int v = assignment.labels[k];
        if (v == -2) {
            obj_mask[k] = 0.0;
            continue;
        }
        if (v < 0) continue;
        if (static_cast<std::size_t>(v) >= gt.size()) throw ConfigError("detector_loss: GT index out of range");
        obj_target[k] = 1.0;
        cls_label[k] = gt[static_cast<std::size_t>(v)].class_id;
        if (cls_label[k] < 0 || cls_label[k] >= c) throw ConfigError("detector_loss: class id out of range");
        cls_sel[k] = 1.0;
        const auto t = encode_box(gt[static_cast<std::size_t>(v)].box, anchors[k]);
        const std::size_t anchor_idx = k / plane, cell = k % plane;
        for (int q = 0; q < 4; ++q) box_target[(anchor_idx * 4 + static_cast<std::size_t>(q)) * plane + cell] = t[static_cast<std::size_t>(q)];
        for (int q = 0; q < 4; ++q) box_mask[(anchor_idx * 4 + static_cast<std::size_t>(q)) * plane + cell] = 1.0;
    }

    Tensor obj_loss = bce_from_logits_masked(obj, Tensor::from_data({1, a, g, g}, std::move(obj_target)),
                                             Tensor::from_data({1, a, g, g}, std::move(obj_mask)));
    Tensor cls_loss = anchor_class_ce(cls, cls_label, cls_sel, c);
    Tensor box_loss = l1_loss_masked(box, Tensor::from_data({1, 4 * a, g, g}, std::move(box_target)),
                                     Tensor::from_data({1, 4 * a, g, g}, std::move(box_mask)));
    return add(add(obj_loss, cls_loss), box_loss);
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
    require(iou_threshold > 0.0 && iou_threshold <= 1.0, "nms: threshold must lie in (0,1]");
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return dets[x].score > dets[y].score; });
    std::vector<Detection> kept;
    for (std::size_t i : order) {
        bool drop = false;
        for (const auto& k : kept)
            if (k.class_id == dets[i].class_id && iou(k.box, dets[i].box) > iou_threshold) {
                drop = true;
                break;
            }
        if (!drop) kept.push_back(dets[i]);
    }
    return kept;
}

std::vector<Detection> detect(const DetectorParams& d, const Tensor& image, double conf_threshold, double nms_iou) {
    require(conf_threshold >= 0.0 && conf_threshold < 1.0, "detect: conf_threshold must lie in [0,1)");
    const DetectorSpec& spec = d.spec;
    const int a = spec.anchors_per_cell(), g = spec.grid, c = spec.n_classes;
    const double side = spec.input_side();
    const auto anchors = anchor_grid(spec);

    Tensor head = detector_forward(d, as_batch(image, spec.input_side())).detach();
    const auto& h = head.data();
    const std::size_t plane = static_cast<std::size_t>(g) * g;

    std::vector<Detection> raw;
    for (std::size_t k = 0; k < static_cast<std::size_t>(a) * plane; ++k) {
        const std::size_t anchor_idx = k / plane, cell = k % plane;
        const double conf = sigmoid(h[anchor_idx * plane + cell]);
        if (conf < conf_threshold) continue;

        std::array<double, 4> t;
        for (int q = 0; q < 4; ++q)
            t[static_cast<std::size_t>(q)] = h[(a + anchor_idx * 4 + static_cast<std::size_t>(q)) * plane + cell];
        if (!std::isfinite(t[0]) || !std::isfinite(t[1]) || !std::isfinite(t[2]) || !std::isfinite(t[3])) continue;
        BoundingBox bx = decode_box(t, anchors[k], side);
        if (!(bx.x_min < bx.x_max && bx.y_min < bx.y_max)) continue;  // clamped away

        int best_cls = 0;
        double best_logit = h[(5 * static_cast<std::size_t>(a) + anchor_idx * c) * plane + cell];
        for (int q = 1; q < c; ++q) {
            const double v = h[(5 * static_cast<std::size_t>(a) + anchor_idx * c + static_cast<std::size_t>(q)) * plane + cell];
            if (v > best_logit) {
                best_logit = v;
                best_cls = q;
            }
        }
        raw.push_back({best_cls, conf, bx});
    }
    return nms(raw, nms_iou);
}

DetectorTrainResult train_detector(const DatasetManifest& manifest, const DetectorSpec& spec, int epochs,
                                   std::uint64_t seed, const fs::path& loss_csv) {
    spec.validate();
    require(!manifest.samples.empty(), "train_detector: empty manifest");
    require(epochs >= 1, "train_detector: epochs must be positive");
    const int side = spec.input_side();

    // images resized up front; boxes scale with them
    std::vector<Tensor> images;
    std::vector<std::vector<BoxAnnotation>> boxes;
    std::vector<AnchorAssignment> assignments;
    for (const auto& s : manifest.samples) {
        Tensor img = load_image(manifest.resolve(s));
        const double sx = static_cast<double>(side) / img.dim(2);
        const double sy = static_cast<double>(side) / img.dim(1);
        if (img.dim(1) != side || img.dim(2) != side) img = bilinear_resize(img, side, side);
        images.push_back(img);
        std::vector<BoxAnnotation> bs = s.boxes;
        for (auto& b : bs) {
            b.box.x_min *= sx;
            b.box.x_max *= sx;
            b.box.y_min *= sy;
            b.box.y_max *= sy;
        }
        assignments.push_back(match_anchors(bs, spec));
        boxes.push_back(std::move(bs));
    }

    DetectorTrainResult res;
    Rng root(seed);
    res.params = build_detector(spec, root.fork("init").seed());
    AdamState opt;
    const AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
    Rng order_rng = root.fork("order");

    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), 0);
    for (int e = 0; e < epochs; ++e) {
        order_rng.shuffle(order);
        double acc = 0.0;
        for (std::size_t i : order) {
            Tensor loss = detector_loss(res.params, images[i], assignments[i], boxes[i]);
            if (!std::isfinite(loss.value()))
                throw NumericError("train_detector: non-finite loss at epoch " + std::to_string(e));
            acc += loss.value();
            res.params.params.zero_grad();
            loss.backward();
            adam_step(res.params.params, opt, adam);
        }
        res.epoch_loss.push_back(acc / static_cast<double>(images.size()));
    }

    if (!loss_csv.empty()) {
        if (loss_csv.has_parent_path()) fs::create_directories(loss_csv.parent_path());
        std::ofstream out(loss_csv);
        if (!out) throw ConfigError("cannot write loss csv: " + loss_csv.string());
        out << "epoch,loss\n";
        char buf[64];
        for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e, res.epoch_loss[e]);
            out << buf;
        }
    }
    return res;
}

void save_detections(const std::vector<std::vector<Detection>>& dets, const DatasetManifest& manifest,
                     const fs::path& path) {
    require(dets.size() == manifest.samples.size(), "save_detections: one list per manifest sample");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write detections: " + path.string());
    for (std::size_t i = 0; i < dets.size(); ++i)
        for (const auto& d : dets[i]) {
            nlohmann::json j{{"image", manifest.samples[i].image},
                             {"class", d.class_id},
                             {"confidence", d.score},
                             {"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}}};
            out << j.dump() << "\n";
        }
}

std::vector<std::vector<Detection>> load_detections(const fs::path& path, const DatasetManifest& manifest) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("detections not found: " + path.string());
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) index[manifest.samples[i].image] = i;

    std::vector<std::vector<Detection>> out(manifest.samples.size());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            const std::string image = j.at("image").get<std::string>();
            const auto it = index.find(image);
            if (it == index.end())
                throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": unknown image " + image);
            Detection d;
            d.class_id = j.at("class").get<int>();
            d.score = j.at("confidence").get<double>();
            const auto b = j.at("box").get<std::vector<double>>();
            if (b.size() != 4) throw ConfigError(path.string() + ": box must have 4 coordinates");
            d.box = {b[0], b[1], b[2], b[3]};
            out[it->second].push_back(d);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    for (auto& v : out)
        std::stable_sort(v.begin(), v.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return out;
}

}  // namespace dagan
