#include <algorithm>
#include <cmath>
#include <fstream>

#include "dagan/metrics.hpp"
#include "json.hpp"

namespace dagan {
namespace {

using nlohmann::json;

struct ScoredVerdict {
    double score;
    std::size_t image;
    std::size_t rank;  // position within its image's class stream
    bool is_tp;
};

// stable global order: confidence desc, then image index, then local rank
bool scored_before(const ScoredVerdict& a, const ScoredVerdict& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.rank < b.rank;
}

std::vector<Detection> class_subset(const std::vector<Detection>& dets, int class_id) {
    std::vector<Detection> out;
    for (const auto& d : dets)
        if (d.class_id == class_id) out.push_back(d);
    return out;
}

std::vector<BoundingBox> class_gt(const ImageSample& s, int class_id) {
    std::vector<BoundingBox> out;
    for (const auto& b : s.boxes)
        if (b.class_id == class_id) out.push_back(b.box);
    return out;
}

const char* ap_mode_name(ApMode m) { return m == ApMode::AllPoint ? "all_point" : "voc11"; }
const char* corloc_mode_name(CorLocMode m) { return m == CorLocMode::Literal ? "literal" : "image_top1"; }

}  // namespace

MatchOutcome match_detections(const std::vector<Detection>& detections, const std::vector<BoundingBox>& gt_boxes,
                              double iou_threshold) {
    require(iou_threshold > 0.0 && iou_threshold <= 1.0, "match_detections: threshold must lie in (0,1]");
    for (std::size_t i = 1; i < detections.size(); ++i)
        if (detections[i].score > detections[i - 1].score)
            throw ConfigError("match_detections: detections not sorted by confidence");

    MatchOutcome out;
    out.is_tp.resize(detections.size(), false);
    out.gt_matched.resize(gt_boxes.size(), false);
    for (std::size_t i = 0; i < detections.size(); ++i) {
        double best = 0.0;
        std::size_t best_j = gt_boxes.size();
        for (std::size_t j = 0; j < gt_boxes.size(); ++j) {
            if (out.gt_matched[j]) continue;
            const double v = iou(detections[i].box, gt_boxes[j]);
            if (v > best) {
                best = v;
                best_j = j;
            }
        }
        if (best_j < gt_boxes.size() && best >= iou_threshold) {
            out.is_tp[i] = true;
            out.gt_matched[best_j] = true;
        }
    }
    return out;
}

double average_precision(const std::vector<bool>& is_tp, int n_gt, ApMode mode) {
    require(n_gt >= 1, "average_precision: class has no ground truth");
    const std::size_t n = is_tp.size();
    std::vector<double> recall(n), precision(n);
    int tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (is_tp[i]) ++tp;
        recall[i] = static_cast<double>(tp) / n_gt;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }

    // envelope: best precision achievable at recall >= r
    std::vector<double> env(precision);
    for (std::size_t i = n; i-- > 1;) env[i - 1] = std::max(env[i - 1], env[i]);

    if (mode == ApMode::Voc11) {
        double acc = 0.0;
        for (int k = 0; k <= 10; ++k) {
            const double r = k / 10.0;
            double best = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (recall[i] >= r - 1e-12) {
                    best = env[i];
                    break;
                }
            acc += best;
        }
        return acc / 11.0;
    }

    double ap = 0.0, prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ap += (recall[i] - prev) * env[i];
        prev = recall[i];
    }
    return ap;
}

MeanApResult mean_ap(const std::vector<std::vector<Detection>>& detections, const DatasetManifest& manifest,
                     double iou_threshold, ApMode mode) {
    require(detections.size() == manifest.samples.size(), "mean_ap: one detection list per manifest sample");
    const int n_classes = static_cast<int>(manifest.classes.size());
    require(n_classes >= 1, "mean_ap: manifest has no class registry");

    MeanApResult res;
    res.per_class_ap.assign(static_cast<std::size_t>(n_classes), 0.0);
    res.evaluated.assign(static_cast<std::size_t>(n_classes), false);
    res.n_gt.assign(static_cast<std::size_t>(n_classes), 0);

    double ap_sum = 0.0;
    int n_eval = 0;
    for (int c = 0; c < n_classes; ++c) {
        std::vector<ScoredVerdict> pool;
        int gt_total = 0;
        for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
            const auto dets = class_subset(detections[i], c);
            const auto gts = class_gt(manifest.samples[i], c);
            gt_total += static_cast<int>(gts.size());
            const MatchOutcome m = match_detections(dets, gts, iou_threshold);
            for (std::size_t k = 0; k < dets.size(); ++k) pool.push_back({dets[k].score, i, k, m.is_tp[k]});
        }
        res.n_gt[static_cast<std::size_t>(c)] = gt_total;
        if (gt_total == 0) continue;  // excluded, flagged via evaluated[]

        std::sort(pool.begin(), pool.end(), scored_before);
        std::vector<bool> verdicts(pool.size());
        for (std::size_t k = 0; k < pool.size(); ++k) verdicts[k] = pool[k].is_tp;
        const double ap = average_precision(verdicts, gt_total, mode);
        res.per_class_ap[static_cast<std::size_t>(c)] = ap;
        res.evaluated[static_cast<std::size_t>(c)] = true;
        ap_sum += ap;
        ++n_eval;
    }
    require(n_eval >= 1, "mean_ap: no class has ground truth");
    res.map = ap_sum / n_eval;
    return res;
}

std::optional<double> corloc(const std::vector<std::vector<Detection>>& detections, const DatasetManifest& manifest,
                             double iou_threshold, CorLocMode mode) {
    require(detections.size() == manifest.samples.size(), "corloc: one detection list per manifest sample");
    const int n_classes = static_cast<int>(manifest.classes.size());

    if (mode == CorLocMode::Literal) {
        long tp = 0, fp = 0;
        for (std::size_t i = 0; i < manifest.samples.size(); ++i)
            for (int c = 0; c < n_classes; ++c) {
                const auto dets = class_subset(detections[i], c);
                const MatchOutcome m = match_detections(dets, class_gt(manifest.samples[i], c), iou_threshold);
                for (bool v : m.is_tp) (v ? tp : fp) += 1;
            }
        if (tp + fp == 0) return std::nullopt;
        return static_cast<double>(tp) / static_cast<double>(tp + fp);
    }

    // top-1 mode: an annotated image counts when its highest-confidence
    // detection overlaps a ground-truth box of its own class
    long annotated = 0, hit = 0;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        if (manifest.samples[i].boxes.empty()) continue;
        ++annotated;
        const auto& dets = detections[i];
        if (dets.empty()) continue;
        const auto top = std::max_element(dets.begin(), dets.end(),
                                          [](const Detection& a, const Detection& b) { return a.score < b.score; });
        for (const auto& g : manifest.samples[i].boxes)
            if (g.class_id == top->class_id && iou(top->box, g.box) >= iou_threshold) {
                ++hit;
                break;
            }
    }
    if (annotated == 0) return std::nullopt;
    return static_cast<double>(hit) / static_cast<double>(annotated);
}

EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& detections,
                               const DatasetManifest& manifest, const EvalConfig& cfg) {
    const MeanApResult res = mean_ap(detections, manifest, cfg.iou_threshold, cfg.ap_mode);
    EvalReport rep;
    rep.config = cfg;
    rep.map = res.map;
    rep.n_images = static_cast<int>(manifest.samples.size());
    for (std::size_t c = 0; c < manifest.classes.size(); ++c)
        if (res.evaluated[c]) rep.per_class_ap[manifest.classes[c]] = res.per_class_ap[c];
    rep.corloc = corloc(detections, manifest, cfg.iou_threshold, cfg.corloc_mode);
    return rep;
}

void write_eval_report(const EvalReport& rep, const std::filesystem::path& path) {
    json j;
    j["per_class_ap"] = rep.per_class_ap;
    j["map"] = rep.map;
    if (rep.corloc)
        j["corloc"] = *rep.corloc;
    else
        j["corloc"] = nullptr;
    j["n_images"] = rep.n_images;
    j["config"] = {{"iou_threshold", rep.config.iou_threshold},
                   {"ap_mode", ap_mode_name(rep.config.ap_mode)},
                   {"corloc_mode", corloc_mode_name(rep.config.corloc_mode)}};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write eval report: " + path.string());
    out << j.dump(2) << "\n";
}

EvalReport load_eval_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("eval report not found: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("bad eval report " + path.string() + ": " + e.what());
    }
    EvalReport rep;
    try {
        rep.per_class_ap = j.at("per_class_ap").get<std::map<std::string, double>>();
        rep.map = j.at("map").get<double>();
        if (!j.at("corloc").is_null()) rep.corloc = j.at("corloc").get<double>();
        rep.n_images = j.at("n_images").get<int>();
        const auto& c = j.at("config");
        rep.config.iou_threshold = c.at("iou_threshold").get<double>();
        rep.config.ap_mode = c.at("ap_mode").get<std::string>() == "voc11" ? ApMode::Voc11 : ApMode::AllPoint;
        rep.config.corloc_mode =
            c.at("corloc_mode").get<std::string>() == "image_top1" ? CorLocMode::PerImageTop1 : CorLocMode::Literal;
    } catch (const json::exception& e) {
        throw ConfigError("bad eval report " + path.string() + ": " + e.what());
    }
    return rep;
}

}  // namespace dagan
