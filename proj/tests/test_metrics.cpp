#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "dagan/metrics.hpp"
#include "dagan/rng.hpp"
#include "doctest.h"

using namespace dagan;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    auto p = fs::temp_directory_path() / (std::string("dagan_test_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

BoundingBox rand_box(Rng& rng, double side) {
    const double w = rng.uniform(5.0, 20.0);
    const double h = rng.uniform(5.0, 20.0);
    const double x0 = rng.uniform(0.0, side - w);
    const double y0 = rng.uniform(0.0, side - h);
    return {x0, y0, x0 + w, y0 + h};
}

// independently written greedy matcher
std::vector<bool> oracle_match(const std::vector<Detection>& dets, const std::vector<BoundingBox>& gts, double thr) {
    std::vector<bool> taken(gts.size(), false), verdict(dets.size(), false);
    for (std::size_t i = 0; i < dets.size(); ++i) {
        int arg = -1;
        double best = 0.0;
        for (std::size_t j = 0; j < gts.size(); ++j) {
            if (taken[j]) continue;
            double v = iou(dets[i].box, gts[j]);
            if (v > best) {
                best = v;
                arg = static_cast<int>(j);
            }
        }
        if (arg >= 0 && best >= thr) {
            taken[static_cast<std::size_t>(arg)] = true;
            verdict[i] = true;
        }
    }
    return verdict;
}

// dense-grid integration of the precision envelope, structurally unlike the
// closed-form sum in the implementation
double grid_ap(const std::vector<bool>& is_tp, int n_gt, int grid = 200000) {
    std::vector<double> rec(is_tp.size()), prec(is_tp.size());
    int tp = 0;
    for (std::size_t i = 0; i < is_tp.size(); ++i) {
        if (is_tp[i]) ++tp;
        rec[i] = static_cast<double>(tp) / n_gt;
        prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    double acc = 0.0;
    for (int k = 0; k < grid; ++k) {
        const double r = (k + 0.5) / grid;
        double best = 0.0;
        for (std::size_t i = 0; i < is_tp.size(); ++i)
            if (rec[i] >= r) best = std::max(best, prec[i]);
        acc += best;
    }
    return acc / grid;
}

double oracle_voc11(const std::vector<bool>& is_tp, int n_gt) {
    std::vector<double> rec(is_tp.size()), prec(is_tp.size());
    int tp = 0;
    for (std::size_t i = 0; i < is_tp.size(); ++i) {
        if (is_tp[i]) ++tp;
        rec[i] = static_cast<double>(tp) / n_gt;
        prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    double acc = 0.0;
    for (int k = 0; k <= 10; ++k) {
        double best = 0.0;
        for (std::size_t i = 0; i < is_tp.size(); ++i)
            if (rec[i] >= k / 10.0 - 1e-12) best = std::max(best, prec[i]);
        acc += best;
    }
    return acc / 11.0;
}

std::vector<bool> random_verdicts(Rng& rng, int n, int* tp_total) {
    std::vector<bool> v(static_cast<std::size_t>(n));
    *tp_total = 0;
    for (auto&& b : v) {
        b = rng.uniform() < 0.5;
        *tp_total += b ? 1 : 0;
    }
    return v;
}

Detection det(int cls, double score, BoundingBox box) { return Detection{cls, score, box}; }

// one-image manifest around explicit ground truth
DatasetManifest tiny_manifest(const std::vector<std::vector<BoxAnnotation>>& per_image,
                              std::vector<std::string> classes) {
    DatasetManifest m;
    m.classes = std::move(classes);
    for (std::size_t i = 0; i < per_image.size(); ++i) {
        ImageSample s;
        s.image = "img" + std::to_string(i) + ".ppm";
        s.domain = "source";
        s.boxes = per_image[i];
        for (const auto& b : s.boxes) s.labels.push_back(b.class_id);
        m.samples.push_back(std::move(s));
    }
    return m;
}

}  // namespace

TEST_CASE("match detections: identity, duplicate, and ordering rules") {
    BoundingBox g{10, 10, 30, 30};
    auto one = match_detections({det(0, 0.9, g)}, {g});
    REQUIRE(one.is_tp.size() == 1);
    CHECK(one.is_tp[0]);
    CHECK(one.gt_matched[0]);

    auto dup = match_detections({det(0, 0.9, g), det(0, 0.8, g)}, {g});
    CHECK(dup.is_tp == std::vector<bool>{true, false});

    CHECK_THROWS_AS(match_detections({det(0, 0.5, g), det(0, 0.9, g)}, {g}), ConfigError);
    CHECK_THROWS_AS(match_detections({det(0, 0.5, g)}, {g}, 0.0), ConfigError);

    // below-threshold overlap is a false positive even with a free GT
    BoundingBox off{22, 10, 42, 30};  // IoU with g well under 0.5
    auto miss = match_detections({det(0, 0.9, off)}, {g});
    CHECK_FALSE(miss.is_tp[0]);
    CHECK_FALSE(miss.gt_matched[0]);

    // empty cases
    CHECK(match_detections({}, {g}).is_tp.empty());
    CHECK_FALSE(match_detections({det(0, 0.9, g)}, {}).is_tp[0]);
}

TEST_CASE("match detections: 100 random scenes equal the greedy oracle") {
    Rng rng(41);
    for (int scene = 0; scene < 100; ++scene) {
        std::vector<BoundingBox> gts;
        const int n_gt = static_cast<int>(rng.uniform_int(0, 6));
        for (int i = 0; i < n_gt; ++i) gts.push_back(rand_box(rng, 64));
        std::vector<Detection> dets;
        const int n_det = static_cast<int>(rng.uniform_int(0, 10));
        for (int i = 0; i < n_det; ++i) dets.push_back(det(0, rng.uniform(), rand_box(rng, 64)));
        std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });

        auto got = match_detections(dets, gts, 0.5);
        CHECK(got.is_tp == oracle_match(dets, gts, 0.5));

        int tps = 0, matched = 0;
        for (bool v : got.is_tp) tps += v;
        for (bool v : got.gt_matched) matched += v;
        CHECK(tps == matched);  // each GT matched at most once
        CHECK(tps <= n_gt);
    }
}

TEST_CASE("average precision: pinned examples") {
    CHECK(average_precision({true}, 1, ApMode::AllPoint) == 1.0);
    CHECK(average_precision({true}, 1, ApMode::Voc11) == 1.0);
    CHECK(average_precision({false, false, false}, 4) == 0.0);
    CHECK_THROWS_AS(average_precision({true}, 0), ConfigError);

    // [TP, FP, TP], two ground truths: 0.5 recall at precision 1, the rest
    // of the mass at the envelope value 2/3
    const double ap = average_precision({true, false, true}, 2, ApMode::AllPoint);
    CHECK(ap == doctest::Approx(0.5 + 0.5 * (2.0 / 3.0)).epsilon(1e-12));
    CHECK(ap == doctest::Approx(0.8333).epsilon(1e-4));
}

TEST_CASE("average precision: dense-grid oracle on random verdict streams") {
    Rng rng(42);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(1, 25));
        int tps = 0;
        auto v = random_verdicts(rng, n, &tps);
        const int n_gt = tps + static_cast<int>(rng.uniform_int(0, 5)) + (tps == 0 ? 1 : 0);
        const double mine = average_precision(v, n_gt, ApMode::AllPoint);
        CHECK(mine == doctest::Approx(grid_ap(v, n_gt)).epsilon(1e-3));
        CHECK(average_precision(v, n_gt, ApMode::Voc11) == doctest::Approx(oracle_voc11(v, n_gt)).epsilon(1e-12));
        CHECK(mine >= 0.0);
        CHECK(mine <= 1.0);
    }
}

TEST_CASE("average precision: the two modes agree within 0.1 at realistic sizes") {
    Rng rng(43);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(15, 40));
        int tps = 0;
        auto v = random_verdicts(rng, n, &tps);
        const int n_gt = std::max(tps, 15);
        const double a = average_precision(v, n_gt, ApMode::AllPoint);
        const double b = average_precision(v, n_gt, ApMode::Voc11);
        CHECK(std::abs(a - b) < 0.1);
    }
}

TEST_CASE("mean ap: class means, registry order, and exclusion of empty classes") {
    BoundingBox b0{4, 4, 24, 24}, b1{30, 30, 50, 50};
    auto m = tiny_manifest({{{0, b0}, {1, b1}}}, {"circle", "triangle", "rectangle"});
    // class 0 hit exactly, class 1 detected far away, class 2 has no GT
    std::vector<std::vector<Detection>> dets{{det(0, 0.9, b0), det(1, 0.8, {0, 0, 10, 10})}};

    auto res = mean_ap(dets, m);
    CHECK(res.per_class_ap[0] == 1.0);
    CHECK(res.per_class_ap[1] == 0.0);
    CHECK(res.evaluated == std::vector<bool>{true, true, false});
    CHECK(res.n_gt == std::vector<int>{1, 1, 0});
    CHECK(res.map == 0.5);

    // single-class manifest: map equals that class's AP
    auto single = tiny_manifest({{{0, b0}}}, {"circle"});
    auto res1 = mean_ap({{det(0, 0.9, b0), det(0, 0.7, b0)}}, single);
    CHECK(res1.map == res1.per_class_ap[0]);
    CHECK(res1.map == 1.0);  // duplicate FP costs precision only beyond full recall

    auto empty_gt = tiny_manifest({{}}, {"circle"});
    CHECK_THROWS_AS(mean_ap({{}}, empty_gt), ConfigError);
    CHECK_THROWS_AS(mean_ap({{}, {}}, single), ConfigError);  // size mismatch
}

TEST_CASE("mean ap: 50 random instances equal a from-scratch oracle") {
    Rng rng(44);
    for (int trial = 0; trial < 50; ++trial) {
        const int n_classes = static_cast<int>(rng.uniform_int(1, 3));
        const int n_images = static_cast<int>(rng.uniform_int(1, 5));
        std::vector<std::string> names;
        for (int c = 0; c < n_classes; ++c) names.push_back("c" + std::to_string(c));

        std::vector<std::vector<BoxAnnotation>> gt(static_cast<std::size_t>(n_images));
        std::vector<std::vector<Detection>> dets(static_cast<std::size_t>(n_images));
        bool any_gt = false;
        for (int i = 0; i < n_images; ++i) {
            const int n_b = static_cast<int>(rng.uniform_int(0, 4));
            for (int k = 0; k < n_b; ++k) {
                gt[static_cast<std::size_t>(i)].push_back(
                    {static_cast<int>(rng.uniform_int(0, n_classes - 1)), rand_box(rng, 64)});
                any_gt = true;
            }
            const int n_d = static_cast<int>(rng.uniform_int(0, 6));
            for (int k = 0; k < n_d; ++k)
                dets[static_cast<std::size_t>(i)].push_back(
                    det(static_cast<int>(rng.uniform_int(0, n_classes - 1)), rng.uniform(), rand_box(rng, 64)));
            std::sort(dets[static_cast<std::size_t>(i)].begin(), dets[static_cast<std::size_t>(i)].end(),
                      [](const Detection& a, const Detection& b) { return a.score > b.score; });
        }
        if (!any_gt) {
            gt[0].push_back({0, rand_box(rng, 64)});
        }
        auto manifest = tiny_manifest(gt, names);
        auto res = mean_ap(dets, manifest);

        // oracle: pool each class across images in score order, re-match,
        // integrate the envelope on a dense grid
        double ap_sum = 0.0;
        int evaluated = 0;
        for (int c = 0; c < n_classes; ++c) {
            int total_gt = 0;
            std::vector<std::pair<double, bool>> pool;
            for (int i = 0; i < n_images; ++i) {
                std::vector<Detection> dc;
                std::vector<BoundingBox> gc;
                for (const auto& d : dets[static_cast<std::size_t>(i)])
                    if (d.class_id == c) dc.push_back(d);
                for (const auto& g : gt[static_cast<std::size_t>(i)])
                    if (g.class_id == c) gc.push_back(g.box);
                total_gt += static_cast<int>(gc.size());
                auto verdicts = oracle_match(dc, gc, 0.5);
                for (std::size_t k = 0; k < dc.size(); ++k) pool.emplace_back(dc[k].score, verdicts[k]);
            }
            if (total_gt == 0) {
                CHECK_FALSE(res.evaluated[static_cast<std::size_t>(c)]);
                continue;
            }
            std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
            std::vector<bool> stream;
            for (const auto& [s, v] : pool) stream.push_back(v);
            const double ap = grid_ap(stream, total_gt, 50000);
            CHECK(res.per_class_ap[static_cast<std::size_t>(c)] == doctest::Approx(ap).epsilon(2e-3));
            ap_sum += res.per_class_ap[static_cast<std::size_t>(c)];
            ++evaluated;
        }
        CHECK(res.map == doctest::Approx(ap_sum / evaluated).epsilon(1e-12));
    }
}

TEST_CASE("mean ap: invariant under strictly monotone confidence rescaling") {
    Rng rng(45);
    std::vector<std::vector<BoxAnnotation>> gt(3);
    std::vector<std::vector<Detection>> dets(3), rescaled(3);
    for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 3; ++k) gt[static_cast<std::size_t>(i)].push_back({k % 2, rand_box(rng, 64)});
        for (int k = 0; k < 5; ++k)
            dets[static_cast<std::size_t>(i)].push_back(
                det(static_cast<int>(rng.uniform_int(0, 1)), rng.uniform(), rand_box(rng, 64)));
        std::sort(dets[static_cast<std::size_t>(i)].begin(), dets[static_cast<std::size_t>(i)].end(),
                  [](const Detection& a, const Detection& b) { return a.score > b.score; });
        rescaled[static_cast<std::size_t>(i)] = dets[static_cast<std::size_t>(i)];
        for (auto& d : rescaled[static_cast<std::size_t>(i)]) d.score = 0.05 + 0.5 / (1.0 + std::exp(-d.score));
    }
    auto m = tiny_manifest(gt, {"a", "b"});
    auto r1 = mean_ap(dets, m);
    auto r2 = mean_ap(rescaled, m);
    CHECK(r1.map == r2.map);
    CHECK(r1.per_class_ap == r2.per_class_ap);
}

TEST_CASE("corloc: literal counting and the per-image top-1 mode") {
    BoundingBox g{10, 10, 30, 30}, far{40, 40, 60, 60};
    // five exact hits and five misses across five one-box images
    std::vector<std::vector<BoxAnnotation>> gt;
    std::vector<std::vector<Detection>> dets;
    for (int i = 0; i < 5; ++i) {
        gt.push_back({{0, g}});
        dets.push_back({det(0, 0.9, g), det(0, 0.8, far)});
    }
    auto m = tiny_manifest(gt, {"a"});
    auto c = corloc(dets, m);
    REQUIRE(c.has_value());
    CHECK(*c == 0.5);

    std::vector<std::vector<Detection>> all_tp(5, {det(0, 0.9, g)});
    CHECK(*corloc(all_tp, m) == 1.0);

    std::vector<std::vector<Detection>> none(5);
    CHECK_FALSE(corloc(none, m).has_value());

    // top-1: image 0 hits, image 1's best-scored box is wrong, image 2 has
    // no annotations and stays out of the denominator
    auto m3 = tiny_manifest({{{0, g}}, {{0, g}}, {}}, {"a"});
    std::vector<std::vector<Detection>> d3{
        {det(0, 0.9, g), det(0, 0.8, far)}, {det(0, 0.9, far), det(0, 0.2, g)}, {det(0, 0.99, far)}};
    auto top1 = corloc(d3, m3, 0.5, CorLocMode::PerImageTop1);
    REQUIRE(top1.has_value());
    CHECK(*top1 == 0.5);

    auto unannotated = tiny_manifest({{}, {}}, {"a"});
    CHECK_FALSE(corloc({{det(0, 0.9, g)}, {}}, unannotated, 0.5, CorLocMode::PerImageTop1).has_value());
}

TEST_CASE("evaluation report: assembly and json round trip") {
    auto dir = temp_dir("evalreport");
    BoundingBox b0{4, 4, 24, 24}, b1{30, 30, 50, 50};
    auto m = tiny_manifest({{{0, b0}, {1, b1}}, {{0, b0}}}, {"circle", "triangle", "rectangle"});
    std::vector<std::vector<Detection>> dets{{det(0, 0.9, b0), det(1, 0.8, b1)}, {det(0, 0.7, {0, 0, 9, 9})}};

    EvalConfig cfg;
    cfg.ap_mode = ApMode::Voc11;
    cfg.corloc_mode = CorLocMode::PerImageTop1;
    auto rep = evaluate_detections(dets, m, cfg);
    CHECK(rep.n_images == 2);
    CHECK(rep.per_class_ap.count("circle") == 1);
    CHECK(rep.per_class_ap.count("rectangle") == 0);  // no GT, excluded
    REQUIRE(rep.corloc.has_value());

    write_eval_report(rep, dir / "report.json");
    auto back = load_eval_report(dir / "report.json");
    CHECK(back.map == rep.map);
    CHECK(back.per_class_ap == rep.per_class_ap);
    CHECK(back.corloc == rep.corloc);
    CHECK(back.n_images == rep.n_images);
    CHECK(back.config.ap_mode == ApMode::Voc11);
    CHECK(back.config.corloc_mode == CorLocMode::PerImageTop1);

    // corloc serializes as an explicit null when undefined
    auto rep2 = evaluate_detections({{}, {}}, m, EvalConfig{});
    CHECK_FALSE(rep2.corloc.has_value());
    write_eval_report(rep2, dir / "report2.json");
    std::ifstream in(dir / "report2.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("\"corloc\": null") != std::string::npos);
    CHECK_FALSE(load_eval_report(dir / "report2.json").corloc.has_value());

    CHECK_THROWS_AS(load_eval_report(dir / "absent.json"), MissingArtifactError);
    std::ofstream bad(dir / "bad.json");
    bad << "{\"map\": }";
    bad.close();
    CHECK_THROWS_AS(load_eval_report(dir / "bad.json"), ConfigError);
    fs::remove_all(dir);
}
