#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "dagan/data.hpp"
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

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tensor random_quantized_image(Rng& rng, int h, int w) {
    std::vector<double> d(static_cast<std::size_t>(3) * h * w);
    for (double& v : d) v = static_cast<double>(rng.uniform_int(0, 255)) / 127.5 - 1.0;
    return Tensor::from_data({3, h, w}, std::move(d));
}

DegradeConfig identity_degrade() {
    DegradeConfig c;
    c.blur_sigma_lo = c.blur_sigma_hi = 0.0;
    c.motion_lengths = {1};
    c.desat_lo = c.desat_hi = 0.0;
    c.contrast_lo = c.contrast_hi = 0.0;
    c.noise_lo = c.noise_hi = 0.0;
    return c;
}

}  // namespace

TEST_CASE("ppm save/load round trip is exact and rejects other formats") {
    auto dir = temp_dir("ppm");
    Rng rng(2);
    Tensor img = random_quantized_image(rng, 13, 9);
    save_image(img, dir / "a.ppm");
    Tensor back = load_image(dir / "a.ppm");
    CHECK(back.shape() == img.shape());
    CHECK(back.data() == img.data());

    {
        std::ofstream out(dir / "black.ppm", std::ios::binary);
        out << "P6\n# a comment\n2 2\n255\n";
        for (int i = 0; i < 12; ++i) out.put('\0');
    }
    Tensor black = load_image(dir / "black.ppm");
    for (double v : black.data()) CHECK(v == -1.0);

    {
        std::ofstream out(dir / "p5.pgm", std::ios::binary);
        out << "P5\n2 2\n255\n....";
    }
    CHECK_THROWS_AS(load_image(dir / "p5.pgm"), ConfigError);
    {
        std::ofstream out(dir / "p3.ppm");
        out << "P3\n1 1\n255\n0 0 0\n";
    }
    CHECK_THROWS_AS(load_image(dir / "p3.ppm"), ConfigError);
    {
        std::ofstream out(dir / "short.ppm", std::ios::binary);
        out << "P6\n4 4\n255\nxx";
    }
    CHECK_THROWS_AS(load_image(dir / "short.ppm"), ConfigError);
    {
        std::ofstream out(dir / "deep.ppm", std::ios::binary);
        out << "P6\n1 1\n65535\n......";
    }
    CHECK_THROWS_AS(load_image(dir / "deep.ppm"), ConfigError);
    {
        std::ofstream out(dir / "garbled.ppm", std::ios::binary);
        out << "P6\nnot numbers\n";
    }
    CHECK_THROWS_AS(load_image(dir / "garbled.ppm"), ConfigError);
    CHECK_THROWS_AS(load_image(dir / "absent.ppm"), MissingArtifactError);

    // quantization: clamped endpoints, and values just beyond a half step
    // land on the adjacent levels
    Tensor edge = Tensor::from_data({3, 1, 1}, {1.501 / 127.5 - 1.0, 1.499 / 127.5 - 1.0, 1.0});
    save_image(edge, dir / "edge.ppm");
    const std::string bytes = slurp(dir / "edge.ppm");
    const std::string tail = bytes.substr(bytes.size() - 3);
    CHECK(static_cast<unsigned char>(tail[0]) == 2);
    CHECK(static_cast<unsigned char>(tail[1]) == 1);
    CHECK(static_cast<unsigned char>(tail[2]) == 255);
    Tensor wild = Tensor::from_data({3, 1, 1}, {-3.0, 4.0, 0.0});
    save_image(wild, dir / "wild.ppm");
    const std::string wb = slurp(dir / "wild.ppm");
    CHECK(static_cast<unsigned char>(wb[wb.size() - 3]) == 0);
    CHECK(static_cast<unsigned char>(wb[wb.size() - 2]) == 255);
    CHECK(static_cast<unsigned char>(wb[wb.size() - 1]) == 128);
}

TEST_CASE("iou matches a rasterized pixel-count oracle") {
    BoundingBox a{0, 0, 10, 10}, b{5, 0, 15, 10};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(iou(a, {20, 20, 30, 30}) == 0.0);
    CHECK_THROWS_AS(iou(a, {5, 5, 5, 9}), ConfigError);

    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        auto rand_box = [&] {
            int x0 = static_cast<int>(rng.uniform_int(0, 20)), y0 = static_cast<int>(rng.uniform_int(0, 20));
            int x1 = x0 + static_cast<int>(rng.uniform_int(1, 12)), y1 = y0 + static_cast<int>(rng.uniform_int(1, 12));
            return BoundingBox{double(x0), double(y0), double(x1), double(y1)};
        };
        BoundingBox p = rand_box(), q = rand_box();
        int inter = 0, uni = 0;
        for (int y = 0; y < 40; ++y)
            for (int x = 0; x < 40; ++x) {
                const bool in_p = x >= p.x_min && x < p.x_max && y >= p.y_min && y < p.y_max;
                const bool in_q = x >= q.x_min && x < q.x_max && y >= q.y_min && y < q.y_max;
                inter += in_p && in_q;
                uni += in_p || in_q;
            }
        CHECK(iou(p, q) == doctest::Approx(static_cast<double>(inter) / uni).epsilon(1e-12));
        CHECK(iou(p, q) == iou(q, p));
    }
}

TEST_CASE("mask_to_bbox is the tightest half-open envelope") {
    std::vector<std::uint8_t> m(8 * 8, 0);
    m[2 * 8 + 3] = 1;
    BoundingBox b = mask_to_bbox(m, 8, 8);
    CHECK(b.x_min == 3);
    CHECK(b.y_min == 2);
    CHECK(b.x_max == 4);
    CHECK(b.y_max == 3);

    std::fill(m.begin(), m.end(), 0);
    m[1 * 8 + 1] = 1;
    m[4 * 8 + 6] = 1;
    b = mask_to_bbox(m, 8, 8);
    CHECK(b.x_min == 1);
    CHECK(b.y_min == 1);
    CHECK(b.x_max == 7);
    CHECK(b.y_max == 5);

    CHECK_THROWS_AS(mask_to_bbox(std::vector<std::uint8_t>(64, 0), 8, 8), ConfigError);

    // integer-box rasterization round trip
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        int x0 = static_cast<int>(rng.uniform_int(0, 10)), y0 = static_cast<int>(rng.uniform_int(0, 10));
        int x1 = x0 + static_cast<int>(rng.uniform_int(1, 6)), y1 = y0 + static_cast<int>(rng.uniform_int(1, 6));
        std::vector<std::uint8_t> mm(16 * 16, 0);
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) mm[static_cast<std::size_t>(y) * 16 + x] = 1;
        BoundingBox bb = mask_to_bbox(mm, 16, 16);
        CHECK(bb.x_min == x0);
        CHECK(bb.y_min == y0);
        CHECK(bb.x_max == x1);
        CHECK(bb.y_max == y1);
    }
}

TEST_CASE("bilinear_resize preserves constants, ranges and linear ramps") {
    Tensor c = Tensor::full({3, 5, 7}, 0.37);
    Tensor cr = bilinear_resize(c, 11, 4);
    CHECK(cr.shape() == std::vector<int>{3, 11, 4});
    for (double v : cr.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));

    Rng rng(6);
    Tensor r = random_quantized_image(rng, 8, 8);
    Tensor same = bilinear_resize(r, 8, 8);
    CHECK(same.data() == r.data());
    Tensor up = bilinear_resize(r, 19, 5);
    const double lo = *std::min_element(r.data().begin(), r.data().end());
    const double hi = *std::max_element(r.data().begin(), r.data().end());
    for (double v : up.data()) {
        CHECK(v >= lo - 1e-12);
        CHECK(v <= hi + 1e-12);
    }

    // horizontal ramp stays a ramp in the interior after 2x upscale
    std::vector<double> ramp(3 * 4 * 4);
    for (int c2 = 0; c2 < 3; ++c2)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) ramp[(c2 * 4 + y) * 4 + x] = x;
    Tensor rampt = Tensor::from_data({3, 4, 4}, ramp);
    Tensor up2 = bilinear_resize(rampt, 4, 8);
    for (int x = 1; x < 7; ++x) {
        const double expect = (x + 0.5) * 0.5 - 0.5;
        CHECK(up2.data()[static_cast<std::size_t>(x)] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("resize_and_crop covers all offsets uniformly and center-crops without rng") {
    // encode the flat index in channel 0 so the crop origin is recoverable
    const int rs = 36, cs = 32;
    std::vector<double> d(static_cast<std::size_t>(3) * rs * rs);
    for (int y = 0; y < rs; ++y)
        for (int x = 0; x < rs; ++x) d[static_cast<std::size_t>(y) * rs + x] = (y * rs + x) / 1300.0 - 0.4;
    Tensor img = Tensor::from_data({3, rs, rs}, std::move(d));

    Tensor centered = resize_and_crop(img, rs, cs, nullptr);
    CHECK(centered.shape() == std::vector<int>{3, cs, cs});
    const double v0 = centered.data()[0];
    const int idx0 = static_cast<int>(std::lround((v0 + 0.4) * 1300.0));
    CHECK(idx0 == 2 * rs + 2);

    Rng rng(8);
    std::vector<int> counts(25, 0);
    for (int i = 0; i < 10000; ++i) {
        Tensor crop = resize_and_crop(img, rs, cs, &rng);
        const int idx = static_cast<int>(std::lround((crop.data()[0] + 0.4) * 1300.0));
        const int oy = idx / rs, ox = idx % rs;
        REQUIRE(oy >= 0);
        REQUIRE(oy <= 4);
        REQUIRE(ox >= 0);
        REQUIRE(ox <= 4);
        counts[static_cast<std::size_t>(oy * 5 + ox)] += 1;
    }
    for (int c : counts) {
        CHECK(c > 300);
        CHECK(c < 500);
    }

    Tensor degenerate = resize_and_crop(img, 32, 32, &rng);
    CHECK(degenerate.shape() == std::vector<int>{3, 32, 32});
    CHECK(degenerate.data() == resize_and_crop(img, 32, 32, nullptr).data());
    CHECK_THROWS_AS(resize_and_crop(img, 32, 36, &rng), ConfigError);
}

TEST_CASE("degrade identity, pure-luma, determinism and statistics") {
    Rng srng(10);
    Scene sc = render_scene(srng, 64, 3);

    Rng r1(5);
    Tensor same = degrade(sc.image, identity_degrade(), r1);
    CHECK(same.data() == sc.image.data());

    DegradeConfig luma_only = identity_degrade();
    luma_only.desat_lo = luma_only.desat_hi = 1.0;
    Rng r2(5);
    Tensor gray = degrade(sc.image, luma_only, r2);
    const std::size_t plane = static_cast<std::size_t>(64) * 64;
    for (std::size_t p = 0; p < plane; ++p) {
        CHECK(gray.data()[p] == gray.data()[plane + p]);
        CHECK(gray.data()[p] == gray.data()[2 * plane + p]);
    }

    DegradeConfig def;
    Rng r3(5), r4(5);
    CHECK(degrade(sc.image, def, r3).data() == degrade(sc.image, def, r4).data());

    int checked = 0;
    for (std::uint64_t seed = 100; seed < 150; ++seed) {
        Rng sr(seed);
        Scene s = render_scene(sr, 64, 3);
        Rng dr(seed + 1000);
        Tensor deg = degrade(s.image, def, dr);
        CHECK(mean_saturation(deg) < mean_saturation(s.image));
        CHECK(edge_energy(deg) < edge_energy(s.image));
        for (double v : deg.data()) {
            REQUIRE(v >= -1.0);
            REQUIRE(v <= 1.0);
        }
        ++checked;
    }
    CHECK(checked == 50);
}

TEST_CASE("render_scene places 1-3 well-separated shapes with exact boxes and near-uniform classes") {
    std::vector<int> class_counts(3, 0);
    int total_boxes = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(Rng::mix(77, seed));
        Scene sc = render_scene(rng, 64, 3);
        REQUIRE(sc.boxes.size() >= 1);
        REQUIRE(sc.boxes.size() <= 3);
        for (std::size_t i = 0; i < sc.boxes.size(); ++i) {
            const auto& b = sc.boxes[i];
            REQUIRE(b.class_id >= 0);
            REQUIRE(b.class_id < 3);
            class_counts[static_cast<std::size_t>(b.class_id)] += 1;
            ++total_boxes;
            CHECK(b.box.x_min >= 0);
            CHECK(b.box.y_min >= 0);
            CHECK(b.box.x_max <= 64);
            CHECK(b.box.y_max <= 64);
            CHECK(b.box.width() >= 7.0);
            CHECK(b.box.width() <= 30.0);
            CHECK(b.box.height() >= 7.0);
            CHECK(b.box.height() <= 30.0);
            for (std::size_t j = 0; j < i; ++j) CHECK(iou(sc.boxes[j].box, b.box) < 0.3);
        }
    }
    for (int c : class_counts) {
        CHECK(c > total_boxes / 3.0 * 0.9);
        CHECK(c < total_boxes / 3.0 * 1.1);
    }
}

TEST_CASE("gen_synthetic_corpus bookkeeping, unsupervised premise, determinism") {
    auto dir = temp_dir("corpus_a");
    GenCorpusConfig cfg;
    cfg.n_train_source = 12;
    cfg.n_train_target = 10;
    cfg.n_test_target = 6;
    cfg.seed = 42;
    DegradeConfig deg;
    SyntheticCorpus c = gen_synthetic_corpus(cfg, deg, dir);

    CHECK(c.source_train.samples.size() == 12);
    CHECK(c.target_train.samples.size() == 10);
    CHECK(c.target_train_labeled.samples.size() == 10);
    CHECK(c.target_test.samples.size() == 6);
    CHECK(c.source_train.classes == std::vector<std::string>{"circle", "triangle", "rectangle"});

    for (const auto& s : c.source_train.samples) {
        CHECK(s.domain == "source");
        CHECK(!s.boxes.empty());
    }
    for (const auto& s : c.target_train.samples) {
        CHECK(s.domain == "target");
        CHECK(s.boxes.empty());  // image-level tags stay, boxes are withheld
        CHECK(!s.labels.empty());
    }
    for (const auto& s : c.target_test.samples) {
        CHECK(s.domain == "target");
        CHECK(!s.boxes.empty());
    }
    // labeled twin shares images and tags with the box-free training split
    for (std::size_t i = 0; i < c.target_train.samples.size(); ++i) {
        CHECK(c.target_train.samples[i].image == c.target_train_labeled.samples[i].image);
        CHECK(c.target_train.samples[i].labels == c.target_train_labeled.samples[i].labels);
        CHECK(!c.target_train_labeled.samples[i].boxes.empty());
    }

    DatasetManifest loaded = load_manifest(dir / "target_test.jsonl");
    CHECK(loaded.samples.size() == 6);
    CHECK(loaded.classes == c.target_test.classes);
    CHECK(loaded.provenance == "synthetic corpus, seed 42");
    for (std::size_t i = 0; i < loaded.samples.size(); ++i) {
        CHECK(loaded.samples[i].boxes.size() == c.target_test.samples[i].boxes.size());
        CHECK(fs::exists(loaded.resolve(loaded.samples[i])));
    }

    auto dir2 = temp_dir("corpus_b");
    gen_synthetic_corpus(cfg, deg, dir2);
    for (const char* f : {"source_train.jsonl", "target_train.jsonl", "target_train_labeled.jsonl",
                          "target_test.jsonl", "classes.json"})
        CHECK(slurp(dir / f) == slurp(dir2 / f));
    for (const auto& s : c.source_train.samples)
        CHECK(slurp(dir / s.image) == slurp(dir2 / s.image));
    for (const auto& s : c.target_train.samples)
        CHECK(slurp(dir / s.image) == slurp(dir2 / s.image));
}

TEST_CASE("classic_augment zero-noise copies, blur oracle, and manifest doubling") {
    auto dir = temp_dir("aug_src");
    GenCorpusConfig cfg;
    cfg.n_train_source = 4;
    cfg.n_train_target = 1;
    cfg.n_test_target = 1;
    cfg.seed = 9;
    SyntheticCorpus c = gen_synthetic_corpus(cfg, DegradeConfig{}, dir);

    auto aug_dir = temp_dir("aug_zero");
    AugmentKind zero{AugmentKind::Noise, 0.0, 5};
    DatasetManifest man = classic_augment(c.source_train, zero, aug_dir / "train.jsonl", 3);
    CHECK(man.samples.size() == 8);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(man.samples[i].boxes.size() == man.samples[i + 4].boxes.size());
        CHECK(slurp(man.resolve(man.samples[i])) == slurp(man.resolve(man.samples[i + 4])));
    }
    DatasetManifest reloaded = load_manifest(aug_dir / "train.jsonl");
    CHECK(reloaded.samples.size() == 8);
    for (const auto& s : reloaded.samples) CHECK(fs::exists(reloaded.resolve(s)));

    // blur path equals an explicit 2-D convolution oracle (kernel 5, sigma 2)
    Tensor img = load_image(c.source_train.resolve(c.source_train.samples[0]));
    Tensor fast = gaussian_blur(img, 2.0, 2);
    const int h = img.dim(1), w = img.dim(2);
    double k1[5];
    double ksum = 0;
    for (int i = -2; i <= 2; ++i) {
        k1[i + 2] = std::exp(-0.5 * i * i / 4.0);
        ksum += k1[i + 2];
    }
    for (double& v : k1) v /= ksum;
    auto reflect = [&](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i;
            if (i >= n) i = 2 * n - 2 - i;
        }
        return i;
    };
    Rng rng(14);
    for (int probe = 0; probe < 200; ++probe) {
        const int cc = static_cast<int>(rng.uniform_int(0, 2));
        const int y = static_cast<int>(rng.uniform_int(0, h - 1));
        const int x = static_cast<int>(rng.uniform_int(0, w - 1));
        double acc = 0;
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx)
                acc += k1[dy + 2] * k1[dx + 2] *
                       img.data()[(static_cast<std::size_t>(cc) * h + reflect(y + dy, h)) * w + reflect(x + dx, w)];
        CHECK(fast.data()[(static_cast<std::size_t>(cc) * h + y) * w + x] == doctest::Approx(acc).epsilon(1e-12));
    }

    auto blur_dir = temp_dir("aug_blur");
    AugmentKind blur{AugmentKind::Blur, 2.0, 5};
    DatasetManifest bman = classic_augment(c.source_train, blur, blur_dir / "train.jsonl", 3);
    Tensor persisted = load_image(bman.resolve(bman.samples[4]));
    for (std::size_t i = 0; i < persisted.data().size(); ++i) {
        const double q = std::clamp(std::round((fast.data()[i] + 1.0) * 127.5), 0.0, 255.0) / 127.5 - 1.0;
        CHECK(persisted.data()[i] == doctest::Approx(q).epsilon(1e-12));
    }
}

TEST_CASE("manifest rejects malformed input") {
    auto dir = temp_dir("badman");
    {
        std::ofstream out(dir / "m.jsonl");
        out << "{\"image\": \"a.ppm\", \"domain\": \"source\", \"labels\": [], \"boxes\": []}\n";
        out << "not json\n";
        std::ofstream sc(dir / "classes.json");
        sc << "{\"classes\": [\"circle\"]}\n";
    }
    CHECK_THROWS_AS(load_manifest(dir / "m.jsonl"), ConfigError);
    CHECK_THROWS_AS(load_manifest(dir / "missing.jsonl"), MissingArtifactError);
    {
        std::ofstream out(dir / "m2.jsonl");
        out << "{\"image\": \"a.ppm\", \"domain\": \"source\", \"labels\": [4], \"boxes\": []}\n";
    }
    CHECK_THROWS_AS(load_manifest(dir / "m2.jsonl"), ConfigError);
    {
        std::ofstream out(dir / "m3.jsonl");
        out << "{\"image\": \"a.ppm\", \"domain\": \"studio\", \"labels\": [], \"boxes\": []}\n";
    }
    CHECK_THROWS_AS(load_manifest(dir / "m3.jsonl"), ConfigError);
}
