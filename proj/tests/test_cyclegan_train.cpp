#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "dagan/gan.hpp"
#include "dagan/grad_check.hpp"
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

GanConfig tiny_config() {
    GanConfig cfg;
    cfg.gen = GeneratorSpec{3, 4, 1, 1};
    cfg.disc = DiscriminatorSpec{1, 4};
    cfg.resize_to = 18;
    cfg.crop_to = 16;
    cfg.total_steps = 4;
    cfg.seed = 11;
    return cfg;
}

Tensor const_batch(int b, int s, double v) { return Tensor::full({b, 3, s, s}, v); }

Tensor rand_batch(int b, int s, Rng& rng) {
    std::vector<double> d(static_cast<std::size_t>(b) * 3 * s * s);
    for (double& v : d) v = rng.uniform(-1.0, 1.0);
    return Tensor::from_data({b, 3, s, s}, std::move(d));
}

void fill_params(ParamMap& p, const std::string& prefix, double v) {
    for (const auto& name : p.names())
        if (name.rfind(prefix, 0) == 0) {
            auto& d = p.at(name).mutable_data();
            std::fill(d.begin(), d.end(), v);
        }
}

double grad_norm(const ParamMap& p) {
    double acc = 0.0;
    for (const auto& [name, t] : p) {
        if (!t.has_grad()) continue;
        for (double g : t.grad()) acc += g * g;
    }
    return std::sqrt(acc);
}

}  // namespace

TEST_CASE("discriminator loss: all-zero logits give 2 ln 2") {
    auto d = build_patch_discriminator(DiscriminatorSpec{1, 4}, 3);
    fill_params(d.params, "", 0.0);
    Rng rng(1);
    Tensor loss = discriminator_loss(d, rand_batch(1, 8, rng), rand_batch(1, 8, rng));
    CHECK(loss.value() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(discriminator_loss(d, const_batch(1, 8, 0.0), const_batch(1, 16, 0.0)), ConfigError);
}

TEST_CASE("discriminator loss: a separating discriminator drives the loss toward zero") {
    // positive conv weights turn all-ones real batches into large positive
    // logits and all-minus-ones fakes into leaky-scaled negative ones
    auto d = build_patch_discriminator(DiscriminatorSpec{1, 4}, 3);
    fill_params(d.params, "conv0.w", 0.2);
    fill_params(d.params, "conv0.b", 0.0);
    fill_params(d.params, "out.w", 1.0);
    fill_params(d.params, "out.b", 0.0);
    Tensor loss = discriminator_loss(d, const_batch(1, 8, 1.0), const_batch(1, 8, -1.0));
    CHECK(loss.value() < 1e-6);
    CHECK(loss.value() >= 0.0);
}

TEST_CASE("discriminator loss: matches the brute-force formula on random nets") {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        auto d = build_patch_discriminator(DiscriminatorSpec{2, 4}, 100 + trial);
        Tensor real = rand_batch(2, 8, rng);
        Tensor fake = rand_batch(2, 8, rng);
        Tensor loss = discriminator_loss(d, real, fake);

        auto bce_mean = [](const Tensor& logits, double t) {
            double acc = 0.0;
            for (double l : logits.data()) acc += std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::abs(l)));
            return acc / static_cast<double>(logits.numel());
        };
        Tensor lr = discriminator_forward(d, real);
        Tensor lf = discriminator_forward(d, fake);
        CHECK(loss.value() == doctest::Approx(bce_mean(lr, 1.0) + bce_mean(lf, 0.0)).epsilon(1e-12));
    }
}

TEST_CASE("discriminator loss: no gradient ever reaches the generator") {
    GanConfig cfg = tiny_config();
    TrainState st = init_train_state(cfg);
    Rng rng(2);
    Tensor x = rand_batch(1, 16, rng);
    Tensor y = rand_batch(1, 16, rng);

    std::vector<std::vector<double>> before;
    for (const auto& [name, t] : st.g.params) before.push_back(t.data());

    Tensor fake = generator_forward(st.g, x);
    st.g.params.zero_grad();
    st.d_y.params.zero_grad();
    Tensor loss = discriminator_loss(st.d_y, y, fake);
    loss.backward();
    adam_step(st.d_y.params, st.opt_d_y, cfg.adam());

    CHECK(grad_norm(st.g.params) == 0.0);
    std::size_t i = 0;
    for (const auto& [name, t] : st.g.params) CHECK(t.data() == before[i++]);
    CHECK(grad_norm(st.d_y.params) > 0.0);
}

TEST_CASE("generator adversarial loss: zero discriminator gives ln 2, fooled one goes to zero") {
    auto d = build_patch_discriminator(DiscriminatorSpec{1, 4}, 3);
    fill_params(d.params, "", 0.0);
    Rng rng(1);
    Tensor fake = rand_batch(1, 8, rng);
    CHECK(generator_adv_loss(d, fake).value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    fill_params(d.params, "conv0.w", 0.1);
    fill_params(d.params, "out.w", 1.0);
    CHECK(generator_adv_loss(d, const_batch(1, 8, 1.0)).value() < 1e-6);
}

TEST_CASE("generator adversarial loss: gradient w.r.t. generator parameters passes grad_check") {
    auto g = build_generator(GeneratorSpec{3, 4, 1, 1}, 7);
    auto d = build_patch_discriminator(DiscriminatorSpec{1, 4}, 8);
    Rng rng(3);
    Tensor x = rand_batch(1, 8, rng);
    auto loss = [&]() { return generator_adv_loss(d, generator_forward(g, x)); };

    GradCheckOptions opt;
    opt.samples_per_param = 2;
    Rng pick(17);
    auto rep = grad_check(loss, g.params, opt, &pick);
    INFO(rep.summary());
    CHECK(rep.passed);
}

TEST_CASE("cycle loss: identity on the zero image, forced 0.5 offset, random oracle") {
    GeneratorSpec spec{3, 4, 1, 1};
    auto g = build_generator(spec, 1);
    auto f = build_generator(spec, 2);

    // zeroed output layers make both maps exact identities on the zero image
    fill_params(g.params, "out.", 0.0);
    fill_params(f.params, "out.", 0.0);
    Tensor zero = const_batch(1, 8, 0.0);
    CHECK(cycle_loss(g, f, zero).value() == 0.0);

    // second map emits a constant 0.5, so the composition is input + 0.5
    fill_params(f.params, "out.b", std::atanh(0.5));
    CHECK(cycle_loss(g, f, zero).value() == doctest::Approx(0.5).epsilon(1e-12));

    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        auto a = build_generator(spec, 50 + trial);
        auto b = build_generator(spec, 60 + trial);
        Tensor batch = rand_batch(1, 8, rng);
        Tensor composed = generator_forward(b, generator_forward(a, batch));
        double acc = 0.0;
        for (std::int64_t i = 0; i < batch.numel(); ++i)
            acc += std::abs(composed.data()[static_cast<std::size_t>(i)] - batch.data()[static_cast<std::size_t>(i)]);
        CHECK(cycle_loss(a, b, batch).value() ==
              doctest::Approx(acc / static_cast<double>(batch.numel())).epsilon(1e-12));
    }
}

TEST_CASE("total objective: exact assembly") {
    CHECK(total_objective(0.7, 0.7, 0.1, 0.2, 10.0) == doctest::Approx(4.4).epsilon(1e-12));
    CHECK(total_objective(0.3, 0.9, 5.0, 7.0, 0.0) == 0.3 + 0.9);
    CHECK(GanConfig{}.lambda_cycle == 10.0);

    Rng rng(6);
    for (int i = 0; i < 100; ++i) {
        double a = rng.uniform(0, 3), b = rng.uniform(0, 3), c = rng.uniform(0, 1), d = rng.uniform(0, 1);
        double lam = rng.uniform(0, 20);
        CHECK(total_objective(a, b, c, d, lam) == a + b + lam * (c + d));
    }
    CHECK_THROWS_AS(total_objective(std::nan(""), 0, 0, 0, 1), ConfigError);
}

TEST_CASE("gan config validation") {
    GanConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    GanConfig bad = cfg;
    bad.lambda_cycle = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.crop_to = 20;  // exceeds resize_to
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.crop_to = 15;  // not divisible by 2^n_downsample
    bad.resize_to = 18;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.total_steps = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("train step: forward mode skips F, D_X and the cycle terms") {
    GanConfig cfg = tiny_config();
    cfg.mode = GanMode::Forward;
    TrainState st = init_train_state(cfg);
    CHECK(st.f.params.size() == 0);
    CHECK(st.d_x.params.size() == 0);

    Rng rng(7);
    train_step(st, rand_batch(1, 16, rng), rand_batch(1, 16, rng), cfg);
    REQUIRE(st.history.size() == 1);
    const LossRow& r = st.history[0];
    CHECK(r.d_x == 0.0);
    CHECK(r.f_adv == 0.0);
    CHECK(r.cyc_fwd == 0.0);
    CHECK(r.cyc_bwd == 0.0);
    CHECK(r.total == r.g_adv);
    CHECK(r.d_y > 0.0);
}

TEST_CASE("train step: bookkeeping, bounds, and abort on poisoned parameters") {
    GanConfig cfg = tiny_config();
    cfg.total_steps = 3;
    TrainState st = init_train_state(cfg);
    Rng rng(8);
    for (int i = 0; i < 3; ++i) {
        train_step(st, rand_batch(1, 16, rng), rand_batch(1, 16, rng), cfg);
        CHECK(st.step == i + 1);
        CHECK(st.history.size() == static_cast<std::size_t>(i + 1));
        const LossRow& r = st.history.back();
        for (double v : {r.d_y, r.d_x, r.g_adv, r.f_adv, r.cyc_fwd, r.cyc_bwd, r.total})
            CHECK(std::isfinite(v));
        CHECK(r.total == total_objective(r.g_adv, r.f_adv, r.cyc_fwd, r.cyc_bwd, cfg.lambda_cycle));
    }
    CHECK_THROWS_AS(train_step(st, rand_batch(1, 16, rng), rand_batch(1, 16, rng), cfg), ConfigError);

    TrainState bad = init_train_state(cfg);
    CHECK_THROWS_AS(train_step(bad, rand_batch(1, 16, rng), rand_batch(1, 8, rng), cfg), ConfigError);
    bad.g.params.at("stem.w").mutable_data()[0] = std::nan("");
    CHECK_THROWS_AS(train_step(bad, rand_batch(1, 16, rng), rand_batch(1, 16, rng), cfg), NumericError);
}

TEST_CASE("train step: two runs with identical seeds produce bitwise identical histories") {
    GanConfig cfg = tiny_config();
    cfg.total_steps = 50;
    auto run = [&]() {
        TrainState st = init_train_state(cfg);
        Rng feed(21);
        for (int i = 0; i < cfg.total_steps; ++i)
            train_step(st, rand_batch(1, 16, feed), rand_batch(1, 16, feed), cfg);
        return st;
    };
    TrainState a = run();
    TrainState b = run();
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].d_y == b.history[i].d_y);
        CHECK(a.history[i].d_x == b.history[i].d_x);
        CHECK(a.history[i].total == b.history[i].total);
    }
    for (const auto& [name, t] : a.g.params) CHECK(t.data() == b.g.params.at(name).data());
}

TEST_CASE("joint objective: every term contributes gradient to its networks") {
    GanConfig cfg = tiny_config();
    TrainState st = init_train_state(cfg);
    Rng rng(9);
    Tensor x = rand_batch(1, 16, rng);
    Tensor y = rand_batch(1, 16, rng);

    auto norms_after = [&](const Tensor& term) {
        st.g.params.zero_grad();
        st.f.params.zero_grad();
        term.backward();
        return std::pair<double, double>{grad_norm(st.g.params), grad_norm(st.f.params)};
    };

    Tensor fake_y = generator_forward(st.g, x);
    Tensor fake_x = generator_forward(st.f, y);

    auto [g1, f1] = norms_after(generator_adv_loss(st.d_y, fake_y));
    CHECK(g1 > 0.0);
    CHECK(f1 == 0.0);

    auto [g2, f2] = norms_after(generator_adv_loss(st.d_x, fake_x));
    CHECK(g2 == 0.0);
    CHECK(f2 > 0.0);

    auto [g3, f3] = norms_after(l1_loss(generator_forward(st.f, fake_y), x));
    CHECK(g3 > 0.0);
    CHECK(f3 > 0.0);

    auto [g4, f4] = norms_after(l1_loss(generator_forward(st.g, fake_x), y));
    CHECK(g4 > 0.0);
    CHECK(f4 > 0.0);
}

TEST_CASE("loss csv: exact header and round-trippable rows") {
    auto dir = temp_dir("losscsv");
    std::vector<LossRow> rows{{0, 1.5, 0.25, 1.0 / 3.0, 0.1, 0.2, 0.3, 4.4}, {1, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5}};
    write_loss_csv(rows, dir / "loss.csv");
    std::string text = slurp(dir / "loss.csv");
    CHECK(text.rfind("step,d_y,d_x,g_adv,f_adv,cyc_fwd,cyc_bwd,total\n", 0) == 0);

    std::ifstream in(dir / "loss.csv");
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    double g_adv = 0.0;
    int step = -1;
    REQUIRE(std::sscanf(line.c_str(), "%d,%*[^,],%*[^,],%lf", &step, &g_adv) == 2);
    CHECK(step == 0);
    CHECK(g_adv == 1.0 / 3.0);  // 17 significant digits survive the trip
    fs::remove_all(dir);
}

TEST_CASE("run training: checkpoints per mode, csv length, and full determinism") {
    auto dir = temp_dir("gantrain");
    GenCorpusConfig gc;
    gc.n_train_source = 5;
    gc.n_train_target = 5;
    gc.n_test_target = 2;
    gc.image_side = 32;
    gc.seed = 3;
    auto corpus = gen_synthetic_corpus(gc, DegradeConfig{}, dir / "corpus");

    GanConfig cfg = tiny_config();
    auto art = run_training(corpus.source_train, corpus.target_train, cfg, dir / "cycle");
    REQUIRE(art.checkpoints.count(-1) == 1);
    ParamMap ck = load_checkpoint(art.checkpoints.at(-1));
    bool has_f = false, has_dx = false;
    for (const auto& name : ck.names()) {
        if (name.rfind("f.", 0) == 0) has_f = true;
        if (name.rfind("d_x.", 0) == 0) has_dx = true;
    }
    CHECK(has_f);
    CHECK(has_dx);

    std::string csv = slurp(art.loss_csvs.at(-1));
    std::size_t lines = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n'));
    CHECK(lines == static_cast<std::size_t>(cfg.total_steps) + 1);  // header + one row per step

    GanConfig fwd = cfg;
    fwd.mode = GanMode::Forward;
    auto art_f = run_training(corpus.source_train, corpus.target_train, fwd, dir / "forward");
    ParamMap ckf = load_checkpoint(art_f.checkpoints.at(-1));
    for (const auto& name : ckf.names()) {
        CHECK(name.rfind("f.", 0) != 0);
        CHECK(name.rfind("d_x.", 0) != 0);
    }
    CHECK(ckf.contains("g.stem.w"));
    CHECK(ckf.contains("d_y.conv0.w"));

    // training is a pure function of (manifests, config)
    auto art2 = run_training(corpus.source_train, corpus.target_train, cfg, dir / "cycle2");
    CHECK(slurp(art.checkpoints.at(-1)) == slurp(art2.checkpoints.at(-1)));
    CHECK(slurp(art.loss_csvs.at(-1)) == slurp(art2.loss_csvs.at(-1)));
    fs::remove_all(dir);
}

TEST_CASE("run training: conditioned mode trains one model per class with fallback") {
    auto dir = temp_dir("gancond");
    GenCorpusConfig gc;
    gc.n_train_source = 8;
    gc.n_train_target = 8;
    gc.n_test_target = 2;
    gc.image_side = 32;
    gc.seed = 5;
    auto corpus = gen_synthetic_corpus(gc, DegradeConfig{}, dir / "corpus");

    std::set<int> source_classes;
    for (const auto& s : corpus.source_train.samples)
        for (int l : s.labels) source_classes.insert(l);
    REQUIRE(source_classes.size() == 3);  // seed chosen so the tiny corpus covers all classes

    GanConfig cfg = tiny_config();
    cfg.total_steps = 2;
    cfg.conditioned = true;
    // the box-free target split suffices: per-class pools come from tags
    auto art = run_training(corpus.source_train, corpus.target_train, cfg, dir / "cond");
    for (int k : source_classes) {
        REQUIRE(art.checkpoints.count(k) == 1);
        CHECK(fs::exists(art.checkpoints.at(k)));
        ParamMap ck = load_checkpoint(art.checkpoints.at(k));
        CHECK(ck.contains("g.stem.w"));
    }
    CHECK(art.checkpoints.size() == source_classes.size());

    // strip one class from the target; that class must fall back to the
    // unconditioned checkpoint
    DatasetManifest pruned = corpus.target_train;
    pruned.samples.clear();
    const int dropped = *source_classes.begin();
    for (const auto& s : corpus.target_train.samples) {
        bool has = false;
        for (int l : s.labels) has |= l == dropped;
        if (!has) pruned.samples.push_back(s);
    }
    auto art2 = run_training(corpus.source_train, pruned, cfg, dir / "cond2");
    REQUIRE(art2.checkpoints.count(-1) == 1);
    CHECK(art2.checkpoints.at(dropped) == art2.checkpoints.at(-1));
    fs::remove_all(dir);
}

TEST_CASE("transform dataset: annotations survive, zero generator blanks the pixels") {
    auto dir = temp_dir("gantransform");
    GenCorpusConfig gc;
    gc.n_train_source = 4;
    gc.n_train_target = 4;
    gc.n_test_target = 2;
    gc.image_side = 32;
    gc.seed = 7;
    auto corpus = gen_synthetic_corpus(gc, DegradeConfig{}, dir / "corpus");

    GeneratorSpec spec{3, 4, 1, 1};
    auto g = build_generator(spec, 1);
    fill_params(g.params, "out.", 0.0);  // constant zero image out of tanh
    std::map<int, GeneratorParams> gens;
    gens[-1] = g;

    auto out = transform_dataset(gens, corpus.source_train, 16, dir / "translated");
    REQUIRE(out.samples.size() == corpus.source_train.samples.size());
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
        const auto& a = corpus.source_train.samples[i];
        const auto& b = out.samples[i];
        CHECK(a.labels == b.labels);
        REQUIRE(a.boxes.size() == b.boxes.size());
        for (std::size_t j = 0; j < a.boxes.size(); ++j) {
            CHECK(a.boxes[j].class_id == b.boxes[j].class_id);
            CHECK(a.boxes[j].box.x_min == b.boxes[j].box.x_min);
            CHECK(a.boxes[j].box.x_max == b.boxes[j].box.x_max);
            CHECK(a.boxes[j].box.y_min == b.boxes[j].box.y_min);
            CHECK(a.boxes[j].box.y_max == b.boxes[j].box.y_max);
        }
        Tensor img = load_image(out.resolve(b));
        CHECK(img.shape() == std::vector<int>{3, 32, 32});
        // tanh(0) image stores as the mid-gray byte 128 everywhere
        for (double v : img.data()) CHECK(v == 128.0 / 127.5 - 1.0);
    }

    // output manifest reloads from disk
    auto reloaded = load_manifest(dir / "translated" / "manifest.jsonl");
    CHECK(reloaded.samples.size() == out.samples.size());
    fs::remove_all(dir);
}

TEST_CASE("transform dataset: conditioned generators are picked by majority class") {
    auto dir = temp_dir("gantransform2");
    // hand-built two-image manifest over one stored picture
    Rng rng(1);
    std::vector<double> d(3 * 32 * 32);
    for (double& v : d) v = rng.uniform(-1.0, 1.0);
    fs::create_directories(dir / "src");
    save_image(Tensor::from_data({3, 32, 32}, std::move(d)), dir / "src" / "img.ppm");

    DatasetManifest src;
    src.root = dir / "src";
    src.classes = {"a", "b"};
    ImageSample s0;
    s0.image = "img.ppm";
    s0.domain = "source";
    s0.labels = {0};
    s0.boxes = {{0, {1, 1, 5, 5}}};
    ImageSample s1 = s0;
    s1.labels = {1};
    s1.boxes = {{1, {1, 1, 5, 5}}};
    src.samples = {s0, s1};

    GeneratorSpec spec{3, 4, 1, 1};
    auto g_black = build_generator(spec, 1);
    fill_params(g_black.params, "out.", 0.0);
    auto g_gray = build_generator(spec, 2);
    fill_params(g_gray.params, "out.w", 0.0);
    fill_params(g_gray.params, "out.b", std::atanh(0.5));

    std::map<int, GeneratorParams> gens;
    gens[0] = g_black;
    gens[-1] = g_gray;  // class 1 falls back here

    auto out = transform_dataset(gens, src, 16, dir / "out");
    Tensor t0 = load_image(out.resolve(out.samples[0]));
    Tensor t1 = load_image(out.resolve(out.samples[1]));
    for (double v : t0.data()) CHECK(v == 128.0 / 127.5 - 1.0);
    const double half = std::round(1.5 * 127.5) / 127.5 - 1.0;
    for (double v : t1.data()) CHECK(v == doctest::Approx(half).epsilon(1e-12));

    std::map<int, GeneratorParams> only0;
    only0[0] = g_black;
    CHECK_THROWS_AS(transform_dataset(only0, src, 16, dir / "out2"), MissingArtifactError);
    fs::remove_all(dir);
}

TEST_CASE("generator spec inference and checkpoint reload reproduce the forward pass") {
    for (GeneratorSpec spec : {GeneratorSpec{3, 4, 1, 1}, GeneratorSpec{3, 8, 0, 2}, GeneratorSpec{3, 4, 2, 1}}) {
        auto g = build_generator(spec, 9);
        GeneratorSpec inferred = infer_generator_spec(g.params);
        CHECK(inferred.in_channels == spec.in_channels);
        CHECK(inferred.base_width == spec.base_width);
        CHECK(inferred.n_resblocks == spec.n_resblocks);
        CHECK(inferred.n_downsample == spec.n_downsample);
    }

    auto dir = temp_dir("ganreload");
    auto g = build_generator(GeneratorSpec{3, 4, 1, 1}, 9);
    ParamMap all;
    all.insert_all("g.", g.params);
    save_checkpoint(all, dir / "gan.dagn");
    auto gens = load_generators({{-1, dir / "gan.dagn"}});
    REQUIRE(gens.count(-1) == 1);

    Rng rng(10);
    Tensor x = rand_batch(1, 8, rng);
    Tensor a = generator_forward(g, x);
    Tensor b = generator_forward(gens.at(-1), x);
    CHECK(a.data() == b.data());
    fs::remove_all(dir);
}
