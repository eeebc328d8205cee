#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "dagan/gan.hpp"

namespace dagan {
namespace fs = std::filesystem;

namespace {

std::vector<Tensor> load_images(const DatasetManifest& m) {
    std::vector<Tensor> out;
    out.reserve(m.samples.size());
    for (const auto& s : m.samples) out.push_back(load_image(m.resolve(s)));
    return out;
}

// one uniform index draw then one crop per item, source batch before target
Tensor make_batch(const std::vector<Tensor>& pool, const GanConfig& cfg, Rng& rng) {
    const int c = cfg.crop_to;
    const std::size_t plane = static_cast<std::size_t>(3) * c * c;
    std::vector<double> data(static_cast<std::size_t>(cfg.batch_size) * plane);
    for (int b = 0; b < cfg.batch_size; ++b) {
        const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(pool.size()) - 1));
        Tensor crop = resize_and_crop(pool[idx], cfg.resize_to, cfg.crop_to, &rng);
        std::copy(crop.data().begin(), crop.data().end(), data.begin() + static_cast<std::ptrdiff_t>(b) * plane);
    }
    return Tensor::from_data({cfg.batch_size, 3, c, c}, std::move(data));
}

// presence is judged from image-level tags, never from boxes: target
// training samples carry no box annotations
DatasetManifest filter_by_class(const DatasetManifest& m, int class_id) {
    DatasetManifest out = m;
    out.samples.clear();
    for (const auto& s : m.samples)
        if (std::find(s.labels.begin(), s.labels.end(), class_id) != s.labels.end()) out.samples.push_back(s);
    return out;
}

fs::path train_single(const DatasetManifest& source, const DatasetManifest& target, const GanConfig& cfg,
                      const fs::path& out_dir, const std::string& tag, GanArtifacts& art, int key) {
    require(!source.samples.empty() && !target.samples.empty(), "run_training: empty manifest");
    const auto src_pool = load_images(source);
    const auto tgt_pool = load_images(target);
    TrainState st = init_train_state(cfg);
    for (int step = 0; step < cfg.total_steps; ++step) {
        Tensor x = make_batch(src_pool, cfg, st.rng);
        Tensor y = make_batch(tgt_pool, cfg, st.rng);
        train_step(st, x, y, cfg);
    }

    ParamMap all;
    all.insert_all("g.", st.g.params);
    all.insert_all("d_y.", st.d_y.params);
    if (cfg.mode == GanMode::Cycle) {
        all.insert_all("f.", st.f.params);
        all.insert_all("d_x.", st.d_x.params);
    }
    fs::create_directories(out_dir);
    const fs::path ckpt = out_dir / ("gan" + tag + ".dagn");
    const fs::path csv = out_dir / ("loss" + tag + ".csv");
    save_checkpoint(all, ckpt);
    write_loss_csv(st.history, csv);
    art.checkpoints[key] = ckpt;
    art.loss_csvs[key] = csv;
    return ckpt;
}

}  // namespace

void GanConfig::validate() const {
    require(lambda_cycle >= 0.0 && std::isfinite(lambda_cycle), "gan config: lambda_cycle must be >= 0");
    require(learning_rate > 0.0, "gan config: learning_rate must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "gan config: betas must lie in [0,1)");
    require(batch_size >= 1, "gan config: batch_size must be positive");
    require(total_steps >= 1, "gan config: total_steps must be positive");
    require(crop_to <= resize_to, "gan config: crop_to must not exceed resize_to");
    gen.validate();
    disc.validate();
    require(crop_to % (1 << gen.n_downsample) == 0,
            "gan config: crop_to must be divisible by the generator downsample factor");
}

TrainState init_train_state(const GanConfig& cfg) {
    cfg.validate();
    Rng root(cfg.seed);
    TrainState st;
    st.g = build_generator(cfg.gen, root.fork("g").seed());
    st.d_y = build_patch_discriminator(cfg.disc, root.fork("d_y").seed());
    if (cfg.mode == GanMode::Cycle) {
        st.f = build_generator(cfg.gen, root.fork("f").seed());
        st.d_x = build_patch_discriminator(cfg.disc, root.fork("d_x").seed());
    }
    st.rng = root.fork("train");
    return st;
}

Tensor discriminator_loss(const DiscriminatorParams& d, const Tensor& real_batch, const Tensor& fake_batch) {
    if (real_batch.shape() != fake_batch.shape()) throw ConfigError("discriminator_loss: real/fake shapes differ");
    Tensor real_logits = discriminator_forward(d, real_batch);
    Tensor fake_logits = discriminator_forward(d, fake_batch.detach());
    return add(bce_from_logits(real_logits, 1.0), bce_from_logits(fake_logits, 0.0));
}

Tensor generator_adv_loss(const DiscriminatorParams& d, const Tensor& fake_batch) {
    return bce_from_logits(discriminator_forward(d, fake_batch), 1.0);
}

Tensor cycle_loss(const GeneratorParams& first, const GeneratorParams& second, const Tensor& batch) {
    return l1_loss(generator_forward(second, generator_forward(first, batch)), batch);
}

double total_objective(double adv_g, double adv_f, double cyc_fwd, double cyc_bwd, double lambda_cycle) {
    for (double v : {adv_g, adv_f, cyc_fwd, cyc_bwd, lambda_cycle})
        require(std::isfinite(v), "total_objective: non-finite input");
    return adv_g + adv_f + lambda_cycle * (cyc_fwd + cyc_bwd);
}

void train_step(TrainState& st, const Tensor& x, const Tensor& y, const GanConfig& cfg) {
    cfg.validate();
    if (st.step >= cfg.total_steps)
        throw ConfigError("train_step: step " + std::to_string(st.step) + " past total_steps");
    if (x.shape() != y.shape()) throw ConfigError("train_step: batch shapes differ");
    const bool cycle = cfg.mode == GanMode::Cycle;
    const AdamConfig adam = cfg.adam();

    auto finite = [&](const Tensor& t, const char* name) {
        if (!std::isfinite(t.value()))
            throw NumericError("training aborted at step " + std::to_string(st.step) + ": non-finite " +
                               std::string(name) + " loss");
        return t.value();
    };

    LossRow row;
    row.step = st.step;

    // (1) D_Y against the current G output; the fake graph survives for step 3
    Tensor fake_y = generator_forward(st.g, x);
    Tensor d_y_loss = discriminator_loss(st.d_y, y, fake_y);
    row.d_y = finite(d_y_loss, "d_y");
    st.d_y.params.zero_grad();
    d_y_loss.backward();
    adam_step(st.d_y.params, st.opt_d_y, adam);

    // (2) D_X, cycle mode only
    Tensor fake_x;
    if (cycle) {
        fake_x = generator_forward(st.f, y);
        Tensor d_x_loss = discriminator_loss(st.d_x, x, fake_x);
        row.d_x = finite(d_x_loss, "d_x");
        st.d_x.params.zero_grad();
        d_x_loss.backward();
        adam_step(st.d_x.params, st.opt_d_x, adam);
    }

    // (3) joint G/F step against the updated discriminators
    Tensor g_adv = generator_adv_loss(st.d_y, fake_y);
    row.g_adv = finite(g_adv, "g_adv");
    Tensor objective = g_adv;
    if (cycle) {
        Tensor f_adv = generator_adv_loss(st.d_x, fake_x);
        Tensor cyc_fwd = l1_loss(generator_forward(st.f, fake_y), x);
        Tensor cyc_bwd = l1_loss(generator_forward(st.g, fake_x), y);
        row.f_adv = finite(f_adv, "f_adv");
        row.cyc_fwd = finite(cyc_fwd, "cyc_fwd");
        row.cyc_bwd = finite(cyc_bwd, "cyc_bwd");
        objective = add(add(g_adv, f_adv), scale(add(cyc_fwd, cyc_bwd), cfg.lambda_cycle));
    }
    row.total = total_objective(row.g_adv, row.f_adv, row.cyc_fwd, row.cyc_bwd, cfg.lambda_cycle);

    st.g.params.zero_grad();
    if (cycle) st.f.params.zero_grad();
    objective.backward();
    adam_step(st.g.params, st.opt_g, adam);
    if (cycle) adam_step(st.f.params, st.opt_f, adam);

    st.history.push_back(row);
    ++st.step;
}

void write_loss_csv(const std::vector<LossRow>& history, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write loss csv: " + path.string());
    out << "step,d_y,d_x,g_adv,f_adv,cyc_fwd,cyc_bwd,total\n";
    char buf[256];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.d_y, r.d_x,
                      r.g_adv, r.f_adv, r.cyc_fwd, r.cyc_bwd, r.total);
        out << buf;
    }
}

GanArtifacts run_training(const DatasetManifest& source, const DatasetManifest& target, const GanConfig& cfg,
                          const fs::path& out_dir) {
    cfg.validate();
    GanArtifacts art;
    if (!cfg.conditioned) {
        train_single(source, target, cfg, out_dir, "", art, -1);
        return art;
    }

    std::set<int> classes;
    for (const auto& s : source.samples)
        for (const auto& b : s.boxes) classes.insert(b.class_id);
    require(!classes.empty(), "run_training: conditioned mode needs labeled source boxes");

    for (int k : classes) {
        DatasetManifest src_k = filter_by_class(source, k);
        DatasetManifest tgt_k = filter_by_class(target, k);
        if (tgt_k.samples.empty()) {
            std::cerr << "warning: class " << k
                      << " has no target-domain samples; falling back to the unconditioned model\n";
            if (!art.checkpoints.count(-1)) train_single(source, target, cfg, out_dir, "", art, -1);
            art.checkpoints[k] = art.checkpoints[-1];
            art.loss_csvs[k] = art.loss_csvs[-1];
            continue;
        }
        GanConfig ck = cfg;
        ck.seed = Rng(cfg.seed).fork(("class" + std::to_string(k)).c_str()).seed();
        train_single(src_k, tgt_k, ck, out_dir, "_class" + std::to_string(k), art, k);
    }
    return art;
}

GeneratorSpec infer_generator_spec(const ParamMap& params) {
    GeneratorSpec s;
    if (!params.contains("stem.w")) throw ConfigError("checkpoint lacks generator tensors");
    const Tensor& stem = params.at("stem.w");
    if (stem.shape().size() != 4) throw ConfigError("malformed generator stem weight");
    s.base_width = stem.dim(0);
    s.in_channels = stem.dim(1);
    s.n_downsample = 0;
    s.n_resblocks = 0;
    while (params.contains("down" + std::to_string(s.n_downsample) + ".w")) ++s.n_downsample;
    while (params.contains("res" + std::to_string(s.n_resblocks) + ".c1.w")) ++s.n_resblocks;
    s.validate();
    return s;
}

std::map<int, GeneratorParams> load_generators(const std::map<int, fs::path>& checkpoints) {
    std::map<int, GeneratorParams> out;
    for (const auto& [k, path] : checkpoints) {
        GeneratorParams gp;
        gp.params = strip_prefix(load_checkpoint(path), "g.");
        gp.spec = infer_generator_spec(gp.params);
        out[k] = std::move(gp);
    }
    return out;
}

DatasetManifest transform_dataset(const std::map<int, GeneratorParams>& generators, const DatasetManifest& source,
                                  int crop_to, const fs::path& out_dir) {
    require(!generators.empty(), "transform_dataset: no generators");
    require(!source.samples.empty(), "transform_dataset: empty manifest");

    DatasetManifest out;
    out.classes = source.classes;
    out.provenance = source.provenance + "; translated";
    out.root = out_dir;
    fs::create_directories(out_dir / "images");

    char name[32];
    for (std::size_t i = 0; i < source.samples.size(); ++i) {
        const ImageSample& s = source.samples[i];

        // majority box class picks the conditioned generator, ties to lowest id
        std::map<int, int> votes;
        for (const auto& b : s.boxes) ++votes[b.class_id];
        int cls = -1, best = 0;
        for (const auto& [c, n] : votes)
            if (n > best) {
                best = n;
                cls = c;
            }
        auto it = generators.find(cls);
        if (it == generators.end()) it = generators.find(-1);
        if (it == generators.end())
            throw MissingArtifactError("transform_dataset: no generator for class " + std::to_string(cls) +
                                       " and no unconditioned fallback");

        Tensor img = load_image(source.resolve(s));
        const int h = img.dim(1), w = img.dim(2);
        Tensor in = bilinear_resize(img, crop_to, crop_to).reshape({1, 3, crop_to, crop_to});
        Tensor fake = generator_forward(it->second, in).detach().reshape({3, crop_to, crop_to});
        Tensor restored = bilinear_resize(fake, h, w);

        std::snprintf(name, sizeof name, "images/%05zu.ppm", i);
        save_image(restored, out_dir / name);
        ImageSample t = s;
        t.image = name;
        out.samples.push_back(std::move(t));
    }
    save_manifest(out, out_dir / "manifest.jsonl");
    return out;
}

}  // namespace dagan
