#include <string>

#include "dagan/nets.hpp"

namespace dagan {
namespace {

// conv block parameters: weight, bias, and optionally instance-norm affine
void add_conv(ParamMap& p, const std::string& name, int cout, int cin, int k, Rng& rng, bool with_norm) {
    p.insert(name + ".w", Tensor::randn({cout, cin, k, k}, rng, 0.02, true));
    p.insert(name + ".b", Tensor::zeros({cout}, true));
    if (with_norm) {
        p.insert(name + ".in_g", Tensor::full({cout}, 1.0, true));
        p.insert(name + ".in_b", Tensor::zeros({cout}, true));
    }
}

// transpose-conv weight layout is [cin, cout, k, k]
void add_tconv(ParamMap& p, const std::string& name, int cin, int cout, int k, Rng& rng) {
    p.insert(name + ".w", Tensor::randn({cin, cout, k, k}, rng, 0.02, true));
    p.insert(name + ".b", Tensor::zeros({cout}, true));
    p.insert(name + ".in_g", Tensor::full({cout}, 1.0, true));
    p.insert(name + ".in_b", Tensor::zeros({cout}, true));
}

Tensor conv_in_relu(const ParamMap& p, const std::string& name, const Tensor& x, int stride, PadMode mode, int pad) {
    Tensor h = conv2d(x, p.at(name + ".w"), p.at(name + ".b"), stride, mode, pad);
    h = instance_norm(h, p.at(name + ".in_g"), p.at(name + ".in_b"));
    return relu(h);
}

}  // namespace

void GeneratorSpec::validate() const {
    require(in_channels >= 1, "generator spec: in_channels must be positive");
    require(base_width >= 1, "generator spec: base_width must be positive");
    require(n_resblocks >= 0, "generator spec: n_resblocks must be >= 0");
    require(n_downsample >= 1, "generator spec: n_downsample must be positive");
}

void DiscriminatorSpec::validate() const {
    require(n_layers >= 1, "discriminator spec: n_layers must be positive");
    require(base_width >= 1, "discriminator spec: base_width must be positive");
}

GeneratorParams build_generator(const GeneratorSpec& spec, std::uint64_t seed) {
    spec.validate();
    GeneratorParams g;
    g.spec = spec;
    Rng rng(seed);
    add_conv(g.params, "stem", spec.base_width, spec.in_channels, 7, rng, true);
    int ch = spec.base_width;
    for (int i = 0; i < spec.n_downsample; ++i) {
        add_conv(g.params, "down" + std::to_string(i), ch * 2, ch, 3, rng, true);
        ch *= 2;
    }
    for (int i = 0; i < spec.n_resblocks; ++i) {
        const std::string base = "res" + std::to_string(i);
        add_conv(g.params, base + ".c1", ch, ch, 3, rng, true);
        add_conv(g.params, base + ".c2", ch, ch, 3, rng, true);
    }
    for (int i = 0; i < spec.n_downsample; ++i) {
        add_tconv(g.params, "up" + std::to_string(i), ch, ch / 2, 3, rng);
        ch /= 2;
    }
    add_conv(g.params, "out", spec.in_channels, ch, 7, rng, false);
    return g;
}

Tensor generator_forward(const GeneratorParams& g, const Tensor& image) {
    g.spec.validate();
    if (image.shape().size() != 4 || image.dim(1) != g.spec.in_channels)
        throw ConfigError("generator_forward: input must be [B," + std::to_string(g.spec.in_channels) + ",S,S]");
    const int s = image.dim(2);
    const int factor = 1 << g.spec.n_downsample;
    if (image.dim(3) != s || s % factor != 0)
        throw ConfigError("generator_forward: spatial size must be square and divisible by " + std::to_string(factor));

    const ParamMap& p = g.params;
    Tensor h = conv_in_relu(p, "stem", image, 1, PadMode::Reflect, 3);
    for (int i = 0; i < g.spec.n_downsample; ++i)
        h = conv_in_relu(p, "down" + std::to_string(i), h, 2, PadMode::Zero, 1);
    for (int i = 0; i < g.spec.n_resblocks; ++i) {
        const std::string base = "res" + std::to_string(i);
        Tensor r = conv_in_relu(p, base + ".c1", h, 1, PadMode::Reflect, 1);
        r = conv2d(r, p.at(base + ".c2.w"), p.at(base + ".c2.b"), 1, PadMode::Reflect, 1);
        r = instance_norm(r, p.at(base + ".c2.in_g"), p.at(base + ".c2.in_b"));
        h = add(h, r);  // identity skip, no activation after the sum
    }
    for (int i = 0; i < g.spec.n_downsample; ++i) {
        const std::string base = "up" + std::to_string(i);
        Tensor u = conv2d_transpose(h, p.at(base + ".w"), p.at(base + ".b"), 2, 1, 1);
        u = instance_norm(u, p.at(base + ".in_g"), p.at(base + ".in_b"));
        h = relu(u);
    }
    h = conv2d(h, p.at("out.w"), p.at("out.b"), 1, PadMode::Reflect, 3);
    return tanh(h);
}

DiscriminatorParams build_patch_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed) {
    spec.validate();
    DiscriminatorParams d;
    d.spec = spec;
    Rng rng(seed);
    int cin = 3, ch = spec.base_width;
    for (int i = 0; i < spec.n_layers; ++i) {
        // first block has no normalization
        add_conv(d.params, "conv" + std::to_string(i), ch, cin, 4, rng, i > 0);
        cin = ch;
        if (i + 1 < spec.n_layers) ch *= 2;
    }
    add_conv(d.params, "out", 1, cin, 3, rng, false);
    return d;
}

Tensor discriminator_forward(const DiscriminatorParams& d, const Tensor& image) {
    d.spec.validate();
    if (image.shape().size() != 4 || image.dim(1) != 3)
        throw ConfigError("discriminator_forward: input must be [B,3,S,S]");
    const int s = image.dim(2);
    if (image.dim(3) != s || s < (1 << d.spec.n_layers))
        throw ConfigError("discriminator_forward: input smaller than the receptive stride");
    const ParamMap& p = d.params;
    Tensor h = image;
    for (int i = 0; i < d.spec.n_layers; ++i) {
        const std::string base = "conv" + std::to_string(i);
        h = conv2d(h, p.at(base + ".w"), p.at(base + ".b"), 2, PadMode::Zero, 1);
        if (i > 0) h = instance_norm(h, p.at(base + ".in_g"), p.at(base + ".in_b"));
        h = leaky_relu(h, 0.2);
    }
    return conv2d(h, p.at("out.w"), p.at("out.b"), 1, PadMode::Zero, 1);
}

}  // namespace dagan
