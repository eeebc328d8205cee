#pragma once

#include <cstdint>

#include "dagan/adam.hpp"
#include "dagan/ops.hpp"

namespace dagan {

struct GeneratorSpec {
    int in_channels = 3;
    int base_width = 16;   // paper full scale uses 64
    int n_resblocks = 3;   // paper full scale uses 9
    int n_downsample = 2;
    void validate() const;
};

struct DiscriminatorSpec {
    int n_layers = 3;  // stride-2 blocks
    int base_width = 16;
    void validate() const;
};

struct GeneratorParams {
    GeneratorSpec spec;
    ParamMap params;
};

struct DiscriminatorParams {
    DiscriminatorSpec spec;
    ParamMap params;
};

// Conv weights N(0, 0.02), conv biases 0, instance-norm gain 1 / bias 0.
GeneratorParams build_generator(const GeneratorSpec& spec, std::uint64_t seed);
DiscriminatorParams build_patch_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed);

// stem -> n_downsample stride-2 convs -> resblocks -> transpose convs ->
// output conv -> tanh. Spatial size preserved; S must divide by 2^n_downsample.
Tensor generator_forward(const GeneratorParams& g, const Tensor& image);

// n_layers stride-2 leaky-relu convs -> 1-channel logit grid, S / 2^n_layers.
Tensor discriminator_forward(const DiscriminatorParams& d, const Tensor& image);

}  // namespace dagan
