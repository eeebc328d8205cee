#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dagan/rng.hpp"
#include "dagan/tensor.hpp"

namespace dagan {

// Images are Tensor[3,H,W] with values in [-1,1]. On-disk format is binary
// 8-bit PPM (P6, maxval 255) only.
Tensor load_image(const std::filesystem::path& path);
void save_image(const Tensor& image, const std::filesystem::path& path);

Tensor bilinear_resize(const Tensor& image, int out_h, int out_w);
Tensor crop_image(const Tensor& image, int y0, int x0, int h, int w);

// sigma <= 0 is the identity. radius < 0 derives the radius as ceil(3*sigma);
// otherwise the kernel half-width is fixed (used for the fixed-kernel blurs).
Tensor gaussian_blur(const Tensor& image, double sigma, int radius = -1);
// Horizontal box blur of odd length; length 1 is the identity.
Tensor motion_blur_h(const Tensor& image, int length);

Tensor clamp_image(const Tensor& image, double lo = -1.0, double hi = 1.0);

// Rec.601 luma of every pixel, row-major H*W.
std::vector<double> luma(const Tensor& image);
// Mean over pixels of (max - min) across channels.
double mean_saturation(const Tensor& image);
// Mean absolute 4-neighbour Laplacian of the luma over interior pixels.
double edge_energy(const Tensor& image);

}  // namespace dagan
