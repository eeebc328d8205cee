#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dagan/image.hpp"

namespace dagan {
namespace {

void check_chw(const Tensor& t, const char* what) {
    if (t.shape().size() != 3 || t.dim(0) != 3) throw ConfigError(std::string(what) + ": expected [3,H,W] image");
}

int reflect101(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

// Header token reader: skips whitespace and '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

// Separable 1-D blur along one axis with reflect-101 borders.
std::vector<double> blur_axis(const std::vector<double>& src, int h, int w, const std::vector<double>& kernel,
                              bool horizontal) {
    const int r = static_cast<int>(kernel.size()) / 2;
    std::vector<double> out(src.size());
    for (int c = 0; c < 3; ++c) {
        const double* sp = src.data() + static_cast<std::size_t>(c) * h * w;
        double* op = out.data() + static_cast<std::size_t>(c) * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int k = -r; k <= r; ++k) {
                    const int yy = horizontal ? y : reflect101(y + k, h);
                    const int xx = horizontal ? reflect101(x + k, w) : x;
                    acc += kernel[static_cast<std::size_t>(k + r)] * sp[yy * w + xx];
                }
                op[y * w + x] = acc;
            }
    }
    return out;
}

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open image: " + path.string());
    const std::string magic = next_token(in);
    if (magic != "P6") throw ConfigError("unsupported pixmap format '" + magic + "' in " + path.string() + " (need P6)");
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(next_token(in));
        h = std::stoi(next_token(in));
        maxval = std::stoi(next_token(in));
    } catch (const std::exception&) {
        throw ConfigError("malformed pixmap header in " + path.string());
    }
    if (w <= 0 || h <= 0) throw ConfigError("malformed pixmap dimensions in " + path.string());
    if (maxval != 255) throw ConfigError("unsupported pixmap depth (maxval " + std::to_string(maxval) + ", need 255)");
    // exactly one whitespace byte separates header and payload; next_token
    // already consumed it while terminating the maxval token.
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw ConfigError("truncated pixmap payload in " + path.string());

    std::vector<double> data(raw.size());
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                data[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x] =
                    raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 127.5 - 1.0;
    return Tensor::from_data({3, h, w}, std::move(data));
}

void save_image(const Tensor& image, const std::filesystem::path& path) {
    check_chw(image, "save_image");
    const int h = image.dim(1), w = image.dim(2);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write image: " + path.string());
    out << "P6\n" << w << " " << h << "\n255\n";
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<unsigned char> raw(plane * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = (image.data()[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x] + 1.0) * 127.5;
                const double q = std::round(v);  // half away from zero; v >= 0 here
                raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    static_cast<unsigned char>(std::clamp(q, 0.0, 255.0));
            }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw ConfigError("short write: " + path.string());
}

Tensor bilinear_resize(const Tensor& image, int out_h, int out_w) {
    check_chw(image, "bilinear_resize");
    if (out_h < 1 || out_w < 1) throw ConfigError("bilinear_resize: bad output size");
    const int h = image.dim(1), w = image.dim(2);
    if (h == out_h && w == out_w) return Tensor::from_data(image.shape(), image.data());
    const std::size_t plane_in = static_cast<std::size_t>(h) * w;
    const std::size_t plane_out = static_cast<std::size_t>(out_h) * out_w;
    std::vector<double> out(3 * plane_out);
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        const double fy = std::max(0.0, (oy + 0.5) * sy - 0.5);
        const int y0 = std::min(static_cast<int>(fy), h - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const double ty = fy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
            const double fx = std::max(0.0, (ox + 0.5) * sx - 0.5);
            const int x0 = std::min(static_cast<int>(fx), w - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const double tx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double* sp = image.data().data() + static_cast<std::size_t>(c) * plane_in;
                const double top = sp[y0 * w + x0] * (1 - tx) + sp[y0 * w + x1] * tx;
                const double bot = sp[y1 * w + x0] * (1 - tx) + sp[y1 * w + x1] * tx;
                out[static_cast<std::size_t>(c) * plane_out + static_cast<std::size_t>(oy) * out_w + ox] =
                    top * (1 - ty) + bot * ty;
            }
        }
    }
    return Tensor::from_data({3, out_h, out_w}, std::move(out));
}

Tensor crop_image(const Tensor& image, int y0, int x0, int h, int w) {
    check_chw(image, "crop_image");
    const int ih = image.dim(1), iw = image.dim(2);
    if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > ih || x0 + w > iw)
        throw ConfigError("crop_image: window outside image");
    const std::size_t plane_in = static_cast<std::size_t>(ih) * iw;
    std::vector<double> out(static_cast<std::size_t>(3) * h * w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            std::copy_n(image.data().data() + static_cast<std::size_t>(c) * plane_in +
                            static_cast<std::size_t>(y0 + y) * iw + x0,
                        w, out.data() + (static_cast<std::size_t>(c) * h + y) * w);
    return Tensor::from_data({3, h, w}, std::move(out));
}

Tensor gaussian_blur(const Tensor& image, double sigma, int radius) {
    check_chw(image, "gaussian_blur");
    if (sigma <= 0.0 && radius < 0) return Tensor::from_data(image.shape(), image.data());
    const int r = radius >= 0 ? radius : static_cast<int>(std::ceil(3.0 * sigma));
    if (r == 0) return Tensor::from_data(image.shape(), image.data());
    std::vector<double> kernel(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int k = -r; k <= r; ++k) {
        const double v = sigma > 0.0 ? std::exp(-0.5 * (k * k) / (sigma * sigma)) : (k == 0 ? 1.0 : 0.0);
        kernel[static_cast<std::size_t>(k + r)] = v;
        sum += v;
    }
    for (double& v : kernel) v /= sum;
    const int h = image.dim(1), w = image.dim(2);
    auto tmp = blur_axis(image.data(), h, w, kernel, true);
    return Tensor::from_data(image.shape(), blur_axis(tmp, h, w, kernel, false));
}

Tensor motion_blur_h(const Tensor& image, int length) {
    check_chw(image, "motion_blur_h");
    if (length < 1 || length % 2 == 0) throw ConfigError("motion_blur_h: length must be odd and >= 1");
    if (length == 1) return Tensor::from_data(image.shape(), image.data());
    std::vector<double> kernel(static_cast<std::size_t>(length), 1.0 / length);
    return Tensor::from_data(image.shape(), blur_axis(image.data(), image.dim(1), image.dim(2), kernel, true));
}

Tensor clamp_image(const Tensor& image, double lo, double hi) {
    std::vector<double> out(image.data());
    for (double& v : out) v = std::clamp(v, lo, hi);
    return Tensor::from_data(image.shape(), std::move(out));
}

std::vector<double> luma(const Tensor& image) {
    check_chw(image, "luma");
    const std::size_t plane = static_cast<std::size_t>(image.dim(1)) * image.dim(2);
    std::vector<double> out(plane);
    const double* d = image.data().data();
    for (std::size_t i = 0; i < plane; ++i) out[i] = 0.299 * d[i] + 0.587 * d[plane + i] + 0.114 * d[2 * plane + i];
    return out;
}

double mean_saturation(const Tensor& image) {
    check_chw(image, "mean_saturation");
    const std::size_t plane = static_cast<std::size_t>(image.dim(1)) * image.dim(2);
    const double* d = image.data().data();
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
        const double r = d[i], g = d[plane + i], b = d[2 * plane + i];
        acc += std::max({r, g, b}) - std::min({r, g, b});
    }
    return acc / static_cast<double>(plane);
}

double edge_energy(const Tensor& image) {
    const int h = image.dim(1), w = image.dim(2);
    auto y = luma(image);
    if (h < 3 || w < 3) return 0.0;
    double acc = 0.0;
    for (int i = 1; i < h - 1; ++i)
        for (int j = 1; j < w - 1; ++j)
            acc += std::fabs(y[static_cast<std::size_t>(i - 1) * w + j] + y[static_cast<std::size_t>(i + 1) * w + j] +
                             y[static_cast<std::size_t>(i) * w + j - 1] + y[static_cast<std::size_t>(i) * w + j + 1] -
                             4.0 * y[static_cast<std::size_t>(i) * w + j]);
    return acc / (static_cast<double>(h - 2) * (w - 2));
}

}  // namespace dagan
