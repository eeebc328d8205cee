#include <algorithm>
#include <cmath>
#include <vector>

#include "dagan/ops.hpp"

namespace dagan {
namespace {

// Mirror-without-edge-repeat index for reflect padding; valid for |offset| <= n-1.
inline int reflect_idx(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

// C[M][N] += A[M][K] * B[K][N], row-major, fixed summation order. The inner
// loop runs over contiguous rows of B and C so it auto-vectorizes.
template <typename T>
void gemm_ikj(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::size_t>(i) * n;
        const T* arow = a + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            const T* brow = b + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void transpose(const T* src, T* dst, int rows, int cols) {
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
}

// src: one sample [C,H,W] of doubles; dst: [C,Hp,Wp] in T.
template <typename T>
void pad_sample(const double* src, T* dst, int c, int h, int w, int pad, PadMode mode) {
    const int hp = h + 2 * pad, wp = w + 2 * pad;
    for (int ch = 0; ch < c; ++ch) {
        const double* s = src + static_cast<std::size_t>(ch) * h * w;
        T* d = dst + static_cast<std::size_t>(ch) * hp * wp;
        for (int y = 0; y < hp; ++y) {
            const int sy = y - pad;
            for (int x = 0; x < wp; ++x) {
                const int sx = x - pad;
                double v = 0.0;
                if (mode == PadMode::Reflect) {
                    v = s[static_cast<std::size_t>(reflect_idx(sy, h)) * w + reflect_idx(sx, w)];
                } else if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
                    v = s[static_cast<std::size_t>(sy) * w + sx];
                }
                d[static_cast<std::size_t>(y) * wp + x] = static_cast<T>(v);
            }
        }
    }
}

// Scatter the padded-gradient sample back onto the source gradient.
void unpad_accumulate(const double* dpadded, double* dsrc, int c, int h, int w, int pad, PadMode mode) {
    const int hp = h + 2 * pad, wp = w + 2 * pad;
    for (int ch = 0; ch < c; ++ch) {
        const double* dp = dpadded + static_cast<std::size_t>(ch) * hp * wp;
        double* ds = dsrc + static_cast<std::size_t>(ch) * h * w;
        for (int y = 0; y < hp; ++y) {
            const int sy = y - pad;
            for (int x = 0; x < wp; ++x) {
                const int sx = x - pad;
                if (mode == PadMode::Reflect) {
                    ds[static_cast<std::size_t>(reflect_idx(sy, h)) * w + reflect_idx(sx, w)] +=
                        dp[static_cast<std::size_t>(y) * wp + x];
                } else if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
                    ds[static_cast<std::size_t>(sy) * w + sx] += dp[static_cast<std::size_t>(y) * wp + x];
                }
            }
        }
    }
}

// col[(c,ky,kx)][(oy,ox)] = padded[c][oy*stride+ky][ox*stride+kx]
template <typename T>
void im2col(const T* padded, T* col, int c, int hp, int wp, int kh, int kw, int stride, int ho, int wo) {
    const std::size_t p = static_cast<std::size_t>(ho) * wo;
    std::size_t row = 0;
    for (int ch = 0; ch < c; ++ch) {
        const T* base = padded + static_cast<std::size_t>(ch) * hp * wp;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++row) {
                T* dst = col + row * p;
                for (int oy = 0; oy < ho; ++oy) {
                    const T* srow = base + static_cast<std::size_t>(oy * stride + ky) * wp + kx;
                    for (int ox = 0; ox < wo; ++ox) dst[static_cast<std::size_t>(oy) * wo + ox] = srow[static_cast<std::size_t>(ox) * stride];
                }
            }
        }
    }
}

// Adjoint of im2col: padded[c][oy*stride+ky][ox*stride+kx] += col[...][...]
template <typename T>
void col2im_add(const T* col, T* padded, int c, int hp, int wp, int kh, int kw, int stride, int ho, int wo) {
    const std::size_t p = static_cast<std::size_t>(ho) * wo;
    std::size_t row = 0;
    for (int ch = 0; ch < c; ++ch) {
        T* base = padded + static_cast<std::size_t>(ch) * hp * wp;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++row) {
                const T* src = col + row * p;
                for (int oy = 0; oy < ho; ++oy) {
                    T* drow = base + static_cast<std::size_t>(oy * stride + ky) * wp + kx;
                    for (int ox = 0; ox < wo; ++ox) drow[static_cast<std::size_t>(ox) * stride] += src[static_cast<std::size_t>(oy) * wo + ox];
                }
            }
        }
    }
}

struct Conv2dDims {
    int b, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
};

template <typename T>
std::vector<double> conv2d_forward_impl(const std::vector<double>& in, const std::vector<double>& wgt,
                                        const std::vector<double>& bias, const Conv2dDims& d, PadMode mode) {
    const int hp = d.h + 2 * d.pad, wp = d.w + 2 * d.pad;
    const int k = d.cin * d.kh * d.kw;
    const std::size_t p = static_cast<std::size_t>(d.ho) * d.wo;
    std::vector<T> wbuf(wgt.begin(), wgt.end());
    std::vector<T> padded(static_cast<std::size_t>(d.cin) * hp * wp);
    std::vector<T> col(static_cast<std::size_t>(k) * p);
    std::vector<T> outbuf(static_cast<std::size_t>(d.cout) * p);
    std::vector<double> out(static_cast<std::size_t>(d.b) * d.cout * p);
    for (int b = 0; b < d.b; ++b) {
        pad_sample<T>(in.data() + static_cast<std::size_t>(b) * d.cin * d.h * d.w, padded.data(), d.cin, d.h, d.w,
                      d.pad, mode);
        im2col<T>(padded.data(), col.data(), d.cin, hp, wp, d.kh, d.kw, d.stride, d.ho, d.wo);
        for (int co = 0; co < d.cout; ++co)
            std::fill_n(outbuf.begin() + static_cast<std::size_t>(co) * p, p, static_cast<T>(bias[static_cast<std::size_t>(co)]));
        gemm_ikj<T>(wbuf.data(), col.data(), outbuf.data(), d.cout, k, static_cast<int>(p));
        double* dst = out.data() + static_cast<std::size_t>(b) * d.cout * p;
        for (std::size_t i = 0; i < outbuf.size(); ++i) dst[i] = static_cast<double>(outbuf[i]);
    }
    return out;
}

template <typename T>
void conv2d_backward_impl(const std::vector<double>& in, const std::vector<double>& wgt,
                          const std::vector<double>& dout, const Conv2dDims& d, PadMode mode,
                          std::vector<double>* din, std::vector<double>* dwgt, std::vector<double>* dbias) {
    const int hp = d.h + 2 * d.pad, wp = d.w + 2 * d.pad;
    const int k = d.cin * d.kh * d.kw;
    const std::size_t p = static_cast<std::size_t>(d.ho) * d.wo;

    std::vector<T> wbuf(wgt.begin(), wgt.end());
    std::vector<T> wt(wbuf.size());
    transpose<T>(wbuf.data(), wt.data(), d.cout, k);

    std::vector<T> padded(static_cast<std::size_t>(d.cin) * hp * wp);
    std::vector<T> col(static_cast<std::size_t>(k) * p);
    std::vector<T> colt(col.size());
    std::vector<T> doutbuf(static_cast<std::size_t>(d.cout) * p);
    std::vector<T> dwbuf(wgt.size(), T(0));
    std::vector<T> dcol(static_cast<std::size_t>(k) * p);
    std::vector<double> dpadded(padded.size());

    for (int b = 0; b < d.b; ++b) {
        const double* dout_b = dout.data() + static_cast<std::size_t>(b) * d.cout * p;
        for (std::size_t i = 0; i < doutbuf.size(); ++i) doutbuf[i] = static_cast<T>(dout_b[i]);

        if (dbias) {
            for (int co = 0; co < d.cout; ++co) {
                double s = 0.0;
                const double* row = dout_b + static_cast<std::size_t>(co) * p;
                for (std::size_t j = 0; j < p; ++j) s += row[j];
                (*dbias)[static_cast<std::size_t>(co)] += s;
            }
        }
        if (dwgt) {
            pad_sample<T>(in.data() + static_cast<std::size_t>(b) * d.cin * d.h * d.w, padded.data(), d.cin, d.h,
                          d.w, d.pad, mode);
            im2col<T>(padded.data(), col.data(), d.cin, hp, wp, d.kh, d.kw, d.stride, d.ho, d.wo);
            transpose<T>(col.data(), colt.data(), k, static_cast<int>(p));
            gemm_ikj<T>(doutbuf.data(), colt.data(), dwbuf.data(), d.cout, static_cast<int>(p), k);
        }
        if (din) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            gemm_ikj<T>(wt.data(), doutbuf.data(), dcol.data(), k, d.cout, static_cast<int>(p));
            std::fill(dpadded.begin(), dpadded.end(), 0.0);
            if constexpr (std::is_same_v<T, double>) {
                col2im_add<double>(dcol.data(), dpadded.data(), d.cin, hp, wp, d.kh, d.kw, d.stride, d.ho, d.wo);
            } else {
                std::vector<T> dpadT(dpadded.size(), T(0));
                col2im_add<T>(dcol.data(), dpadT.data(), d.cin, hp, wp, d.kh, d.kw, d.stride, d.ho, d.wo);
                for (std::size_t i = 0; i < dpadded.size(); ++i) dpadded[i] = static_cast<double>(dpadT[i]);
            }
            unpad_accumulate(dpadded.data(), din->data() + static_cast<std::size_t>(b) * d.cin * d.h * d.w, d.cin,
                             d.h, d.w, d.pad, mode);
        }
    }
    if (dwgt)
        for (std::size_t i = 0; i < dwbuf.size(); ++i) (*dwgt)[i] += static_cast<double>(dwbuf[i]);
}

struct TConvDims {
    int b, cin, h, w, cout, kh, kw, stride, pad, opad, ho, wo;
};

// Transposed convolution forward: col = W^T-rearranged @ input-as-matrix,
// then col2im scatter onto the (virtually padded) output grid.
template <typename T>
std::vector<double> tconv_forward_impl(const std::vector<double>& in, const std::vector<double>& wgt,
                                       const std::vector<double>& bias, const TConvDims& d) {
    const int k = d.cout * d.kh * d.kw;
    const std::size_t p = static_cast<std::size_t>(d.h) * d.w;
    // wmat[cin][cout*kh*kw] is the checkpoint layout already; transpose it once.
    std::vector<T> wt(static_cast<std::size_t>(k) * d.cin);
    {
        std::vector<T> wbuf(wgt.begin(), wgt.end());
        transpose<T>(wbuf.data(), wt.data(), d.cin, k);
    }
    // Full (unpadded) scatter target: stride*(h-1)+kh per side; the real
    // output is that grid cropped by pad and extended by output_pad.
    const int hf = d.stride * (d.h - 1) + d.kh, wf = d.stride * (d.w - 1) + d.kw;
    std::vector<T> inbuf(static_cast<std::size_t>(d.cin) * p);
    std::vector<T> col(static_cast<std::size_t>(k) * p);
    std::vector<T> full(static_cast<std::size_t>(d.cout) * hf * wf);
    std::vector<double> out(static_cast<std::size_t>(d.b) * d.cout * d.ho * d.wo);
    for (int b = 0; b < d.b; ++b) {
        const double* src = in.data() + static_cast<std::size_t>(b) * d.cin * p;
        for (std::size_t i = 0; i < inbuf.size(); ++i) inbuf[i] = static_cast<T>(src[i]);
        std::fill(col.begin(), col.end(), T(0));
        gemm_ikj<T>(wt.data(), inbuf.data(), col.data(), k, d.cin, static_cast<int>(p));
        std::fill(full.begin(), full.end(), T(0));
        col2im_add<T>(col.data(), full.data(), d.cout, hf, wf, d.kh, d.kw, d.stride, d.h, d.w);
        double* dst = out.data() + static_cast<std::size_t>(b) * d.cout * d.ho * d.wo;
        for (int co = 0; co < d.cout; ++co) {
            const double bv = bias[static_cast<std::size_t>(co)];
            for (int y = 0; y < d.ho; ++y)
                for (int x = 0; x < d.wo; ++x) {
                    const int fy = y + d.pad, fx = x + d.pad;
                    double v = bv;
                    if (fy < hf && fx < wf) v += static_cast<double>(full[(static_cast<std::size_t>(co) * hf + fy) * wf + fx]);
                    dst[(static_cast<std::size_t>(co) * d.ho + y) * d.wo + x] = v;
                }
        }
    }
    return out;
}

template <typename T>
void tconv_backward_impl(const std::vector<double>& in, const std::vector<double>& wgt,
                         const std::vector<double>& dout, const TConvDims& d, std::vector<double>* din,
                         std::vector<double>* dwgt, std::vector<double>* dbias) {
    const int k = d.cout * d.kh * d.kw;
    const std::size_t p = static_cast<std::size_t>(d.h) * d.w;
    const int hf = d.stride * (d.h - 1) + d.kh, wf = d.stride * (d.w - 1) + d.kw;

    std::vector<T> wbuf(wgt.begin(), wgt.end());
    std::vector<T> full(static_cast<std::size_t>(d.cout) * hf * wf);
    std::vector<T> coldout(static_cast<std::size_t>(k) * p);
    std::vector<T> coldoutT(coldout.size());
    std::vector<T> inbuf(static_cast<std::size_t>(d.cin) * p);
    std::vector<T> dinbuf(inbuf.size());
    std::vector<T> dwbuf(wgt.size(), T(0));

    for (int b = 0; b < d.b; ++b) {
        const double* dout_b = dout.data() + static_cast<std::size_t>(b) * d.cout * d.ho * d.wo;
        if (dbias) {
            for (int co = 0; co < d.cout; ++co) {
                double s = 0.0;
                const double* row = dout_b + static_cast<std::size_t>(co) * d.ho * d.wo;
                for (int j = 0; j < d.ho * d.wo; ++j) s += row[j];
                (*dbias)[static_cast<std::size_t>(co)] += s;
            }
        }
        // Embed dout into the full grid (inverse of the crop), then gather
        // with im2col; that is the exact adjoint of the forward scatter.
        std::fill(full.begin(), full.end(), T(0));
        for (int co = 0; co < d.cout; ++co)
            for (int y = 0; y < d.ho; ++y)
                for (int x = 0; x < d.wo; ++x) {
                    const int fy = y + d.pad, fx = x + d.pad;
                    if (fy < hf && fx < wf)
                        full[(static_cast<std::size_t>(co) * hf + fy) * wf + fx] =
                            static_cast<T>(dout_b[(static_cast<std::size_t>(co) * d.ho + y) * d.wo + x]);
                }
        im2col<T>(full.data(), coldout.data(), d.cout, hf, wf, d.kh, d.kw, d.stride, d.h, d.w);
        if (din) {
            std::fill(dinbuf.begin(), dinbuf.end(), T(0));
            gemm_ikj<T>(wbuf.data(), coldout.data(), dinbuf.data(), d.cin, k, static_cast<int>(p));
            double* dst = din->data() + static_cast<std::size_t>(b) * d.cin * p;
            for (std::size_t i = 0; i < dinbuf.size(); ++i) dst[i] += static_cast<double>(dinbuf[i]);
        }
        if (dwgt) {
            const double* src = in.data() + static_cast<std::size_t>(b) * d.cin * p;
            for (std::size_t i = 0; i < inbuf.size(); ++i) inbuf[i] = static_cast<T>(src[i]);
            transpose<T>(coldout.data(), coldoutT.data(), k, static_cast<int>(p));
            gemm_ikj<T>(inbuf.data(), coldoutT.data(), dwbuf.data(), d.cin, static_cast<int>(p), k);
        }
    }
    if (dwgt)
        for (std::size_t i = 0; i < dwbuf.size(); ++i) (*dwgt)[i] += static_cast<double>(dwbuf[i]);
}

void check_image_4d(const Tensor& t, const char* what) {
    if (!t.defined() || t.shape().size() != 4)
        throw ConfigError(std::string(what) + " must be a 4-d tensor [B,C,H,W]");
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, PadMode pad_mode,
              int pad) {
    check_image_4d(input, "conv2d input");
    check_image_4d(weight, "conv2d weight");
    if (bias.shape().size() != 1) throw ConfigError("conv2d bias must be 1-d [Cout]");
    Conv2dDims d;
    d.b = input.dim(0);
    d.cin = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.cout = weight.dim(0);
    d.kh = weight.dim(2);
    d.kw = weight.dim(3);
    d.stride = stride;
    d.pad = pad;
    if (weight.dim(1) != d.cin)
        throw ConfigError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, input has " +
                          std::to_string(d.cin));
    if (bias.dim(0) != d.cout) throw ConfigError("conv2d: bias size does not match output channels");
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (pad < 0) throw ConfigError("conv2d: pad must be >= 0");
    if (pad_mode == PadMode::Reflect && (pad > d.h - 1 || pad > d.w - 1))
        throw ConfigError("conv2d: reflect pad must be <= spatial size - 1");
    const int hp = d.h + 2 * pad, wp = d.w + 2 * pad;
    if (d.kh > hp || d.kw > wp) throw ConfigError("conv2d: kernel larger than padded input");
    d.ho = (hp - d.kh) / stride + 1;
    d.wo = (wp - d.kw) / stride + 1;

    std::vector<double> out = default_precision() == Precision::f32
                                  ? conv2d_forward_impl<float>(input.data(), weight.data(), bias.data(), d, pad_mode)
                                  : conv2d_forward_impl<double>(input.data(), weight.data(), bias.data(), d, pad_mode);

    Tensor result = make_op("conv2d", {input, weight, bias}, {d.b, d.cout, d.ho, d.wo}, std::move(out),
                            [d, pad_mode](detail::TapeNode& o) {
                                auto& inp = o.parents[0];
                                auto& wgt = o.parents[1];
                                auto& bia = o.parents[2];
                                std::vector<double> din(inp->requires_grad ? inp->data.size() : 0, 0.0);
                                std::vector<double> dw(wgt->requires_grad ? wgt->data.size() : 0, 0.0);
                                std::vector<double> db(bia->requires_grad ? bia->data.size() : 0, 0.0);
                                auto* dinp = inp->requires_grad ? &din : nullptr;
                                auto* dwp = wgt->requires_grad ? &dw : nullptr;
                                auto* dbp = bia->requires_grad ? &db : nullptr;
                                if (default_precision() == Precision::f32)
                                    conv2d_backward_impl<float>(inp->data, wgt->data, o.grad, d, pad_mode, dinp, dwp, dbp);
                                else
                                    conv2d_backward_impl<double>(inp->data, wgt->data, o.grad, d, pad_mode, dinp, dwp, dbp);
                                if (dinp) inp->accumulate_grad(din.data());
                                if (dwp) wgt->accumulate_grad(dw.data());
                                if (dbp) bia->accumulate_grad(db.data());
                            });
    result.validate_finite("conv2d output");
    return result;
}

Tensor conv2d_transpose(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad,
                        int output_pad) {
    check_image_4d(input, "conv2d_transpose input");
    check_image_4d(weight, "conv2d_transpose weight");
    if (bias.shape().size() != 1) throw ConfigError("conv2d_transpose bias must be 1-d [Cout]");
    TConvDims d;
    d.b = input.dim(0);
    d.cin = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.cout = weight.dim(1);
    d.kh = weight.dim(2);
    d.kw = weight.dim(3);
    d.stride = stride;
    d.pad = pad;
    d.opad = output_pad;
    if (weight.dim(0) != d.cin)
        throw ConfigError("conv2d_transpose: weight expects " + std::to_string(weight.dim(0)) +
                          " input channels, input has " + std::to_string(d.cin));
    if (bias.dim(0) != d.cout) throw ConfigError("conv2d_transpose: bias size does not match output channels");
    if (stride < 1) throw ConfigError("conv2d_transpose: stride must be >= 1");
    if (pad < 0 || output_pad < 0 || output_pad >= std::max(stride, 1) + (stride == 1 ? 1 : 0))
        throw ConfigError("conv2d_transpose: invalid pad/output_pad");
    d.ho = stride * (d.h - 1) + d.kh - 2 * pad + output_pad;
    d.wo = stride * (d.w - 1) + d.kw - 2 * pad + output_pad;
    if (d.ho < 1 || d.wo < 1) throw ConfigError("conv2d_transpose: non-positive output size");

    std::vector<double> out = default_precision() == Precision::f32
                                  ? tconv_forward_impl<float>(input.data(), weight.data(), bias.data(), d)
                                  : tconv_forward_impl<double>(input.data(), weight.data(), bias.data(), d);

    Tensor result = make_op("conv2d_transpose", {input, weight, bias}, {d.b, d.cout, d.ho, d.wo}, std::move(out),
                            [d](detail::TapeNode& o) {
                                auto& inp = o.parents[0];
                                auto& wgt = o.parents[1];
                                auto& bia = o.parents[2];
                                std::vector<double> din(inp->requires_grad ? inp->data.size() : 0, 0.0);
                                std::vector<double> dw(wgt->requires_grad ? wgt->data.size() : 0, 0.0);
                                std::vector<double> db(bia->requires_grad ? bia->data.size() : 0, 0.0);
                                auto* dinp = inp->requires_grad ? &din : nullptr;
                                auto* dwp = wgt->requires_grad ? &dw : nullptr;
                                auto* dbp = bia->requires_grad ? &db : nullptr;
                                if (default_precision() == Precision::f32)
                                    tconv_backward_impl<float>(inp->data, wgt->data, o.grad, d, dinp, dwp, dbp);
                                else
                                    tconv_backward_impl<double>(inp->data, wgt->data, o.grad, d, dinp, dwp, dbp);
                                if (dinp) inp->accumulate_grad(din.data());
                                if (dwp) wgt->accumulate_grad(dw.data());
                                if (dbp) bia->accumulate_grad(db.data());
                            });
    result.validate_finite("conv2d_transpose output");
    return result;
}

}  // namespace dagan
