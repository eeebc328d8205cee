#include <algorithm>
#include <cmath>

#include "dagan/ops.hpp"

namespace dagan {
namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ConfigError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

// Stable elementwise BCE-with-logits and its dl.
inline double bce_elem(double l, double t) { return std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::fabs(l))); }
inline double sigmoid_d(double l) { return 1.0 / (1.0 + std::exp(-l)); }

}  // namespace

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.data());
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    return make_op("relu", {x}, x.shape(), std::move(out), [](detail::TapeNode& o) {
        const auto& in = o.parents[0]->data;
        std::vector<double> g(o.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = in[i] > 0.0 ? o.grad[i] : 0.0;
        o.parents[0]->accumulate_grad(g.data());
    });
}

Tensor leaky_relu(const Tensor& x, double slope) {
    if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("leaky_relu slope must be in (0,1)");
    std::vector<double> out(x.data());
    for (double& v : out) v = v > 0.0 ? v : slope * v;
    return make_op("leaky_relu", {x}, x.shape(), std::move(out), [slope](detail::TapeNode& o) {
        const auto& in = o.parents[0]->data;
        std::vector<double> g(o.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] * (in[i] > 0.0 ? 1.0 : slope);
        o.parents[0]->accumulate_grad(g.data());
    });
}

Tensor tanh(const Tensor& x) {
    std::vector<double> out(x.data());
    for (double& v : out) v = std::tanh(v);
    return make_op("tanh", {x}, x.shape(), std::move(out), [](detail::TapeNode& o) {
        std::vector<double> g(o.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] * (1.0 - o.data[i] * o.data[i]);
        o.parents[0]->accumulate_grad(g.data());
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.data());
    for (double& v : out) v = sigmoid_d(v);
    return make_op("sigmoid", {x}, x.shape(), std::move(out), [](detail::TapeNode& o) {
        std::vector<double> g(o.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] * o.data[i] * (1.0 - o.data[i]);
        o.parents[0]->accumulate_grad(g.data());
    });
}

Tensor activation(Activation kind, const Tensor& x, double slope) {
    switch (kind) {
        case Activation::Relu: return relu(x);
        case Activation::LeakyRelu: return leaky_relu(x, slope);
        case Activation::Tanh: return tanh(x);
        case Activation::Sigmoid: return sigmoid(x);
    }
    throw ConfigError("unknown activation kind");
}

Tensor instance_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
    if (x.shape().size() != 4) throw ConfigError("instance_norm input must be [B,C,H,W]");
    if (!(epsilon > 0.0)) throw ConfigError("instance_norm epsilon must be > 0");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gain.shape() != std::vector<int>{c} || bias.shape() != std::vector<int>{c})
        throw ConfigError("instance_norm gain/bias must be [C]");
    const std::size_t sp = static_cast<std::size_t>(h) * w;
    const auto& xd = x.data();
    std::vector<double> out(xd.size());
    // Saved per (b,c): mean and 1/sqrt(var+eps), reused by backward.
    std::vector<double> means(static_cast<std::size_t>(b) * c), inv_stds(static_cast<std::size_t>(b) * c);
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const double* src = xd.data() + (static_cast<std::size_t>(bi) * c + ci) * sp;
            double mean = 0.0;
            for (std::size_t i = 0; i < sp; ++i) mean += src[i];
            mean /= static_cast<double>(sp);
            double var = 0.0;
            for (std::size_t i = 0; i < sp; ++i) var += (src[i] - mean) * (src[i] - mean);
            var /= static_cast<double>(sp);
            const double inv = 1.0 / std::sqrt(var + epsilon);
            means[static_cast<std::size_t>(bi) * c + ci] = mean;
            inv_stds[static_cast<std::size_t>(bi) * c + ci] = inv;
            const double g = gain.data()[static_cast<std::size_t>(ci)];
            const double bb = bias.data()[static_cast<std::size_t>(ci)];
            double* dst = out.data() + (static_cast<std::size_t>(bi) * c + ci) * sp;
            for (std::size_t i = 0; i < sp; ++i) dst[i] = g * (src[i] - mean) * inv + bb;
        }

    return make_op("instance_norm", {x, gain, bias}, x.shape(), std::move(out),
                   [b, c, sp, means = std::move(means), inv_stds = std::move(inv_stds)](detail::TapeNode& o) {
                       auto& xin = o.parents[0];
                       auto& gn = o.parents[1];
                       auto& bs = o.parents[2];
                       std::vector<double> dx(xin->requires_grad ? xin->data.size() : 0, 0.0);
                       std::vector<double> dg(c, 0.0), db(c, 0.0);
                       const double n = static_cast<double>(sp);
                       for (int bi = 0; bi < b; ++bi)
                           for (int ci = 0; ci < c; ++ci) {
                               const std::size_t base = (static_cast<std::size_t>(bi) * c + ci) * sp;
                               const double mean = means[static_cast<std::size_t>(bi) * c + ci];
                               const double inv = inv_stds[static_cast<std::size_t>(bi) * c + ci];
                               const double g = gn->data[static_cast<std::size_t>(ci)];
                               double sum_dy = 0.0, sum_dy_xhat = 0.0;
                               for (std::size_t i = 0; i < sp; ++i) {
                                   const double xhat = (xin->data[base + i] - mean) * inv;
                                   sum_dy += o.grad[base + i];
                                   sum_dy_xhat += o.grad[base + i] * xhat;
                               }
                               dg[static_cast<std::size_t>(ci)] += sum_dy_xhat;
                               db[static_cast<std::size_t>(ci)] += sum_dy;
                               if (!dx.empty()) {
                                   const double m_dy = sum_dy / n, m_dyx = sum_dy_xhat / n;
                                   for (std::size_t i = 0; i < sp; ++i) {
                                       const double xhat = (xin->data[base + i] - mean) * inv;
                                       dx[base + i] = g * inv * (o.grad[base + i] - m_dy - xhat * m_dyx);
                                   }
                               }
                           }
                       if (xin->requires_grad) xin->accumulate_grad(dx.data());
                       if (gn->requires_grad) gn->accumulate_grad(dg.data());
                       if (bs->requires_grad) bs->accumulate_grad(db.data());
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.data());
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    return make_op("add", {a, b}, a.shape(), std::move(out), [](detail::TapeNode& o) {
        if (o.parents[0]->requires_grad) o.parents[0]->accumulate_grad(o.grad.data());
        if (o.parents[1]->requires_grad) o.parents[1]->accumulate_grad(o.grad.data());
    });
}

Tensor scale(const Tensor& a, double cst) {
    std::vector<double> out(a.data());
    for (double& v : out) v *= cst;
    return make_op("scale", {a}, a.shape(), std::move(out), [cst](detail::TapeNode& o) {
        std::vector<double> g(o.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] * cst;
        o.parents[0]->accumulate_grad(g.data());
    });
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "l1_loss");
    const auto& ad = a.data();
    const auto& bd = b.data();
    const double n = static_cast<double>(ad.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < ad.size(); ++i) acc += std::fabs(ad[i] - bd[i]);
    Tensor out = make_op("l1_loss", {a, b}, {1}, {acc / n}, [n](detail::TapeNode& o) {
        const auto& ad2 = o.parents[0]->data;
        const auto& bd2 = o.parents[1]->data;
        const double up = o.grad[0] / n;
        std::vector<double> g(ad2.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = ad2[i] - bd2[i];
            g[i] = d > 0.0 ? up : (d < 0.0 ? -up : 0.0);
        }
        if (o.parents[0]->requires_grad) o.parents[0]->accumulate_grad(g.data());
        if (o.parents[1]->requires_grad) {
            for (double& v : g) v = -v;
            o.parents[1]->accumulate_grad(g.data());
        }
    });
    out.validate_finite("l1_loss");
    return out;
}

Tensor bce_from_logits(const Tensor& logits, const Tensor& targets) {
    check_same_shape(logits, targets, "bce_from_logits");
    const auto& ld = logits.data();
    const auto& td = targets.data();
    for (double t : td)
        if (t != 0.0 && t != 1.0) throw ConfigError("bce_from_logits targets must be 0 or 1");
    const double n = static_cast<double>(ld.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < ld.size(); ++i) acc += bce_elem(ld[i], td[i]);
    Tensor out = make_op("bce_from_logits", {logits, targets}, {1}, {acc / n}, [n](detail::TapeNode& o) {
        const auto& l = o.parents[0]->data;
        const auto& t = o.parents[1]->data;
        const double up = o.grad[0] / n;
        std::vector<double> g(l.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = up * (sigmoid_d(l[i]) - t[i]);
        o.parents[0]->accumulate_grad(g.data());
    });
    out.validate_finite("bce_from_logits");
    return out;
}

Tensor bce_from_logits(const Tensor& logits, double target) {
    return bce_from_logits(logits, Tensor::full(logits.shape(), target));
}

Tensor bce_from_logits_masked(const Tensor& logits, const Tensor& targets, const Tensor& mask) {
    check_same_shape(logits, targets, "bce_from_logits_masked");
    check_same_shape(logits, mask, "bce_from_logits_masked");
    const auto& ld = logits.data();
    const auto& td = targets.data();
    const auto& md = mask.data();
    double count = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < ld.size(); ++i) {
        count += md[i];
        if (md[i] != 0.0) acc += md[i] * bce_elem(ld[i], td[i]);
    }
    const double denom = count > 0.0 ? count : 1.0;
    Tensor out = make_op("bce_masked", {logits, targets, mask}, {1}, {acc / denom}, [denom](detail::TapeNode& o) {
        const auto& l = o.parents[0]->data;
        const auto& t = o.parents[1]->data;
        const auto& m = o.parents[2]->data;
        const double up = o.grad[0] / denom;
        std::vector<double> g(l.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = m[i] != 0.0 ? up * m[i] * (sigmoid_d(l[i]) - t[i]) : 0.0;
        o.parents[0]->accumulate_grad(g.data());
    });
    out.validate_finite("bce_from_logits_masked");
    return out;
}

Tensor l1_loss_masked(const Tensor& a, const Tensor& target, const Tensor& mask) {
    check_same_shape(a, target, "l1_loss_masked");
    check_same_shape(a, mask, "l1_loss_masked");
    const auto& ad = a.data();
    const auto& td = target.data();
    const auto& md = mask.data();
    double count = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < ad.size(); ++i) {
        count += md[i];
        if (md[i] != 0.0) acc += md[i] * std::fabs(ad[i] - td[i]);
    }
    const double denom = count > 0.0 ? count : 1.0;
    Tensor out = make_op("l1_masked", {a, target, mask}, {1}, {acc / denom}, [denom](detail::TapeNode& o) {
        const auto& ad2 = o.parents[0]->data;
        const auto& td2 = o.parents[1]->data;
        const auto& m = o.parents[2]->data;
        const double up = o.grad[0] / denom;
        std::vector<double> g(ad2.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = ad2[i] - td2[i];
            g[i] = m[i] != 0.0 ? m[i] * (d > 0.0 ? up : (d < 0.0 ? -up : 0.0)) : 0.0;
        }
        o.parents[0]->accumulate_grad(g.data());
    });
    out.validate_finite("l1_loss_masked");
    return out;
}

Tensor anchor_class_ce(const Tensor& cls_logits, const std::vector<int>& labels, const std::vector<double>& sel,
                       int n_classes) {
    if (cls_logits.shape().size() != 4) throw ConfigError("anchor_class_ce expects [B, A*C, G, G]");
    const int b = cls_logits.dim(0), ac = cls_logits.dim(1), gh = cls_logits.dim(2), gw = cls_logits.dim(3);
    if (n_classes < 1 || ac % n_classes != 0) throw ConfigError("anchor_class_ce: channel count not divisible by n_classes");
    const int anchors = ac / n_classes;
    const std::size_t n_anchor_slots = static_cast<std::size_t>(b) * anchors * gh * gw;
    if (labels.size() != n_anchor_slots || sel.size() != n_anchor_slots)
        throw ConfigError("anchor_class_ce: labels/sel size mismatch");

    const auto& ld = cls_logits.data();
    const std::size_t plane = static_cast<std::size_t>(gh) * gw;
    auto logit_at = [&](const std::vector<double>& src, int bi, int a, int cls, std::size_t cell) {
        return src[((static_cast<std::size_t>(bi) * ac) + static_cast<std::size_t>(a * n_classes + cls)) * plane + cell];
    };

    double n_sel = 0.0, acc = 0.0;
    for (int bi = 0; bi < b; ++bi)
        for (int a = 0; a < anchors; ++a)
            for (std::size_t cell = 0; cell < plane; ++cell) {
                const std::size_t slot = (static_cast<std::size_t>(bi) * anchors + a) * plane + cell;
                if (sel[slot] == 0.0) continue;
                n_sel += 1.0;
                double mx = logit_at(ld, bi, a, 0, cell);
                for (int cc = 1; cc < n_classes; ++cc) mx = std::max(mx, logit_at(ld, bi, a, cc, cell));
                double lse = 0.0;
                for (int cc = 0; cc < n_classes; ++cc) lse += std::exp(logit_at(ld, bi, a, cc, cell) - mx);
                lse = std::log(lse) + mx;
                const int y = labels[slot];
                if (y < 0 || y >= n_classes) throw ConfigError("anchor_class_ce: label out of range");
                acc += lse - logit_at(ld, bi, a, y, cell);
            }
    const double denom = n_sel > 0.0 ? n_sel : 1.0;

    Tensor out = make_op(
        "anchor_class_ce", {cls_logits}, {1}, {acc / denom},
        [b, ac, anchors, n_classes, plane, denom, labels, sel](detail::TapeNode& o) {
            const auto& l = o.parents[0]->data;
            std::vector<double> g(l.size(), 0.0);
            const double up = o.grad[0] / denom;
            std::vector<double> probs(static_cast<std::size_t>(n_classes));
            for (int bi = 0; bi < b; ++bi)
                for (int a = 0; a < anchors; ++a)
                    for (std::size_t cell = 0; cell < plane; ++cell) {
                        const std::size_t slot = (static_cast<std::size_t>(bi) * anchors + a) * plane + cell;
                        if (sel[slot] == 0.0) continue;
                        auto idx = [&](int cls) {
                            return ((static_cast<std::size_t>(bi) * ac) + static_cast<std::size_t>(a * n_classes + cls)) * plane + cell;
                        };
                        double mx = l[idx(0)];
                        for (int cc = 1; cc < n_classes; ++cc) mx = std::max(mx, l[idx(cc)]);
                        double z = 0.0;
                        for (int cc = 0; cc < n_classes; ++cc) {
                            probs[static_cast<std::size_t>(cc)] = std::exp(l[idx(cc)] - mx);
                            z += probs[static_cast<std::size_t>(cc)];
                        }
                        const int y = labels[slot];
                        for (int cc = 0; cc < n_classes; ++cc)
                            g[idx(cc)] = up * (probs[static_cast<std::size_t>(cc)] / z - (cc == y ? 1.0 : 0.0));
                    }
            o.parents[0]->accumulate_grad(g.data());
        });
    out.validate_finite("anchor_class_ce");
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ConfigError("concat_channels: no inputs");
    const int b = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    int ctotal = 0;
    std::vector<int> csizes;
    for (const auto& t : parts) {
        if (t.shape().size() != 4 || t.dim(0) != b || t.dim(2) != h || t.dim(3) != w)
            throw ConfigError("concat_channels: incompatible shapes");
        csizes.push_back(t.dim(1));
        ctotal += t.dim(1);
    }
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> out(static_cast<std::size_t>(b) * ctotal * plane);
    for (int bi = 0; bi < b; ++bi) {
        std::size_t coff = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            const auto& src = parts[pi].data();
            const std::size_t csz = static_cast<std::size_t>(csizes[pi]) * plane;
            std::copy_n(src.data() + static_cast<std::size_t>(bi) * csz, csz,
                        out.data() + (static_cast<std::size_t>(bi) * ctotal) * plane + coff);
            coff += csz;
        }
    }
    return make_op("concat_channels", parts, {b, ctotal, h, w}, std::move(out),
                   [b, ctotal, plane, csizes](detail::TapeNode& o) {
                       std::size_t coff = 0;
                       for (std::size_t pi = 0; pi < o.parents.size(); ++pi) {
                           const std::size_t csz = static_cast<std::size_t>(csizes[pi]) * plane;
                           auto& p = o.parents[pi];
                           if (p->requires_grad) {
                               std::vector<double> g(p->data.size());
                               for (int bi = 0; bi < b; ++bi)
                                   std::copy_n(o.grad.data() + (static_cast<std::size_t>(bi) * ctotal) * plane + coff,
                                               csz, g.data() + static_cast<std::size_t>(bi) * csz);
                               p->accumulate_grad(g.data());
                           }
                           coff += csz;
                       }
                   });
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
    if (x.shape().size() != 4) throw ConfigError("slice_channels expects [B,C,H,W]");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (!(0 <= c0 && c0 < c1 && c1 <= c)) throw ConfigError("slice_channels: bad channel range");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const int cs = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(b) * cs * plane);
    for (int bi = 0; bi < b; ++bi)
        std::copy_n(x.data().data() + (static_cast<std::size_t>(bi) * c + c0) * plane, static_cast<std::size_t>(cs) * plane,
                    out.data() + static_cast<std::size_t>(bi) * cs * plane);
    return make_op("slice_channels", {x}, {b, cs, h, w}, std::move(out), [b, c, c0, cs, plane](detail::TapeNode& o) {
        auto& p = o.parents[0];
        std::vector<double> g(p->data.size(), 0.0);
        for (int bi = 0; bi < b; ++bi)
            std::copy_n(o.grad.data() + static_cast<std::size_t>(bi) * cs * plane, static_cast<std::size_t>(cs) * plane,
                        g.data() + (static_cast<std::size_t>(bi) * c + c0) * plane);
        p->accumulate_grad(g.data());
    });
}

}  // namespace dagan
