#pragma once

#include <vector>

#include "dagan/tensor.hpp"

namespace dagan {

enum class PadMode { Zero, Reflect };

// input [B,Cin,H,W], weight [Cout,Cin,Kh,Kw], bias [Cout].
// H' = (H + 2*pad - Kh)/stride + 1 (floor), same for W'.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, PadMode pad_mode,
              int pad);

// input [B,Cin,H,W], weight [Cin,Cout,Kh,Kw], bias [Cout]. Adjoint of conv2d:
// H' = stride*(H-1) + Kh - 2*pad + output_pad. With the kernel/stride/pad
// combinations used in this repo the spatial output is stride * input.
Tensor conv2d_transpose(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad = 0,
                        int output_pad = 0);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);

enum class Activation { Relu, LeakyRelu, Tanh, Sigmoid };
Tensor activation(Activation kind, const Tensor& x, double slope = 0.2);

// Per (sample, channel) spatial normalization: gain*(x-mean)/sqrt(var+eps) + bias.
Tensor instance_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon = 1e-5);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// Mean |a-b|; subgradient at ties is 0.
Tensor l1_loss(const Tensor& a, const Tensor& b);

// Mean of -[t*log(sigmoid(l)) + (1-t)*log(1-sigmoid(l))] in the stable
// log-sum-exp form; finite for all finite logits. Targets must be 0 or 1.
Tensor bce_from_logits(const Tensor& logits, const Tensor& targets);
Tensor bce_from_logits(const Tensor& logits, double target);

// Masked reductions used by the detector head. mask entries are 0 or 1 and
// carry no gradient; means are over counted elements (0 if none counted).
Tensor bce_from_logits_masked(const Tensor& logits, const Tensor& targets, const Tensor& mask);
Tensor l1_loss_masked(const Tensor& a, const Tensor& target, const Tensor& mask);

// Mean softmax cross-entropy over selected anchors. cls_logits is
// [B, A*C, G, G] with anchor-major channel groups; labels and sel are flat
// [B, A, G, G]. Anchors with sel == 0 contribute nothing.
Tensor anchor_class_ce(const Tensor& cls_logits, const std::vector<int>& labels, const std::vector<double>& sel,
                       int n_classes);

Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& x, int c0, int c1);

}  // namespace dagan
