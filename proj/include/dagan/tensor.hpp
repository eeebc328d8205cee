#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dagan/common.hpp"
#include "dagan/rng.hpp"

namespace dagan {

class Tensor;

namespace detail {

// One recorded primitive application. The backward pass walks nodes in
// reverse topological order and each node's closure scatters its output
// gradient into the gradients of its parents. A graph is confined to one
// logical thread.
struct TapeNode {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated on first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TapeNode>> parents;
    std::function<void(TapeNode&)> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    void ensure_grad();
    // Adds g (same length as data) into grad, rounding per active precision.
    void accumulate_grad(const double* g);
};

}  // namespace detail

// Value-semantics handle onto an N-d array that participates in the
// reverse-mode tape. Ops never mutate their inputs; copying a Tensor is a
// cheap shared view. mutable_data() exists for leaf parameter updates.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    // Gaussian init, N(0, stddev^2).
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(std::size_t i) const { return node_->shape[i]; }
    std::int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& mutable_data() { return node_->data; }
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad();

    // Scalar convenience accessor; requires numel() == 1.
    double value() const;

    // Same data, cut loose from the tape.
    Tensor detach() const;

    // Same storage interpreted with a new shape (product must match).
    Tensor reshape(std::vector<int> new_shape) const;

    // Reverse-mode sweep from this scalar: seeds d(this)=1 and accumulates
    // into every requires_grad leaf reachable through the tape.
    void backward() const;

    // Throws NumericError if any element is NaN/Inf.
    void validate_finite(const std::string& what) const;

    std::shared_ptr<detail::TapeNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TapeNode> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::TapeNode> node_;

    friend Tensor make_op(const char* name, const std::vector<Tensor>& inputs, std::vector<int> out_shape,
                          std::vector<double> out_data, std::function<void(detail::TapeNode&)> backward_fn);
};

// Records a primitive application on the tape. out_data is rounded per the
// active precision; backward_fn receives the output node (grad filled) and
// must scatter into node.parents[i]->accumulate_grad. Parents and the
// closure are only kept when some input requires grad.
Tensor make_op(const char* name, const std::vector<Tensor>& inputs, std::vector<int> out_shape,
               std::vector<double> out_data, std::function<void(detail::TapeNode&)> backward_fn);

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

}  // namespace dagan
