#include "dagan/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dagan {

namespace {
std::atomic<Precision> g_precision{Precision::f64};
}

Precision default_precision() { return g_precision.load(std::memory_order_relaxed); }
void set_default_precision(Precision p) { g_precision.store(p, std::memory_order_relaxed); }

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ConfigError("tensor shape dimensions must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

namespace detail {

void TapeNode::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
}

void TapeNode::accumulate_grad(const double* g) {
    ensure_grad();
    const std::size_t n = grad.size();
    if (default_precision() == Precision::f32) {
        for (std::size_t i = 0; i < n; ++i) grad[i] = static_cast<double>(static_cast<float>(grad[i] + g[i]));
    } else {
        for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
    }
}

}  // namespace detail

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value), requires_grad);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    const auto n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(data.size()))
        throw ConfigError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                          shape_str(shape));
    auto node = std::make_shared<detail::TapeNode>();
    node->shape = std::move(shape);
    if (default_precision() == Precision::f32)
        for (double& v : data) v = static_cast<double>(static_cast<float>(v));
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    Tensor t(std::move(node));
    t.validate_finite("tensor construction");
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from_data({1}, {v}, requires_grad); }

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
    const auto n = shape_numel(shape);
    std::vector<double> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = rng.normal(0.0, stddev);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw NumericError("tensor has no gradient (backward not run or not on grad path)");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

double Tensor::value() const {
    if (numel() != 1) throw ConfigError("value() requires a scalar tensor, shape is " + shape_str(shape()));
    return node_->data[0];
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<detail::TapeNode>();
    node->shape = node_->shape;
    node->data = node_->data;
    return Tensor(std::move(node));
}

Tensor Tensor::reshape(std::vector<int> new_shape) const {
    if (shape_numel(new_shape) != numel())
        throw ConfigError("reshape " + shape_str(shape()) + " -> " + shape_str(new_shape) + " changes element count");
    return make_op("reshape", {*this}, std::move(new_shape), node_->data, [](detail::TapeNode& out) {
        out.parents[0]->accumulate_grad(out.grad.data());
    });
}

void Tensor::backward() const {
    if (numel() != 1) throw ConfigError("backward() must start from a scalar, shape is " + shape_str(shape()));

    // Iterative DFS topological sort over parents.
    std::vector<detail::TapeNode*> order;
    std::unordered_set<detail::TapeNode*> visited;
    std::vector<std::pair<detail::TapeNode*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::TapeNode* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // order is child-after-parents; walk it from the root down.
    node_->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TapeNode* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

void Tensor::validate_finite(const std::string& what) const {
    for (double v : node_->data)
        if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
}

Tensor make_op(const char* name, const std::vector<Tensor>& inputs, std::vector<int> out_shape,
               std::vector<double> out_data, std::function<void(detail::TapeNode&)> backward_fn) {
    if (shape_numel(out_shape) != static_cast<std::int64_t>(out_data.size()))
        throw ConfigError(std::string(name) + ": output data does not match shape " + shape_str(out_shape));
    auto node = std::make_shared<detail::TapeNode>();
    node->shape = std::move(out_shape);
    if (default_precision() == Precision::f32)
        for (double& v : out_data) v = static_cast<double>(static_cast<float>(v));
    node->data = std::move(out_data);
    node->op = name;
    bool needs_grad = false;
    for (const auto& in : inputs)
        if (in.requires_grad()) needs_grad = true;
    if (needs_grad) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

}  // namespace dagan
