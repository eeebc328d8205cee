#include <cmath>

#include "dagan/adam.hpp"
#include "dagan/common.hpp"

namespace dagan {

void ParamMap::insert(const std::string& name, const Tensor& t) {
    if (!t.requires_grad()) throw ConfigError("parameter '" + name + "' must require grad");
    if (!items_.emplace(name, t).second) throw ConfigError("duplicate parameter name '" + name + "'");
}

void ParamMap::insert_all(const std::string& prefix, const ParamMap& other) {
    for (const auto& [name, t] : other.items_) insert(prefix + name, t);
}

Tensor& ParamMap::at(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamMap::at(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParamMap::total_scalars() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
}

std::vector<std::string> ParamMap::names() const {
    std::vector<std::string> out;
    out.reserve(items_.size());
    for (const auto& [name, t] : items_) out.push_back(name);
    return out;
}

void ParamMap::zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
}

void adam_step(ParamMap& params, AdamState& state, const AdamConfig& cfg) {
    if (!(cfg.lr > 0.0) || !(cfg.epsilon > 0.0)) throw ConfigError("adam: lr and epsilon must be > 0");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
        throw ConfigError("adam: betas must be in [0,1)");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (auto& [name, t] : params) {
        if (!t.has_grad()) continue;  // parameter did not participate this step
        const auto& g = t.grad();
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(t.numel(), 0.0);
        if (v.empty()) v.assign(t.numel(), 0.0);
        if (m.size() != g.size() || v.size() != g.size())
            throw ConfigError("adam: state size mismatch for '" + name + "'");
        auto& w = t.mutable_data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) throw NumericError("adam: non-finite gradient in '" + name + "'");
            m[i] = apply_precision(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i]);
            v[i] = apply_precision(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i]);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] = apply_precision(w[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
        }
    }
}

}  // namespace dagan
