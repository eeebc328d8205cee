#pragma once

#include <map>
#include <string>
#include <vector>

#include "dagan/tensor.hpp"

namespace dagan {

// Named trainable tensors. std::map keeps iteration order stable across runs,
// which keeps optimizer update order (and therefore f32 rounding) reproducible.
class ParamMap {
public:
    void insert(const std::string& name, const Tensor& t);
    void insert_all(const std::string& prefix, const ParamMap& other);

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return items_.count(name) != 0; }
    std::size_t size() const { return items_.size(); }
    std::size_t total_scalars() const;
    std::vector<std::string> names() const;

    void zero_grad();

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

private:
    std::map<std::string, Tensor> items_;
};

struct AdamState {
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    long long step = 0;
};

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// One update over every parameter, in name order. Throws NumericError naming
// the parameter if its gradient contains a non-finite value.
void adam_step(ParamMap& params, AdamState& state, const AdamConfig& cfg);

}  // namespace dagan
