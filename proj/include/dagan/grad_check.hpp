#pragma once

#include <functional>
#include <string>

#include "dagan/adam.hpp"
#include "dagan/rng.hpp"
#include "dagan/tensor.hpp"

namespace dagan {

struct GradCheckReport {
    bool passed = false;
    double worst_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t n_checked = 0;
    std::string summary() const;
};

struct GradCheckOptions {
    double step = 1e-5;       // central-difference half width
    double tolerance = 1e-4;  // on |a-n| / max(1, |a|, |n|)
    // 0 checks every scalar; otherwise samples this many per parameter.
    std::size_t samples_per_param = 0;
};

// loss() must rebuild the scalar objective from the current parameter values.
// Requires f64 mode; reports the worst relative error instead of aborting.
GradCheckReport grad_check(const std::function<Tensor()>& loss, ParamMap& params, const GradCheckOptions& opt = {},
                           Rng* rng = nullptr);

}  // namespace dagan
