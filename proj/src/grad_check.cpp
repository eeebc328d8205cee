#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "dagan/common.hpp"
#include "dagan/grad_check.hpp"

namespace dagan {

std::string GradCheckReport::summary() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s: worst rel err %.3e at %s[%zu] (analytic %.6e, numeric %.6e), %zu checked",
                  passed ? "pass" : "FAIL", worst_rel_err, worst_param.c_str(), worst_index, worst_analytic,
                  worst_numeric, n_checked);
    return buf;
}

GradCheckReport grad_check(const std::function<Tensor()>& loss, ParamMap& params, const GradCheckOptions& opt,
                           Rng* rng) {
    if (default_precision() != Precision::f64)
        throw ConfigError("grad_check requires f64 mode; finite differences are meaningless at f32");
    if (!(opt.step > 0.0) || !(opt.tolerance > 0.0)) throw ConfigError("grad_check: step and tolerance must be > 0");

    params.zero_grad();
    Tensor l0 = loss();
    if (l0.numel() != 1) throw ConfigError("grad_check: loss must be scalar");
    l0.backward();

    std::map<std::string, std::vector<double>> analytic;
    for (auto& [name, t] : params) analytic[name] = t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0);

    GradCheckReport rep;
    rep.passed = true;
    for (auto& [name, t] : params) {
        std::vector<std::size_t> idxs;
        if (opt.samples_per_param == 0 || opt.samples_per_param >= static_cast<std::size_t>(t.numel())) {
            idxs.resize(static_cast<std::size_t>(t.numel()));
            for (std::size_t i = 0; i < idxs.size(); ++i) idxs[i] = i;
        } else {
            if (rng == nullptr) throw ConfigError("grad_check: sampling requires an rng");
            for (std::size_t k = 0; k < opt.samples_per_param; ++k)
                idxs.push_back(static_cast<std::size_t>(rng->uniform_int(0, static_cast<long long>(t.numel()) - 1)));
            std::sort(idxs.begin(), idxs.end());
            idxs.erase(std::unique(idxs.begin(), idxs.end()), idxs.end());
        }
        auto& w = t.mutable_data();
        for (std::size_t i : idxs) {
            const double saved = w[i];
            w[i] = saved + opt.step;
            const double fp = loss().value();
            w[i] = saved - opt.step;
            const double fm = loss().value();
            w[i] = saved;
            const double numeric = (fp - fm) / (2.0 * opt.step);
            const double a = analytic[name][i];
            const double rel = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
            rep.n_checked += 1;
            if (rel > rep.worst_rel_err) {
                rep.worst_rel_err = rel;
                rep.worst_param = name;
                rep.worst_index = i;
                rep.worst_analytic = a;
                rep.worst_numeric = numeric;
            }
        }
    }
    rep.passed = rep.worst_rel_err <= opt.tolerance;
    return rep;
}

}  // namespace dagan
