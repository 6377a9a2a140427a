#pragma once

// Central finite difference oracle for gradient checks. Independent of the
// tape: it only re-runs a caller-supplied forward closure.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ssseg/rng.hpp"
#include "ssseg/tensor.hpp"

namespace ssseg::testing {

struct GradCheckResult {
    double max_rel_err = 0.0;
    int64_t checked = 0;
};

// Central differences at step h carry ~eps*|f|/h cancellation noise, so
// gradients below ~1e-5 cannot be certified in relative terms; the floor
// treats them as absolute comparisons at that scale.
inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
    return std::abs(analytic - numeric) / denom;
}

// Checks d(forward())/d(target) against central differences at n_coords
// random coordinates of target. `analytic_grad` is the already-populated
// gradient buffer for target; `forward` must recompute the scalar loss from
// target's current data.
//
// A coordinate whose +/-step window straddles a piecewise kink (relu, max
// pool) pollutes the quotient; such coordinates are re-verified at a finer
// step, which separates kink contamination from a wrong gradient.
inline GradCheckResult check_gradient(Tensor target, const std::vector<double>& analytic_grad,
                                      const std::function<double()>& forward, Rng& rng,
                                      int n_coords, double step = 1e-5) {
    GradCheckResult res;
    const int64_t n = target.numel();
    auto& data = target.mutable_data();
    auto numeric_at = [&](int64_t i, double h) {
        const double saved = data[static_cast<size_t>(i)];
        data[static_cast<size_t>(i)] = saved + h;
        const double fp = forward();
        data[static_cast<size_t>(i)] = saved - h;
        const double fm = forward();
        data[static_cast<size_t>(i)] = saved;
        return (fp - fm) / (2.0 * h);
    };
    for (int k = 0; k < n_coords; ++k) {
        const int64_t i = rng.uniform_int(0, n - 1);
        const double analytic =
            analytic_grad.empty() ? 0.0 : analytic_grad[static_cast<size_t>(i)];
        double err = rel_err(analytic, numeric_at(i, step));
        if (err > 1e-4) err = std::min(err, rel_err(analytic, numeric_at(i, step / 16.0)));
        res.max_rel_err = std::max(res.max_rel_err, err);
        ++res.checked;
    }
    return res;
}

inline Tensor random_tensor(const std::vector<int64_t>& shape, Rng& rng,
                            bool requires_grad = true, double scale = 1.0) {
    Tensor t = Tensor::zeros(shape, requires_grad);
    for (double& v : t.mutable_data()) v = rng.normal(0.0, scale);
    return t;
}

}  // namespace ssseg::testing
