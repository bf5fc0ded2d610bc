#pragma once

// Independent gradient oracle: central finite differences on a black-box
// scalar function. Deliberately knows nothing about the tape machinery it is
// used to check.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace taflab::testing {

// f maps a flat parameter vector to a scalar; returns d f / d x at x.
inline std::vector<double> central_differences(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double fp = f(x);
        x[i] = x0 - h;
        const double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Max relative error between an analytic gradient and the finite-difference
// one; denominators are floored to avoid blowups near zero.
inline double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric,
                          double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

}  // namespace taflab::testing
