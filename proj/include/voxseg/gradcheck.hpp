#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Central-difference gradient verification. Deliberately dumb and slow: its
// whole value is being an independent check on the analytic backward passes.

namespace voxseg {

struct GradientCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    double tol = 0.0;
    bool passed() const { return max_rel_err <= tol; }

    std::string str() const {
        return "max_rel_err=" + std::to_string(max_rel_err) + " at parameter " +
               std::to_string(worst_index) + " (analytic=" + std::to_string(worst_analytic) +
               ", numeric=" + std::to_string(worst_numeric) + ", tol=" + std::to_string(tol) + ")";
    }
};

// Compares analytic gradients against (f(x+h e_i) - f(x-h e_i)) / 2h for the
// requested coordinates (all of them when indices is empty).
inline GradientCheckReport gradient_check(const std::function<double(std::span<const double>)>& f,
                                          std::vector<double> point,
                                          std::span<const double> analytic, double h, double tol,
                                          std::span<const std::size_t> indices = {}) {
    if (point.size() != analytic.size())
        throw std::invalid_argument("gradient_check: point and gradient sizes differ");
    if (!(h > 0.0))
        throw std::invalid_argument("gradient_check: step must be positive");

    GradientCheckReport rep;
    rep.tol = tol;

    std::vector<std::size_t> all;
    if (indices.empty()) {
        all.resize(point.size());
        for (std::size_t i = 0; i < all.size(); ++i)
            all[i] = i;
        indices = all;
    }

    for (std::size_t i : indices) {
        if (i >= point.size())
            throw std::invalid_argument("gradient_check: index out of range");
        const double saved = point[i];
        point[i] = saved + h;
        const double fp = f(point);
        point[i] = saved - h;
        const double fm = f(point);
        point[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("gradient_check: non-finite objective at parameter " +
                                     std::to_string(i));
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[i];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-6});
        const double rel = std::fabs(a - numeric) / denom;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_index = i;
            rep.worst_analytic = a;
            rep.worst_numeric = numeric;
        }
        ++rep.checked;
    }
    return rep;
}

} // namespace voxseg
