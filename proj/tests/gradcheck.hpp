#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "falcon/dense.hpp"

namespace gradcheck {

// Central differences of f at x, compared entrywise with `analytic`.
// Returns the worst relative error; gradients below `floor` in magnitude are
// compared against the floor instead of themselves.
inline double worst_relative_error(const std::function<double(const falcon::DenseMatrix&)>& f,
                                   const falcon::DenseMatrix& x, const falcon::DenseMatrix& analytic,
                                   double h = 1e-5, double floor = 1e-3) {
  double worst = 0.0;
  falcon::DenseMatrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = probe.data()[i];
    probe.data()[i] = keep + h;
    const double fp = f(probe);
    probe.data()[i] = keep - h;
    const double fm = f(probe);
    probe.data()[i] = keep;
    const double fd = (fp - fm) / (2.0 * h);
    const double a = analytic.data()[i];
    const double scale = std::max({std::abs(fd), std::abs(a), floor});
    worst = std::max(worst, std::abs(fd - a) / scale);
  }
  return worst;
}

}  // namespace gradcheck
