#pragma once

// Test-only oracle: central finite differences against analytic gradients.
// Kept independent of the autodiff implementation (it only ever calls the
// provided scalar-valued function).

#include <cmath>
#include <functional>
#include <vector>

#include "vtlab/matrix.hpp"
#include "vtlab/rng.hpp"

namespace vtlab_test {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int worst_index = -1;
};

// f: evaluates the scalar loss given the (mutated) input matrix.
// analytic: gradient produced by the implementation under test.
inline GradCheckResult gradcheck(std::function<double(const vtlab::Matrix&)> f, vtlab::Matrix x,
                                 const vtlab::Matrix& analytic, int n_coords, vtlab::Rng& rng,
                                 double h = 1e-5) {
  GradCheckResult res;
  const size_t total = x.size();
  for (int t = 0; t < n_coords; ++t) {
    size_t i = (n_coords >= static_cast<int>(total)) ? static_cast<size_t>(t)
                                                     : static_cast<size_t>(rng.u64() % total);
    if (i >= total) break;
    const double orig = x.data()[i];
    x.data()[i] = orig + h;
    const double fp = f(x);
    x.data()[i] = orig - h;
    const double fm = f(x);
    x.data()[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double an = analytic.data()[i];
    const double abs_err = std::fabs(fd - an);
    const double rel_err = abs_err / std::max({std::fabs(fd), std::fabs(an), 1e-8});
    if (rel_err > res.max_rel_err) {
      res.max_rel_err = rel_err;
      res.worst_index = static_cast<int>(i);
    }
    res.max_abs_err = std::max(res.max_abs_err, abs_err);
  }
  return res;
}

}  // namespace vtlab_test
