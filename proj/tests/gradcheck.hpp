#ifndef PSAL_TESTS_GRADCHECK_HPP
#define PSAL_TESTS_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "psal/rng.hpp"
#include "psal/tensor.hpp"

namespace psal::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Max relative error between the analytic gradient of `loss_fn` w.r.t. each
/// tensor in `wrt` and central finite differences. Relative error uses
/// |a - n| / max(|a|, |n|, floor) so near-zero entries do not blow up.
inline double max_grad_rel_error(const std::function<Tensor()>& loss_fn, std::vector<Tensor> wrt, double h = 1e-5,
                                 double floor = 1e-6, std::size_t max_entries = 0) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss_fn());
  double worst = 0.0;
  for (auto& t : wrt) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    const std::size_t count = max_entries ? std::min(max_entries, t.numel()) : t.numel();
    const std::size_t stride = std::max<std::size_t>(1, t.numel() / count);
    for (std::size_t i = 0; i < t.numel(); i += stride) {
      const double saved = t.data()[i];
      t.data()[i] = saved + h;
      const double up = loss_fn().item();
      t.data()[i] = saved - h;
      const double down = loss_fn().item();
      t.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), floor});
      worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace psal::test

#endif  // PSAL_TESTS_GRADCHECK_HPP
