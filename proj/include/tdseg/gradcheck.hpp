#ifndef TDSEG_GRADCHECK_HPP
#define TDSEG_GRADCHECK_HPP

// Central-difference gradient oracle. Kept independent of the reverse-mode
// pass: it only re-evaluates the forward function.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace tdseg {

using ScalarFn = std::function<double(const std::vector<double>&)>;

inline double finite_diff_at(const ScalarFn& f, std::vector<double> x, size_t i,
                             double eps = 1e-5) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff: eps must be positive");
  const double x0 = x[i];
  x[i] = x0 + eps;
  const double fp = f(x);
  x[i] = x0 - eps;
  const double fm = f(x);
  return (fp - fm) / (2.0 * eps);
}

inline std::vector<double> finite_diff_grad(const ScalarFn& f, const std::vector<double>& x,
                                            double eps = 1e-5) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) g[i] = finite_diff_at(f, x, i, eps);
  return g;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace tdseg

#endif
