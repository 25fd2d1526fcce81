#include "pirate/common.hpp"

namespace pirate {

bool cholesky_solve(std::vector<double> a, std::span<const double> b,
                    std::span<double> x) {
  const std::size_t n = b.size();
  if (a.size() != n * n || x.size() != n) return false;

  // In-place lower Cholesky factor.
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j * n + k] * a[j * n + k];
    if (!(diag > 0.0) || !std::isfinite(diag)) return false;
    const double root = std::sqrt(diag);
    a[j * n + j] = root;
    for (std::size_t i = j + 1; i < n; ++i) {
      double sum = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) sum -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = sum / root;
    }
  }

  // Forward then backward substitution.
  for (std::size_t i = 0; i < n; ++i) {
    double sum = b[i];
    for (std::size_t k = 0; k < i; ++k) sum -= a[i * n + k] * x[k];
    x[i] = sum / a[i * n + i];
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double sum = x[ii];
    for (std::size_t k = ii + 1; k < n; ++k) sum -= a[k * n + ii] * x[k];
    x[ii] = sum / a[ii * n + ii];
  }
  return all_finite(x);
}

}  // namespace pirate
