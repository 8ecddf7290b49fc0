#pragma once

// Independent reference computations for tests. None of these call into the
// library's own special functions or solvers.

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/sinh_sinh.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace oracle {

// log of the integral over s > 0 of N(x | 0, 1/s) Gamma(s | shape a, rate b),
// integrated in u = log s so the integrand is smooth on the real line.
inline double gamma_mixed_normal_logpdf(double x, double a, double b) {
  const double log_norm = a * std::log(b) - std::lgamma(a) - 0.5 * std::log(2.0 * std::numbers::pi);
  // Shift by the integrand's log-mode to keep values near 1.
  auto log_f = [&](double u) {
    const double s = std::exp(u);
    return (a + 0.5) * u - s * (b + 0.5 * x * x);
  };
  const double u_star = std::log((a + 0.5) / (b + 0.5 * x * x));
  const double shift = log_f(u_star);
  boost::math::quadrature::sinh_sinh<double> integrator;
  const double area =
      integrator.integrate([&](double t) { return std::exp(log_f(u_star + t) - shift); });
  return log_norm + shift + std::log(area);
}

inline double t_density(double t, double dof) {
  return std::exp(std::lgamma(0.5 * (dof + 1)) - std::lgamma(0.5 * dof) -
                  0.5 * std::log(dof * std::numbers::pi) -
                  0.5 * (dof + 1) * std::log1p(t * t / dof));
}

// P(T > t) by quadrature of the density over [t, inf).
inline double t_upper_tail(double t, double dof) {
  if (t < 0) return 1.0 - t_upper_tail(-t, dof);
  boost::math::quadrature::exp_sinh<double> integrator;
  return integrator.integrate([&](double s) { return t_density(s, dof); }, t,
                              std::numeric_limits<double>::infinity());
}

// (X^T X)^{-1} X^T y accumulated and solved in long double with partial pivoting.
inline std::vector<double> normal_equations(const std::vector<std::vector<double>>& X,
                                            const std::vector<double>& y) {
  const std::size_t n = X.size(), p = X.front().size();
  std::vector<std::vector<long double>> A(p, std::vector<long double>(p + 1, 0.0L));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < p; ++r) {
      for (std::size_t c = 0; c < p; ++c) A[r][c] += static_cast<long double>(X[i][r]) * X[i][c];
      A[r][p] += static_cast<long double>(X[i][r]) * y[i];
    }
  }
  for (std::size_t col = 0; col < p; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < p; ++r) {
      if (std::fabs(A[r][col]) > std::fabs(A[pivot][col])) pivot = r;
    }
    std::swap(A[col], A[pivot]);
    if (A[col][col] == 0.0L) throw std::runtime_error("singular normal equations");
    for (std::size_t r = 0; r < p; ++r) {
      if (r == col) continue;
      const long double f = A[r][col] / A[col][col];
      for (std::size_t c = col; c <= p; ++c) A[r][c] -= f * A[col][c];
    }
  }
  std::vector<double> coef(p);
  for (std::size_t r = 0; r < p; ++r) coef[r] = static_cast<double>(A[r][p] / A[r][r]);
  return coef;
}

}  // namespace oracle
