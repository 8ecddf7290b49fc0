#include "mtm/numerics.hpp"

#include <Eigen/Dense>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <numbers>

#include "mtm/errors.hpp"

namespace mtm {

std::vector<double> normalize_l1(std::span<const double> v) {
  double total = 0.0;
  for (double x : v) {
    if (x < 0.0) throw DomainError("normalize_l1: negative entry");
    total += x;
  }
  if (!(total > 0.0)) throw ZeroMass("normalize_l1: vector has zero mass");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / total;
  return out;
}

double log_gamma(double x) {
  if (!(x > 0.0)) throw DomainError("log_gamma: argument must be positive");
  return std::lgamma(x);
}

double digamma(double x) {
  if (!(x > 0.0)) throw DomainError("digamma: argument must be positive");
  return boost::math::digamma(x);
}

double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd) - 0.5 * z * z;
}

double student_t_logpdf(double x, double dof, double scale) {
  if (!(dof > 0.0) || !(scale > 0.0)) {
    throw DomainError("student_t_logpdf: dof and scale must be positive");
  }
  const double z = x / scale;
  return std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) -
         0.5 * std::log(dof * std::numbers::pi) - std::log(scale) -
         0.5 * (dof + 1.0) * std::log1p(z * z / dof);
}

double half_cauchy_logpdf(double x, double scale) {
  if (!(x > 0.0)) throw DomainError("half_cauchy_logpdf: x must be positive");
  if (!(scale > 0.0)) throw DomainError("half_cauchy_logpdf: scale must be positive");
  const double z = x / scale;
  return std::log(2.0 / (std::numbers::pi * scale)) - std::log1p(z * z);
}

double t_sf(double t, double dof) {
  if (!(dof > 0.0)) throw DomainError("t_sf: dof must be positive");
  if (t == 0.0) return 0.5;
  // P(|T| > |t|) = I_{dof/(dof+t^2)}(dof/2, 1/2)
  const double x = dof / (dof + t * t);
  const double two_sided = boost::math::ibeta(0.5 * dof, 0.5, x);
  return t > 0.0 ? 0.5 * two_sided : 1.0 - 0.5 * two_sided;
}

LeastSquaresResult least_squares(const Matrix& X, std::span<const double> y) {
  const auto n = static_cast<Eigen::Index>(X.rows());
  const auto p = static_cast<Eigen::Index>(X.cols());
  if (static_cast<std::size_t>(n) != y.size()) throw ShapeMismatch("least_squares: rows != len(y)");
  if (n < p) throw RankDeficient("least_squares: fewer observations than columns");

  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> A(
      X.data().data(), n, p);
  Eigen::Map<const Eigen::VectorXd> b(y.data(), n);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    throw RankDeficient("least_squares: numerical rank " + std::to_string(qr.rank()) + " < " +
                        std::to_string(p));
  }
  const Eigen::VectorXd coef = qr.solve(b);
  const Eigen::VectorXd resid = b - A * coef;

  LeastSquaresResult out;
  out.coef.assign(coef.data(), coef.data() + p);
  out.rss = resid.squaredNorm();
  out.residual_variance = n > p ? out.rss / static_cast<double>(n - p) : std::nan("");

  // (X^T X)^{-1} = P R^{-1} R^{-T} P^T
  const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd Rinv =
      R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd inner = Rinv * Rinv.transpose();
  const auto& perm = qr.colsPermutation();
  const Eigen::MatrixXd full = perm * inner * perm.transpose();
  out.xtx_inverse = Matrix(static_cast<std::size_t>(p), static_cast<std::size_t>(p));
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      out.xtx_inverse(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = full(i, j);
    }
  }
  return out;
}

void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ShapeMismatch("adam_update: parameter, gradient and moment sizes differ");
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    params[i] -= state.lr * (m / c1) / (std::sqrt(v / c2) + state.eps);
  }
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h) {
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(x[i]));
    const double orig = point[i];
    point[i] = orig + step;
    const double up = f(point);
    point[i] = orig - step;
    const double down = f(point);
    point[i] = orig;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace mtm
