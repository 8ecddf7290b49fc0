#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace mtm {

// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// L1-normalizes a nonnegative vector. Throws ZeroMass if the sum is zero.
std::vector<double> normalize_l1(std::span<const double> v);

double log_gamma(double x);
double digamma(double x);

double normal_logpdf(double x, double mean, double sd);

// Non-standardized Student-t with `dof` degrees of freedom and scale `scale`.
double student_t_logpdf(double x, double dof, double scale);

double half_cauchy_logpdf(double x, double scale);

// Upper tail P(T > t) of the Student-t distribution.
double t_sf(double t, double dof);

struct LeastSquaresResult {
  std::vector<double> coef;
  double rss = 0.0;
  double residual_variance = 0.0;  // NaN when rows == cols
  Matrix xtx_inverse;
};

// Column-pivoted Householder QR; a pivot below 1e-10 of the largest pivot is
// treated as rank deficiency and reported with RankDeficient.
LeastSquaresResult least_squares(const Matrix& X, std::span<const double> y);

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::size_t step_count = 0;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n, double learning_rate = 0.01)
      : first_moment(n, 0.0), second_moment(n, 0.0), lr(learning_rate) {}
};

// One Adam step minimizing the objective whose gradient is `grads`.
void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state);

// Central differences with per-coordinate step h * max(1, |x_i|).
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h = 1e-5);

}  // namespace mtm
