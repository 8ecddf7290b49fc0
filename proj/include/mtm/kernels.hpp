#pragma once

// Dense inner-loop kernels. Each kernel has a scalar reference implementation
// and, on x86-64, an AVX2/FMA variant. The active table is chosen once at
// startup from CPU features; MULTITOPIC_SIMD=scalar|avx2|auto overrides.

#include <cstddef>
#include <span>
#include <string_view>

namespace mtm::kernels {

struct KernelTable {
  const char* name;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // y[i] += a * x[i] * z[i]
  void (*mul_axpy)(double a, const double* x, const double* z, double* y, std::size_t n);
  // y[i] = x[i] * z[i]
  void (*hadamard)(const double* x, const double* z, double* y, std::size_t n);
  // sum_i x[i]
  double (*sum)(const double* x, std::size_t n);
};

const KernelTable& scalar_table();
// nullptr when the variant is not compiled in or the CPU lacks the features.
const KernelTable* avx2_table();

const KernelTable& active();
// Accepts "scalar", "avx2" or "auto". Returns false if the request cannot be met.
bool select(std::string_view name);

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), y.size());
}
inline void mul_axpy(double a, std::span<const double> x, std::span<const double> z,
                     std::span<double> y) {
  active().mul_axpy(a, x.data(), z.data(), y.data(), y.size());
}
inline void hadamard(std::span<const double> x, std::span<const double> z, std::span<double> y) {
  active().hadamard(x.data(), z.data(), y.data(), y.size());
}
inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

}  // namespace mtm::kernels
