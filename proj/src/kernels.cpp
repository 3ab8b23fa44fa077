// SPDX-License-Identifier: Apache-2.0
#include "esm2/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>

#include "esm2/error.hpp"

namespace esm2::kernels {

namespace scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void adam_update(double* param, const double* grad, double* m, double* v,
                 std::size_t n, const AdamCoeffs& c) {
  const double one_minus_b1 = 1.0 - c.beta1;
  const double one_minus_b2 = 1.0 - c.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = c.beta1 * m[i] + one_minus_b1 * g;
    v[i] = c.beta2 * v[i] + one_minus_b2 * (g * g);
    const double denom = std::sqrt(v[i] * c.v_correction) + c.eps;
    param[i] -= c.step_size * m[i] / denom;
  }
}

}  // namespace scalar

namespace {

bool cpu_has_avx2() {
#if defined(ESM2_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  // ESM2_ISA=scalar pins the reference kernels for a whole process.
  if (const char* env = std::getenv("ESM2_ISA")) {
    if (std::string(env) == "scalar") return Isa::scalar;
  }
  return detect_isa();
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

void check_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ValidationError(std::string(what) + ": length mismatch (" +
                          std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  return isa == Isa::scalar || (isa == Isa::avx2 && cpu_has_avx2());
}

Isa detect_isa() { return cpu_has_avx2() ? Isa::avx2 : Isa::scalar; }

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw ValidationError("kernel ISA '" + std::string(isa_name(isa)) +
                          "' is not available on this build/CPU");
  }
  current().store(isa, std::memory_order_relaxed);
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_same_size(a.size(), b.size(), "dot");
#ifdef ESM2_HAVE_AVX2
  if (active_isa() == Isa::avx2) return avx2::dot(a.data(), b.data(), a.size());
#endif
  return scalar::dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same_size(x.size(), y.size(), "axpy");
#ifdef ESM2_HAVE_AVX2
  if (active_isa() == Isa::avx2) return avx2::axpy(alpha, x.data(), y.data(), x.size());
#endif
  scalar::axpy(alpha, x.data(), y.data(), x.size());
}

void adam_update(std::span<double> param, std::span<const double> grad,
                 std::span<double> m, std::span<double> v,
                 const AdamCoeffs& c) {
  check_same_size(param.size(), grad.size(), "adam_update");
  check_same_size(param.size(), m.size(), "adam_update");
  check_same_size(param.size(), v.size(), "adam_update");
#ifdef ESM2_HAVE_AVX2
  if (active_isa() == Isa::avx2) {
    return avx2::adam_update(param.data(), grad.data(), m.data(), v.data(),
                             param.size(), c);
  }
#endif
  scalar::adam_update(param.data(), grad.data(), m.data(), v.data(),
                      param.size(), c);
}

}  // namespace esm2::kernels
