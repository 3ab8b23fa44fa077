// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense arithmetic kernels used by the embedding, tower and optimizer code.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2/FMA
// variant compiled in its own translation unit. The variant is selected once
// at startup from CPUID; set_isa() overrides it (tests, benchmarks).
//
// Equivalence contract between variants:
//   - axpy and adam_update are bit-identical to scalar.
//   - dot differs only by summation order and FMA rounding.

#include <cstddef>
#include <span>
#include <string_view>

namespace esm2::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// Best ISA supported by both this build and the running CPU.
Isa detect_isa();

/// ISA used by the dispatched kernels below.
Isa active_isa();

/// Forces a variant. Throws ValidationError if the CPU or build lacks it.
void set_isa(Isa isa);

bool isa_available(Isa isa);

/// Adam hyper-parameters after bias correction for one step.
struct AdamCoeffs {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double step_size = 0.0;  // lr / (1 - beta1^t)
  double v_correction = 1.0;  // 1 / (1 - beta2^t)
};

// Dispatched entry points.
double dot(std::span<const double> a, std::span<const double> b);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
/// Element-wise Adam update of one parameter block.
void adam_update(std::span<double> param, std::span<const double> grad,
                 std::span<double> m, std::span<double> v,
                 const AdamCoeffs& c);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void adam_update(double* param, const double* grad, double* m, double* v,
                 std::size_t n, const AdamCoeffs& c);
}  // namespace scalar

namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void adam_update(double* param, const double* grad, double* m, double* v,
                 std::size_t n, const AdamCoeffs& c);
}  // namespace avx2

}  // namespace esm2::kernels
