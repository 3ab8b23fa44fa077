// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "esm2/error.hpp"
#include "esm2/kernels.hpp"

namespace k = esm2::kernels;

namespace {

std::vector<double> randn(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Lengths exercising the vector body, the remainder loop and empty input.
const std::size_t kLengths[] = {0, 1, 3, 4, 5, 7, 8, 15, 16, 17, 63, 64, 65, 1000, 1027};

class KernelVariants : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!k::isa_available(k::Isa::avx2)) GTEST_SKIP() << "AVX2 variant not available";
  }
  void TearDown() override { k::set_isa(k::detect_isa()); }
};

}  // namespace

TEST(Kernels, ScalarDotMatchesNaiveSum) {
  std::mt19937_64 rng(3);
  for (auto n : kLengths) {
    const auto a = randn(n, rng), b = randn(n, rng);
    double ref = 0.0;
    for (std::size_t i = 0; i < n; ++i) ref += a[i] * b[i];
    EXPECT_EQ(k::scalar::dot(a.data(), b.data(), n), ref) << "n=" << n;
  }
}

TEST(Kernels, ScalarAdamMatchesHandFormula) {
  std::vector<double> p{0.5, -1.0}, g{0.2, -3.0}, m{0.0, 0.1}, v{0.0, 0.2};
  k::AdamCoeffs c;
  c.step_size = 0.01 / (1.0 - 0.9);
  c.v_correction = 1.0 / (1.0 - 0.999);
  const auto p0 = p, m0 = m, v0 = v;
  k::scalar::adam_update(p.data(), g.data(), m.data(), v.data(), 2, c);
  for (std::size_t i = 0; i < 2; ++i) {
    const double mi = 0.9 * m0[i] + 0.1 * g[i];
    const double vi = 0.999 * v0[i] + 0.001 * g[i] * g[i];
    EXPECT_NEAR(m[i], mi, 1e-15);
    EXPECT_NEAR(v[i], vi, 1e-15);
    const double expect = p0[i] - c.step_size * mi / (std::sqrt(vi * c.v_correction) + c.eps);
    EXPECT_NEAR(p[i], expect, 1e-12);
  }
}

TEST_F(KernelVariants, AxpyBitIdentical) {
  std::mt19937_64 rng(11);
  for (auto n : kLengths) {
    const auto x = randn(n, rng);
    auto y1 = randn(n, rng);
    auto y2 = y1;
    k::scalar::axpy(0.37, x.data(), y1.data(), n);
    k::avx2::axpy(0.37, x.data(), y2.data(), n);
    EXPECT_EQ(y1, y2) << "n=" << n;
  }
}

TEST_F(KernelVariants, AdamBitIdentical) {
  std::mt19937_64 rng(12);
  for (auto n : kLengths) {
    auto p1 = randn(n, rng), g = randn(n, rng), m1 = randn(n, rng), v1 = randn(n, rng);
    for (auto& x : v1) x = x * x;
    auto p2 = p1, m2 = m1, v2 = v1;
    k::AdamCoeffs c;
    c.step_size = 1e-3 / (1.0 - std::pow(0.9, 7));
    c.v_correction = 1.0 / (1.0 - std::pow(0.999, 7));
    k::scalar::adam_update(p1.data(), g.data(), m1.data(), v1.data(), n, c);
    k::avx2::adam_update(p2.data(), g.data(), m2.data(), v2.data(), n, c);
    EXPECT_EQ(p1, p2) << "n=" << n;
    EXPECT_EQ(m1, m2) << "n=" << n;
    EXPECT_EQ(v1, v2) << "n=" << n;
  }
}

TEST_F(KernelVariants, DotAgreesWithinRounding) {
  std::mt19937_64 rng(13);
  for (auto n : kLengths) {
    const auto a = randn(n, rng), b = randn(n, rng);
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) abs_sum += std::abs(a[i] * b[i]);
    const double s = k::scalar::dot(a.data(), b.data(), n);
    const double v = k::avx2::dot(a.data(), b.data(), n);
    EXPECT_LE(std::abs(s - v), 1e-14 * (abs_sum + 1.0)) << "n=" << n;
  }
}

TEST_F(KernelVariants, DispatchFollowsSetIsa) {
  std::mt19937_64 rng(14);
  const auto a = randn(37, rng), b = randn(37, rng);
  k::set_isa(k::Isa::scalar);
  EXPECT_EQ(k::active_isa(), k::Isa::scalar);
  EXPECT_EQ(k::dot(a, b), k::scalar::dot(a.data(), b.data(), a.size()));
  k::set_isa(k::Isa::avx2);
  EXPECT_EQ(k::active_isa(), k::Isa::avx2);
  EXPECT_EQ(k::dot(a, b), k::avx2::dot(a.data(), b.data(), a.size()));
}

TEST(Kernels, DispatchedShapeMismatchThrows) {
  std::vector<double> a(3), b(4);
  EXPECT_THROW(k::dot(a, b), esm2::ValidationError);
  EXPECT_THROW(k::axpy(1.0, a, b), esm2::ValidationError);
}

TEST(Kernels, IsaNames) {
  EXPECT_EQ(k::isa_name(k::Isa::scalar), "scalar");
  EXPECT_EQ(k::isa_name(k::Isa::avx2), "avx2");
  EXPECT_TRUE(k::isa_available(k::Isa::scalar));
}
