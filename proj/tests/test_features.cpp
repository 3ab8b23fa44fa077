// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "esm2/datagen.hpp"
#include "esm2/error.hpp"
#include "esm2/features.hpp"
#include "test_support.hpp"

namespace esm2 {
namespace {

Dataset dense_column(const std::vector<double>& xs) {
  Dataset d;
  d.dense_dim = 1;
  d.field_vocab_sizes = {10};
  for (double x : xs) {
    BehaviorRecord r;
    r.sparse_ids = {0};
    r.dense = {x};
    d.records.push_back(r);
  }
  return d;
}

EncoderSpec spec_for(const Dataset& d, std::vector<std::size_t> dims) {
  EncoderSpec s;
  s.field_vocab_sizes = d.field_vocab_sizes;
  s.field_dims = std::move(dims);
  s.dense_dim = d.dense_dim;
  return s;
}

TEST(DenseStats, ConstantColumnFloorsStd) {
  const auto s = fit_dense_stats(dense_column({5.0, 5.0, 5.0, 5.0}));
  EXPECT_DOUBLE_EQ(s.mean[0], 5.0);
  EXPECT_EQ(s.std[0], kStdFloor);
}

TEST(DenseStats, PopulationConvention) {
  const auto s = fit_dense_stats(dense_column({0.0, 2.0}));
  EXPECT_DOUBLE_EQ(s.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(s.std[0], 1.0);
}

TEST(DenseStats, NeedsTwoRecords) {
  EXPECT_THROW(fit_dense_stats(dense_column({1.0})), ValidationError);
  EXPECT_THROW(fit_dense_stats(dense_column({})), ValidationError);
}

TEST(DenseStats, MatchesTwoPassOracle) {
  const auto splits = generate_splits(testing::small_generator(12500, 3));
  const Dataset& d = splits.train;
  ASSERT_EQ(d.records.size(), 10000u);
  const auto s = fit_dense_stats(d);
  for (std::size_t j = 0; j < d.dense_dim; ++j) {
    long double sum = 0.0L;
    for (const auto& r : d.records) sum += r.dense[j];
    const long double mean = sum / d.records.size();
    long double ss = 0.0L;
    for (const auto& r : d.records) ss += (r.dense[j] - mean) * (r.dense[j] - mean);
    const double sd = std::sqrt(static_cast<double>(ss / d.records.size()));
    EXPECT_NEAR(s.mean[j], static_cast<double>(mean), 1e-12);
    EXPECT_NEAR(s.std[j], sd, 1e-12);
  }
}

class EncoderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto splits = generate_splits(testing::small_generator(2000, 5));
    data_ = splits.train;
    std::mt19937_64 rng(17);
    enc_ = make_encoder(spec_for(data_, {3, 5, 2}), data_, rng);
  }
  Dataset data_;
  FeatureEncoder enc_;
};

TEST_F(EncoderTest, StructureOneTablePerField) {
  ASSERT_EQ(enc_.tables.size(), kNumSparseFields);
  for (std::size_t f = 0; f < kNumSparseFields; ++f) {
    EXPECT_EQ(enc_.tables[f].field_index, f);
    EXPECT_EQ(enc_.tables[f].vocab_size, data_.field_vocab_sizes[f]);
    EXPECT_EQ(enc_.tables[f].weights.size(), enc_.tables[f].vocab_size * enc_.tables[f].dim);
  }
  EXPECT_EQ(enc_.output_dim(), 3u + 5u + 2u + data_.dense_dim);
}

TEST_F(EncoderTest, InitWithinUniformBound) {
  for (const auto& t : enc_.tables) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.dim));
    for (double w : t.weights) {
      EXPECT_LE(std::abs(w), bound);
      EXPECT_TRUE(std::isfinite(w));
    }
  }
}

TEST_F(EncoderTest, SparseSpanIsLookedUpRow) {
  BehaviorRecord r = data_.records[0];
  r.sparse_ids[0] = 3;
  const auto g = encode(enc_, r);
  const auto row = enc_.tables[0].row(3);
  for (std::size_t k = 0; k < row.size(); ++k) EXPECT_EQ(g[k], row[k]);
}

TEST_F(EncoderTest, MatchesOneHotTimesMatrix) {
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& r = data_.records[i];
    const auto g = encode(enc_, r);
    std::size_t off = 0;
    for (std::size_t f = 0; f < enc_.tables.size(); ++f) {
      const auto& t = enc_.tables[f];
      std::vector<double> onehot(t.vocab_size, 0.0);
      onehot[r.sparse_ids[f]] = 1.0;
      for (std::size_t k = 0; k < t.dim; ++k) {
        double acc = 0.0;
        for (std::size_t v = 0; v < t.vocab_size; ++v) acc += onehot[v] * t.weights[v * t.dim + k];
        EXPECT_NEAR(g[off + k], acc, 1e-12);
      }
      off += t.dim;
    }
  }
}

TEST_F(EncoderTest, DenseNormalizationClosedForm) {
  BehaviorRecord r = data_.records[0];
  const std::size_t off = enc_.output_dim() - data_.dense_dim;
  for (std::size_t j = 0; j < data_.dense_dim; ++j) r.dense[j] = enc_.dense_stats.mean[j];
  auto g = encode(enc_, r);
  for (std::size_t j = 0; j < data_.dense_dim; ++j) EXPECT_EQ(g[off + j], 0.0);

  for (std::size_t j = 0; j < data_.dense_dim; ++j) {
    r.dense[j] = enc_.dense_stats.mean[j] + enc_.dense_stats.std[j];
  }
  g = encode(enc_, r);
  for (std::size_t j = 0; j < data_.dense_dim; ++j) {
    EXPECT_NEAR(g[off + j], 0.7615941559557649, 1e-12);
  }
}

TEST_F(EncoderTest, DenseOutputBounded) {
  const std::size_t off = enc_.output_dim() - data_.dense_dim;
  for (const auto& r : data_.records) {
    const auto g = encode(enc_, r);
    for (std::size_t j = off; j < g.size(); ++j) {
      EXPECT_GT(g[j], -1.0);
      EXPECT_LT(g[j], 1.0);
    }
  }
}

TEST_F(EncoderTest, OutOfRangeBucketThrows) {
  BehaviorRecord r = data_.records[0];
  r.sparse_ids[1] = static_cast<std::uint32_t>(data_.field_vocab_sizes[1]);
  EXPECT_THROW(encode(enc_, r), ValidationError);
  r = data_.records[0];
  r.dense.pop_back();
  EXPECT_THROW(encode(enc_, r), ValidationError);
}

TEST_F(EncoderTest, ZeroGradientLeavesRowsUntouched) {
  EncoderGrads grads(enc_);
  const std::vector<double> zero(enc_.output_dim(), 0.0);
  encode_backward(enc_, data_.records[0], zero, grads);
  for (const auto& b : grads.blocks) {
    for (double v : b) EXPECT_EQ(v, 0.0);
  }
}

TEST_F(EncoderTest, GradientRoutedToLookedUpRowOnly) {
  const auto& r = data_.records[1];
  EncoderGrads grads(enc_);
  std::vector<double> gg(enc_.output_dim(), 0.0);
  for (std::size_t k = 0; k < enc_.tables[0].dim; ++k) gg[k] = 1.0 + static_cast<double>(k);
  encode_backward(enc_, r, gg, grads);
  for (std::size_t b = 0; b < grads.blocks.size(); ++b) {
    const std::size_t dim = enc_.tables[b].dim;
    for (std::size_t i = 0; i < grads.blocks[b].size(); ++i) {
      const bool hit = b == 0 && i / dim == r.sparse_ids[0];
      EXPECT_EQ(grads.blocks[b][i], hit ? 1.0 + static_cast<double>(i % dim) : 0.0);
    }
  }
}

TEST_F(EncoderTest, BackwardWrongLengthThrows) {
  EncoderGrads grads(enc_);
  const std::vector<double> gg(enc_.output_dim() + 1, 0.0);
  EXPECT_THROW(encode_backward(enc_, data_.records[0], gg, grads), ValidationError);
}

TEST_F(EncoderTest, BackwardMatchesFiniteDifference) {
  // Probe loss L = sum_k c_k * g_k^2 / 2 so dL/dg = c * g.
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto& r = data_.records[2];
  std::vector<double> c(enc_.output_dim());
  for (auto& x : c) x = u(rng);
  auto probe = [&](const FeatureEncoder& e) {
    const auto g = encode(e, r);
    double l = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) l += 0.5 * c[k] * g[k] * g[k];
    return l;
  };
  const auto g = encode(enc_, r);
  std::vector<double> dg(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) dg[k] = c[k] * g[k];
  EncoderGrads grads(enc_);
  encode_backward(enc_, r, dg, grads);

  constexpr double h = 1e-6;
  for (std::size_t f = 0; f < enc_.tables.size(); ++f) {
    const std::size_t dim = enc_.tables[f].dim;
    for (std::size_t k = 0; k < dim; ++k) {
      const std::size_t idx = r.sparse_ids[f] * dim + k;
      FeatureEncoder plus = enc_, minus = enc_;
      plus.tables[f].weights[idx] += h;
      minus.tables[f].weights[idx] -= h;
      const double fd = (probe(plus) - probe(minus)) / (2.0 * h);
      EXPECT_LE(testing::rel_err(fd, grads.blocks[f][idx]), 1e-6) << f << ":" << k;
    }
  }
}

TEST(Encoder, DiscretizeModeShapesAndRouting) {
  const auto splits = generate_splits(testing::small_generator(2000, 6));
  auto spec = spec_for(splits.train, {2, 2, 2});
  spec.dense_mode = DenseMode::discretize;
  spec.dense_bins = 8;
  spec.dense_embedding_dim = 3;
  std::mt19937_64 rng(1);
  const auto enc = make_encoder(spec, splits.train, rng);
  EXPECT_EQ(enc.output_dim(), 6u + 3u * splits.train.dense_dim);
  ASSERT_EQ(enc.dense_tables.size(), splits.train.dense_dim);
  EXPECT_EQ(enc.parameters().size(), 3u + splits.train.dense_dim);

  const auto& r = splits.train.records[0];
  EncoderGrads grads(enc);
  const std::vector<double> ones(enc.output_dim(), 1.0);
  encode_backward(enc, r, ones, grads);
  for (std::size_t b = 0; b < grads.blocks.size(); ++b) {
    double total = 0.0;
    for (double v : grads.blocks[b]) total += v;
    const double dim = b < 3 ? 2.0 : 3.0;
    EXPECT_DOUBLE_EQ(total, dim);
  }
}

TEST(Encoder, SkeletonHasShapesAndZeros) {
  EncoderSpec spec;
  spec.field_vocab_sizes = {4, 6};
  spec.field_dims = {2, 3};
  spec.dense_dim = 2;
  const auto enc = make_encoder_skeleton(spec);
  ASSERT_EQ(enc.tables.size(), 2u);
  EXPECT_EQ(enc.tables[1].weights.size(), 18u);
  for (double w : enc.tables[1].weights) EXPECT_EQ(w, 0.0);
}

TEST(Encoder, SpecMismatchRejected) {
  EncoderSpec spec;
  spec.field_vocab_sizes = {4, 6};
  spec.field_dims = {2};
  EXPECT_THROW(make_encoder_skeleton(spec), ValidationError);
}

}  // namespace
}  // namespace esm2
