// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shared embedding module: sparse ID lookups plus normalized/squashed dense
// features, concatenated into the input vector every tower consumes.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "esm2/datagen.hpp"

namespace esm2 {

struct EmbeddingTable {
  std::size_t field_index = 0;
  std::size_t vocab_size = 0;
  std::size_t dim = 0;
  std::vector<double> weights;  // vocab_size x dim, row-major

  std::span<const double> row(std::size_t bucket) const;
  std::span<double> row(std::size_t bucket);
};

/// Embedding rows drawn uniformly from [-1/sqrt(dim), 1/sqrt(dim)].
EmbeddingTable make_table(std::size_t field_index, std::size_t vocab_size, std::size_t dim,
                          std::mt19937_64& rng);

inline constexpr double kStdFloor = 1e-6;

struct DenseStats {
  std::vector<double> mean;
  std::vector<double> std;  // population convention, floored at kStdFloor
};

/// Per-dimension mean/std over the training split. Needs >= 2 records.
DenseStats fit_dense_stats(const Dataset& train);

enum class DenseMode { normalize, discretize };

struct EncoderSpec {
  std::vector<std::uint64_t> field_vocab_sizes;
  std::vector<std::size_t> field_dims;
  std::size_t dense_dim = 0;
  DenseMode dense_mode = DenseMode::normalize;
  std::size_t dense_bins = 16;           // discretize only
  std::size_t dense_embedding_dim = 4;   // discretize only
};

struct FeatureEncoder {
  std::vector<EmbeddingTable> tables;  // exactly one per sparse field
  DenseStats dense_stats;
  DenseMode dense_mode = DenseMode::normalize;
  // Discretize mode: quantile bin edges and a table per dense feature.
  std::vector<std::vector<double>> dense_edges;
  std::vector<EmbeddingTable> dense_tables;

  std::size_t dense_dim() const { return dense_stats.mean.size(); }
  std::size_t output_dim() const;
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;
};

/// Fresh encoder with fitted dense statistics (and bin edges) from `train`.
FeatureEncoder make_encoder(const EncoderSpec& spec, const Dataset& train, std::mt19937_64& rng);

/// Same shapes, zero weights, empty statistics; filled by checkpoint loading.
FeatureEncoder make_encoder_skeleton(const EncoderSpec& spec);

/// Writes g into `out` (length output_dim). Throws on out-of-range buckets.
void encode(const FeatureEncoder& enc, const BehaviorRecord& r, std::span<double> out);
std::vector<double> encode(const FeatureEncoder& enc, const BehaviorRecord& r);

/// Gradient buffers shaped like the encoder's trainable tables.
struct EncoderGrads {
  std::vector<std::vector<double>> blocks;  // parallel to FeatureEncoder::parameters()

  explicit EncoderGrads(const FeatureEncoder& enc);
  void zero();
  std::vector<std::span<const double>> views() const;
};

/// Adds dL/dg into the rows looked up for `r`; no other row is touched and
/// the normalized dense path has no trainable parameters.
void encode_backward(const FeatureEncoder& enc, const BehaviorRecord& r,
                     std::span<const double> grad_g, EncoderGrads& grads);

}  // namespace esm2
