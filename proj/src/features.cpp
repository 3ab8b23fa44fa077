// SPDX-License-Identifier: Apache-2.0
#include "esm2/features.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "esm2/error.hpp"
#include "esm2/kernels.hpp"

namespace esm2 {

std::span<const double> EmbeddingTable::row(std::size_t bucket) const {
  return std::span<const double>(weights).subspan(bucket * dim, dim);
}

std::span<double> EmbeddingTable::row(std::size_t bucket) {
  return std::span<double>(weights).subspan(bucket * dim, dim);
}

EmbeddingTable make_table(std::size_t field_index, std::size_t vocab_size, std::size_t dim,
                          std::mt19937_64& rng) {
  if (vocab_size == 0 || dim == 0) throw ValidationError("embedding table needs vocab and dim >= 1");
  EmbeddingTable t{field_index, vocab_size, dim, std::vector<double>(vocab_size * dim)};
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& w : t.weights) w = dist(rng);
  return t;
}

DenseStats fit_dense_stats(const Dataset& train) {
  if (train.records.size() < 2) {
    throw ValidationError("fit_dense_stats: need at least 2 training records");
  }
  const std::size_t d = train.dense_dim;
  const double n = static_cast<double>(train.records.size());
  DenseStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (const auto& r : train.records) {
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r.dense[j];
  }
  for (auto& m : s.mean) m /= n;
  for (const auto& r : train.records) {
    for (std::size_t j = 0; j < d; ++j) {
      const double dev = r.dense[j] - s.mean[j];
      s.std[j] += dev * dev;
    }
  }
  for (auto& v : s.std) v = std::max(std::sqrt(v / n), kStdFloor);
  return s;
}

std::size_t FeatureEncoder::output_dim() const {
  std::size_t dim = 0;
  for (const auto& t : tables) dim += t.dim;
  if (dense_mode == DenseMode::normalize) return dim + dense_dim();
  for (const auto& t : dense_tables) dim += t.dim;
  return dim;
}

std::vector<std::span<double>> FeatureEncoder::parameters() {
  std::vector<std::span<double>> p;
  for (auto& t : tables) p.emplace_back(t.weights);
  for (auto& t : dense_tables) p.emplace_back(t.weights);
  return p;
}

std::vector<std::span<const double>> FeatureEncoder::parameters() const {
  std::vector<std::span<const double>> p;
  for (const auto& t : tables) p.emplace_back(t.weights);
  for (const auto& t : dense_tables) p.emplace_back(t.weights);
  return p;
}

namespace {

void check_spec(const EncoderSpec& spec) {
  if (spec.field_vocab_sizes.size() != spec.field_dims.size()) {
    throw ValidationError("encoder: one embedding dim per sparse field required (" +
                          std::to_string(spec.field_vocab_sizes.size()) + " fields, " +
                          std::to_string(spec.field_dims.size()) + " dims)");
  }
  if (spec.dense_mode == DenseMode::discretize &&
      (spec.dense_bins < 2 || spec.dense_embedding_dim == 0)) {
    throw ValidationError("encoder: discretize mode needs >= 2 bins and a positive dim");
  }
}

std::size_t dense_bucket(const std::vector<double>& edges, double x) {
  return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), x) -
                                  edges.begin());
}

}  // namespace

FeatureEncoder make_encoder_skeleton(const EncoderSpec& spec) {
  check_spec(spec);
  FeatureEncoder enc;
  enc.dense_mode = spec.dense_mode;
  for (std::size_t f = 0; f < spec.field_vocab_sizes.size(); ++f) {
    if (spec.field_vocab_sizes[f] == 0 || spec.field_dims[f] == 0) {
      throw ValidationError("encoder: field " + std::to_string(f) + " has zero vocab or dim");
    }
    enc.tables.push_back(EmbeddingTable{
        f, spec.field_vocab_sizes[f], spec.field_dims[f],
        std::vector<double>(spec.field_vocab_sizes[f] * spec.field_dims[f], 0.0)});
  }
  enc.dense_stats.mean.assign(spec.dense_dim, 0.0);
  enc.dense_stats.std.assign(spec.dense_dim, 1.0);
  if (spec.dense_mode == DenseMode::discretize) {
    enc.dense_edges.assign(spec.dense_dim, std::vector<double>(spec.dense_bins - 1, 0.0));
    for (std::size_t j = 0; j < spec.dense_dim; ++j) {
      enc.dense_tables.push_back(EmbeddingTable{
          j, spec.dense_bins, spec.dense_embedding_dim,
          std::vector<double>(spec.dense_bins * spec.dense_embedding_dim, 0.0)});
    }
  }
  return enc;
}

FeatureEncoder make_encoder(const EncoderSpec& spec, const Dataset& train, std::mt19937_64& rng) {
  check_spec(spec);
  if (train.dense_dim != spec.dense_dim) {
    throw ValidationError("encoder: dataset dense_dim differs from the encoder layout");
  }
  FeatureEncoder enc;
  enc.dense_mode = spec.dense_mode;
  for (std::size_t f = 0; f < spec.field_vocab_sizes.size(); ++f) {
    enc.tables.push_back(make_table(f, spec.field_vocab_sizes[f], spec.field_dims[f], rng));
  }
  enc.dense_stats = fit_dense_stats(train);
  if (spec.dense_mode == DenseMode::discretize) {
    std::vector<double> column(train.records.size());
    for (std::size_t j = 0; j < spec.dense_dim; ++j) {
      for (std::size_t i = 0; i < train.records.size(); ++i) column[i] = train.records[i].dense[j];
      std::sort(column.begin(), column.end());
      std::vector<double> edges(spec.dense_bins - 1);
      for (std::size_t k = 1; k < spec.dense_bins; ++k) {
        edges[k - 1] = column[k * (column.size() - 1) / spec.dense_bins];
      }
      enc.dense_edges.push_back(std::move(edges));
      enc.dense_tables.push_back(make_table(j, spec.dense_bins, spec.dense_embedding_dim, rng));
    }
  }
  return enc;
}

void encode(const FeatureEncoder& enc, const BehaviorRecord& r, std::span<double> out) {
  if (out.size() != enc.output_dim()) throw ValidationError("encode: output length mismatch");
  if (r.sparse_ids.size() != enc.tables.size()) {
    throw ValidationError("encode: record has " + std::to_string(r.sparse_ids.size()) +
                          " sparse fields, encoder expects " + std::to_string(enc.tables.size()));
  }
  if (r.dense.size() != enc.dense_dim()) throw ValidationError("encode: dense width mismatch");

  std::size_t off = 0;
  for (std::size_t f = 0; f < enc.tables.size(); ++f) {
    const auto& t = enc.tables[f];
    if (r.sparse_ids[f] >= t.vocab_size) {
      throw ValidationError("encode: bucket " + std::to_string(r.sparse_ids[f]) +
                            " out of range for field " + std::to_string(f) + " (vocab " +
                            std::to_string(t.vocab_size) + ")");
    }
    const auto row = t.row(r.sparse_ids[f]);
    std::copy(row.begin(), row.end(), out.begin() + off);
    off += t.dim;
  }
  if (enc.dense_mode == DenseMode::normalize) {
    for (std::size_t j = 0; j < enc.dense_dim(); ++j) {
      out[off + j] = std::tanh((r.dense[j] - enc.dense_stats.mean[j]) / enc.dense_stats.std[j]);
    }
    return;
  }
  for (std::size_t j = 0; j < enc.dense_tables.size(); ++j) {
    const auto& t = enc.dense_tables[j];
    const auto row = t.row(dense_bucket(enc.dense_edges[j], r.dense[j]));
    std::copy(row.begin(), row.end(), out.begin() + off);
    off += t.dim;
  }
}

std::vector<double> encode(const FeatureEncoder& enc, const BehaviorRecord& r) {
  std::vector<double> g(enc.output_dim());
  encode(enc, r, g);
  return g;
}

EncoderGrads::EncoderGrads(const FeatureEncoder& enc) {
  for (auto p : enc.parameters()) blocks.emplace_back(p.size(), 0.0);
}

void EncoderGrads::zero() {
  for (auto& b : blocks) std::fill(b.begin(), b.end(), 0.0);
}

std::vector<std::span<const double>> EncoderGrads::views() const {
  std::vector<std::span<const double>> v;
  for (const auto& b : blocks) v.emplace_back(b);
  return v;
}

void encode_backward(const FeatureEncoder& enc, const BehaviorRecord& r,
                     std::span<const double> grad_g, EncoderGrads& grads) {
  if (grad_g.size() != enc.output_dim()) {
    throw ValidationError("encode_backward: gradient length " + std::to_string(grad_g.size()) +
                          " != output_dim " + std::to_string(enc.output_dim()));
  }
  if (grads.blocks.size() != enc.tables.size() + enc.dense_tables.size()) {
    throw ValidationError("encode_backward: gradient buffers do not match encoder");
  }
  std::size_t off = 0;
  for (std::size_t f = 0; f < enc.tables.size(); ++f) {
    const auto& t = enc.tables[f];
    auto dst = std::span<double>(grads.blocks[f]).subspan(r.sparse_ids[f] * t.dim, t.dim);
    kernels::axpy(1.0, grad_g.subspan(off, t.dim), dst);
    off += t.dim;
  }
  if (enc.dense_mode == DenseMode::normalize) return;
  for (std::size_t j = 0; j < enc.dense_tables.size(); ++j) {
    const auto& t = enc.dense_tables[j];
    const auto bucket = dense_bucket(enc.dense_edges[j], r.dense[j]);
    auto dst =
        std::span<double>(grads.blocks[enc.tables.size() + j]).subspan(bucket * t.dim, t.dim);
    kernels::axpy(1.0, grad_g.subspan(off, t.dim), dst);
    off += t.dim;
  }
}

}  // namespace esm2
