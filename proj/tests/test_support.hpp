// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "esm2/datagen.hpp"
#include "esm2/training.hpp"

namespace esm2::testing {

/// Small vocabularies keep unit tests fast.
inline GeneratorConfig small_generator(std::uint64_t impressions, std::uint64_t seed = 1) {
  GeneratorConfig g;
  g.num_users = 200;
  g.num_items = 100;
  g.num_impressions = impressions;
  g.user_buckets = 64;
  g.item_buckets = 32;
  g.category_buckets = 8;
  g.dense_dim = 4;
  g.seed = seed;
  return g;
}

/// Every record of all three splits in one dataset.
inline Dataset merged(const GeneratedSplits& s) {
  Dataset d = s.train;
  d.records.insert(d.records.end(), s.val.records.begin(), s.val.records.end());
  d.records.insert(d.records.end(), s.test.records.begin(), s.test.records.end());
  return d;
}

inline TrainConfig small_train_config(Variant v) {
  TrainConfig c;
  c.variant = v;
  c.tower_dims = {8, 4, 1};
  c.embedding_dims = {4, 4, 4};
  c.batch_size = 32;
  c.epochs = 1;
  c.dropout = 0.0;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("esm2_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

struct GradCheck {
  std::size_t probed = 0;
  double max_rel = 0.0;
  std::vector<std::size_t> probed_per_tower;
  std::size_t probed_encoder = 0;
};

/// Central finite differences of objective() against accumulate_gradients()
/// on records[indices]. Samples `per_block` entries from every tower block and
/// from the encoder rows the batch looks up. Pairs where both sides are below
/// 1e-10 are skipped.
inline GradCheck gradient_check(const Model& model, std::span<const BehaviorRecord> records,
                                std::span<const std::size_t> indices,
                                std::span<const std::size_t> clicked, std::size_t per_block,
                                std::uint64_t seed, double h = 1e-5) {
  ModelGrads grads(model);
  accumulate_gradients(model, records, indices, clicked, grads, nullptr);
  std::mt19937_64 rng(seed);
  GradCheck out;
  out.probed_per_tower.assign(model.towers.size(), 0);

  auto probe = [&](auto&& param_of, double analytic) {
    Model plus = model, minus = model;
    param_of(plus) += h;
    param_of(minus) -= h;
    const double fd = (objective(plus, records, indices, clicked) -
                       objective(minus, records, indices, clicked)) /
                      (2.0 * h);
    if (std::abs(fd) < 1e-10 && std::abs(analytic) < 1e-10) return false;
    out.max_rel = std::max(out.max_rel, rel_err(fd, analytic));
    ++out.probed;
    return true;
  };

  for (std::size_t k = 0; k < model.towers.size(); ++k) {
    const auto blocks = model.towers[k].parameters();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      std::uniform_int_distribution<std::size_t> pick(0, blocks[b].size() - 1);
      for (std::size_t n = 0; n < per_block; ++n) {
        const std::size_t i = pick(rng);
        auto ref = [&](Model& m) -> double& { return m.towers[k].parameters()[b][i]; };
        if (probe(ref, grads.towers[k].blocks[b][i])) ++out.probed_per_tower[k];
      }
    }
  }
  for (std::size_t e = 0; e < model.encoders.size(); ++e) {
    const auto& enc = model.encoders[e];
    for (std::size_t f = 0; f < enc.tables.size(); ++f) {
      std::set<std::size_t> rows;
      for (auto i : indices) rows.insert(records[i].sparse_ids[f]);
      for (auto i : clicked) rows.insert(records[i].sparse_ids[f]);
      std::vector<std::size_t> hit(rows.begin(), rows.end());
      std::uniform_int_distribution<std::size_t> pick_row(0, hit.size() - 1);
      std::uniform_int_distribution<std::size_t> pick_col(0, enc.tables[f].dim - 1);
      for (std::size_t n = 0; n < per_block; ++n) {
        const std::size_t idx = hit[pick_row(rng)] * enc.tables[f].dim + pick_col(rng);
        auto ref = [&](Model& m) -> double& { return m.encoders[e].tables[f].weights[idx]; };
        if (probe(ref, grads.encoders[e].blocks[f][idx])) ++out.probed_encoder;
      }
    }
  }
  return out;
}

}  // namespace esm2::testing
