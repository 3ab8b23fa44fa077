// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic impression logs over the behavior graph
//   impression -> click -> {DAction | OAction} -> purchase
// with DAction = SCart OR Wish, plus dataset I/O and validation.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace esm2 {

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct GeneratorConfig {
  std::uint64_t num_users = 2000;
  std::uint64_t num_items = 1000;
  std::uint64_t num_impressions = 200000;
  std::uint64_t latent_dim = 8;
  // 20,637,192 / 326,325,042 clicks per impression and
  // 2,501,776 / 20,637,192 DActions per click.
  double target_click_rate = 0.0632;
  double target_daction_given_click = 0.1212;
  // Chosen so that P(purchase | click) = 0.1212 * 0.06 + 0.8788 * 0.0042
  // ~= 0.0110 (226,918 / 20,637,192).
  double target_buy_given_daction = 0.06;
  double target_buy_given_oaction = 0.0042;
  double scart_share_of_daction = 0.7;
  double feature_noise_sigma = 0.3;
  std::uint64_t seed = 1;
  SplitFractions split;

  // Feature layout.
  std::uint64_t user_buckets = 4096;
  std::uint64_t item_buckets = 2048;
  std::uint64_t category_buckets = 64;
  std::uint64_t dense_dim = 16;
  double user_zipf_exponent = 0.8;
  std::uint64_t shards = 1;

  /// Throws ValidationError on any violated invariant.
  void validate() const;
};

inline constexpr std::size_t kNumSparseFields = 3;  // user, item, item category

struct BehaviorRecord {
  std::uint64_t user_id = 0;
  std::uint64_t item_id = 0;
  std::vector<std::uint32_t> sparse_ids;  // bucket per field, indexed by field
  std::vector<double> dense;
  // Labels. The impression label v is always 1 and not stored.
  std::uint8_t c = 0;
  std::uint8_t scart = 0;
  std::uint8_t wish = 0;
  std::uint8_t a = 0;  // DAction, derived from scart/wish
  std::uint8_t b = 0;

  friend bool operator==(const BehaviorRecord&, const BehaviorRecord&) = default;
};

/// Checks the label graph: binary labels, nothing downstream of a missing
/// click, a == (scart | wish). Throws DataError carrying `line`.
void validate_labels(const BehaviorRecord& r, std::size_t line = 0);

struct Dataset {
  std::vector<BehaviorRecord> records;
  std::vector<std::uint64_t> field_vocab_sizes;
  std::size_t dense_dim = 0;

  /// Full structural + label validation of every record.
  void validate() const;
};

/// Empirical edge rates of a record set.
struct RateStats {
  std::uint64_t impressions = 0;
  std::uint64_t clicks = 0;
  std::uint64_t scarts = 0;
  std::uint64_t wishes = 0;
  std::uint64_t dactions = 0;
  std::uint64_t purchases = 0;
  std::uint64_t purchases_after_daction = 0;

  double click_rate() const;
  double daction_given_click() const;
  double purchase_given_click() const;
  double purchase_given_daction() const;
  double purchase_given_oaction() const;
  double scart_given_click() const;
  double wish_given_click() const;
};

RateStats compute_rates(std::span<const BehaviorRecord> records);

/// Bias b such that mean(sigmoid(logit + b)) == target_rate, by bisection on
/// [-30, 30]. Throws CalibrationError when the target lies outside what the
/// bracket can reach.
double calibrate_bias(std::span<const double> logits, double target_rate);

/// Weighted form: sum(w * sigmoid(logit + b)) / sum(w) == target_rate.
double calibrate_bias(std::span<const double> logits,
                      std::span<const double> weights, double target_rate);

struct EdgeBiases {
  double click = 0.0;
  double scart = 0.0;
  double wish = 0.0;
  double buy_daction = 0.0;
  double buy_oaction = 0.0;
};

/// Bias-free logits of the five edges for one (user, item) pair.
struct EdgeLogits {
  double click = 0.0;
  double scart = 0.0;
  double wish = 0.0;
  double buy_daction = 0.0;
  double buy_oaction = 0.0;
};

struct Labels {
  std::uint8_t c = 0, scart = 0, wish = 0, a = 0, b = 0;
};

/// Hierarchical Bernoulli sampling down the behavior graph. Children of a
/// zero parent are forced to zero.
Labels sample_labels(std::mt19937_64& rng, const EdgeLogits& logits,
                     const EdgeBiases& biases);

/// splitmix64 finalizer; bucket = mix(id ^ salt) % vocab.
std::uint64_t mix64(std::uint64_t x);

/// The latent world behind a generated log: user/item factors, per-edge
/// interaction weights, the dense-feature projection and calibrated biases.
class BehaviorModel {
 public:
  explicit BehaviorModel(const GeneratorConfig& config);

  const GeneratorConfig& config() const { return config_; }
  const EdgeBiases& biases() const { return biases_; }
  std::span<const double> user_latent(std::uint64_t user) const;
  std::span<const double> item_latent(std::uint64_t item) const;
  EdgeLogits edge_logits(std::span<const double> user_latent,
                         std::span<const double> item_latent) const;

  /// One impression of (user, item) with features and sampled labels.
  BehaviorRecord sample_record(std::mt19937_64& rng, std::uint64_t user,
                               std::uint64_t item) const;

  /// Draws (user, item) from the impression distribution, then sample_record.
  BehaviorRecord sample_impression(std::mt19937_64& rng) const;

  std::vector<std::uint64_t> field_vocab_sizes() const;

 private:
  struct EdgeWeights {
    std::vector<double> interaction;  // weights on u_k * t_k
    std::vector<double> user;
    std::vector<double> item;
    double scale = 1.0;
  };
  double edge_score(const EdgeWeights& w, std::span<const double> u,
                    std::span<const double> t) const;
  void calibrate();
  std::uint64_t draw_user(std::mt19937_64& rng) const;

  GeneratorConfig config_;
  std::vector<double> user_latents_;
  std::vector<double> item_latents_;
  std::vector<std::uint32_t> item_category_;
  std::array<EdgeWeights, 5> edges_;
  std::vector<double> projection_;  // dense_dim x 3*latent_dim
  std::vector<double> user_cdf_;  // cumulative impression weights
  EdgeBiases biases_;
};

struct GeneratedSplits {
  Dataset train;
  Dataset val;
  Dataset test;
  EdgeBiases biases;
};

/// Record counts per split by largest-remainder rounding.
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& f);

/// Deterministic in (config.seed, config.shards).
GeneratedSplits generate_splits(const GeneratorConfig& config);

struct GenerateResult {
  std::filesystem::path train_path, val_path, test_path, stats_path;
  RateStats overall;
  EdgeBiases biases;
};

/// Writes train.tsv / val.tsv / test.tsv (+ .meta sidecars) and stats.txt
/// into `out_dir`, creating it when missing.
GenerateResult generate_dataset(const GeneratorConfig& config,
                                const std::filesystem::path& out_dir);

void write_dataset(const Dataset& data, const std::filesystem::path& path,
                   const std::string& extra_meta = {});

/// Parses and validates a dataset file. Vocab sizes and dense_dim come from
/// the `.meta` sidecar when present and are inferred otherwise.
Dataset load_dataset(const std::filesystem::path& path);

std::string dataset_header(std::size_t num_fields, std::size_t dense_dim);

/// Canonical key = value text for a generator config.
std::string to_text(const GeneratorConfig& config);

}  // namespace esm2
