// SPDX-License-Identifier: Apache-2.0
#pragma once

// Losses, model variants (ESM2, ESMM, DNN, DNN-OS), the mini-batch training
// loop and checkpoint persistence.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "esm2/composition.hpp"
#include "esm2/datagen.hpp"
#include "esm2/error.hpp"
#include "esm2/features.hpp"
#include "esm2/network.hpp"

namespace esm2 {

enum class Variant { esm2, esmm, dnn, dnn_os };
enum class DActionChoice { scart, wish, both };

std::string_view to_string(Variant v);
std::string_view to_string(DActionChoice c);
std::string_view to_string(DenseMode m);
Variant parse_variant(std::string_view s);
DActionChoice parse_daction(std::string_view s);
DenseMode parse_dense_mode(std::string_view s);

struct LossWeights {
  double ctr = 1.0;
  double ctavr = 1.0;
  double ctcvr = 1.0;
};

struct TrainConfig {
  Variant variant = Variant::esm2;
  DActionChoice daction_composition = DActionChoice::both;
  std::size_t batch_size = 256;
  double learning_rate = 2e-3;
  std::size_t epochs = 3;
  double dropout = 0.1;
  // Widths after the encoder output; the last must be 1.
  std::vector<std::size_t> tower_dims{64, 32, 1};
  // One per sparse field (user, item, item category).
  std::vector<std::size_t> embedding_dims{16, 16, 16};
  DenseMode dense_mode = DenseMode::normalize;
  std::size_t dense_bins = 16;
  std::size_t dense_embedding_dim = 4;
  std::uint64_t seed = 1;
  std::size_t oversample_factor = 10;  // dnn_os only
  LossWeights loss_weights;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

/// Dataset-side shape a model is bound to.
struct FeatureLayout {
  std::vector<std::uint64_t> field_vocab_sizes;
  std::size_t dense_dim = 0;

  friend bool operator==(const FeatureLayout&, const FeatureLayout&) = default;
};

FeatureLayout layout_of(const Dataset& d);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;   // mean of per-batch objective values
  double loss_ctr = 0.0;     // mean per-sample term values
  double loss_ctavr = 0.0;
  double loss_ctcvr = 0.0;
  double loss_cvr = 0.0;     // dnn / dnn_os clicked-only CVR term
  std::uint64_t ctr_samples = 0;
  std::uint64_t ctavr_samples = 0;
  std::uint64_t ctcvr_samples = 0;
  std::uint64_t cvr_samples = 0;
  double val_cvr_auc = 0.0;  // NaN when undefined
  double val_ctcvr_auc = 0.0;
};

struct Model {
  TrainConfig config;
  FeatureLayout layout;
  std::vector<FeatureEncoder> encoders;
  std::vector<MlpTower> towers;
  std::vector<std::size_t> tower_encoder;  // encoder index per tower
  std::vector<AdamState> encoder_adam;
  std::vector<AdamState> tower_adam;
  std::vector<EpochRecord> history;

  /// y1..y4 for esm2; {y_ctr, y_cvr, 0, 0} for the two-tower variants.
  TowerOutputs tower_outputs(const BehaviorRecord& r) const;
  /// Composed probabilities; pctavr is 0 for the two-tower variants.
  ComposedProbs predict(const BehaviorRecord& r) const;
  std::size_t parameter_count() const;
};

/// Tower layout per variant: esm2 -> 4 towers on one encoder; esmm -> 2 on
/// one; dnn/dnn_os -> 2 towers with separate encoders.
Model init_model(const TrainConfig& config, const Dataset& train);
Model make_model_skeleton(const TrainConfig& config, const FeatureLayout& layout);

// ---- losses ---------------------------------------------------------------

inline constexpr double kProbClamp = 1e-7;

struct LogLoss {
  double loss = 0.0;
  double grad = 0.0;  // dL/dp at the clamped probability
};

LogLoss logloss(double p, int label);

struct LabelTriple {
  int c = 0;
  int a = 0;
  int b = 0;
};

struct BatchLoss {
  double total = 0.0;
  double ctr = 0.0;    // batch-mean term values (unweighted)
  double ctavr = 0.0;
  double ctcvr = 0.0;
  std::vector<ComposedProbs> grads;  // dL/d(composed) per sample
};

/// w_ctr*mean L_ctr(pctr; c) + w_ctavr*mean L_ctavr(pctavr; a)
///   + w_ctcvr*mean L_ctcvr(pctcvr; b) over every sample of the batch.
/// Throws DataError when a label triple breaks the funnel (a or b without c).
BatchLoss total_loss(std::span<const ComposedProbs> probs, std::span<const LabelTriple> labels,
                     const LossWeights& weights);

// ---- training -------------------------------------------------------------

/// Each b=1 record repeated `factor` times, negatives once, then shuffled.
std::vector<std::size_t> oversample(std::span<const BehaviorRecord> records,
                                    std::span<const std::size_t> indices, std::size_t factor,
                                    std::mt19937_64& rng);

/// Rebuilds a from the scart/wish flags; c and b are untouched.
Dataset recompose_daction(const Dataset& data, DActionChoice choice);

/// Gradients of every trainable block in a model, shaped like the model.
struct ModelGrads {
  std::vector<EncoderGrads> encoders;
  std::vector<TowerGrads> towers;

  explicit ModelGrads(const Model& m);
  void zero();
};

struct BatchStats {
  BatchLoss loss;
  double cvr = 0.0;  // dnn variants: clicked-only CVR term (batch mean)
  std::uint64_t ctr_samples = 0, ctavr_samples = 0, ctcvr_samples = 0, cvr_samples = 0;
};

/// Train-mode forward + backward of the variant objective over
/// records[indices], accumulated into `grads`. For dnn variants
/// `clicked_indices` feeds the CVR tower and `indices` the CTR tower; either
/// may be empty. `rng` draws dropout masks and may be null when dropout is 0.
BatchStats accumulate_gradients(const Model& model, std::span<const BehaviorRecord> records,
                                std::span<const std::size_t> indices,
                                std::span<const std::size_t> clicked_indices, ModelGrads& grads,
                                std::mt19937_64* rng);

/// Value of the variant objective with dropout disabled.
double objective(const Model& model, std::span<const BehaviorRecord> records,
                 std::span<const std::size_t> indices,
                 std::span<const std::size_t> clicked_indices = {});

/// Adam step on every block.
void apply_adam(Model& model, const ModelGrads& grads);
/// Adam step on the listed towers and the encoders they read; other blocks
/// and their optimizer state stay untouched.
void apply_adam(Model& model, const ModelGrads& grads, std::span<const std::size_t> towers);

class TrainingDivergedError : public NumericError {
 public:
  TrainingDivergedError(const std::string& what, std::shared_ptr<const Model> last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const Model& last_good() const { return *last_good_; }

 private:
  std::shared_ptr<const Model> last_good_;
};

struct TrainResult {
  Model final_model;
  Model best_model;  // by validation CVR AUC
  std::size_t best_epoch = 0;  // 0 = initialization
  std::uint64_t clicked_train_samples = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Applies config.daction_composition to both datasets, then trains.
TrainResult train(const Dataset& train_data, const Dataset& val_data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// ---- checkpoints ----------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(std::span<const std::uint8_t> bytes);

/// Throws ValidationError when the dataset does not fit the model's layout.
void check_compatible(const Model& model, const Dataset& data);

std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace esm2
