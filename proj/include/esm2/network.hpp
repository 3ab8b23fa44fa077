// SPDX-License-Identifier: Apache-2.0
#pragma once

// Decomposed prediction towers: ReLU MLPs with inverted dropout and a single
// sigmoid output, hand-written backward pass and Adam.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace esm2 {

inline constexpr double kLogitClamp = 30.0;

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out x in, row-major
  std::vector<double> bias;    // out
};

struct MlpTower {
  std::string name;  // y1 (impression->click), y2 (click->DAction), ...
  std::vector<DenseLayer> layers;
  double dropout = 0.0;

  /// [input, hidden..., 1]
  std::vector<std::size_t> layer_dims() const;
  std::size_t input_dim() const { return layers.front().in; }
  std::size_t parameter_count() const;
  /// weight, bias per layer, in layer order.
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;
};

/// He-normal weights, zero biases. `layer_dims` includes the input width and
/// must end in 1.
MlpTower init_tower(const std::vector<std::size_t>& layer_dims, double dropout_ratio,
                    std::mt19937_64& rng, std::string name = {});

/// Zero-initialised tower of the given shape.
MlpTower make_tower_skeleton(const std::vector<std::size_t>& layer_dims, double dropout_ratio,
                             std::string name = {});

enum class Mode { train, infer };

struct ForwardCache {
  Mode mode = Mode::infer;
  std::vector<std::vector<double>> inputs;  // input seen by each layer
  std::vector<std::vector<double>> pre;     // pre-activation of each layer
  std::vector<std::vector<double>> masks;   // hidden layers; 0 or 1/(1-p)
  double logit = 0.0;
  double y = 0.0;
};

/// y = sigmoid(clamp(logit, +-30)). In train mode with dropout > 0, `rng`
/// draws the masks; it may be null otherwise.
double forward(const MlpTower& tower, std::span<const double> g, Mode mode,
               std::mt19937_64* rng, ForwardCache& cache);
double predict(const MlpTower& tower, std::span<const double> g);

struct TowerGrads {
  std::vector<std::vector<double>> blocks;  // parallel to MlpTower::parameters()

  explicit TowerGrads(const MlpTower& tower);
  void zero();
  std::vector<std::span<const double>> views() const;
};

/// Accumulates dL/dtheta into `grads` and returns dL/dg. Requires a
/// train-mode cache.
std::vector<double> backward(const MlpTower& tower, const ForwardCache& cache, double dL_dy,
                             TowerGrads& grads);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam_state(std::span<const std::span<double>> params);
AdamState make_adam_state(std::span<const std::span<const double>> params);

/// One bias-corrected Adam step over parallel parameter/gradient blocks.
/// Throws NumericError naming the block and index of a non-finite gradient.
void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state,
               double learning_rate);

}  // namespace esm2
