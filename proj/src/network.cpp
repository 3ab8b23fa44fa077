// SPDX-License-Identifier: Apache-2.0
#include "esm2/network.hpp"

#include <algorithm>
#include <cmath>

#include "esm2/error.hpp"
#include "esm2/kernels.hpp"
#include "esm2/text.hpp"

namespace esm2 {

std::vector<std::size_t> MlpTower::layer_dims() const {
  std::vector<std::size_t> dims;
  if (layers.empty()) return dims;
  dims.push_back(layers.front().in);
  for (const auto& l : layers) dims.push_back(l.out);
  return dims;
}

std::size_t MlpTower::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<std::span<double>> MlpTower::parameters() {
  std::vector<std::span<double>> p;
  for (auto& l : layers) {
    p.emplace_back(l.weight);
    p.emplace_back(l.bias);
  }
  return p;
}

std::vector<std::span<const double>> MlpTower::parameters() const {
  std::vector<std::span<const double>> p;
  for (const auto& l : layers) {
    p.emplace_back(l.weight);
    p.emplace_back(l.bias);
  }
  return p;
}

namespace {

void check_dims(const std::vector<std::size_t>& dims, double dropout) {
  if (dims.size() < 2) throw ValidationError("tower needs an input width and at least one layer");
  if (dims.back() != 1) throw ValidationError("tower output width must be 1 (single logit)");
  for (auto d : dims) {
    if (d == 0) throw ValidationError("tower layer widths must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout ratio must lie in [0, 1)");
}

}  // namespace

MlpTower make_tower_skeleton(const std::vector<std::size_t>& dims, double dropout,
                             std::string name) {
  check_dims(dims, dropout);
  MlpTower t;
  t.name = std::move(name);
  t.dropout = dropout;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    t.layers.push_back(DenseLayer{dims[i], dims[i + 1],
                                  std::vector<double>(dims[i] * dims[i + 1], 0.0),
                                  std::vector<double>(dims[i + 1], 0.0)});
  }
  return t;
}

MlpTower init_tower(const std::vector<std::size_t>& dims, double dropout, std::mt19937_64& rng,
                    std::string name) {
  MlpTower t = make_tower_skeleton(dims, dropout, std::move(name));
  for (auto& l : t.layers) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(l.in)));
    for (auto& w : l.weight) w = dist(rng);
  }
  return t;
}

double forward(const MlpTower& tower, std::span<const double> g, Mode mode, std::mt19937_64* rng,
               ForwardCache& cache) {
  if (tower.layers.empty()) throw ValidationError("forward: empty tower");
  if (g.size() != tower.input_dim()) {
    throw ValidationError("forward: input length " + std::to_string(g.size()) +
                          " != tower input " + std::to_string(tower.input_dim()));
  }
  for (double x : g) {
    if (!std::isfinite(x)) throw NumericError("forward: non-finite input to tower " + tower.name);
  }
  const bool drop = mode == Mode::train && tower.dropout > 0.0;
  if (drop && rng == nullptr) throw ValidationError("forward: dropout needs an rng in train mode");

  const std::size_t n = tower.layers.size();
  cache.mode = mode;
  cache.inputs.resize(n);
  cache.pre.resize(n);
  cache.masks.resize(n - 1);
  cache.inputs[0].assign(g.begin(), g.end());

  const double keep_scale = 1.0 / (1.0 - tower.dropout);
  std::bernoulli_distribution keep(1.0 - tower.dropout);
  for (std::size_t li = 0; li < n; ++li) {
    const auto& layer = tower.layers[li];
    const auto& x = cache.inputs[li];
    auto& z = cache.pre[li];
    z.resize(layer.out);
    for (std::size_t j = 0; j < layer.out; ++j) {
      z[j] = layer.bias[j] +
             kernels::dot(std::span<const double>(layer.weight).subspan(j * layer.in, layer.in), x);
    }
    if (li + 1 == n) break;
    auto& mask = cache.masks[li];
    mask.assign(layer.out, 1.0);
    if (drop) {
      for (auto& m : mask) m = keep(*rng) ? keep_scale : 0.0;
    }
    auto& h = cache.inputs[li + 1];
    h.resize(layer.out);
    for (std::size_t j = 0; j < layer.out; ++j) h[j] = std::max(z[j], 0.0) * mask[j];
  }
  cache.logit = cache.pre.back()[0];
  if (std::isnan(cache.logit)) throw NumericError("forward: NaN logit in tower " + tower.name);
  cache.y = sigmoid(std::clamp(cache.logit, -kLogitClamp, kLogitClamp));
  return cache.y;
}

double predict(const MlpTower& tower, std::span<const double> g) {
  ForwardCache cache;
  return forward(tower, g, Mode::infer, nullptr, cache);
}

TowerGrads::TowerGrads(const MlpTower& tower) {
  for (auto p : tower.parameters()) blocks.emplace_back(p.size(), 0.0);
}

void TowerGrads::zero() {
  for (auto& b : blocks) std::fill(b.begin(), b.end(), 0.0);
}

std::vector<std::span<const double>> TowerGrads::views() const {
  std::vector<std::span<const double>> v;
  for (const auto& b : blocks) v.emplace_back(b);
  return v;
}

std::vector<double> backward(const MlpTower& tower, const ForwardCache& cache, double dL_dy,
                             TowerGrads& grads) {
  if (cache.mode != Mode::train) throw ValidationError("backward: cache was produced in infer mode");
  const std::size_t n = tower.layers.size();
  if (cache.pre.size() != n || grads.blocks.size() != 2 * n) {
    throw ValidationError("backward: cache or gradient buffers do not match tower " + tower.name);
  }
  // Outside the clamp the output is flat in the logit.
  const bool clamped = std::abs(cache.logit) > kLogitClamp;
  std::vector<double> delta{clamped ? 0.0 : dL_dy * cache.y * (1.0 - cache.y)};
  std::vector<double> upstream;

  for (std::size_t li = n; li-- > 0;) {
    const auto& layer = tower.layers[li];
    const auto& x = cache.inputs[li];
    auto& gw = grads.blocks[2 * li];
    auto& gb = grads.blocks[2 * li + 1];
    upstream.assign(layer.in, 0.0);
    for (std::size_t j = 0; j < layer.out; ++j) {
      const double d = delta[j];
      if (d == 0.0) continue;
      gb[j] += d;
      kernels::axpy(d, x, std::span<double>(gw).subspan(j * layer.in, layer.in));
      kernels::axpy(d, std::span<const double>(layer.weight).subspan(j * layer.in, layer.in),
                    upstream);
    }
    if (li == 0) break;
    // Through dropout and ReLU of the previous layer.
    const auto& z = cache.pre[li - 1];
    const auto& mask = cache.masks[li - 1];
    delta.resize(layer.in);
    for (std::size_t k = 0; k < layer.in; ++k) {
      delta[k] = z[k] > 0.0 ? upstream[k] * mask[k] : 0.0;
    }
  }
  return upstream;
}

namespace {

template <typename Span>
AdamState adam_from(std::span<const Span> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

}  // namespace

AdamState make_adam_state(std::span<const std::span<double>> params) { return adam_from(params); }
AdamState make_adam_state(std::span<const std::span<const double>> params) {
  return adam_from(params);
}

void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state,
               double learning_rate) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ValidationError("adam_step: parameter, gradient and state block counts differ");
  }
  for (std::size_t b = 0; b < grads.size(); ++b) {
    if (params[b].size() != grads[b].size() || params[b].size() != state.m[b].size()) {
      throw ValidationError("adam_step: shape mismatch in block " + std::to_string(b));
    }
    for (std::size_t i = 0; i < grads[b].size(); ++i) {
      if (!std::isfinite(grads[b][i])) {
        throw NumericError("adam_step: non-finite gradient " + format_double(grads[b][i]) +
                           " at block " + std::to_string(b) + " index " + std::to_string(i) +
                           " (step " + std::to_string(state.step + 1) + ")");
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  kernels::AdamCoeffs c;
  c.beta1 = state.beta1;
  c.beta2 = state.beta2;
  c.eps = state.eps;
  c.step_size = learning_rate / (1.0 - std::pow(state.beta1, t));
  c.v_correction = 1.0 / (1.0 - std::pow(state.beta2, t));
  for (std::size_t b = 0; b < params.size(); ++b) {
    kernels::adam_update(params[b], grads[b], state.m[b], state.v[b], c);
  }
}

}  // namespace esm2
