// SPDX-License-Identifier: Apache-2.0
#include "esm2/training.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <zlib.h>

#include "esm2/config.hpp"
#include "esm2/metrics.hpp"
#include "esm2/text.hpp"

namespace esm2 {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::esm2: return "esm2";
    case Variant::esmm: return "esmm";
    case Variant::dnn: return "dnn";
    case Variant::dnn_os: return "dnn_os";
  }
  return "?";
}

std::string_view to_string(DActionChoice c) {
  switch (c) {
    case DActionChoice::scart: return "scart";
    case DActionChoice::wish: return "wish";
    case DActionChoice::both: return "both";
  }
  return "?";
}

std::string_view to_string(DenseMode m) {
  return m == DenseMode::normalize ? "normalize" : "discretize";
}

Variant parse_variant(std::string_view s) {
  if (s == "esm2") return Variant::esm2;
  if (s == "esmm") return Variant::esmm;
  if (s == "dnn") return Variant::dnn;
  if (s == "dnn_os" || s == "dnn-os") return Variant::dnn_os;
  throw ValidationError("unknown variant '" + std::string(s) + "' (esm2, esmm, dnn, dnn_os)");
}

DActionChoice parse_daction(std::string_view s) {
  if (s == "scart") return DActionChoice::scart;
  if (s == "wish") return DActionChoice::wish;
  if (s == "both") return DActionChoice::both;
  throw ValidationError("unknown DAction composition '" + std::string(s) + "' (scart, wish, both)");
}

DenseMode parse_dense_mode(std::string_view s) {
  if (s == "normalize") return DenseMode::normalize;
  if (s == "discretize") return DenseMode::discretize;
  throw ValidationError("unknown dense mode '" + std::string(s) + "' (normalize, discretize)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("model config: " + m); };
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (tower_dims.empty() || tower_dims.back() != 1) fail("tower_dims must end in 1");
  for (auto d : tower_dims) {
    if (d == 0) fail("tower_dims entries must be >= 1");
  }
  if (embedding_dims.empty()) fail("embedding_dims must not be empty");
  for (auto d : embedding_dims) {
    if (d == 0) fail("embedding_dims entries must be >= 1");
  }
  if (dense_mode == DenseMode::discretize && (dense_bins < 2 || dense_embedding_dim == 0)) {
    fail("discretize needs dense_bins >= 2 and dense_embedding_dim >= 1");
  }
  if (oversample_factor == 0) fail("oversample_factor must be >= 1");
  for (double w : {loss_weights.ctr, loss_weights.ctavr, loss_weights.ctcvr}) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail("loss weights must be finite and >= 0");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
}

FeatureLayout layout_of(const Dataset& d) { return FeatureLayout{d.field_vocab_sizes, d.dense_dim}; }

// ---- model construction ---------------------------------------------------

namespace {

bool two_encoders(Variant v) { return v == Variant::dnn || v == Variant::dnn_os; }

std::vector<std::string> tower_names(Variant v) {
  if (v == Variant::esm2) {
    return {"y1:impression->click", "y2:click->daction", "y3:daction->purchase",
            "y4:oaction->purchase"};
  }
  return {"ctr", "cvr"};
}

EncoderSpec encoder_spec(const TrainConfig& c, const FeatureLayout& layout) {
  if (c.embedding_dims.size() != layout.field_vocab_sizes.size()) {
    throw ValidationError("embedding_dims has " + std::to_string(c.embedding_dims.size()) +
                          " entries but the data has " +
                          std::to_string(layout.field_vocab_sizes.size()) + " sparse fields");
  }
  EncoderSpec s;
  s.field_vocab_sizes = layout.field_vocab_sizes;
  s.field_dims = c.embedding_dims;
  s.dense_dim = layout.dense_dim;
  s.dense_mode = c.dense_mode;
  s.dense_bins = c.dense_bins;
  s.dense_embedding_dim = c.dense_embedding_dim;
  return s;
}

AdamState adam_for(std::vector<std::span<const double>> params, const TrainConfig& c) {
  AdamState s = make_adam_state(params);
  s.beta1 = c.adam_beta1;
  s.beta2 = c.adam_beta2;
  s.eps = c.adam_eps;
  return s;
}

void attach_optimizers(Model& m) {
  m.encoder_adam.clear();
  m.tower_adam.clear();
  for (const auto& e : m.encoders) m.encoder_adam.push_back(adam_for(e.parameters(), m.config));
  for (const auto& t : m.towers) m.tower_adam.push_back(adam_for(t.parameters(), m.config));
}

std::vector<std::size_t> full_dims(std::size_t input, const std::vector<std::size_t>& tower) {
  std::vector<std::size_t> dims{input};
  dims.insert(dims.end(), tower.begin(), tower.end());
  return dims;
}

}  // namespace

Model make_model_skeleton(const TrainConfig& config, const FeatureLayout& layout) {
  config.validate();
  Model m;
  m.config = config;
  m.layout = layout;
  const auto spec = encoder_spec(config, layout);
  const std::size_t n_enc = two_encoders(config.variant) ? 2 : 1;
  for (std::size_t e = 0; e < n_enc; ++e) m.encoders.push_back(make_encoder_skeleton(spec));
  const auto names = tower_names(config.variant);
  const auto dims = full_dims(m.encoders.front().output_dim(), config.tower_dims);
  for (std::size_t k = 0; k < names.size(); ++k) {
    m.towers.push_back(make_tower_skeleton(dims, config.dropout, names[k]));
    m.tower_encoder.push_back(n_enc == 2 ? k : 0);
  }
  attach_optimizers(m);
  return m;
}

Model init_model(const TrainConfig& config, const Dataset& train) {
  config.validate();
  Model m;
  m.config = config;
  m.layout = layout_of(train);
  std::seed_seq seq{config.seed, std::uint64_t{0x1417}};
  std::mt19937_64 rng(seq);
  const auto spec = encoder_spec(config, m.layout);
  const std::size_t n_enc = two_encoders(config.variant) ? 2 : 1;
  for (std::size_t e = 0; e < n_enc; ++e) m.encoders.push_back(make_encoder(spec, train, rng));
  const auto names = tower_names(config.variant);
  const auto dims = full_dims(m.encoders.front().output_dim(), config.tower_dims);
  for (std::size_t k = 0; k < names.size(); ++k) {
    m.towers.push_back(init_tower(dims, config.dropout, rng, names[k]));
    m.tower_encoder.push_back(n_enc == 2 ? k : 0);
  }
  attach_optimizers(m);
  return m;
}

TowerOutputs Model::tower_outputs(const BehaviorRecord& r) const {
  std::vector<std::vector<double>> g(encoders.size());
  for (std::size_t e = 0; e < encoders.size(); ++e) g[e] = encode(encoders[e], r);
  std::array<double, 4> y{};
  for (std::size_t k = 0; k < towers.size(); ++k) {
    y[k] = esm2::predict(towers[k], g[tower_encoder[k]]);
  }
  return TowerOutputs{y[0], y[1], y[2], y[3]};
}

ComposedProbs Model::predict(const BehaviorRecord& r) const {
  const auto y = tower_outputs(r);
  if (config.variant == Variant::esm2) return compose(y);
  return compose_esmm(y.y1, y.y2);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : encoders) {
    for (auto p : e.parameters()) n += p.size();
  }
  for (const auto& t : towers) n += t.parameter_count();
  return n;
}

// ---- losses ---------------------------------------------------------------

LogLoss logloss(double p, int label) {
  if (label != 0 && label != 1) throw ValidationError("logloss: label must be 0 or 1");
  if (std::isnan(p)) throw NumericError("logloss: probability is NaN");
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  if (label == 1) return LogLoss{-std::log(q), -1.0 / q};
  return LogLoss{-std::log(1.0 - q), 1.0 / (1.0 - q)};
}

BatchLoss total_loss(std::span<const ComposedProbs> probs, std::span<const LabelTriple> labels,
                     const LossWeights& w) {
  if (probs.size() != labels.size()) throw ValidationError("total_loss: size mismatch");
  if (probs.empty()) throw ValidationError("total_loss: empty batch");
  BatchLoss out;
  out.grads.resize(probs.size());
  const double inv_n = 1.0 / static_cast<double>(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& l = labels[i];
    if ((l.a || l.b) && !l.c) {
      throw DataError("label triple (c=" + std::to_string(l.c) + ", a=" + std::to_string(l.a) +
                      ", b=" + std::to_string(l.b) + ") has an action without a click");
    }
    const auto ctr = logloss(probs[i].pctr, l.c);
    const auto ctcvr = logloss(probs[i].pctcvr, l.b);
    out.ctr += ctr.loss;
    out.ctcvr += ctcvr.loss;
    out.grads[i].pctr = w.ctr * ctr.grad * inv_n;
    out.grads[i].pctcvr = w.ctcvr * ctcvr.grad * inv_n;
    if (w.ctavr != 0.0) {
      const auto ctavr = logloss(probs[i].pctavr, l.a);
      out.ctavr += ctavr.loss;
      out.grads[i].pctavr = w.ctavr * ctavr.grad * inv_n;
    }
  }
  out.ctr *= inv_n;
  out.ctavr *= inv_n;
  out.ctcvr *= inv_n;
  out.total = w.ctr * out.ctr + w.ctavr * out.ctavr + w.ctcvr * out.ctcvr;
  return out;
}

// ---- data helpers -----------------------------------------------------------

std::vector<std::size_t> oversample(std::span<const BehaviorRecord> records,
                                    std::span<const std::size_t> indices, std::size_t factor,
                                    std::mt19937_64& rng) {
  if (factor == 0) throw ValidationError("oversample factor must be >= 1");
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    const std::size_t copies = records[i].b ? factor : 1;
    for (std::size_t k = 0; k < copies; ++k) out.push_back(i);
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

Dataset recompose_daction(const Dataset& data, DActionChoice choice) {
  Dataset out = data;
  for (auto& r : out.records) {
    switch (choice) {
      case DActionChoice::scart: r.a = r.scart; break;
      case DActionChoice::wish: r.a = r.wish; break;
      case DActionChoice::both: r.a = static_cast<std::uint8_t>(r.scart | r.wish); break;
    }
  }
  return out;
}

// ---- gradients --------------------------------------------------------------

ModelGrads::ModelGrads(const Model& m) {
  for (const auto& e : m.encoders) encoders.emplace_back(e);
  for (const auto& t : m.towers) towers.emplace_back(t);
}

void ModelGrads::zero() {
  for (auto& e : encoders) e.zero();
  for (auto& t : towers) t.zero();
}

namespace {

struct SampleCache {
  std::vector<std::vector<double>> g;  // per encoder
  std::array<ForwardCache, 4> towers;
  std::array<double, 4> y{};
};

// Forward of every tower that reads the listed encoders' outputs.
void forward_sample(const Model& m, const BehaviorRecord& r, std::span<const std::size_t> towers,
                    Mode mode, std::mt19937_64* rng, SampleCache& sc) {
  sc.g.resize(m.encoders.size());
  std::array<bool, 4> encoded{};
  for (auto k : towers) {
    const auto e = m.tower_encoder[k];
    if (!encoded[e]) {
      sc.g[e].resize(m.encoders[e].output_dim());
      encode(m.encoders[e], r, sc.g[e]);
      encoded[e] = true;
    }
    sc.y[k] = forward(m.towers[k], sc.g[m.tower_encoder[k]], mode, rng, sc.towers[k]);
  }
}

void backward_sample(const Model& m, const BehaviorRecord& r, const SampleCache& sc,
                     std::span<const std::size_t> towers, std::span<const double> dy,
                     ModelGrads& grads) {
  std::array<std::vector<double>, 2> dg;
  for (std::size_t j = 0; j < towers.size(); ++j) {
    const auto k = towers[j];
    auto d = backward(m.towers[k], sc.towers[k], dy[j], grads.towers[k]);
    auto& acc = dg[m.tower_encoder[k]];
    if (acc.empty()) {
      acc = std::move(d);
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
    }
  }
  for (std::size_t e = 0; e < m.encoders.size(); ++e) {
    if (!dg[e].empty()) encode_backward(m.encoders[e], r, dg[e], grads.encoders[e]);
  }
}

LabelTriple labels_of(const BehaviorRecord& r) { return LabelTriple{r.c, r.a, r.b}; }

LossWeights effective_weights(const TrainConfig& c) {
  LossWeights w = c.loss_weights;
  if (c.variant != Variant::esm2) w.ctavr = 0.0;
  return w;
}

// Shared body of accumulate_gradients (grads != null) and objective.
BatchStats run_objective(const Model& m, std::span<const BehaviorRecord> records,
                         std::span<const std::size_t> indices,
                         std::span<const std::size_t> clicked, ModelGrads* grads, Mode mode,
                         std::mt19937_64* rng) {
  BatchStats st;
  const auto v = m.config.variant;
  if (v == Variant::esm2 || v == Variant::esmm) {
    if (indices.empty()) return st;
    const std::vector<std::size_t> all_towers =
        v == Variant::esm2 ? std::vector<std::size_t>{0, 1, 2, 3} : std::vector<std::size_t>{0, 1};
    std::vector<SampleCache> caches(indices.size());
    std::vector<ComposedProbs> probs(indices.size());
    std::vector<LabelTriple> labels(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto& r = records[indices[i]];
      forward_sample(m, r, all_towers, mode, rng, caches[i]);
      const auto& y = caches[i].y;
      probs[i] = v == Variant::esm2 ? compose(TowerOutputs{y[0], y[1], y[2], y[3]})
                                    : compose_esmm(y[0], y[1]);
      labels[i] = labels_of(r);
    }
    st.loss = total_loss(probs, labels, effective_weights(m.config));
    st.ctr_samples = indices.size();
    st.ctcvr_samples = indices.size();
    st.ctavr_samples = v == Variant::esm2 ? indices.size() : 0;
    if (grads) {
      for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& y = caches[i].y;
        std::array<double, 4> dy{};
        if (v == Variant::esm2) {
          const auto d = compose_backward(TowerOutputs{y[0], y[1], y[2], y[3]}, st.loss.grads[i]);
          dy = {d.y1, d.y2, d.y3, d.y4};
        } else {
          const auto d = compose_esmm_backward(y[0], y[1], st.loss.grads[i]);
          dy = {d.ctr, d.cvr, 0.0, 0.0};
        }
        backward_sample(m, records[indices[i]], caches[i], all_towers,
                        std::span<const double>(dy.data(), all_towers.size()), *grads);
      }
    }
    return st;
  }

  // dnn / dnn_os: independent CTR and CVR problems.
  auto run_tower = [&](std::size_t k, std::span<const std::size_t> idx, bool use_click) {
    double sum = 0.0;
    if (idx.empty()) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(idx.size());
    const std::array<std::size_t, 1> which{k};
    SampleCache sc;
    for (auto i : idx) {
      const auto& r = records[i];
      if (!use_click && !r.c) throw DataError("CVR tower fed an unclicked sample");
      forward_sample(m, r, which, mode, rng, sc);
      const auto ll = logloss(sc.y[k], use_click ? r.c : r.b);
      sum += ll.loss;
      if (grads) {
        const std::array<double, 1> dy{ll.grad * inv_n};
        backward_sample(m, r, sc, which, dy, *grads);
      }
    }
    return sum * inv_n;
  };
  st.loss.ctr = run_tower(0, indices, true);
  st.cvr = run_tower(1, clicked, false);
  st.ctr_samples = indices.size();
  st.cvr_samples = clicked.size();
  st.loss.total = st.loss.ctr + st.cvr;
  return st;
}

}  // namespace

BatchStats accumulate_gradients(const Model& model, std::span<const BehaviorRecord> records,
                                std::span<const std::size_t> indices,
                                std::span<const std::size_t> clicked_indices, ModelGrads& grads,
                                std::mt19937_64* rng) {
  return run_objective(model, records, indices, clicked_indices, &grads, Mode::train, rng);
}

double objective(const Model& model, std::span<const BehaviorRecord> records,
                 std::span<const std::size_t> indices,
                 std::span<const std::size_t> clicked_indices) {
  return run_objective(model, records, indices, clicked_indices, nullptr, Mode::infer, nullptr)
      .loss.total;
}

void apply_adam(Model& model, const ModelGrads& grads, std::span<const std::size_t> towers) {
  std::vector<bool> enc_used(model.encoders.size(), false);
  for (auto k : towers) {
    if (k >= model.towers.size()) throw ValidationError("apply_adam: tower index out of range");
    enc_used[model.tower_encoder[k]] = true;
  }
  for (std::size_t e = 0; e < model.encoders.size(); ++e) {
    if (!enc_used[e]) continue;
    const auto params = model.encoders[e].parameters();
    const auto g = grads.encoders[e].views();
    adam_step(params, g, model.encoder_adam[e], model.config.learning_rate);
  }
  for (auto k : towers) {
    const auto params = model.towers[k].parameters();
    const auto g = grads.towers[k].views();
    adam_step(params, g, model.tower_adam[k], model.config.learning_rate);
  }
}

void apply_adam(Model& model, const ModelGrads& grads) {
  std::vector<std::size_t> all(model.towers.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  apply_adam(model, grads, all);
}

// ---- training loop ------------------------------------------------------------

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::pair<double, double> validation_aucs(const Model& m, const Dataset& val) {
  ScoredSet cvr, ctcvr;
  for (const auto& r : val.records) {
    const auto p = m.predict(r);
    ctcvr.scores.push_back(p.pctcvr);
    ctcvr.labels.push_back(r.b);
    if (r.c) {
      cvr.scores.push_back(p.pcvr);
      cvr.labels.push_back(r.b);
    }
  }
  return {auc_if_defined(cvr).value_or(kNaN), auc_if_defined(ctcvr).value_or(kNaN)};
}

struct EpochSums {
  double batch_total = 0.0;
  std::size_t batches = 0;
  double ctr = 0.0, ctavr = 0.0, ctcvr = 0.0, cvr = 0.0;  // sample-weighted sums
  std::uint64_t n_ctr = 0, n_ctavr = 0, n_ctcvr = 0, n_cvr = 0;

  void add(const BatchStats& s) {
    ctr += s.loss.ctr * static_cast<double>(s.ctr_samples);
    ctavr += s.loss.ctavr * static_cast<double>(s.ctavr_samples);
    ctcvr += s.loss.ctcvr * static_cast<double>(s.ctcvr_samples);
    cvr += s.cvr * static_cast<double>(s.cvr_samples);
    n_ctr += s.ctr_samples;
    n_ctavr += s.ctavr_samples;
    n_ctcvr += s.ctcvr_samples;
    n_cvr += s.cvr_samples;
  }
};

double safe_div(double a, std::uint64_t n) { return n == 0 ? 0.0 : a / static_cast<double>(n); }

}  // namespace

TrainResult train(const Dataset& train_in, const Dataset& val_in, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_in.records.empty()) throw ValidationError("training set is empty");
  const Dataset train_data = recompose_daction(train_in, config.daction_composition);
  const Dataset val_data = recompose_daction(val_in, config.daction_composition);

  Model model = init_model(config, train_data);
  if (!val_data.records.empty()) check_compatible(model, val_data);

  std::seed_seq shuffle_seq{config.seed, std::uint64_t{0x5AFF1E}};
  std::seed_seq dropout_seq{config.seed, std::uint64_t{0xD120}};
  std::mt19937_64 shuffle_rng(shuffle_seq);
  std::mt19937_64 dropout_rng(dropout_seq);

  const auto& recs = train_data.records;
  std::vector<std::size_t> all(recs.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> clicked;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (recs[i].c) clicked.push_back(i);
  }

  TrainResult result{model, model, 0, clicked.size()};
  double best_auc = -std::numeric_limits<double>::infinity();
  ModelGrads grads(model);
  const bool dnn = two_encoders(config.variant);
  const std::size_t bs = config.batch_size;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    auto last_good = std::make_shared<const Model>(model);
    EpochSums sums;
    auto step = [&](std::span<const std::size_t> batch, std::span<const std::size_t> cbatch,
                    std::span<const std::size_t> towers) {
      grads.zero();
      BatchStats st;
      try {
        st = accumulate_gradients(model, recs, batch, cbatch, grads, &dropout_rng);
      } catch (const NumericError& e) {
        throw TrainingDivergedError(std::string("training diverged in epoch ") +
                                        std::to_string(epoch) + ": " + e.what(),
                                    last_good);
      }
      if (!std::isfinite(st.loss.total)) {
        throw TrainingDivergedError("training diverged in epoch " + std::to_string(epoch) +
                                        ": non-finite loss",
                                    last_good);
      }
      try {
        apply_adam(model, grads, towers);
      } catch (const NumericError& e) {
        throw TrainingDivergedError(std::string("training diverged in epoch ") +
                                        std::to_string(epoch) + ": " + e.what(),
                                    last_good);
      }
      sums.add(st);
      sums.batch_total += st.loss.total;
      sums.batches += 1;
    };

    std::shuffle(all.begin(), all.end(), shuffle_rng);
    if (!dnn) {
      const std::vector<std::size_t> towers =
          config.variant == Variant::esm2 ? std::vector<std::size_t>{0, 1, 2, 3}
                                          : std::vector<std::size_t>{0, 1};
      for (std::size_t s = 0; s < all.size(); s += bs) {
        const std::span<const std::size_t> batch(all.data() + s, std::min(bs, all.size() - s));
        step(batch, {}, towers);
      }
    } else {
      const std::array<std::size_t, 1> ctr_tower{0}, cvr_tower{1};
      for (std::size_t s = 0; s < all.size(); s += bs) {
        const std::span<const std::size_t> batch(all.data() + s, std::min(bs, all.size() - s));
        step(batch, {}, ctr_tower);
      }
      std::vector<std::size_t> cvr_stream;
      if (config.variant == Variant::dnn_os) {
        cvr_stream = oversample(recs, clicked, config.oversample_factor, shuffle_rng);
      } else {
        cvr_stream = clicked;
        std::shuffle(cvr_stream.begin(), cvr_stream.end(), shuffle_rng);
      }
      for (std::size_t s = 0; s < cvr_stream.size(); s += bs) {
        const std::span<const std::size_t> batch(cvr_stream.data() + s,
                                                 std::min(bs, cvr_stream.size() - s));
        step({}, batch, cvr_tower);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = sums.batches ? sums.batch_total / static_cast<double>(sums.batches) : 0.0;
    rec.loss_ctr = safe_div(sums.ctr, sums.n_ctr);
    rec.loss_ctavr = safe_div(sums.ctavr, sums.n_ctavr);
    rec.loss_ctcvr = safe_div(sums.ctcvr, sums.n_ctcvr);
    rec.loss_cvr = safe_div(sums.cvr, sums.n_cvr);
    rec.ctr_samples = sums.n_ctr;
    rec.ctavr_samples = sums.n_ctavr;
    rec.ctcvr_samples = sums.n_ctcvr;
    rec.cvr_samples = sums.n_cvr;
    if (!val_data.records.empty()) {
      std::tie(rec.val_cvr_auc, rec.val_ctcvr_auc) = validation_aucs(model, val_data);
    } else {
      rec.val_cvr_auc = rec.val_ctcvr_auc = kNaN;
    }
    model.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (std::isfinite(rec.val_cvr_auc) && rec.val_cvr_auc > best_auc) {
      best_auc = rec.val_cvr_auc;
      result.best_model = model;
      result.best_epoch = epoch;
    }
  }
  if (result.best_epoch == 0 && config.epochs > 0) {
    result.best_model = model;
    result.best_epoch = config.epochs;
  }
  result.best_model.history = model.history;
  result.final_model = std::move(model);
  return result;
}

void check_compatible(const Model& model, const Dataset& data) {
  const auto l = layout_of(data);
  if (l == model.layout) return;
  throw ValidationError("dataset layout (vocab sizes " + format_list(l.field_vocab_sizes) +
                        ", dense_dim " + std::to_string(l.dense_dim) +
                        ") does not match the model (vocab sizes " +
                        format_list(model.layout.field_vocab_sizes) + ", dense_dim " +
                        std::to_string(model.layout.dense_dim) + ")");
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << "epoch,train_loss,loss_ctr,loss_ctavr,loss_ctcvr,loss_cvr,ctr_samples,ctavr_samples,"
        "ctcvr_samples,cvr_samples,val_cvr_auc,val_ctcvr_auc\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.loss_ctr) << ','
       << format_double(r.loss_ctavr) << ',' << format_double(r.loss_ctcvr) << ','
       << format_double(r.loss_cvr) << ',' << r.ctr_samples << ',' << r.ctavr_samples << ','
       << r.ctcvr_samples << ',' << r.cvr_samples << ',' << format_double(r.val_cvr_auc) << ','
       << format_double(r.val_ctcvr_auc) << '\n';
  }
  return os.str();
}

// ---- checkpoints ----------------------------------------------------------------
//
// "ESM2CKPT" | u32 version | u64 n + header text | u64 count | arrays | u32 crc32
// array: u32 n + name | u32 ndim | u64 dims[ndim] | f64 values
// Integers and doubles are little-endian; the CRC covers every preceding byte.

namespace {

constexpr std::array<char, 8> kMagic{'E', 'S', 'M', '2', 'C', 'K', 'P', 'T'};
constexpr std::size_t kHistoryCols = 12;

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void str32(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  void array(const std::string& name, const std::vector<std::uint64_t>& dims,
             std::span<const double> values) {
    str32(name);
    u32(static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) u64(d);
    for (double x : values) f64(x);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str(std::uint64_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw CheckpointError("checkpoint: unexpected end of data");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

struct NamedArray {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

std::uint32_t crc_of(std::span<const std::uint8_t> b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < b.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(b.size() - off, 1u << 30));
    crc = crc32(crc, b.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string header_text(const Model& m) {
  return "[model]\n" + to_text(m.config) + "[layout]\nfield_vocab_sizes = " +
         format_list(m.layout.field_vocab_sizes) + "\ndense_dim = " +
         std::to_string(m.layout.dense_dim) + "\n";
}

// Visits every persisted array of a model in a fixed order. `f(name, dims, span)`
// receives mutable spans when M is non-const.
template <class M, class F>
void visit_arrays(M& m, F&& f) {
  using D = std::conditional_t<std::is_const_v<M>, const double, double>;
  for (std::size_t e = 0; e < m.encoders.size(); ++e) {
    auto& enc = m.encoders[e];
    const std::string p = "encoder" + std::to_string(e) + ".";
    for (std::size_t t = 0; t < enc.tables.size(); ++t) {
      auto& tb = enc.tables[t];
      f(p + "table" + std::to_string(t), std::vector<std::uint64_t>{tb.vocab_size, tb.dim},
        std::span<D>(tb.weights));
    }
    f(p + "dense_mean", std::vector<std::uint64_t>{enc.dense_stats.mean.size()},
      std::span<D>(enc.dense_stats.mean));
    f(p + "dense_std", std::vector<std::uint64_t>{enc.dense_stats.std.size()},
      std::span<D>(enc.dense_stats.std));
    for (std::size_t j = 0; j < enc.dense_edges.size(); ++j) {
      f(p + "dense_edges" + std::to_string(j),
        std::vector<std::uint64_t>{enc.dense_edges[j].size()}, std::span<D>(enc.dense_edges[j]));
    }
    for (std::size_t j = 0; j < enc.dense_tables.size(); ++j) {
      auto& tb = enc.dense_tables[j];
      f(p + "dense_table" + std::to_string(j), std::vector<std::uint64_t>{tb.vocab_size, tb.dim},
        std::span<D>(tb.weights));
    }
    auto& st = m.encoder_adam[e];
    for (std::size_t b = 0; b < st.m.size(); ++b) {
      f(p + "adam_m" + std::to_string(b), std::vector<std::uint64_t>{st.m[b].size()},
        std::span<D>(st.m[b]));
      f(p + "adam_v" + std::to_string(b), std::vector<std::uint64_t>{st.v[b].size()},
        std::span<D>(st.v[b]));
    }
  }
  for (std::size_t k = 0; k < m.towers.size(); ++k) {
    auto& tw = m.towers[k];
    const std::string p = "tower" + std::to_string(k) + ".";
    for (std::size_t l = 0; l < tw.layers.size(); ++l) {
      auto& layer = tw.layers[l];
      f(p + "layer" + std::to_string(l) + ".weight",
        std::vector<std::uint64_t>{layer.out, layer.in}, std::span<D>(layer.weight));
      f(p + "layer" + std::to_string(l) + ".bias", std::vector<std::uint64_t>{layer.out},
        std::span<D>(layer.bias));
    }
    auto& st = m.tower_adam[k];
    for (std::size_t b = 0; b < st.m.size(); ++b) {
      f(p + "adam_m" + std::to_string(b), std::vector<std::uint64_t>{st.m[b].size()},
        std::span<D>(st.m[b]));
      f(p + "adam_v" + std::to_string(b), std::vector<std::uint64_t>{st.v[b].size()},
        std::span<D>(st.v[b]));
    }
  }
}

std::vector<double> adam_steps(const Model& m) {
  std::vector<double> s;
  for (const auto& a : m.encoder_adam) s.push_back(static_cast<double>(a.step));
  for (const auto& a : m.tower_adam) s.push_back(static_cast<double>(a.step));
  return s;
}

std::vector<double> history_matrix(const std::vector<EpochRecord>& h) {
  std::vector<double> out;
  for (const auto& r : h) {
    const std::array<double, kHistoryCols> row{
        static_cast<double>(r.epoch), r.train_loss, r.loss_ctr, r.loss_ctavr, r.loss_ctcvr,
        r.loss_cvr, static_cast<double>(r.ctr_samples), static_cast<double>(r.ctavr_samples),
        static_cast<double>(r.ctcvr_samples), static_cast<double>(r.cvr_samples), r.val_cvr_auc,
        r.val_ctcvr_auc};
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
  Writer w;
  w.bytes(std::string_view(kMagic.data(), kMagic.size()));
  w.u32(kCheckpointVersion);
  const auto text = header_text(model);
  w.u64(text.size());
  w.bytes(text);

  std::vector<std::pair<std::string, std::pair<std::vector<std::uint64_t>, std::vector<double>>>>
      arrays;
  visit_arrays(model, [&](const std::string& name, std::vector<std::uint64_t> dims,
                          std::span<const double> v) {
    arrays.push_back({name, {std::move(dims), std::vector<double>(v.begin(), v.end())}});
  });
  const auto steps = adam_steps(model);
  arrays.push_back({"adam_steps", {{steps.size()}, steps}});
  const auto hist = history_matrix(model.history);
  arrays.push_back({"history", {{model.history.size(), kHistoryCols}, hist}});

  w.u64(arrays.size());
  for (const auto& [name, a] : arrays) w.array(name, a.first, a.second);
  auto& buf = w.buffer();
  const auto crc = crc_of(buf);
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  return std::move(buf);
}

Model deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() + 4 ||
      !std::equal(kMagic.begin(), kMagic.end(), reinterpret_cast<const char*>(bytes.data()))) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  {
    Reader r(bytes.subspan(kMagic.size(), 4));
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
      throw VersionMismatchError("checkpoint version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
    }
  }
  if (bytes.size() < kMagic.size() + 4 + 8 + 4) throw CheckpointError("checkpoint truncated");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  if (tail.u32() != crc_of(body)) {
    throw CheckpointError("checkpoint checksum mismatch (file truncated or corrupt)");
  }

  Reader r(body.subspan(kMagic.size() + 4));
  const auto text = r.str(r.u64());
  const auto sections = parse_sections(text);
  TrainConfig config;
  FeatureLayout layout;
  try {
    apply_section(config, sections.at("model"));
    const auto& l = sections.at("layout");
    layout.field_vocab_sizes = parse_uint_list(l.at("field_vocab_sizes"));
    layout.dense_dim = parse_uint(l.at("dense_dim"));
  } catch (const std::out_of_range&) {
    throw CheckpointError("checkpoint header lacks [model] or [layout] keys");
  }

  std::map<std::string, NamedArray> arrays;
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = r.str(r.u32());
    NamedArray a;
    const auto ndim = r.u32();
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      a.dims.push_back(r.u64());
      n *= a.dims.back();
    }
    if (n > bytes.size() / 8) throw CheckpointError("checkpoint array '" + name + "' too large");
    a.values.resize(n);
    for (auto& x : a.values) x = r.f64();
    arrays.emplace(std::move(name), std::move(a));
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");

  auto take = [&](const std::string& name) -> NamedArray& {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw CheckpointError("checkpoint lacks array '" + name + "'");
    return it->second;
  };

  Model m = make_model_skeleton(config, layout);
  visit_arrays(m, [&](const std::string& name, const std::vector<std::uint64_t>& dims,
                      std::span<double> dst) {
    const auto& a = take(name);
    if (a.dims != dims || a.values.size() != dst.size()) {
      throw CheckpointError("checkpoint array '" + name + "' has the wrong shape");
    }
    std::copy(a.values.begin(), a.values.end(), dst.begin());
  });
  const auto& steps = take("adam_steps");
  if (steps.values.size() != m.encoder_adam.size() + m.tower_adam.size()) {
    throw CheckpointError("checkpoint adam_steps has the wrong length");
  }
  std::size_t s = 0;
  for (auto& a : m.encoder_adam) a.step = static_cast<std::uint64_t>(steps.values[s++]);
  for (auto& a : m.tower_adam) a.step = static_cast<std::uint64_t>(steps.values[s++]);
  const auto& hist = take("history");
  if (hist.dims.size() != 2 || hist.dims[1] != kHistoryCols) {
    throw CheckpointError("checkpoint history has the wrong shape");
  }
  for (std::uint64_t i = 0; i < hist.dims[0]; ++i) {
    const double* v = hist.values.data() + i * kHistoryCols;
    EpochRecord e;
    e.epoch = static_cast<std::size_t>(v[0]);
    e.train_loss = v[1];
    e.loss_ctr = v[2];
    e.loss_ctavr = v[3];
    e.loss_ctcvr = v[4];
    e.loss_cvr = v[5];
    e.ctr_samples = static_cast<std::uint64_t>(v[6]);
    e.ctavr_samples = static_cast<std::uint64_t>(v[7]);
    e.ctcvr_samples = static_cast<std::uint64_t>(v[8]);
    e.cvr_samples = static_cast<std::uint64_t>(v[9]);
    e.val_cvr_auc = v[10];
    e.val_ctcvr_auc = v[11];
    m.history.push_back(e);
  }
  return m;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint '" + path.string() + "'");
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace esm2
