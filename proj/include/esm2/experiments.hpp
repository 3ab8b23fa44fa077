// SPDX-License-Identifier: Apache-2.0
#pragma once

// Test-set evaluation of a trained model and multi-seed experiments:
// variant comparison, hyper-parameter sweeps and the DAction ablation.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "esm2/config.hpp"
#include "esm2/metrics.hpp"
#include "esm2/training.hpp"

namespace esm2 {

std::vector<ComposedProbs> predict_all(const Model& model, const Dataset& data);

/// pcvr over clicked impressions and pctcvr over all impressions, label b,
/// keyed by user.
TaskScores task_scores(std::span<const ComposedProbs> probs, const Dataset& data);

std::map<std::uint64_t, std::uint64_t> purchases_per_user(const Dataset& data);

struct EvalReport {
  std::string model;
  std::size_t impressions = 0;
  std::size_t clicks = 0;
  std::size_t purchases = 0;
  MetricsReport cvr;      // clicked impressions (headline)
  MetricsReport cvr_all;  // pcvr over every impression
  MetricsReport ctcvr;    // every impression
  std::vector<GroupedAucRow> grouped;
};

/// Scores every impression of `data`. `reference` adds grouped-AUC gains.
EvalReport evaluate(const Model& model, const Dataset& data, const EvalConfig& eval,
                    const Model* reference = nullptr);
/// Same report from one ComposedProbs per impression of `data`.
EvalReport evaluate_probs(const std::string& name, std::span<const ComposedProbs> probs,
                          const Dataset& data, const EvalConfig& eval,
                          std::span<const ComposedProbs> reference = {});

std::string format_report(const EvalReport& r);
std::string report_csv(const EvalReport& r);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n - 1); 0 for a single value
  std::size_t n = 0;
};

/// Non-finite values are skipped.
Summary summarize(const std::vector<double>& xs);

struct Arm {
  std::string label;
  TrainConfig config;  // seed is overwritten per run
};

struct RunOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  EvalReport report;
  std::size_t best_epoch = 0;
  double train_daction_rate = 0.0;  // P(a | c) after recomposition
};

struct ArmResult {
  std::string label;
  std::vector<RunOutcome> runs;

  std::vector<double> values(const std::function<std::optional<double>(const EvalReport&)>& f) const;
  Summary cvr_auc() const;
  Summary ctcvr_auc() const;
};

using Progress = std::function<void(const std::string&)>;

/// For each seed: generates one dataset (generator seed = seed), trains each
/// arm on it with training seed = seed, and evaluates the best-by-validation
/// model on the test split. A failed run is recorded and the loop continues.
std::vector<ArmResult> run_arms(const GeneratorConfig& generator, const std::vector<Arm>& arms,
                                const std::vector<std::uint64_t>& seeds, const EvalConfig& eval,
                                const Progress& progress = {});

std::string variant_label(Variant v);
std::string daction_label(DActionChoice c);

std::vector<Arm> variant_arms(const RunConfig& rc);
/// Rows SCart, Wish, SCart and Wish; all esm2.
std::vector<Arm> ablation_arms(const RunConfig& rc);

enum class SweepAxis { dropout, layers, emb_dim };
SweepAxis parse_sweep_axis(std::string_view s);
std::string_view to_string(SweepAxis a);
/// Grid from the experiment section unless `values` is non-empty.
std::vector<Arm> sweep_arms(const RunConfig& rc, SweepAxis axis, std::vector<double> values = {});

/// Per-arm mean and sample stddev of every metric, one row per arm.
std::string summary_csv(const std::vector<ArmResult>& arms, const EvalConfig& eval);
std::string summary_text(const std::vector<ArmResult>& arms, const EvalConfig& eval);

}  // namespace esm2
