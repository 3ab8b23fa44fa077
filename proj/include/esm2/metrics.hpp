// SPDX-License-Identifier: Apache-2.0
#pragma once

// Ranking metrics: pairwise AUC with the strict indicator, user-grouped
// GAUC, precision/recall/F1 at top-k%, and AUC by purchase-frequency bin.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace esm2 {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint64_t> group_keys;  // optional; empty or same length

  std::size_t size() const { return scores.size(); }
  /// Equal lengths, binary labels, finite scores.
  void validate() const;
};

/// Fraction of (positive, negative) pairs whose positive scores strictly
/// higher. With tie_credit a tied pair counts 1/2. O(n log n).
/// Throws ValidationError when either class is empty.
double auc(const ScoredSet& s, bool tie_credit = false);

/// auc() or nullopt when the set holds a single class.
std::optional<double> auc_if_defined(const ScoredSet& s, bool tie_credit = false);

/// Unit-weight mean of per-user AUCs; single-class users are skipped.
double gauc(const ScoredSet& s, bool tie_credit = false);

struct TopKResult {
  double k_percent = 0.0;
  std::size_t selected = 0;
  std::size_t true_positives = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Top ceil(k% * n) by score (stable on ties) predicted positive.
TopKResult f1_at_topk(const ScoredSet& s, double k_percent);

struct PurchaseBin {
  const char* label;
  std::uint64_t lo;
  std::uint64_t hi;  // inclusive; UINT64_MAX for the open bin
};

/// [0,10], [11,20], [21,50], [51,+)
const std::array<PurchaseBin, 4>& purchase_bins();
std::size_t purchase_bin_index(std::uint64_t purchases);

/// Scores of one model on the CVR (clicked) and CTCVR (all) populations,
/// both carrying user keys.
struct TaskScores {
  ScoredSet cvr;
  ScoredSet ctcvr;
};

struct GroupedAucRow {
  std::string bin;
  std::size_t users = 0;
  std::size_t cvr_samples = 0;
  std::size_t ctcvr_samples = 0;
  std::optional<double> cvr_auc;
  std::optional<double> ctcvr_auc;
  std::optional<double> cvr_auc_ref;
  std::optional<double> ctcvr_auc_ref;
  std::optional<double> cvr_gain;    // relative, (auc - ref) / ref
  std::optional<double> ctcvr_gain;
};

/// Rows for populated bins only. `reference` (e.g. ESMM) adds relative gains.
std::vector<GroupedAucRow> grouped_auc_by_purchase_count(
    const TaskScores& model, const TaskScores* reference,
    const std::map<std::uint64_t, std::uint64_t>& purchases_per_user, bool tie_credit = false);

struct F1Row {
  std::string tag;  // e.g. "top0.1%"
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  std::size_t samples = 0;
  std::size_t positives = 0;
  std::optional<double> auc;
  std::optional<double> gauc;
  std::vector<F1Row> f1_table;
};

MetricsReport make_report(const ScoredSet& s, const std::vector<double>& k_percents,
                          bool tie_credit = false);

std::string topk_tag(double k_percent);

}  // namespace esm2
