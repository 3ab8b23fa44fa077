// SPDX-License-Identifier: Apache-2.0
#include "esm2/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>

#include "esm2/error.hpp"
#include "esm2/text.hpp"

namespace esm2 {

void ScoredSet::validate() const {
  if (labels.size() != scores.size()) throw ValidationError("scored set: scores/labels differ in length");
  if (!group_keys.empty() && group_keys.size() != scores.size()) {
    throw ValidationError("scored set: group keys differ in length");
  }
  for (auto l : labels) {
    if (l > 1) throw ValidationError("scored set: labels must be binary");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("scored set: non-finite score");
  }
}

namespace {

struct PairCounts {
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
  std::uint64_t wins = 0;  // pos strictly above neg
  std::uint64_t ties = 0;
};

PairCounts count_pairs(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels,
                       std::span<const std::size_t> idx_in) {
  std::vector<std::size_t> idx(idx_in.begin(), idx_in.end());
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  PairCounts pc;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? pos : neg) += 1;
      ++j;
    }
    pc.wins += pos * pc.negatives;  // negatives strictly below this score
    pc.ties += pos * neg;
    pc.positives += pos;
    pc.negatives += neg;
    i = j;
  }
  return pc;
}

std::optional<double> auc_from(const PairCounts& pc, bool tie_credit) {
  if (pc.positives == 0 || pc.negatives == 0) return std::nullopt;
  const double pairs = static_cast<double>(pc.positives) * static_cast<double>(pc.negatives);
  if (tie_credit) {
    return (2.0 * static_cast<double>(pc.wins) + static_cast<double>(pc.ties)) / (2.0 * pairs);
  }
  return static_cast<double>(pc.wins) / pairs;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

std::optional<double> auc_if_defined(const ScoredSet& s, bool tie_credit) {
  s.validate();
  return auc_from(count_pairs(s.scores, s.labels, all_indices(s.size())), tie_credit);
}

double auc(const ScoredSet& s, bool tie_credit) {
  const auto v = auc_if_defined(s, tie_credit);
  if (!v) throw ValidationError("AUC undefined: scored set needs both a positive and a negative");
  return *v;
}

double gauc(const ScoredSet& s, bool tie_credit) {
  s.validate();
  if (s.group_keys.size() != s.size()) throw ValidationError("GAUC needs a group key per sample");
  std::map<std::uint64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < s.size(); ++i) groups[s.group_keys[i]].push_back(i);
  double weighted = 0.0, weight = 0.0;
  for (const auto& [key, idx] : groups) {
    const auto a = auc_from(count_pairs(s.scores, s.labels, idx), tie_credit);
    if (!a) continue;
    weighted += *a;
    weight += 1.0;
  }
  if (weight == 0.0) throw ValidationError("GAUC undefined: no user has both classes");
  return weighted / weight;
}

TopKResult f1_at_topk(const ScoredSet& s, double k_percent) {
  s.validate();
  if (s.size() == 0) throw ValidationError("f1_at_topk: empty scored set");
  if (!(k_percent > 0.0 && k_percent <= 100.0)) {
    throw ValidationError("f1_at_topk: k_percent must lie in (0, 100]");
  }
  const double n = static_cast<double>(s.size());
  // The epsilon absorbs representation error such as 0.6 * 1000 / 100.
  auto m = static_cast<std::size_t>(std::ceil(k_percent * n / 100.0 - 1e-9));
  m = std::clamp<std::size_t>(m, 1, s.size());

  auto idx = all_indices(s.size());
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
  std::size_t tp = 0;
  for (std::size_t i = 0; i < m; ++i) tp += s.labels[idx[i]];
  const std::size_t total_pos = std::accumulate(s.labels.begin(), s.labels.end(), std::size_t{0});

  TopKResult r;
  r.k_percent = k_percent;
  r.selected = m;
  r.true_positives = tp;
  r.precision = static_cast<double>(tp) / static_cast<double>(m);
  r.recall = total_pos == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(total_pos);
  r.f1 = (r.precision + r.recall) == 0.0
             ? 0.0
             : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

const std::array<PurchaseBin, 4>& purchase_bins() {
  static const std::array<PurchaseBin, 4> bins{{{"[0,10]", 0, 10},
                                                {"[11,20]", 11, 20},
                                                {"[21,50]", 21, 50},
                                                {"[51,+)", 51, UINT64_MAX}}};
  return bins;
}

std::size_t purchase_bin_index(std::uint64_t purchases) {
  const auto& bins = purchase_bins();
  for (std::size_t i = 0; i < bins.size(); ++i) {
    if (purchases >= bins[i].lo && purchases <= bins[i].hi) return i;
  }
  return bins.size() - 1;
}

namespace {

ScoredSet subset(const ScoredSet& s, const std::vector<std::size_t>& idx) {
  ScoredSet out;
  for (auto i : idx) {
    out.scores.push_back(s.scores[i]);
    out.labels.push_back(s.labels[i]);
    out.group_keys.push_back(s.group_keys[i]);
  }
  return out;
}

std::array<std::vector<std::size_t>, 4> bin_members(
    const ScoredSet& s, const std::map<std::uint64_t, std::uint64_t>& purchases) {
  if (s.group_keys.size() != s.size()) {
    throw ValidationError("grouped AUC needs a user key per sample");
  }
  std::array<std::vector<std::size_t>, 4> members;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto it = purchases.find(s.group_keys[i]);
    members[purchase_bin_index(it == purchases.end() ? 0 : it->second)].push_back(i);
  }
  return members;
}

std::optional<double> rel_gain(const std::optional<double>& a, const std::optional<double>& b) {
  if (!a || !b || *b == 0.0) return std::nullopt;
  return (*a - *b) / *b;
}

}  // namespace

std::vector<GroupedAucRow> grouped_auc_by_purchase_count(
    const TaskScores& model, const TaskScores* reference,
    const std::map<std::uint64_t, std::uint64_t>& purchases, bool tie_credit) {
  model.cvr.validate();
  model.ctcvr.validate();
  const auto cvr_bins = bin_members(model.cvr, purchases);
  const auto ctcvr_bins = bin_members(model.ctcvr, purchases);
  std::array<std::vector<std::size_t>, 4> ref_cvr_bins, ref_ctcvr_bins;
  if (reference) {
    if (reference->cvr.size() != model.cvr.size() ||
        reference->ctcvr.size() != model.ctcvr.size()) {
      throw ValidationError("grouped AUC: reference scores cover a different population");
    }
    ref_cvr_bins = bin_members(reference->cvr, purchases);
    ref_ctcvr_bins = bin_members(reference->ctcvr, purchases);
  }

  std::vector<GroupedAucRow> rows;
  for (std::size_t b = 0; b < purchase_bins().size(); ++b) {
    if (ctcvr_bins[b].empty() && cvr_bins[b].empty()) continue;
    GroupedAucRow row;
    row.bin = purchase_bins()[b].label;
    std::vector<std::uint64_t> users;
    for (auto i : ctcvr_bins[b]) users.push_back(model.ctcvr.group_keys[i]);
    std::sort(users.begin(), users.end());
    row.users = static_cast<std::size_t>(std::unique(users.begin(), users.end()) - users.begin());
    row.cvr_samples = cvr_bins[b].size();
    row.ctcvr_samples = ctcvr_bins[b].size();
    row.cvr_auc = auc_if_defined(subset(model.cvr, cvr_bins[b]), tie_credit);
    row.ctcvr_auc = auc_if_defined(subset(model.ctcvr, ctcvr_bins[b]), tie_credit);
    if (reference) {
      row.cvr_auc_ref = auc_if_defined(subset(reference->cvr, ref_cvr_bins[b]), tie_credit);
      row.ctcvr_auc_ref = auc_if_defined(subset(reference->ctcvr, ref_ctcvr_bins[b]), tie_credit);
      row.cvr_gain = rel_gain(row.cvr_auc, row.cvr_auc_ref);
      row.ctcvr_gain = rel_gain(row.ctcvr_auc, row.ctcvr_auc_ref);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string topk_tag(double k_percent) { return "top" + format_double(k_percent) + "%"; }

MetricsReport make_report(const ScoredSet& s, const std::vector<double>& k_percents,
                          bool tie_credit) {
  MetricsReport r;
  r.samples = s.size();
  r.positives = std::accumulate(s.labels.begin(), s.labels.end(), std::size_t{0});
  r.auc = auc_if_defined(s, tie_credit);
  if (s.group_keys.size() == s.size()) {
    try {
      r.gauc = gauc(s, tie_credit);
    } catch (const ValidationError&) {
      r.gauc = std::nullopt;
    }
  }
  if (s.size() > 0) {
    for (double k : k_percents) {
      const auto t = f1_at_topk(s, k);
      r.f1_table.push_back(F1Row{topk_tag(k), t.precision, t.recall, t.f1});
    }
  }
  return r;
}

}  // namespace esm2
