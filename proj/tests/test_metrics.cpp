// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "esm2/error.hpp"
#include "esm2/metrics.hpp"
#include "oracles.hpp"

namespace esm2 {
namespace {

ScoredSet make(std::vector<double> s, std::vector<std::uint8_t> l,
               std::vector<std::uint64_t> g = {}) {
  return ScoredSet{std::move(s), std::move(l), std::move(g)};
}

TEST(Auc, PerfectRanking) { EXPECT_EQ(auc(make({0.9, 0.1}, {1, 0})), 1.0); }

TEST(Auc, TieIsStrictByDefault) {
  const auto s = make({0.5, 0.5}, {1, 0});
  EXPECT_EQ(auc(s), 0.0);
  EXPECT_EQ(auc(s, true), 0.5);
}

TEST(Auc, SingleClassUndefined) {
  EXPECT_THROW(auc(make({0.1, 0.2}, {1, 1})), ValidationError);
  EXPECT_FALSE(auc_if_defined(make({0.1, 0.2}, {0, 0})).has_value());
  EXPECT_THROW(auc(make({}, {})), ValidationError);
}

TEST(Auc, InvalidSetsRejected) {
  EXPECT_THROW(auc(make({0.1, 0.2}, {1})), ValidationError);
  EXPECT_THROW(auc(make({0.1, 0.2}, {1, 2})), ValidationError);
  EXPECT_THROW(auc(make({0.1, NAN}, {1, 0})), ValidationError);
}

TEST(Auc, EqualsBruteForceExactly) {
  std::mt19937_64 rng(500);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = oracle::random_set(rng, 500, 20, trial % 2 ? 20 : 1000000);
    for (bool tie : {false, true}) {
      EXPECT_EQ(auc(s, tie), oracle::pairwise_auc(s.scores, s.labels, tie).value());
    }
  }
}

TEST(Auc, ComplementSymmetryWithoutTies) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution coin(0.4);
  ScoredSet s;
  for (int i = 0; i < 2000; ++i) {
    s.scores.push_back(u(rng));
    s.labels.push_back(coin(rng));
  }
  ScoredSet neg = s;
  for (auto& x : neg.scores) x = -x;
  EXPECT_NEAR(auc(s) + auc(neg), 1.0, 1e-12);
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(9);
  const auto s = oracle::random_set(rng, 800, 10, 50);
  ScoredSet t = s;
  for (auto& x : t.scores) x = std::exp(3.0 * x) - 7.0;
  EXPECT_EQ(auc(s), auc(t));
  EXPECT_EQ(auc(s, true), auc(t, true));
}

TEST(Auc, RandomScoresNearHalf) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  ScoredSet s;
  for (int i = 0; i < 10000; ++i) {
    s.scores.push_back(u(rng));
    s.labels.push_back(coin(rng));
  }
  const double a = auc(s);
  EXPECT_GE(a, 0.47);
  EXPECT_LE(a, 0.53);
}

TEST(Gauc, OneGroupReducesToAuc) {
  std::mt19937_64 rng(11);
  auto s = oracle::random_set(rng, 300, 1, 30);
  EXPECT_EQ(gauc(s), auc(s));
}

TEST(Gauc, UnitWeightMean) {
  // User 1: AUC 1.0. User 2: one of two pairs ordered, AUC 0.5.
  const auto s = make({0.9, 0.1, 0.6, 0.2, 0.4}, {1, 0, 1, 0, 0}, {1, 1, 2, 2, 2});
  const auto s2 = make({0.9, 0.1, 0.3, 0.2, 0.4}, {1, 0, 1, 0, 0}, {1, 1, 2, 2, 2});
  EXPECT_DOUBLE_EQ(gauc(s), 1.0);
  EXPECT_DOUBLE_EQ(gauc(s2), 0.75);
}

TEST(Gauc, SkipsSingleClassUsers) {
  const auto s = make({0.9, 0.1, 0.6, 0.2}, {1, 0, 1, 1}, {1, 1, 2, 2});
  EXPECT_DOUBLE_EQ(gauc(s), 1.0);
  EXPECT_THROW(gauc(make({0.9, 0.1}, {1, 1}, {1, 1})), ValidationError);
  EXPECT_THROW(gauc(make({0.9, 0.1}, {1, 0})), ValidationError);
}

TEST(Gauc, MatchesNaiveOracle) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = oracle::random_set(rng, 400, 20, 25);
    EXPECT_NEAR(gauc(s), oracle::gauc(s, false), 1e-12);
    EXPECT_NEAR(gauc(s, true), oracle::gauc(s, true), 1e-12);
  }
}

TEST(TopK, AllPositivesFirst) {
  const auto s = make({0.9, 0.8, 0.1, 0.2, 0.3, 0.05, 0.0, 0.15, 0.12, 0.11}, {1, 1, 0, 0, 0, 0, 0, 0, 0, 0});
  const auto r = f1_at_topk(s, 20.0);
  EXPECT_EQ(r.selected, 2u);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.f1, 1.0);
}

TEST(TopK, HalfPrecisionHalfRecall) {
  // Top 4 of 8 hold 2 of the 4 positives.
  const auto s = make({0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2}, {1, 0, 1, 0, 1, 0, 1, 0});
  const auto r = f1_at_topk(s, 50.0);
  EXPECT_EQ(r.true_positives, 2u);
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_DOUBLE_EQ(r.recall, 0.5);
  EXPECT_DOUBLE_EQ(r.f1, 0.5);
}

TEST(TopK, CeilingAndStableTies) {
  const auto s = make({0.5, 0.5, 0.5}, {0, 1, 1});
  const auto r = f1_at_topk(s, 10.0);  // ceil(0.3) = 1, first in order wins
  EXPECT_EQ(r.selected, 1u);
  EXPECT_EQ(r.true_positives, 0u);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_EQ(f1_at_topk(make(std::vector<double>(1000, 0.0), std::vector<std::uint8_t>(1000, 0)), 0.1)
                .selected,
            1u);
  EXPECT_THROW(f1_at_topk(s, 0.0), ValidationError);
  EXPECT_THROW(f1_at_topk(s, 100.5), ValidationError);
  EXPECT_THROW(f1_at_topk(make({}, {}), 1.0), ValidationError);
}

TEST(TopK, MatchesRecountOracle) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = oracle::random_set(rng, 1000, 5, trial % 2 ? 10 : 100000);
    for (double k : {0.1, 0.6, 1.0, 7.5, 100.0}) {
      const auto got = f1_at_topk(s, k);
      const auto want = oracle::topk(s, k);
      EXPECT_EQ(got.selected, want.selected);
      EXPECT_EQ(got.true_positives, want.tp);
      EXPECT_EQ(got.precision, want.precision);
      EXPECT_EQ(got.recall, want.recall);
      EXPECT_EQ(got.f1, want.f1);
    }
  }
}

TEST(PurchaseBins, Boundaries) {
  EXPECT_EQ(purchase_bin_index(0), 0u);
  EXPECT_EQ(purchase_bin_index(10), 0u);
  EXPECT_EQ(purchase_bin_index(11), 1u);
  EXPECT_EQ(purchase_bin_index(20), 1u);
  EXPECT_EQ(purchase_bin_index(21), 2u);
  EXPECT_EQ(purchase_bin_index(50), 2u);
  EXPECT_EQ(purchase_bin_index(51), 3u);
  EXPECT_EQ(purchase_bin_index(UINT64_MAX), 3u);
  EXPECT_STREQ(purchase_bins()[1].label, "[11,20]");
}

TaskScores tasks_for(const ScoredSet& s) { return TaskScores{s, s}; }

TEST(GroupedAuc, AllZeroPurchasesGiveOneBin) {
  std::mt19937_64 rng(14);
  const auto s = oracle::random_set(rng, 200, 30, 100);
  const auto rows = grouped_auc_by_purchase_count(tasks_for(s), nullptr, {});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].bin, "[0,10]");
  EXPECT_EQ(rows[0].ctcvr_samples, 200u);
  EXPECT_EQ(rows[0].cvr_auc, auc_if_defined(s));
  EXPECT_FALSE(rows[0].cvr_gain.has_value());
}

TEST(GroupedAuc, MembershipMatchesRebinningOracle) {
  std::mt19937_64 rng(15);
  const auto s = oracle::random_set(rng, 20000, 1000, 1000);
  std::map<std::uint64_t, std::uint64_t> purchases;
  std::uniform_int_distribution<std::uint64_t> count(0, 80);
  for (std::uint64_t u = 0; u < 1000; ++u) purchases[u] = count(rng);

  ScoredSet ref = s;
  for (auto& x : ref.scores) x = 1.0 - x;
  const auto model = tasks_for(s);
  const auto reference = tasks_for(ref);
  const auto rows = grouped_auc_by_purchase_count(model, &reference, purchases);

  // Naive re-binning with literal bin edges.
  const std::uint64_t lo[4] = {0, 11, 21, 51};
  const std::uint64_t hi[4] = {10, 20, 50, UINT64_MAX};
  std::size_t r = 0;
  for (int b = 0; b < 4; ++b) {
    ScoredSet sub, sub_ref;
    std::vector<std::uint64_t> users;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto c = purchases[s.group_keys[i]];
      if (c < lo[b] || c > hi[b]) continue;
      sub.scores.push_back(s.scores[i]);
      sub.labels.push_back(s.labels[i]);
      sub_ref.scores.push_back(ref.scores[i]);
      sub_ref.labels.push_back(ref.labels[i]);
      users.push_back(s.group_keys[i]);
    }
    if (sub.size() == 0) continue;
    ASSERT_LT(r, rows.size());
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());
    EXPECT_EQ(rows[r].ctcvr_samples, sub.size());
    EXPECT_EQ(rows[r].users, users.size());
    const double a = oracle::pairwise_auc(sub.scores, sub.labels, false).value();
    const double ar = oracle::pairwise_auc(sub_ref.scores, sub_ref.labels, false).value();
    EXPECT_EQ(*rows[r].ctcvr_auc, a);
    EXPECT_EQ(*rows[r].ctcvr_auc_ref, ar);
    EXPECT_NEAR(*rows[r].ctcvr_gain, (a - ar) / ar, 1e-15);
    ++r;
  }
  EXPECT_EQ(r, rows.size());
}

TEST(Report, CarriesAucGaucAndTopK) {
  std::mt19937_64 rng(16);
  const auto s = oracle::random_set(rng, 1000, 10, 1000);
  const auto rep = make_report(s, {0.1, 0.6, 1.0});
  EXPECT_EQ(rep.samples, 1000u);
  EXPECT_EQ(rep.auc, auc(s));
  EXPECT_EQ(rep.gauc, gauc(s));
  ASSERT_EQ(rep.f1_table.size(), 3u);
  EXPECT_EQ(rep.f1_table[0].tag, "top0.1%");
  EXPECT_EQ(rep.f1_table[1].tag, "top0.6%");
  EXPECT_EQ(rep.f1_table[2].tag, "top1%");
  for (const auto& row : rep.f1_table) {
    EXPECT_GE(row.f1, 0.0);
    EXPECT_LE(row.f1, 1.0);
  }
}

}  // namespace
}  // namespace esm2
