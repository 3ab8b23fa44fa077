// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "esm2/config.hpp"
#include "esm2/error.hpp"
#include "esm2/experiments.hpp"
#include "test_support.hpp"

namespace esm2 {
namespace {

TEST(Summarize, MeanAndSampleStddev) {
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.stddev, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(s.n, 4u);
}

TEST(Summarize, SkipsNonFinite) {
  const auto s = summarize({1.0, std::nan(""), 3.0});
  EXPECT_EQ(s.n, 2u);
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  const auto one = summarize({0.7});
  EXPECT_EQ(one.stddev, 0.0);
  EXPECT_EQ(summarize({}).n, 0u);
}

TEST(Labels, VariantAndDAction) {
  EXPECT_EQ(variant_label(Variant::esm2), "ESM2");
  EXPECT_EQ(variant_label(Variant::dnn_os), "DNN-OS");
  EXPECT_EQ(daction_label(DActionChoice::both), "SCart and Wish");
}

TEST(Arms, AblationIsAlwaysEsm2) {
  RunConfig rc;
  rc.model.variant = Variant::dnn;
  const auto arms = ablation_arms(rc);
  ASSERT_EQ(arms.size(), 3u);
  for (const auto& a : arms) EXPECT_EQ(a.config.variant, Variant::esm2);
  EXPECT_EQ(arms[0].config.daction_composition, DActionChoice::scart);
  EXPECT_EQ(arms[2].label, "SCart and Wish");
}

TEST(Arms, VariantArmsFollowExperimentList) {
  RunConfig rc;
  rc.experiment.variants = {Variant::esmm, Variant::dnn};
  const auto arms = variant_arms(rc);
  ASSERT_EQ(arms.size(), 2u);
  EXPECT_EQ(arms[0].label, "ESMM");
  EXPECT_EQ(arms[1].config.variant, Variant::dnn);
}

TEST(Arms, SweepGrids) {
  RunConfig rc;
  const auto dropout = sweep_arms(rc, SweepAxis::dropout);
  ASSERT_EQ(dropout.size(), rc.experiment.dropout_grid.size());
  EXPECT_EQ(dropout[0].config.dropout, rc.experiment.dropout_grid[0]);

  const auto layers = sweep_arms(rc, SweepAxis::layers, {3});
  ASSERT_EQ(layers.size(), 1u);
  EXPECT_EQ(layers[0].config.tower_dims, tower_dims_for_depth(3));

  const auto emb = sweep_arms(rc, SweepAxis::emb_dim, {8});
  for (auto d : emb[0].config.embedding_dims) EXPECT_EQ(d, 8u);

  EXPECT_THROW(sweep_arms(rc, SweepAxis::layers, {2.5}), ValidationError);
  EXPECT_THROW(sweep_arms(rc, SweepAxis::dropout, {1.0}), ValidationError);
  EXPECT_EQ(parse_sweep_axis("emb_dim"), SweepAxis::emb_dim);
  EXPECT_THROW(parse_sweep_axis("lr"), ValidationError);
}

TEST(Evaluate, PopulationsAndReportShape) {
  const auto splits = generate_splits(testing::small_generator(6000, 3));
  const auto res = train(splits.train, splits.val, testing::small_train_config(Variant::esm2));
  const auto ref = train(splits.train, splits.val, testing::small_train_config(Variant::esmm));
  const EvalConfig eval;
  const auto r = evaluate(res.final_model, splits.test, eval, &ref.final_model);
  std::size_t clicks = 0;
  for (const auto& rec : splits.test.records) clicks += rec.c;
  EXPECT_EQ(r.impressions, splits.test.records.size());
  EXPECT_EQ(r.ctcvr.samples, splits.test.records.size());
  EXPECT_EQ(r.cvr_all.samples, splits.test.records.size());
  EXPECT_EQ(r.cvr.samples, clicks);
  EXPECT_EQ(r.cvr.f1_table.size(), eval.thresholds.size());
  ASSERT_FALSE(r.grouped.empty());
  EXPECT_EQ(r.grouped[0].bin, "[0,10]");

  const auto text = format_report(r);
  EXPECT_NE(text.find("ESM2"), std::string::npos);
  const auto csv = report_csv(r);
  EXPECT_NE(csv.find("cvr"), std::string::npos);
}

TEST(Evaluate, OracleScoresGiveUnitAuc) {
  const auto splits = generate_splits(testing::small_generator(80000, 4));
  std::vector<ComposedProbs> probs;
  for (const auto& r : splits.test.records) {
    const double b = r.b;
    probs.push_back(ComposedProbs{static_cast<double>(r.c), 0.0, b, b});
  }
  const auto rep = evaluate_probs("oracle", probs, splits.test, EvalConfig{});
  ASSERT_TRUE(rep.ctcvr.auc.has_value());
  EXPECT_EQ(*rep.ctcvr.auc, 1.0);
  if (rep.cvr.auc) EXPECT_EQ(*rep.cvr.auc, 1.0);
}

TEST(Evaluate, MismatchedPopulationRejected) {
  const auto splits = generate_splits(testing::small_generator(1000, 4));
  const std::vector<ComposedProbs> probs(3);
  EXPECT_THROW(evaluate_probs("x", probs, splits.test, EvalConfig{}), ValidationError);
}

TEST(RunArms, SummaryTables) {
  auto g = testing::small_generator(3000, 1);
  RunConfig rc;
  rc.model = testing::small_train_config(Variant::esm2);
  rc.experiment.variants = {Variant::esm2, Variant::dnn};
  std::vector<std::string> log;
  const auto arms = run_arms(g, variant_arms(rc), {1, 2}, rc.eval,
                             [&](const std::string& s) { log.push_back(s); });
  ASSERT_EQ(arms.size(), 2u);
  EXPECT_EQ(log.size(), 4u);
  for (const auto& a : arms) {
    ASSERT_EQ(a.runs.size(), 2u);
    for (const auto& r : a.runs) EXPECT_TRUE(r.ok) << r.error;
  }
  EXPECT_EQ(arms[0].runs[1].seed, 2u);
  const auto csv = summary_csv(arms, rc.eval);
  EXPECT_EQ(csv.substr(0, csv.find(',')), "arm");
  EXPECT_NE(csv.find("\nESM2,2,0,"), std::string::npos);
  EXPECT_NE(summary_text(arms, rc.eval).find("DNN"), std::string::npos);
}

TEST(RunArms, FailedRunIsRecorded) {
  auto g = testing::small_generator(2000, 1);
  Arm bad{"bad", testing::small_train_config(Variant::esm2)};
  bad.config.learning_rate = 1e300;
  bad.config.epochs = 30;
  const auto arms = run_arms(g, {bad}, {1}, EvalConfig{});
  ASSERT_EQ(arms[0].runs.size(), 1u);
  EXPECT_FALSE(arms[0].runs[0].ok);
  EXPECT_FALSE(arms[0].runs[0].error.empty());
  EXPECT_EQ(arms[0].cvr_auc().n, 0u);
}

}  // namespace
}  // namespace esm2
