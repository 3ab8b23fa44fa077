// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <limits>

#include "esm2/config.hpp"
#include "esm2/error.hpp"
#include "esm2/text.hpp"

using namespace esm2;

TEST(Text, FormatDoubleRoundTrips) {
  for (double x : {0.0, 1.0, -2.5, 0.1, 1e-7, 0.0632, 1.0 / 3.0, 6.02214076e23}) {
    EXPECT_EQ(parse_double(format_double(x)), x);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}

TEST(Text, StrictParsersRejectTrailingGarbage) {
  EXPECT_THROW(parse_double("1.5x"), ValidationError);
  EXPECT_THROW(parse_double(""), ValidationError);
  EXPECT_THROW(parse_uint("-3"), ValidationError);
  EXPECT_THROW(parse_uint("3.0"), ValidationError);
  EXPECT_THROW(parse_bool("yes"), ValidationError);
  EXPECT_EQ(parse_uint(" 42 "), 42u);
  EXPECT_EQ(parse_int("-7"), -7);
  EXPECT_TRUE(parse_bool("true"));
  EXPECT_FALSE(parse_bool("0"));
}

TEST(Text, Lists) {
  EXPECT_EQ(parse_double_list("0.1, 0.6,1"), (std::vector<double>{0.1, 0.6, 1.0}));
  EXPECT_EQ(parse_uint_list("64,32,1"), (std::vector<std::uint64_t>{64, 32, 1}));
  EXPECT_EQ(format_list(std::vector<std::uint64_t>{1, 2, 3}), "1,2,3");
  EXPECT_THROW(parse_uint_list("1,,2"), ValidationError);
}

TEST(Text, SigmoidStableAtExtremes) {
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_GT(sigmoid(-800.0), -1.0);
  EXPECT_EQ(sigmoid(-800.0), 0.0);
  EXPECT_EQ(sigmoid(800.0), 1.0);
  EXPECT_NEAR(sigmoid(2.0) + sigmoid(-2.0), 1.0, 1e-15);
}

TEST(Config, DefaultsEchoAndReparseIdentically) {
  const RunConfig rc;
  const auto text = to_text(rc);
  EXPECT_EQ(to_text(parse_run_config(text)), text);
}

TEST(Config, OverridesAreApplied) {
  const auto rc = parse_run_config(
      "; comment\n"
      "[generator]\nnum_impressions = 5000\nseed = 9\nsplit = 0.7,0.1,0.2\n"
      "[model]\nvariant = esmm\ntower_dims = 16,1\nw_ctavr = 0\n"
      "[eval]\nthresholds = 0.5,2\ntie_credit = true\n"
      "[experiment]\nseeds = 3,4\nvariants = esm2,dnn_os\n");
  EXPECT_EQ(rc.generator.num_impressions, 5000u);
  EXPECT_EQ(rc.generator.seed, 9u);
  EXPECT_DOUBLE_EQ(rc.generator.split.test, 0.2);
  EXPECT_EQ(rc.model.variant, Variant::esmm);
  EXPECT_EQ(rc.model.tower_dims, (std::vector<std::size_t>{16, 1}));
  EXPECT_EQ(rc.model.loss_weights.ctavr, 0.0);
  EXPECT_EQ(rc.eval.thresholds, (std::vector<double>{0.5, 2.0}));
  EXPECT_TRUE(rc.eval.tie_credit);
  EXPECT_EQ(rc.experiment.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(rc.experiment.variants, (std::vector<Variant>{Variant::esm2, Variant::dnn_os}));
  // The echo of an overridden config reproduces it.
  EXPECT_EQ(to_text(parse_run_config(to_text(rc))), to_text(rc));
}

TEST(Config, UnknownKeysAndSectionsRejected) {
  EXPECT_THROW(parse_run_config("[model]\nlearning_rat = 0.1\n"), ValidationError);
  EXPECT_THROW(parse_run_config("[modle]\nepochs = 1\n"), ValidationError);
  EXPECT_THROW(parse_run_config("epochs = 1\n"), ValidationError);
}

TEST(Config, DuplicateKeysRejected) {
  EXPECT_THROW(parse_run_config("[model]\nepochs = 1\nepochs = 2\n"), ValidationError);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(parse_run_config("[model]\ndropout = 1.0\n"), ValidationError);
  EXPECT_THROW(parse_run_config("[model]\ntower_dims = 8,4\n"), ValidationError);
  EXPECT_THROW(parse_run_config("[model]\nvariant = gbdt\n"), ValidationError);
  EXPECT_THROW(parse_run_config("[generator]\ntarget_click_rate = 1.5\n"), ValidationError);
  EXPECT_THROW(parse_run_config("[generator]\nsplit = 0.5,0.5,0.5\n"), ValidationError);
  EXPECT_THROW(parse_run_config("[eval]\nthresholds = 0\n"), ValidationError);
  EXPECT_THROW(parse_run_config("[experiment]\nseeds = \n"), ValidationError);
}

TEST(Config, EmptySectionAccepted) {
  EXPECT_NO_THROW(parse_run_config("[eval]\n"));
}

TEST(Config, TowerDimsForDepth) {
  EXPECT_EQ(tower_dims_for_depth(1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(tower_dims_for_depth(3), (std::vector<std::size_t>{64, 32, 1}));
  EXPECT_EQ(tower_dims_for_depth(7), (std::vector<std::size_t>{64, 32, 16, 8, 8, 8, 1}));
  EXPECT_THROW(tower_dims_for_depth(0), ValidationError);
}
