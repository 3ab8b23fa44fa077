// SPDX-License-Identifier: Apache-2.0
#pragma once

// Sectioned key = value run configuration:
//
//   [generator]   GeneratorConfig fields
//   [model]       TrainConfig fields
//   [eval]        thresholds, tie credit
//   [paths]       data / checkpoint / report directories
//   [experiment]  seeds and sweep grids
//
// Unknown sections and keys are rejected. to_text() emits every key in a
// fixed order, which is the canonical echo embedded in artifacts.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "esm2/datagen.hpp"
#include "esm2/training.hpp"

namespace esm2 {

struct EvalConfig {
  std::vector<double> thresholds{0.1, 0.6, 1.0};  // top-k percent
  bool tie_credit = false;
};

struct PathsConfig {
  std::string data_dir = "data";
  std::string checkpoint_dir = "checkpoints";
  std::string report_dir = "reports";
};

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<double> dropout_grid{0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  std::vector<std::uint64_t> layers_grid{2, 3, 4, 5, 6, 7};
  std::vector<std::uint64_t> emb_dim_grid{4, 8, 16, 32, 64, 128};
  std::vector<Variant> variants{Variant::esm2, Variant::esmm, Variant::dnn_os, Variant::dnn};
};

struct RunConfig {
  GeneratorConfig generator;
  TrainConfig model;
  EvalConfig eval;
  PathsConfig paths;
  ExperimentConfig experiment;
};

/// section -> key -> raw value, as parsed.
using ConfigSections = std::map<std::string, std::map<std::string, std::string>>;

ConfigSections parse_sections(std::string_view text);

RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

std::string to_text(const TrainConfig& c);
std::string to_text(const EvalConfig& c);
std::string to_text(const PathsConfig& c);
std::string to_text(const ExperimentConfig& c);
std::string to_text(const RunConfig& c);

/// Applies one section's keys; unknown keys throw ValidationError.
void apply_section(GeneratorConfig& c, const std::map<std::string, std::string>& kv);
void apply_section(TrainConfig& c, const std::map<std::string, std::string>& kv);

/// Hidden widths for a tower with `layers` layers (output included):
/// 64, 32, 16, 8, 8, ... then 1.
std::vector<std::size_t> tower_dims_for_depth(std::size_t layers);

}  // namespace esm2
