#pragma once

#include <string>
#include <vector>

#include "dress/evaluation.hpp"
#include "dress/pipeline.hpp"
#include "dress/toml.hpp"

namespace dress::config {

/// Resolved run configuration. Field defaults are the reference
/// hyperparameters (gamma 0.7, loss weights 1.0, controller entropy weight
/// 0.01, imitation entropy weight 0.0001, clip 0.2, evaluation horizon 15).
/// A config file overrides fields per [section]; CLI flags override the
/// file; the resolved result serializes back to canonical text whose hash
/// stamps every checkpoint and report.
struct RunConfig {
  // [run]
  std::string scenario = "myopic-trap";
  uint64_t scenario_seed = 0;
  uint64_t seed = 1;
  std::string out_dir;
  std::vector<std::string> variants = {"dress", "dress-s", "dress-m", "dnnc"};
  int n_users = 200;

  // [features]
  data::FeatureConfig features;

  // [dynamics]
  model::DynamicModelConfig dynamics;

  // [controller]
  ctrl::PPOConfig ppo;
  int actor_hidden = 32;
  int critic_hidden = 32;

  // [imitation]
  pipe::ImitationConfig imitation;

  // [imagination]
  pipe::ImaginationConfig imagination;

  // [dnnc]
  pipe::DnncConfig dnnc;

  // [eval]
  eval::EvalConfig eval_cfg;
  std::vector<int> horizons = {1, 3, 5, 7, 9, 11, 13, 15};

  static RunConfig from_table(const toml::Table& t);
  static RunConfig load(const std::string& path);

  /// Canonical serialization of every resolved field.
  std::string to_toml() const;
  std::string hash() const;

  pipe::PipelineSettings pipeline_settings() const;
  void validate() const;
};

}  // namespace dress::config
