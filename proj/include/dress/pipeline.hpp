#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "dress/controller.hpp"
#include "dress/dynamics.hpp"

namespace dress::pipe {

using ctrl::Actor;
using ctrl::Critic;
using ctrl::PPOConfig;
using ctrl::TransitionSample;
using data::Dataset;
using model::DynamicModel;

struct ImitationConfig {
  double entropy_weight = 0.0001;
  int epochs = 10;
  int minibatch = 256;
  double lr = 1e-3;
  double grad_clip = 5.0;

  void validate() const {
    if (entropy_weight < 0.0) throw ConfigError("imitation: entropy weight must be >= 0");
    if (epochs < 1 || minibatch < 1) throw ConfigError("imitation: invalid settings");
  }
};

struct ImaginationConfig {
  int rollout_length = 5;       // T_img
  int rollouts_per_iter = 500;
  int iterations = 10;          // outer loop budget
  bool sample_rewards = true;   // false: expected reward 1 - prod(1 - y_p)
  double early_stop_rel = 0.001;
  int early_stop_window = 3;

  void validate() const {
    if (rollout_length < 1) throw ConfigError("imagination: rollout length must be >= 1");
    if (rollouts_per_iter < 1) throw ConfigError("imagination: rollouts must be >= 1");
    if (iterations < 0) throw ConfigError("imagination: iterations must be >= 0");
  }
};

struct DnncConfig {
  double kl_weight = 1.0;
  int epochs = 10;
  int minibatch = 256;
  double lr = 1e-3;
  double grad_clip = 5.0;
};

enum class PipelineVariant { DRESS, DRESS_S, DRESS_M, DNNC };
PipelineVariant variant_from_string(const std::string& s);
std::string to_string(PipelineVariant v);

/// One supervised decision point for imitation: frozen hidden state, the
/// slate's feature rows, and the logged action.
struct ImitationSample {
  Vector state;
  Matrix cand_feats;
  int action = 0;
};

/// Mean over samples of -log pi(a|s) - w * H(pi(.|s)).
double imitation_loss(const Actor& actor, const std::vector<ImitationSample>& samples,
                      double entropy_weight);

/// The same objective as a differentiable tape expression over a batch.
nn::Var imitation_loss_var(nn::Tape& t, const Actor& actor,
                           const std::vector<const ImitationSample*>& batch,
                           double entropy_weight);

/// Precomputes hidden states and slate features for every logged session.
std::vector<ImitationSample> collect_imitation_samples(const Dataset& dataset,
                                                       const DynamicModel& dynamics);

/// Fits the actor to the logged actions by minibatch Adam on
/// imitation_loss; returns the imitation policy. Deterministic per seed.
Actor controller_imitation(const Dataset& dataset, const DynamicModel& dynamics,
                           const ImitationConfig& cfg, int actor_hidden, uint64_t seed,
                           std::vector<double>* loss_curve = nullptr);

/// Builds PPO transition samples from the logged episodes; pi_old is the
/// recorded propensity, falling back to the reference policy's probability
/// where the log carries none.
std::vector<TransitionSample> logged_transition_samples(const Dataset& dataset,
                                                        const DynamicModel& dynamics,
                                                        const Actor& reference);

/// Model-based rollouts: from randomly chosen logged sessions, replay the
/// episode prefix to a hidden state, then alternate actor sampling and
/// dynamic-model prediction for rollout_length fictional sessions. The
/// slate and impressed products stay those of the start session; predicted
/// query embeddings feed the state directly. Every sample records the
/// actor's probability at sampling time as pi_old.
std::vector<TransitionSample> imagine(const DynamicModel& dynamics, const Actor& actor,
                                      const Dataset& dataset, const ImaginationConfig& cfg,
                                      uint64_t seed);

/// Supervised story-click policy with KL regularization toward pi0.
Actor dnnc_train(const Dataset& dataset, const DynamicModel& dynamics, const Actor& pi0,
                 const DnncConfig& cfg, uint64_t seed);

struct PipelineSettings {
  model::DynamicModelConfig dynamics;
  PPOConfig ppo;
  ImitationConfig imitation;
  ImaginationConfig imagination;
  DnncConfig dnnc;
  int actor_hidden = 32;
  int critic_hidden = 32;
  uint64_t seed = 1;
};

struct PipelineResult {
  DynamicModel dynamics;
  Actor imitation;  // pi0
  Actor actor;
  Critic critic;
  bool has_critic = true;
  nlohmann::ordered_json report;
};

/// The variant-independent stages: trained dynamic model and imitation
/// policy. Identical across variants for a given seed, so method
/// comparisons train it once and branch.
struct PipelineBase {
  DynamicModel dynamics;
  Actor imitation;
  nlohmann::ordered_json stage_report;
};

PipelineBase run_pipeline_base(const Dataset& dataset, const PipelineSettings& settings);

/// Full training pipeline: dynamic model, imitation policy, one PPO pass
/// over the logged data, then imagination/PPO iterations. Variants:
/// DRESS_M forces gamma = 0, DRESS_S skips imagination, DNNC replaces the
/// reinforcement stages with the regularized click classifier.
PipelineResult run_dress_pipeline(const Dataset& dataset, PipelineVariant variant,
                                  const PipelineSettings& settings);
PipelineResult run_dress_pipeline(const Dataset& dataset, PipelineVariant variant,
                                  const PipelineSettings& settings,
                                  const PipelineBase& base);

}  // namespace dress::pipe
