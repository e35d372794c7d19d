#pragma once

#include <string>
#include <vector>

#include "dress/nn.hpp"

namespace dress::ctrl {

using nn::ParamStore;
using nn::Tape;
using nn::Var;

struct PPOConfig {
  double gamma = 0.7;
  double clip_eps = 0.2;
  double entropy_weight = 0.01;
  int minibatch = 256;
  int epochs = 4;
  double lr = 1e-3;
  double grad_clip = 5.0;
  bool normalize_adv = true;

  void validate() const {
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("ppo: gamma must be in [0, 1]");
    if (clip_eps <= 0.0) throw ConfigError("ppo: clip epsilon must be > 0");
    if (minibatch < 1 || epochs < 1) throw ConfigError("ppo: invalid batch settings");
  }
};

/// One logged or imagined decision point. States are dynamic-model hidden
/// vectors; candidate story features are rows of cand_feats.
struct TransitionSample {
  enum class Source { logged, imagined };
  Vector state;
  Vector next_state;
  Matrix cand_feats;  // K x story_dim
  int action = 0;
  double reward = 0.0;
  bool terminal = false;
  double pi_old = 1.0;
  Source source = Source::logged;
};

/// Value head over the hidden state: one tanh layer then a linear scalar.
struct Critic {
  ParamStore params;
  static Critic init(int state_dim, int hidden, Rng& rng);
  static Critic from_params(ParamStore params);
  double value(const Vector& h) const;
  Var value(Tape& t, Var h_batch) const;  // rows of states -> column of values
};

/// Policy head: per-candidate logit from [state | candidate features],
/// softmax over the slate.
struct Actor {
  ParamStore params;
  static Actor init(int state_dim, int story_feat_dim, int hidden, Rng& rng);
  static Actor from_params(ParamStore params);
  Vector logits(const Vector& h, const Matrix& cand_feats) const;
  Vector probs(const Vector& h, const Matrix& cand_feats) const;
  /// Batched logits for stacked [state | candidate] rows.
  Var logits(Tape& t, Var input_rows) const;
};

double td_target(double r, double v_next, double gamma, bool terminal);
double advantage(double r, double v_s, double v_next, double gamma, bool terminal);
/// min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv) with ratio = p_new / p_old.
double ppo_clip_term(double p_new, double p_old, double adv, double eps);
double entropy(const Vector& dist);

Vector policy_forward(const Vector& h, const Matrix& cand_feats, const Actor& actor);
double value_forward(const Vector& h, const Critic& critic);

struct UpdateMetrics {
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double entropy = 0.0;
  double value_loss = 0.0;
  double actor_objective = 0.0;
};

/// Mean squared error of the critic against fixed targets (one state per
/// row). Targets enter as constants, so gradients flow only through the
/// value head.
Var critic_loss(Tape& t, const Critic& critic, const Matrix& states, const Matrix& targets);

struct ActorBatchItem {
  const Vector* state;
  const Matrix* cand_feats;
  int action = 0;
  double pi_old = 1.0;
  double adv = 0.0;
};

struct ActorObjectiveStats {
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double mean_entropy = 0.0;
};

/// Mean over the batch of min(ratio adv, clip(ratio) adv) + w H(pi(.|s)).
Var actor_objective(Tape& t, const Actor& actor, const std::vector<ActorBatchItem>& batch,
                    double clip_eps, double entropy_weight,
                    ActorObjectiveStats* stats = nullptr);

std::string metrics_to_csv(const std::vector<UpdateMetrics>& m);

/// One call of the PPO update loop: TD targets and advantages come from the
/// critic as of call entry; then cfg.epochs passes of minibatch updates,
/// critic step (squared error against the fixed targets) followed by an
/// actor step (clipped ratio objective plus entropy bonus). Deterministic
/// given the RNG state. Returns one metrics row per minibatch update.
std::vector<UpdateMetrics> controller_learning(const std::vector<TransitionSample>& samples,
                                               Critic& critic, Actor& actor,
                                               const PPOConfig& cfg, Rng& rng);

}  // namespace dress::ctrl
