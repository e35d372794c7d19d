#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dress/data.hpp"

namespace dress::model {

using data::Dataset;
using data::Episode;
using data::FeatureConfig;
using data::Feedback;
using data::Product;
using data::Query;
using data::Session;
using data::Story;
using nn::ParamStore;
using nn::Tape;
using nn::Var;

struct DynamicModelConfig {
  int hidden_dim = 64;
  int state_dim = 64;
  int reward_hidden = 32;
  double w_T = 1.0;
  double w_D = 1.0;
  double w_P = 1.0;
  double w_Pl = 1.0;
  int epochs = 20;
  int batch_episodes = 8;
  double lr = 1e-3;
  double grad_clip = 5.0;
  double val_fraction = 0.1;
  FeatureConfig features;

  void validate() const;
};

/// Predictions of the reward model for one session.
struct RewardPrediction {
  double story_click = 0.5;                  // y_d_hat
  std::vector<double> product_click;         // y_p_hat, per impressed product
  std::vector<Vector> product_repr;          // y_rp_hat rows, embedding_dim each
};

struct SessionLosses {
  std::optional<double> transition;  // absent on the episode's final session
  double story_click = 0.0;
  double product_click = 0.0;
  double product_repr = 0.0;
  double weighted_total(const DynamicModelConfig& cfg) const {
    return cfg.w_T * transition.value_or(0.0) + cfg.w_D * story_click +
           cfg.w_P * product_click + cfg.w_Pl * product_repr;
  }
};

/// The learned environment: a shared embedding table, a GRU transition core
/// with a next-query head, a state submodule, and a reward MLP with
/// story-click, product-click, and engaged-product-representation heads.
///
/// Parameter layout:
///   embed.table                      vocab x E
///   init.{W,b}                       profile -> hidden
///   gru.{W_z,U_z,b_z,...}            [story|query|feedback] x hidden
///   query.{W,b}                      hidden -> E
///   state.{W,b}                      [hidden|query] -> state
///   reward.core.{W,b}                [state|story|product] -> reward_hidden
///   reward.story.{W,b} reward.click.{W,b} reward.rp.{W,b}
class DynamicModel {
 public:
  DynamicModelConfig cfg;
  int profile_dim = 0;
  ParamStore params;

  static DynamicModel init(const DynamicModelConfig& cfg, int profile_dim, Rng& rng);
  /// Rebuilds a model around checkpointed parameters; dims are validated
  /// against the config.
  static DynamicModel from_params(const DynamicModelConfig& cfg, ParamStore params);

  const Matrix& embedding() const { return params.value("embed.table"); }

  // plain (frozen-parameter) forward path
  Vector init_hidden(const Vector& user_profile) const;
  /// Consumes one session; returns (next hidden state, next-query prediction).
  std::pair<Vector, Vector> transition_step(const Vector& h, const Story& story,
                                            const Vector& query_emb,
                                            const Feedback& feedback,
                                            const std::vector<Product>& impressed) const;
  std::pair<Vector, Vector> transition_step(const Vector& h, const Session& s) const;
  Vector state_repr(const Vector& h, const Vector& query_emb) const;
  RewardPrediction reward_forward(const Vector& s, const Story& story,
                                  const std::vector<Product>& products) const;
  /// h[0..T]: h[0] from the profile, h[i+1] after session i.
  std::vector<Vector> hidden_states(const Episode& e) const;

  Vector story_features(const Story& s) const {
    return data::featurize_story(s, embedding(), cfg.features);
  }
  Vector query_embedding(const Query& q) const {
    return data::featurize_query(q, embedding());
  }
  Vector product_features(const Product& p) const {
    return data::featurize_product(p, embedding());
  }

  // tape path (used by training and the gradient certification suite)
  struct TapeVars {
    Var table;
    nn::GruVars gru;
  };
  TapeVars lease(Tape& t) const;
  Var init_hidden(Tape& t, const TapeVars& tv, const Vector& user_profile) const;
  std::pair<Var, Var> transition_step(Tape& t, const TapeVars& tv, Var h,
                                      const Session& s) const;
  Var state_repr(Tape& t, const TapeVars& tv, Var h, Var query_emb) const;
  struct RewardVars {
    Var story_click;           // 1x1 probability
    std::vector<Var> product_click;
    std::vector<Var> product_repr;  // 1xE each
  };
  RewardVars reward_forward(Tape& t, const TapeVars& tv, Var s, const Session& sess) const;

  /// Sum of the four weighted losses over the whole episode (scaled by
  /// `scale`), built through time on one tape.
  Var episode_loss(Tape& t, const Episode& e, double scale) const;

 private:
  // DynamicModel is mostly a parameter bag; helpers live in dynamics.cpp.
};

/// Plain-path per-session losses against the logged feedback; the
/// transition loss compares against the next session's query features.
SessionLosses session_losses(const RewardPrediction& pred, const Vector& q_hat,
                             const Session& s, const Vector* next_query_features,
                             const Matrix& embedding_table, const FeatureConfig& features);

struct TrainCurvePoint {
  int epoch = 0;  // 0 is the pre-training evaluation
  double transition = 0.0;
  double story_click = 0.0;
  double product_click = 0.0;
  double product_repr = 0.0;
  double total = 0.0;
  double val_total = 0.0;
};

/// Trains on whole episodes (full backpropagation through time), Adam with
/// global gradient-norm clipping; deterministic for a given seed. Throws
/// NumericError with stage diagnostics if the loss goes non-finite.
std::pair<DynamicModel, std::vector<TrainCurvePoint>> train_dynamic_model(
    const Dataset& dataset, const DynamicModelConfig& cfg, uint64_t seed);

std::string curve_to_csv(const std::vector<TrainCurvePoint>& curve);

}  // namespace dress::model
