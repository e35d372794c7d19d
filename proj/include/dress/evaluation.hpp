#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dress/env.hpp"
#include "dress/pipeline.hpp"

namespace dress::eval {

using data::Episode;
using data::Session;

struct EvalConfig {
  int horizon = 15;  // H: each episode's window spans its last H+1 sessions
  enum class RewardField { click, order };
  RewardField reward_field = RewardField::click;
  int folds = 5;
  int bootstrap_resamples = 500;

  void validate() const {
    if (horizon < 1) throw ConfigError("eval: horizon must be >= 1");
    if (folds < 2) throw ConfigError("eval: folds must be >= 2");
  }
};

double session_reward(const Session& s, EvalConfig::RewardField field);

/// Fraction of sessions with any product click.
double ctr(const std::vector<const Session*>& sessions);
/// Fraction of sessions with any product order.
double cvr(const std::vector<const Session*>& sessions);
std::vector<const Session*> all_sessions(const std::vector<Episode>& episodes);

/// Per-episode, per-session probabilities of the logged actions.
using TakenProbs = std::vector<std::vector<double>>;

/// Truncated weighted importance sampling: self-normalized estimate over
/// each episode's last H+1 sessions (whole episode when shorter). The
/// per-episode weight is the product of pi_i/b_i over the window, constant
/// across the window's reward terms; products are accumulated in log space
/// and exponentiated after a max-log shift.
double twis(const std::vector<Episode>& episodes, const TakenProbs& pi, const TakenProbs& b,
            const EvalConfig& cfg);
/// Standard error of the TWIS estimate from resampling episodes.
double twis_bootstrap_se(const std::vector<Episode>& episodes, const TakenProbs& pi,
                         const TakenProbs& b, const EvalConfig& cfg, int resamples,
                         uint64_t seed);

/// Mean over all sessions of log(pi_i / b_i) for the taken actions.
double log_ratio(const TakenProbs& pi, const TakenProbs& b);
/// Half L1 distance between two distributions over the same candidates.
double tv_divergence(const Vector& b, const Vector& pi);
/// sum_a b(a) log(b(a)/pi(a)) with 0 log(0/x) := 0.
double kl_divergence(const Vector& b, const Vector& pi);

/// Produces one action distribution per session of an episode.
using DistProvider = std::function<std::vector<Vector>(const Episode&)>;

DistProvider actor_provider(const model::DynamicModel& dynamics, const ctrl::Actor& actor,
                            const data::StoryCatalog& catalog);
DistProvider uniform_provider();
DistProvider logging_provider(const env::EnvParams& env, const env::LoggingPolicy& policy);

TakenProbs taken_probs(const DistProvider& provider, const std::vector<Episode>& episodes);

struct PolicyDifferenceRow {
  std::string policy;
  double mean_log_ratio = 0.0;  // signed mean; magnitude is the headline number
  double mean_tv = 0.0;
  double mean_kl = 0.0;
};

/// Mean log-ratio, total variation, and KL of each policy against the
/// reference over every session; a uniform-policy row is always included.
std::vector<PolicyDifferenceRow> policy_difference_report(
    const std::vector<std::pair<std::string, DistProvider>>& policies,
    const DistProvider& reference, const std::vector<Episode>& episodes);

std::string policy_difference_csv(const std::vector<PolicyDifferenceRow>& rows);

// ---- cross-validated method comparison ----

struct MethodScores {
  std::string method;
  std::vector<double> ctr_folds;
  std::vector<double> cvr_folds;
  double ctr_mean = 0, ctr_std = 0, cvr_mean = 0, cvr_std = 0;
  double ctr_improve_pct = 0, cvr_improve_pct = 0;
  int ctr_wins = 0, cvr_wins = 0;     // folds beating the origin estimate
  double ctr_p = 1.0, cvr_p = 1.0;    // one-sided sign test
};

struct EvalReport {
  int horizon = 0;
  MethodScores origin;
  std::vector<MethodScores> methods;
  std::vector<PolicyDifferenceRow> policy_difference;
  nlohmann::ordered_json to_json() const;
  /// columns: method, metric, mean, std, significance
  std::string estimates_csv() const;
  std::string improvement_csv() const;
};

/// Everything trained on one fold split, reusable across horizons.
struct FoldArtifacts {
  pipe::PipelineBase base;
  std::map<std::string, ctrl::Actor> actors;
  std::vector<Episode> test_episodes;
};

std::vector<FoldArtifacts> train_folds(const data::Dataset& dataset,
                                       const std::vector<pipe::PipelineVariant>& variants,
                                       const pipe::PipelineSettings& settings,
                                       const EvalConfig& cfg, uint64_t seed);

EvalReport evaluate_folds(const std::vector<FoldArtifacts>& folds,
                          const data::StoryCatalog& catalog, const EvalConfig& cfg);

/// k-fold cross-validation: trains every variant per fold and evaluates
/// TWIS-CTR and TWIS-CVR on the held-out fold with the fold's imitation
/// policy as the logging policy; the origin baseline is the unweighted
/// truncated mean of the logged rewards.
EvalReport compare_methods(const data::Dataset& dataset,
                           const std::vector<pipe::PipelineVariant>& variants,
                           const pipe::PipelineSettings& settings, const EvalConfig& cfg,
                           uint64_t seed);

struct HorizonPoint {
  int horizon = 0;
  std::string method;
  double mean = 0, stdev = 0;
};

/// compare_methods across a list of horizons (training once per fold).
std::vector<HorizonPoint> horizon_sweep(const data::Dataset& dataset,
                                        const std::vector<pipe::PipelineVariant>& variants,
                                        const pipe::PipelineSettings& settings,
                                        const EvalConfig& cfg,
                                        const std::vector<int>& horizons, uint64_t seed);

std::string horizon_csv(const std::vector<HorizonPoint>& points);

/// One-sided sign test: probability of at least `wins` successes in
/// `trials` fair coin flips.
double sign_test_p(int wins, int trials);

}  // namespace dress::eval
