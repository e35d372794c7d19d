#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dress/data.hpp"

namespace dress::env {

/// Ground-truth synthetic search world. A user's hidden intent z follows
/// linear dynamics driven by the dense features of the shown story,
///     z' = A z + B dense(story) + noise,
/// and product/story clicks are logistic in z'. Everything downstream
/// (queries, profiles, episode lengths) is derived from z and the seed, so
/// expected returns are computable exactly when noise is off.
struct EnvParams {
  std::string name;
  uint64_t seed = 0;

  int latent_dim = 2;
  Matrix A;  // latent x latent, spectral radius < 1
  Matrix B;  // latent x dense_story_dim

  // product click: logit = w_click . (z o affinity_p) + b_click
  Vector w_click;
  double b_click = 0.0;
  // product order (conditional on click): logit = w_order . (z o affinity_p) + b_order
  Vector w_order;
  double b_order = 0.0;
  // story click: logit = story_bias + story_w . dense(story) + story_z . z
  Vector story_w;
  Vector story_z;
  double story_bias = 0.0;

  Matrix query_emission;  // vocab_size x latent; row 0 (padding) unused
  double query_temp = 1.0;
  int query_len = 3;

  double noise_scale = 0.0;        // sigma of the intent process noise
  double init_intent_scale = 0.5;  // z0 ~ N(0, scale^2 I)
  Matrix profile_map;              // profile_dim x latent
  double profile_noise = 0.1;

  int n_candidates = 6;     // slate size K
  bool fixed_slate = true;  // whole catalog every session vs random K-subsets
  int n_impressions = 4;
  bool fixed_impressions = true;

  int min_len = 11;
  int max_len = 200;
  double length_power = 2.5;  // episode length ~ truncated power law

  std::vector<data::Story> stories;
  std::vector<data::Product> products;
  std::vector<Vector> product_affinity;  // per product, latent_dim
  int vocab_size = 30;

  int dense_story_dim() const {
    return stories.empty() ? 0 : int(stories.front().dense_features.size());
  }
  int profile_dim() const { return int(profile_map.rows()); }
  double spectral_radius() const;
  const data::Story& story_by_id(int id) const;
  void validate() const;
};

/// Hidden true state of one user plus their private random stream.
struct EnvState {
  Vector z;
  int session_index = 0;
  Rng rng;
};

/// Stochastic behavior policy that produced the logged data. Scores a story
/// by a linear function of its dense features; softmax with temperature
/// gives full support on every slate.
struct LoggingPolicy {
  Vector score_weights;  // over dense story features
  double temperature = 1.0;
  double score(const data::Story& s) const;
  Vector probs(const EnvParams& env, const std::vector<int>& slate) const;
};

struct SlatePage {
  std::vector<int> slate;        // candidate story ids
  std::vector<int> impressions;  // product indices into EnvParams::products
};

struct StepOutcome {
  data::Feedback feedback;
  data::Query next_query;
};

EnvState init_user_state(const EnvParams& env, uint64_t user_id);
Vector user_profile_for(const EnvParams& env, const Vector& z0, Rng& rng);
data::Query emit_query(const EnvParams& env, const Vector& z, Rng& rng);
/// Candidate slate and product impressions for the upcoming session.
SlatePage begin_session(const EnvParams& env, EnvState& state);

double product_click_prob(const EnvParams& env, const Vector& z, int product_idx);
double product_order_prob(const EnvParams& env, const Vector& z, int product_idx);
double story_click_prob(const EnvParams& env, const Vector& z, const data::Story& story);
/// Post-transition intent A z + B dense(story), without noise.
Vector intent_after(const EnvParams& env, const Vector& z, const data::Story& story);
/// P(any impressed product clicked) = 1 - prod_j (1 - p_j) at intent z.
double expected_reward(const EnvParams& env, const Vector& z,
                       const std::vector<int>& impressions);

/// Advances the world one session: updates intent from the chosen story,
/// samples per-product clicks/orders and the story click at the new intent,
/// emits the next query. The state's RNG advances deterministically.
StepOutcome env_step(const EnvParams& env, EnvState& state, const std::vector<int>& slate,
                     int action, const std::vector<int>& impressions);

/// Episode length from the truncated power law on [min_len, max_len].
int sample_episode_length(const EnvParams& env, Rng& rng);

// ---- dataset generation ----

/// Simulates n_users full episodes under the logging policy, recording each
/// action's true propensity. Each episode owns an independent RNG stream
/// derived from (env.seed, user_id), so output is reproducible and
/// independent of generation order.
std::vector<data::Episode> gen_logged_dataset(const EnvParams& env,
                                              const LoggingPolicy& policy, int n_users,
                                              long long user_id_offset = 0);

data::Dataset to_dataset(const EnvParams& env, std::vector<data::Episode> episodes);

/// Observation-driven policy for simulation: sees what a production system
/// would see, never the latent state.
class EpisodeAgent {
 public:
  virtual ~EpisodeAgent() = default;
  virtual void begin_episode(const Vector& user_profile, const data::Query& first_query) = 0;
  virtual Vector action_probs(const data::Query& query, const std::vector<int>& slate,
                              const std::vector<data::Product>& products) = 0;
  /// Called with the completed session (including feedback and next query).
  virtual void observe(const data::Session& session, const data::Query& next_query) = 0;
};

/// Fresh synthetic episodes under an arbitrary agent (no propensities).
std::vector<data::Episode> simulate_episodes(const EnvParams& env, EpisodeAgent& agent,
                                             int n_users, uint64_t seed);

// ---- return oracle ----

/// Policy with oracle access to the latent state; used for exact
/// enumeration and for reference policies (greedy-immediate, constant).
using StatePolicy =
    std::function<Vector(const EnvParams&, const Vector& z, const std::vector<int>& slate)>;

StatePolicy constant_policy(int slate_index);
/// Picks the action maximizing the expected immediate reward; ties break to
/// the lowest index.
StatePolicy greedy_immediate_policy();

struct OracleValue {
  double value = 0.0;
  double std_error = 0.0;  // zero in exact mode
};

/// Expected discounted return sum_t gamma^(t-1) E[r_t] over `horizon` steps
/// starting from intent z0, by exhaustive enumeration of action sequences
/// (rewards marginalize out in closed form). Requires a noise-free world
/// with fixed slate and impressions; enumeration stops with an error once
/// max_branches action expansions have been visited.
OracleValue oracle_policy_value_exact(const EnvParams& env, const StatePolicy& policy,
                                      const Vector& z0, int horizon, double gamma,
                                      long long max_branches = 1000000);

/// Monte Carlo estimate of the same quantity with sampled rewards; reports
/// the standard error of the mean.
OracleValue oracle_policy_value_mc(const EnvParams& env, const StatePolicy& policy,
                                   const Vector& z0, int horizon, double gamma,
                                   int n_rollouts, uint64_t seed);

/// Monte Carlo value of an observation-driven agent on fresh users (z0 and
/// profiles resampled per rollout).
OracleValue mc_agent_value(const EnvParams& env, EpisodeAgent& agent, int horizon,
                           double gamma, int n_rollouts, uint64_t seed);

// ---- scenarios ----

/// Named, seeded worlds:
///   "myopic-trap": the story with the best immediate click-through steers
///       intent away from clickable products; verified at construction by
///       the exact oracle (best constant policy beats the greedy-immediate
///       policy by more than 5% relative).
///   "neutral": B = 0, so stories do not move intent; larger catalog with
///       sampled K-candidate slates.
///   "noisy": the trap world with substantial process noise.
EnvParams make_scenario(const std::string& name, uint64_t seed = 0);

/// Default behavior policy used to log data for a scenario.
LoggingPolicy default_logging_policy(const EnvParams& env);

/// Scenario files: key-value text holding the scenario name, seed, and any
/// scalar overrides; the catalogs rebuild deterministically from the seed.
void save_scenario(const EnvParams& env, const std::string& path);
EnvParams load_scenario(const std::string& path);

}  // namespace dress::env
