#include "dress/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dress/toml.hpp"

namespace dress::env {

using data::Episode;
using data::Feedback;
using data::Product;
using data::Query;
using data::Session;
using data::Story;

double EnvParams::spectral_radius() const {
  Eigen::EigenSolver<Matrix> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

const Story& EnvParams::story_by_id(int id) const {
  for (const Story& s : stories)
    if (s.story_id == id) return s;
  throw ContractError("env: unknown story id " + std::to_string(id));
}

void EnvParams::validate() const {
  if (noise_scale < 0.0) throw ContractError("env: noise_scale must be >= 0");
  if (spectral_radius() >= 1.0)
    throw ContractError("env: intent drift matrix must have spectral radius < 1, got " +
                        std::to_string(spectral_radius()));
  if (stories.empty() || products.empty()) throw ContractError("env: empty catalog");
  if (product_affinity.size() != products.size())
    throw ContractError("env: product affinity count mismatch");
  if (n_candidates < 1 || n_candidates > int(stories.size()))
    throw ContractError("env: n_candidates out of range");
  if (n_impressions < 1 || n_impressions > int(products.size()))
    throw ContractError("env: n_impressions out of range");
}

double LoggingPolicy::score(const Story& s) const {
  return score_weights.dot(s.dense_features);
}

Vector LoggingPolicy::probs(const EnvParams& env, const std::vector<int>& slate) const {
  if (temperature <= 0.0) throw ContractError("logging policy: temperature must be > 0");
  Vector logits(slate.size());
  for (size_t i = 0; i < slate.size(); ++i)
    logits[Eigen::Index(i)] = score(env.story_by_id(slate[i])) / temperature;
  return nn::softmax(logits);
}

EnvState init_user_state(const EnvParams& env, uint64_t user_id) {
  EnvState st{Vector::Zero(env.latent_dim), 0, Rng::derive(env.seed, user_id)};
  for (int i = 0; i < env.latent_dim; ++i) st.z[i] = env.init_intent_scale * st.rng.normal();
  return st;
}

Vector user_profile_for(const EnvParams& env, const Vector& z0, Rng& rng) {
  Vector p = env.profile_map * z0;
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += env.profile_noise * rng.normal();
  return p;
}

Query emit_query(const EnvParams& env, const Vector& z, Rng& rng) {
  // token distribution: softmax(emission . z / temp) over ids 1..vocab-1
  Vector logits = env.query_emission * z / env.query_temp;
  logits[0] = -1e30;  // padding token never emitted
  Vector probs = nn::softmax(logits);
  Query q;
  q.token_ids.reserve(env.query_len);
  for (int i = 0; i < env.query_len; ++i) q.token_ids.push_back(rng.categorical(probs));
  return q;
}

SlatePage begin_session(const EnvParams& env, EnvState& state) {
  SlatePage page;
  if (env.fixed_slate) {
    for (int i = 0; i < env.n_candidates; ++i) page.slate.push_back(env.stories[i].story_id);
  } else {
    std::vector<int> idx =
        state.rng.sample_without_replacement(int(env.stories.size()), env.n_candidates);
    std::sort(idx.begin(), idx.end());
    for (int i : idx) page.slate.push_back(env.stories[i].story_id);
  }
  if (env.fixed_impressions) {
    for (int i = 0; i < env.n_impressions; ++i) page.impressions.push_back(i);
  } else {
    page.impressions =
        state.rng.sample_without_replacement(int(env.products.size()), env.n_impressions);
    std::sort(page.impressions.begin(), page.impressions.end());
  }
  return page;
}

double product_click_prob(const EnvParams& env, const Vector& z, int product_idx) {
  const Vector& v = env.product_affinity[product_idx];
  return nn::sigmoid(env.w_click.dot(z.cwiseProduct(v)) + env.b_click);
}

double product_order_prob(const EnvParams& env, const Vector& z, int product_idx) {
  const Vector& v = env.product_affinity[product_idx];
  return nn::sigmoid(env.w_order.dot(z.cwiseProduct(v)) + env.b_order);
}

double story_click_prob(const EnvParams& env, const Vector& z, const Story& story) {
  return nn::sigmoid(env.story_bias + env.story_w.dot(story.dense_features) +
                     env.story_z.dot(z));
}

Vector intent_after(const EnvParams& env, const Vector& z, const Story& story) {
  return env.A * z + env.B * story.dense_features;
}

double expected_reward(const EnvParams& env, const Vector& z,
                       const std::vector<int>& impressions) {
  double none = 1.0;
  for (int p : impressions) none *= 1.0 - product_click_prob(env, z, p);
  return 1.0 - none;
}

StepOutcome env_step(const EnvParams& env, EnvState& state, const std::vector<int>& slate,
                     int action, const std::vector<int>& impressions) {
  if (action < 0 || action >= int(slate.size()))
    throw ContractError("env_step: action " + std::to_string(action) +
                        " out of range for slate of " + std::to_string(slate.size()));
  const Story& story = env.story_by_id(slate[action]);
  Vector z = intent_after(env, state.z, story);
  if (env.noise_scale > 0.0)
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] += env.noise_scale * state.rng.normal();

  StepOutcome out;
  out.feedback.product_clicked.resize(impressions.size(), 0);
  out.feedback.product_ordered.resize(impressions.size(), 0);
  for (size_t j = 0; j < impressions.size(); ++j) {
    int p = impressions[j];
    if (state.rng.bernoulli(product_click_prob(env, z, p))) {
      out.feedback.product_clicked[j] = 1;
      out.feedback.engaged_product_ids.push_back(env.products[p].product_id);
      if (state.rng.bernoulli(product_order_prob(env, z, p)))
        out.feedback.product_ordered[j] = 1;
    }
  }
  out.feedback.story_clicked = state.rng.bernoulli(story_click_prob(env, z, story)) ? 1 : 0;
  out.next_query = emit_query(env, z, state.rng);

  state.z = std::move(z);
  state.session_index += 1;
  return out;
}

int sample_episode_length(const EnvParams& env, Rng& rng) {
  if (env.min_len > env.max_len) throw ContractError("env: min_len > max_len");
  if (env.min_len == env.max_len) return env.min_len;
  // inverse-CDF over the discrete truncated power law
  double u = rng.uniform01();
  double total = 0.0;
  for (int l = env.min_len; l <= env.max_len; ++l) total += std::pow(double(l), -env.length_power);
  double acc = 0.0;
  for (int l = env.min_len; l <= env.max_len; ++l) {
    acc += std::pow(double(l), -env.length_power) / total;
    if (u < acc) return l;
  }
  return env.max_len;
}

namespace {

Session make_session(const EnvParams& env, long long t, Query query, const SlatePage& page,
                     int action, const StepOutcome& out, std::optional<double> propensity) {
  Session s;
  s.t = t;
  s.query = std::move(query);
  s.story_shown = env.story_by_id(page.slate[action]);
  s.candidate_ids = page.slate;
  for (int p : page.impressions) s.impressed_products.push_back(env.products[p]);
  s.feedback = out.feedback;
  s.logged_propensity = propensity;
  return s;
}

}  // namespace

std::vector<Episode> gen_logged_dataset(const EnvParams& env, const LoggingPolicy& policy,
                                        int n_users, long long user_id_offset) {
  if (n_users < 1) throw ContractError("gen_logged_dataset: n_users must be >= 1");
  env.validate();
  std::vector<Episode> episodes;
  episodes.reserve(n_users);
  for (int u = 0; u < n_users; ++u) {
    long long uid = user_id_offset + u;
    EnvState state = init_user_state(env, uint64_t(uid));
    Episode e;
    e.user_id = uid;
    e.user_profile = user_profile_for(env, state.z, state.rng);
    int len = sample_episode_length(env, state.rng);
    Query query = emit_query(env, state.z, state.rng);
    for (int t = 0; t < len; ++t) {
      SlatePage page = begin_session(env, state);
      Vector probs = policy.probs(env, page.slate);
      int action = state.rng.categorical(probs);
      StepOutcome out = env_step(env, state, page.slate, action, page.impressions);
      e.sessions.push_back(
          make_session(env, t + 1, std::move(query), page, action, out, probs[action]));
      query = std::move(out.next_query);
    }
    data::validate_episode(e);
    episodes.push_back(std::move(e));
  }
  return episodes;
}

data::Dataset to_dataset(const EnvParams& env, std::vector<Episode> episodes) {
  data::Dataset ds;
  ds.episodes = std::move(episodes);
  for (const Story& s : env.stories) ds.catalog.put(s);
  return ds;
}

std::vector<Episode> simulate_episodes(const EnvParams& env, EpisodeAgent& agent,
                                       int n_users, uint64_t seed) {
  env.validate();
  std::vector<Episode> episodes;
  episodes.reserve(n_users);
  for (int u = 0; u < n_users; ++u) {
    EnvState state = init_user_state(env, splitmix64(seed) ^ uint64_t(u));
    Episode e;
    e.user_id = u;
    e.user_profile = user_profile_for(env, state.z, state.rng);
    int len = sample_episode_length(env, state.rng);
    Query query = emit_query(env, state.z, state.rng);
    agent.begin_episode(e.user_profile, query);
    for (int t = 0; t < len; ++t) {
      SlatePage page = begin_session(env, state);
      std::vector<Product> products;
      for (int p : page.impressions) products.push_back(env.products[p]);
      Vector probs = agent.action_probs(query, page.slate, products);
      int action = state.rng.categorical(probs);
      StepOutcome out = env_step(env, state, page.slate, action, page.impressions);
      Session s = make_session(env, t + 1, std::move(query), page, action, out, std::nullopt);
      query = std::move(out.next_query);
      agent.observe(s, query);
      e.sessions.push_back(std::move(s));
    }
    episodes.push_back(std::move(e));
  }
  return episodes;
}

StatePolicy constant_policy(int slate_index) {
  return [slate_index](const EnvParams&, const Vector&, const std::vector<int>& slate) {
    if (slate_index < 0 || slate_index >= int(slate.size()))
      throw ContractError("constant_policy: index out of slate range");
    Vector p = Vector::Zero(slate.size());
    p[slate_index] = 1.0;
    return p;
  };
}

StatePolicy greedy_immediate_policy() {
  return [](const EnvParams& env, const Vector& z, const std::vector<int>& slate) {
    std::vector<int> impressions;
    for (int i = 0; i < env.n_impressions; ++i) impressions.push_back(i);
    int best = 0;
    double best_r = -1.0;
    for (size_t a = 0; a < slate.size(); ++a) {
      double r =
          expected_reward(env, intent_after(env, z, env.story_by_id(slate[a])), impressions);
      if (r > best_r + 1e-15) {
        best_r = r;
        best = int(a);
      }
    }
    Vector p = Vector::Zero(slate.size());
    p[best] = 1.0;
    return p;
  };
}

namespace {

struct ExactWalker {
  const EnvParams& env;
  const StatePolicy& policy;
  int horizon;
  double gamma;
  long long max_branches;
  long long branches = 0;
  std::vector<int> slate;
  std::vector<int> impressions;

  double walk(const Vector& z, int depth) {
    if (depth == horizon) return 0.0;
    Vector probs = policy(env, z, slate);
    double value = 0.0;
    for (Eigen::Index a = 0; a < probs.size(); ++a) {
      if (probs[a] <= 1e-12) continue;
      if (++branches > max_branches)
        throw ContractError("exact oracle: branch budget of " +
                            std::to_string(max_branches) + " exceeded");
      Vector zn = intent_after(env, z, env.story_by_id(slate[a]));
      double r = expected_reward(env, zn, impressions);
      value += probs[a] * (r + gamma * walk(zn, depth + 1));
    }
    return value;
  }
};

}  // namespace

OracleValue oracle_policy_value_exact(const EnvParams& env, const StatePolicy& policy,
                                      const Vector& z0, int horizon, double gamma,
                                      long long max_branches) {
  env.validate();
  if (env.noise_scale != 0.0)
    throw ContractError("exact oracle requires a noise-free world (sigma = 0)");
  if (!env.fixed_slate || !env.fixed_impressions)
    throw ContractError("exact oracle requires fixed slate and impressions");
  ExactWalker w{env, policy, horizon, gamma, max_branches};
  for (int i = 0; i < env.n_candidates; ++i) w.slate.push_back(env.stories[i].story_id);
  for (int i = 0; i < env.n_impressions; ++i) w.impressions.push_back(i);
  return {w.walk(z0, 0), 0.0};
}

OracleValue oracle_policy_value_mc(const EnvParams& env, const StatePolicy& policy,
                                   const Vector& z0, int horizon, double gamma,
                                   int n_rollouts, uint64_t seed) {
  env.validate();
  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < n_rollouts; ++r) {
    EnvState state{z0, 0, Rng::derive(seed, uint64_t(r))};
    double ret = 0.0, disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      SlatePage page = begin_session(env, state);
      Vector probs = policy(env, state.z, page.slate);
      int action = state.rng.categorical(probs);
      StepOutcome out = env_step(env, state, page.slate, action, page.impressions);
      ret += disc * (out.feedback.any_product_click() ? 1.0 : 0.0);
      disc *= gamma;
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  double mean = sum / n_rollouts;
  double var = std::max(0.0, sum_sq / n_rollouts - mean * mean);
  return {mean, std::sqrt(var / n_rollouts)};
}

OracleValue mc_agent_value(const EnvParams& env, EpisodeAgent& agent, int horizon,
                           double gamma, int n_rollouts, uint64_t seed) {
  env.validate();
  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < n_rollouts; ++r) {
    EnvState state = init_user_state(env, splitmix64(seed) ^ uint64_t(r));
    Vector profile = user_profile_for(env, state.z, state.rng);
    Query query = emit_query(env, state.z, state.rng);
    agent.begin_episode(profile, query);
    double ret = 0.0, disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      SlatePage page = begin_session(env, state);
      std::vector<Product> products;
      for (int p : page.impressions) products.push_back(env.products[p]);
      Vector probs = agent.action_probs(query, page.slate, products);
      int action = state.rng.categorical(probs);
      StepOutcome out = env_step(env, state, page.slate, action, page.impressions);
      ret += disc * (out.feedback.any_product_click() ? 1.0 : 0.0);
      disc *= gamma;
      Session s = make_session(env, t + 1, std::move(query), page, action, out, std::nullopt);
      query = std::move(out.next_query);
      agent.observe(s, query);
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  double mean = sum / n_rollouts;
  double var = std::max(0.0, sum_sq / n_rollouts - mean * mean);
  return {mean, std::sqrt(var / n_rollouts)};
}

// ---- scenarios ----

namespace {

std::vector<int> random_tokens(Rng& rng, int n, int vocab) {
  std::vector<int> out;
  for (int i = 0; i < n; ++i) out.push_back(1 + rng.uniform_int(vocab - 1));
  return out;
}

void build_catalog(EnvParams& env, int n_stories, int n_products,
                   const std::vector<Vector>& effect_profiles) {
  Rng rng = Rng::derive(env.seed, fnv1a64("catalog:" + env.name));
  env.stories.clear();
  env.products.clear();
  env.product_affinity.clear();
  for (int i = 0; i < n_stories; ++i) {
    Story s;
    s.story_id = 100 + i;
    s.title_token_ids = random_tokens(rng, 3, env.vocab_size);
    s.product_title_token_ids = random_tokens(rng, 3, env.vocab_size);
    Vector dense(4);
    if (i < int(effect_profiles.size())) {
      dense[0] = effect_profiles[i][0];
      dense[1] = effect_profiles[i][1];
    } else {
      dense[0] = rng.uniform(0.0, 0.5);
      dense[1] = rng.uniform(0.0, 0.5);
    }
    dense[2] = rng.uniform(-0.5, 0.5);
    dense[3] = rng.uniform(-0.5, 0.5);
    s.dense_features = dense;
    env.stories.push_back(std::move(s));
  }
  for (int i = 0; i < n_products; ++i) {
    Product p;
    p.product_id = 1000 + i;
    p.title_token_ids = random_tokens(rng, 3, env.vocab_size);
    env.products.push_back(std::move(p));
    Vector v(env.latent_dim);
    v[0] = 0.9 + 0.2 * rng.uniform01();  // clickability sits on the first intent axis
    for (int d = 1; d < env.latent_dim; ++d) v[d] = 0.05 * rng.uniform(-1.0, 1.0);
    env.product_affinity.push_back(std::move(v));
  }
  env.query_emission = Matrix::Zero(env.vocab_size, env.latent_dim);
  Rng qrng = Rng::derive(env.seed, fnv1a64("emission:" + env.name));
  for (int v = 1; v < env.vocab_size; ++v)
    for (int d = 0; d < env.latent_dim; ++d) env.query_emission(v, d) = qrng.uniform(-1.5, 1.5);
  env.profile_map = Matrix::Zero(4, env.latent_dim);
  Rng prng = Rng::derive(env.seed, fnv1a64("profile:" + env.name));
  for (int r = 0; r < 4; ++r)
    for (int d = 0; d < env.latent_dim; ++d) env.profile_map(r, d) = prng.uniform(-1.0, 1.0);
}

EnvParams trap_world(uint64_t seed) {
  EnvParams env;
  env.name = "myopic-trap";
  env.seed = seed;
  env.latent_dim = 2;
  env.A = Matrix(2, 2);
  env.A << 0.5, 0.9, 0.0, 0.6;
  env.B = Matrix::Zero(2, 4);
  env.B(0, 0) = 0.7;
  env.B(1, 1) = 0.7;
  env.w_click = Vector(2);
  env.w_click << 1.0, 0.0;
  env.b_click = -2.0;
  env.w_order = Vector(2);
  env.w_order << 0.8, 0.0;
  env.b_order = -2.2;
  env.story_w = Vector(4);
  env.story_w << 0.9, -0.2, 0.0, 0.0;  // flashy stories draw story clicks
  env.story_z = Vector(2);
  env.story_z << 0.2, 0.0;
  env.story_bias = -0.8;
  env.noise_scale = 0.0;
  env.init_intent_scale = 0.5;
  env.profile_noise = 0.1;
  env.vocab_size = 30;
  env.query_len = 3;
  env.query_temp = 1.0;
  env.n_candidates = 6;
  env.fixed_slate = true;
  env.n_impressions = 2;
  env.fixed_impressions = true;
  env.min_len = 11;
  env.max_len = 60;
  env.length_power = 2.5;
  // story effect profiles (dense dims 0-1): index 0 is the trap story (best
  // immediate clicks, drags the second intent axis down), index 1 invests in
  // the second axis that feeds clickability through A's coupling.
  std::vector<Vector> profiles(6, Vector(2));
  profiles[0] << 1.0, -0.25;
  profiles[1] << 0.0, 1.0;
  profiles[2] << 0.5, 0.0;
  profiles[3] << 0.0, 0.5;
  profiles[4] << 0.35, 0.2;
  profiles[5] << 0.15, 0.35;
  build_catalog(env, 6, 2, profiles);
  return env;
}

void verify_trap(const EnvParams& env) {
  // construction-time check: the greedy-immediate policy must lose to the
  // best constant policy by more than 5% relative on the exact oracle
  Vector z0 = Vector::Zero(env.latent_dim);
  double greedy =
      oracle_policy_value_exact(env, greedy_immediate_policy(), z0, 40, 0.7).value;
  double best_const = -1.0;
  for (int a = 0; a < env.n_candidates; ++a)
    best_const = std::max(
        best_const, oracle_policy_value_exact(env, constant_policy(a), z0, 40, 0.7).value);
  if (best_const <= 1.05 * greedy)
    throw NumericError("myopic-trap construction failed: best constant value " +
                       std::to_string(best_const) + " vs greedy " + std::to_string(greedy));
}

}  // namespace

EnvParams make_scenario(const std::string& name, uint64_t seed) {
  if (name == "myopic-trap") {
    EnvParams env = trap_world(seed);
    env.validate();
    verify_trap(env);
    return env;
  }
  if (name == "neutral") {
    EnvParams env = trap_world(seed);
    env.name = "neutral";
    env.B.setZero();
    env.n_candidates = 10;
    env.fixed_slate = false;
    env.n_impressions = 2;
    env.fixed_impressions = false;
    env.noise_scale = 0.0;
    env.min_len = 11;
    env.max_len = 40;
    std::vector<Vector> profiles;  // no engineered effects; all decoys
    build_catalog(env, 25, 4, profiles);
    env.validate();
    return env;
  }
  if (name == "noisy") {
    EnvParams env = trap_world(seed);
    env.name = "noisy";
    env.noise_scale = 0.3;
    env.validate();
    return env;
  }
  throw ContractError("unknown scenario: " + name);
}

LoggingPolicy default_logging_policy(const EnvParams& env) {
  LoggingPolicy b;
  b.score_weights = Vector(env.dense_story_dim());
  if (env.name == "neutral") {
    b.score_weights << 0.5, -0.3, 0.2, 0.1;
    b.temperature = 1.0;
  } else {
    // production-style bias toward immediately clickable stories
    b.score_weights << 0.6, 0.15, 0.1, -0.1;
    b.temperature = 0.8;
  }
  return b;
}

void save_scenario(const EnvParams& env, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open scenario file for writing: " + path);
  out << "[scenario]\n";
  out << "name = " << toml::quote(env.name) << "\n";
  out << "seed = " << env.seed << "\n";
  out << "noise_scale = " << env.noise_scale << "\n";
  out << "n_candidates = " << env.n_candidates << "\n";
  out << "n_impressions = " << env.n_impressions << "\n";
  out << "min_len = " << env.min_len << "\n";
  out << "max_len = " << env.max_len << "\n";
  out << "length_power = " << env.length_power << "\n";
}

EnvParams load_scenario(const std::string& path) {
  toml::Table t = toml::Table::parse_file(path);
  std::string name = t.get_string("scenario", "name", "");
  if (name.empty()) throw ConfigError("scenario file missing scenario.name: " + path);
  uint64_t seed = uint64_t(t.get_int("scenario", "seed", 0));
  EnvParams env = make_scenario(name, seed);
  env.noise_scale = t.get_double("scenario", "noise_scale", env.noise_scale);
  env.n_candidates = int(t.get_int("scenario", "n_candidates", env.n_candidates));
  env.n_impressions = int(t.get_int("scenario", "n_impressions", env.n_impressions));
  env.min_len = int(t.get_int("scenario", "min_len", env.min_len));
  env.max_len = int(t.get_int("scenario", "max_len", env.max_len));
  env.length_power = t.get_double("scenario", "length_power", env.length_power);
  env.validate();
  return env;
}

}  // namespace dress::env
