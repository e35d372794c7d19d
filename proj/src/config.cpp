#include "dress/config.hpp"

#include <sstream>

namespace dress::config {

RunConfig RunConfig::from_table(const toml::Table& t) {
  RunConfig c;
  c.scenario = t.get_string("run", "scenario", c.scenario);
  c.scenario_seed = uint64_t(t.get_int("run", "scenario_seed", int64_t(c.scenario_seed)));
  c.seed = uint64_t(t.get_int("run", "seed", int64_t(c.seed)));
  c.out_dir = t.get_string("run", "out_dir", c.out_dir);
  if (t.has("run", "variants")) c.variants = t.get_string_array("run", "variants");
  c.n_users = int(t.get_int("run", "n_users", c.n_users));

  c.features.embedding_dim =
      int(t.get_int("features", "embedding_dim", c.features.embedding_dim));
  c.features.dense_story_dim =
      int(t.get_int("features", "dense_story_dim", c.features.dense_story_dim));
  c.features.vocab_size = int(t.get_int("features", "vocab_size", c.features.vocab_size));
  c.features.candidate_pool_size =
      int(t.get_int("features", "candidate_pool_size", c.features.candidate_pool_size));

  c.dynamics.hidden_dim = int(t.get_int("dynamics", "hidden_dim", c.dynamics.hidden_dim));
  c.dynamics.state_dim = int(t.get_int("dynamics", "state_dim", c.dynamics.state_dim));
  c.dynamics.reward_hidden =
      int(t.get_int("dynamics", "reward_hidden", c.dynamics.reward_hidden));
  c.dynamics.w_T = t.get_double("dynamics", "w_T", c.dynamics.w_T);
  c.dynamics.w_D = t.get_double("dynamics", "w_D", c.dynamics.w_D);
  c.dynamics.w_P = t.get_double("dynamics", "w_P", c.dynamics.w_P);
  c.dynamics.w_Pl = t.get_double("dynamics", "w_Pl", c.dynamics.w_Pl);
  c.dynamics.epochs = int(t.get_int("dynamics", "epochs", c.dynamics.epochs));
  c.dynamics.batch_episodes =
      int(t.get_int("dynamics", "batch_episodes", c.dynamics.batch_episodes));
  c.dynamics.lr = t.get_double("dynamics", "lr", c.dynamics.lr);
  c.dynamics.grad_clip = t.get_double("dynamics", "grad_clip", c.dynamics.grad_clip);
  c.dynamics.val_fraction = t.get_double("dynamics", "val_fraction", c.dynamics.val_fraction);

  c.ppo.gamma = t.get_double("controller", "gamma", c.ppo.gamma);
  c.ppo.clip_eps = t.get_double("controller", "clip_eps", c.ppo.clip_eps);
  c.ppo.entropy_weight = t.get_double("controller", "entropy_weight", c.ppo.entropy_weight);
  c.ppo.minibatch = int(t.get_int("controller", "minibatch", c.ppo.minibatch));
  c.ppo.epochs = int(t.get_int("controller", "epochs", c.ppo.epochs));
  c.ppo.lr = t.get_double("controller", "lr", c.ppo.lr);
  c.ppo.grad_clip = t.get_double("controller", "grad_clip", c.ppo.grad_clip);
  c.ppo.normalize_adv = t.get_bool("controller", "normalize_adv", c.ppo.normalize_adv);
  c.actor_hidden = int(t.get_int("controller", "actor_hidden", c.actor_hidden));
  c.critic_hidden = int(t.get_int("controller", "critic_hidden", c.critic_hidden));

  c.imitation.entropy_weight =
      t.get_double("imitation", "entropy_weight", c.imitation.entropy_weight);
  c.imitation.epochs = int(t.get_int("imitation", "epochs", c.imitation.epochs));
  c.imitation.minibatch = int(t.get_int("imitation", "minibatch", c.imitation.minibatch));
  c.imitation.lr = t.get_double("imitation", "lr", c.imitation.lr);
  c.imitation.grad_clip = t.get_double("imitation", "grad_clip", c.imitation.grad_clip);

  c.imagination.rollout_length =
      int(t.get_int("imagination", "rollout_length", c.imagination.rollout_length));
  c.imagination.rollouts_per_iter =
      int(t.get_int("imagination", "rollouts_per_iter", c.imagination.rollouts_per_iter));
  c.imagination.iterations =
      int(t.get_int("imagination", "iterations", c.imagination.iterations));
  std::string mode = t.get_string("imagination", "reward_mode",
                                  c.imagination.sample_rewards ? "sample" : "expectation");
  if (mode == "sample")
    c.imagination.sample_rewards = true;
  else if (mode == "expectation")
    c.imagination.sample_rewards = false;
  else
    throw ConfigError("imagination.reward_mode must be sample or expectation");
  c.imagination.early_stop_rel =
      t.get_double("imagination", "early_stop_rel", c.imagination.early_stop_rel);
  c.imagination.early_stop_window =
      int(t.get_int("imagination", "early_stop_window", c.imagination.early_stop_window));

  c.dnnc.kl_weight = t.get_double("dnnc", "kl_weight", c.dnnc.kl_weight);
  c.dnnc.epochs = int(t.get_int("dnnc", "epochs", c.dnnc.epochs));
  c.dnnc.minibatch = int(t.get_int("dnnc", "minibatch", c.dnnc.minibatch));
  c.dnnc.lr = t.get_double("dnnc", "lr", c.dnnc.lr);
  c.dnnc.grad_clip = t.get_double("dnnc", "grad_clip", c.dnnc.grad_clip);

  c.eval_cfg.horizon = int(t.get_int("eval", "horizon", c.eval_cfg.horizon));
  std::string field = t.get_string("eval", "reward_field", "click");
  if (field == "click")
    c.eval_cfg.reward_field = eval::EvalConfig::RewardField::click;
  else if (field == "order")
    c.eval_cfg.reward_field = eval::EvalConfig::RewardField::order;
  else
    throw ConfigError("eval.reward_field must be click or order");
  c.eval_cfg.folds = int(t.get_int("eval", "folds", c.eval_cfg.folds));
  c.eval_cfg.bootstrap_resamples =
      int(t.get_int("eval", "bootstrap_resamples", c.eval_cfg.bootstrap_resamples));
  if (t.has("eval", "horizons")) {
    c.horizons.clear();
    for (double h : t.get_double_array("eval", "horizons")) c.horizons.push_back(int(h));
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  return from_table(toml::Table::parse_file(path));
}

std::string RunConfig::to_toml() const {
  std::ostringstream o;
  o << "[run]\n";
  o << "scenario = " << toml::quote(scenario) << "\n";
  o << "scenario_seed = " << scenario_seed << "\n";
  o << "seed = " << seed << "\n";
  o << "out_dir = " << toml::quote(out_dir) << "\n";
  o << "variants = [";
  for (size_t i = 0; i < variants.size(); ++i)
    o << (i ? ", " : "") << toml::quote(variants[i]);
  o << "]\n";
  o << "n_users = " << n_users << "\n";
  o << "\n[features]\n";
  o << "embedding_dim = " << features.embedding_dim << "\n";
  o << "dense_story_dim = " << features.dense_story_dim << "\n";
  o << "vocab_size = " << features.vocab_size << "\n";
  o << "candidate_pool_size = " << features.candidate_pool_size << "\n";
  o << "\n[dynamics]\n";
  o << "hidden_dim = " << dynamics.hidden_dim << "\n";
  o << "state_dim = " << dynamics.state_dim << "\n";
  o << "reward_hidden = " << dynamics.reward_hidden << "\n";
  o << "w_T = " << dynamics.w_T << "\n";
  o << "w_D = " << dynamics.w_D << "\n";
  o << "w_P = " << dynamics.w_P << "\n";
  o << "w_Pl = " << dynamics.w_Pl << "\n";
  o << "epochs = " << dynamics.epochs << "\n";
  o << "batch_episodes = " << dynamics.batch_episodes << "\n";
  o << "lr = " << dynamics.lr << "\n";
  o << "grad_clip = " << dynamics.grad_clip << "\n";
  o << "val_fraction = " << dynamics.val_fraction << "\n";
  o << "\n[controller]\n";
  o << "gamma = " << ppo.gamma << "\n";
  o << "clip_eps = " << ppo.clip_eps << "\n";
  o << "entropy_weight = " << ppo.entropy_weight << "\n";
  o << "minibatch = " << ppo.minibatch << "\n";
  o << "epochs = " << ppo.epochs << "\n";
  o << "lr = " << ppo.lr << "\n";
  o << "grad_clip = " << ppo.grad_clip << "\n";
  o << "normalize_adv = " << (ppo.normalize_adv ? "true" : "false") << "\n";
  o << "actor_hidden = " << actor_hidden << "\n";
  o << "critic_hidden = " << critic_hidden << "\n";
  o << "\n[imitation]\n";
  o << "entropy_weight = " << imitation.entropy_weight << "\n";
  o << "epochs = " << imitation.epochs << "\n";
  o << "minibatch = " << imitation.minibatch << "\n";
  o << "lr = " << imitation.lr << "\n";
  o << "grad_clip = " << imitation.grad_clip << "\n";
  o << "\n[imagination]\n";
  o << "rollout_length = " << imagination.rollout_length << "\n";
  o << "rollouts_per_iter = " << imagination.rollouts_per_iter << "\n";
  o << "iterations = " << imagination.iterations << "\n";
  o << "reward_mode = " << toml::quote(imagination.sample_rewards ? "sample" : "expectation")
    << "\n";
  o << "early_stop_rel = " << imagination.early_stop_rel << "\n";
  o << "early_stop_window = " << imagination.early_stop_window << "\n";
  o << "\n[dnnc]\n";
  o << "kl_weight = " << dnnc.kl_weight << "\n";
  o << "epochs = " << dnnc.epochs << "\n";
  o << "minibatch = " << dnnc.minibatch << "\n";
  o << "lr = " << dnnc.lr << "\n";
  o << "grad_clip = " << dnnc.grad_clip << "\n";
  o << "\n[eval]\n";
  o << "horizon = " << eval_cfg.horizon << "\n";
  o << "reward_field = "
    << toml::quote(eval_cfg.reward_field == eval::EvalConfig::RewardField::click ? "click"
                                                                                 : "order")
    << "\n";
  o << "folds = " << eval_cfg.folds << "\n";
  o << "bootstrap_resamples = " << eval_cfg.bootstrap_resamples << "\n";
  o << "horizons = [";
  for (size_t i = 0; i < horizons.size(); ++i) o << (i ? ", " : "") << horizons[i];
  o << "]\n";
  return o.str();
}

std::string RunConfig::hash() const { return to_hex(fnv1a64(to_toml())); }

pipe::PipelineSettings RunConfig::pipeline_settings() const {
  pipe::PipelineSettings s;
  s.dynamics = dynamics;
  s.dynamics.features = features;
  s.ppo = ppo;
  s.imitation = imitation;
  s.imagination = imagination;
  s.dnnc = dnnc;
  s.actor_hidden = actor_hidden;
  s.critic_hidden = critic_hidden;
  s.seed = seed;
  return s;
}

void RunConfig::validate() const {
  model::DynamicModelConfig d = dynamics;
  d.features = features;
  d.validate();
  ppo.validate();
  imitation.validate();
  imagination.validate();
  eval_cfg.validate();
  for (const std::string& v : variants) pipe::variant_from_string(v);
}

}  // namespace dress::config
