#include "dress/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dress::pipe {

using data::Episode;
using data::Product;
using data::Session;
using data::Story;
using nn::Tape;
using nn::Var;

PipelineVariant variant_from_string(const std::string& s) {
  if (s == "dress") return PipelineVariant::DRESS;
  if (s == "dress-s") return PipelineVariant::DRESS_S;
  if (s == "dress-m") return PipelineVariant::DRESS_M;
  if (s == "dnnc") return PipelineVariant::DNNC;
  throw ConfigError("unknown pipeline variant: " + s);
}

std::string to_string(PipelineVariant v) {
  switch (v) {
    case PipelineVariant::DRESS: return "dress";
    case PipelineVariant::DRESS_S: return "dress-s";
    case PipelineVariant::DRESS_M: return "dress-m";
    case PipelineVariant::DNNC: return "dnnc";
  }
  return "?";
}

/// Feature rows for candidate slates, memoized per distinct slate.
class SlateFeatures {
 public:
  SlateFeatures(const DynamicModel& dyn, const data::StoryCatalog& catalog)
      : dyn_(dyn), catalog_(catalog) {}

  const Matrix& rows(const std::vector<int>& slate) {
    auto it = cache_.find(slate);
    if (it != cache_.end()) return it->second;
    Matrix m(slate.size(), dyn_.cfg.features.story_dim());
    for (size_t k = 0; k < slate.size(); ++k)
      m.row(Eigen::Index(k)) = dyn_.story_features(catalog_.at(slate[k])).transpose();
    return cache_.emplace(slate, std::move(m)).first->second;
  }

 private:
  const DynamicModel& dyn_;
  const data::StoryCatalog& catalog_;
  std::map<std::vector<int>, Matrix> cache_;
};

double imitation_loss(const Actor& actor, const std::vector<ImitationSample>& samples,
                      double entropy_weight) {
  if (samples.empty()) throw ContractError("imitation_loss: no samples");
  double total = 0.0;
  for (const ImitationSample& s : samples) {
    Vector p = actor.probs(s.state, s.cand_feats);
    double pa = std::max(p[s.action], nn::kEpsProb);
    total += -std::log(pa) - entropy_weight * nn::entropy(p);
  }
  return total / double(samples.size());
}

std::vector<ImitationSample> collect_imitation_samples(const Dataset& dataset,
                                                       const DynamicModel& dynamics) {
  SlateFeatures slates(dynamics, dataset.catalog);
  std::vector<ImitationSample> out;
  for (const Episode& e : dataset.episodes) {
    Vector h = dynamics.init_hidden(e.user_profile);
    for (const Session& s : e.sessions) {
      out.push_back(ImitationSample{h, slates.rows(s.candidate_ids), s.action_index()});
      h = dynamics.transition_step(h, s).first;
    }
  }
  return out;
}

namespace {

/// Stacks [state | candidate] rows for a batch of slates and returns the
/// per-sample distributions on the tape.
template <typename SampleT>
std::vector<Var> batched_distributions(Tape& t, const Actor& actor,
                                       const std::vector<const SampleT*>& batch) {
  int total_rows = 0;
  for (const SampleT* s : batch) total_rows += int(s->cand_feats.rows());
  int state_dim = int(batch.front()->state.size());
  int feat_dim = int(batch.front()->cand_feats.cols());
  Matrix in(total_rows, state_dim + feat_dim);
  int at = 0;
  for (const SampleT* s : batch)
    for (Eigen::Index k = 0; k < s->cand_feats.rows(); ++k)
      in.row(at++) << s->state.transpose(), s->cand_feats.row(k);
  Var logits = actor.logits(t, t.constant(in));
  std::vector<Var> dists;
  at = 0;
  for (const SampleT* s : batch) {
    int k = int(s->cand_feats.rows());
    dists.push_back(t.softmax_row(t.transpose(t.rows(logits, at, k))));
    at += k;
  }
  return dists;
}

}  // namespace

Var imitation_loss_var(Tape& t, const Actor& actor,
                       const std::vector<const ImitationSample*>& batch,
                       double entropy_weight) {
  if (batch.empty()) throw ContractError("imitation_loss_var: empty batch");
  std::vector<Var> dists = batched_distributions(t, actor, batch);
  std::vector<Var> terms;
  for (size_t i = 0; i < batch.size(); ++i) {
    Var pa = t.clamp(t.pick(dists[i], 0, batch[i]->action), nn::kEpsProb, 1.0);
    Var nll = t.scale(t.log(pa), -1.0);
    terms.push_back(t.sub(nll, t.scale(t.entropy_row(dists[i]), entropy_weight)));
  }
  return t.scale(t.sum_vars(terms), 1.0 / double(batch.size()));
}

Actor controller_imitation(const Dataset& dataset, const DynamicModel& dynamics,
                           const ImitationConfig& cfg, int actor_hidden, uint64_t seed,
                           std::vector<double>* loss_curve) {
  cfg.validate();
  if (dataset.episodes.empty()) throw ContractError("controller_imitation: empty dataset");
  std::vector<ImitationSample> samples = collect_imitation_samples(dataset, dynamics);
  Rng init_rng = Rng::derive(seed, 1);
  Actor actor = Actor::init(dynamics.cfg.hidden_dim, dynamics.cfg.features.story_dim(),
                            actor_hidden, init_rng);

  nn::AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  Rng shuffle_rng = Rng::derive(seed, 2);
  int n = int(samples.size());
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (loss_curve) loss_curve->push_back(imitation_loss(actor, samples, cfg.entropy_weight));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(idx);
    for (int start = 0; start < n; start += cfg.minibatch) {
      int stop = std::min(n, start + cfg.minibatch);
      Tape t;
      std::vector<const ImitationSample*> batch;
      for (int i = start; i < stop; ++i) batch.push_back(&samples[idx[i]]);
      Var loss = imitation_loss_var(t, actor, batch, cfg.entropy_weight);
      if (!std::isfinite(t.scalar_value(loss)))
        throw NumericError("controller_imitation: non-finite loss");
      actor.params.zero_grads();
      t.backward(loss);
      actor.params.clip_grad_norm(cfg.grad_clip);
      actor.params.adam_step(adam);
    }
    if (loss_curve) loss_curve->push_back(imitation_loss(actor, samples, cfg.entropy_weight));
  }
  return actor;
}

std::vector<TransitionSample> logged_transition_samples(const Dataset& dataset,
                                                        const DynamicModel& dynamics,
                                                        const Actor& reference) {
  SlateFeatures slates(dynamics, dataset.catalog);
  std::vector<TransitionSample> out;
  for (const Episode& e : dataset.episodes) {
    Vector h = dynamics.init_hidden(e.user_profile);
    for (size_t i = 0; i < e.sessions.size(); ++i) {
      const Session& s = e.sessions[i];
      TransitionSample ts;
      ts.state = h;
      ts.cand_feats = slates.rows(s.candidate_ids);
      ts.action = s.action_index();
      ts.reward = s.reward();
      ts.terminal = (i + 1 == e.sessions.size());
      if (s.logged_propensity) {
        ts.pi_old = *s.logged_propensity;
      } else {
        ts.pi_old = reference.probs(h, ts.cand_feats)[ts.action];
      }
      ts.source = TransitionSample::Source::logged;
      h = dynamics.transition_step(h, s).first;
      ts.next_state = h;
      out.push_back(std::move(ts));
    }
  }
  return out;
}

std::vector<TransitionSample> imagine(const DynamicModel& dynamics, const Actor& actor,
                                      const Dataset& dataset, const ImaginationConfig& cfg,
                                      uint64_t seed) {
  cfg.validate();
  if (dataset.episodes.empty()) throw ContractError("imagine: empty dataset");
  SlateFeatures slates(dynamics, dataset.catalog);
  std::vector<TransitionSample> out;
  out.reserve(size_t(cfg.rollouts_per_iter) * size_t(cfg.rollout_length));
  for (int r = 0; r < cfg.rollouts_per_iter; ++r) {
    Rng rng = Rng::derive(seed, uint64_t(r));
    const Episode& e = dataset.episodes[rng.uniform_int(int(dataset.episodes.size()))];
    int start_idx = rng.uniform_int(int(e.sessions.size()));
    const Session& start = e.sessions[start_idx];

    Vector h = dynamics.init_hidden(e.user_profile);
    for (int i = 0; i < start_idx; ++i) h = dynamics.transition_step(h, e.sessions[i]).first;
    Vector q_emb = dynamics.query_embedding(start.query);
    const Matrix& cand = slates.rows(start.candidate_ids);
    const std::vector<Product>& products = start.impressed_products;

    for (int t = 0; t < cfg.rollout_length; ++t) {
      Vector probs = actor.probs(h, cand);
      int a = rng.categorical(probs);
      const Story& story = dataset.catalog.at(start.candidate_ids[a]);
      Vector s = dynamics.state_repr(h, q_emb);
      model::RewardPrediction pred = dynamics.reward_forward(s, story, products);

      data::Feedback fb;
      fb.product_clicked.resize(products.size(), 0);
      fb.product_ordered.resize(products.size(), 0);
      double p_none = 1.0;
      for (size_t j = 0; j < products.size(); ++j) {
        p_none *= 1.0 - pred.product_click[j];
        if (rng.bernoulli(pred.product_click[j])) {
          fb.product_clicked[j] = 1;
          fb.engaged_product_ids.push_back(products[j].product_id);
        }
      }
      fb.story_clicked = rng.bernoulli(pred.story_click) ? 1 : 0;
      double reward = cfg.sample_rewards ? (fb.any_product_click() ? 1.0 : 0.0)
                                         : 1.0 - p_none;

      TransitionSample ts;
      ts.state = h;
      ts.cand_feats = cand;
      ts.action = a;
      ts.reward = reward;
      ts.terminal = (t + 1 == cfg.rollout_length);
      ts.pi_old = probs[a];
      ts.source = TransitionSample::Source::imagined;
      auto [hn, qh] = dynamics.transition_step(h, story, q_emb, fb, products);
      h = hn;
      q_emb = qh;
      ts.next_state = h;
      out.push_back(std::move(ts));
    }
  }
  return out;
}

Actor dnnc_train(const Dataset& dataset, const DynamicModel& dynamics, const Actor& pi0,
                 const DnncConfig& cfg, uint64_t seed) {
  if (dataset.episodes.empty()) throw ContractError("dnnc_train: empty dataset");
  struct DnncSample {
    Vector state;
    Matrix cand_feats;
    int action = 0;
    int story_clicked = 0;
    Vector pi0_probs;
    double pi0_entropy_term = 0.0;  // sum_k pi0_k log pi0_k
  };
  SlateFeatures slates(dynamics, dataset.catalog);
  std::vector<DnncSample> samples;
  for (const Episode& e : dataset.episodes) {
    Vector h = dynamics.init_hidden(e.user_profile);
    for (const Session& s : e.sessions) {
      DnncSample d;
      d.state = h;
      d.cand_feats = slates.rows(s.candidate_ids);
      d.action = s.action_index();
      d.story_clicked = s.feedback.story_clicked;
      d.pi0_probs = pi0.probs(h, d.cand_feats);
      for (Eigen::Index k = 0; k < d.pi0_probs.size(); ++k)
        if (d.pi0_probs[k] > 0.0)
          d.pi0_entropy_term += d.pi0_probs[k] * std::log(d.pi0_probs[k]);
      samples.push_back(std::move(d));
      h = dynamics.transition_step(h, s).first;
    }
  }

  Actor actor = pi0;  // warm start from the imitation policy
  nn::AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  Rng shuffle_rng = Rng::derive(seed, 1);
  int n = int(samples.size());
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(idx);
    for (int start = 0; start < n; start += cfg.minibatch) {
      int stop = std::min(n, start + cfg.minibatch);
      Tape t;
      int total_rows = 0;
      for (int i = start; i < stop; ++i) total_rows += int(samples[idx[i]].cand_feats.rows());
      int state_dim = int(samples[idx[start]].state.size());
      int feat_dim = int(samples[idx[start]].cand_feats.cols());
      Matrix in(total_rows, state_dim + feat_dim);
      int at = 0;
      for (int i = start; i < stop; ++i) {
        const DnncSample& s = samples[idx[i]];
        for (Eigen::Index k = 0; k < s.cand_feats.rows(); ++k)
          in.row(at++) << s.state.transpose(), s.cand_feats.row(k);
      }
      Var logits = actor.logits(t, t.constant(in));
      std::vector<Var> terms;
      at = 0;
      for (int i = start; i < stop; ++i) {
        const DnncSample& s = samples[idx[i]];
        int k = int(s.cand_feats.rows());
        Var row = t.transpose(t.rows(logits, at, k));
        at += k;
        // story-click likelihood of the shown story's logit
        Var p_click = t.activation(t.pick(row, 0, s.action), nn::Activation::sigmoid);
        Var nll = nn::cross_entropy(t, p_click, s.story_clicked);
        Var dist = t.softmax_row(row);
        // KL(pi0 || pi) = sum pi0 log pi0 - sum pi0 log pi
        Var cross = t.sum_all(
            t.cmul(t.constant(s.pi0_probs.transpose()), t.log(t.clamp(dist, 1e-12, 1.0))));
        Var kl = t.sub(t.scalar(s.pi0_entropy_term), cross);
        terms.push_back(t.add(nll, t.scale(kl, cfg.kl_weight)));
      }
      Var loss = t.scale(t.sum_vars(terms), 1.0 / double(stop - start));
      if (!std::isfinite(t.scalar_value(loss)))
        throw NumericError("dnnc_train: non-finite loss");
      actor.params.zero_grads();
      t.backward(loss);
      actor.params.clip_grad_norm(cfg.grad_clip);
      actor.params.adam_step(adam);
    }
  }
  return actor;
}

namespace {

/// Self-normalized importance-weighted mean reward of the imagined rollouts
/// under the current actor (pi_old was recorded at sampling time).
double imagined_return_estimate(const std::vector<TransitionSample>& samples,
                                const Actor& actor, int rollout_length) {
  double num = 0.0, den = 0.0;
  double max_logw = -1e300;
  std::vector<double> logw;
  std::vector<double> rsum;
  for (size_t at = 0; at < samples.size(); at += size_t(rollout_length)) {
    double lw = 0.0, rs = 0.0;
    for (int t = 0; t < rollout_length; ++t) {
      const TransitionSample& s = samples[at + size_t(t)];
      double p = actor.probs(s.state, s.cand_feats)[s.action];
      lw += std::log(std::max(p, nn::kEpsProb)) - std::log(s.pi_old);
      rs += s.reward;
    }
    logw.push_back(lw);
    rsum.push_back(rs);
    max_logw = std::max(max_logw, lw);
  }
  for (size_t i = 0; i < logw.size(); ++i) {
    double w = std::exp(logw[i] - max_logw);
    num += w * rsum[i];
    den += w * double(rollout_length);
  }
  return den > 0.0 ? num / den : 0.0;
}

nlohmann::ordered_json summarize_updates(const std::vector<ctrl::UpdateMetrics>& ms) {
  nlohmann::ordered_json j;
  j["updates"] = ms.size();
  if (!ms.empty()) {
    const ctrl::UpdateMetrics& last = ms.back();
    j["final_mean_ratio"] = last.mean_ratio;
    j["final_clip_fraction"] = last.clip_fraction;
    j["final_entropy"] = last.entropy;
    j["final_value_loss"] = last.value_loss;
    j["final_actor_objective"] = last.actor_objective;
  }
  return j;
}

}  // namespace

PipelineBase run_pipeline_base(const Dataset& dataset, const PipelineSettings& settings) {
  if (dataset.episodes.empty()) throw ContractError("run_dress_pipeline: empty dataset");
  for (const Episode& e : dataset.episodes) data::validate_episode(e);
  uint64_t seed = settings.seed;
  nlohmann::ordered_json stages;

  // line 1: dynamic model
  auto [dynamics, curve] = train_dynamic_model(dataset, settings.dynamics,
                                               splitmix64(seed ^ 0x11));
  {
    nlohmann::ordered_json dj;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const model::TrainCurvePoint& p : curve)
      rows.push_back({p.epoch, p.transition, p.story_click, p.product_click, p.product_repr,
                      p.total, p.val_total});
    dj["curve"] = std::move(rows);
    dj["final_train_loss"] = curve.back().total;
    dj["final_val_loss"] = curve.back().val_total;
    stages["dynamics"] = std::move(dj);
  }

  // line 3: imitation -> pi0
  std::vector<double> imitation_curve;
  Actor pi0 = controller_imitation(dataset, dynamics, settings.imitation,
                                   settings.actor_hidden, splitmix64(seed ^ 0x33),
                                   &imitation_curve);
  {
    nlohmann::ordered_json ij;
    ij["loss_curve"] = imitation_curve;
    ij["final_loss"] = imitation_curve.back();
    stages["imitation"] = std::move(ij);
  }
  return PipelineBase{std::move(dynamics), std::move(pi0), std::move(stages)};
}

PipelineResult run_dress_pipeline(const Dataset& dataset, PipelineVariant variant,
                                  const PipelineSettings& settings) {
  return run_dress_pipeline(dataset, variant, settings, run_pipeline_base(dataset, settings));
}

PipelineResult run_dress_pipeline(const Dataset& dataset, PipelineVariant variant,
                                  const PipelineSettings& settings,
                                  const PipelineBase& base) {
  uint64_t seed = settings.seed;
  nlohmann::ordered_json report;
  report["variant"] = to_string(variant);
  report["seed"] = seed;
  nlohmann::ordered_json stages = base.stage_report;

  // line 2: initialize networks
  Rng critic_rng = Rng::derive(seed, 0x22);
  Critic critic = Critic::init(settings.dynamics.hidden_dim, settings.critic_hidden,
                               critic_rng);

  PipelineResult result{base.dynamics, base.imitation, base.imitation, std::move(critic),
                        true, {}};

  if (variant == PipelineVariant::DNNC) {
    result.actor = dnnc_train(dataset, result.dynamics, result.imitation, settings.dnnc,
                              splitmix64(seed ^ 0x44));
    result.has_critic = false;
    stages["dnnc"] =
        {{"kl_weight", settings.dnnc.kl_weight}, {"epochs", settings.dnnc.epochs}};
    report["stages"] = std::move(stages);
    result.report = std::move(report);
    return result;
  }

  ctrl::PPOConfig ppo = settings.ppo;
  if (variant == PipelineVariant::DRESS_M) ppo.gamma = 0.0;  // myopic variant
  ppo.validate();

  // line 4: one reinforcement pass over the logged data
  {
    std::vector<TransitionSample> logged =
        logged_transition_samples(dataset, result.dynamics, result.imitation);
    for (const TransitionSample& s : logged)
      if (s.source != TransitionSample::Source::logged)
        throw ContractError("pipeline: logged pass received non-logged samples");
    Rng rng = Rng::derive(seed, 0x55);
    auto metrics = controller_learning(logged, result.critic, result.actor, ppo, rng);
    stages["controller_logged"] = summarize_updates(metrics);
    stages["controller_logged"]["samples"] = logged.size();
  }

  // lines 5-8: imagination iterations (skipped entirely by DRESS-s)
  int n_iter =
      (variant == PipelineVariant::DRESS_S) ? 0 : settings.imagination.iterations;
  {
    nlohmann::ordered_json ij;
    nlohmann::ordered_json iters = nlohmann::ordered_json::array();
    std::vector<double> history;
    bool stopped_early = false;
    for (int i = 0; i < n_iter; ++i) {
      std::vector<TransitionSample> imagined =
          imagine(result.dynamics, result.actor, dataset, settings.imagination,
                  splitmix64(seed ^ (0x6600 + uint64_t(i))));
      for (const TransitionSample& s : imagined)
        if (s.source != TransitionSample::Source::imagined)
          throw ContractError("pipeline: imagination pass received non-imagined samples");
      Rng rng = Rng::derive(seed, 0x7700 + uint64_t(i));
      auto metrics = controller_learning(imagined, result.critic, result.actor, ppo, rng);
      double est = imagined_return_estimate(imagined, result.actor,
                                            settings.imagination.rollout_length);
      nlohmann::ordered_json row = summarize_updates(metrics);
      row["iteration"] = i;
      row["estimated_return"] = est;
      iters.push_back(std::move(row));
      history.push_back(est);
      // stop once the estimated return has stopped improving
      int w = settings.imagination.early_stop_window;
      if (int(history.size()) > w) {
        double best_before = *std::max_element(history.end() - w - 1, history.end() - 1);
        if (history.back() < best_before * (1.0 + settings.imagination.early_stop_rel)) {
          stopped_early = true;
          break;
        }
      }
    }
    ij["iterations"] = std::move(iters);
    ij["stopped_early"] = stopped_early;
    stages["imagination"] = std::move(ij);
  }

  report["stages"] = std::move(stages);
  result.report = std::move(report);
  return result;
}

}  // namespace dress::pipe
