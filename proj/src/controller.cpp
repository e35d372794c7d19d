#include "dress/controller.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dress::ctrl {

Critic Critic::init(int state_dim, int hidden, Rng& rng) {
  Critic c;
  nn::init_dense(c.params, "critic.l1", state_dim, hidden, rng);
  nn::init_dense(c.params, "critic.head", hidden, 1, rng);
  return c;
}

double Critic::value(const Vector& h) const {
  Matrix l1 = nn::dense_forward(h.transpose(), params.value("critic.l1.W"),
                                params.value("critic.l1.b"), nn::Activation::tanh);
  return nn::dense_forward(l1, params.value("critic.head.W"), params.value("critic.head.b"),
                           nn::Activation::identity)(0, 0);
}

Var Critic::value(Tape& t, Var h_batch) const {
  auto& ps = const_cast<ParamStore&>(params);
  Var l1 = nn::dense_forward(t, h_batch, t.param(ps, "critic.l1.W"),
                             t.param(ps, "critic.l1.b"), nn::Activation::tanh);
  return nn::dense_forward(t, l1, t.param(ps, "critic.head.W"), t.param(ps, "critic.head.b"),
                           nn::Activation::identity);
}

Critic Critic::from_params(ParamStore params) {
  for (const char* name : {"critic.l1.W", "critic.l1.b", "critic.head.W", "critic.head.b"})
    if (!params.has(name))
      throw DataError(std::string("critic checkpoint missing parameter ") + name);
  Critic c;
  c.params = std::move(params);
  return c;
}

Actor Actor::init(int state_dim, int story_feat_dim, int hidden, Rng& rng) {
  Actor a;
  nn::init_dense(a.params, "actor.l1", state_dim + story_feat_dim, hidden, rng);
  nn::init_dense(a.params, "actor.head", hidden, 1, rng);
  return a;
}

Actor Actor::from_params(ParamStore params) {
  for (const char* name : {"actor.l1.W", "actor.l1.b", "actor.head.W", "actor.head.b"})
    if (!params.has(name))
      throw DataError(std::string("actor checkpoint missing parameter ") + name);
  Actor a;
  a.params = std::move(params);
  return a;
}

Vector Actor::logits(const Vector& h, const Matrix& cand_feats) const {
  if (cand_feats.rows() < 1) throw ContractError("actor: empty candidate set");
  Matrix in(cand_feats.rows(), h.size() + cand_feats.cols());
  for (Eigen::Index k = 0; k < cand_feats.rows(); ++k)
    in.row(k) << h.transpose(), cand_feats.row(k);
  Matrix l1 = nn::dense_forward(in, params.value("actor.l1.W"), params.value("actor.l1.b"),
                                nn::Activation::tanh);
  Matrix out = nn::dense_forward(l1, params.value("actor.head.W"),
                                 params.value("actor.head.b"), nn::Activation::identity);
  return out.col(0);
}

Vector Actor::probs(const Vector& h, const Matrix& cand_feats) const {
  return nn::softmax(logits(h, cand_feats));
}

Var Actor::logits(Tape& t, Var input_rows) const {
  auto& ps = const_cast<ParamStore&>(params);
  Var l1 = nn::dense_forward(t, input_rows, t.param(ps, "actor.l1.W"),
                             t.param(ps, "actor.l1.b"), nn::Activation::tanh);
  return nn::dense_forward(t, l1, t.param(ps, "actor.head.W"), t.param(ps, "actor.head.b"),
                           nn::Activation::identity);
}

double td_target(double r, double v_next, double gamma, bool terminal) {
  if (gamma < 0.0 || gamma > 1.0) throw ContractError("td_target: gamma must be in [0, 1]");
  return r + (terminal ? 0.0 : gamma * v_next);
}

double advantage(double r, double v_s, double v_next, double gamma, bool terminal) {
  return td_target(r, v_next, gamma, terminal) - v_s;
}

double ppo_clip_term(double p_new, double p_old, double adv, double eps) {
  if (p_old <= 0.0) throw ContractError("ppo_clip_term: p_old must be > 0");
  double ratio = p_new / p_old;
  double clipped = std::min(std::max(ratio, 1.0 - eps), 1.0 + eps);
  return std::min(ratio * adv, clipped * adv);
}

double entropy(const Vector& dist) { return nn::entropy(dist); }

Vector policy_forward(const Vector& h, const Matrix& cand_feats, const Actor& actor) {
  return actor.probs(h, cand_feats);
}

double value_forward(const Vector& h, const Critic& critic) { return critic.value(h); }

std::string metrics_to_csv(const std::vector<UpdateMetrics>& ms) {
  std::ostringstream out;
  out << "update,mean_ratio,clip_fraction,entropy,value_loss,actor_objective\n";
  for (size_t i = 0; i < ms.size(); ++i)
    out << i << "," << ms[i].mean_ratio << "," << ms[i].clip_fraction << "," << ms[i].entropy
        << "," << ms[i].value_loss << "," << ms[i].actor_objective << "\n";
  return out.str();
}

Var critic_loss(Tape& t, const Critic& critic, const Matrix& states,
                const Matrix& targets) {
  Var v = critic.value(t, t.constant(states));
  return t.scale(t.square_norm(t.sub(v, t.constant(targets))), 1.0 / double(states.rows()));
}

Var actor_objective(Tape& t, const Actor& actor, const std::vector<ActorBatchItem>& batch,
                    double clip_eps, double entropy_weight, ActorObjectiveStats* stats) {
  if (batch.empty()) throw ContractError("actor_objective: empty batch");
  int state_dim = int(batch.front().state->size());
  int feat_dim = int(batch.front().cand_feats->cols());
  int total_rows = 0;
  for (const ActorBatchItem& it : batch) total_rows += int(it.cand_feats->rows());
  Matrix in(total_rows, state_dim + feat_dim);
  int at = 0;
  for (const ActorBatchItem& it : batch)
    for (Eigen::Index k = 0; k < it.cand_feats->rows(); ++k)
      in.row(at++) << it.state->transpose(), it.cand_feats->row(k);

  Var logits = actor.logits(t, t.constant(in));
  std::vector<Var> objectives;
  at = 0;
  double ratio_sum = 0.0, entropy_sum = 0.0;
  int clipped_count = 0;
  for (const ActorBatchItem& it : batch) {
    if (it.pi_old <= 0.0) throw ContractError("actor_objective: pi_old must be > 0");
    int k = int(it.cand_feats->rows());
    Var dist = t.softmax_row(t.transpose(t.rows(logits, at, k)));
    at += k;
    Var ratio = t.scale(t.pick(dist, 0, it.action), 1.0 / it.pi_old);
    Var term = t.min_scalar(
        t.scale(ratio, it.adv),
        t.scale(t.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps), it.adv));
    Var ent = t.entropy_row(dist);
    objectives.push_back(t.add(term, t.scale(ent, entropy_weight)));
    double rv = t.scalar_value(ratio);
    ratio_sum += rv;
    if (std::abs(rv - 1.0) > clip_eps) ++clipped_count;
    entropy_sum += t.scalar_value(ent);
  }
  if (stats) {
    stats->mean_ratio = ratio_sum / double(batch.size());
    stats->clip_fraction = double(clipped_count) / double(batch.size());
    stats->mean_entropy = entropy_sum / double(batch.size());
  }
  return t.scale(t.sum_vars(objectives), 1.0 / double(batch.size()));
}

std::vector<UpdateMetrics> controller_learning(const std::vector<TransitionSample>& samples,
                                               Critic& critic, Actor& actor,
                                               const PPOConfig& cfg, Rng& rng) {
  cfg.validate();
  if (samples.empty()) throw ContractError("controller_learning: no samples");
  for (const TransitionSample& s : samples)
    if (s.pi_old <= 0.0)
      throw ContractError("controller_learning: sample with non-positive pi_old");

  // critic snapshot at call entry fixes both TD targets and advantages
  int n = int(samples.size());
  std::vector<double> targets(n), adv(n);
  for (int i = 0; i < n; ++i) {
    const TransitionSample& s = samples[i];
    double v_s = critic.value(s.state);
    double v_n = s.terminal ? 0.0 : critic.value(s.next_state);
    targets[i] = td_target(s.reward, v_n, cfg.gamma, s.terminal);
    adv[i] = targets[i] - v_s;
  }

  nn::AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  std::vector<UpdateMetrics> metrics;
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(idx);
    for (int start = 0; start < n; start += cfg.minibatch) {
      int stop = std::min(n, start + cfg.minibatch);
      int mb = stop - start;

      std::vector<double> a_mb(mb);
      for (int i = 0; i < mb; ++i) a_mb[i] = adv[idx[start + i]];
      if (cfg.normalize_adv && mb > 1) {
        double mean = std::accumulate(a_mb.begin(), a_mb.end(), 0.0) / mb;
        double var = 0.0;
        for (double a : a_mb) var += (a - mean) * (a - mean);
        double sd = std::sqrt(var / mb);
        for (double& a : a_mb) a = (a - mean) / (sd + 1e-8);
      }

      UpdateMetrics m;

      {  // critic step: squared error against the entry-snapshot targets
        Tape t;
        Matrix states(mb, samples[0].state.size());
        Matrix tgt(mb, 1);
        for (int i = 0; i < mb; ++i) {
          states.row(i) = samples[idx[start + i]].state.transpose();
          tgt(i, 0) = targets[idx[start + i]];
        }
        Var loss = critic_loss(t, critic, states, tgt);
        m.value_loss = t.scalar_value(loss);
        if (!std::isfinite(m.value_loss))
          throw NumericError("controller_learning: non-finite critic loss");
        critic.params.zero_grads();
        t.backward(loss);
        critic.params.clip_grad_norm(cfg.grad_clip);
        critic.params.adam_step(adam);
      }

      {  // actor step: maximize clipped surrogate + entropy bonus
        Tape t;
        std::vector<ActorBatchItem> batch(mb);
        for (int i = 0; i < mb; ++i) {
          const TransitionSample& s = samples[idx[start + i]];
          batch[i] = ActorBatchItem{&s.state, &s.cand_feats, s.action, s.pi_old, a_mb[i]};
        }
        ActorObjectiveStats stats;
        Var objective =
            actor_objective(t, actor, batch, cfg.clip_eps, cfg.entropy_weight, &stats);
        Var loss = t.scale(objective, -1.0);
        m.actor_objective = t.scalar_value(objective);
        if (!std::isfinite(m.actor_objective))
          throw NumericError("controller_learning: non-finite actor objective");
        actor.params.zero_grads();
        t.backward(loss);
        actor.params.clip_grad_norm(cfg.grad_clip);
        actor.params.adam_step(adam);
        m.mean_ratio = stats.mean_ratio;
        m.clip_fraction = stats.clip_fraction;
        m.entropy = stats.mean_entropy;
      }

      metrics.push_back(m);
    }
  }
  return metrics;
}

}  // namespace dress::ctrl
