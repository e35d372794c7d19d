#include "dress/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "dress/controller.hpp"
#include "dress/dynamics.hpp"
#include "dress/pipeline.hpp"

namespace dress::gradcheck {

using data::FeatureConfig;
using nn::Activation;
using nn::ParamStore;
using nn::Tape;
using nn::Var;

double rel_err(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
}

double check_matrix(Matrix& m, const Matrix& analytic, const std::function<double()>& f,
                    double step) {
  if (m.rows() != analytic.rows() || m.cols() != analytic.cols())
    throw ContractError("check_matrix: gradient shape mismatch");
  double worst = 0.0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double saved = m(r, c);
      m(r, c) = saved + step;
      double up = f();
      m(r, c) = saved - step;
      double down = f();
      m(r, c) = saved;
      worst = std::max(worst, rel_err(analytic(r, c), (up - down) / (2.0 * step)));
    }
  }
  return worst;
}

namespace {

Matrix randn(int r, int c, Rng& rng, double scale = 0.5) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

/// Gradients of a scalar built from leaf matrices; recomputed from scratch
/// for every finite-difference probe.
struct Instance {
  std::vector<Matrix> leaves;
  std::function<double(const std::vector<Matrix>&)> forward;

  double value() const { return forward(leaves); }
  double check(const std::vector<Matrix>& analytic) {
    double worst = 0.0;
    for (size_t i = 0; i < leaves.size(); ++i)
      worst = std::max(worst,
                       check_matrix(leaves[i], analytic[i], [&] { return value(); }));
    return worst;
  }
};

// ---- individual checks; each returns the max relative error over one
// ---- randomized instance

double check_dense(Rng& rng, Activation act) {
  int in = 2 + rng.uniform_int(3), out = 2 + rng.uniform_int(3);
  Instance inst;
  inst.leaves = {randn(1, in, rng), randn(in, out, rng), randn(1, out, rng)};
  Matrix probe = randn(1, out, rng, 1.0);  // fixed cotangent picks a scalar function
  inst.forward = [act, probe](const std::vector<Matrix>& l) {
    Tape t;
    Var y = nn::dense_forward(t, t.constant(l[0]), t.constant(l[1]), t.constant(l[2]), act);
    return (t.value(y).array() * probe.array()).sum();
  };
  if (act == Activation::relu) {
    // keep pre-activations away from the kink
    Matrix pre = inst.leaves[0] * inst.leaves[1] + inst.leaves[2];
    for (Eigen::Index i = 0; i < pre.size(); ++i)
      if (std::abs(pre(0, i)) < 1e-3) inst.leaves[2](0, i) += 0.01;
  }
  Tape t;
  Var x = t.input(inst.leaves[0]), w = t.input(inst.leaves[1]), b = t.input(inst.leaves[2]);
  Var y = nn::dense_forward(t, x, w, b, act);
  t.backward(t.sum_all(t.cmul(y, t.constant(probe))));
  return inst.check({t.grad(x), t.grad(w), t.grad(b)});
}

/// Full Jacobian of a small dense layer, column by column.
double check_dense_jacobian(Rng& rng) {
  int in = 4, out = 3;
  Matrix x = randn(1, in, rng), W = randn(in, out, rng), b = randn(1, out, rng);
  double worst = 0.0;
  for (int k = 0; k < out; ++k) {
    Tape t;
    Var xv = t.input(x), wv = t.input(W), bv = t.input(b);
    Var y = nn::dense_forward(t, xv, wv, bv, Activation::tanh);
    t.backward(t.pick(y, 0, k));
    Instance inst;
    inst.leaves = {x, W, b};
    inst.forward = [k](const std::vector<Matrix>& l) {
      Tape tt;
      Var y2 = nn::dense_forward(tt, tt.constant(l[0]), tt.constant(l[1]),
                                 tt.constant(l[2]), Activation::tanh);
      return tt.value(y2)(0, k);
    };
    worst = std::max(worst, inst.check({t.grad(xv), t.grad(wv), t.grad(bv)}));
  }
  return worst;
}

ParamStore make_gru_store(int in, int hidden, Rng& rng) {
  ParamStore s;
  nn::init_gru(s, "gru", in, hidden, rng);
  return s;
}

double check_gru(Rng& rng) {
  int in = 3, hidden = 3;
  ParamStore store = make_gru_store(in, hidden, rng);
  Matrix x = randn(1, in, rng), h = randn(1, hidden, rng);
  Matrix probe = randn(1, hidden, rng, 1.0);

  auto forward = [&](const ParamStore& s, const Matrix& xm, const Matrix& hm) {
    Matrix out = nn::gru_step(xm, hm, s, "gru");
    return (out.array() * probe.array()).sum();
  };

  Tape t;
  Var xv = t.input(x), hv = t.input(h);
  Var out = nn::gru_step(t, xv, hv, nn::lease_gru(t, store, "gru"));
  store.zero_grads();
  t.backward(t.sum_all(t.cmul(out, t.constant(probe))));

  double worst = std::max(check_matrix(x, t.grad(xv), [&] { return forward(store, x, h); }),
                          check_matrix(h, t.grad(hv), [&] { return forward(store, x, h); }));
  for (const std::string& name : store.names()) {
    Matrix g = store.grad(name);
    worst = std::max(worst, check_matrix(store.mutable_value(name), g,
                                         [&] { return forward(store, x, h); }));
  }
  return worst;
}

double check_softmax(Rng& rng) {
  int n = 3 + rng.uniform_int(3);
  Matrix logits = randn(1, n, rng, 1.5);
  Matrix probe = randn(1, n, rng, 1.0);
  Instance inst;
  inst.leaves = {logits};
  inst.forward = [probe](const std::vector<Matrix>& l) {
    Tape t;
    Var p = t.softmax_row(t.constant(l[0]));
    return (t.value(p).array() * probe.array()).sum();
  };
  Tape t;
  Var lv = t.input(logits);
  Var p = t.softmax_row(lv);
  t.backward(t.sum_all(t.cmul(p, t.constant(probe))));
  return inst.check({t.grad(lv)});
}

double check_cross_entropy(Rng& rng) {
  double p0 = 0.05 + 0.9 * rng.uniform01();
  int y = rng.bernoulli(0.5) ? 1 : 0;
  Matrix p(1, 1);
  p(0, 0) = p0;
  Instance inst;
  inst.leaves = {p};
  inst.forward = [y](const std::vector<Matrix>& l) {
    Tape t;
    return t.scalar_value(nn::cross_entropy(t, t.constant(l[0]), y));
  };
  Tape t;
  Var pv = t.input(p);
  t.backward(nn::cross_entropy(t, pv, y));
  return inst.check({t.grad(pv)});
}

double check_mse(Rng& rng) {
  int n = 2 + rng.uniform_int(4);
  Instance inst;
  inst.leaves = {randn(1, n, rng), randn(1, n, rng)};
  inst.forward = [](const std::vector<Matrix>& l) {
    Tape t;
    return t.scalar_value(nn::mse(t, t.constant(l[0]), t.constant(l[1])));
  };
  Tape t;
  Var a = t.input(inst.leaves[0]), b = t.input(inst.leaves[1]);
  t.backward(nn::mse(t, a, b));
  return inst.check({t.grad(a), t.grad(b)});
}

double check_entropy(Rng& rng) {
  int n = 3;
  Matrix logits = randn(1, n, rng, 1.0);
  Instance inst;
  inst.leaves = {logits};
  inst.forward = [](const std::vector<Matrix>& l) {
    Tape t;
    return t.scalar_value(t.entropy_row(t.softmax_row(t.constant(l[0]))));
  };
  Tape t;
  Var lv = t.input(logits);
  t.backward(t.entropy_row(t.softmax_row(lv)));
  return inst.check({t.grad(lv)});
}

double check_embedding(Rng& rng) {
  Matrix table = randn(5, 3, rng);
  std::vector<int> ids = {1, 3, 3, 4};
  Matrix probe = randn(1, 3, rng, 1.0);
  Instance inst;
  inst.leaves = {table};
  inst.forward = [ids, probe](const std::vector<Matrix>& l) {
    Tape t;
    Var e = t.rows_mean(t.constant(l[0]), ids);
    return (t.value(e).array() * probe.array()).sum();
  };
  Tape t;
  Var tv = t.input(table);
  t.backward(t.sum_all(t.cmul(t.rows_mean(tv, ids), t.constant(probe))));
  return inst.check({t.grad(tv)});
}

double check_composite(Rng& rng) {
  // dense -> gru -> mse, gradients through the whole chain
  int in = 3, mid = 3, hidden = 3;
  ParamStore store = make_gru_store(mid, hidden, rng);
  nn::init_dense(store, "lift", in, mid, rng);
  Matrix x = randn(1, in, rng), h = randn(1, hidden, rng), target = randn(1, hidden, rng);

  auto forward = [&](const ParamStore& s) {
    Tape t;
    auto& sm = const_cast<ParamStore&>(s);
    Var lifted = nn::dense_forward(t, t.constant(x), t.param(sm, "lift.W"),
                                   t.param(sm, "lift.b"), Activation::tanh);
    Var out = nn::gru_step(t, lifted, t.constant(h), nn::lease_gru(t, sm, "gru"));
    return t.scalar_value(nn::mse(t, out, t.constant(target)));
  };

  Tape t;
  Var lifted = nn::dense_forward(t, t.constant(x), t.param(store, "lift.W"),
                                 t.param(store, "lift.b"), Activation::tanh);
  Var out = nn::gru_step(t, lifted, t.constant(h), nn::lease_gru(t, store, "gru"));
  store.zero_grads();
  t.backward(nn::mse(t, out, t.constant(target)));

  double worst = 0.0;
  for (const std::string& name : store.names()) {
    Matrix g = store.grad(name);
    worst = std::max(worst,
                     check_matrix(store.mutable_value(name), g, [&] { return forward(store); }));
  }
  return worst;
}

// ---- dynamic-model micro world ----

data::Episode micro_episode(const FeatureConfig& f, int n_sessions, int profile_dim,
                            Rng& rng) {
  data::Episode e;
  e.user_id = 7;
  e.user_profile = randn(profile_dim, 1, rng).col(0);
  for (int i = 0; i < n_sessions; ++i) {
    data::Session s;
    s.t = i + 1;
    for (int k = 0; k < 2; ++k) s.query.token_ids.push_back(1 + rng.uniform_int(f.vocab_size - 1));
    s.story_shown.story_id = 100 + rng.uniform_int(3);
    s.story_shown.title_token_ids = {1 + rng.uniform_int(f.vocab_size - 1)};
    s.story_shown.product_title_token_ids = {1 + rng.uniform_int(f.vocab_size - 1)};
    s.story_shown.dense_features = randn(f.dense_story_dim, 1, rng).col(0);
    s.candidate_ids = {s.story_shown.story_id};
    for (int p = 0; p < 2; ++p) {
      data::Product prod;
      prod.product_id = 1000 + p;
      prod.title_token_ids = {1 + rng.uniform_int(f.vocab_size - 1)};
      s.impressed_products.push_back(prod);
    }
    s.feedback.product_clicked = {rng.bernoulli(0.5) ? 1 : 0, rng.bernoulli(0.5) ? 1 : 0};
    s.feedback.product_ordered = {0, 0};
    for (int p = 0; p < 2; ++p)
      if (s.feedback.product_clicked[p])
        s.feedback.engaged_product_ids.push_back(s.impressed_products[p].product_id);
    s.feedback.story_clicked = rng.bernoulli(0.5) ? 1 : 0;
    e.sessions.push_back(std::move(s));
  }
  return e;
}

model::DynamicModel micro_model(Rng& rng, double w_T, double w_D, double w_P, double w_Pl) {
  model::DynamicModelConfig cfg;
  cfg.hidden_dim = 3;
  cfg.state_dim = 3;
  cfg.reward_hidden = 3;
  cfg.w_T = w_T;
  cfg.w_D = w_D;
  cfg.w_P = w_P;
  cfg.w_Pl = w_Pl;
  cfg.features.embedding_dim = 3;
  cfg.features.dense_story_dim = 2;
  cfg.features.vocab_size = 6;
  cfg.features.candidate_pool_size = 3;
  return model::DynamicModel::init(cfg, 2, rng);
}

/// Gradient of the weighted episode loss (three-step unroll) w.r.t. every
/// model parameter.
double check_dynamic_loss(Rng& rng, double w_T, double w_D, double w_P, double w_Pl) {
  model::DynamicModel m = micro_model(rng, w_T, w_D, w_P, w_Pl);
  data::Episode e = micro_episode(m.cfg.features, 3, 2, rng);

  auto forward = [&] {
    Tape t;
    return t.scalar_value(m.episode_loss(t, e, 1.0));
  };
  Tape t;
  m.params.zero_grads();
  t.backward(m.episode_loss(t, e, 1.0));

  double worst = 0.0;
  for (const std::string& name : m.params.names()) {
    Matrix g = m.params.grad(name);
    worst = std::max(worst, check_matrix(m.params.mutable_value(name), g, forward));
  }
  return worst;
}

double check_critic_loss(Rng& rng) {
  ctrl::Critic critic = ctrl::Critic::init(3, 3, rng);
  Matrix states = randn(4, 3, rng);
  Matrix targets = randn(4, 1, rng);
  auto forward = [&] {
    Tape t;
    return t.scalar_value(ctrl::critic_loss(t, critic, states, targets));
  };
  Tape t;
  critic.params.zero_grads();
  t.backward(ctrl::critic_loss(t, critic, states, targets));
  double worst = 0.0;
  for (const std::string& name : critic.params.names()) {
    Matrix g = critic.params.grad(name);
    worst = std::max(worst, check_matrix(critic.params.mutable_value(name), g, forward));
  }
  return worst;
}

double check_actor_objective(Rng& rng) {
  int state_dim = 3, feat_dim = 2, K = 3;
  ctrl::Actor actor = ctrl::Actor::init(state_dim, feat_dim, 3, rng);
  std::vector<Vector> states;
  std::vector<Matrix> feats;
  std::vector<ctrl::ActorBatchItem> batch;
  for (int i = 0; i < 3; ++i) {
    states.push_back(randn(state_dim, 1, rng).col(0));
    feats.push_back(randn(K, feat_dim, rng));
  }
  double eps = 0.2;
  for (int i = 0; i < 3; ++i) {
    ctrl::ActorBatchItem it;
    it.state = &states[i];
    it.cand_feats = &feats[i];
    it.action = rng.uniform_int(K);
    it.adv = rng.normal();
    // place pi_old so the ratio sits away from the clip kinks
    double p = actor.probs(states[i], feats[i])[it.action];
    it.pi_old = rng.bernoulli(0.5) ? p / (1.0 + 2.5 * eps) : p / (1.0 - 0.5 * eps);
    batch.push_back(it);
  }
  auto forward = [&] {
    Tape t;
    return t.scalar_value(ctrl::actor_objective(t, actor, batch, eps, 0.01));
  };
  Tape t;
  actor.params.zero_grads();
  t.backward(ctrl::actor_objective(t, actor, batch, eps, 0.01));
  double worst = 0.0;
  for (const std::string& name : actor.params.names()) {
    Matrix g = actor.params.grad(name);
    worst = std::max(worst, check_matrix(actor.params.mutable_value(name), g, forward));
  }
  return worst;
}

double check_imitation_loss(Rng& rng) {
  int state_dim = 3, feat_dim = 2, K = 3;
  ctrl::Actor actor = ctrl::Actor::init(state_dim, feat_dim, 3, rng);
  std::vector<pipe::ImitationSample> samples(3);
  std::vector<const pipe::ImitationSample*> batch;
  for (auto& s : samples) {
    s.state = randn(state_dim, 1, rng).col(0);
    s.cand_feats = randn(K, feat_dim, rng);
    s.action = rng.uniform_int(K);
    batch.push_back(&s);
  }
  auto forward = [&] {
    Tape t;
    return t.scalar_value(pipe::imitation_loss_var(t, actor, batch, 1e-4));
  };
  Tape t;
  actor.params.zero_grads();
  t.backward(pipe::imitation_loss_var(t, actor, batch, 1e-4));
  double worst = 0.0;
  for (const std::string& name : actor.params.names()) {
    Matrix g = actor.params.grad(name);
    worst = std::max(worst, check_matrix(actor.params.mutable_value(name), g, forward));
  }
  return worst;
}

}  // namespace

std::vector<CheckResult> run_gradient_certification(int n_seeds,
                                                    const std::string& corrupt_op) {
  struct Check {
    std::string name;
    double threshold;
    std::function<double(Rng&)> run;
  };
  std::vector<Check> checks = {
      {"dense_identity", 1e-6, [](Rng& r) { return check_dense(r, Activation::identity); }},
      {"dense_relu", 1e-6, [](Rng& r) { return check_dense(r, Activation::relu); }},
      {"dense_tanh", 1e-6, [](Rng& r) { return check_dense(r, Activation::tanh); }},
      {"dense_sigmoid", 1e-6, [](Rng& r) { return check_dense(r, Activation::sigmoid); }},
      {"dense_jacobian", 1e-6, check_dense_jacobian},
      {"gru_step", 1e-5, check_gru},
      {"softmax", 1e-6, check_softmax},
      {"cross_entropy", 1e-8, check_cross_entropy},
      {"mse", 1e-8, check_mse},
      {"entropy", 1e-6, check_entropy},
      {"embedding_mean", 1e-6, check_embedding},
      {"dense_gru_mse", 1e-5, check_composite},
      {"transition_loss", 1e-4, [](Rng& r) { return check_dynamic_loss(r, 1, 0, 0, 0); }},
      {"story_click_loss", 1e-4, [](Rng& r) { return check_dynamic_loss(r, 0, 1, 0, 0); }},
      {"product_click_loss", 1e-4, [](Rng& r) { return check_dynamic_loss(r, 0, 0, 1, 0); }},
      {"product_repr_loss", 1e-4, [](Rng& r) { return check_dynamic_loss(r, 0, 0, 0, 1); }},
      {"combined_model_loss", 1e-4,
       [](Rng& r) { return check_dynamic_loss(r, 1, 1, 1, 1); }},
      {"critic_loss", 1e-5, check_critic_loss},
      {"actor_clipped_objective", 1e-4, check_actor_objective},
      {"imitation_loss", 1e-5, check_imitation_loss},
  };

  std::vector<CheckResult> results;
  for (const Check& c : checks) {
    CheckResult res{c.name, 0.0, c.threshold, false};
    for (int s = 0; s < n_seeds; ++s) {
      Rng rng = Rng::derive(0xced5, fnv1a64(c.name) ^ uint64_t(s));
      res.max_rel_err = std::max(res.max_rel_err, c.run(rng));
    }
    if (c.name == corrupt_op) res.max_rel_err += 1e-2;  // fault-injection hook
    res.pass = res.max_rel_err < c.threshold;
    results.push_back(res);
  }
  return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const CheckResult& r : results)
    if (!r.pass) return false;
  return true;
}

std::string results_table(const std::vector<CheckResult>& results) {
  std::ostringstream out;
  out << "operation,max_rel_err,threshold,status\n";
  for (const CheckResult& r : results)
    out << r.op << "," << r.max_rel_err << "," << r.threshold << ","
        << (r.pass ? "pass" : "FAIL") << "\n";
  return out.str();
}

}  // namespace dress::gradcheck
