#include "dress/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dress::model {

void DynamicModelConfig::validate() const {
  if (hidden_dim < 1 || state_dim < 1 || reward_hidden < 1)
    throw ConfigError("dynamic model: dimensions must be positive");
  if (w_T < 0 || w_D < 0 || w_P < 0 || w_Pl < 0)
    throw ConfigError("dynamic model: loss weights must be >= 0");
  if (features.embedding_dim < 1 || features.vocab_size < 2)
    throw ConfigError("dynamic model: invalid feature config");
}

DynamicModel DynamicModel::init(const DynamicModelConfig& cfg, int profile_dim, Rng& rng) {
  cfg.validate();
  DynamicModel m;
  m.cfg = cfg;
  m.profile_dim = profile_dim;
  const FeatureConfig& f = cfg.features;
  m.params.add("embed.table", nn::glorot_uniform(f.vocab_size, f.embedding_dim, rng));
  nn::init_dense(m.params, "init", profile_dim, cfg.hidden_dim, rng);
  nn::init_gru(m.params, "gru", f.transition_input_dim(), cfg.hidden_dim, rng);
  nn::init_dense(m.params, "query", cfg.hidden_dim, f.embedding_dim, rng);
  nn::init_dense(m.params, "state", cfg.hidden_dim + f.embedding_dim, cfg.state_dim, rng);
  int core_in = cfg.state_dim + f.story_dim() + f.embedding_dim;
  nn::init_dense(m.params, "reward.core", core_in, cfg.reward_hidden, rng);
  nn::init_dense(m.params, "reward.story", cfg.reward_hidden, 1, rng);
  nn::init_dense(m.params, "reward.click", cfg.reward_hidden, 1, rng);
  nn::init_dense(m.params, "reward.rp", cfg.reward_hidden, f.embedding_dim, rng);
  return m;
}

DynamicModel DynamicModel::from_params(const DynamicModelConfig& cfg, ParamStore params) {
  cfg.validate();
  DynamicModel m;
  m.cfg = cfg;
  for (const char* name : {"embed.table", "init.W", "gru.W_z", "query.W", "state.W",
                           "reward.core.W", "reward.story.W", "reward.click.W",
                           "reward.rp.W"})
    if (!params.has(name))
      throw DataError(std::string("dynamic model checkpoint missing parameter ") + name);
  if (params.value("embed.table").rows() != cfg.features.vocab_size ||
      params.value("embed.table").cols() != cfg.features.embedding_dim)
    throw DataError("dynamic model checkpoint embedding shape does not match the config");
  if (params.value("gru.W_z").rows() != cfg.features.transition_input_dim() ||
      params.value("gru.W_z").cols() != cfg.hidden_dim)
    throw DataError("dynamic model checkpoint GRU shape does not match the config");
  m.profile_dim = int(params.value("init.W").rows());
  m.params = std::move(params);
  return m;
}

// ---- plain path ----

Vector DynamicModel::init_hidden(const Vector& user_profile) const {
  if (int(user_profile.size()) != profile_dim)
    throw ContractError("init_hidden: profile length " +
                        std::to_string(user_profile.size()) + " != configured " +
                        std::to_string(profile_dim));
  Matrix h = nn::dense_forward(user_profile.transpose(), params.value("init.W"),
                               params.value("init.b"), nn::Activation::tanh);
  return h.row(0).transpose();
}

std::pair<Vector, Vector> DynamicModel::transition_step(
    const Vector& h, const Story& story, const Vector& query_emb, const Feedback& feedback,
    const std::vector<Product>& impressed) const {
  const Matrix& table = embedding();
  Vector in(cfg.features.transition_input_dim());
  in << data::featurize_story(story, table, cfg.features), query_emb,
      data::featurize_feedback(feedback, impressed, table, cfg.features);
  Matrix hn = nn::gru_step(in.transpose(), h.transpose(), params, "gru");
  Matrix qh = nn::dense_forward(hn, params.value("query.W"), params.value("query.b"),
                                nn::Activation::identity);
  return {hn.row(0).transpose(), qh.row(0).transpose()};
}

std::pair<Vector, Vector> DynamicModel::transition_step(const Vector& h,
                                                        const Session& s) const {
  return transition_step(h, s.story_shown, query_embedding(s.query), s.feedback,
                         s.impressed_products);
}

Vector DynamicModel::state_repr(const Vector& h, const Vector& query_emb) const {
  Vector in(h.size() + query_emb.size());
  in << h, query_emb;
  Matrix s = nn::dense_forward(in.transpose(), params.value("state.W"),
                               params.value("state.b"), nn::Activation::tanh);
  return s.row(0).transpose();
}

RewardPrediction DynamicModel::reward_forward(const Vector& s, const Story& story,
                                              const std::vector<Product>& products) const {
  if (products.empty()) throw ContractError("reward_forward: empty product list");
  const Matrix& table = embedding();
  Vector story_feat = data::featurize_story(story, table, cfg.features);
  RewardPrediction out;
  Vector mean_prod = Vector::Zero(cfg.features.embedding_dim);
  std::vector<Vector> prod_feats;
  for (const Product& p : products) {
    prod_feats.push_back(data::featurize_product(p, table));
    mean_prod += prod_feats.back();
  }
  mean_prod /= double(products.size());

  auto core = [&](const Vector& prod) {
    Vector in(s.size() + story_feat.size() + prod.size());
    in << s, story_feat, prod;
    return nn::dense_forward(in.transpose(), params.value("reward.core.W"),
                             params.value("reward.core.b"), nn::Activation::tanh);
  };
  Matrix story_core = core(mean_prod);
  out.story_click = nn::dense_forward(story_core, params.value("reward.story.W"),
                                      params.value("reward.story.b"),
                                      nn::Activation::sigmoid)(0, 0);
  for (const Vector& pf : prod_feats) {
    Matrix c = core(pf);
    out.product_click.push_back(nn::dense_forward(c, params.value("reward.click.W"),
                                                  params.value("reward.click.b"),
                                                  nn::Activation::sigmoid)(0, 0));
    out.product_repr.push_back(nn::dense_forward(c, params.value("reward.rp.W"),
                                                 params.value("reward.rp.b"),
                                                 nn::Activation::identity)
                                   .row(0)
                                   .transpose());
  }
  return out;
}

std::vector<Vector> DynamicModel::hidden_states(const Episode& e) const {
  std::vector<Vector> h;
  h.reserve(e.sessions.size() + 1);
  h.push_back(init_hidden(e.user_profile));
  for (const Session& s : e.sessions) h.push_back(transition_step(h.back(), s).first);
  return h;
}

// ---- tape path ----

DynamicModel::TapeVars DynamicModel::lease(Tape& t) const {
  TapeVars tv;
  tv.table = t.param(const_cast<ParamStore&>(params), "embed.table");
  tv.gru = nn::lease_gru(t, const_cast<ParamStore&>(params), "gru");
  return tv;
}

Var DynamicModel::init_hidden(Tape& t, const TapeVars&, const Vector& user_profile) const {
  if (int(user_profile.size()) != profile_dim)
    throw ContractError("init_hidden: profile length mismatch");
  auto& ps = const_cast<ParamStore&>(params);
  return nn::dense_forward(t, t.constant(user_profile.transpose()), t.param(ps, "init.W"),
                           t.param(ps, "init.b"), nn::Activation::tanh);
}

std::pair<Var, Var> DynamicModel::transition_step(Tape& t, const TapeVars& tv, Var h,
                                                  const Session& s) const {
  auto& ps = const_cast<ParamStore&>(params);
  Var story = data::featurize_story(t, s.story_shown, tv.table, cfg.features);
  Var query = data::featurize_query(t, s.query, tv.table);
  Var fb = data::featurize_feedback(t, s.feedback, s.impressed_products, tv.table,
                                    cfg.features);
  Var in = t.concat_cols({story, query, fb});
  Var hn = nn::gru_step(t, in, h, tv.gru);
  Var qh = nn::dense_forward(t, hn, t.param(ps, "query.W"), t.param(ps, "query.b"),
                             nn::Activation::identity);
  return {hn, qh};
}

Var DynamicModel::state_repr(Tape& t, const TapeVars&, Var h, Var query_emb) const {
  auto& ps = const_cast<ParamStore&>(params);
  return nn::dense_forward(t, t.concat_cols({h, query_emb}), t.param(ps, "state.W"),
                           t.param(ps, "state.b"), nn::Activation::tanh);
}

DynamicModel::RewardVars DynamicModel::reward_forward(Tape& t, const TapeVars& tv, Var s,
                                                      const Session& sess) const {
  if (sess.impressed_products.empty())
    throw ContractError("reward_forward: empty product list");
  auto& ps = const_cast<ParamStore&>(params);
  Var story = data::featurize_story(t, sess.story_shown, tv.table, cfg.features);
  std::vector<Var> prod_feats;
  for (const Product& p : sess.impressed_products)
    prod_feats.push_back(data::featurize_product(t, p, tv.table));
  Var mean_prod = t.scale(t.sum_vars(prod_feats), 1.0 / double(prod_feats.size()));

  // one core input row per product plus the story row (mean product)
  std::vector<Var> rows;
  for (Var pf : prod_feats) rows.push_back(t.concat_cols({s, story, pf}));
  rows.push_back(t.concat_cols({s, story, mean_prod}));
  Var core = nn::dense_forward(t, t.stack_rows(rows), t.param(ps, "reward.core.W"),
                               t.param(ps, "reward.core.b"), nn::Activation::tanh);
  int n = int(prod_feats.size());
  RewardVars out;
  Var story_core = t.rows(core, n, 1);
  out.story_click = nn::dense_forward(t, story_core, t.param(ps, "reward.story.W"),
                                      t.param(ps, "reward.story.b"),
                                      nn::Activation::sigmoid);
  for (int j = 0; j < n; ++j) {
    Var c = t.rows(core, j, 1);
    out.product_click.push_back(nn::dense_forward(t, c, t.param(ps, "reward.click.W"),
                                                  t.param(ps, "reward.click.b"),
                                                  nn::Activation::sigmoid));
    out.product_repr.push_back(nn::dense_forward(t, c, t.param(ps, "reward.rp.W"),
                                                 t.param(ps, "reward.rp.b"),
                                                 nn::Activation::identity));
  }
  return out;
}

Var DynamicModel::episode_loss(Tape& t, const Episode& e, double scale) const {
  if (e.sessions.empty()) throw ContractError("episode_loss: empty episode");
  TapeVars tv = lease(t);
  Var h = init_hidden(t, tv, e.user_profile);
  std::vector<Var> terms;
  Var prev_q_hat;  // prediction made by the previous session, if any
  for (size_t i = 0; i < e.sessions.size(); ++i) {
    const Session& s = e.sessions[i];
    Var query = data::featurize_query(t, s.query, tv.table);
    if (prev_q_hat.valid() && cfg.w_T > 0.0)
      terms.push_back(t.scale(nn::mse(t, prev_q_hat, query), cfg.w_T));

    Var st = state_repr(t, tv, h, query);
    RewardVars pred = reward_forward(t, tv, st, s);
    if (cfg.w_D > 0.0)
      terms.push_back(
          t.scale(nn::cross_entropy(t, pred.story_click, s.feedback.story_clicked), cfg.w_D));
    int n = int(s.impressed_products.size());
    if (cfg.w_P > 0.0) {
      std::vector<Var> ce;
      for (int j = 0; j < n; ++j)
        ce.push_back(nn::cross_entropy(t, pred.product_click[j], s.feedback.product_clicked[j]));
      terms.push_back(t.scale(t.sum_vars(ce), cfg.w_P / double(n)));
    }
    if (cfg.w_Pl > 0.0) {
      std::vector<Var> cse;
      for (int j = 0; j < n; ++j) {
        if (!s.feedback.product_clicked[j]) continue;  // conditional: only clicked products
        Var target = data::featurize_product(t, s.impressed_products[j], tv.table);
        cse.push_back(t.square_norm(t.sub(pred.product_repr[j], target)));
      }
      if (!cse.empty()) terms.push_back(t.scale(t.sum_vars(cse), cfg.w_Pl / double(n)));
    }

    auto [hn, qh] = transition_step(t, tv, h, s);
    h = hn;
    prev_q_hat = qh;  // compared against the next session's query, if there is one
  }
  if (terms.empty()) return t.scalar(0.0);
  return t.scale(t.sum_vars(terms), scale);
}

SessionLosses session_losses(const RewardPrediction& pred, const Vector& q_hat,
                             const Session& s, const Vector* next_query_features,
                             const Matrix& table, const FeatureConfig& features) {
  SessionLosses out;
  if (next_query_features)
    out.transition = nn::mse(q_hat.transpose(), next_query_features->transpose());
  out.story_click = nn::cross_entropy(pred.story_click, s.feedback.story_clicked);
  int n = int(s.impressed_products.size());
  double ce = 0.0, cse = 0.0;
  for (int j = 0; j < n; ++j) {
    ce += nn::cross_entropy(pred.product_click[j], s.feedback.product_clicked[j]);
    if (s.feedback.product_clicked[j]) {
      Vector target = data::featurize_product(s.impressed_products[j], table);
      cse += (pred.product_repr[j] - target).squaredNorm();
    }
  }
  out.product_click = ce / double(n);
  out.product_repr = cse / double(n);
  return out;
}

// ---- training ----

namespace {

struct EpochLosses {
  double transition = 0, story = 0, product = 0, repr = 0, total = 0;
  long long sessions = 0;
};

EpochLosses eval_losses(const DynamicModel& m, const std::vector<const Episode*>& episodes) {
  EpochLosses acc;
  const Matrix& table = m.embedding();
  for (const Episode* e : episodes) {
    Vector h = m.init_hidden(e->user_profile);
    std::vector<Vector> qfeat;
    for (const Session& s : e->sessions) qfeat.push_back(m.query_embedding(s.query));
    for (size_t i = 0; i < e->sessions.size(); ++i) {
      const Session& s = e->sessions[i];
      Vector st = m.state_repr(h, qfeat[i]);
      RewardPrediction pred = m.reward_forward(st, s.story_shown, s.impressed_products);
      auto [hn, qh] = m.transition_step(h, s);
      const Vector* next_q = (i + 1 < e->sessions.size()) ? &qfeat[i + 1] : nullptr;
      SessionLosses sl = session_losses(pred, qh, s, next_q, table, m.cfg.features);
      acc.transition += sl.transition.value_or(0.0);
      acc.story += sl.story_click;
      acc.product += sl.product_click;
      acc.repr += sl.product_repr;
      acc.total += sl.weighted_total(m.cfg);
      acc.sessions += 1;
      h = hn;
    }
  }
  return acc;
}

}  // namespace

std::pair<DynamicModel, std::vector<TrainCurvePoint>> train_dynamic_model(
    const Dataset& dataset, const DynamicModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  if (dataset.episodes.empty()) throw ContractError("train_dynamic_model: empty dataset");
  int profile_dim = int(dataset.episodes.front().user_profile.size());
  Rng init_rng = Rng::derive(seed, 1);
  DynamicModel model = DynamicModel::init(cfg, profile_dim, init_rng);

  // deterministic train/validation split by shuffled episode index
  std::vector<int> order(dataset.episodes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  Rng split_rng = Rng::derive(seed, 2);
  split_rng.shuffle(order);
  int n_val = int(std::floor(cfg.val_fraction * double(order.size())));
  if (n_val == 0 && order.size() >= 10) n_val = 1;
  std::vector<const Episode*> train, val;
  for (size_t i = 0; i < order.size(); ++i) {
    const Episode* e = &dataset.episodes[order[i]];
    (int(i) < n_val ? val : train).push_back(e);
  }
  if (train.empty()) throw ContractError("train_dynamic_model: no training episodes");
  if (val.empty()) val = train;  // tiny datasets validate on the training set

  std::vector<TrainCurvePoint> curve;
  auto record = [&](int epoch) {
    EpochLosses tr = eval_losses(model, train);
    EpochLosses va = eval_losses(model, val);
    TrainCurvePoint p;
    p.epoch = epoch;
    double n = double(std::max<long long>(tr.sessions, 1));
    p.transition = tr.transition / n;
    p.story_click = tr.story / n;
    p.product_click = tr.product / n;
    p.product_repr = tr.repr / n;
    p.total = tr.total / n;
    p.val_total = va.total / double(std::max<long long>(va.sessions, 1));
    curve.push_back(p);
  };
  record(0);

  nn::AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  Rng shuffle_rng = Rng::derive(seed, 3);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<const Episode*> sched = train;
    shuffle_rng.shuffle(sched);
    for (size_t start = 0; start < sched.size(); start += size_t(cfg.batch_episodes)) {
      size_t stop = std::min(sched.size(), start + size_t(cfg.batch_episodes));
      long long batch_sessions = 0;
      for (size_t i = start; i < stop; ++i) batch_sessions += sched[i]->sessions.size();
      model.params.zero_grads();
      for (size_t i = start; i < stop; ++i) {
        Tape t;
        Var loss = model.episode_loss(t, *sched[i], 1.0 / double(batch_sessions));
        double lv = t.scalar_value(loss);
        if (!std::isfinite(lv))
          throw NumericError("dynamic-model training: non-finite loss at epoch " +
                             std::to_string(epoch));
        t.backward(loss);
      }
      model.params.clip_grad_norm(cfg.grad_clip);
      model.params.adam_step(adam);
    }
    record(epoch);
  }
  return {std::move(model), std::move(curve)};
}

std::string curve_to_csv(const std::vector<TrainCurvePoint>& curve) {
  std::ostringstream out;
  out << "epoch,transition,story_click,product_click,product_repr,total,val_total\n";
  for (const TrainCurvePoint& p : curve)
    out << p.epoch << "," << p.transition << "," << p.story_click << "," << p.product_click
        << "," << p.product_repr << "," << p.total << "," << p.val_total << "\n";
  return out.str();
}

}  // namespace dress::model
