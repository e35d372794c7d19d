#include "dress/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dress::eval {

double session_reward(const Session& s, EvalConfig::RewardField field) {
  if (field == EvalConfig::RewardField::click)
    return s.feedback.any_product_click() ? 1.0 : 0.0;
  return s.feedback.any_product_order() ? 1.0 : 0.0;
}

double ctr(const std::vector<const Session*>& sessions) {
  if (sessions.empty()) throw ContractError("ctr: empty session list");
  double sum = 0.0;
  for (const Session* s : sessions) sum += s->feedback.any_product_click() ? 1.0 : 0.0;
  return sum / double(sessions.size());
}

double cvr(const std::vector<const Session*>& sessions) {
  if (sessions.empty()) throw ContractError("cvr: empty session list");
  double sum = 0.0;
  for (const Session* s : sessions) sum += s->feedback.any_product_order() ? 1.0 : 0.0;
  return sum / double(sessions.size());
}

std::vector<const Session*> all_sessions(const std::vector<Episode>& episodes) {
  std::vector<const Session*> out;
  for (const Episode& e : episodes)
    for (const Session& s : e.sessions) out.push_back(&s);
  return out;
}

namespace {

struct EpisodeWindow {
  double log_weight = 0.0;
  double reward_sum = 0.0;
  int length = 0;
};

EpisodeWindow window_of(const Episode& e, const std::vector<double>& pi,
                        const std::vector<double>& b, const EvalConfig& cfg) {
  int T = int(e.sessions.size());
  int W = std::min(cfg.horizon + 1, T);
  EpisodeWindow w;
  w.length = W;
  for (int i = T - W; i < T; ++i) {
    if (b[size_t(i)] <= 0.0)
      throw ContractError("twis: zero logging propensity at user " +
                          std::to_string(e.user_id) + " session index " + std::to_string(i));
    if (pi[size_t(i)] < 0.0)
      throw ContractError("twis: negative target probability");
    w.log_weight += std::log(pi[size_t(i)]) - std::log(b[size_t(i)]);
    w.reward_sum += session_reward(e.sessions[size_t(i)], cfg.reward_field);
  }
  return w;
}

double twis_from_windows(const std::vector<EpisodeWindow>& ws) {
  double max_lw = -std::numeric_limits<double>::infinity();
  for (const EpisodeWindow& w : ws) max_lw = std::max(max_lw, w.log_weight);
  if (!std::isfinite(max_lw))
    throw NumericError("twis: all importance weights are zero");
  double num = 0.0, den = 0.0;
  for (const EpisodeWindow& w : ws) {
    double weight = std::exp(w.log_weight - max_lw);
    num += weight * w.reward_sum;
    den += weight * double(w.length);
  }
  if (den <= 0.0) throw NumericError("twis: degenerate normalization");
  return num / den;
}

std::vector<EpisodeWindow> all_windows(const std::vector<Episode>& episodes,
                                       const TakenProbs& pi, const TakenProbs& b,
                                       const EvalConfig& cfg) {
  if (episodes.empty()) throw ContractError("twis: empty episode list");
  if (pi.size() != episodes.size() || b.size() != episodes.size())
    throw ContractError("twis: probability lists do not align with episodes");
  std::vector<EpisodeWindow> ws;
  ws.reserve(episodes.size());
  for (size_t i = 0; i < episodes.size(); ++i) {
    if (pi[i].size() != episodes[i].sessions.size() ||
        b[i].size() != episodes[i].sessions.size())
      throw ContractError("twis: probability lists do not align with sessions of user " +
                          std::to_string(episodes[i].user_id));
    ws.push_back(window_of(episodes[i], pi[i], b[i], cfg));
  }
  return ws;
}

}  // namespace

double twis(const std::vector<Episode>& episodes, const TakenProbs& pi, const TakenProbs& b,
            const EvalConfig& cfg) {
  return twis_from_windows(all_windows(episodes, pi, b, cfg));
}

double twis_bootstrap_se(const std::vector<Episode>& episodes, const TakenProbs& pi,
                         const TakenProbs& b, const EvalConfig& cfg, int resamples,
                         uint64_t seed) {
  std::vector<EpisodeWindow> ws = all_windows(episodes, pi, b, cfg);
  int n = int(ws.size());
  Rng rng(seed);
  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < resamples; ++r) {
    std::vector<EpisodeWindow> sample;
    sample.reserve(n);
    for (int i = 0; i < n; ++i) sample.push_back(ws[size_t(rng.uniform_int(n))]);
    double est = twis_from_windows(sample);
    sum += est;
    sum_sq += est * est;
  }
  double mean = sum / resamples;
  return std::sqrt(std::max(0.0, sum_sq / resamples - mean * mean));
}

double log_ratio(const TakenProbs& pi, const TakenProbs& b) {
  if (pi.size() != b.size()) throw ContractError("log_ratio: misaligned inputs");
  double sum = 0.0;
  long long n = 0;
  for (size_t i = 0; i < pi.size(); ++i) {
    if (pi[i].size() != b[i].size()) throw ContractError("log_ratio: misaligned inputs");
    for (size_t j = 0; j < pi[i].size(); ++j) {
      if (pi[i][j] <= 0.0 || b[i][j] <= 0.0)
        throw ContractError("log_ratio: non-positive probability");
      sum += std::log(pi[i][j] / b[i][j]);
      ++n;
    }
  }
  if (n == 0) throw ContractError("log_ratio: no sessions");
  return sum / double(n);
}

double tv_divergence(const Vector& b, const Vector& pi) {
  if (b.size() != pi.size())
    throw ContractError("tv_divergence: distributions over different candidate sets");
  return 0.5 * (pi - b).cwiseAbs().sum();
}

double kl_divergence(const Vector& b, const Vector& pi) {
  if (b.size() != pi.size())
    throw ContractError("kl_divergence: distributions over different candidate sets");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    if (b[i] <= 0.0) continue;  // 0 log(0/x) := 0
    if (pi[i] <= 0.0)
      throw ContractError("kl_divergence: reference mass where target has none");
    kl += b[i] * std::log(b[i] / pi[i]);
  }
  return kl;
}

DistProvider actor_provider(const model::DynamicModel& dynamics, const ctrl::Actor& actor,
                            const data::StoryCatalog& catalog) {
  // slate feature rows are memoized across episodes via a shared cache
  auto cache = std::make_shared<std::map<std::vector<int>, Matrix>>();
  const model::DynamicModel* dyn = &dynamics;
  const ctrl::Actor* act = &actor;
  const data::StoryCatalog* cat = &catalog;
  return [dyn, act, cat, cache](const Episode& e) {
    std::vector<Vector> out;
    Vector h = dyn->init_hidden(e.user_profile);
    for (const Session& s : e.sessions) {
      auto it = cache->find(s.candidate_ids);
      if (it == cache->end()) {
        Matrix m(s.candidate_ids.size(), dyn->cfg.features.story_dim());
        for (size_t k = 0; k < s.candidate_ids.size(); ++k)
          m.row(Eigen::Index(k)) = dyn->story_features(cat->at(s.candidate_ids[k])).transpose();
        it = cache->emplace(s.candidate_ids, std::move(m)).first;
      }
      out.push_back(act->probs(h, it->second));
      h = dyn->transition_step(h, s).first;
    }
    return out;
  };
}

DistProvider uniform_provider() {
  return [](const Episode& e) {
    std::vector<Vector> out;
    for (const Session& s : e.sessions) {
      int k = int(s.candidate_ids.size());
      out.push_back(Vector::Constant(k, 1.0 / double(k)));
    }
    return out;
  };
}

DistProvider logging_provider(const env::EnvParams& env, const env::LoggingPolicy& policy) {
  const env::EnvParams* ep = &env;
  env::LoggingPolicy pol = policy;
  return [ep, pol](const Episode& e) {
    std::vector<Vector> out;
    for (const Session& s : e.sessions) out.push_back(pol.probs(*ep, s.candidate_ids));
    return out;
  };
}

TakenProbs taken_probs(const DistProvider& provider, const std::vector<Episode>& episodes) {
  TakenProbs out;
  out.reserve(episodes.size());
  for (const Episode& e : episodes) {
    std::vector<Vector> dists = provider(e);
    std::vector<double> probs;
    probs.reserve(e.sessions.size());
    for (size_t i = 0; i < e.sessions.size(); ++i)
      probs.push_back(dists[i][e.sessions[i].action_index()]);
    out.push_back(std::move(probs));
  }
  return out;
}

std::vector<PolicyDifferenceRow> policy_difference_report(
    const std::vector<std::pair<std::string, DistProvider>>& policies,
    const DistProvider& reference, const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw ContractError("policy_difference_report: no episodes");
  std::vector<std::pair<std::string, DistProvider>> rows = policies;
  rows.emplace_back("unif", uniform_provider());

  std::vector<PolicyDifferenceRow> out;
  for (const auto& [name, provider] : rows) {
    PolicyDifferenceRow row;
    row.policy = name;
    double lr = 0, tv = 0, kl = 0;
    long long n = 0;
    for (const Episode& e : episodes) {
      std::vector<Vector> ref = reference(e);
      std::vector<Vector> tgt = provider(e);
      for (size_t i = 0; i < e.sessions.size(); ++i) {
        int a = e.sessions[i].action_index();
        if (tgt[i][a] <= 0.0 || ref[i][a] <= 0.0)
          throw ContractError("policy_difference_report: zero probability on a taken action");
        lr += std::log(tgt[i][a] / ref[i][a]);
        tv += tv_divergence(ref[i], tgt[i]);
        kl += kl_divergence(ref[i], tgt[i]);
        ++n;
      }
    }
    row.mean_log_ratio = lr / double(n);
    row.mean_tv = tv / double(n);
    row.mean_kl = kl / double(n);
    out.push_back(std::move(row));
  }
  return out;
}

std::string policy_difference_csv(const std::vector<PolicyDifferenceRow>& rows) {
  std::ostringstream out;
  out << "policy,log_ratio,tv,kl\n";
  for (const PolicyDifferenceRow& r : rows)
    out << r.policy << "," << r.mean_log_ratio << "," << r.mean_tv << "," << r.mean_kl
        << "\n";
  return out.str();
}

double sign_test_p(int wins, int trials) {
  if (trials < 1) return 1.0;
  // P(X >= wins) for X ~ Binomial(trials, 1/2)
  double p = 0.0;
  for (int k = wins; k <= trials; ++k) {
    double c = 1.0;
    for (int i = 0; i < k; ++i) c = c * double(trials - i) / double(i + 1);
    p += c;
  }
  return p * std::pow(0.5, trials);
}

// ---- cross-validated comparison ----

std::vector<FoldArtifacts> train_folds(const data::Dataset& dataset,
                                       const std::vector<pipe::PipelineVariant>& variants,
                                       const pipe::PipelineSettings& settings,
                                       const EvalConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::vector<std::vector<Episode>> folds =
      data::split_folds(dataset.episodes, cfg.folds, splitmix64(seed ^ 0xf01d));
  std::vector<FoldArtifacts> out;
  for (int f = 0; f < cfg.folds; ++f) {
    data::Dataset train;
    train.catalog = dataset.catalog;
    for (int g = 0; g < cfg.folds; ++g)
      if (g != f)
        train.episodes.insert(train.episodes.end(), folds[g].begin(), folds[g].end());
    pipe::PipelineSettings s = settings;
    s.seed = splitmix64(seed ^ uint64_t(1000 + f));
    FoldArtifacts art{pipe::run_pipeline_base(train, s), {}, folds[f]};
    for (pipe::PipelineVariant v : variants) {
      pipe::PipelineResult r = pipe::run_dress_pipeline(train, v, s, art.base);
      art.actors.emplace(pipe::to_string(v), std::move(r.actor));
    }
    out.push_back(std::move(art));
  }
  return out;
}

namespace {

MethodScores finalize(MethodScores m, const MethodScores& origin) {
  auto mean_std = [](const std::vector<double>& xs, double& mean, double& sd) {
    mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    sd = xs.size() > 1 ? std::sqrt(var / double(xs.size() - 1)) : 0.0;
  };
  mean_std(m.ctr_folds, m.ctr_mean, m.ctr_std);
  mean_std(m.cvr_folds, m.cvr_mean, m.cvr_std);
  double ctr_imp = 0, cvr_imp = 0;
  for (size_t f = 0; f < m.ctr_folds.size(); ++f) {
    ctr_imp += 100.0 * (m.ctr_folds[f] / origin.ctr_folds[f] - 1.0);
    cvr_imp += origin.cvr_folds[f] > 0.0
                   ? 100.0 * (m.cvr_folds[f] / origin.cvr_folds[f] - 1.0)
                   : 0.0;
    if (m.ctr_folds[f] > origin.ctr_folds[f]) ++m.ctr_wins;
    if (m.cvr_folds[f] > origin.cvr_folds[f]) ++m.cvr_wins;
  }
  m.ctr_improve_pct = ctr_imp / double(m.ctr_folds.size());
  m.cvr_improve_pct = cvr_imp / double(m.cvr_folds.size());
  m.ctr_p = sign_test_p(m.ctr_wins, int(m.ctr_folds.size()));
  m.cvr_p = sign_test_p(m.cvr_wins, int(m.cvr_folds.size()));
  return m;
}

}  // namespace

EvalReport evaluate_folds(const std::vector<FoldArtifacts>& folds,
                          const data::StoryCatalog& catalog, const EvalConfig& cfg) {
  if (folds.empty()) throw ContractError("evaluate_folds: no folds");
  EvalReport report;
  report.horizon = cfg.horizon;
  report.origin.method = "origin";
  std::map<std::string, MethodScores> methods;

  EvalConfig ctr_cfg = cfg;
  ctr_cfg.reward_field = EvalConfig::RewardField::click;
  EvalConfig cvr_cfg = cfg;
  cvr_cfg.reward_field = EvalConfig::RewardField::order;

  std::vector<std::vector<PolicyDifferenceRow>> diff_per_fold;
  for (const FoldArtifacts& art : folds) {
    const std::vector<Episode>& test = art.test_episodes;
    DistProvider pi0 = actor_provider(art.base.dynamics, art.base.imitation, catalog);
    TakenProbs b = taken_probs(pi0, test);
    // origin: the logged behavior itself (pi = b, weights cancel)
    report.origin.ctr_folds.push_back(twis(test, b, b, ctr_cfg));
    report.origin.cvr_folds.push_back(twis(test, b, b, cvr_cfg));

    std::vector<std::pair<std::string, DistProvider>> diff_policies;
    for (const auto& [name, actor] : art.actors) {
      DistProvider pi = actor_provider(art.base.dynamics, actor, catalog);
      TakenProbs p = taken_probs(pi, test);
      MethodScores& m = methods[name];
      m.method = name;
      m.ctr_folds.push_back(twis(test, p, b, ctr_cfg));
      m.cvr_folds.push_back(twis(test, p, b, cvr_cfg));
      diff_policies.emplace_back(name, pi);
    }
    diff_per_fold.push_back(policy_difference_report(diff_policies, pi0, test));
  }

  for (auto& [name, m] : methods) report.methods.push_back(finalize(m, report.origin));
  report.origin = finalize(report.origin, report.origin);

  // average the divergence table across folds
  if (!diff_per_fold.empty()) {
    std::map<std::string, PolicyDifferenceRow> acc;
    std::vector<std::string> order;
    for (const auto& rows : diff_per_fold)
      for (const PolicyDifferenceRow& r : rows) {
        if (!acc.count(r.policy)) order.push_back(r.policy);
        PolicyDifferenceRow& a = acc[r.policy];
        a.policy = r.policy;
        a.mean_log_ratio += r.mean_log_ratio / double(diff_per_fold.size());
        a.mean_tv += r.mean_tv / double(diff_per_fold.size());
        a.mean_kl += r.mean_kl / double(diff_per_fold.size());
      }
    for (const std::string& name : order) report.policy_difference.push_back(acc[name]);
  }
  return report;
}

EvalReport compare_methods(const data::Dataset& dataset,
                           const std::vector<pipe::PipelineVariant>& variants,
                           const pipe::PipelineSettings& settings, const EvalConfig& cfg,
                           uint64_t seed) {
  std::vector<FoldArtifacts> folds = train_folds(dataset, variants, settings, cfg, seed);
  return evaluate_folds(folds, dataset.catalog, cfg);
}

std::vector<HorizonPoint> horizon_sweep(const data::Dataset& dataset,
                                        const std::vector<pipe::PipelineVariant>& variants,
                                        const pipe::PipelineSettings& settings,
                                        const EvalConfig& cfg,
                                        const std::vector<int>& horizons, uint64_t seed) {
  std::vector<FoldArtifacts> folds = train_folds(dataset, variants, settings, cfg, seed);
  std::vector<HorizonPoint> out;
  for (int h : horizons) {
    EvalConfig c = cfg;
    c.horizon = h;
    EvalReport r = evaluate_folds(folds, dataset.catalog, c);
    for (const MethodScores& m : r.methods) {
      HorizonPoint p;
      p.horizon = h;
      p.method = m.method;
      p.mean = m.ctr_improve_pct;
      // std of per-fold improvements
      std::vector<double> imps;
      for (size_t f = 0; f < m.ctr_folds.size(); ++f)
        imps.push_back(100.0 * (m.ctr_folds[f] / r.origin.ctr_folds[f] - 1.0));
      double mean = std::accumulate(imps.begin(), imps.end(), 0.0) / double(imps.size());
      double var = 0.0;
      for (double x : imps) var += (x - mean) * (x - mean);
      p.stdev = imps.size() > 1 ? std::sqrt(var / double(imps.size() - 1)) : 0.0;
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::string horizon_csv(const std::vector<HorizonPoint>& points) {
  std::ostringstream out;
  out << "horizon,method,mean_improvement_pct,std\n";
  for (const HorizonPoint& p : points)
    out << p.horizon << "," << p.method << "," << p.mean << "," << p.stdev << "\n";
  return out.str();
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["horizon"] = horizon;
  auto method_json = [](const MethodScores& m) {
    nlohmann::ordered_json mj;
    mj["method"] = m.method;
    mj["twis_ctr"] = {{"per_fold", m.ctr_folds}, {"mean", m.ctr_mean}, {"std", m.ctr_std},
                      {"improvement_pct", m.ctr_improve_pct}, {"wins", m.ctr_wins},
                      {"p_value", m.ctr_p}};
    mj["twis_cvr"] = {{"per_fold", m.cvr_folds}, {"mean", m.cvr_mean}, {"std", m.cvr_std},
                      {"improvement_pct", m.cvr_improve_pct}, {"wins", m.cvr_wins},
                      {"p_value", m.cvr_p}};
    return mj;
  };
  j["origin"] = method_json(origin);
  nlohmann::ordered_json ms = nlohmann::ordered_json::array();
  for (const MethodScores& m : methods) ms.push_back(method_json(m));
  j["methods"] = std::move(ms);
  nlohmann::ordered_json diff = nlohmann::ordered_json::array();
  for (const PolicyDifferenceRow& r : policy_difference)
    diff.push_back({{"policy", r.policy}, {"log_ratio", r.mean_log_ratio},
                    {"tv", r.mean_tv}, {"kl", r.mean_kl}});
  j["policy_difference"] = std::move(diff);
  return j;
}

std::string EvalReport::estimates_csv() const {
  std::ostringstream out;
  out << "method,metric,mean,std,significance\n";
  auto row = [&](const MethodScores& m) {
    out << m.method << ",twis_ctr," << m.ctr_mean << "," << m.ctr_std << ","
        << (m.ctr_p < 0.05 ? "*" : "") << "\n";
    out << m.method << ",twis_cvr," << m.cvr_mean << "," << m.cvr_std << ","
        << (m.cvr_p < 0.05 ? "*" : "") << "\n";
  };
  row(origin);
  for (const MethodScores& m : methods) row(m);
  return out.str();
}

std::string EvalReport::improvement_csv() const {
  std::ostringstream out;
  out << "method,metric,mean,std,significance\n";
  for (const MethodScores& m : methods) {
    std::vector<double> ctr_imps, cvr_imps;
    for (size_t f = 0; f < m.ctr_folds.size(); ++f) {
      ctr_imps.push_back(100.0 * (m.ctr_folds[f] / origin.ctr_folds[f] - 1.0));
      cvr_imps.push_back(origin.cvr_folds[f] > 0.0
                             ? 100.0 * (m.cvr_folds[f] / origin.cvr_folds[f] - 1.0)
                             : 0.0);
    }
    auto sd = [](const std::vector<double>& xs) {
      double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      return xs.size() > 1 ? std::sqrt(var / double(xs.size() - 1)) : 0.0;
    };
    out << m.method << ",ctr_improvement_pct," << m.ctr_improve_pct << "," << sd(ctr_imps)
        << "," << (m.ctr_p < 0.05 ? "*" : "") << "\n";
    out << m.method << ",cvr_improvement_pct," << m.cvr_improve_pct << "," << sd(cvr_imps)
        << "," << (m.cvr_p < 0.05 ? "*" : "") << "\n";
  }
  return out.str();
}

}  // namespace dress::eval
