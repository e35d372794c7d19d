// dress: train and evaluate search-story recommendation policies on logged
// or synthetic session data.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "dress/config.hpp"
#include "dress/env.hpp"
#include "dress/evaluation.hpp"
#include "dress/gradcheck.hpp"
#include "dress/pipeline.hpp"

namespace fs = std::filesystem;
using dress::config::RunConfig;
using nlohmann::ordered_json;

namespace {

std::string out_root() {
  const char* env = std::getenv("DRESS_OUT_ROOT");
  return env ? std::string(env) : std::string(".");
}

std::string resolve_out(const std::string& path) {
  if (path.empty()) throw dress::ConfigError("output path is empty");
  fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(out_root()) / p).string();
}

void write_file(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw dress::DataError("cannot open for writing: " + path);
  out << content;
}

RunConfig load_config(const std::string& config_path, uint64_t seed_flag, bool have_seed) {
  RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::load(config_path);
  if (have_seed) cfg.seed = seed_flag;
  cfg.validate();
  return cfg;
}

struct LoadedRun {
  std::string variant;
  dress::nn::CheckpointHeader header;
  dress::ctrl::Actor actor;
};

/// Reads one trained run directory (as written by cmd_train).
LoadedRun load_run(const std::string& dir, const RunConfig& cfg) {
  LoadedRun run;
  std::ifstream in(fs::path(dir) / "report.json");
  if (!in) throw dress::DataError("run directory has no report.json: " + dir);
  nlohmann::json report;
  in >> report;
  run.variant = report.value("variant", "");
  auto [params, header] = dress::nn::ParamStore::load((fs::path(dir) / "actor.ckpt.json").string());
  if (header.config_hash != cfg.hash())
    throw dress::ConfigError(
        "checkpoint config hash " + header.config_hash + " in " + dir +
        " does not match the resolved config hash " + cfg.hash() +
        "; re-run with the original config file");
  run.header = header;
  run.actor = dress::ctrl::Actor::from_params(std::move(params));
  return run;
}

int cmd_gen_data(const std::string& config_path, uint64_t seed, int users,
                 const std::string& out_path) {
  RunConfig cfg = load_config(config_path, seed, true);
  if (users > 0) cfg.n_users = users;
  dress::env::EnvParams env = dress::env::make_scenario(cfg.scenario, cfg.scenario_seed);
  env.seed = seed;  // the generation stream is keyed by the run seed
  dress::env::LoggingPolicy b = dress::env::default_logging_policy(env);
  std::vector<dress::data::Episode> episodes =
      dress::env::gen_logged_dataset(env, b, cfg.n_users);
  episodes = dress::data::filter_episodes(episodes, env.min_len, env.max_len);

  std::string path = resolve_out(out_path);
  std::string payload = dress::data::dataset_to_string(episodes);
  write_file(path, payload);

  std::ostringstream scenario_text;
  {
    fs::path sp = fs::path(path).replace_extension(".scenario.toml");
    dress::env::save_scenario(env, sp.string());
    std::ifstream sin(sp);
    scenario_text << sin.rdbuf();
  }
  long long n_sessions = 0, n_clicks = 0, n_orders = 0;
  for (const auto& e : episodes)
    for (const auto& s : e.sessions) {
      ++n_sessions;
      n_clicks += s.feedback.any_product_click() ? 1 : 0;
      n_orders += s.feedback.any_product_order() ? 1 : 0;
    }
  ordered_json manifest;
  manifest["seed"] = seed;
  manifest["scenario"] = cfg.scenario;
  manifest["scenario_hash"] = dress::to_hex(dress::fnv1a64(scenario_text.str()));
  manifest["config_hash"] = cfg.hash();
  manifest["n_users"] = episodes.size();
  manifest["n_sessions"] = n_sessions;
  manifest["n_product_clicks"] = n_clicks;
  manifest["n_product_orders"] = n_orders;
  manifest["dataset_bytes"] = payload.size();
  write_file(path + ".manifest.json", manifest.dump(2) + "\n");
  std::cerr << "wrote " << episodes.size() << " episodes (" << n_sessions << " sessions) to "
            << path << "\n";
  return 0;
}

dress::data::Dataset load_data(const std::string& path) {
  return dress::data::load_dataset(path);
}

int cmd_train_dynamics(const std::string& config_path, uint64_t seed,
                       const std::string& data_path, const std::string& out_dir) {
  RunConfig cfg = load_config(config_path, seed, true);
  dress::data::Dataset ds = load_data(data_path);
  auto settings = cfg.pipeline_settings();
  auto [model, curve] =
      dress::model::train_dynamic_model(ds, settings.dynamics, dress::splitmix64(seed ^ 0x11));
  std::string dir = resolve_out(out_dir);
  fs::create_directories(dir);
  model.params.save((fs::path(dir) / "dynamics.ckpt.json").string(),
                    {1, seed, cfg.hash()});
  write_file((fs::path(dir) / "dynamics_curve.csv").string(), dress::model::curve_to_csv(curve));
  std::cerr << "dynamics final val loss " << curve.back().val_total << "\n";
  return 0;
}

int cmd_imitate(const std::string& config_path, uint64_t seed, const std::string& data_path,
                const std::string& dynamics_ckpt, const std::string& out_dir) {
  RunConfig cfg = load_config(config_path, seed, true);
  dress::data::Dataset ds = load_data(data_path);
  auto settings = cfg.pipeline_settings();
  auto [params, header] = dress::nn::ParamStore::load(dynamics_ckpt);
  if (header.config_hash != cfg.hash())
    throw dress::ConfigError("dynamics checkpoint was trained under a different config");
  dress::model::DynamicModel dyn =
      dress::model::DynamicModel::from_params(settings.dynamics, std::move(params));
  std::vector<double> curve;
  dress::ctrl::Actor pi0 = dress::pipe::controller_imitation(
      ds, dyn, settings.imitation, settings.actor_hidden, dress::splitmix64(seed ^ 0x33),
      &curve);
  std::string dir = resolve_out(out_dir);
  fs::create_directories(dir);
  pi0.params.save((fs::path(dir) / "imitation.ckpt.json").string(), {1, seed, cfg.hash()});
  std::ostringstream csv;
  csv << "epoch,loss\n";
  for (size_t i = 0; i < curve.size(); ++i) csv << i << "," << curve[i] << "\n";
  write_file((fs::path(dir) / "imitation_curve.csv").string(), csv.str());
  std::cerr << "imitation final loss " << curve.back() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, uint64_t seed, const std::string& data_path,
              const std::string& variant_name, const std::string& out_dir) {
  RunConfig cfg = load_config(config_path, seed, true);
  dress::pipe::PipelineVariant variant = dress::pipe::variant_from_string(variant_name);
  dress::data::Dataset ds = load_data(data_path);
  auto settings = cfg.pipeline_settings();
  settings.seed = cfg.seed;
  dress::pipe::PipelineResult result = dress::pipe::run_dress_pipeline(ds, variant, settings);

  std::string dir = resolve_out(out_dir);
  fs::create_directories(dir);
  dress::nn::CheckpointHeader header{1, seed, cfg.hash()};
  result.dynamics.params.save((fs::path(dir) / "dynamics.ckpt.json").string(), header);
  result.imitation.params.save((fs::path(dir) / "imitation.ckpt.json").string(), header);
  result.actor.params.save((fs::path(dir) / "actor.ckpt.json").string(), header);
  if (result.has_critic)
    result.critic.params.save((fs::path(dir) / "critic.ckpt.json").string(), header);

  result.report["config_hash"] = cfg.hash();
  result.report["config"] = cfg.to_toml();
  write_file((fs::path(dir) / "report.json").string(), result.report.dump(2) + "\n");
  std::cerr << "trained " << variant_name << " into " << dir << "\n";
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& data_path,
                 const std::vector<std::string>& run_dirs, int test_fold,
                 const std::string& out_dir, const std::vector<int>& sweep_horizons) {
  RunConfig cfg = load_config(config_path, 0, false);
  dress::data::Dataset ds = load_data(data_path);
  if (run_dirs.empty()) throw dress::ConfigError("evaluate: at least one --run is required");
  if (test_fold < 0 || test_fold >= cfg.eval_cfg.folds) {
    std::string available;
    for (int f = 0; f < cfg.eval_cfg.folds; ++f)
      available += (f ? ", " : "") + std::to_string(f);
    throw dress::DataError("test fold " + std::to_string(test_fold) +
                           " does not exist; available folds: " + available);
  }

  // shared base comes from the first run's checkpoints
  auto settings = cfg.pipeline_settings();
  auto [dyn_params, dyn_header] = dress::nn::ParamStore::load(
      (fs::path(run_dirs.front()) / "dynamics.ckpt.json").string());
  if (dyn_header.config_hash != cfg.hash())
    throw dress::ConfigError("dynamics checkpoint was trained under a different config (" +
                             dyn_header.config_hash + " vs " + cfg.hash() + ")");
  auto [pi0_params, pi0_header] = dress::nn::ParamStore::load(
      (fs::path(run_dirs.front()) / "imitation.ckpt.json").string());
  if (pi0_header.config_hash != cfg.hash())
    throw dress::ConfigError("imitation checkpoint was trained under a different config");

  dress::eval::FoldArtifacts art;
  art.base.dynamics =
      dress::model::DynamicModel::from_params(settings.dynamics, std::move(dyn_params));
  art.base.imitation = dress::ctrl::Actor::from_params(std::move(pi0_params));
  for (const std::string& dir : run_dirs) {
    LoadedRun run = load_run(dir, cfg);
    art.actors.emplace(run.variant, std::move(run.actor));
  }
  std::vector<std::vector<dress::data::Episode>> folds = dress::data::split_folds(
      ds.episodes, cfg.eval_cfg.folds, dress::splitmix64(cfg.seed ^ 0xf01d));
  art.test_episodes = folds[size_t(test_fold)];

  std::vector<dress::eval::FoldArtifacts> arts;
  arts.push_back(std::move(art));
  dress::eval::EvalReport report =
      dress::eval::evaluate_folds(arts, ds.catalog, cfg.eval_cfg);

  std::string dir = resolve_out(out_dir);
  fs::create_directories(dir);
  write_file((fs::path(dir) / "estimates.csv").string(), report.estimates_csv());
  write_file((fs::path(dir) / "improvement.csv").string(), report.improvement_csv());
  write_file((fs::path(dir) / "policy_difference.csv").string(),
             dress::eval::policy_difference_csv(report.policy_difference));
  ordered_json rj = report.to_json();
  rj["config_hash"] = cfg.hash();
  rj["test_fold"] = test_fold;
  write_file((fs::path(dir) / "eval_report.json").string(), rj.dump(2) + "\n");

  // horizon sweep over the already-trained policies
  std::vector<int> horizons = sweep_horizons.empty() ? cfg.horizons : sweep_horizons;
  std::vector<dress::eval::HorizonPoint> points;
  for (int h : horizons) {
    dress::eval::EvalConfig c = cfg.eval_cfg;
    c.horizon = h;
    dress::eval::EvalReport r = dress::eval::evaluate_folds(arts, ds.catalog, c);
    for (const auto& m : r.methods)
      points.push_back({h, m.method, m.ctr_improve_pct, 0.0});
  }
  write_file((fs::path(dir) / "horizon.csv").string(), dress::eval::horizon_csv(points));
  std::cout << report.estimates_csv();
  return 0;
}

int cmd_horizon_sweep(const std::string& config_path, const std::string& data_path,
                      const std::string& out_dir, uint64_t seed, bool have_seed) {
  RunConfig cfg = load_config(config_path, seed, have_seed);
  dress::data::Dataset ds = load_data(data_path);
  std::vector<dress::pipe::PipelineVariant> variants;
  for (const std::string& v : cfg.variants)
    variants.push_back(dress::pipe::variant_from_string(v));
  std::vector<dress::eval::HorizonPoint> points = dress::eval::horizon_sweep(
      ds, variants, cfg.pipeline_settings(), cfg.eval_cfg, cfg.horizons, cfg.seed);
  std::string dir = resolve_out(out_dir);
  fs::create_directories(dir);
  write_file((fs::path(dir) / "horizon.csv").string(), dress::eval::horizon_csv(points));
  std::cout << dress::eval::horizon_csv(points);
  return 0;
}

int cmd_grad_check(const std::string& corrupt_op, int seeds) {
  auto results = dress::gradcheck::run_gradient_certification(seeds, corrupt_op);
  std::cout << dress::gradcheck::results_table(results);
  if (!dress::gradcheck::all_passed(results)) {
    for (const auto& r : results)
      if (!r.pass)
        std::cerr << "gradient certification failed for operation: " << r.op << "\n";
    return 4;
  }
  return 0;
}

int cmd_report(const std::string& input, const std::string& out_dir) {
  std::ifstream in(input);
  if (!in) throw dress::DataError("cannot open report: " + input);
  nlohmann::json j;
  in >> j;
  if (j.contains("methods")) {  // evaluation report
    std::cout << "method comparison (horizon " << j.value("horizon", 0) << ")\n";
    auto print_method = [](const nlohmann::json& m) {
      std::cout << "  " << m.value("method", "?") << ": twis_ctr "
                << m["twis_ctr"].value("mean", 0.0) << " +- "
                << m["twis_ctr"].value("std", 0.0) << " (improvement "
                << m["twis_ctr"].value("improvement_pct", 0.0) << "%, p="
                << m["twis_ctr"].value("p_value", 1.0) << ")\n";
    };
    print_method(j["origin"]);
    for (const auto& m : j["methods"]) print_method(m);
    std::cout << "policy difference vs imitation policy:\n";
    for (const auto& r : j["policy_difference"])
      std::cout << "  " << r.value("policy", "?") << ": log_ratio "
                << r.value("log_ratio", 0.0) << " tv " << r.value("tv", 0.0) << " kl "
                << r.value("kl", 0.0) << "\n";
  } else if (j.contains("stages")) {  // training run report
    std::cout << "training run: variant " << j.value("variant", "?") << ", seed "
              << j.value("seed", 0) << "\n";
    const auto& stages = j["stages"];
    if (stages.contains("dynamics"))
      std::cout << "  dynamics final val loss: "
                << stages["dynamics"].value("final_val_loss", 0.0) << "\n";
    if (stages.contains("imitation"))
      std::cout << "  imitation final loss: " << stages["imitation"].value("final_loss", 0.0)
                << "\n";
    if (stages.contains("imagination"))
      std::cout << "  imagination iterations: "
                << stages["imagination"]["iterations"].size() << "\n";
  } else {
    throw dress::DataError("unrecognized report format in " + input);
  }
  if (!out_dir.empty()) {
    std::string dir = resolve_out(out_dir);
    fs::create_directories(dir);
    write_file((fs::path(dir) / fs::path(input).filename()).string(), j.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dress: reinforcement learning for search story recommendation"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, out_dir, variant = "dress";
  std::string dynamics_ckpt, corrupt_op, report_input;
  std::vector<std::string> run_dirs;
  std::vector<int> horizons;
  uint64_t seed = 0;
  int users = 0, test_fold = 0, gc_seeds = 50;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a logged synthetic dataset");
  gen->add_option("--config", config_path, "run config file (TOML)");
  gen->add_option("--seed", seed, "generation seed")->required();
  gen->add_option("--users", users, "number of users (overrides config)");
  gen->add_option("--out", out_path, "output dataset path")->required();

  CLI::App* td = app.add_subcommand("train-dynamics", "train only the dynamic model");
  td->add_option("--config", config_path, "run config file");
  td->add_option("--seed", seed, "training seed")->required();
  td->add_option("--data", data_path, "dataset path")->required();
  td->add_option("--out-dir", out_dir, "output directory")->required();

  CLI::App* im = app.add_subcommand("imitate", "fit the imitation policy");
  im->add_option("--config", config_path, "run config file");
  im->add_option("--seed", seed, "training seed")->required();
  im->add_option("--data", data_path, "dataset path")->required();
  im->add_option("--dynamics", dynamics_ckpt, "dynamics checkpoint")->required();
  im->add_option("--out-dir", out_dir, "output directory")->required();

  CLI::App* tr = app.add_subcommand("train", "run the full training pipeline");
  tr->add_option("--config", config_path, "run config file");
  tr->add_option("--seed", seed, "training seed")->required();
  tr->add_option("--data", data_path, "dataset path")->required();
  tr->add_option("--variant", variant, "dress | dress-s | dress-m | dnnc")->required();
  tr->add_option("--out-dir", out_dir, "output directory")->required();

  CLI::App* ev = app.add_subcommand("evaluate", "evaluate trained runs on a held-out fold");
  ev->add_option("--config", config_path, "run config file");
  ev->add_option("--data", data_path, "dataset path")->required();
  ev->add_option("--run", run_dirs, "trained run directory (repeatable)")->required();
  ev->add_option("--test-fold", test_fold, "held-out fold index");
  ev->add_option("--horizons", horizons, "horizon sweep values");
  ev->add_option("--out-dir", out_dir, "output directory")->required();

  CLI::App* hs = app.add_subcommand(
      "horizon-sweep", "cross-validated method comparison across horizons");
  hs->add_option("--config", config_path, "run config file");
  hs->add_option("--seed", seed, "seed (overrides config)");
  hs->add_option("--data", data_path, "dataset path")->required();
  hs->add_option("--out-dir", out_dir, "output directory")->required();

  CLI::App* gc = app.add_subcommand("grad-check", "finite-difference gradient certification");
  gc->add_option("--seeds", gc_seeds, "random instances per operation");
  CLI::Option* corrupt =
      gc->add_option("--corrupt-op", corrupt_op, "fault-injection hook for tests");
  corrupt->group("");  // hidden

  CLI::App* rp = app.add_subcommand("report", "print a training or evaluation report");
  rp->add_option("--input", report_input, "report JSON file")->required();
  rp->add_option("--out-dir", out_dir, "optional directory to copy tables into");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, seed, users, out_path);
    if (td->parsed()) return cmd_train_dynamics(config_path, seed, data_path, out_dir);
    if (im->parsed())
      return cmd_imitate(config_path, seed, data_path, dynamics_ckpt, out_dir);
    if (tr->parsed()) return cmd_train(config_path, seed, data_path, variant, out_dir);
    if (ev->parsed())
      return cmd_evaluate(config_path, data_path, run_dirs, test_fold, out_dir, horizons);
    if (hs->parsed())
      return cmd_horizon_sweep(config_path, data_path, out_dir, seed,
                               hs->count("--seed") > 0);
    if (gc->parsed()) return cmd_grad_check(corrupt_op, gc_seeds);
    if (rp->parsed()) return cmd_report(report_input, out_dir);
  } catch (const dress::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dress::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const dress::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const dress::ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
