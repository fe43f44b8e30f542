// Command-line front end: dataset collection, sparsity analysis, surrogate
// training and self-verification, all reproducible from (config, seed).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <nlohmann/json.hpp>

#include "dynasparse/environments.hpp"
#include "dynasparse/errors.hpp"
#include "dynasparse/report_io.hpp"
#include "dynasparse/rollout.hpp"
#include "dynasparse/sparsity.hpp"
#include "dynasparse/surrogate.hpp"
#include "dynasparse/verify.hpp"

namespace {

using dynasparse::IoError;
using dynasparse::ParameterError;
using nlohmann::json;

constexpr int kOutputFormatVersion = 1;

std::string hash_of(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config file: " + path);
  try {
    json j;
    f >> j;
    return j;
  } catch (const json::exception& e) {
    throw IoError("malformed config JSON in " + path + ": " + e.what());
  }
}

// Fails if the directory already exists (unless force); creation is atomic
// so two racing runs cannot share an output directory.
void prepare_out_dir(const std::string& out, bool force) {
  namespace fs = std::filesystem;
  if (out.empty()) throw ParameterError("--out directory is required");
  std::error_code ec;
  fs::create_directories(fs::path(out).parent_path(), ec);
  if (!fs::create_directory(out, ec)) {
    if (fs::exists(out)) {
      if (!force)
        throw ParameterError("output directory exists: " + out +
                             " (use --force to overwrite)");
    } else {
      throw IoError("cannot create output directory " + out + ": " + ec.message());
    }
  }
}

std::map<std::string, double> overrides_from_json(const json& j) {
  std::map<std::string, double> out;
  if (j.is_object())
    for (auto it = j.begin(); it != j.end(); ++it)
      out[it.key()] = it.value().get<double>();
  return out;
}

dynasparse::PolicyDescriptor policy_from_json(const json& j, std::uint64_t seed) {
  dynasparse::PolicyDescriptor pol;
  pol.seed = seed;
  if (j.is_object()) {
    if (j.contains("kind"))
      pol.kind = dynasparse::policy_kind_from_string(j.at("kind").get<std::string>());
    pol.beta = j.value("beta", pol.beta);
    pol.scale = j.value("scale", pol.scale);
    if (j.contains("seed")) pol.seed = j.at("seed").get<std::uint64_t>();
  }
  return pol;
}

json policy_to_json(const dynasparse::PolicyDescriptor& pol) {
  return {{"kind", dynasparse::to_string(pol.kind)},
          {"beta", pol.beta},
          {"scale", pol.scale},
          {"seed", pol.seed}};
}

struct CommonArgs {
  std::string config_path;
  std::string env_name;
  std::string dataset;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
  std::optional<int> episodes;
  std::string loss_mode;
  bool force = false;
};

void add_common_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--seed", args.seed, "seed override");
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_flag("--force", args.force, "allow existing output directory");
}

int cmd_collect(const CommonArgs& args) {
  const json cfg = load_config(args.config_path);
  const std::string env_name =
      !args.env_name.empty()
          ? args.env_name
          : cfg.value("env", json::object()).value("name", std::string("cartpole"));
  const auto overrides =
      overrides_from_json(cfg.value("env", json::object()).value("overrides", json::object()));
  const std::uint64_t seed = args.seed.value_or(cfg.value("seed", 0ULL));
  const int episodes =
      args.episodes.value_or(cfg.value("collect", json::object()).value("episodes", 10));
  dynasparse::PolicyDescriptor policy =
      policy_from_json(cfg.value("policy", json::object()), seed);

  const dynasparse::EnvSpec env = dynasparse::make_env(env_name, overrides);

  json effective;
  effective["command"] = "collect";
  effective["env"] = {{"name", env.name}, {"overrides", overrides}};
  effective["policy"] = policy_to_json(policy);
  effective["episodes"] = episodes;
  effective["seed"] = seed;

  prepare_out_dir(args.out, args.force);
  dynasparse::Dataset d = dynasparse::collect(env, policy, episodes, seed);
  d.config_hash = hash_of(effective.dump());
  dynasparse::save_dataset(d, args.out);
  std::cout << "collected " << d.total_samples() << " samples (" << episodes
            << " episodes) from " << env.name << " -> " << args.out << "\n";
  return 0;
}

int cmd_analyze(const CommonArgs& args) {
  const json cfg = load_config(args.config_path);
  const std::string dataset_path =
      !args.dataset.empty() ? args.dataset : cfg.value("dataset", std::string());
  if (dataset_path.empty())
    throw ParameterError("analyze: no dataset given (--dataset or config)");
  const json acfg = cfg.value("analyze", json::object());
  const double tau = args.tau.value_or(acfg.value("tau", 1e-12));
  const int max_steps = acfg.value("timeseries_max_steps", 50);
  const std::uint64_t seed = args.seed.value_or(cfg.value("seed", 0ULL));

  const dynasparse::Dataset d = dynasparse::load_dataset(dataset_path);
  const dynasparse::SparsityReport report = dynasparse::analyze_dataset(d, tau);

  json effective;
  effective["command"] = "analyze";
  effective["dataset"] = dataset_path;
  effective["tau"] = tau;
  effective["timeseries_max_steps"] = max_steps;
  effective["seed"] = seed;

  json meta;
  meta["format_version"] = kOutputFormatVersion;
  meta["config_hash"] = hash_of(effective.dump());
  meta["seed"] = seed;
  meta["env"] = d.env_name;
  meta["dataset"] = dataset_path;
  meta["tau"] = tau;

  prepare_out_dir(args.out, args.force);
  dynasparse::write_sparsity_report(report, meta, args.out, max_steps);
  std::cout << "report written to " << args.out << " (global zeros: state "
            << report.global.state_count << ", action " << report.global.action_count
            << ")\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const json cfg = load_config(args.config_path);
  const std::string dataset_path =
      !args.dataset.empty() ? args.dataset : cfg.value("dataset", std::string());
  if (dataset_path.empty())
    throw ParameterError("train: no dataset given (--dataset or config)");
  const json tcfg = cfg.value("train", json::object());

  dynasparse::TrainConfig tc;
  tc.loss_mode = dynasparse::loss_mode_from_string(
      !args.loss_mode.empty() ? args.loss_mode
                              : tcfg.value("loss_mode", std::string("state")));
  tc.jac_weight = tcfg.value("jac_weight", tc.jac_weight);
  tc.learning_rate = tcfg.value("learning_rate", tc.learning_rate);
  tc.weight_decay = tcfg.value("weight_decay", tc.weight_decay);
  tc.batch_size = tcfg.value("batch_size", tc.batch_size);
  tc.epochs = tcfg.value("epochs", tc.epochs);
  tc.test_split = tcfg.value("test_split", tc.test_split);
  tc.shuffle = tcfg.value("shuffle", tc.shuffle);
  tc.hidden_width = tcfg.value("hidden_width", tc.hidden_width);
  tc.hidden_depth = tcfg.value("hidden_depth", tc.hidden_depth);
  tc.dropout_rate = tcfg.value("dropout_rate", tc.dropout_rate);
  tc.tau_model = args.tau.value_or(tcfg.value("tau_model", tc.tau_model));
  tc.tau_env = tcfg.value("tau_env", tc.tau_env);
  tc.seed = args.seed.value_or(cfg.value("seed", 0ULL));

  json effective;
  effective["command"] = "train";
  effective["dataset"] = dataset_path;
  effective["train"] = {{"loss_mode", dynasparse::to_string(tc.loss_mode)},
                        {"jac_weight", tc.jac_weight},
                        {"learning_rate", tc.learning_rate},
                        {"weight_decay", tc.weight_decay},
                        {"batch_size", tc.batch_size},
                        {"epochs", tc.epochs},
                        {"test_split", tc.test_split},
                        {"shuffle", tc.shuffle},
                        {"hidden_width", tc.hidden_width},
                        {"hidden_depth", tc.hidden_depth},
                        {"dropout_rate", tc.dropout_rate},
                        {"tau_model", tc.tau_model},
                        {"tau_env", tc.tau_env}};
  effective["seed"] = tc.seed;
  const std::string config_hash = hash_of(effective.dump());

  const dynasparse::Dataset d = dynasparse::load_dataset(dataset_path);
  prepare_out_dir(args.out, args.force);
  auto [model, eval] = dynasparse::train(d, tc);
  dynasparse::save_model(model, args.out);

  json metrics;
  metrics["format_version"] = kOutputFormatVersion;
  metrics["config_hash"] = config_hash;
  metrics["seed"] = tc.seed;
  metrics["config"] = effective;
  metrics["eval"] = {{"test_state_mse", eval.test_state_mse},
                     {"model_sparsity", eval.model_sparsity},
                     {"target_sparsity", eval.target_sparsity},
                     {"initial_test_mse", eval.initial_test_mse},
                     {"initial_model_sparsity", eval.initial_model_sparsity},
                     {"epoch_train_loss", eval.epoch_train_loss},
                     {"epoch_test_mse", eval.epoch_test_mse}};
  std::ofstream mf(std::filesystem::path(args.out) / "metrics.json",
                   std::ios::binary | std::ios::trunc);
  if (!mf) throw IoError("cannot write metrics.json in " + args.out);
  mf << metrics.dump(2) << "\n";

  std::cout << "trained " << dynasparse::to_string(tc.loss_mode) << " on "
            << d.env_name << ": test MSE " << eval.test_state_mse
            << " (initial " << eval.initial_test_mse << "), model sparsity "
            << eval.model_sparsity << " vs target " << eval.target_sparsity << "\n";
  return 0;
}

int cmd_report(const CommonArgs& args, const std::string& report_path) {
  const json cfg = load_config(args.config_path);
  const std::string report =
      !report_path.empty() ? report_path : cfg.value("report", std::string());
  if (report.empty())
    throw ParameterError("report: no stored report given (--report or config)");
  const int max_steps =
      cfg.value("analyze", json::object()).value("timeseries_max_steps", 50);
  prepare_out_dir(args.out, args.force);
  dynasparse::regenerate_report_csvs(report, args.out, max_steps);
  std::cout << "CSV tables regenerated in " << args.out << "\n";
  return 0;
}

int cmd_verify(const CommonArgs& args, const dynasparse::VerifyOptions& opt_in) {
  dynasparse::VerifyOptions opt = opt_in;
  opt.seed = args.seed.value_or(0ULL);

  const std::vector<dynasparse::VerifyCheck> checks = dynasparse::run_verification(opt);
  bool all_ok = true;
  json results = json::array();
  for (const auto& c : checks) {
    all_ok = all_ok && c.passed;
    std::printf("[%s] %-32s max_err %-10.3g %s\n", c.passed ? "PASS" : "FAIL",
                c.name.c_str(), c.max_error, c.detail.c_str());
    results.push_back({{"name", c.name},
                       {"passed", c.passed},
                       {"max_error", c.max_error},
                       {"detail", c.detail}});
  }
  if (!args.out.empty()) {
    prepare_out_dir(args.out, args.force);
    json report;
    report["format_version"] = kOutputFormatVersion;
    report["seed"] = opt.seed;
    json effective;
    effective["command"] = "verify";
    effective["seed"] = opt.seed;
    effective["fd_samples"] = opt.fd_samples;
    report["config_hash"] = hash_of(effective.dump());
    report["checks"] = results;
    report["all_passed"] = all_ok;
    std::ofstream f(std::filesystem::path(args.out) / "verify_report.json",
                    std::ios::binary | std::ios::trunc);
    f << report.dump(2) << "\n";
  }
  std::printf("%s (%zu checks)\n", all_ok ? "ALL CHECKS PASSED" : "CHECKS FAILED",
              checks.size());
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "dynasparse: Jacobian sparsity analysis for differentiable dynamical "
      "systems and Jacobian-augmented surrogate training"};
  app.require_subcommand(1);

  CommonArgs collect_args, analyze_args, train_args, report_args, verify_args;
  std::string report_path;
  dynasparse::VerifyOptions vopt;

  CLI::App* collect = app.add_subcommand("collect", "roll out a noise policy and store a dataset");
  add_common_flags(collect, collect_args);
  collect->add_option("--env", collect_args.env_name, "environment name");
  collect->add_option("--episodes", collect_args.episodes, "episode count");

  CLI::App* analyze = app.add_subcommand("analyze", "compute the sparsity report for a dataset");
  add_common_flags(analyze, analyze_args);
  analyze->add_option("--dataset", analyze_args.dataset, "dataset directory");
  analyze->add_option("--tau", analyze_args.tau, "zero threshold");

  CLI::App* train = app.add_subcommand("train", "train an MLP surrogate on a dataset");
  add_common_flags(train, train_args);
  train->add_option("--dataset", train_args.dataset, "dataset directory");
  train->add_option("--loss-mode", train_args.loss_mode,
                    "state | state+jacobian_mse | state+jacobian_mae | "
                    "state+jacobian_l1reg | state+sae");
  train->add_option("--tau", train_args.tau, "model-Jacobian zero threshold");

  CLI::App* report = app.add_subcommand("report", "regenerate CSV tables from a stored report.json");
  add_common_flags(report, report_args);
  report->add_option("--report", report_path, "stored report.json path");

  CLI::App* verify = app.add_subcommand("verify", "run all finite-difference and oracle checks");
  add_common_flags(verify, verify_args);
  verify->add_option("--fd-samples", vopt.fd_samples, "random points per environment");
  verify->add_option("--inject-fault-env", vopt.fault_env,
                     "test hook: corrupt a Jacobian entry of this env");
  verify->add_option("--inject-fault-row", vopt.fault_row, "test hook: entry row");
  verify->add_option("--inject-fault-col", vopt.fault_col, "test hook: entry col");
  verify->add_option("--inject-fault-delta", vopt.fault_delta, "test hook: corruption size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (collect->parsed()) return cmd_collect(collect_args);
    if (analyze->parsed()) return cmd_analyze(analyze_args);
    if (train->parsed()) return cmd_train(train_args);
    if (report->parsed()) return cmd_report(report_args, report_path);
    if (verify->parsed()) {
      vopt.inject_fault = !vopt.fault_env.empty();
      return cmd_verify(verify_args, vopt);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
