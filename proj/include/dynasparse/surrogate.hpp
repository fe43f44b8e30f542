#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dynasparse/normalization.hpp"
#include "dynasparse/rollout.hpp"

namespace dynasparse {

// Fully-connected net with ELU hidden activations and an identity output
// layer. widths = [d_in, hidden..., d_out]; weights[k] maps widths[k] to
// widths[k+1]. Dropout applies to hidden activations during training only.
struct MlpModel {
  std::vector<int> widths;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  double dropout_rate = 0.1;

  int d_in() const { return widths.front(); }
  int d_out() const { return widths.back(); }
  int hidden_layers() const { return static_cast<int>(weights.size()) - 1; }
};

enum class LossMode {
  state,
  state_jacobian_mse,
  state_jacobian_mae,
  state_jacobian_l1reg,
  state_sae,
};
std::string to_string(LossMode mode);
LossMode loss_mode_from_string(const std::string& name);
std::vector<std::string> loss_mode_names();
bool loss_mode_needs_targets(LossMode mode);

struct TrainConfig {
  LossMode loss_mode = LossMode::state;
  double jac_weight = 1.0;  // lambda on the Jacobian term
  double learning_rate = 0.002;
  double weight_decay = 0.001;
  int batch_size = 512;
  int epochs = 100;
  double test_split = 0.1;
  std::uint64_t seed = 0;
  bool shuffle = true;
  int hidden_width = 512;
  int hidden_depth = 2;
  double dropout_rate = 0.1;
  double tau_model = 1e-6;  // zero threshold for model Jacobians
  double tau_env = 1e-12;   // zero threshold for (normalized) ground truth
};

// Kaiming-normal weights (fan-in), zero biases; deterministic per seed.
MlpModel mlp_init(const std::vector<int>& widths, std::uint64_t seed,
                  double dropout_rate = 0.1);
MlpModel mlp_init(int d_in, int d_out, std::uint64_t seed);  // paper-default 512x2

Eigen::VectorXd mlp_forward(const MlpModel& m, const Eigen::VectorXd& x,
                            bool training = false, std::uint64_t dropout_seed = 0);

// Exact Jacobian of the deterministic (dropout-free) forward map.
Eigen::MatrixXd mlp_jacobian(const MlpModel& m, const Eigen::VectorXd& x);

// One normalized mini batch, column-per-sample. jac_targets holds the
// normalized ground-truth combined Jacobians when a loss mode needs them.
struct Batch {
  Eigen::MatrixXd x;  // d_in x B
  Eigen::MatrixXd y;  // d_out x B
  std::vector<Eigen::MatrixXd> jac_targets;
  Eigen::Index size() const { return x.cols(); }
};

struct LossValue {
  double total = 0.0;
  double state_term = 0.0;
  double jac_term = 0.0;  // before the lambda weight
};

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

// total = state MSE + lambda * mode term. The state term sees dropout when
// training; Jacobian terms always run the dropout-free network.
LossValue compute_loss(const MlpModel& m, const Batch& batch, const TrainConfig& cfg,
                       bool training = false, std::uint64_t dropout_seed = 0);

// Exact parameter gradients of the same total, including the second-order
// path through the model Jacobian for the Jacobian-bearing modes.
LossValue loss_gradient(const MlpModel& m, const Batch& batch, const TrainConfig& cfg,
                        Gradients& grads, bool training = false,
                        std::uint64_t dropout_seed = 0);

struct EvalResult {
  double test_state_mse = 0.0;       // normalized units
  double model_sparsity = 0.0;       // mean sparsity of model Jacobians, tau_model
  double target_sparsity = 0.0;      // mean sparsity of normalized GT, tau_env
  double initial_test_mse = 0.0;     // untrained reference
  double initial_model_sparsity = 0.0;
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_test_mse;
};

// Model plus everything needed to run it on raw samples.
struct TrainedModel {
  MlpModel model;
  NormStats stats;
  TrainConfig config;
};

// Seeded shuffle split, stats fit on the training split only, AdamW
// mini-batch training. Deterministic per (dataset, config).
std::pair<TrainedModel, EvalResult> train(const Dataset& data, const TrainConfig& cfg);

EvalResult evaluate(const TrainedModel& tm, const std::vector<const Sample*>& test,
                    double tau_model);

// model.json (shapes, stats, config echo) + model.bin (flat float64).
void save_model(const TrainedModel& tm, const std::string& dir);
TrainedModel load_model(const std::string& dir);

}  // namespace dynasparse
