#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "dynasparse/rollout.hpp"

namespace dynasparse {

// Boolean zero pattern of one Jacobian at threshold tau (true = |entry| < tau).
struct ZeroMask {
  BoolMatrix mask;
  double tau = 0.0;
};

ZeroMask zero_mask(const Eigen::MatrixXd& j, double tau);

// Fraction of entries with |J_ij| < tau.
double sparsity_value(const Eigen::MatrixXd& j, double tau);

// Sparsity of the horizontally stacked [j_state | j_action] matrix.
double combined_sparsity_value(const Eigen::MatrixXd& j_state,
                               const Eigen::MatrixXd& j_action, double tau);

enum class JacobianPart { state, action, combined };
std::string to_string(JacobianPart part);

// Elements below tau in every sample of the dataset, with counts and the
// count/total percentage per Jacobian.
struct GlobalZeros {
  ZeroMask state;
  ZeroMask action;
  int state_count = 0;
  int action_count = 0;
  double state_percent = 0.0;
  double action_percent = 0.0;
};
GlobalZeros global_zero_mask(const Dataset& d, double tau);

// Percentage of samples (fraction per episode, averaged across episodes)
// where each element is below tau. Returns {state, action} in [0, 100].
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> zero_fraction_matrix(const Dataset& d,
                                                                 double tau);

// Fixed 10-bin histogram over [0, 1], width 0.1, right-open except the last.
struct SparsityHistogram {
  std::array<std::size_t, 10> counts{};
  double mean = 0.0;
  std::size_t total = 0;
  static constexpr double bin_width = 0.1;
};
SparsityHistogram sparsity_histogram(const Dataset& d, double tau, JacobianPart which);

// Per-step sparsity values over one episode, in time order.
std::vector<double> sparsity_timeseries(const Episode& ep, double tau,
                                        JacobianPart which);

// Maximal runs of consecutive below-tau / above-tau steps per element.
// Runs spanning an entire episode are kept separately (the figure convention
// excludes them from histograms but they remain in raw output).
struct ElementRuns {
  std::vector<int> zero_runs;
  std::vector<int> nonzero_runs;
  std::vector<int> full_episode_zero_runs;
  std::vector<int> full_episode_nonzero_runs;
};
struct RunLengthDurations {
  // Indexed [row * cols + col]; state is d_s x d_s, action d_s x d_a.
  std::vector<ElementRuns> state;
  std::vector<ElementRuns> action;
  int d_s = 0;
  int d_a = 0;

  const ElementRuns& state_element(int r, int c) const {
    return state[static_cast<std::size_t>(r * d_s + c)];
  }
  const ElementRuns& action_element(int r, int c) const {
    return action[static_cast<std::size_t>(r * d_a + c)];
  }
};
RunLengthDurations run_length_durations(const Dataset& d, double tau);

// Combined sparsity per sample in dataset order, the usual color channel
// for the embedding export.
std::vector<double> per_sample_combined_sparsity(const Dataset& d, double tau);

// Plain 2D PCA of the stacked (s, a, s_next) tuples; a plotting-friendly
// substitute for nonlinear embeddings. Zero-variance dims are dropped.
struct PcaEmbedding {
  Eigen::MatrixXd coords;       // N x 2
  Eigen::VectorXd colors;       // N
  Eigen::VectorXd eigenvalues;  // descending, over kept dims
  std::vector<int> kept_dims;
};
PcaEmbedding pca_embedding_2d(const Dataset& d, const std::vector<double>& colors);

// The full analysis fold used by the CLI.
struct SparsityReport {
  double tau = 0.0;
  GlobalZeros global;
  Eigen::MatrixXd zero_fraction_state;
  Eigen::MatrixXd zero_fraction_action;
  SparsityHistogram hist_state;
  SparsityHistogram hist_action;
  SparsityHistogram hist_combined;
  std::vector<std::vector<double>> timeseries;  // one per episode
  RunLengthDurations durations;
  PcaEmbedding embedding;
};
SparsityReport analyze_dataset(const Dataset& d, double tau);

}  // namespace dynasparse
