#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dynasparse/environments.hpp"

namespace dynasparse {

// Open-loop action source: unit-variance noise with power spectrum 1/f^beta,
// scaled into the action box. beta = 0 is white.
struct PolicyDescriptor {
  enum class Kind { white, colored };
  Kind kind = Kind::colored;
  double beta = 1.0;   // ignored for white (treated as 0)
  double scale = 0.8;  // fraction of the half-range, in (0, 1]
  std::uint64_t seed = 0;

  double effective_beta() const { return kind == Kind::white ? 0.0 : beta; }
};

std::string to_string(PolicyDescriptor::Kind kind);
PolicyDescriptor::Kind policy_kind_from_string(const std::string& s);

// One transition with its exact Jacobians, all float64.
struct Sample {
  int t = 0;
  Eigen::VectorXd s;
  Eigen::VectorXd a;
  Eigen::VectorXd s_next;
  Eigen::MatrixXd j_state;
  Eigen::MatrixXd j_action;
};

struct Episode {
  std::vector<Sample> samples;
  bool truncated = false;  // divergence cut the episode short
};

// Ordered episodes plus everything needed to reproduce them: the resolved
// environment, the policy, and the collection seed.
struct Dataset {
  int format_version = 1;
  std::string env_name;
  int d_s = 0;
  int d_a = 0;
  double dt = 0.0;
  int horizon = 0;
  std::map<std::string, double> env_params;
  PolicyDescriptor policy;
  std::uint64_t collect_seed = 0;
  std::string config_hash;  // provenance echo from the CLI, may be empty
  std::vector<Episode> episodes;

  std::size_t total_samples() const {
    std::size_t n = 0;
    for (const auto& ep : episodes) n += ep.samples.size();
    return n;
  }
  EnvSpec rebuild_env() const { return make_env(env_name, env_params); }
};

// steps x dims matrix; every column zero-mean, unit-variance, spectrum
// shaped in the frequency domain. Deterministic per seed.
Eigen::MatrixXd colored_noise_sequence(double beta, int steps, int dims,
                                       std::uint64_t seed);

// Rolls `episodes` episodes of env.horizon steps each. Episode e resets with
// seed + e and draws its noise from policy.seed and e, so episodes are
// independent and the collection order never matters.
Dataset collect(const EnvSpec& env, const PolicyDescriptor& policy, int episodes,
                std::uint64_t seed);

// Dataset directory layout: manifest.json plus one little-endian float64
// flat binary per field (s, a, s_next, j_state row-major, j_action
// row-major), concatenated episode-major, step-major. Round trips are
// byte-identical.
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace dynasparse
