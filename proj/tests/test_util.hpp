#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dynasparse/surrogate.hpp"

namespace testutil {

inline std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Byte-compares every regular file in a against its counterpart in b.
inline bool dirs_byte_identical(const std::filesystem::path& a,
                                const std::filesystem::path& b) {
  namespace fs = std::filesystem;
  std::vector<fs::path> rels;
  for (const auto& entry : fs::recursive_directory_iterator(a))
    if (entry.is_regular_file()) rels.push_back(fs::relative(entry.path(), a));
  std::vector<fs::path> rels_b;
  for (const auto& entry : fs::recursive_directory_iterator(b))
    if (entry.is_regular_file()) rels_b.push_back(fs::relative(entry.path(), b));
  if (rels.size() != rels_b.size()) return false;
  for (const auto& rel : rels) {
    if (!fs::exists(b / rel)) return false;
    if (file_bytes(a / rel) != file_bytes(b / rel)) return false;
  }
  return true;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("dynasparse_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

struct CliResult {
  int exit_code = -1;
  std::string output;
};

// Runs the CLI binary with stdout+stderr captured.
inline CliResult run_cli(const std::string& args) {
#ifdef DYNASPARSE_CLI_PATH
  const std::string binary = DYNASPARSE_CLI_PATH;
#else
  const std::string binary = "dynasparse";
#endif
  const std::filesystem::path cap =
      std::filesystem::temp_directory_path() /
      ("dynasparse_cli_out_" + std::to_string(::getpid()) + ".txt");
  const std::string cmd = binary + " " + args + " > " + cap.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WEXITSTATUS(status);
  std::ifstream f(cap);
  std::ostringstream ss;
  ss << f.rdbuf();
  r.output = ss.str();
  std::filesystem::remove(cap);
  return r;
}

// Independent brute-force run-length encoder (the oracle the implementation
// is checked against). true = "zero" step.
struct BruteRuns {
  std::vector<int> zeros, nonzeros, full_zeros, full_nonzeros;
};
inline BruteRuns brute_force_runs(const std::vector<bool>& seq) {
  BruteRuns out;
  const std::size_t n = seq.size();
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && seq[j + 1] == seq[i]) ++j;
    const int len = static_cast<int>(j - i + 1);
    const bool whole = (i == 0 && j == n - 1);
    if (seq[i])
      (whole ? out.full_zeros : out.zeros).push_back(len);
    else
      (whole ? out.full_nonzeros : out.nonzeros).push_back(len);
    i = j + 1;
  }
  return out;
}

// Central finite differences of the total loss over every parameter;
// returns max |analytic - fd| / (1 + max |fd|).
inline double loss_gradient_fd_error(dynasparse::MlpModel model,
                                     const dynasparse::Batch& batch,
                                     const dynasparse::TrainConfig& cfg,
                                     double h = 1e-6) {
  dynasparse::Gradients grads;
  dynasparse::loss_gradient(model, batch, cfg, grads, false, 0);

  double max_fd = 0.0, max_diff = 0.0;
  auto probe = [&](double& theta, double analytic) {
    const double orig = theta;
    theta = orig + h;
    const double up = dynasparse::compute_loss(model, batch, cfg, false, 0).total;
    theta = orig - h;
    const double down = dynasparse::compute_loss(model, batch, cfg, false, 0).total;
    theta = orig;
    const double fd = (up - down) / (2.0 * h);
    max_fd = std::max(max_fd, std::abs(fd));
    max_diff = std::max(max_diff, std::abs(fd - analytic));
  };
  for (std::size_t layer = 0; layer < model.weights.size(); ++layer) {
    for (Eigen::Index i = 0; i < model.weights[layer].size(); ++i)
      probe(model.weights[layer](i), grads.weights[layer](i));
    for (Eigen::Index i = 0; i < model.biases[layer].size(); ++i)
      probe(model.biases[layer](i), grads.biases[layer](i));
  }
  return max_diff / (1.0 + max_fd);
}

}  // namespace testutil
