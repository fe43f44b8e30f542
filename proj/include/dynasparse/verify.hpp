#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dynasparse {

struct VerifyCheck {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  int fd_samples = 1000;  // per environment
  double fd_step = 1e-6;

  // Test hook: corrupt one forward-mode Jacobian entry during the
  // finite-difference sweep of `fault_env` to prove the check catches it.
  bool inject_fault = false;
  std::string fault_env;
  int fault_row = 0;
  int fault_col = 0;
  double fault_delta = 1e-3;
};

// Runs every finite-difference and oracle check; one entry per check.
std::vector<VerifyCheck> run_verification(const VerifyOptions& opt);

// Single-environment FD sweep (also used by the acceptance suite).
// Returns max relative error over `samples` random in-range points,
// excluding (and counting) points near a contact switch.
struct FdSweepResult {
  double max_rel_error = 0.0;
  int excluded = 0;
  int compared = 0;
  int worst_row = -1;
  int worst_col = -1;
};
FdSweepResult fd_jacobian_sweep(const std::string& env_name, int samples,
                                double h, std::uint64_t seed,
                                const VerifyOptions* fault = nullptr);

}  // namespace dynasparse
