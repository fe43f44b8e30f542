#include "dynasparse/verify.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <sstream>

#include "dynasparse/environments.hpp"
#include "dynasparse/normalization.hpp"
#include "dynasparse/rng.hpp"
#include "dynasparse/rollout.hpp"
#include "dynasparse/sparsity.hpp"
#include "dynasparse/surrogate.hpp"

namespace dynasparse {
namespace {

std::string fmt_err(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Environment Jacobians vs central differences
// ---------------------------------------------------------------------------

VerifyCheck check_env_fd(const std::string& env_name, const VerifyOptions& opt) {
  const FdSweepResult res = fd_jacobian_sweep(
      env_name, opt.fd_samples, opt.fd_step, opt.seed, opt.inject_fault ? &opt : nullptr);
  VerifyCheck check;
  check.name = "jacobian_fd_" + env_name;
  check.passed = res.max_rel_error <= 1e-5;
  check.max_error = res.max_rel_error;
  std::ostringstream detail;
  detail << res.compared << " samples, " << res.excluded
         << " excluded near switches, max rel err " << fmt_err(res.max_rel_error);
  if (!check.passed)
    detail << " at element (" << res.worst_row << "," << res.worst_col << ")";
  check.detail = detail.str();
  return check;
}

VerifyCheck check_affine_exact(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xAFF));
  const int n = 5, m = 7;
  Eigen::MatrixXd a(n, m);
  Eigen::VectorXd b(n), x(m);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng.uniform(-2.0, 2.0);
  for (int i = 0; i < n; ++i) b(i) = rng.uniform(-2.0, 2.0);
  for (int i = 0; i < m; ++i) x(i) = rng.uniform(-2.0, 2.0);

  const DualMap affine = [&a, &b](std::span<const Dual> in) {
    std::vector<Dual> out(static_cast<std::size_t>(a.rows()));
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      Dual acc(b(r));
      for (Eigen::Index c = 0; c < a.cols(); ++c) acc += a(r, c) * in[static_cast<std::size_t>(c)];
      out[static_cast<std::size_t>(r)] = acc;
    }
    return out;
  };

  const Eigen::MatrixXd jac = jacobian_forward(affine, x);
  VerifyCheck check;
  check.name = "affine_linearity_exact";
  check.max_error = (jac - a).cwiseAbs().maxCoeff();
  check.passed = check.max_error == 0.0;
  check.detail = "forward Jacobian of affine map vs coefficient matrix";
  return check;
}

VerifyCheck check_chain_rule(std::uint64_t seed) {
  const EnvSpec env = make_env("cartpole");
  Rng rng(derive_seed(seed, 0xC4A));
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto [s, a] = sample_state_action(env, rng);
    Eigen::VectorXd x(env.d_s + env.d_a);
    x << s, a;

    const DualMap one = make_dual_step(env);
    const DualMap two = [&one, &env](std::span<const Dual> in) {
      const std::vector<Dual> mid = one(in);
      std::vector<Dual> stacked(mid);
      for (int i = 0; i < env.d_a; ++i)
        stacked.push_back(in[static_cast<std::size_t>(env.d_s + i)]);
      return one(stacked);
    };

    const DualVector first = eval_with_jacobian(one, x);
    Eigen::VectorXd x2(env.d_s + env.d_a);
    x2 << first.value, a;
    const Eigen::MatrixXd j2 = jacobian_forward(one, x2);
    const Eigen::MatrixXd direct = jacobian_forward(two, x);

    const Eigen::MatrixXd j1s = first.tangents.leftCols(env.d_s);
    const Eigen::MatrixXd chained = j2.leftCols(env.d_s) * j1s;
    worst = std::max(worst,
                     (direct.leftCols(env.d_s) - chained).cwiseAbs().maxCoeff());
  }
  VerifyCheck check;
  check.name = "chain_rule_two_steps";
  check.max_error = worst;
  check.passed = worst <= 1e-10;
  check.detail = "J(step o step) vs product of per-step Jacobians, 20 points";
  return check;
}

// ---------------------------------------------------------------------------
// Colored noise statistics
// ---------------------------------------------------------------------------

double lag1_autocorr(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i + 1 < n; ++i) num += x(i) * x(i + 1);
  den = x.squaredNorm();
  return num / den;
}

// Least-squares slope of mean log-power vs log-frequency over the middle two
// frequency decades. Power at each probe frequency comes from a Goertzel
// recurrence, a DFT route independent of the FFT synthesis in the generator.
double spectral_slope(const Eigen::VectorXd& x) {
  const int n = static_cast<int>(x.size());
  const int nfreq = n / 2;
  const double f_min = 1.0 / n;
  const double f_max = 0.5;
  const double log_center = 0.5 * (std::log10(f_min) + std::log10(f_max));
  const double lo = log_center - 1.0;
  const double hi = log_center + 1.0;

  const int bins = 24;
  const int probes_per_bin = 25;
  std::vector<double> bin_logf, bin_logp;
  for (int bin = 0; bin < bins; ++bin) {
    const double bl = lo + (hi - lo) * bin / bins;
    const double bh = lo + (hi - lo) * (bin + 1) / bins;
    double acc = 0.0;
    int used = 0;
    for (int p = 0; p < probes_per_bin; ++p) {
      const double logf = bl + (bh - bl) * (p + 0.5) / probes_per_bin;
      const int k = static_cast<int>(std::round(std::pow(10.0, logf) * n));
      if (k < 1 || k >= nfreq) continue;
      const double w = 2.0 * 3.14159265358979323846 * k / n;
      double s1 = 0.0, s2 = 0.0;
      const double coeff = 2.0 * std::cos(w);
      for (int t = 0; t < n; ++t) {
        const double s0 = x(t) + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
      }
      const std::complex<double> xk(s1 - s2 * std::cos(w), s2 * std::sin(w));
      acc += std::log10(std::norm(xk) + 1e-300);
      ++used;
    }
    if (used > 0) {
      bin_logf.push_back(0.5 * (bl + bh));
      bin_logp.push_back(acc / used);
    }
  }

  const std::size_t k = bin_logf.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < k; ++i) {
    sx += bin_logf[i];
    sy += bin_logp[i];
    sxx += bin_logf[i] * bin_logf[i];
    sxy += bin_logf[i] * bin_logp[i];
  }
  return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

VerifyCheck check_noise_autocorr(std::uint64_t seed) {
  const Eigen::VectorXd white = colored_noise_sequence(0.0, 10000, 1, seed + 1).col(0);
  const Eigen::VectorXd brown = colored_noise_sequence(2.0, 10000, 1, seed + 2).col(0);
  const double r_white = lag1_autocorr(white);
  const double r_brown = lag1_autocorr(brown);
  VerifyCheck check;
  check.name = "colored_noise_autocorr";
  check.passed = std::abs(r_white) <= 0.05 && r_brown > 0.9;
  check.max_error = std::abs(r_white);
  std::ostringstream detail;
  detail << "lag-1: beta=0 -> " << fmt_err(r_white) << ", beta=2 -> "
         << fmt_err(r_brown);
  check.detail = detail.str();
  return check;
}

VerifyCheck check_noise_slope(std::uint64_t seed) {
  VerifyCheck check;
  check.name = "colored_noise_spectral_slope";
  check.passed = true;
  double worst = 0.0;
  std::ostringstream detail;
  for (double beta : {0.5, 1.0, 2.0}) {
    const Eigen::VectorXd x =
        colored_noise_sequence(beta, 100000, 1, seed + static_cast<std::uint64_t>(10 * beta))
            .col(0);
    const double slope = spectral_slope(x);
    const double err = std::abs(slope + beta);
    worst = std::max(worst, err);
    if (err > 0.3) check.passed = false;
    detail << "beta " << beta << ": slope " << fmt_err(slope) << "; ";
  }
  check.max_error = worst;
  check.detail = detail.str();
  return check;
}

// ---------------------------------------------------------------------------
// Normalization identities
// ---------------------------------------------------------------------------

VerifyCheck check_normalization(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x40E));
  double worst_rt = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int dim = 8;
    Eigen::VectorXd x(dim), mu(dim), sigma(dim);
    for (int i = 0; i < dim; ++i) {
      x(i) = rng.uniform(-100.0, 100.0);
      mu(i) = rng.uniform(-10.0, 10.0);
      sigma(i) = rng.uniform(0.0, 5.0);
    }
    const double eps = 1e-8;
    const Eigen::VectorXd rt = denormalize_vec(normalize_vec(x, mu, sigma, eps), mu,
                                               sigma, eps);
    worst_rt = std::max(worst_rt, (rt - x).cwiseAbs().maxCoeff());
  }

  // Composed normalized map vs the analytic Jacobian rescaling.
  const EnvSpec env = make_env("cartpole");
  PolicyDescriptor pol;
  pol.seed = seed;
  const Dataset data = collect(env, pol, 2, seed + 77);
  const NormStats stats = fit_stats(data);
  const RealMap raw_step = make_real_step(env);
  const RealMap normalized_step = [&](const Eigen::VectorXd& xn) {
    const Eigen::VectorXd x =
        denormalize_vec(xn, stats.mu_in, stats.sigma_in, stats.epsilon);
    return normalize_vec(raw_step(x), stats.mu_out, stats.sigma_out, stats.epsilon);
  };

  double worst_jac = 0.0;
  Rng rng2(derive_seed(seed, 0x40F));
  for (int trial = 0; trial < 50; ++trial) {
    auto [s, a] = sample_state_action(env, rng2);
    Eigen::VectorXd x(env.d_s + env.d_a);
    x << s, a;
    const Eigen::VectorXd xn =
        normalize_vec(x, stats.mu_in, stats.sigma_in, stats.epsilon);
    const Eigen::MatrixXd fd = jacobian_fd(normalized_step, xn, 1e-6);
    const Eigen::MatrixXd fwd = jacobian_forward(make_dual_step(env), x);
    const Eigen::MatrixXd scaled = normalize_jacobian(fwd, stats);
    const double err = (fd - scaled).cwiseAbs().maxCoeff() /
                       (1.0 + fd.cwiseAbs().maxCoeff());
    worst_jac = std::max(worst_jac, err);
  }

  // Zero-pattern preservation under J o M.
  bool zeros_ok = true;
  Rng rng3(derive_seed(seed, 0x410));
  NormStats rstats;
  for (int trial = 0; trial < 1000 && zeros_ok; ++trial) {
    const int rows = 3 + static_cast<int>(rng3.next_u64() % 5);
    const int cols = 3 + static_cast<int>(rng3.next_u64() % 5);
    Eigen::MatrixXd j(rows, cols);
    for (Eigen::Index i = 0; i < j.size(); ++i)
      j(i) = rng3.uniform01() < 0.4 ? 0.0 : rng3.uniform(-3.0, 3.0);
    rstats.mu_out = Eigen::VectorXd::Zero(rows);
    rstats.mu_in = Eigen::VectorXd::Zero(cols);
    rstats.sigma_out.resize(rows);
    rstats.sigma_in.resize(cols);
    for (int r = 0; r < rows; ++r) rstats.sigma_out(r) = rng3.uniform(0.0, 4.0);
    for (int c = 0; c < cols; ++c) rstats.sigma_in(c) = rng3.uniform(0.0, 4.0);
    const Eigen::MatrixXd jn = normalize_jacobian(j, rstats);
    for (Eigen::Index i = 0; i < j.size(); ++i) {
      if ((j(i) == 0.0) != (jn(i) == 0.0)) zeros_ok = false;
    }
  }

  VerifyCheck check;
  check.name = "normalization_identities";
  check.max_error = std::max(worst_rt, worst_jac);
  check.passed = worst_rt < 1e-12 && worst_jac <= 1e-5 && zeros_ok;
  std::ostringstream detail;
  detail << "round trip max " << fmt_err(worst_rt) << ", composed-map FD max "
         << fmt_err(worst_jac) << ", zero pattern "
         << (zeros_ok ? "preserved" : "VIOLATED");
  check.detail = detail.str();
  return check;
}

// ---------------------------------------------------------------------------
// Run-length encoder vs brute force
// ---------------------------------------------------------------------------

// Independent brute-force encoder: walks the sequence counting by hand.
void brute_force_runs(const std::vector<bool>& seq, std::vector<int>& zeros,
                      std::vector<int>& nonzeros, std::vector<int>& full_zero,
                      std::vector<int>& full_nonzero) {
  if (seq.empty()) return;
  int len = 1;
  for (std::size_t i = 1; i <= seq.size(); ++i) {
    if (i < seq.size() && seq[i] == seq[i - 1]) {
      ++len;
      continue;
    }
    const bool value = seq[i - 1];
    const bool whole = static_cast<std::size_t>(len) == seq.size();
    if (value)
      (whole ? full_zero : zeros).push_back(len);
    else
      (whole ? full_nonzero : nonzeros).push_back(len);
    len = 1;
  }
}

Dataset dataset_from_bool_sequence(const std::vector<bool>& seq) {
  Dataset d;
  d.env_name = "synthetic";
  d.d_s = 1;
  d.d_a = 1;
  d.horizon = static_cast<int>(seq.size());
  Episode ep;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    Sample s;
    s.t = static_cast<int>(t);
    s.s = Eigen::VectorXd::Zero(1);
    s.a = Eigen::VectorXd::Zero(1);
    s.s_next = Eigen::VectorXd::Zero(1);
    s.j_state = Eigen::MatrixXd::Constant(1, 1, seq[t] ? 0.0 : 1.0);
    s.j_action = Eigen::MatrixXd::Constant(1, 1, 1.0);
    ep.samples.push_back(std::move(s));
  }
  d.episodes.push_back(std::move(ep));
  return d;
}

VerifyCheck check_run_lengths(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x41E));
  bool ok = true;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    const int len = 1 + static_cast<int>(rng.next_u64() % 200);
    std::vector<bool> seq(static_cast<std::size_t>(len));
    for (auto&& b : seq) b = rng.uniform01() < 0.5;

    const Dataset d = dataset_from_bool_sequence(seq);
    const RunLengthDurations runs = run_length_durations(d, 0.5);
    const ElementRuns& got = runs.state_element(0, 0);

    std::vector<int> zeros, nonzeros, full_zero, full_nonzero;
    brute_force_runs(seq, zeros, nonzeros, full_zero, full_nonzero);
    ok = got.zero_runs == zeros && got.nonzero_runs == nonzeros &&
         got.full_episode_zero_runs == full_zero &&
         got.full_episode_nonzero_runs == full_nonzero;
  }
  VerifyCheck check;
  check.name = "run_length_oracle";
  check.passed = ok;
  check.max_error = ok ? 0.0 : 1.0;
  check.detail = "1000 random boolean sequences vs brute-force encoder";
  return check;
}

// ---------------------------------------------------------------------------
// MLP gradient and Jacobian finite-difference checks
// ---------------------------------------------------------------------------

Batch random_batch(int d_in, int d_out, int bsz, Rng& rng, bool sparse_targets) {
  Batch b;
  b.x.resize(d_in, bsz);
  b.y.resize(d_out, bsz);
  for (Eigen::Index i = 0; i < b.x.size(); ++i) b.x(i) = rng.uniform(-1.5, 1.5);
  for (Eigen::Index i = 0; i < b.y.size(); ++i) b.y(i) = rng.uniform(-1.5, 1.5);
  for (int i = 0; i < bsz; ++i) {
    Eigen::MatrixXd g(d_out, d_in);
    for (Eigen::Index k = 0; k < g.size(); ++k)
      g(k) = (sparse_targets && rng.uniform01() < 0.4) ? 0.0 : rng.uniform(-1.0, 1.0);
    b.jac_targets.push_back(std::move(g));
  }
  return b;
}

double gradcheck_mode(LossMode mode, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.loss_mode = mode;
  cfg.jac_weight = 0.7;
  cfg.tau_env = 0.5;  // random targets: entries set to exact 0 count as "zero"

  Rng rng(derive_seed(seed, 0x6AD, static_cast<std::uint64_t>(mode)));
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    MlpModel m = mlp_init({2, 4, 2}, seed + static_cast<std::uint64_t>(trial), 0.0);
    const Batch batch = random_batch(2, 2, 3, rng, true);

    Gradients grads;
    loss_gradient(m, batch, cfg, grads, false, 0);

    auto loss_at = [&](MlpModel& model) {
      return compute_loss(model, batch, cfg, false, 0).total;
    };

    const double h = 1e-6;
    double max_abs_fd = 0.0, max_abs_diff = 0.0;
    for (std::size_t layer = 0; layer < m.weights.size(); ++layer) {
      for (Eigen::Index i = 0; i < m.weights[layer].size(); ++i) {
        const double orig = m.weights[layer](i);
        m.weights[layer](i) = orig + h;
        const double up = loss_at(m);
        m.weights[layer](i) = orig - h;
        const double down = loss_at(m);
        m.weights[layer](i) = orig;
        const double fd = (up - down) / (2.0 * h);
        max_abs_fd = std::max(max_abs_fd, std::abs(fd));
        max_abs_diff = std::max(max_abs_diff, std::abs(fd - grads.weights[layer](i)));
      }
      for (Eigen::Index i = 0; i < m.biases[layer].size(); ++i) {
        const double orig = m.biases[layer](i);
        m.biases[layer](i) = orig + h;
        const double up = loss_at(m);
        m.biases[layer](i) = orig - h;
        const double down = loss_at(m);
        m.biases[layer](i) = orig;
        const double fd = (up - down) / (2.0 * h);
        max_abs_fd = std::max(max_abs_fd, std::abs(fd));
        max_abs_diff = std::max(max_abs_diff, std::abs(fd - grads.biases[layer](i)));
      }
    }
    worst = std::max(worst, max_abs_diff / (1.0 + max_abs_fd));
  }
  return worst;
}

VerifyCheck check_loss_gradients(std::uint64_t seed) {
  VerifyCheck check;
  check.name = "loss_gradient_fd_all_modes";
  check.passed = true;
  std::ostringstream detail;
  for (LossMode mode :
       {LossMode::state, LossMode::state_jacobian_mse, LossMode::state_jacobian_mae,
        LossMode::state_jacobian_l1reg, LossMode::state_sae}) {
    const double err = gradcheck_mode(mode, seed);
    check.max_error = std::max(check.max_error, err);
    if (err > 1e-4) check.passed = false;
    detail << to_string(mode) << " " << fmt_err(err) << "; ";
  }
  check.detail = detail.str();
  return check;
}

VerifyCheck check_mlp_jacobian_fd(std::uint64_t seed) {
  const MlpModel m = mlp_init({5, 3, 3, 4}, seed + 3, 0.0);
  Rng rng(derive_seed(seed, 0x3AC));
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd x(5);
    for (int i = 0; i < 5; ++i) x(i) = rng.uniform(-2.0, 2.0);
    const Eigen::MatrixXd jac = mlp_jacobian(m, x);
    const RealMap f = [&m](const Eigen::VectorXd& xx) { return mlp_forward(m, xx); };
    const Eigen::MatrixXd fd = jacobian_fd(f, x, 1e-6);
    worst = std::max(worst, (jac - fd).cwiseAbs().maxCoeff() /
                                (1.0 + fd.cwiseAbs().maxCoeff()));
  }
  VerifyCheck check;
  check.name = "mlp_jacobian_fd";
  check.max_error = worst;
  check.passed = worst <= 1e-5;
  check.detail = "5-3-3-4 net, 20 random inputs";
  return check;
}

}  // namespace

FdSweepResult fd_jacobian_sweep(const std::string& env_name, int samples, double h,
                                std::uint64_t seed, const VerifyOptions* fault) {
  const EnvSpec env = make_env(env_name);
  const DualMap dual_step = make_dual_step(env);
  const RealMap real_step = make_real_step(env);
  Rng rng(derive_seed(seed, 0xFD0));

  FdSweepResult res;
  // Branch gaps are 1-Lipschitz in the perturbed coordinates, so 4h of
  // clearance keeps every central-difference stencil on one branch.
  const double margin = 4.0 * h;
  const bool faulted = fault && fault->inject_fault && fault->fault_env == env_name;

  for (int i = 0; i < samples; ++i) {
    auto [s, a] = sample_state_action(env, rng);
    if (switch_distance(env, s, a) < margin) {
      ++res.excluded;
      continue;
    }
    Eigen::VectorXd x(env.d_s + env.d_a);
    x << s, a;
    Eigen::MatrixXd fwd = jacobian_forward(dual_step, x);
    if (faulted) fwd(fault->fault_row, fault->fault_col) += fault->fault_delta;
    const Eigen::MatrixXd fd = jacobian_fd(real_step, x, h);
    const Eigen::MatrixXd diff = (fwd - fd).cwiseAbs();
    Eigen::Index r, c;
    const double err = diff.maxCoeff(&r, &c) / (1.0 + fd.cwiseAbs().maxCoeff());
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_row = static_cast<int>(r);
      res.worst_col = static_cast<int>(c);
    }
    ++res.compared;
  }
  return res;
}

std::vector<VerifyCheck> run_verification(const VerifyOptions& opt) {
  std::vector<VerifyCheck> checks;
  for (const std::string& name : env_names()) checks.push_back(check_env_fd(name, opt));
  checks.push_back(check_affine_exact(opt.seed));
  checks.push_back(check_chain_rule(opt.seed));
  checks.push_back(check_noise_autocorr(opt.seed));
  checks.push_back(check_noise_slope(opt.seed));
  checks.push_back(check_normalization(opt.seed));
  checks.push_back(check_run_lengths(opt.seed));
  checks.push_back(check_loss_gradients(opt.seed));
  checks.push_back(check_mlp_jacobian_fd(opt.seed));
  return checks;
}

}  // namespace dynasparse
