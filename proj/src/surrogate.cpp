#include "dynasparse/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dynasparse/errors.hpp"
#include "dynasparse/rng.hpp"

namespace dynasparse {
namespace {

using nlohmann::json;

constexpr std::uint64_t kInitStream = 0x171;
constexpr std::uint64_t kSplitStream = 0x5B1;
constexpr std::uint64_t kEpochStream = 0xE90;
constexpr std::uint64_t kDropStream = 0xD90;

// ELU (alpha = 1) and its first two derivatives. The linear branch is taken
// at z == 0, so phi' is continuous and phi'' one-sided.
inline double elu(double z) { return z >= 0.0 ? z : std::expm1(z); }
inline double elu_d(double z) { return z >= 0.0 ? 1.0 : std::exp(z); }
inline double elu_dd(double z) { return z >= 0.0 ? 0.0 : std::exp(z); }

struct ForwardPass {
  std::vector<Eigen::MatrixXd> z;     // pre-activations per hidden layer
  std::vector<Eigen::MatrixXd> a;     // post-activation (after dropout if any)
  std::vector<Eigen::MatrixXd> mask;  // dropout keep/scale factors (training)
  Eigen::MatrixXd y;
};

ForwardPass forward_batch(const MlpModel& m, const Eigen::MatrixXd& x, bool training,
                          std::uint64_t dropout_seed) {
  const int hidden = m.hidden_layers();
  ForwardPass fp;
  fp.z.resize(static_cast<std::size_t>(hidden));
  fp.a.resize(static_cast<std::size_t>(hidden));
  if (training) fp.mask.resize(static_cast<std::size_t>(hidden));

  const double p = m.dropout_rate;
  Eigen::MatrixXd cur = x;
  for (int k = 0; k < hidden; ++k) {
    Eigen::MatrixXd z = (m.weights[static_cast<std::size_t>(k)] * cur).colwise() +
                        m.biases[static_cast<std::size_t>(k)];
    Eigen::MatrixXd a = z.unaryExpr(&elu);
    if (training && p > 0.0) {
      Rng rng(derive_seed(dropout_seed, kDropStream, static_cast<std::uint64_t>(k)));
      Eigen::MatrixXd mask(a.rows(), a.cols());
      const double keep_scale = 1.0 / (1.0 - p);
      for (Eigen::Index c = 0; c < mask.cols(); ++c)
        for (Eigen::Index r = 0; r < mask.rows(); ++r)
          mask(r, c) = rng.uniform01() <= p ? 0.0 : keep_scale;
      a = a.cwiseProduct(mask);
      fp.mask[static_cast<std::size_t>(k)] = std::move(mask);
    }
    fp.z[static_cast<std::size_t>(k)] = std::move(z);
    fp.a[static_cast<std::size_t>(k)] = a;
    cur = std::move(a);
  }
  fp.y = (m.weights.back() * cur).colwise() + m.biases.back();
  return fp;
}

void zero_like(const MlpModel& m, Gradients& g) {
  g.weights.resize(m.weights.size());
  g.biases.resize(m.biases.size());
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    g.weights[k] = Eigen::MatrixXd::Zero(m.weights[k].rows(), m.weights[k].cols());
    g.biases[k] = Eigen::VectorXd::Zero(m.biases[k].size());
  }
}

// Derivative of the Jacobian-term loss with respect to the model Jacobian of
// one sample; also accumulates the term value. Returns false when the sample
// contributes nothing (empty SAE mask).
struct JacTermAccum {
  double value = 0.0;
  std::size_t sae_count = 0;
};

// Backpropagates one sample's Jacobian-term cotangent gbar through
// J = W_L D_L ... D_1 W_0 into parameter gradients.
void backprop_jacobian_term(const MlpModel& m,
                            const std::vector<Eigen::VectorXd>& d,
                            const std::vector<Eigen::VectorXd>& e,
                            const std::vector<Eigen::VectorXd>& a_clean,
                            const Eigen::VectorXd& x,
                            const std::vector<Eigen::MatrixXd>& s_tan,
                            const std::vector<Eigen::MatrixXd>& r_tan,
                            const Eigen::MatrixXd& gbar, Gradients& grads) {
  const int hidden = m.hidden_layers();
  if (hidden == 0) {
    // Linear model: J == W_0 exactly.
    grads.weights.back() += gbar;
    return;
  }

  // Left partial products L_k = W_L D_L W_{L-1} ... W_k (n x h_k).
  std::vector<Eigen::MatrixXd> left(static_cast<std::size_t>(hidden) + 1);
  left[static_cast<std::size_t>(hidden)] = m.weights.back();
  for (int k = hidden; k >= 2; --k) {
    left[static_cast<std::size_t>(k - 1)] =
        left[static_cast<std::size_t>(k)] *
        d[static_cast<std::size_t>(k - 1)].asDiagonal() *
        m.weights[static_cast<std::size_t>(k - 1)];
  }

  // Direct dependence of J on the weights.
  grads.weights.back() += gbar * r_tan[static_cast<std::size_t>(hidden)].transpose();
  for (int k = 1; k <= hidden; ++k) {
    const Eigen::MatrixXd lifted =
        d[static_cast<std::size_t>(k)].asDiagonal() *
        (left[static_cast<std::size_t>(k)].transpose() * gbar);
    if (k == 1)
      grads.weights[0] += lifted;  // R_0 is the identity
    else
      grads.weights[static_cast<std::size_t>(k - 1)] +=
          lifted * r_tan[static_cast<std::size_t>(k - 1)].transpose();
  }

  // Dependence through the activation slopes d_k = phi'(z_k).
  std::vector<Eigen::VectorXd> u(static_cast<std::size_t>(hidden) + 1);
  for (int k = 1; k <= hidden; ++k) {
    u[static_cast<std::size_t>(k)] =
        ((left[static_cast<std::size_t>(k)].transpose() * gbar).array() *
         s_tan[static_cast<std::size_t>(k)].array())
            .rowwise()
            .sum()
            .matrix();
  }

  Eigen::VectorXd delta_z;
  for (int k = hidden; k >= 1; --k) {
    Eigen::VectorXd dz = u[static_cast<std::size_t>(k)].cwiseProduct(
        e[static_cast<std::size_t>(k)]);
    if (k < hidden) {
      dz += (m.weights[static_cast<std::size_t>(k)].transpose() * delta_z)
                .cwiseProduct(d[static_cast<std::size_t>(k)]);
    }
    const Eigen::VectorXd& below =
        k == 1 ? x : a_clean[static_cast<std::size_t>(k - 1)];
    grads.weights[static_cast<std::size_t>(k - 1)] += dz * below.transpose();
    grads.biases[static_cast<std::size_t>(k - 1)] += dz;
    delta_z = std::move(dz);
  }
}

LossValue run_batch(const MlpModel& m, const Batch& batch, const TrainConfig& cfg,
                    bool training, std::uint64_t dropout_seed, Gradients* grads) {
  const Eigen::Index bsz = batch.size();
  if (bsz == 0) throw ParameterError("empty batch");
  if (batch.x.rows() != m.d_in() || batch.y.rows() != m.d_out())
    throw ParameterError("batch dims do not match model");
  const bool needs_targets = loss_mode_needs_targets(cfg.loss_mode);
  if (needs_targets && batch.jac_targets.size() != static_cast<std::size_t>(bsz))
    throw ParameterError("loss mode " + to_string(cfg.loss_mode) +
                         " requires ground-truth Jacobians for every sample");

  if (grads) zero_like(m, *grads);
  const int hidden = m.hidden_layers();
  const double denom = static_cast<double>(bsz) * m.d_out();

  LossValue loss;

  // --- state term (dropout active when training) ---
  {
    const ForwardPass fp = forward_batch(m, batch.x, training, dropout_seed);
    const Eigen::MatrixXd resid = fp.y - batch.y;
    loss.state_term = resid.squaredNorm() / denom;

    if (grads) {
      Eigen::MatrixXd delta = (2.0 / denom) * resid;
      grads->weights.back() +=
          delta * (hidden > 0 ? fp.a.back() : batch.x).transpose();
      grads->biases.back() += delta.rowwise().sum();
      Eigen::MatrixXd da = m.weights.back().transpose() * delta;
      for (int k = hidden - 1; k >= 0; --k) {
        if (training && m.dropout_rate > 0.0)
          da = da.cwiseProduct(fp.mask[static_cast<std::size_t>(k)]);
        const Eigen::MatrixXd dz =
            da.cwiseProduct(fp.z[static_cast<std::size_t>(k)].unaryExpr(&elu_d));
        grads->weights[static_cast<std::size_t>(k)] +=
            dz * (k > 0 ? fp.a[static_cast<std::size_t>(k - 1)] : batch.x).transpose();
        grads->biases[static_cast<std::size_t>(k)] += dz.rowwise().sum();
        if (k > 0) da = m.weights[static_cast<std::size_t>(k)].transpose() * dz;
      }
    }
  }

  // --- Jacobian term (always the clean, dropout-free network) ---
  if (cfg.loss_mode != LossMode::state && cfg.jac_weight != 0.0) {
    const int n = m.d_out();
    const int din = m.d_in();
    const double jac_denom = static_cast<double>(bsz) * n * din;

    // SAE normalizes by the batch-wide count of expected-zero entries, so it
    // needs a counting pass before cotangents are scaled.
    std::size_t sae_count = 0;
    if (cfg.loss_mode == LossMode::state_sae) {
      for (const auto& g : batch.jac_targets)
        sae_count += static_cast<std::size_t>((g.array().abs() < cfg.tau_env).count());
    }
    const double sae_denom = sae_count > 0 ? static_cast<double>(sae_count) : 1.0;

    std::vector<Eigen::VectorXd> d(static_cast<std::size_t>(hidden) + 1);
    std::vector<Eigen::VectorXd> e(static_cast<std::size_t>(hidden) + 1);
    std::vector<Eigen::VectorXd> a_clean(static_cast<std::size_t>(hidden) + 1);
    std::vector<Eigen::MatrixXd> s_tan(static_cast<std::size_t>(hidden) + 1);
    std::vector<Eigen::MatrixXd> r_tan(static_cast<std::size_t>(hidden) + 1);

    double term = 0.0;
    for (Eigen::Index i = 0; i < bsz; ++i) {
      const Eigen::VectorXd x = batch.x.col(i);

      // Clean forward with slope/curvature bookkeeping plus the input
      // tangent sweep R_k = D_k W_{k-1} R_{k-1}.
      Eigen::VectorXd cur = x;
      for (int k = 1; k <= hidden; ++k) {
        const Eigen::VectorXd z =
            m.weights[static_cast<std::size_t>(k - 1)] * cur +
            m.biases[static_cast<std::size_t>(k - 1)];
        d[static_cast<std::size_t>(k)] = z.unaryExpr(&elu_d);
        e[static_cast<std::size_t>(k)] = z.unaryExpr(&elu_dd);
        a_clean[static_cast<std::size_t>(k)] = z.unaryExpr(&elu);
        s_tan[static_cast<std::size_t>(k)] =
            k == 1 ? m.weights[0]
                   : m.weights[static_cast<std::size_t>(k - 1)] *
                         r_tan[static_cast<std::size_t>(k - 1)];
        r_tan[static_cast<std::size_t>(k)] =
            d[static_cast<std::size_t>(k)].asDiagonal() *
            s_tan[static_cast<std::size_t>(k)];
        cur = a_clean[static_cast<std::size_t>(k)];
      }
      Eigen::MatrixXd jac;
      if (hidden > 0)
        jac = m.weights.back() * r_tan[static_cast<std::size_t>(hidden)];
      else
        jac = m.weights.back();

      Eigen::MatrixXd gbar;  // d(term)/d(jac), including normalization
      switch (cfg.loss_mode) {
        case LossMode::state_jacobian_mse: {
          const Eigen::MatrixXd diff = jac - batch.jac_targets[static_cast<std::size_t>(i)];
          term += diff.squaredNorm() / jac_denom;
          if (grads) gbar = (2.0 / jac_denom) * diff;
          break;
        }
        case LossMode::state_jacobian_mae: {
          const Eigen::MatrixXd diff = jac - batch.jac_targets[static_cast<std::size_t>(i)];
          term += diff.array().abs().sum() / jac_denom;
          if (grads) gbar = diff.array().sign().matrix() / jac_denom;
          break;
        }
        case LossMode::state_jacobian_l1reg: {
          term += jac.array().abs().sum() / jac_denom;
          if (grads) gbar = jac.array().sign().matrix() / jac_denom;
          break;
        }
        case LossMode::state_sae: {
          const auto mask =
              (batch.jac_targets[static_cast<std::size_t>(i)].array().abs() <
               cfg.tau_env)
                  .cast<double>();
          term += (jac.array().abs() * mask).sum() / sae_denom;
          if (grads) gbar = (jac.array().sign() * mask).matrix() / sae_denom;
          break;
        }
        case LossMode::state:
          break;
      }

      if (grads && gbar.size() != 0 && !gbar.isZero(0.0)) {
        gbar *= cfg.jac_weight;
        backprop_jacobian_term(m, d, e, a_clean, x, s_tan, r_tan, gbar, *grads);
      }
    }
    loss.jac_term = term;
  }

  loss.total = loss.state_term + cfg.jac_weight * loss.jac_term;

  if (grads) {
    for (std::size_t k = 0; k < grads->weights.size(); ++k) {
      if (!grads->weights[k].allFinite() || !grads->biases[k].allFinite())
        throw DivergenceError("non-finite gradient at layer " + std::to_string(k));
    }
  }
  return loss;
}

std::vector<const Sample*> flatten(const Dataset& d) {
  std::vector<const Sample*> out;
  out.reserve(d.total_samples());
  for (const auto& ep : d.episodes)
    for (const auto& s : ep.samples) out.push_back(&s);
  return out;
}

void fisher_yates(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = rng.next_u64() % i;
    std::swap(idx[i - 1], idx[j]);
  }
}

Eigen::MatrixXd combined_jacobian(const Sample& s) {
  Eigen::MatrixXd j(s.j_state.rows(), s.j_state.cols() + s.j_action.cols());
  j << s.j_state, s.j_action;
  return j;
}

Eigen::VectorXd stacked_input(const Sample& s) {
  Eigen::VectorXd x(s.s.size() + s.a.size());
  x << s.s, s.a;
  return x;
}

struct AdamState {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  long step = 0;
};

void adamw_update(MlpModel& m, const Gradients& g, AdamState& st,
                  const TrainConfig& cfg) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (st.step == 0) {
    st.mw.resize(m.weights.size());
    st.vw.resize(m.weights.size());
    st.mb.resize(m.biases.size());
    st.vb.resize(m.biases.size());
    for (std::size_t k = 0; k < m.weights.size(); ++k) {
      st.mw[k] = Eigen::MatrixXd::Zero(m.weights[k].rows(), m.weights[k].cols());
      st.vw[k] = st.mw[k];
      st.mb[k] = Eigen::VectorXd::Zero(m.biases[k].size());
      st.vb[k] = st.mb[k];
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    st.mw[k] = b1 * st.mw[k] + (1.0 - b1) * g.weights[k];
    st.vw[k] = b2 * st.vw[k] + (1.0 - b2) * g.weights[k].cwiseProduct(g.weights[k]);
    m.weights[k].array() -=
        cfg.learning_rate *
        ((st.mw[k].array() / c1) / ((st.vw[k].array() / c2).sqrt() + eps) +
         cfg.weight_decay * m.weights[k].array());
    st.mb[k] = b1 * st.mb[k] + (1.0 - b1) * g.biases[k];
    st.vb[k] = b2 * st.vb[k] + (1.0 - b2) * g.biases[k].cwiseProduct(g.biases[k]);
    m.biases[k].array() -=
        cfg.learning_rate *
        ((st.mb[k].array() / c1) / ((st.vb[k].array() / c2).sqrt() + eps));
  }
}

double test_mse(const MlpModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const ForwardPass fp = forward_batch(m, x, false, 0);
  return (fp.y - y).squaredNorm() /
         (static_cast<double>(x.cols()) * static_cast<double>(y.rows()));
}

double mean_model_sparsity(const MlpModel& m, const Eigen::MatrixXd& x, double tau) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const Eigen::MatrixXd j = mlp_jacobian(m, x.col(i));
    sum += static_cast<double>((j.array().abs() < tau).count()) /
           static_cast<double>(j.size());
  }
  return sum / static_cast<double>(x.cols());
}

}  // namespace

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::state:
      return "state";
    case LossMode::state_jacobian_mse:
      return "state+jacobian_mse";
    case LossMode::state_jacobian_mae:
      return "state+jacobian_mae";
    case LossMode::state_jacobian_l1reg:
      return "state+jacobian_l1reg";
    case LossMode::state_sae:
      return "state+sae";
  }
  return "?";
}

std::vector<std::string> loss_mode_names() {
  return {"state", "state+jacobian_mse", "state+jacobian_mae",
          "state+jacobian_l1reg", "state+sae"};
}

LossMode loss_mode_from_string(const std::string& name) {
  if (name == "state") return LossMode::state;
  if (name == "state+jacobian_mse") return LossMode::state_jacobian_mse;
  if (name == "state+jacobian_mae") return LossMode::state_jacobian_mae;
  if (name == "state+jacobian_l1reg") return LossMode::state_jacobian_l1reg;
  if (name == "state+sae") return LossMode::state_sae;
  std::ostringstream msg;
  msg << "unknown loss mode '" << name << "'; valid modes:";
  for (const auto& n : loss_mode_names()) msg << " " << n;
  throw ParameterError(msg.str());
}

bool loss_mode_needs_targets(LossMode mode) {
  return mode == LossMode::state_jacobian_mse || mode == LossMode::state_jacobian_mae ||
         mode == LossMode::state_sae;
}

MlpModel mlp_init(const std::vector<int>& widths, std::uint64_t seed,
                  double dropout_rate) {
  if (widths.size() < 2) throw ParameterError("mlp_init: need at least [in, out]");
  for (int w : widths)
    if (w < 1) throw ParameterError("mlp_init: widths must be >= 1");
  MlpModel m;
  m.widths = widths;
  m.dropout_rate = dropout_rate;
  Rng rng(derive_seed(seed, kInitStream));
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const int fan_in = widths[k];
    const int fan_out = widths[k + 1];
    const double std_dev = std::sqrt(2.0 / fan_in);
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = std_dev * rng.normal();
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return m;
}

MlpModel mlp_init(int d_in, int d_out, std::uint64_t seed) {
  return mlp_init({d_in, 512, 512, d_out}, seed);
}

Eigen::VectorXd mlp_forward(const MlpModel& m, const Eigen::VectorXd& x, bool training,
                            std::uint64_t dropout_seed) {
  if (x.size() != m.d_in()) throw ParameterError("mlp_forward: input dim mismatch");
  if (!x.allFinite()) throw DivergenceError("mlp_forward: non-finite input");
  const ForwardPass fp = forward_batch(m, x, training, dropout_seed);
  if (!fp.y.allFinite()) throw DivergenceError("mlp_forward: non-finite output");
  return fp.y.col(0);
}

Eigen::MatrixXd mlp_jacobian(const MlpModel& m, const Eigen::VectorXd& x) {
  if (x.size() != m.d_in()) throw ParameterError("mlp_jacobian: input dim mismatch");
  const int hidden = m.hidden_layers();
  Eigen::MatrixXd jac = m.weights.back();
  if (hidden == 0) return jac;

  std::vector<Eigen::VectorXd> slopes(static_cast<std::size_t>(hidden));
  Eigen::VectorXd cur = x;
  for (int k = 0; k < hidden; ++k) {
    const Eigen::VectorXd z = m.weights[static_cast<std::size_t>(k)] * cur +
                              m.biases[static_cast<std::size_t>(k)];
    slopes[static_cast<std::size_t>(k)] = z.unaryExpr(&elu_d);
    cur = z.unaryExpr(&elu);
  }
  for (int k = hidden - 1; k >= 0; --k) {
    jac = jac * slopes[static_cast<std::size_t>(k)].asDiagonal();
    jac = jac * m.weights[static_cast<std::size_t>(k)];
  }
  return jac;
}

LossValue compute_loss(const MlpModel& m, const Batch& batch, const TrainConfig& cfg,
                       bool training, std::uint64_t dropout_seed) {
  return run_batch(m, batch, cfg, training, dropout_seed, nullptr);
}

LossValue loss_gradient(const MlpModel& m, const Batch& batch, const TrainConfig& cfg,
                        Gradients& grads, bool training, std::uint64_t dropout_seed) {
  return run_batch(m, batch, cfg, training, dropout_seed, &grads);
}

std::pair<TrainedModel, EvalResult> train(const Dataset& data, const TrainConfig& cfg) {
  const std::vector<const Sample*> all = flatten(data);
  const std::size_t n = all.size();
  if (n < 2) throw ParameterError("train: dataset too small");
  if (!(cfg.test_split > 0.0 && cfg.test_split < 1.0))
    throw ParameterError("train: test_split must be in (0, 1)");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, kSplitStream));
  fisher_yates(idx, split_rng);

  const std::size_t n_test = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.test_split * static_cast<double>(n))));
  const std::size_t n_train = n - n_test;
  if (n_train < 1) throw ParameterError("train: no training samples after split");
  if (static_cast<std::size_t>(cfg.batch_size) > n_train)
    throw ParameterError("train: batch_size " + std::to_string(cfg.batch_size) +
                         " exceeds training set size " + std::to_string(n_train));

  std::vector<const Sample*> train_set, test_set;
  for (std::size_t i = 0; i < n_train; ++i) train_set.push_back(all[idx[i]]);
  for (std::size_t i = n_train; i < n; ++i) test_set.push_back(all[idx[i]]);

  const NormStats stats = fit_stats(train_set, data.d_s, data.d_a);
  const int d_in = data.d_s + data.d_a;
  const int d_out = data.d_s;

  auto normalize_set = [&](const std::vector<const Sample*>& set, Eigen::MatrixXd& x,
                           Eigen::MatrixXd& y, std::vector<Eigen::MatrixXd>* jacs) {
    x.resize(d_in, static_cast<Eigen::Index>(set.size()));
    y.resize(d_out, static_cast<Eigen::Index>(set.size()));
    if (jacs) jacs->reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
      x.col(static_cast<Eigen::Index>(i)) =
          normalize_vec(stacked_input(*set[i]), stats.mu_in, stats.sigma_in,
                        stats.epsilon);
      y.col(static_cast<Eigen::Index>(i)) =
          normalize_vec(set[i]->s_next, stats.mu_out, stats.sigma_out, stats.epsilon);
      if (jacs) jacs->push_back(normalize_jacobian(combined_jacobian(*set[i]), stats));
    }
  };

  // Ground-truth Jacobians: needed for training only in the Jacobian-bearing
  // modes, but always for the test-set target sparsity.
  const bool train_needs_jacs = loss_mode_needs_targets(cfg.loss_mode);
  Eigen::MatrixXd x_train, y_train, x_test, y_test;
  std::vector<Eigen::MatrixXd> jac_train, jac_test;
  normalize_set(train_set, x_train, y_train, train_needs_jacs ? &jac_train : nullptr);
  normalize_set(test_set, x_test, y_test, &jac_test);

  TrainedModel tm;
  tm.config = cfg;
  tm.stats = stats;
  std::vector<int> widths;
  widths.push_back(d_in);
  for (int k = 0; k < cfg.hidden_depth; ++k) widths.push_back(cfg.hidden_width);
  widths.push_back(d_out);
  tm.model = mlp_init(widths, cfg.seed, cfg.dropout_rate);

  EvalResult ev;
  ev.initial_test_mse = test_mse(tm.model, x_test, y_test);
  ev.initial_model_sparsity = mean_model_sparsity(tm.model, x_test, cfg.tau_model);
  {
    double t = 0.0;
    for (const auto& g : jac_test)
      t += static_cast<double>((g.array().abs() < cfg.tau_env).count()) /
           static_cast<double>(g.size());
    ev.target_sparsity = t / static_cast<double>(jac_test.size());
  }

  AdamState adam;
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      Rng epoch_rng(derive_seed(cfg.seed, kEpochStream, static_cast<std::uint64_t>(epoch)));
      fisher_yates(order, epoch_rng);
    }

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < n_train;
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t bsz =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n_train - start);
      Batch batch;
      batch.x.resize(d_in, static_cast<Eigen::Index>(bsz));
      batch.y.resize(d_out, static_cast<Eigen::Index>(bsz));
      if (train_needs_jacs) batch.jac_targets.resize(bsz);
      for (std::size_t i = 0; i < bsz; ++i) {
        const std::size_t src = order[start + i];
        batch.x.col(static_cast<Eigen::Index>(i)) = x_train.col(static_cast<Eigen::Index>(src));
        batch.y.col(static_cast<Eigen::Index>(i)) = y_train.col(static_cast<Eigen::Index>(src));
        if (train_needs_jacs) batch.jac_targets[i] = jac_train[src];
      }

      Gradients grads;
      const std::uint64_t drop_seed =
          derive_seed(cfg.seed, kDropStream,
                      static_cast<std::uint64_t>(epoch) * 1000003ULL + start);
      LossValue lv;
      try {
        lv = loss_gradient(tm.model, batch, cfg, grads, true, drop_seed);
      } catch (const DivergenceError& err) {
        throw DivergenceError("train diverged at epoch " + std::to_string(epoch) +
                              ", batch offset " + std::to_string(start) + ": " +
                              err.what());
      }
      adamw_update(tm.model, grads, adam, cfg);
      epoch_loss += lv.total * static_cast<double>(bsz);
      seen += bsz;
    }
    ev.epoch_train_loss.push_back(epoch_loss / static_cast<double>(seen));
    ev.epoch_test_mse.push_back(test_mse(tm.model, x_test, y_test));
  }

  ev.test_state_mse = ev.epoch_test_mse.empty() ? ev.initial_test_mse
                                                : ev.epoch_test_mse.back();
  ev.model_sparsity = mean_model_sparsity(tm.model, x_test, cfg.tau_model);
  return {std::move(tm), std::move(ev)};
}

EvalResult evaluate(const TrainedModel& tm, const std::vector<const Sample*>& test,
                    double tau_model) {
  if (test.empty()) throw ParameterError("evaluate: empty test set");
  const int d_in = tm.model.d_in();
  const int d_out = tm.model.d_out();
  Eigen::MatrixXd x(d_in, static_cast<Eigen::Index>(test.size()));
  Eigen::MatrixXd y(d_out, static_cast<Eigen::Index>(test.size()));
  double target = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = normalize_vec(
        stacked_input(*test[i]), tm.stats.mu_in, tm.stats.sigma_in, tm.stats.epsilon);
    y.col(static_cast<Eigen::Index>(i)) = normalize_vec(
        test[i]->s_next, tm.stats.mu_out, tm.stats.sigma_out, tm.stats.epsilon);
    const Eigen::MatrixXd g = normalize_jacobian(combined_jacobian(*test[i]), tm.stats);
    target += static_cast<double>((g.array().abs() < tm.config.tau_env).count()) /
              static_cast<double>(g.size());
  }
  EvalResult ev;
  ev.test_state_mse = test_mse(tm.model, x, y);
  ev.model_sparsity = mean_model_sparsity(tm.model, x, tau_model);
  ev.target_sparsity = target / static_cast<double>(test.size());
  return ev;
}

void save_model(const TrainedModel& tm, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  std::string blob;
  auto append = [&blob](const double* p, std::size_t count) {
    blob.append(reinterpret_cast<const char*>(p), count * sizeof(double));
  };
  for (std::size_t k = 0; k < tm.model.weights.size(); ++k) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w =
        tm.model.weights[k];
    append(w.data(), static_cast<std::size_t>(w.size()));
    append(tm.model.biases[k].data(),
           static_cast<std::size_t>(tm.model.biases[k].size()));
  }

  json j;
  j["format_version"] = 1;
  j["widths"] = tm.model.widths;
  j["dropout_rate"] = tm.model.dropout_rate;
  auto vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  j["stats"] = {{"mu_in", vec(tm.stats.mu_in)},
                {"sigma_in", vec(tm.stats.sigma_in)},
                {"mu_out", vec(tm.stats.mu_out)},
                {"sigma_out", vec(tm.stats.sigma_out)},
                {"epsilon", tm.stats.epsilon}};
  j["config"] = {{"loss_mode", to_string(tm.config.loss_mode)},
                 {"jac_weight", tm.config.jac_weight},
                 {"learning_rate", tm.config.learning_rate},
                 {"weight_decay", tm.config.weight_decay},
                 {"batch_size", tm.config.batch_size},
                 {"epochs", tm.config.epochs},
                 {"test_split", tm.config.test_split},
                 {"seed", tm.config.seed},
                 {"shuffle", tm.config.shuffle},
                 {"hidden_width", tm.config.hidden_width},
                 {"hidden_depth", tm.config.hidden_depth},
                 {"dropout_rate", tm.config.dropout_rate},
                 {"tau_model", tm.config.tau_model},
                 {"tau_env", tm.config.tau_env}};

  std::ofstream jf(fs::path(dir) / "model.json", std::ios::binary | std::ios::trunc);
  if (!jf) throw IoError("cannot write model.json in " + dir);
  jf << j.dump(2) << "\n";
  std::ofstream bf(fs::path(dir) / "model.bin", std::ios::binary | std::ios::trunc);
  if (!bf) throw IoError("cannot write model.bin in " + dir);
  bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

TrainedModel load_model(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream jf(fs::path(dir) / "model.json", std::ios::binary);
  if (!jf) throw IoError("cannot open model.json in " + dir);
  json j;
  try {
    jf >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed model.json: " + std::string(e.what()));
  }
  if (j.at("format_version").get<int>() != 1)
    throw IoError("unsupported model format_version");

  TrainedModel tm;
  tm.model.widths = j.at("widths").get<std::vector<int>>();
  tm.model.dropout_rate = j.at("dropout_rate").get<double>();
  auto vec = [](const json& arr) {
    const std::vector<double> v = arr.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(),
                                             static_cast<Eigen::Index>(v.size()))
        .eval();
  };
  tm.stats.mu_in = vec(j.at("stats").at("mu_in"));
  tm.stats.sigma_in = vec(j.at("stats").at("sigma_in"));
  tm.stats.mu_out = vec(j.at("stats").at("mu_out"));
  tm.stats.sigma_out = vec(j.at("stats").at("sigma_out"));
  tm.stats.epsilon = j.at("stats").at("epsilon").get<double>();
  const json& c = j.at("config");
  tm.config.loss_mode = loss_mode_from_string(c.at("loss_mode").get<std::string>());
  tm.config.jac_weight = c.at("jac_weight").get<double>();
  tm.config.learning_rate = c.at("learning_rate").get<double>();
  tm.config.weight_decay = c.at("weight_decay").get<double>();
  tm.config.batch_size = c.at("batch_size").get<int>();
  tm.config.epochs = c.at("epochs").get<int>();
  tm.config.test_split = c.at("test_split").get<double>();
  tm.config.seed = c.at("seed").get<std::uint64_t>();
  tm.config.shuffle = c.at("shuffle").get<bool>();
  tm.config.hidden_width = c.at("hidden_width").get<int>();
  tm.config.hidden_depth = c.at("hidden_depth").get<int>();
  tm.config.dropout_rate = c.at("dropout_rate").get<double>();
  tm.config.tau_model = c.at("tau_model").get<double>();
  tm.config.tau_env = c.at("tau_env").get<double>();

  std::ifstream bf(fs::path(dir) / "model.bin", std::ios::binary);
  if (!bf) throw IoError("cannot open model.bin in " + dir);
  std::ostringstream ss;
  ss << bf.rdbuf();
  const std::string blob = ss.str();

  std::size_t expect = 0;
  for (std::size_t k = 0; k + 1 < tm.model.widths.size(); ++k)
    expect += static_cast<std::size_t>(tm.model.widths[k + 1]) *
                  static_cast<std::size_t>(tm.model.widths[k]) +
              static_cast<std::size_t>(tm.model.widths[k + 1]);
  if (blob.size() != expect * sizeof(double))
    throw IoError("model.bin size " + std::to_string(blob.size()) +
                  " does not match widths (expected " +
                  std::to_string(expect * sizeof(double)) + ")");

  std::size_t offset = 0;
  for (std::size_t k = 0; k + 1 < tm.model.widths.size(); ++k) {
    const int rows = tm.model.widths[k + 1];
    const int cols = tm.model.widths[k];
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w(rows,
                                                                             cols);
    std::memcpy(w.data(), blob.data() + offset * sizeof(double),
                static_cast<std::size_t>(w.size()) * sizeof(double));
    offset += static_cast<std::size_t>(w.size());
    Eigen::VectorXd b(rows);
    std::memcpy(b.data(), blob.data() + offset * sizeof(double),
                static_cast<std::size_t>(rows) * sizeof(double));
    offset += static_cast<std::size_t>(rows);
    tm.model.weights.emplace_back(w);
    tm.model.biases.push_back(std::move(b));
  }
  return tm;
}

}  // namespace dynasparse
