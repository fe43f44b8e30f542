#include "dynasparse/sparsity.hpp"

#include <algorithm>
#include <cmath>

#include "dynasparse/errors.hpp"

namespace dynasparse {
namespace {

void require_nonempty(const Dataset& d, const char* op) {
  if (d.total_samples() == 0)
    throw ParameterError(std::string(op) + ": dataset has no samples");
}

int count_below(const Eigen::MatrixXd& j, double tau) {
  return static_cast<int>((j.array().abs() < tau).count());
}

double part_sparsity(const Sample& s, double tau, JacobianPart which) {
  switch (which) {
    case JacobianPart::state:
      return sparsity_value(s.j_state, tau);
    case JacobianPart::action:
      return sparsity_value(s.j_action, tau);
    case JacobianPart::combined:
      return combined_sparsity_value(s.j_state, s.j_action, tau);
  }
  return 0.0;
}

// Appends the maximal runs of one element's below/above-tau sequence for a
// single episode.
void accumulate_runs(ElementRuns& runs, const std::vector<bool>& zero_seq) {
  const std::size_t n = zero_seq.size();
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = start;
    while (end + 1 < n && zero_seq[end + 1] == zero_seq[start]) ++end;
    const int len = static_cast<int>(end - start + 1);
    const bool whole_episode = (start == 0 && end == n - 1);
    if (zero_seq[start]) {
      (whole_episode ? runs.full_episode_zero_runs : runs.zero_runs).push_back(len);
    } else {
      (whole_episode ? runs.full_episode_nonzero_runs : runs.nonzero_runs)
          .push_back(len);
    }
    start = end + 1;
  }
}

}  // namespace

std::string to_string(JacobianPart part) {
  switch (part) {
    case JacobianPart::state:
      return "state";
    case JacobianPart::action:
      return "action";
    case JacobianPart::combined:
      return "combined";
  }
  return "?";
}

ZeroMask zero_mask(const Eigen::MatrixXd& j, double tau) {
  if (!(tau > 0.0)) throw ParameterError("zero_mask: tau must be > 0");
  ZeroMask m;
  m.tau = tau;
  m.mask = j.array().abs() < tau;
  return m;
}

double sparsity_value(const Eigen::MatrixXd& j, double tau) {
  if (j.size() == 0) throw ParameterError("sparsity_value: empty matrix");
  if (!(tau > 0.0)) throw ParameterError("sparsity_value: tau must be > 0");
  return static_cast<double>(count_below(j, tau)) / static_cast<double>(j.size());
}

double combined_sparsity_value(const Eigen::MatrixXd& j_state,
                               const Eigen::MatrixXd& j_action, double tau) {
  if (j_state.rows() != j_action.rows())
    throw ParameterError("combined_sparsity_value: row count mismatch");
  const double zeros = count_below(j_state, tau) + count_below(j_action, tau);
  return zeros / static_cast<double>(j_state.size() + j_action.size());
}

GlobalZeros global_zero_mask(const Dataset& d, double tau) {
  require_nonempty(d, "global_zero_mask");
  if (!(tau > 0.0)) throw ParameterError("global_zero_mask: tau must be > 0");

  GlobalZeros g;
  g.state.tau = tau;
  g.action.tau = tau;
  g.state.mask = BoolMatrix::Constant(d.d_s, d.d_s, true);
  g.action.mask = BoolMatrix::Constant(d.d_s, d.d_a, true);
  for (const auto& ep : d.episodes) {
    for (const auto& s : ep.samples) {
      g.state.mask = g.state.mask && (s.j_state.array().abs() < tau);
      g.action.mask = g.action.mask && (s.j_action.array().abs() < tau);
    }
  }
  g.state_count = static_cast<int>(g.state.mask.count());
  g.action_count = static_cast<int>(g.action.mask.count());
  g.state_percent = 100.0 * g.state_count / static_cast<double>(d.d_s * d.d_s);
  g.action_percent = 100.0 * g.action_count / static_cast<double>(d.d_s * d.d_a);
  return g;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> zero_fraction_matrix(const Dataset& d,
                                                                 double tau) {
  require_nonempty(d, "zero_fraction_matrix");
  Eigen::MatrixXd state = Eigen::MatrixXd::Zero(d.d_s, d.d_s);
  Eigen::MatrixXd action = Eigen::MatrixXd::Zero(d.d_s, d.d_a);
  int contributing = 0;
  for (const auto& ep : d.episodes) {
    if (ep.samples.empty()) continue;
    ++contributing;
    Eigen::MatrixXd ep_state = Eigen::MatrixXd::Zero(d.d_s, d.d_s);
    Eigen::MatrixXd ep_action = Eigen::MatrixXd::Zero(d.d_s, d.d_a);
    for (const auto& s : ep.samples) {
      ep_state.array() += (s.j_state.array().abs() < tau).cast<double>();
      ep_action.array() += (s.j_action.array().abs() < tau).cast<double>();
    }
    state += 100.0 * ep_state / static_cast<double>(ep.samples.size());
    action += 100.0 * ep_action / static_cast<double>(ep.samples.size());
  }
  state /= contributing;
  action /= contributing;
  return {state, action};
}

SparsityHistogram sparsity_histogram(const Dataset& d, double tau,
                                     JacobianPart which) {
  require_nonempty(d, "sparsity_histogram");
  SparsityHistogram h;
  double sum = 0.0;
  for (const auto& ep : d.episodes) {
    for (const auto& s : ep.samples) {
      const double v = part_sparsity(s, tau, which);
      const int bin = std::min(9, static_cast<int>(v * 10.0));
      ++h.counts[static_cast<std::size_t>(bin)];
      sum += v;
      ++h.total;
    }
  }
  h.mean = sum / static_cast<double>(h.total);
  return h;
}

std::vector<double> sparsity_timeseries(const Episode& ep, double tau,
                                        JacobianPart which) {
  if (ep.samples.empty())
    throw ParameterError("sparsity_timeseries: empty episode");
  std::vector<double> series;
  series.reserve(ep.samples.size());
  for (const auto& s : ep.samples) series.push_back(part_sparsity(s, tau, which));
  return series;
}

RunLengthDurations run_length_durations(const Dataset& d, double tau) {
  require_nonempty(d, "run_length_durations");
  RunLengthDurations out;
  out.d_s = d.d_s;
  out.d_a = d.d_a;
  out.state.resize(static_cast<std::size_t>(d.d_s * d.d_s));
  out.action.resize(static_cast<std::size_t>(d.d_s * d.d_a));

  std::vector<bool> seq;
  for (const auto& ep : d.episodes) {
    if (ep.samples.empty()) continue;
    seq.resize(ep.samples.size());
    for (int r = 0; r < d.d_s; ++r) {
      for (int c = 0; c < d.d_s; ++c) {
        for (std::size_t t = 0; t < ep.samples.size(); ++t)
          seq[t] = std::abs(ep.samples[t].j_state(r, c)) < tau;
        accumulate_runs(out.state[static_cast<std::size_t>(r * d.d_s + c)], seq);
      }
      for (int c = 0; c < d.d_a; ++c) {
        for (std::size_t t = 0; t < ep.samples.size(); ++t)
          seq[t] = std::abs(ep.samples[t].j_action(r, c)) < tau;
        accumulate_runs(out.action[static_cast<std::size_t>(r * d.d_a + c)], seq);
      }
    }
  }
  return out;
}

std::vector<double> per_sample_combined_sparsity(const Dataset& d, double tau) {
  std::vector<double> colors;
  colors.reserve(d.total_samples());
  for (const auto& ep : d.episodes)
    for (const auto& s : ep.samples)
      colors.push_back(combined_sparsity_value(s.j_state, s.j_action, tau));
  return colors;
}

PcaEmbedding pca_embedding_2d(const Dataset& d, const std::vector<double>& colors) {
  const std::size_t n = d.total_samples();
  if (n < 3) throw ParameterError("pca_embedding_2d: need at least 3 samples");
  if (colors.size() != n)
    throw ParameterError("pca_embedding_2d: color count != sample count");

  const int dim = 2 * d.d_s + d.d_a;
  Eigen::MatrixXd data(static_cast<Eigen::Index>(n), dim);
  Eigen::Index row = 0;
  for (const auto& ep : d.episodes) {
    for (const auto& s : ep.samples) {
      data.row(row).segment(0, d.d_s) = s.s.transpose();
      data.row(row).segment(d.d_s, d.d_a) = s.a.transpose();
      data.row(row).segment(d.d_s + d.d_a, d.d_s) = s.s_next.transpose();
      ++row;
    }
  }
  data.rowwise() -= data.colwise().mean();

  PcaEmbedding emb;
  for (int c = 0; c < dim; ++c) {
    if (data.col(c).squaredNorm() / static_cast<double>(n) > 1e-30)
      emb.kept_dims.push_back(c);
  }
  const int kept = static_cast<int>(emb.kept_dims.size());
  Eigen::MatrixXd reduced(data.rows(), kept);
  for (int c = 0; c < kept; ++c) reduced.col(c) = data.col(emb.kept_dims[static_cast<std::size_t>(c)]);

  const Eigen::MatrixXd cov =
      reduced.transpose() * reduced / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);

  emb.eigenvalues = solver.eigenvalues().reverse();
  emb.coords.resize(data.rows(), 2);
  emb.colors = Eigen::Map<const Eigen::VectorXd>(colors.data(),
                                                 static_cast<Eigen::Index>(n));
  for (int pc = 0; pc < 2; ++pc) {
    if (pc < kept) {
      Eigen::VectorXd v = solver.eigenvectors().col(kept - 1 - pc);
      // Deterministic sign: largest-magnitude component positive.
      Eigen::Index imax;
      v.cwiseAbs().maxCoeff(&imax);
      if (v(imax) < 0.0) v = -v;
      emb.coords.col(pc) = reduced * v;
    } else {
      emb.coords.col(pc).setZero();
    }
  }
  return emb;
}

SparsityReport analyze_dataset(const Dataset& d, double tau) {
  require_nonempty(d, "analyze_dataset");
  SparsityReport r;
  r.tau = tau;
  r.global = global_zero_mask(d, tau);
  std::tie(r.zero_fraction_state, r.zero_fraction_action) =
      zero_fraction_matrix(d, tau);
  r.hist_state = sparsity_histogram(d, tau, JacobianPart::state);
  r.hist_action = sparsity_histogram(d, tau, JacobianPart::action);
  r.hist_combined = sparsity_histogram(d, tau, JacobianPart::combined);
  for (const auto& ep : d.episodes) {
    if (!ep.samples.empty())
      r.timeseries.push_back(sparsity_timeseries(ep, tau, JacobianPart::combined));
  }
  r.durations = run_length_durations(d, tau);
  r.embedding = pca_embedding_2d(d, per_sample_combined_sparsity(d, tau));
  return r;
}

}  // namespace dynasparse
