#include "dynasparse/report_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "dynasparse/errors.hpp"

namespace dynasparse {
namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  return m;
}

json bool_matrix_to_json(const BoolMatrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c) ? 1 : 0);
    rows.push_back(std::move(row));
  }
  return rows;
}

BoolMatrix bool_matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  BoolMatrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<int>() != 0;
  return m;
}

json hist_to_json(const SparsityHistogram& h) {
  json out;
  out["counts"] = h.counts;
  out["mean"] = h.mean;
  out["total"] = h.total;
  return out;
}

SparsityHistogram hist_from_json(const json& j) {
  SparsityHistogram h;
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    h.counts[i] = j.at("counts")[i].get<std::size_t>();
  h.mean = j.at("mean").get<double>();
  h.total = j.at("total").get<std::size_t>();
  return h;
}

json runs_to_json(const std::vector<ElementRuns>& elems) {
  json arr = json::array();
  for (const auto& e : elems) {
    arr.push_back({{"zero", e.zero_runs},
                   {"nonzero", e.nonzero_runs},
                   {"full_zero", e.full_episode_zero_runs},
                   {"full_nonzero", e.full_episode_nonzero_runs}});
  }
  return arr;
}

std::vector<ElementRuns> runs_from_json(const json& arr) {
  std::vector<ElementRuns> elems;
  for (const auto& e : arr) {
    ElementRuns r;
    r.zero_runs = e.at("zero").get<std::vector<int>>();
    r.nonzero_runs = e.at("nonzero").get<std::vector<int>>();
    r.full_episode_zero_runs = e.at("full_zero").get<std::vector<int>>();
    r.full_episode_nonzero_runs = e.at("full_nonzero").get<std::vector<int>>();
    elems.push_back(std::move(r));
  }
  return elems;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + p.string());
  f << text;
  if (!f) throw IoError("write failed: " + p.string());
}

void write_matrix_csv(const std::filesystem::path& p, const Eigen::MatrixXd& m,
                      bool rounded) {
  std::ostringstream out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ",";
      if (rounded)
        out << static_cast<long long>(std::llround(m(r, c)));
      else
        out << fmt(m(r, c));
    }
    out << "\n";
  }
  write_text(p, out.str());
}

}  // namespace

json sparsity_report_to_json(const SparsityReport& r, const json& meta) {
  json j;
  j["meta"] = meta;
  j["tau"] = r.tau;
  j["global_zeros"] = {{"state_mask", bool_matrix_to_json(r.global.state.mask)},
                       {"action_mask", bool_matrix_to_json(r.global.action.mask)},
                       {"state_count", r.global.state_count},
                       {"action_count", r.global.action_count},
                       {"state_percent", r.global.state_percent},
                       {"action_percent", r.global.action_percent}};
  j["zero_fraction"] = {{"state", matrix_to_json(r.zero_fraction_state)},
                        {"action", matrix_to_json(r.zero_fraction_action)}};
  j["histograms"] = {{"state", hist_to_json(r.hist_state)},
                     {"action", hist_to_json(r.hist_action)},
                     {"combined", hist_to_json(r.hist_combined)}};
  j["timeseries"] = r.timeseries;
  j["durations"] = {{"d_s", r.durations.d_s},
                    {"d_a", r.durations.d_a},
                    {"state", runs_to_json(r.durations.state)},
                    {"action", runs_to_json(r.durations.action)}};
  json emb;
  emb["coords"] = matrix_to_json(r.embedding.coords);
  json colors = json::array();
  for (Eigen::Index i = 0; i < r.embedding.colors.size(); ++i)
    colors.push_back(r.embedding.colors(i));
  emb["colors"] = colors;
  json evs = json::array();
  for (Eigen::Index i = 0; i < r.embedding.eigenvalues.size(); ++i)
    evs.push_back(r.embedding.eigenvalues(i));
  emb["eigenvalues"] = evs;
  emb["kept_dims"] = r.embedding.kept_dims;
  j["embedding"] = emb;
  return j;
}

SparsityReport sparsity_report_from_json(const json& j) {
  SparsityReport r;
  r.tau = j.at("tau").get<double>();
  const json& g = j.at("global_zeros");
  r.global.state.mask = bool_matrix_from_json(g.at("state_mask"));
  r.global.action.mask = bool_matrix_from_json(g.at("action_mask"));
  r.global.state.tau = r.tau;
  r.global.action.tau = r.tau;
  r.global.state_count = g.at("state_count").get<int>();
  r.global.action_count = g.at("action_count").get<int>();
  r.global.state_percent = g.at("state_percent").get<double>();
  r.global.action_percent = g.at("action_percent").get<double>();
  r.zero_fraction_state = matrix_from_json(j.at("zero_fraction").at("state"));
  r.zero_fraction_action = matrix_from_json(j.at("zero_fraction").at("action"));
  r.hist_state = hist_from_json(j.at("histograms").at("state"));
  r.hist_action = hist_from_json(j.at("histograms").at("action"));
  r.hist_combined = hist_from_json(j.at("histograms").at("combined"));
  r.timeseries = j.at("timeseries").get<std::vector<std::vector<double>>>();
  r.durations.d_s = j.at("durations").at("d_s").get<int>();
  r.durations.d_a = j.at("durations").at("d_a").get<int>();
  r.durations.state = runs_from_json(j.at("durations").at("state"));
  r.durations.action = runs_from_json(j.at("durations").at("action"));
  r.embedding.coords = matrix_from_json(j.at("embedding").at("coords"));
  const json& colors = j.at("embedding").at("colors");
  r.embedding.colors.resize(static_cast<Eigen::Index>(colors.size()));
  for (std::size_t i = 0; i < colors.size(); ++i)
    r.embedding.colors(static_cast<Eigen::Index>(i)) = colors[i].get<double>();
  const json& evs = j.at("embedding").at("eigenvalues");
  r.embedding.eigenvalues.resize(static_cast<Eigen::Index>(evs.size()));
  for (std::size_t i = 0; i < evs.size(); ++i)
    r.embedding.eigenvalues(static_cast<Eigen::Index>(i)) = evs[i].get<double>();
  r.embedding.kept_dims = j.at("embedding").at("kept_dims").get<std::vector<int>>();
  return r;
}

void write_sparsity_report(const SparsityReport& r, const json& meta,
                           const std::string& out_dir, int timeseries_max_steps) {
  namespace fs = std::filesystem;
  const fs::path dir(out_dir);
  fs::create_directories(dir);

  write_text(dir / "report.json", sparsity_report_to_json(r, meta).dump(2) + "\n");

  {
    std::ostringstream out;
    out << "jacobian,zero_count,total_elements,percent\n";
    char line[128];
    const int ds2 = static_cast<int>(r.global.state.mask.size());
    const int dsa = static_cast<int>(r.global.action.mask.size());
    std::snprintf(line, sizeof(line), "state,%d,%d,%.2f\n", r.global.state_count, ds2,
                  r.global.state_percent);
    out << line;
    std::snprintf(line, sizeof(line), "action,%d,%d,%.2f\n", r.global.action_count,
                  dsa, r.global.action_percent);
    out << line;
    const int combined = r.global.state_count + r.global.action_count;
    std::snprintf(line, sizeof(line), "combined,%d,%d,%.2f\n", combined, ds2 + dsa,
                  100.0 * combined / (ds2 + dsa));
    out << line;
    write_text(dir / "global_zeros.csv", out.str());
  }

  write_matrix_csv(dir / "zero_fraction_state.csv", r.zero_fraction_state, false);
  write_matrix_csv(dir / "zero_fraction_state_rounded.csv", r.zero_fraction_state,
                   true);
  write_matrix_csv(dir / "zero_fraction_action.csv", r.zero_fraction_action, false);
  write_matrix_csv(dir / "zero_fraction_action_rounded.csv", r.zero_fraction_action,
                   true);

  {
    std::ostringstream out;
    out << "bin_lo,bin_hi,state_count,action_count,combined_count\n";
    for (std::size_t b = 0; b < 10; ++b) {
      out << fmt(0.1 * static_cast<double>(b)) << ","
          << fmt(0.1 * static_cast<double>(b + 1)) << "," << r.hist_state.counts[b]
          << "," << r.hist_action.counts[b] << "," << r.hist_combined.counts[b]
          << "\n";
    }
    write_text(dir / "sparsity_hist.csv", out.str());
  }

  for (std::size_t e = 0; e < r.timeseries.size(); ++e) {
    std::ostringstream out;
    out << "t,combined_sparsity\n";
    const auto& series = r.timeseries[e];
    std::size_t limit = series.size();
    if (timeseries_max_steps > 0)
      limit = std::min(limit, static_cast<std::size_t>(timeseries_max_steps));
    for (std::size_t t = 0; t < limit; ++t)
      out << t << "," << fmt(series[t]) << "\n";
    write_text(dir / ("timeseries_ep" + std::to_string(e) + ".csv"), out.str());
  }

  {
    // Pooled run-length histogram over all elements of both Jacobians.
    // Whole-episode runs are excluded here; the JSON keeps them flagged.
    std::map<int, std::pair<std::size_t, std::size_t>> pooled;
    auto pool = [&pooled](const std::vector<ElementRuns>& elems) {
      for (const auto& e : elems) {
        for (int len : e.zero_runs) ++pooled[len].first;
        for (int len : e.nonzero_runs) ++pooled[len].second;
      }
    };
    pool(r.durations.state);
    pool(r.durations.action);
    std::ostringstream out;
    out << "length,zero_count,nonzero_count\n";
    for (const auto& [len, counts] : pooled)
      out << len << "," << counts.first << "," << counts.second << "\n";
    write_text(dir / "durations.csv", out.str());
  }

  {
    std::ostringstream out;
    out << "pc1,pc2,combined_sparsity\n";
    for (Eigen::Index i = 0; i < r.embedding.coords.rows(); ++i) {
      out << fmt(r.embedding.coords(i, 0)) << "," << fmt(r.embedding.coords(i, 1))
          << "," << fmt(r.embedding.colors(i)) << "\n";
    }
    write_text(dir / "embedding.csv", out.str());
  }
}

void regenerate_report_csvs(const std::string& report_json_path,
                            const std::string& out_dir, int timeseries_max_steps) {
  std::ifstream f(report_json_path, std::ios::binary);
  if (!f) throw IoError("cannot open report: " + report_json_path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed report JSON: " + std::string(e.what()));
  }
  const SparsityReport r = sparsity_report_from_json(j);
  write_sparsity_report(r, j.at("meta"), out_dir, timeseries_max_steps);
}

}  // namespace dynasparse
