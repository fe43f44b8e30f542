#include "dynasparse/rollout.hpp"

#include <fftw3.h>

#include <bit>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dynasparse/errors.hpp"
#include "dynasparse/parallel.hpp"
#include "dynasparse/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset binaries are little-endian; big-endian hosts unsupported");

namespace dynasparse {
namespace {

using nlohmann::json;

constexpr std::uint64_t kNoiseColumnStream = 0xC01;
constexpr std::uint64_t kActionStream = 0xAC7;

// FFTW plan creation is not thread-safe; execution on distinct plans is.
std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

Eigen::VectorXd shaped_noise_column(double beta, int steps, std::uint64_t seed) {
  const int n = steps;
  const int nfreq = n / 2 + 1;
  Rng rng(seed);

  std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(nfreq));
  spectrum[0] = 0.0;  // no DC: zero mean before normalization
  const double inv_sqrt2 = 0.7071067811865476;
  for (int k = 1; k < nfreq; ++k) {
    const double f = static_cast<double>(k) / n;
    const double amp = std::pow(f, -beta / 2.0);
    if (n % 2 == 0 && k == n / 2) {
      spectrum[static_cast<std::size_t>(k)] = amp * rng.normal();
    } else {
      const double re = rng.normal();
      const double im = rng.normal();
      spectrum[static_cast<std::size_t>(k)] = amp * inv_sqrt2 * std::complex<double>(re, im);
    }
  }

  Eigen::VectorXd out(n);
  {
    fftw_plan plan;
    {
      std::lock_guard<std::mutex> lock(fftw_plan_mutex());
      plan = fftw_plan_dft_c2r_1d(n, reinterpret_cast<fftw_complex*>(spectrum.data()),
                                  out.data(), FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
      std::lock_guard<std::mutex> lock(fftw_plan_mutex());
      fftw_destroy_plan(plan);
    }
  }

  const double mean = out.mean();
  out.array() -= mean;
  const double var = out.squaredNorm() / n;
  if (var > 0.0) out /= std::sqrt(var);
  return out;
}

void append_doubles(std::string& buf, const double* data, std::size_t count) {
  buf.append(reinterpret_cast<const char*>(data), count * sizeof(double));
}

std::uint64_t fnv1a64(std::uint64_t h, const std::string& bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(const std::vector<const std::string*>& payloads) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string* p : payloads) h = fnv1a64(h, *p);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + p.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + p.string());
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open: " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct Payloads {
  std::string s, a, s_next, j_state, j_action;
};

Payloads serialize_payloads(const Dataset& d) {
  Payloads p;
  for (const auto& ep : d.episodes) {
    for (const auto& sample : ep.samples) {
      append_doubles(p.s, sample.s.data(), static_cast<std::size_t>(d.d_s));
      append_doubles(p.a, sample.a.data(), static_cast<std::size_t>(d.d_a));
      append_doubles(p.s_next, sample.s_next.data(), static_cast<std::size_t>(d.d_s));
      // Eigen stores column-major; the file format is row-major.
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
          js = sample.j_state,
          ja = sample.j_action;
      append_doubles(p.j_state, js.data(), static_cast<std::size_t>(js.size()));
      append_doubles(p.j_action, ja.data(), static_cast<std::size_t>(ja.size()));
    }
  }
  return p;
}

}  // namespace

std::string to_string(PolicyDescriptor::Kind kind) {
  return kind == PolicyDescriptor::Kind::white ? "white" : "colored";
}

PolicyDescriptor::Kind policy_kind_from_string(const std::string& s) {
  if (s == "white") return PolicyDescriptor::Kind::white;
  if (s == "colored") return PolicyDescriptor::Kind::colored;
  throw ParameterError("unknown policy kind '" + s + "'; valid: white, colored");
}

Eigen::MatrixXd colored_noise_sequence(double beta, int steps, int dims,
                                       std::uint64_t seed) {
  if (steps < 2) throw ParameterError("colored_noise_sequence: steps must be >= 2");
  if (dims < 1) throw ParameterError("colored_noise_sequence: dims must be >= 1");
  if (!(beta >= 0.0)) throw ParameterError("colored_noise_sequence: beta must be >= 0");

  Eigen::MatrixXd noise(steps, dims);
  for (int c = 0; c < dims; ++c) {
    noise.col(c) = shaped_noise_column(
        beta, steps, derive_seed(seed, kNoiseColumnStream, static_cast<std::uint64_t>(c)));
  }
  return noise;
}

Dataset collect(const EnvSpec& env, const PolicyDescriptor& policy, int episodes,
                std::uint64_t seed) {
  if (episodes < 1) throw ParameterError("collect: episodes must be >= 1");
  if (!(policy.scale > 0.0 && policy.scale <= 1.0))
    throw ParameterError("collect: policy scale must be in (0, 1]");
  if (!(policy.beta >= 0.0 && policy.beta <= 3.0))
    throw ParameterError("collect: policy beta must be in [0, 3]");

  Dataset d;
  d.env_name = env.name;
  d.d_s = env.d_s;
  d.d_a = env.d_a;
  d.dt = env.dt;
  d.horizon = env.horizon;
  d.env_params = env.params;
  d.policy = policy;
  d.collect_seed = seed;
  d.episodes.resize(static_cast<std::size_t>(episodes));

  const Eigen::VectorXd mid = 0.5 * (env.action_high + env.action_low);
  const Eigen::VectorXd half = 0.5 * (env.action_high - env.action_low);

  parallel_for_index(episodes, [&](int e) {
    Episode ep;
    ep.samples.reserve(static_cast<std::size_t>(env.horizon));
    State st = reset(env, seed + static_cast<std::uint64_t>(e));
    const Eigen::MatrixXd noise = colored_noise_sequence(
        policy.effective_beta(), env.horizon, env.d_a,
        derive_seed(policy.seed, kActionStream, static_cast<std::uint64_t>(e)));

    for (int t = 0; t < env.horizon; ++t) {
      Eigen::VectorXd a =
          (mid.array() + policy.scale * half.array() * noise.row(t).transpose().array())
              .cwiseMax(env.action_low.array())
              .cwiseMin(env.action_high.array())
              .matrix();
      Sample sample;
      try {
        auto [next, jac] = step_with_jacobians(env, st, a);
        sample.t = st.t;
        sample.s = st.values;
        sample.a = a;
        sample.s_next = next.values;
        sample.j_state = jac.j_state;
        sample.j_action = jac.j_action;
        st = next;
      } catch (const DivergenceError&) {
        ep.truncated = true;
        break;
      }
      ep.samples.push_back(std::move(sample));
    }
    d.episodes[static_cast<std::size_t>(e)] = std::move(ep);
  });
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path dir(path);
  fs::create_directories(dir);

  const Payloads p = serialize_payloads(d);

  json manifest;
  manifest["format_version"] = d.format_version;
  manifest["env"] = {{"name", d.env_name}, {"d_s", d.d_s},      {"d_a", d.d_a},
                     {"dt", d.dt},         {"horizon", d.horizon}};
  manifest["env"]["params"] = d.env_params;
  manifest["policy"] = {{"kind", to_string(d.policy.kind)},
                        {"beta", d.policy.beta},
                        {"scale", d.policy.scale},
                        {"seed", d.policy.seed}};
  manifest["collect_seed"] = d.collect_seed;
  manifest["config_hash"] = d.config_hash;
  json eps = json::array();
  for (const auto& ep : d.episodes)
    eps.push_back({{"length", ep.samples.size()}, {"truncated", ep.truncated}});
  manifest["episodes"] = eps;
  manifest["episode_count"] = d.episodes.size();
  manifest["total_samples"] = d.total_samples();
  manifest["creation_hash"] =
      hash_hex({&p.s, &p.a, &p.s_next, &p.j_state, &p.j_action});

  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  write_file(dir / "s.f64", p.s);
  write_file(dir / "a.f64", p.a);
  write_file(dir / "s_next.f64", p.s_next);
  write_file(dir / "j_state.f64", p.j_state);
  write_file(dir / "j_action.f64", p.j_action);
}

Dataset load_dataset(const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path dir(path);

  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in " + path + ": " + e.what());
  }

  Dataset d;
  try {
    d.format_version = manifest.at("format_version").get<int>();
    if (d.format_version != 1)
      throw IoError("unsupported dataset format_version " +
                    std::to_string(d.format_version) + " (expected 1)");
    const json& env = manifest.at("env");
    d.env_name = env.at("name").get<std::string>();
    d.d_s = env.at("d_s").get<int>();
    d.d_a = env.at("d_a").get<int>();
    d.dt = env.at("dt").get<double>();
    d.horizon = env.at("horizon").get<int>();
    d.env_params = env.at("params").get<std::map<std::string, double>>();
    const json& pol = manifest.at("policy");
    d.policy.kind = policy_kind_from_string(pol.at("kind").get<std::string>());
    d.policy.beta = pol.at("beta").get<double>();
    d.policy.scale = pol.at("scale").get<double>();
    d.policy.seed = pol.at("seed").get<std::uint64_t>();
    d.collect_seed = manifest.at("collect_seed").get<std::uint64_t>();
    d.config_hash = manifest.value("config_hash", std::string());
  } catch (const json::exception& e) {
    throw IoError("manifest missing fields in " + path + ": " + e.what());
  }
  if (d.d_s < 1 || d.d_a < 1)
    throw IoError("manifest dims invalid: d_s=" + std::to_string(d.d_s) +
                  " d_a=" + std::to_string(d.d_a));

  const json& eps = manifest.at("episodes");
  const std::size_t declared_count = manifest.at("episode_count").get<std::size_t>();
  if (eps.size() != declared_count)
    throw IoError("manifest episode_count " + std::to_string(declared_count) +
                  " but " + std::to_string(eps.size()) + " episode entries stored");

  std::size_t total = 0;
  std::vector<std::size_t> lengths;
  for (const auto& ep : eps) {
    lengths.push_back(ep.at("length").get<std::size_t>());
    total += lengths.back();
  }
  const std::size_t declared_total = manifest.at("total_samples").get<std::size_t>();
  if (total != declared_total)
    throw IoError("manifest total_samples " + std::to_string(declared_total) +
                  " but episode lengths sum to " + std::to_string(total));

  const auto ds = static_cast<std::size_t>(d.d_s);
  const auto da = static_cast<std::size_t>(d.d_a);
  const struct {
    const char* name;
    std::size_t per_sample;
  } fields[] = {{"s.f64", ds},
                {"a.f64", da},
                {"s_next.f64", ds},
                {"j_state.f64", ds * ds},
                {"j_action.f64", ds * da}};
  std::vector<std::string> blobs;
  for (const auto& f : fields) {
    blobs.push_back(read_file(dir / f.name));
    const std::size_t expect = total * f.per_sample * sizeof(double);
    if (blobs.back().size() != expect)
      throw IoError(std::string(f.name) + ": expected " + std::to_string(expect) +
                    " bytes for " + std::to_string(total) + " samples, found " +
                    std::to_string(blobs.back().size()));
  }

  const std::string declared_hash = manifest.at("creation_hash").get<std::string>();
  const std::string actual_hash =
      hash_hex({&blobs[0], &blobs[1], &blobs[2], &blobs[3], &blobs[4]});
  if (declared_hash != actual_hash)
    throw IoError("payload hash mismatch: manifest " + declared_hash + ", files " +
                  actual_hash);

  auto reader = [](const std::string& blob, std::size_t offset, double* dst,
                   std::size_t count) {
    std::memcpy(dst, blob.data() + offset * sizeof(double), count * sizeof(double));
  };

  std::size_t idx = 0;
  for (std::size_t e = 0; e < lengths.size(); ++e) {
    Episode ep;
    ep.truncated = eps[e].at("truncated").get<bool>();
    ep.samples.resize(lengths[e]);
    for (std::size_t t = 0; t < lengths[e]; ++t, ++idx) {
      Sample& s = ep.samples[t];
      s.t = static_cast<int>(t);
      s.s.resize(d.d_s);
      s.a.resize(d.d_a);
      s.s_next.resize(d.d_s);
      reader(blobs[0], idx * ds, s.s.data(), ds);
      reader(blobs[1], idx * da, s.a.data(), da);
      reader(blobs[2], idx * ds, s.s_next.data(), ds);
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> js(d.d_s,
                                                                                d.d_s);
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> ja(d.d_s,
                                                                                d.d_a);
      reader(blobs[3], idx * ds * ds, js.data(), ds * ds);
      reader(blobs[4], idx * ds * da, ja.data(), ds * da);
      s.j_state = js;
      s.j_action = ja;
    }
    d.episodes.push_back(std::move(ep));
  }
  return d;
}

}  // namespace dynasparse
