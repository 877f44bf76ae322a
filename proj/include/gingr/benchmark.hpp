#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gingr/config.hpp"
#include "gingr/errors.hpp"
#include "gingr/metrics.hpp"
#include "gingr/registration.hpp"
#include "gingr/synthetic.hpp"

namespace gingr {

/// One synthetic benchmark: a generator, the seeds it is run with and the
/// algorithms compared. An algorithm is a preset name; a "-P" suffix runs the
/// probabilistic variant and reports its MAP state.
struct BenchmarkSpec {
  SyntheticSpec generator;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> algorithms;
  std::map<std::string, Json> overrides; // per-algorithm config fragments
  std::uint64_t master_seed = 0;

  void validate() const {
    generator.validate();
    require(!seeds.empty(), ErrorKind::Config, "benchmark.seeds must not be empty");
    require(!algorithms.empty(), ErrorKind::Config, "benchmark.algorithms must not be empty");
  }
};

struct BenchmarkRun {
  std::string algorithm;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double mean_euclidean = 0.0; // target vertices to the registered surface
  double hausdorff = 0.0;
  double ground_truth_error = 0.0; // registered vertices to their true positions, observed part
  double wall_time = 0.0;
  int iterations = 0;
};

/// 64-bit mix used to derive independent per-run seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline BenchmarkSpec parse_benchmark_spec(const Json& doc) {
  using namespace config_detail;
  check_keys(doc, "", {"generator", "seeds", "algorithms", "overrides", "master_seed"});
  BenchmarkSpec spec;
  if (doc.contains("generator")) {
    const Json& g = doc.at("generator");
    const std::string w = "generator";
    check_keys(g, w,
               {"base", "level", "deformation", "beta", "rank", "noise", "partiality", "scale", "rotation_deg",
                "rotation_axis", "translation"});
    SyntheticSpec& s = spec.generator;
    s.base = text(g, w, "base", s.base);
    s.level = integer(g, w, "level", s.level);
    s.deformation = number(g, w, "deformation", s.deformation);
    s.beta = number(g, w, "beta", s.beta);
    s.rank = integer(g, w, "rank", s.rank);
    s.noise = number(g, w, "noise", s.noise);
    s.partiality = number(g, w, "partiality", s.partiality);
    if (!(s.partiality >= 0.0 && s.partiality < 1.0)) bad("generator.partiality", "must lie in [0, 1)");
    s.scale = number(g, w, "scale", s.scale);
    s.rotation_deg = number(g, w, "rotation_deg", s.rotation_deg);
    for (const char* key : {"rotation_axis", "translation"}) {
      if (!g.contains(key)) continue;
      const auto v = numbers(g, w, key, {});
      if (v.size() != 3) bad(join(w, key), "expected three numbers");
      (std::string(key) == "rotation_axis" ? s.rotation_axis : s.translation) = Eigen::Vector3d(v[0], v[1], v[2]);
    }
  }
  if (!doc.contains("seeds")) bad("seeds", "required");
  const Json& seeds = doc.at("seeds");
  if (!seeds.is_array() || seeds.empty()) bad("seeds", "expected a non-empty array of non-negative integers");
  for (const auto& s : seeds) {
    if (!s.is_number_integer() || s.get<long long>() < 0) bad("seeds", "expected non-negative integers");
    spec.seeds.push_back(s.get<std::uint64_t>());
  }
  if (!doc.contains("algorithms")) bad("algorithms", "required");
  const Json& algs = doc.at("algorithms");
  if (!algs.is_array() || algs.empty()) bad("algorithms", "expected a non-empty array of names");
  for (const auto& a : algs) {
    if (!a.is_string()) bad("algorithms", "expected strings");
    spec.algorithms.push_back(a.get<std::string>());
  }
  if (doc.contains("overrides")) {
    const Json& o = doc.at("overrides");
    if (!o.is_object()) bad("overrides", "expected an object keyed by algorithm");
    for (const auto& [name, fragment] : o.items()) {
      if (!fragment.is_object()) bad("overrides." + name, "expected an object");
      spec.overrides[name] = fragment;
    }
  }
  if (doc.contains("master_seed")) {
    const Json& m = doc.at("master_seed");
    if (!m.is_number_integer() || m.get<long long>() < 0) bad("master_seed", "expected a non-negative integer");
    spec.master_seed = m.get<std::uint64_t>();
  }
  spec.validate();
  return spec;
}

/// Registration config for a benchmark algorithm name.
inline RegistrationConfig benchmark_config(const BenchmarkSpec& spec, const std::string& algorithm) {
  std::string base = algorithm;
  const bool probabilistic = base.size() > 2 && base.compare(base.size() - 2, 2, "-P") == 0;
  if (probabilistic) base.resize(base.size() - 2);
  Json doc = {{"preset", base}};
  if (probabilistic) doc["mode"] = "probabilistic";
  if (const auto it = spec.overrides.find(algorithm); it != spec.overrides.end()) doc.merge_patch(it->second);
  RunConfig run;
  try {
    run = parse_run_config(doc);
  } catch (const Error& e) {
    fail(e.kind(), "algorithm '" + algorithm + "': " + e.message());
  }
  return run.registration;
}

inline BenchmarkRun run_benchmark_case(const BenchmarkSpec& spec, const std::string& algorithm, std::uint64_t seed,
                                       std::uint64_t stream_seed) {
  BenchmarkRun run;
  run.algorithm = algorithm;
  run.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    RegistrationConfig config = benchmark_config(spec, algorithm);
    config.seed = stream_seed;
    SyntheticSpec g = spec.generator;
    g.seed = seed;
    const SyntheticPair pair = make_synthetic(g);
    const LowRankGp gp = build_prior(config.prior, pair.reference);
    RegistrationResult result;
    if (config.mode == RegistrationMode::Probabilistic) {
      std::mt19937_64 rng(stream_seed);
      result = register_probabilistic(gp, TargetData(pair.target), config, rng).result;
    } else {
      result = register_deterministic(gp, pair.target, config);
    }
    run.iterations = static_cast<int>(result.trace.size());
    run.mean_euclidean = mean_surface_distance(pair.target, result.deformed);
    run.hausdorff = hausdorff(pair.target, result.deformed);
    std::vector<bool> observed(pair.target_index.size());
    for (std::size_t i = 0; i < observed.size(); ++i) observed[i] = pair.target_index[i] >= 0;
    run.ground_truth_error = mean_euclidean(result.deformed.points(), pair.ground_truth, observed);
    run.ok = true;
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  run.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

/// Runs every (seed, algorithm) pair on `threads` workers. Results come back
/// in seed-major order whatever the thread count.
inline std::vector<BenchmarkRun> run_benchmark(const BenchmarkSpec& spec, int threads = 1) {
  spec.validate();
  struct Job {
    std::string algorithm;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto seed : spec.seeds)
    for (const auto& a : spec.algorithms) jobs.push_back({a, seed});
  // configs are checked up front so a bad algorithm name is a config error
  for (const auto& a : spec.algorithms) (void)benchmark_config(spec, a);

  std::vector<BenchmarkRun> out(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++)
      out[k] = run_benchmark_case(spec, jobs[k].algorithm, jobs[k].seed, splitmix64(spec.master_seed + k));
  };
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return out;
}

}  // namespace gingr
