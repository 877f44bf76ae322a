// gingr: command-line front end for registration, prior sampling, kernel
// maps, synthetic data and the benchmark harness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gingr/benchmark.hpp"
#include "gingr/config.hpp"
#include "gingr/gp_io.hpp"
#include "gingr/mesh_io.hpp"
#include "gingr/metrics.hpp"
#include "gingr/registration.hpp"
#include "gingr/synthetic.hpp"

namespace fs = std::filesystem;
using namespace gingr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Globals {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out;
};

std::string fmt(double v) { return std::isfinite(v) || std::isinf(v) ? detail::format_double(v) : ""; }

fs::path output_dir(const Globals& g, const std::string& fallback) {
  fs::path dir = g.out.empty() ? fs::path(fallback) : fs::path(g.out);
  if (dir.empty()) dir = ".";
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::Io, "cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::Io, "cannot write '" + path.string() + "'");
  return out;
}

void write_trace(const fs::path& path, const std::vector<TraceEntry>& trace) {
  auto out = open_out(path);
  out << "iteration,sigma2,mean_dist,max_dist,log_posterior,accepted\n";
  for (const auto& t : trace) {
    out << t.iteration << "," << fmt(t.sigma2) << "," << fmt(t.mean_dist) << "," << fmt(t.max_dist) << ","
        << (std::isnan(t.log_posterior) ? "" : fmt(t.log_posterior)) << ","
        << (t.accepted < 0 ? "" : std::to_string(t.accepted)) << "\n";
  }
}

void write_chain(const fs::path& path, const PosteriorChain& chain) {
  auto out = open_out(path);
  out << "sample,log_posterior";
  const Eigen::Index r = chain.samples.empty() ? chain.map.alpha.size() : chain.samples.front().alpha.size();
  for (Eigen::Index k = 0; k < r; ++k) out << ",alpha_" << k;
  out << "\n";
  for (std::size_t s = 0; s < chain.samples.size(); ++s) {
    out << s << "," << fmt(chain.samples[s].log_posterior);
    for (Eigen::Index k = 0; k < r; ++k) out << "," << fmt(chain.samples[s].alpha(k));
    out << "\n";
  }
}

Json transform_json(const SimilarityTransform& t) {
  Json rot = Json::array();
  for (Eigen::Index i = 0; i < t.rotation.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < t.rotation.cols(); ++j) row.push_back(t.rotation(i, j));
    rot.push_back(row);
  }
  Json tr = Json::array();
  for (Eigen::Index i = 0; i < t.translation.size(); ++i) tr.push_back(t.translation(i));
  return {{"scale", t.scale}, {"rotation", rot}, {"translation", tr}};
}

void write_json(const fs::path& path, const Json& doc) {
  auto out = open_out(path);
  out << doc.dump(2) << "\n";
}

TriangleMesh load_input(const std::string& path, const std::string& field) {
  require(!path.empty(), ErrorKind::Config, field + ": path required");
  return load_geometry(path);
}

// ---------------------------------------------------------------------------

int cmd_register(const Globals& g, const std::string& config_path, const std::vector<std::string>& sets,
                 const std::string& model_out) {
  RunConfig run = load_run_config(config_path, sets);
  RegistrationConfig& config = run.registration;
  if (g.seed) config.seed = *g.seed;
  const TriangleMesh reference = load_input(run.reference_path, "reference");
  const TriangleMesh target = load_input(run.target_path, "target");
  if (!run.reference_landmarks_path.empty()) {
    config.reference_landmarks = load_landmarks(run.reference_landmarks_path);
    config.target_landmarks = load_landmarks(run.target_landmarks_path);
  }
  const fs::path dir = output_dir(g, run.output_dir);

  const LowRankGp gp = build_prior(config.prior, reference);
  if (!model_out.empty()) save_model(gp, model_out);
  Json summary = {{"preset", config.preset}, {"rank", gp.rank()}, {"rank_reduced", gp.rank_reduced}};

  RegistrationResult result;
  if (config.mode == RegistrationMode::Probabilistic) {
    std::mt19937_64 rng(config.seed);
    ProbabilisticResult pr = register_probabilistic(gp, TargetData(target), config, rng);
    result = std::move(pr.result);
    write_chain(dir / "chain.csv", pr.chain);
    summary["acceptance_rate"] = pr.chain.acceptance_rate();
    summary["burn_in"] = pr.chain.burn_in;
    summary["thinning"] = pr.chain.thinning;
    summary["retained_samples"] = pr.chain.samples.size();
    summary["map_log_posterior"] = pr.chain.map.log_posterior;
    if (!pr.chain.samples.empty()) {
      const Vector var = posterior_uncertainty(pr.chain, gp);
      save_geometry(result.deformed, (dir / "uncertainty.ply").string(), GeometryFormat::Ply,
                    {{"posterior_var", var}, {"posterior_std", var.cwiseSqrt()}});
    } else {
      result.warnings.push_back("retained chain is empty; no uncertainty output");
    }
  } else if (!run.multires_levels.empty()) {
    result = register_multires(gp, target, config, run.multires_levels);
  } else {
    result = register_deterministic(gp, target, config);
  }

  save_geometry(result.deformed, (dir / "registered.ply").string(), GeometryFormat::Ply);
  write_trace(dir / "trace.csv", result.trace);
  summary["converged"] = result.converged;
  summary["iterations"] = result.trace.size();
  summary["transform"] = transform_json(result.state.transform);
  summary["mean_surface_distance"] = mean_surface_distance(target, result.deformed);
  summary["warnings"] = result.warnings;
  write_json(dir / "summary.json", summary);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  return kExitOk;
}

int cmd_sample_prior(const Globals& g, const std::string& config_path, const std::vector<std::string>& sets, int count,
                     bool zero) {
  require(count >= 1, ErrorKind::Config, "count: must be at least 1");
  RunConfig run = load_run_config(config_path, sets);
  const RegistrationConfig& config = run.registration;
  const TriangleMesh reference = load_input(run.reference_path, "reference");
  const LowRankGp gp = build_prior(config.prior, reference);
  const fs::path dir = output_dir(g, run.output_dir);
  std::mt19937_64 rng(g.seed.value_or(config.seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  const int width = std::max(3, static_cast<int>(std::to_string(count - 1).size()));
  for (int s = 0; s < count; ++s) {
    Vector alpha = Vector::Zero(gp.rank());
    if (!zero)
      for (Eigen::Index k = 0; k < alpha.size(); ++k) alpha(k) = normal(rng);
    const TriangleMesh shape = reference.with_points(reference.points() + instance(gp, alpha));
    std::string index = std::to_string(s);
    index.insert(0, static_cast<std::size_t>(width) - std::min<std::size_t>(index.size(), width), '0');
    save_geometry(shape, (dir / ("sample_" + index + ".ply")).string(), GeometryFormat::Ply);
  }
  return kExitOk;
}

int cmd_kernel_map(const Globals& g, const std::string& config_path, const std::vector<std::string>& sets,
                   const std::string& landmark_id, int vertex) {
  RunConfig run = load_run_config(config_path, sets);
  const RegistrationConfig& config = run.registration;
  const TriangleMesh reference = load_input(run.reference_path, "reference");
  int index = vertex;
  if (!landmark_id.empty()) {
    require(!run.reference_landmarks_path.empty(), ErrorKind::Config,
            "landmark '" + landmark_id + "': config has no reference landmark file");
    const auto lms = load_landmarks(run.reference_landmarks_path);
    const auto it = std::find_if(lms.begin(), lms.end(), [&](const Landmark& l) { return l.id == landmark_id; });
    require(it != lms.end(), ErrorKind::Config, "landmark '" + landmark_id + "' is not in the reference landmark file");
    require(it->point.size() == reference.dim(), ErrorKind::Config,
            "landmark '" + landmark_id + "' has the wrong dimension");
    index = KdTree(reference.points()).nearest(it->point).index;
  }
  require(index >= 0 && index < reference.size(), ErrorKind::Config,
          "vertex: " + std::to_string(index) + " is not a reference vertex");

  const Kernel k = make_kernel(config.prior, reference);
  const Sites sites = Sites::reference(reference.points());
  Vector value(reference.size());
  for (int i = 0; i < reference.size(); ++i) value(i) = k(sites, index, sites, i).norm();
  const double self = value(index);
  require(self > 0.0, ErrorKind::Numerical, "kernel vanishes at the landmark vertex");
  value /= self;
  const fs::path dir = output_dir(g, run.output_dir);
  save_geometry(reference, (dir / "kernel_map.ply").string(), GeometryFormat::Ply, {{"correlation", value}});
  return kExitOk;
}

int cmd_benchmark(const Globals& g, const std::string& spec_path) {
  std::ifstream in(spec_path);
  require(in.good(), ErrorKind::Io, "cannot read benchmark spec '" + spec_path + "'");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::Config, "benchmark spec is not valid JSON: " + std::string(e.what()));
  }
  BenchmarkSpec spec = parse_benchmark_spec(doc);
  if (g.seed) spec.master_seed = *g.seed;
  const auto runs = run_benchmark(spec, g.threads);
  const fs::path dir = output_dir(g, ".");

  auto out = open_out(dir / "runs.csv");
  out << "algorithm,seed,status,mean_euclidean,hausdorff,ground_truth_error,iterations,wall_time_s,error\n";
  bool any_failed = false;
  for (const auto& r : runs) {
    any_failed |= !r.ok;
    std::string err = r.error;
    for (char& c : err)
      if (c == ',' || c == '\n') c = ';';
    out << r.algorithm << "," << r.seed << "," << (r.ok ? "ok" : "failed") << "," << (r.ok ? fmt(r.mean_euclidean) : "")
        << "," << (r.ok ? fmt(r.hausdorff) : "") << "," << (r.ok ? fmt(r.ground_truth_error) : "") << ","
        << r.iterations << "," << fmt(r.wall_time) << "," << err << "\n";
  }

  auto agg = open_out(dir / "summary.csv");
  agg << "algorithm,runs,failed,mean_euclidean,hausdorff,ground_truth_error,iterations,wall_time_s\n";
  for (const auto& a : spec.algorithms) {
    int n = 0, failed = 0;
    double me = 0, hd = 0, gt = 0, it = 0, wt = 0;
    for (const auto& r : runs) {
      if (r.algorithm != a) continue;
      if (!r.ok) {
        ++failed;
        continue;
      }
      ++n;
      me += r.mean_euclidean;
      hd += r.hausdorff;
      gt += r.ground_truth_error;
      it += r.iterations;
      wt += r.wall_time;
    }
    const double k = std::max(n, 1);
    agg << a << "," << n + failed << "," << failed << "," << fmt(me / k) << "," << fmt(hd / k) << "," << fmt(gt / k)
        << "," << fmt(it / k) << "," << fmt(wt / k) << "\n";
  }
  for (const auto& r : runs)
    if (!r.ok) std::cerr << "run " << r.algorithm << " seed " << r.seed << " failed: " << r.error << "\n";
  return any_failed ? 1 : kExitOk;
}

int cmd_make_synthetic(const Globals& g, SyntheticSpec spec, const std::vector<double>& axis,
                       const std::vector<double>& translation) {
  require(axis.size() == 3, ErrorKind::Config, "axis: expected three numbers");
  require(translation.size() == 3, ErrorKind::Config, "translation: expected three numbers");
  spec.rotation_axis = Eigen::Vector3d(axis[0], axis[1], axis[2]);
  spec.translation = Eigen::Vector3d(translation[0], translation[1], translation[2]);
  spec.seed = g.seed.value_or(0);
  const SyntheticPair pair = make_synthetic(spec);
  const fs::path dir = output_dir(g, ".");
  save_geometry(pair.reference, (dir / "reference.ply").string(), GeometryFormat::Ply);
  save_geometry(pair.target, (dir / "target.ply").string(), GeometryFormat::Ply);
  auto out = open_out(dir / "ground_truth.csv");
  out << "reference_index,target_index,x,y,z\n";
  for (int i = 0; i < pair.reference.size(); ++i) {
    out << i << "," << pair.target_index[static_cast<std::size_t>(i)];
    for (int c = 0; c < 3; ++c) out << "," << fmt(pair.ground_truth(i, c));
    out << "\n";
  }
  write_json(dir / "transform.json", transform_json(pair.transform));
  return kExitOk;
}

int exit_code_for(const Error& e) { return e.is_numerical() ? kExitNumerical : kExitConfig; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gingr: Gaussian process morphable model registration"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "master seed for every stochastic step");
  app.add_option("--threads", g.threads, "worker threads (benchmark)")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output directory (overrides the config)");

  std::string config_path, model_out, landmark_id, spec_path;
  std::vector<std::string> sets;
  int count = 1, vertex = -1;
  bool zero = false;

  auto* reg = app.add_subcommand("register", "register a reference to a target");
  reg->add_option("config", config_path, "run config (JSON)")->required();
  reg->add_option("--set", sets, "override a config value, e.g. --set prior.beta=0.3");
  reg->add_option("--save-model", model_out, "write the low-rank prior to this file");

  auto* sp = app.add_subcommand("sample-prior", "write shapes sampled from the prior");
  sp->add_option("config", config_path, "run config (JSON)")->required();
  sp->add_option("--set", sets, "override a config value");
  sp->add_option("--count", count, "number of samples");
  sp->add_flag("--zero-alpha", zero, "use alpha = 0 (reference plus mean)");

  auto* km = app.add_subcommand("kernel-map", "write the correlation of every vertex to one landmark");
  km->add_option("config", config_path, "run config (JSON)")->required();
  km->add_option("--set", sets, "override a config value");
  auto* lm_opt = km->add_option("--landmark", landmark_id, "landmark id from the reference landmark file");
  km->add_option("--vertex", vertex, "reference vertex index")->excludes(lm_opt);

  auto* bm = app.add_subcommand("benchmark", "run the synthetic benchmark harness");
  bm->add_option("spec", spec_path, "benchmark spec (JSON)")->required();

  SyntheticSpec synth;
  std::vector<double> axis{0.0, 0.0, 1.0}, translation{0.0, 0.0, 0.0};
  auto* ms = app.add_subcommand("make-synthetic", "generate a synthetic reference/target pair");
  ms->add_option("--base", synth.base, "sphere or femur_proxy");
  ms->add_option("--level", synth.level, "subdivision level");
  ms->add_option("--deformation", synth.deformation, "std of the smooth deformation");
  ms->add_option("--beta", synth.beta, "length scale of the deformation");
  ms->add_option("--rank", synth.rank, "rank of the deformation model");
  ms->add_option("--noise", synth.noise, "per-coordinate noise std");
  ms->add_option("--partiality", synth.partiality, "fraction of target vertices cropped");
  ms->add_option("--scale", synth.scale, "similarity scale");
  ms->add_option("--rotation-deg", synth.rotation_deg, "rotation angle in degrees");
  ms->add_option("--axis", axis, "rotation axis (3 numbers)")->expected(3);
  ms->add_option("--translation", translation, "translation (3 numbers)")->expected(3);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (reg->parsed()) return cmd_register(g, config_path, sets, model_out);
    if (sp->parsed()) return cmd_sample_prior(g, config_path, sets, count, zero);
    if (km->parsed()) {
      require(!landmark_id.empty() || vertex >= 0, ErrorKind::Config, "kernel-map needs --landmark or --vertex");
      return cmd_kernel_map(g, config_path, sets, landmark_id, vertex);
    }
    if (bm->parsed()) return cmd_benchmark(g, spec_path);
    if (ms->parsed()) return cmd_make_synthetic(g, synth, axis, translation);
  } catch (const Error& e) {
    std::cerr << "gingr: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "gingr: internal error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
