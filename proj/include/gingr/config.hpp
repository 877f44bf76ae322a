#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gingr/errors.hpp"
#include "gingr/geometry.hpp"
#include "gingr/registration.hpp"

namespace gingr {

using Json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;

/// A registration run as read from a JSON file: the expanded registration
/// configuration plus the files it works on.
struct RunConfig {
  RegistrationConfig registration;
  std::string reference_path;
  std::string target_path;
  std::string reference_landmarks_path;
  std::string target_landmarks_path;
  std::string output_dir = ".";
  std::vector<int> multires_levels;
  Json document; // the merged document after overrides
};

namespace config_detail {

[[noreturn]] inline void bad(const std::string& field, const std::string& what) {
  fail(ErrorKind::Config, field + ": " + what);
}

inline void check_keys(const Json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) bad(where.empty() ? "<root>" : where, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key)) bad(where.empty() ? key : where + "." + key, "unknown key");
  }
}

inline std::string join(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

inline double number(const Json& obj, const std::string& where, const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (v.is_string() && (v == "inf" || v == "infinity")) return std::numeric_limits<double>::infinity();
  if (!v.is_number()) bad(join(where, key), "expected a number");
  const double x = v.get<double>();
  if (std::isnan(x)) bad(join(where, key), "must not be NaN");
  return x;
}

inline int integer(const Json& obj, const std::string& where, const std::string& key, int fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_number_integer()) bad(join(where, key), "expected an integer");
  return v.get<int>();
}

inline bool boolean(const Json& obj, const std::string& where, const std::string& key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_boolean()) bad(join(where, key), "expected true or false");
  return v.get<bool>();
}

inline std::string text(const Json& obj, const std::string& where, const std::string& key, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_string()) bad(join(where, key), "expected a string");
  return v.get<std::string>();
}

template <class E>
E choice(const Json& obj, const std::string& where, const std::string& key, E fallback,
         const std::map<std::string, E>& options) {
  if (!obj.contains(key)) return fallback;
  const std::string s = text(obj, where, key, "");
  const auto it = options.find(s);
  if (it == options.end()) {
    std::string names;
    for (const auto& [name, value] : options) {
      (void)value;
      names += (names.empty() ? "" : ", ") + name;
    }
    bad(join(where, key), "unknown value '" + s + "' (expected one of " + names + ")");
  }
  return it->second;
}

inline std::vector<double> numbers(const Json& obj, const std::string& where, const std::string& key,
                                   std::vector<double> fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (v.is_number()) return {v.get<double>()};
  if (!v.is_array()) bad(join(where, key), "expected a number or an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) bad(join(where, key), "expected an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

inline void positive(double v, const std::string& field) {
  if (!(v > 0.0)) bad(field, "must be positive");
}

inline void parse_prior(const Json& j, RegistrationConfig& c) {
  const std::string w = "prior";
  check_keys(j, w, {"kernel", "beta", "gamma", "scale", "mirror_axis", "rank", "method", "nystrom_landmarks", "trend"});
  PriorSpec& p = c.prior;
  if (j.contains("kernel")) c.explicit_kernel = true;
  p.kernel = choice<KernelKind>(j, w, "kernel", p.kernel,
                                {{"gaussian", KernelKind::Gaussian},
                                 {"symmetric_gaussian", KernelKind::SymmetricGaussian},
                                 {"inverse_laplacian", KernelKind::InverseLaplacian},
                                 {"affine_laplacian", KernelKind::AffineLaplacian}});
  p.beta = number(j, w, "beta", p.beta);
  positive(p.beta, "prior.beta");
  p.gamma = number(j, w, "gamma", p.gamma);
  positive(p.gamma, "prior.gamma");
  p.scale = number(j, w, "scale", p.scale);
  positive(p.scale, "prior.scale");
  p.mirror_axis = choice<Axis>(j, w, "mirror_axis", p.mirror_axis, {{"x", Axis::X}, {"y", Axis::Y}, {"z", Axis::Z}});
  p.rank = integer(j, w, "rank", p.rank);
  if (p.rank < 1) bad("prior.rank", "must be at least 1");
  p.method = choice<LowRankMethod>(j, w, "method", p.method,
                                   {{"eig", LowRankMethod::DenseEig}, {"nystrom", LowRankMethod::Nystrom}});
  p.nystrom_landmarks = integer(j, w, "nystrom_landmarks", p.nystrom_landmarks);
  if (p.method == LowRankMethod::Nystrom && p.nystrom_landmarks < p.rank)
    bad("prior.nystrom_landmarks", "must be at least prior.rank");
  p.trend = choice<TrendBasis>(j, w, "trend", p.trend,
                               {{"none", TrendBasis::None},
                                {"translation", TrendBasis::Translation},
                                {"affine", TrendBasis::Affine}});
}

inline void parse_correspondence(const Json& j, RegistrationConfig& c) {
  const std::string w = "correspondence";
  check_keys(j, w, {"estimator", "outlier_weight", "lambda", "transform_source", "filters"});
  CorrespondenceSpec& s = c.correspondence;
  if (j.contains("estimator")) s.explicit_estimator = true;
  s.estimator = choice<EstimatorKind>(j, w, "estimator", s.estimator,
                                      {{"closest_point", EstimatorKind::ClosestPoint},
                                       {"cpd", EstimatorKind::Cpd},
                                       {"bcpd", EstimatorKind::Bcpd},
                                       {"icp_a_corrected", EstimatorKind::IcpACorrected},
                                       {"indexed", EstimatorKind::Indexed}});
  s.outlier_weight = number(j, w, "outlier_weight", s.outlier_weight);
  if (!(s.outlier_weight >= 0.0 && s.outlier_weight < 1.0)) bad("correspondence.outlier_weight", "must lie in [0, 1)");
  s.lambda = number(j, w, "lambda", s.lambda);
  positive(s.lambda, "correspondence.lambda");
  s.transform_source = choice<TransformSource>(
      j, w, "transform_source", s.transform_source,
      {{"local_shape", TransformSource::LocalShape}, {"reference", TransformSource::Reference}});
  if (j.contains("filters")) {
    const Json& f = j.at("filters");
    const std::string fw = "correspondence.filters";
    check_keys(f, fw, {"normal", "max_normal_angle_deg", "boundary", "self_intersection", "two_way", "two_way_factor"});
    FilterConfig& fc = s.filters;
    fc.normal = boolean(f, fw, "normal", fc.normal);
    fc.max_normal_angle_deg = number(f, fw, "max_normal_angle_deg", fc.max_normal_angle_deg);
    if (!(fc.max_normal_angle_deg > 0.0 && fc.max_normal_angle_deg <= 180.0))
      bad(fw + ".max_normal_angle_deg", "must lie in (0, 180]");
    fc.boundary = boolean(f, fw, "boundary", fc.boundary);
    fc.self_intersection = boolean(f, fw, "self_intersection", fc.self_intersection);
    fc.two_way = boolean(f, fw, "two_way", fc.two_way);
    fc.two_way_factor = number(f, fw, "two_way_factor", fc.two_way_factor);
    positive(fc.two_way_factor, fw + ".two_way_factor");
  }
}

inline void parse_schedule(const Json& j, RegistrationConfig& c) {
  const std::string w = "schedule";
  check_keys(j, w, {"kind", "values", "initial", "rate", "floor", "initial_variance"});
  const ScheduleKind kind = choice<ScheduleKind>(j, w, "kind", c.schedule.kind,
                                                 {{"fixed", ScheduleKind::FixedList},
                                                  {"geometric", ScheduleKind::Geometric},
                                                  {"cpd_residual", ScheduleKind::CpdResidual}});
  const SigmaSchedule& old = c.schedule;
  const bool same = kind == old.kind;
  switch (kind) {
    case ScheduleKind::FixedList: {
      const auto values = numbers(j, w, "values", same ? old.values : std::vector<double>{});
      if (values.empty()) bad("schedule.values", "fixed schedule needs at least one value");
      for (double v : values) positive(v, "schedule.values");
      c.schedule = SigmaSchedule::fixed_list(values);
      break;
    }
    case ScheduleKind::Geometric: {
      const double initial = number(j, w, "initial", same ? old.initial : 1.0);
      const double rate = number(j, w, "rate", same ? old.rate : 0.9);
      const double floor = number(j, w, "floor", same ? old.floor : 1e-4);
      positive(initial, "schedule.initial");
      if (!(rate > 0.0 && rate < 1.0)) bad("schedule.rate", "must lie in (0, 1)");
      positive(floor, "schedule.floor");
      c.schedule = SigmaSchedule::geometric(initial, rate, floor);
      break;
    }
    case ScheduleKind::CpdResidual: {
      const double initial = number(j, w, "initial", same ? old.initial : 0.0);
      const double floor = number(j, w, "floor", same ? old.floor : 1e-8);
      positive(floor, "schedule.floor");
      const InitialVariance start = choice<InitialVariance>(
          j, w, "initial_variance",
          same && old.start != InitialVariance::Given ? old.start : InitialVariance::AllPairs,
          {{"all_pairs", InitialVariance::AllPairs}, {"nearest_neighbour", InitialVariance::NearestNeighbour}});
      c.schedule = SigmaSchedule::cpd_residual(initial, floor, start);
      break;
    }
  }
}

inline void parse_probabilistic(const Json& j, RegistrationConfig& c) {
  const std::string w = "probabilistic";
  check_keys(j, w,
             {"n_samples", "informed_weight", "random_walk_weight", "likelihood_variance", "step_scales", "burn_in",
              "thinning", "proposal_sigma2", "warm_start", "warm_start_iterations", "random_walk"});
  ProbabilisticSpec& p = c.probabilistic;
  p.n_samples = integer(j, w, "n_samples", p.n_samples);
  if (p.n_samples < 1) bad("probabilistic.n_samples", "must be at least 1");
  p.informed_weight = number(j, w, "informed_weight", p.informed_weight);
  p.random_walk_weight = number(j, w, "random_walk_weight", p.random_walk_weight);
  if (p.informed_weight < 0.0) bad("probabilistic.informed_weight", "must be non-negative");
  if (p.random_walk_weight < 0.0) bad("probabilistic.random_walk_weight", "must be non-negative");
  if (std::abs(p.informed_weight + p.random_walk_weight - 1.0) > 1e-9)
    bad("probabilistic.informed_weight", "mixture weights must sum to 1");
  p.likelihood_variance = number(j, w, "likelihood_variance", p.likelihood_variance);
  positive(p.likelihood_variance, "probabilistic.likelihood_variance");
  p.step_scales = numbers(j, w, "step_scales", p.step_scales);
  if (p.step_scales.empty()) bad("probabilistic.step_scales", "must not be empty");
  for (double s : p.step_scales) positive(s, "probabilistic.step_scales");
  p.burn_in = integer(j, w, "burn_in", p.burn_in);
  if (p.burn_in < -1 || p.burn_in > p.n_samples) bad("probabilistic.burn_in", "must lie in [0, n_samples]");
  p.thinning = integer(j, w, "thinning", p.thinning);
  if (p.thinning < 1) bad("probabilistic.thinning", "must be at least 1");
  p.proposal_sigma2 = number(j, w, "proposal_sigma2", p.proposal_sigma2);
  p.warm_start = boolean(j, w, "warm_start", p.warm_start);
  p.warm_start_iterations = integer(j, w, "warm_start_iterations", p.warm_start_iterations);
  p.random_walk = choice<RandomWalk>(j, w, "random_walk", p.random_walk,
                                     {{"isotropic", RandomWalk::Isotropic}, {"preconditioned", RandomWalk::Preconditioned}});
}

inline void parse_convergence(const Json& j, RegistrationConfig& c) {
  const std::string w = "convergence";
  check_keys(j, w, {"max_iterations", "tolerance", "stopping"});
  c.max_iterations = integer(j, w, "max_iterations", c.max_iterations);
  if (c.max_iterations < 1) bad("convergence.max_iterations", "must be at least 1");
  c.tolerance = number(j, w, "tolerance", c.tolerance);
  positive(c.tolerance, "convergence.tolerance");
  c.stopping = choice<StoppingRule>(j, w, "stopping", c.stopping,
                                    {{"mean_displacement", StoppingRule::MeanDisplacement},
                                     {"target_distance", StoppingRule::TargetDistance}});
}

/// Parses "a.b.c=value". The value is read as JSON when possible and as a
/// plain string otherwise.
inline void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) bad("--set " + assignment, "expected key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::parse_error&) {
    value = raw;
  }
  Json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) bad("--set " + assignment, "empty key segment");
    parts.push_back(part);
  }
  for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
    Json& next = (*node)[parts[k]];
    if (next.is_null()) next = Json::object();
    if (!next.is_object()) bad(key, "'" + parts[k] + "' is not an object");
    node = &next;
  }
  (*node)[parts.back()] = value;
}

}  // namespace config_detail

/// Reads a landmark file: a JSON array of {"id", "point", "variance"}.
inline std::vector<Landmark> load_landmarks(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot read landmark file '" + path + "'");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::Format, "landmark file '" + path + "': " + e.what());
  }
  require(doc.is_array(), ErrorKind::Format, "landmark file '" + path + "' must hold an array");
  std::vector<Landmark> out;
  for (const auto& item : doc) {
    config_detail::check_keys(item, "landmark", {"id", "point", "variance"});
    Landmark lm;
    lm.id = config_detail::text(item, "landmark", "id", "");
    const auto p = config_detail::numbers(item, "landmark", "point", {});
    lm.point = Eigen::Map<const Vector>(p.data(), static_cast<Eigen::Index>(p.size()));
    lm.variance = config_detail::number(item, "landmark", "variance", 0.0);
    lm.validate();
    out.push_back(std::move(lm));
  }
  return out;
}

/// Turns a JSON document into a run configuration. The preset is expanded
/// first; every other key overrides part of it.
inline RunConfig parse_run_config(Json doc, const std::vector<std::string>& overrides = {}) {
  using namespace config_detail;
  for (const auto& o : overrides) apply_override(doc, o);
  check_keys(doc, "",
             {"schema_version", "preset", "reference", "target", "landmarks", "output_dir", "seed", "prior",
              "correspondence", "schedule", "mode", "probabilistic", "convergence", "damping", "rigid_correction",
              "rigid_with_scale", "initial_alignment", "multires_levels"});
  const int version = integer(doc, "", "schema_version", kConfigSchemaVersion);
  if (version != kConfigSchemaVersion)
    bad("schema_version", "unsupported version " + std::to_string(version) + " (expected " +
                              std::to_string(kConfigSchemaVersion) + ")");

  RunConfig run;
  run.document = doc;
  const std::string name = text(doc, "", "preset", "custom");
  try {
    run.registration = preset(name);
  } catch (const Error& e) {
    bad("preset", e.message());
  }
  RegistrationConfig& c = run.registration;

  run.reference_path = text(doc, "", "reference", "");
  run.target_path = text(doc, "", "target", "");
  run.output_dir = text(doc, "", "output_dir", run.output_dir);
  if (doc.contains("landmarks")) {
    const Json& l = doc.at("landmarks");
    check_keys(l, "landmarks", {"reference", "target"});
    run.reference_landmarks_path = text(l, "landmarks", "reference", "");
    run.target_landmarks_path = text(l, "landmarks", "target", "");
    if (run.reference_landmarks_path.empty() != run.target_landmarks_path.empty())
      bad("landmarks", "needs both a reference and a target file");
  }
  if (doc.contains("seed")) {
    const Json& s = doc.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0))
      bad("seed", "expected a non-negative integer");
    c.seed = s.get<std::uint64_t>();
  }
  if (doc.contains("prior")) parse_prior(doc.at("prior"), c);
  if (doc.contains("correspondence")) parse_correspondence(doc.at("correspondence"), c);
  if (doc.contains("schedule")) parse_schedule(doc.at("schedule"), c);
  c.mode = choice<RegistrationMode>(doc, "", "mode", c.mode,
                                    {{"deterministic", RegistrationMode::Deterministic},
                                     {"probabilistic", RegistrationMode::Probabilistic}});
  if (doc.contains("probabilistic")) parse_probabilistic(doc.at("probabilistic"), c);
  if (doc.contains("convergence")) parse_convergence(doc.at("convergence"), c);
  c.damping = number(doc, "", "damping", c.damping);
  if (!(c.damping > 0.0 && c.damping <= 1.0)) bad("damping", "must lie in (0, 1]");
  c.rigid_correction = boolean(doc, "", "rigid_correction", c.rigid_correction);
  c.rigid_with_scale = boolean(doc, "", "rigid_with_scale", c.rigid_with_scale);
  c.initial_alignment = choice<InitialAlignment>(doc, "", "initial_alignment", c.initial_alignment,
                                                 {{"none", InitialAlignment::None}, {"moments", InitialAlignment::Moments}});
  if (doc.contains("multires_levels")) {
    const Json& l = doc.at("multires_levels");
    if (!l.is_array() || l.empty()) bad("multires_levels", "expected a non-empty array of vertex counts");
    for (const auto& v : l) {
      if (!v.is_number_integer() || v.get<int>() < 1) bad("multires_levels", "expected positive integers");
      run.multires_levels.push_back(v.get<int>());
    }
    for (std::size_t k = 1; k < run.multires_levels.size(); ++k)
      if (run.multires_levels[k] <= run.multires_levels[k - 1]) bad("multires_levels", "must be ascending");
  }
  c.validate();
  return run;
}

inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot read config '" + path + "'");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::Config, "config '" + path + "' is not valid JSON: " + e.what());
  }
  RunConfig run = parse_run_config(std::move(doc), overrides);
  // input paths are relative to the config file
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  for (std::string* p : {&run.reference_path, &run.target_path, &run.reference_landmarks_path, &run.target_landmarks_path})
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  return run;
}

}  // namespace gingr
