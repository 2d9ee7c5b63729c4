#pragma once

// Experiment configuration: one JSON document resolved on top of a preset.
// Unknown keys are rejected so typos surface as configuration errors.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcedip/cs_recon.hpp"
#include "dcedip/dip.hpp"
#include "dcedip/kspace.hpp"
#include "dcedip/latent.hpp"
#include "dcedip/phantom.hpp"
#include "dcedip/tkfit.hpp"

namespace dcedip {

struct Method {
  enum class Kind { inufft, cs, dip } kind = Kind::inufft;
  double lambda = 0.0;

  std::string name() const;
};

inline std::string format_lambda(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << v;
  return os.str();
}

inline std::string Method::name() const {
  switch (kind) {
    case Kind::inufft: return "inufft";
    case Kind::cs: return "cs:" + format_lambda(lambda);
    case Kind::dip: return "dip";
  }
  return "";
}

inline Method parse_method(const std::string& s) {
  if (s == "inufft") return {};
  if (s == "dip") return {Method::Kind::dip, 0.0};
  if (s.rfind("cs:", 0) == 0) {
    std::size_t used = 0;
    double lam = 0.0;
    try {
      lam = std::stod(s.substr(3), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() - 3 || !(lam >= 0.0)) throw ConfigError("method '" + s + "': bad lambda");
    return {Method::Kind::cs, lam};
  }
  throw ConfigError("method '" + s + "': expected inufft, cs:<lambda> or dip");
}

/// Synthetic cohort for the DP-vs-CS agreement analysis: kidney F_T of every compartment is
/// scaled by a factor drawn log-uniformly from [ft_min, ft_max] per phantom.
struct CohortConfig {
  int size = 0;
  int n = 32;
  double ft_min = 0.5;
  double ft_max = 2.0;
  std::uint64_t seed = 77;
  double cs_lambda = 0.0125;
};

struct ExperimentConfig {
  std::string preset = "desk";
  PhantomSpec phantom = default_phantom_spec(64);
  AcquisitionParams acquisition;
  std::vector<Method> methods;
  CSConfig cs;
  LatentOptions latent;
  NetSpec net = NetSpec::desk(64);
  TrainConfig train;
  FitOptions fit;
  TKParams fit_init{0.03, 5.0, 0.005, 100.0};
  CohortConfig cohort;
  std::string output_dir = "out";
};

inline std::vector<Method> default_methods() {
  std::vector<Method> m{{Method::Kind::inufft, 0.0}};
  for (double lam : {0.00125, 0.0125, 0.125, 1.25}) m.push_back({Method::Kind::cs, lam});
  m.push_back({Method::Kind::dip, 0.0});
  return m;
}

/// Desk scale: n=64, 13 spokes/frame, batch 8. Paper scale: n=224, 34 spokes/frame, batch 16, full network.
inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  c.methods = default_methods();
  c.train.optimizer = Optimizer::adam;
  c.train.lr = 1e-3;
  c.train.schedule = LrSchedule::cosine;
  c.train.density_weighted = true;
  c.train.min_epochs = 1200;
  c.train.max_epochs = 1500;
  if (name == "desk") return c;
  if (name == "paper-scale") {
    c.phantom = default_phantom_spec(224);
    c.acquisition.spokes_per_frame = 34;
    c.acquisition.coils = 8;
    c.net = NetSpec::paper_scale();
    c.train.batch = 16;
    c.train.lr = 1e-4;
    c.train.min_epochs = 3000;
    c.train.max_epochs = 4000;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper-scale)");
}

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <class T>
void take(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline TKParams tk_from_json(const json& j, TKParams tk, const std::string& where) {
  reject_unknown(j, where, {"fp", "tp", "ft", "tt"});
  take(j, "fp", tk.fp, where);
  take(j, "tp", tk.tp, where);
  take(j, "ft", tk.ft, where);
  take(j, "tt", tk.tt, where);
  return tk;
}

inline json tk_to_json(const TKParams& tk) { return {{"fp", tk.fp}, {"tp", tk.tp}, {"ft", tk.ft}, {"tt", tk.tt}}; }

}  // namespace detail

namespace detail {

inline ExperimentConfig resolve_config(const nlohmann::json& j, const std::string& preset_override) {
  reject_unknown(j, "config", {"preset", "phantom", "acquisition", "methods", "cs", "latent", "net", "train",
                                       "tkfit", "cohort", "output_dir"});
  std::string preset = "desk";
  take(j, "preset", preset, "config");
  if (!preset_override.empty()) preset = preset_override;
  ExperimentConfig c = preset_config(preset);
  take(j, "output_dir", c.output_dir, "config");

  if (j.contains("phantom")) {
    const auto& p = j["phantom"];
    reject_unknown(p, "phantom", {"n", "frames", "dt", "injection_delay", "region_edge", "tk"});
    int n = c.phantom.n;
    take(p, "n", n, "phantom");
    if (n != c.phantom.n) {
      if (n < 8) throw ConfigError("phantom.n: must be at least 8");
      const auto keep = c.phantom;
      c.phantom = default_phantom_spec(n);
      c.phantom.frames = keep.frames;
      c.phantom.dt = keep.dt;
      c.phantom.injection_delay = keep.injection_delay;
      c.net = c.preset == "paper-scale" ? NetSpec::paper_scale() : NetSpec::desk(n);
    }
    take(p, "frames", c.phantom.frames, "phantom");
    take(p, "dt", c.phantom.dt, "phantom");
    take(p, "injection_delay", c.phantom.injection_delay, "phantom");
    take(p, "region_edge", c.phantom.region_edge, "phantom");
    if (p.contains("tk")) {
      for (const auto& [name, v] : p["tk"].items()) {
        bool found = false;
        for (auto& r : c.phantom.regions)
          if (r.name == name && r.role == RegionRole::tissue) {
            r.tk = tk_from_json(v, r.tk, "phantom.tk." + name);
            found = true;
          }
        if (!found) throw ConfigError("phantom.tk: no tissue region named '" + name + "'");
      }
    }
  }
  if (j.contains("acquisition")) {
    const auto& a = j["acquisition"];
    reject_unknown(a, "acquisition", {"coils", "spokes_per_frame", "readout_oversampling", "noise_sigma",
                                              "coil_seed", "noise_seed"});
    take(a, "coils", c.acquisition.coils, "acquisition");
    take(a, "spokes_per_frame", c.acquisition.spokes_per_frame, "acquisition");
    take(a, "readout_oversampling", c.acquisition.readout_oversampling, "acquisition");
    take(a, "noise_sigma", c.acquisition.noise_sigma, "acquisition");
    take(a, "coil_seed", c.acquisition.coil_seed, "acquisition");
    take(a, "noise_seed", c.acquisition.noise_seed, "acquisition");
  }
  if (j.contains("methods")) {
    if (!j["methods"].is_array()) throw ConfigError("methods: expected a list");
    c.methods.clear();
    for (const auto& m : j["methods"]) {
      if (!m.is_string()) throw ConfigError("methods: entries must be strings");
      c.methods.push_back(parse_method(m.get<std::string>()));
    }
  }
  if (j.contains("cs")) {
    const auto& s = j["cs"];
    reject_unknown(s, "cs", {"n_iters", "eps_factor", "update", "density_weighted"});
    take(s, "n_iters", c.cs.n_iters, "cs");
    take(s, "eps_factor", c.cs.eps_factor, "cs");
    take(s, "density_weighted", c.cs.density_weighted, "cs");
    if (s.contains("update")) {
      const auto u = s["update"].get<std::string>();
      if (u == "fletcher-reeves") c.cs.update = CGUpdate::fletcher_reeves;
      else if (u == "polak-ribiere-plus") c.cs.update = CGUpdate::polak_ribiere_plus;
      else throw ConfigError("cs.update: expected fletcher-reeves or polak-ribiere-plus");
    }
  }
  if (j.contains("latent")) {
    const auto& l = j["latent"];
    reject_unknown(l, "latent", {"m", "length", "components", "seed"});
    take(l, "m", c.latent.m, "latent");
    take(l, "length", c.latent.length, "latent");
    take(l, "components", c.latent.components, "latent");
    take(l, "seed", c.latent.seed, "latent");
  }
  if (j.contains("net")) {
    const auto& s = j["net"];
    reject_unknown(s, "net", {"fc_hidden", "base", "channels", "stage_blocks", "upsample", "norm",
                                      "leaky_slope", "init_seed"});
    take(s, "fc_hidden", c.net.fc_hidden, "net");
    take(s, "base", c.net.base, "net");
    take(s, "channels", c.net.channels, "net");
    take(s, "stage_blocks", c.net.stage_blocks, "net");
    take(s, "leaky_slope", c.net.leaky_slope, "net");
    take(s, "init_seed", c.net.init_seed, "net");
    if (s.contains("upsample")) {
      const auto u = s["upsample"].get<std::string>();
      if (u == "bilinear") c.net.upsample = Upsampling::bilinear;
      else if (u == "nearest") c.net.upsample = Upsampling::nearest;
      else throw ConfigError("net.upsample: expected bilinear or nearest");
    }
    if (s.contains("norm")) {
      const auto u = s["norm"].get<std::string>();
      if (u == "instance") c.net.norm = Normalization::instance;
      else if (u == "none") c.net.norm = Normalization::none;
      else throw ConfigError("net.norm: expected instance or none");
    }
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    reject_unknown(t, "train", {"batch", "lr", "max_epochs", "min_epochs", "stop_tol", "optimizer",
                                        "shuffle_seed", "density_weighted", "checkpoint_every",
                                        "schedule", "lr_min_ratio"});
    take(t, "batch", c.train.batch, "train");
    take(t, "lr", c.train.lr, "train");
    take(t, "max_epochs", c.train.max_epochs, "train");
    take(t, "min_epochs", c.train.min_epochs, "train");
    take(t, "stop_tol", c.train.stop_tol, "train");
    take(t, "shuffle_seed", c.train.shuffle_seed, "train");
    take(t, "density_weighted", c.train.density_weighted, "train");
    take(t, "checkpoint_every", c.train.checkpoint_every, "train");
    if (t.contains("optimizer")) {
      const auto u = t["optimizer"].get<std::string>();
      if (u == "gd") c.train.optimizer = Optimizer::gd;
      else if (u == "adam") c.train.optimizer = Optimizer::adam;
      else throw ConfigError("train.optimizer: expected gd or adam");
    }
    take(t, "lr_min_ratio", c.train.lr_min_ratio, "train");
    if (t.contains("schedule")) {
      const auto u = t["schedule"].get<std::string>();
      if (u == "constant") c.train.schedule = LrSchedule::constant;
      else if (u == "cosine") c.train.schedule = LrSchedule::cosine;
      else throw ConfigError("train.schedule: expected constant or cosine");
    }
  }
  if (j.contains("tkfit")) {
    const auto& f = j["tkfit"];
    reject_unknown(f, "tkfit", {"starts", "max_iters", "init", "lower", "upper", "voxel_volume_ml"});
    take(f, "starts", c.fit.starts, "tkfit");
    take(f, "max_iters", c.fit.max_iters, "tkfit");
    take(f, "voxel_volume_ml", c.fit.voxel_volume_ml, "tkfit");
    if (f.contains("init")) c.fit_init = tk_from_json(f["init"], c.fit_init, "tkfit.init");
    if (f.contains("lower")) c.fit.bounds.lower = tk_from_json(f["lower"], c.fit.bounds.lower, "tkfit.lower");
    if (f.contains("upper")) c.fit.bounds.upper = tk_from_json(f["upper"], c.fit.bounds.upper, "tkfit.upper");
  }
  if (j.contains("cohort")) {
    const auto& h = j["cohort"];
    reject_unknown(h, "cohort", {"size", "n", "ft_min", "ft_max", "seed", "cs_lambda"});
    take(h, "size", c.cohort.size, "cohort");
    take(h, "n", c.cohort.n, "cohort");
    take(h, "ft_min", c.cohort.ft_min, "cohort");
    take(h, "ft_max", c.cohort.ft_max, "cohort");
    take(h, "seed", c.cohort.seed, "cohort");
    take(h, "cs_lambda", c.cohort.cs_lambda, "cohort");
  }
  c.net.m = c.latent.m;

  // Cross-field checks, reported as configuration errors.
  try {
    validate(c.phantom);
    validate(c.net);
    validate(c.train, c.phantom.frames);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.methods.empty()) throw ConfigError("methods: list must not be empty");
  if (c.net.output_size() != c.phantom.n)
    throw ConfigError("net: output size " + std::to_string(c.net.output_size()) + " differs from phantom.n " +
                      std::to_string(c.phantom.n));
  if (c.acquisition.coils < 1 || c.acquisition.spokes_per_frame < 1 || c.acquisition.readout_oversampling < 1)
    throw ConfigError("acquisition: coils, spokes and oversampling must be positive");
  if (c.cs.n_iters < 1) throw ConfigError("cs.n_iters: must be positive");
  if (c.phantom.frames < 2 * c.latent.phases) throw ConfigError("phantom.frames: need at least 10 frames");
  if (c.cohort.size < 0 || (c.cohort.size > 0 && c.cohort.size < 3)) throw ConfigError("cohort.size: 0 or >= 3");
  if (!(c.cohort.ft_min > 0.0 && c.cohort.ft_max >= c.cohort.ft_min)) throw ConfigError("cohort: bad F_T range");
  return c;
}

}  // namespace detail

/// Resolve a JSON document on top of its preset ("preset" key, default desk).
inline ExperimentConfig config_from_json(const nlohmann::json& j, const std::string& preset_override = "") {
  try {
    return detail::resolve_config(j, preset_override);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

/// Canonical resolved form; its hash identifies a run.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["preset"] = c.preset;
  j["output_dir"] = c.output_dir;
  nlohmann::json tk = nlohmann::json::object();
  for (const auto& r : c.phantom.regions)
    if (r.role == RegionRole::tissue) tk[r.name] = detail::tk_to_json(r.tk);
  j["phantom"] = {{"n", c.phantom.n},
                  {"frames", c.phantom.frames},
                  {"dt", c.phantom.dt},
                  {"injection_delay", c.phantom.injection_delay},
                  {"region_edge", c.phantom.region_edge},
                  {"tk", tk}};
  j["acquisition"] = {{"coils", c.acquisition.coils},
                      {"spokes_per_frame", c.acquisition.spokes_per_frame},
                      {"readout_oversampling", c.acquisition.readout_oversampling},
                      {"noise_sigma", c.acquisition.noise_sigma},
                      {"coil_seed", c.acquisition.coil_seed},
                      {"noise_seed", c.acquisition.noise_seed}};
  std::vector<std::string> methods;
  for (const auto& m : c.methods) methods.push_back(m.name());
  j["methods"] = methods;
  j["cs"] = {{"n_iters", c.cs.n_iters},
             {"eps_factor", c.cs.eps_factor},
             {"update", c.cs.update == CGUpdate::fletcher_reeves ? "fletcher-reeves" : "polak-ribiere-plus"},
             {"density_weighted", c.cs.density_weighted}};
  j["latent"] = {{"m", c.latent.m}, {"length", c.latent.length}, {"components", c.latent.components},
                 {"seed", c.latent.seed}};
  j["net"] = {{"fc_hidden", c.net.fc_hidden},
              {"base", c.net.base},
              {"channels", c.net.channels},
              {"stage_blocks", c.net.stage_blocks},
              {"upsample", c.net.upsample == Upsampling::bilinear ? "bilinear" : "nearest"},
              {"norm", c.net.norm == Normalization::instance ? "instance" : "none"},
              {"leaky_slope", c.net.leaky_slope},
              {"init_seed", c.net.init_seed}};
  j["train"] = {{"batch", c.train.batch},
                {"lr", c.train.lr},
                {"max_epochs", c.train.max_epochs},
                {"min_epochs", c.train.min_epochs},
                {"stop_tol", c.train.stop_tol},
                {"optimizer", c.train.optimizer == Optimizer::gd ? "gd" : "adam"},
                {"shuffle_seed", c.train.shuffle_seed},
                {"density_weighted", c.train.density_weighted},
                {"checkpoint_every", c.train.checkpoint_every},
                {"schedule", c.train.schedule == LrSchedule::cosine ? "cosine" : "constant"},
                {"lr_min_ratio", c.train.lr_min_ratio}};
  j["tkfit"] = {{"starts", c.fit.starts},
                {"max_iters", c.fit.max_iters},
                {"voxel_volume_ml", c.fit.voxel_volume_ml},
                {"init", detail::tk_to_json(c.fit_init)},
                {"lower", detail::tk_to_json(c.fit.bounds.lower)},
                {"upper", detail::tk_to_json(c.fit.bounds.upper)}};
  j["cohort"] = {{"size", c.cohort.size}, {"n", c.cohort.n},         {"ft_min", c.cohort.ft_min},
                 {"ft_max", c.cohort.ft_max}, {"seed", c.cohort.seed}, {"cs_lambda", c.cohort.cs_lambda}};
  return j;
}

inline ExperimentConfig load_config(const std::string& path, const std::string& preset_override = "") {
  std::ifstream is(path);
  if (!is) throw ConfigError(path + ": cannot open config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j, preset_override);
}

}  // namespace dcedip
