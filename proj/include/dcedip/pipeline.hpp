#pragma once

// Experiment pipeline behind the CLI verbs. Every step reads and writes
// artifacts under the configured output directory:
//   simulate/  truth.dca, labels.dca, kspace.dca, curves.json
//   recon/     <method>.dca (+ sidecar with the method log), dip/ checkpoints and loss.csv
//   fit/       <method>.json, <method>.csv
//   evaluate/  evaluate.json, tv.csv
//   report/    summary.json, lambda_sweep.csv, agreement.csv

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcedip/artifact.hpp"
#include "dcedip/config.hpp"
#include "dcedip/cs_recon.hpp"
#include "dcedip/dip.hpp"
#include "dcedip/latent.hpp"
#include "dcedip/metrics.hpp"
#include "dcedip/phantom.hpp"
#include "dcedip/tkfit.hpp"

namespace dcedip {

namespace fs = std::filesystem;
using Log = std::function<void(const std::string&)>;

/// Hash of the resolved config without the output location, so the same experiment written
/// to two directories carries the same provenance.
inline std::string run_hash(const ExperimentConfig& c) {
  auto j = config_to_json(c);
  j.erase("output_dir");
  return config_hash(j);
}

/// Hash of the parts that determine the simulated data, so later steps can detect stale inputs.
inline std::string simulation_hash(const ExperimentConfig& c) {
  const auto j = config_to_json(c);
  return config_hash({{"phantom", j["phantom"]}, {"acquisition", j["acquisition"]}});
}

inline std::string method_file_stem(const Method& m) {
  std::string s = m.name();
  std::replace(s.begin(), s.end(), ':', '_');
  return s;
}

inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) { write_file(path.string(), text); }

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json curve_json(const ConcentrationCurve& c) { return {{"dt", c.dt}, {"values", c.values}}; }

inline nlohmann::json tk_json(const TKParams& tk) { return {{"fp", tk.fp}, {"tp", tk.tp}, {"ft", tk.ft}, {"tt", tk.tt}}; }

}  // namespace detail

struct Simulation {
  GroundTruthSeq truth;
  KSpaceFrames kspace;
  std::shared_ptr<const CoilSet> coils;
};

inline std::shared_ptr<const CoilSet> config_coils(const ExperimentConfig& c) {
  return std::make_shared<CoilSet>(make_coils(c.phantom.n, c.acquisition.coils, c.acquisition.coil_seed));
}

inline Simulation simulate_in_memory(const ExperimentConfig& c) {
  Simulation s;
  s.truth = render_phantom(c.phantom);
  s.coils = config_coils(c);
  s.kspace = simulate_acquisition(s.truth, s.coils, c.acquisition);
  return s;
}

inline int config_pre_frames(const ExperimentConfig& c) {
  return pre_injection_frames(c.phantom.frames, c.phantom.dt, c.phantom.injection_delay);
}

inline Simulation cmd_simulate(const ExperimentConfig& c, const Log& log = {}) {
  const fs::path dir = fs::path(c.output_dir) / "simulate";
  Simulation s = simulate_in_memory(c);
  const std::string hash = simulation_hash(c);
  const nlohmann::json seeds = {{"coil_seed", c.acquisition.coil_seed}, {"noise_seed", c.acquisition.noise_seed}};
  auto save = [&](const std::string& name, const ArrayData& a, nlohmann::json meta) {
    meta["seeds"] = seeds;
    write_array((dir / name).string(), a);
    write_sidecar((dir / name).string(), a, hash, meta);
  };
  save("truth.dca", pack_images(s.truth.images), {{"kind", "ground_truth"}});
  save("labels.dca", pack_labels(s.truth.labels), {{"kind", "labels"}});
  save("kspace.dca", pack_kspace(s.kspace), {{"kind", "kspace"}, {"acquisition", kspace_meta(s.kspace)}});
  nlohmann::json curves;
  curves["config_hash"] = hash;
  curves["aif"] = detail::curve_json(s.truth.aif);
  for (std::size_t r = 0; r < c.phantom.regions.size(); ++r)
    curves["regions"][c.phantom.regions[r].name] = detail::curve_json(s.truth.region_curves[r]);
  detail::write_json(dir / "curves.json", curves);
  if (log) log("simulate: wrote " + dir.string());
  return s;
}

/// Reads the simulate/ artifacts and checks they were produced by the same phantom/acquisition settings.
inline Simulation load_simulation(const ExperimentConfig& c) {
  const fs::path dir = fs::path(c.output_dir) / "simulate";
  const std::string want = simulation_hash(c);
  auto check = [&](const std::string& name) {
    const auto side = read_sidecar((dir / name).string());
    if (!side.contains("config_hash") || side["config_hash"] != want)
      throw DataError((dir / name).string() + ".json: field config_hash does not match the current configuration "
                      "(rerun simulate)");
    return side;
  };
  Simulation s;
  s.truth.spec = c.phantom;
  check("truth.dca");
  s.truth.images = unpack_images(read_array((dir / "truth.dca").string()), (dir / "truth.dca").string());
  check("labels.dca");
  s.truth.labels = unpack_labels(read_array((dir / "labels.dca").string()), (dir / "labels.dca").string());
  const auto side = check("kspace.dca");
  if (!side.contains("meta") || !side["meta"].contains("acquisition"))
    throw DataError((dir / "kspace.dca").string() + ".json: missing field meta.acquisition");
  s.kspace = unpack_kspace(read_array((dir / "kspace.dca").string()), side["meta"]["acquisition"],
                           (dir / "kspace.dca").string());
  s.truth.aif = make_aif(c.phantom);
  s.truth.region_curves = region_concentrations(c.phantom, s.truth.aif);
  s.coils = config_coils(c);
  if (s.kspace.n != c.phantom.n || s.kspace.frame_count() != c.phantom.frames)
    throw DataError((dir / "kspace.dca").string() + ": grid size or frame count differs from config");
  return s;
}

struct ReconOutput {
  ImageSeq images;
  nlohmann::json log;
};

/// Runs one method on the given data. DIP checkpoints go to ckpt_dir when non-empty.
inline ReconOutput run_method(const ExperimentConfig& c, const Method& m, const KSpaceFrames& k,
                              const std::vector<EncodingOp>& ops, const NetSpec& net, const std::string& ckpt_dir,
                              const Log& log = {}) {
  ReconOutput out;
  out.log["method"] = m.name();
  if (m.kind == Method::Kind::inufft) {
    out.images = inufft_sequence(k, ops);
  } else if (m.kind == Method::Kind::cs) {
    CSConfig cs = c.cs;
    cs.lambda = m.lambda;
    auto r = reconstruct_cs(k, ops, cs);
    out.images = std::move(r.images);
    out.log["lambda"] = m.lambda;
    out.log["objective"] = r.objective;
    out.log["iterations"] = r.iterations;
    out.log["restarts"] = r.restarts;
    out.log["stopped_early"] = r.stopped_early;
  } else {
    const int pre = pre_injection_frames(k.frame_count(), c.phantom.dt, c.phantom.injection_delay);
    const LatentSeq z = build_latent_pipeline(k, ops, c.latent, pre);
    TrainConfig tc = c.train;
    tc.checkpoint_dir = ckpt_dir;
    if (log)
      tc.on_epoch = [&](int e, double l) {
        if (e == 1 || e % 100 == 0) log("dip: epoch " + std::to_string(e) + " loss " + fmt_num(l));
      };
    auto r = train<float>(k, ops, z, net, tc);
    out.images = reconstruct_dip(r.params, z);
    out.log["boundaries"] = z.boundaries;
    out.log["epochs"] = r.params.epoch;
    out.log["converged"] = r.converged;
    out.log["final_loss"] = r.loss.back();
    out.log["parameters"] = r.params.values.size();
    if (!ckpt_dir.empty()) write_loss_csv((fs::path(ckpt_dir) / "loss.csv").string(), r.loss);
  }
  return out;
}

inline fs::path recon_path(const ExperimentConfig& c, const Method& m) {
  return fs::path(c.output_dir) / "recon" / (method_file_stem(m) + ".dca");
}

inline ImageSeq cmd_recon(const ExperimentConfig& c, const Method& m, const Log& log = {}) {
  const Simulation s = load_simulation(c);
  const auto ops = frame_operators(s.kspace, s.coils);
  const std::string ckpt = (fs::path(c.output_dir) / "recon" / "dip").string();
  auto r = run_method(c, m, s.kspace, ops, c.net, m.kind == Method::Kind::dip ? ckpt : "", log);
  const auto path = recon_path(c, m).string();
  const auto a = pack_images(r.images);
  write_array(path, a);
  r.log["kind"] = "reconstruction";
  write_sidecar(path, a, run_hash(c), r.log);
  if (log) log("recon: wrote " + path);
  return std::move(r.images);
}

struct KidneyFit {
  std::string kidney;
  FitResult fit;
  int voxels = 0;
};

struct MethodFit {
  std::string method;
  ConcentrationCurve aif;
  std::vector<KidneyFit> kidneys;
  double aif_peak = 0.0;
};

inline ConversionParams config_conversion(const ExperimentConfig& c) {
  ConversionParams p;
  p.scan = c.phantom.scan;
  p.pre_frames = config_pre_frames(c);
  return p;
}

inline MethodFit fit_images(const ExperimentConfig& c, const ImageSeq& x, const LabelImage& labels,
                            const std::string& method) {
  MethodFit mf;
  mf.method = method;
  const auto rc = roi_curves(x, labels, c.phantom, config_conversion(c));
  mf.aif = rc.aif;
  mf.aif_peak = *std::max_element(rc.aif.values.begin(), rc.aif.values.end());
  for (const auto& [name, curve] : rc.kidneys) {
    const int vox = rc.kidney_voxels.at(name);
    mf.kidneys.push_back({name, fit(rc.aif, curve, c.fit_init, c.fit, vox), vox});
  }
  return mf;
}

inline nlohmann::json fit_json(const MethodFit& mf) {
  nlohmann::json j;
  j["method"] = mf.method;
  j["aif_peak"] = mf.aif_peak;
  for (const auto& k : mf.kidneys)
    j["kidneys"][k.kidney] = {{"params", detail::tk_json(k.fit.params)}, {"residual", k.fit.residual},
                              {"converged", k.fit.converged},         {"iterations", k.fit.iterations},
                              {"gfr_ml_min", k.fit.gfr},              {"voxels", k.voxels}};
  return j;
}

inline std::string fit_csv(const std::vector<MethodFit>& fits, const std::string& scan_id) {
  std::string s = "scan,method,kidney,fp,tp,ft,tt,residual,gfr_ml_min\n";
  for (const auto& mf : fits)
    for (const auto& k : mf.kidneys)
      s += scan_id + "," + mf.method + "," + k.kidney + "," + fmt_num(k.fit.params.fp) + "," +
           fmt_num(k.fit.params.tp) + "," + fmt_num(k.fit.params.ft) + "," + fmt_num(k.fit.params.tt) + "," +
           fmt_num(k.fit.residual) + "," + fmt_num(k.fit.gfr) + "\n";
  return s;
}

inline ImageSeq load_recon(const std::string& path) { return unpack_images(read_array(path), path); }

inline MethodFit cmd_fit(const ExperimentConfig& c, const std::string& recon_file, const Log& log = {}) {
  const Simulation s = load_simulation(c);
  const ImageSeq x = load_recon(recon_file);
  if (static_cast<int>(x.size()) != c.phantom.frames || x[0].rows() != c.phantom.n)
    throw DataError(recon_file + ": shape differs from the configured phantom");
  const std::string stem = fs::path(recon_file).stem().string();
  const MethodFit mf = fit_images(c, x, s.truth.labels, stem);
  const fs::path dir = fs::path(c.output_dir) / "fit";
  detail::write_json(dir / (stem + ".json"), fit_json(mf));
  detail::write_text(dir / (stem + ".csv"), fit_csv({mf}, "default"));
  if (log) log("fit: wrote " + (dir / (stem + ".json")).string());
  return mf;
}

struct MethodEvaluation {
  std::string method;
  TVReport tv;
  double nrmse = 0.0;
  double aif_peak_ratio = 0.0;
};

inline MethodEvaluation evaluate_images(const ExperimentConfig& c, const ImageSeq& x, const GroundTruthSeq& truth,
                                        const std::string& method) {
  MethodEvaluation e;
  e.method = method;
  e.tv = tv_report(x, truth.labels, truth.images, method);
  e.nrmse = nrmse(x, truth.images);
  const auto rc = roi_curves(x, truth.labels, c.phantom, config_conversion(c));
  const double peak = *std::max_element(truth.aif.values.begin(), truth.aif.values.end());
  e.aif_peak_ratio = *std::max_element(rc.aif.values.begin(), rc.aif.values.end()) / peak;
  return e;
}

inline nlohmann::json evaluation_json(const MethodEvaluation& e) {
  return {{"method", e.method},
          {"tv_normalization", e.tv.normalization},
          {"background_tv_mean", e.tv.background.mean},
          {"background_tv_sd", e.tv.background.sd},
          {"contrast_tv_mean", e.tv.contrast.mean},
          {"contrast_tv_sd", e.tv.contrast.sd},
          {"nrmse", e.nrmse},
          {"aif_peak_ratio", e.aif_peak_ratio}};
}

inline std::vector<MethodEvaluation> cmd_evaluate(const ExperimentConfig& c, const std::vector<std::string>& files,
                                                  const Log& log = {}) {
  require(!files.empty(), "evaluate: no reconstruction artifacts given");
  const Simulation s = load_simulation(c);
  std::vector<MethodEvaluation> out;
  nlohmann::json j = nlohmann::json::array();
  std::string csv = "method,region,tv_mean,tv_sd,voxels\n";
  for (const auto& f : files) {
    const auto e = evaluate_images(c, load_recon(f), s.truth, fs::path(f).stem().string());
    j.push_back(evaluation_json(e));
    csv += e.method + ",background," + fmt_num(e.tv.background.mean) + "," + fmt_num(e.tv.background.sd) + "," +
           std::to_string(e.tv.background.voxels) + "\n";
    csv += e.method + ",contrast," + fmt_num(e.tv.contrast.mean) + "," + fmt_num(e.tv.contrast.sd) + "," +
           std::to_string(e.tv.contrast.voxels) + "\n";
    out.push_back(e);
  }
  const fs::path dir = fs::path(c.output_dir) / "evaluate";
  detail::write_json(dir / "evaluate.json", j);
  detail::write_text(dir / "tv.csv", csv);
  if (log) log("evaluate: wrote " + (dir / "evaluate.json").string());
  return out;
}

struct CohortMember {
  int index = 0;
  double ft_scale = 1.0;
  double ft_cs = 0.0;
  double ft_dip = 0.0;
  double ft_truth = 0.0;  // fit of the noiseless ground-truth images
};

/// Phantom i of the agreement cohort: kidney F_T scaled log-uniformly, its own noise seed.
inline ExperimentConfig cohort_config(const ExperimentConfig& c, int i, double& ft_scale) {
  ExperimentConfig m = c;
  std::mt19937_64 rng(c.cohort.seed + static_cast<std::uint64_t>(i));
  std::uniform_real_distribution<double> u(std::log(c.cohort.ft_min), std::log(c.cohort.ft_max));
  ft_scale = std::exp(u(rng));
  const auto keep = c.phantom;
  m.phantom = default_phantom_spec(c.cohort.n);
  m.phantom.frames = keep.frames;
  m.phantom.dt = keep.dt;
  m.phantom.injection_delay = keep.injection_delay;
  m.phantom.region_edge = keep.region_edge * c.cohort.n / keep.n;
  for (std::size_t r = 0; r < m.phantom.regions.size() && r < keep.regions.size(); ++r) {
    if (m.phantom.regions[r].role != RegionRole::tissue) continue;
    m.phantom.regions[r].tk = keep.regions[r].tk;
    m.phantom.regions[r].tk.ft *= ft_scale;
  }
  m.acquisition.noise_seed = c.acquisition.noise_seed + 1000 + static_cast<std::uint64_t>(i);
  m.net = c.preset == "paper-scale" ? NetSpec::paper_scale() : NetSpec::desk(c.cohort.n);
  m.net.m = c.latent.m;
  return m;
}

inline std::vector<CohortMember> run_cohort(const ExperimentConfig& c, const Log& log = {}) {
  std::vector<CohortMember> out;
  for (int i = 0; i < c.cohort.size; ++i) {
    CohortMember mem;
    mem.index = i;
    const ExperimentConfig m = cohort_config(c, i, mem.ft_scale);
    const Simulation s = simulate_in_memory(m);
    const auto ops = frame_operators(s.kspace, s.coils);
    auto first_ft = [&](const ImageSeq& x, const std::string& name) {
      const auto mf = fit_images(m, x, s.truth.labels, name);
      return mf.kidneys.front().fit.params.ft;
    };
    mem.ft_truth = first_ft(s.truth.images, "truth");
    mem.ft_cs = first_ft(run_method(m, {Method::Kind::cs, c.cohort.cs_lambda}, s.kspace, ops, m.net, "").images, "cs");
    mem.ft_dip = first_ft(run_method(m, {Method::Kind::dip, 0.0}, s.kspace, ops, m.net, "").images, "dip");
    if (log)
      log("cohort " + std::to_string(i) + ": F_T scale " + fmt_num(mem.ft_scale) + " cs " + fmt_num(mem.ft_cs) +
          " dip " + fmt_num(mem.ft_dip));
    out.push_back(mem);
  }
  return out;
}

struct ReportSummary {
  nlohmann::json summary;
  std::vector<MethodEvaluation> evaluations;
  std::vector<MethodFit> fits;
  std::vector<CohortMember> cohort;
};

inline const std::vector<std::string>& report_metrics() {
  static const std::vector<std::string> m{"background_tv_mean", "contrast_tv_mean", "nrmse", "aif_peak_ratio", "ft"};
  return m;
}

/// Full experiment: simulate, reconstruct with every method, fit, evaluate, and tabulate.
inline ReportSummary cmd_report(const ExperimentConfig& c, const Log& log = {}) {
  ReportSummary rep;
  cmd_simulate(c, log);
  const Simulation s = load_simulation(c);
  std::vector<std::string> files;
  for (const auto& m : c.methods) {
    if (log) log("report: reconstructing " + m.name());
    cmd_recon(c, m, log);
    files.push_back(recon_path(c, m).string());
  }
  rep.evaluations = cmd_evaluate(c, files, log);
  for (const auto& f : files) rep.fits.push_back(cmd_fit(c, f, log));

  nlohmann::json rows = nlohmann::json::array();
  std::string sweep = "method,lambda,background_tv_mean,contrast_tv_mean,nrmse,aif_peak_ratio,ft\n";
  for (std::size_t i = 0; i < c.methods.size(); ++i) {
    const auto& e = rep.evaluations[i];
    const double ft = rep.fits[i].kidneys.empty() ? 0.0 : rep.fits[i].kidneys.front().fit.params.ft;
    const std::vector<double> vals{e.tv.background.mean, e.tv.contrast.mean, e.nrmse, e.aif_peak_ratio, ft};
    for (std::size_t k = 0; k < vals.size(); ++k)
      rows.push_back({{"method", c.methods[i].name()}, {"metric", report_metrics()[k]}, {"value", vals[k]}});
    sweep += c.methods[i].name() + "," + (c.methods[i].kind == Method::Kind::dip ? "" : fmt_num(c.methods[i].lambda));
    for (double v : vals) sweep += "," + fmt_num(v);
    sweep += "\n";
  }
  rep.summary["config_hash"] = run_hash(c);
  rep.summary["tool_version"] = kToolVersion;
  rep.summary["rows"] = rows;
  const auto truth_fit = fit_images(c, s.truth.images, s.truth.labels, "truth");
  if (!truth_fit.kidneys.empty()) rep.summary["truth_ft"] = truth_fit.kidneys.front().fit.params.ft;

  const fs::path dir = fs::path(c.output_dir) / "report";
  if (c.cohort.size > 0) {
    rep.cohort = run_cohort(c, log);
    std::vector<double> a, b;
    std::string csv = "phantom,ft_scale,ft_truth,ft_dip,ft_cs\n";
    for (const auto& m : rep.cohort) {
      a.push_back(m.ft_dip);
      b.push_back(m.ft_cs);
      csv += std::to_string(m.index) + "," + fmt_num(m.ft_scale) + "," + fmt_num(m.ft_truth) + "," +
             fmt_num(m.ft_dip) + "," + fmt_num(m.ft_cs) + "\n";
    }
    const auto ag = agreement(a, b);
    rep.summary["agreement"] = {{"r2", ag.r2},         {"slope", ag.slope},       {"intercept", ag.intercept},
                                {"mean_diff", ag.mean_diff}, {"sd_diff", ag.sd_diff}, {"lower", ag.lower},
                                {"upper", ag.upper},   {"inside_fraction", ag.inside_fraction},
                                {"count", ag.count}};
    detail::write_text(dir / "agreement.csv", csv);
  }
  detail::write_json(dir / "summary.json", rep.summary);
  detail::write_text(dir / "lambda_sweep.csv", sweep);
  if (log) log("report: wrote " + (dir / "summary.json").string());
  return rep;
}

}  // namespace dcedip
