// Copyright 2026 The naqr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// The four subcommands of the naqr tool. Each takes a parsed RunConfig,
// writes into `out`, and throws naqr::Error subclasses that main() maps to
// exit codes.

#pragma once

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "naqr/experiment.hpp"
#include "naqr/io/config.hpp"
#include "naqr/io/csv.hpp"
#include "naqr/io/frameset.hpp"
#include "naqr/nn/serialize.hpp"

namespace naqr::cli {

namespace fs = std::filesystem;
using io::json;

enum ExitCode : int { kOk = 0, kOther = 1, kValidation = 2, kIo = 3, kFit = 4, kDivergence = 5 };

/// Exit code for an exception escaping a command.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return kValidation;
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const FitError*>(&e)) return kFit;
  if (dynamic_cast<const DivergenceError*>(&e)) return kDivergence;
  return kOther;
}

enum class LabelSource { dual_path, simulator_truth };

struct RunConfig {
  sim::SimConfig sim;
  std::optional<fs::path> data_dir;    // output of `simulate` for one exposure
  std::optional<fs::path> splits_file;
  std::vector<fs::path> sweep_dirs;
  LabelSource labels = LabelSource::dual_path;
  std::vector<experiment::Method> methods;  // empty: command default
  baseline::ThresholdMode threshold_mode = baseline::ThresholdMode::per_site;
  std::array<double, 3> split_fractions{0.6, 0.2, 0.2};
  std::optional<std::uint64_t> split_seed;
  pipeline::TrainConfig site_train = pipeline::TrainConfig::cnn_site();
  pipeline::TrainConfig array_train = pipeline::TrainConfig::cnn_array();
  arch::CnnArraySpec array_spec;
  pipeline::Split eval_split = pipeline::Split::test;
  std::map<experiment::Method, fs::path> models;
  std::size_t latency_samples = 1000;
  std::size_t histogram_bins = 50;
  fs::path out = "naqr-out";
  std::optional<std::uint64_t> seed;

  /// The master seed: `seed` if set, else the simulator seed.
  std::uint64_t master_seed() const { return seed.value_or(sim.seed); }

  /// Applies the master seed to every stage that has not pinned its own.
  void apply_seed() {
    if (!seed) return;
    sim.seed = *seed;
    site_train.seed = *seed;
    array_train.seed = *seed;
    if (!split_seed) split_seed = *seed;
  }
};

inline RunConfig run_config_from_json(const json& j) {
  io::require_keys(j, {"sim", "data", "labels", "methods", "threshold_mode", "split", "train", "cnn_array_spec",
                       "evaluate", "sweep", "out", "seed"},
                   "");
  RunConfig c;
  try {
    if (j.contains("sim")) c.sim = io::sim_config_from_json(j.at("sim"));
    if (j.contains("data")) {
      const auto& d = j.at("data");
      io::require_keys(d, {"dir", "splits"}, "data");
      if (d.contains("dir")) c.data_dir = d.at("dir").get<std::string>();
      if (d.contains("splits")) c.splits_file = d.at("splits").get<std::string>();
    }
    if (j.contains("labels")) {
      const auto s = j.at("labels").get<std::string>();
      if (s == "dual-path") {
        c.labels = LabelSource::dual_path;
      } else if (s == "simulator-truth") {
        c.labels = LabelSource::simulator_truth;
      } else {
        throw ValidationError("field \"labels\" must be \"dual-path\" or \"simulator-truth\"");
      }
    }
    if (j.contains("methods")) {
      for (const auto& m : j.at("methods")) c.methods.push_back(experiment::parse_method(m.get<std::string>()));
    }
    if (j.contains("threshold_mode")) {
      const auto s = j.at("threshold_mode").get<std::string>();
      if (s == "per-site") {
        c.threshold_mode = baseline::ThresholdMode::per_site;
      } else if (s == "global") {
        c.threshold_mode = baseline::ThresholdMode::global;
      } else {
        throw ValidationError("field \"threshold_mode\" must be \"per-site\" or \"global\"");
      }
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      io::require_keys(s, {"fractions", "seed"}, "split");
      if (s.contains("fractions")) {
        const auto f = s.at("fractions").get<std::vector<double>>();
        if (f.size() != 3) throw ValidationError("field \"split.fractions\" must have three entries");
        c.split_fractions = {f[0], f[1], f[2]};
      }
      if (s.contains("seed")) c.split_seed = s.at("seed").get<std::uint64_t>();
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      io::require_keys(t, {"cnn_site", "cnn_array"}, "train");
      if (t.contains("cnn_site")) c.site_train = io::train_config_from_json(t.at("cnn_site"), c.site_train, "train.cnn_site");
      if (t.contains("cnn_array")) {
        c.array_train = io::train_config_from_json(t.at("cnn_array"), c.array_train, "train.cnn_array");
      }
    }
    if (j.contains("cnn_array_spec")) c.array_spec = io::array_spec_from_json(j.at("cnn_array_spec"));
    if (j.contains("evaluate")) {
      const auto& e = j.at("evaluate");
      io::require_keys(e, {"split", "models", "latency_samples", "histogram_bins"}, "evaluate");
      if (e.contains("split")) c.eval_split = pipeline::parse_split(e.at("split").get<std::string>());
      if (e.contains("models")) {
        io::require_keys(e.at("models"), {"cnn-site", "cnn-array"}, "evaluate.models");
        for (const auto& [k, v] : e.at("models").items()) c.models[experiment::parse_method(k)] = v.get<std::string>();
      }
      io::read_opt(e, "latency_samples", c.latency_samples, "evaluate");
      io::read_opt(e, "histogram_bins", c.histogram_bins, "evaluate");
    }
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      io::require_keys(s, {"dirs"}, "sweep");
      for (const auto& d : s.at("dirs")) c.sweep_dirs.emplace_back(d.get<std::string>());
    }
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config has a field of the wrong type: ") + e.what());
  }
  c.sim.validate();
  c.site_train.validate();
  c.array_train.validate();
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

/// Exclusive lock file inside the output directory, removed on destruction.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".naqr.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw IoError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    std::fclose(f);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline std::string exposure_dir_name(double exposure_ms) {
  std::ostringstream os;
  os << "exposure_" << exposure_ms << "ms";
  return os.str();
}

/// Simulator seed for the k-th exposure of a sweep.
inline std::uint64_t exposure_seed(std::uint64_t master, std::size_t k) { return sim::stream_seed(master, k); }

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

// ----------------------------------------------------------------- inputs

/// One exposure's frames as read from disk or simulated in memory.
struct Inputs {
  std::vector<Frame> secondary;
  std::vector<Frame> primary;       // empty when absent
  std::vector<std::uint8_t> truth;  // empty when absent
  sim::ArrayGeometry geometry;
  double exposure_ms = 0.0;
  std::string source;
};

inline Inputs inputs_from_dir(const fs::path& dir, const sim::ArrayGeometry& fallback) {
  Inputs in;
  in.source = dir.string();
  auto sec = io::load_frameset(dir / "secondary.naqr");
  in.secondary = std::move(sec.frames);
  in.geometry = sec.geometry.value_or(fallback);
  in.exposure_ms = sec.meta.exposure_ms;
  if (fs::exists(dir / "primary.naqr")) {
    auto pri = io::load_frameset(dir / "primary.naqr");
    if (pri.frames.size() != in.secondary.size()) throw ValidationError("primary and secondary frame counts differ");
    in.primary = std::move(pri.frames);
  }
  if (fs::exists(dir / "truth.csv")) {
    auto t = io::load_labels(dir / "truth.csv");
    if (t.n_sites != in.geometry.n_sites() || t.n_images() != in.secondary.size()) {
      throw ValidationError("truth.csv does not match the frame set");
    }
    in.truth = std::move(t.labels);
  }
  return in;
}

inline Inputs inputs_from_sim(const sim::SimConfig& cfg, std::size_t exposure_index) {
  const double e = cfg.exposures_ms.at(exposure_index);
  const auto ds = sim::generate_dataset(cfg, e, exposure_seed(cfg.seed, exposure_index));
  return {ds.frames(sim::Path::secondary), ds.frames(sim::Path::primary), ds.truth(), cfg.geometry, e,
          "simulated " + fmt(e) + " ms"};
}

/// Labels the inputs and tags splits.
inline pipeline::LabeledDataset label_inputs(const Inputs& in, const RunConfig& cfg, std::ostream& log) {
  pipeline::LabeledDataset ds;
  ds.frames = in.secondary;
  ds.n_sites = in.geometry.n_sites();
  ds.truth = in.truth;
  if (cfg.labels == LabelSource::dual_path) {
    if (in.primary.empty()) throw ValidationError("dual-path labels need primary.naqr next to secondary.naqr");
    auto pl = pipeline::label_from_primary(in.primary, in.geometry.site_centers(), in.geometry.spacing_px);
    for (const auto& w : pl.warnings) log << "warning: " << w << '\n';
    ds.labels = std::move(pl.labels);
    ds.provenance = pipeline::Provenance::dual_path;
  } else {
    if (in.truth.empty()) throw ValidationError("simulator-truth labels need truth.csv");
    ds.labels = in.truth;
    ds.provenance = pipeline::Provenance::simulator_truth;
  }
  if (cfg.splits_file) {
    ds.splits = io::load_splits(*cfg.splits_file);
    if (ds.splits.size() != ds.n_images()) throw ValidationError("split file does not match the frame count");
  } else {
    pipeline::split_dataset(ds, cfg.split_fractions, cfg.split_seed.value_or(cfg.master_seed()));
  }
  ds.validate();
  return ds;
}

inline Inputs primary_inputs(const RunConfig& cfg) {
  return cfg.data_dir ? inputs_from_dir(*cfg.data_dir, cfg.sim.geometry) : inputs_from_sim(cfg.sim, 0);
}

inline experiment::Options experiment_options(const RunConfig& cfg, std::vector<experiment::Method> methods,
                                              std::ostream& log) {
  experiment::Options o;
  o.methods = std::move(methods);
  o.threshold_mode = cfg.threshold_mode;
  o.site_train = cfg.site_train;
  o.array_train = cfg.array_train;
  o.array_spec = cfg.array_spec;
  o.seed = cfg.master_seed();
  o.eval_split = cfg.eval_split;
  o.log = &log;
  return o;
}

inline bool is_cnn(experiment::Method m) {
  return m == experiment::Method::cnn_site || m == experiment::Method::cnn_array;
}

// --------------------------------------------------------------- simulate

inline void cmd_simulate(const RunConfig& cfg, std::ostream& log) {
  cfg.sim.validate();
  OutputLock lock(cfg.out);
  io::write_text(cfg.out / "sim_config.json", io::to_json(cfg.sim).dump(2) + "\n");
  for (std::size_t k = 0; k < cfg.sim.exposures_ms.size(); ++k) {
    const double e = cfg.sim.exposures_ms[k];
    const auto ds = sim::generate_dataset(cfg.sim, e, exposure_seed(cfg.sim.seed, k));
    const fs::path dir = cfg.out / exposure_dir_name(e);
    fs::create_directories(dir);
    io::save_frameset(dir / "primary.naqr", io::frameset_from(ds, sim::Path::primary));
    io::save_frameset(dir / "secondary.naqr", io::frameset_from(ds, sim::Path::secondary));
    io::save_labels(dir / "truth.csv", ds.truth(), ds.n_sites(), pipeline::Provenance::simulator_truth);
    log << "exposure " << e << " ms: " << ds.pairs.size() << " frame pairs, separation primary "
        << std::setprecision(4) << sim::measure_separation(ds, sim::Path::primary) << " sigma, secondary "
        << sim::measure_separation(ds, sim::Path::secondary) << " sigma -> " << dir.string() << '\n';
  }
}

// ------------------------------------------------------------------ train

inline fs::path model_path(const fs::path& dir, experiment::Method m) {
  return dir / (std::string("model_") + experiment::method_name(m) + ".naqm");
}

inline void cmd_train(const RunConfig& cfg, std::ostream& log) {
  std::vector<experiment::Method> methods;
  for (auto m : cfg.methods.empty() ? std::vector<experiment::Method>{experiment::Method::cnn_site,
                                                                      experiment::Method::cnn_array}
                                    : cfg.methods) {
    if (is_cnn(m)) {
      methods.push_back(m);
    } else {
      log << experiment::method_name(m) << ": nothing to train, skipped\n";
    }
  }
  if (methods.empty()) throw ValidationError("train needs cnn-site or cnn-array among the methods");
  const auto in = primary_inputs(cfg);
  const auto ds = label_inputs(in, cfg, log);
  OutputLock lock(cfg.out);
  io::save_splits(cfg.out / "splits.csv", ds.splits);
  io::save_labels(cfg.out / "labels.csv", ds.labels, ds.n_sites, ds.provenance);

  auto opt = experiment_options(cfg, methods, log);
  opt.eval_split = pipeline::Split::test;
  const auto out = experiment::run(ds, experiment::Layout::from(in.geometry), opt);
  const metrics::ArrayShape shape{in.geometry.rows, in.geometry.cols};
  for (const auto& mo : out.methods) {
    const auto& train_cfg = mo.method == experiment::Method::cnn_site ? cfg.site_train : cfg.array_train;
    nn::ModelFile mf{*mo.network,
                     experiment::model_metadata(out.stats, experiment::centers_of(out.crop_centers), train_cfg,
                                                *mo.history),
                     cfg.master_seed()};
    nn::save_model(model_path(cfg.out, mo.method), mf);
    io::write_text(cfg.out / (std::string("history_") + experiment::method_name(mo.method) + ".csv"),
                   mo.history->to_csv());
    const auto sc = experiment::score(mo.predictions, out.eval_reference, shape);
    log << experiment::method_name(mo.method) << ": best epoch " << mo.history->best_epoch << " of "
        << mo.history->epochs.size() << ", test fidelity "
        << (sc.report.aggregate ? fmt(*sc.report.aggregate) : sc.report.aggregate_error) << '\n';
  }
}

// --------------------------------------------------------------- evaluate

struct MethodEval {
  experiment::Method method;
  std::vector<std::uint8_t> predictions;
  experiment::Scores scores;
};

inline std::string fidelity_csv(const std::vector<MethodEval>& evals, double exposure_ms) {
  std::ostringstream os;
  os << "method,exposure_ms,site,fidelity,infidelity,eta_vs_gaussian\n";
  const MethodEval* ref = nullptr;
  for (const auto& e : evals) {
    if (e.method == experiment::Method::gaussian) ref = &e;
  }
  // A missing or perfect reference leaves eta blank.
  auto eta = [&](std::optional<double> f, double f_ref) -> std::string {
    if (!f || f_ref >= 1.0) return "";
    return fmt(metrics::relative_infidelity(*f, f_ref));
  };
  auto opt_str = [](std::optional<double> v) { return v ? fmt(*v) : std::string(); };
  for (const auto& e : evals) {
    for (const auto& s : e.scores.report.sites) {
      const double f_ref = ref ? ref->scores.report.sites[s.site].fidelity.value_or(1.0) : 1.0;
      os << experiment::method_name(e.method) << ',' << fmt(exposure_ms) << ',' << s.site << ','
         << opt_str(s.fidelity) << ',' << opt_str(s.infidelity()) << ',' << eta(s.fidelity, f_ref) << '\n';
    }
    const auto agg = e.scores.report.aggregate;
    os << experiment::method_name(e.method) << ',' << fmt(exposure_ms) << ",all," << opt_str(agg) << ','
       << (agg ? fmt(1.0 - *agg) : "") << ',' << eta(agg, ref ? ref->scores.report.aggregate.value_or(1.0) : 1.0)
       << '\n';
  }
  return os.str();
}

inline std::string cross_fidelity_csv(const metrics::CrossFidelityMatrix& m) {
  std::ostringstream os;
  os << "site_i,site_j,value\n";
  for (std::size_t i = 0; i < m.n; ++i)
    for (std::size_t j = 0; j < m.n; ++j) {
      if (i == j) continue;
      os << i << ',' << j << ',' << (m.defined(i, j) ? fmt(m.at(i, j)) : "") << '\n';
    }
  return os.str();
}

inline void cmd_evaluate(const RunConfig& cfg, bool allow_nontest_eval, std::ostream& log) {
  if (cfg.eval_split != pipeline::Split::test && !allow_nontest_eval) {
    throw ValidationError(std::string("refusing to evaluate on the ") + pipeline::split_name(cfg.eval_split) +
                          " split; pass --allow-nontest-eval to override");
  }
  const auto methods = cfg.methods.empty() ? std::vector<experiment::Method>(std::begin(experiment::kAllMethods),
                                                                             std::end(experiment::kAllMethods))
                                           : cfg.methods;
  std::map<experiment::Method, nn::ModelFile> models;
  for (auto m : methods) {
    if (!is_cnn(m)) continue;
    const auto it = cfg.models.find(m);
    if (it == cfg.models.end()) {
      throw ValidationError(std::string("evaluate.models has no entry for ") + experiment::method_name(m));
    }
    models.emplace(m, nn::load_model(it->second));
  }
  const auto in = primary_inputs(cfg);
  const auto ds = label_inputs(in, cfg, log);
  OutputLock lock(cfg.out);

  std::vector<experiment::Method> mask_methods;
  for (auto m : methods) {
    if (!is_cnn(m)) mask_methods.push_back(m);
  }
  const auto layout = experiment::Layout::from(in.geometry);
  auto opt = experiment_options(cfg, mask_methods, log);
  const auto out = experiment::run(ds, layout, opt);
  const auto eval_frames = pipeline::gather(std::span<const Frame>(ds.frames), out.eval_indices);
  const metrics::ArrayShape shape{in.geometry.rows, in.geometry.cols};

  std::vector<MethodEval> evals;
  json latency = json::object();
  const std::size_t n_lat = std::min<std::size_t>(eval_frames.size(), 256);
  for (auto m : methods) {
    MethodEval ev{m, {}, {}};
    if (!is_cnn(m)) {
      const auto& mo = out.get(m);
      ev.predictions = mo.predictions;
      const auto& clf = *mo.classifier;
      const std::size_t site = shape.center().value_or(0);
      const auto st = metrics::measure_latency(
          [&](std::size_t k) { return clf.classify_site(eval_frames[k % n_lat], site); }, cfg.latency_samples,
          cfg.latency_samples / 10);
      latency[experiment::method_name(m)] = {{"mean_us", st.mean_us}, {"stddev_us", st.stddev_us},
                                             {"samples", st.samples}, {"unit", "per site"}};
    } else {
      const auto& mf = models.at(m);
      const auto stats = experiment::stats_from_metadata(mf.training);
      if (m == experiment::Method::cnn_site) {
        const auto centers = experiment::centers_from_metadata(mf.training);
        ev.predictions = experiment::predict_cnn_site(mf.network, stats, centers, eval_frames);
        const auto norm = pipeline::preprocess(std::span<const Frame>(eval_frames.data(), n_lat), stats);
        const auto crops = pipeline::partition_sites(norm, centers);
        const auto st = metrics::measure_latency(
            [&](std::size_t k) { return arch::infer_site(mf.network, crops.crops[k % crops.crops.size()]); },
            cfg.latency_samples, cfg.latency_samples / 10);
        latency[experiment::method_name(m)] = {{"mean_us", st.mean_us}, {"stddev_us", st.stddev_us},
                                               {"samples", st.samples}, {"unit", "per site"}};
      } else {
        ev.predictions = experiment::predict_cnn_array(mf.network, stats, eval_frames);
        const auto norm = pipeline::preprocess(std::span<const Frame>(eval_frames.data(), n_lat), stats);
        const auto st = metrics::measure_latency(
            [&](std::size_t k) { return arch::infer_array(mf.network, norm[k % norm.size()]); },
            cfg.latency_samples, cfg.latency_samples / 10, shape.n_sites());
        latency[experiment::method_name(m)] = {{"mean_us", st.mean_us}, {"stddev_us", st.stddev_us},
                                               {"samples", st.samples}, {"unit", "per site"}};
      }
    }
    ev.scores = experiment::score(ev.predictions, out.eval_reference, shape);
    evals.push_back(std::move(ev));
  }

  io::write_text(cfg.out / "fidelity.csv", fidelity_csv(evals, in.exposure_ms));
  for (const auto& e : evals) {
    io::write_text(cfg.out / (std::string("crossfid_") + experiment::method_name(e.method) + ".csv"),
                   cross_fidelity_csv(e.scores.cross));
  }

  // Neighbor-conditioned histograms of the mask integrals at the center site.
  std::ostringstream hist;
  hist << "method,site,partition,bin_lo,bin_hi,count\n";
  const std::size_t hsite = shape.center().value_or(0);
  for (auto m : mask_methods) {
    const auto& clf = *out.get(m).classifier;
    std::vector<double> values;
    for (const auto& f : eval_frames) values.push_back(clf.integrate_site(f, hsite));
    const auto h = metrics::neighbor_conditioned_histograms(values, out.eval_reference, hsite, shape,
                                                            cfg.histogram_bins);
    for (const auto& w : h.warnings) log << "warning: " << w << '\n';
    for (const auto* part : {&h.without_bright_neighbor, &h.with_bright_neighbor}) {
      const char* name = part == &h.without_bright_neighbor ? "without_bright_neighbor" : "with_bright_neighbor";
      for (std::size_t b = 0; b < part->counts.size(); ++b) {
        hist << experiment::method_name(m) << ',' << hsite << ',' << name << ','
             << fmt(part->lo + part->bin_width * static_cast<double>(b)) << ','
             << fmt(part->lo + part->bin_width * static_cast<double>(b + 1)) << ',' << part->counts[b] << '\n';
      }
    }
  }
  io::write_text(cfg.out / "histograms.csv", hist.str());
  io::write_text(cfg.out / "latency.json", latency.dump(2) + "\n");

  json report = {{"generated_at", utc_timestamp()},
                 {"source", in.source},
                 {"exposure_ms", in.exposure_ms},
                 {"eval_split", pipeline::split_name(cfg.eval_split)},
                 {"n_eval_images", out.eval_indices.size()},
                 {"label_provenance", pipeline::provenance_name(ds.provenance)},
                 {"reference", ds.truth.empty() ? "labels" : "simulator truth"},
                 {"methods", json::object()}};
  for (const auto& e : evals) {
    const auto& r = e.scores.report;
    auto opt_json = [](std::optional<double> v) { return v ? json(*v) : json(nullptr); };
    report["methods"][experiment::method_name(e.method)] = {
        {"fidelity", opt_json(r.aggregate)},
        {"center_infidelity", opt_json(r.center_infidelity)},
        {"mean_corner_infidelity", opt_json(r.mean_corner_infidelity)},
        {"nn_abs_cross_fidelity", opt_json(e.scores.nn_abs_cross)},
        {"distant_abs_cross_fidelity", opt_json(e.scores.distant_abs_cross)}};
    log << std::left << std::setw(10) << experiment::method_name(e.method) << " fidelity "
        << (r.aggregate ? fmt(*r.aggregate) : r.aggregate_error) << '\n';
  }
  io::write_text(cfg.out / "report.json", report.dump(2) + "\n");
}

// ------------------------------------------------------------------ sweep

inline void cmd_sweep(const RunConfig& cfg, std::ostream& log) {
  const auto methods = cfg.methods.empty() ? std::vector<experiment::Method>(std::begin(experiment::kAllMethods),
                                                                             std::end(experiment::kAllMethods))
                                           : cfg.methods;
  const std::size_t n_points = cfg.sweep_dirs.empty() ? cfg.sim.exposures_ms.size() : cfg.sweep_dirs.size();
  OutputLock lock(cfg.out);

  struct Row {
    experiment::Method method;
    double exposure_ms;
    std::optional<double> infidelity;
    std::string status;
  };
  std::vector<Row> rows;
  for (std::size_t k = 0; k < n_points; ++k) {
    double exposure = cfg.sweep_dirs.empty() ? cfg.sim.exposures_ms[k] : 0.0;
    try {
      const auto in = cfg.sweep_dirs.empty() ? inputs_from_sim(cfg.sim, k)
                                             : inputs_from_dir(cfg.sweep_dirs[k], cfg.sim.geometry);
      exposure = in.exposure_ms;
      log << "== " << in.source << '\n';
      RunConfig point = cfg;
      point.splits_file.reset();
      const auto ds = label_inputs(in, point, log);
      auto opt = experiment_options(cfg, methods, log);
      opt.eval_split = pipeline::Split::test;
      const auto out = experiment::run(ds, experiment::Layout::from(in.geometry), opt);
      const metrics::ArrayShape shape{in.geometry.rows, in.geometry.cols};
      for (auto m : methods) {
        const auto sc = experiment::score(out.get(m).predictions, out.eval_reference, shape);
        rows.push_back({m, exposure, sc.report.aggregate ? std::optional(1.0 - *sc.report.aggregate) : std::nullopt,
                        sc.report.aggregate ? "ok" : sc.report.aggregate_error});
      }
    } catch (const Error& e) {
      log << "exposure point " << k << " failed: " << e.what() << '\n';
      for (auto m : methods) rows.push_back({m, exposure, std::nullopt, std::string("failed: ") + e.what()});
    }
  }

  auto csv_safe = [](std::string s) {
    for (auto& ch : s) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    return s;
  };
  std::ostringstream os;
  os << "method,exposure_ms,infidelity,eta_vs_gaussian,status\n";
  for (const auto& r : rows) {
    std::string eta;
    for (const auto& g : rows) {
      if (g.method == experiment::Method::gaussian && g.exposure_ms == r.exposure_ms && g.infidelity &&
          r.infidelity && *g.infidelity > 0.0) {
        eta = fmt(metrics::relative_infidelity(1.0 - *r.infidelity, 1.0 - *g.infidelity));
      }
    }
    os << experiment::method_name(r.method) << ',' << fmt(r.exposure_ms) << ','
       << (r.infidelity ? fmt(*r.infidelity) : "") << ',' << eta << ',' << csv_safe(r.status) << '\n';
  }
  io::write_text(cfg.out / "sweep.csv", os.str());

  // Best eta and interpolated readout-time saving against the Gaussian mask,
  // over the exposures where both methods succeeded.
  json summary = {{"generated_at", utc_timestamp()}, {"methods", json::object()}};
  for (auto m : methods) {
    if (m == experiment::Method::gaussian) continue;
    std::vector<double> t, ref, me;
    for (const auto& r : rows) {
      if (r.method != m || !r.infidelity) continue;
      for (const auto& g : rows) {
        if (g.method == experiment::Method::gaussian && g.exposure_ms == r.exposure_ms && g.infidelity) {
          t.push_back(r.exposure_ms);
          ref.push_back(*g.infidelity);
          me.push_back(*r.infidelity);
        }
      }
    }
    json entry = {{"best_eta", nullptr}, {"best_eta_exposure_ms", nullptr}, {"readout_time_reduction", nullptr}};
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (ref[i] <= 0.0) continue;
      const double eta = metrics::relative_infidelity(1.0 - me[i], 1.0 - ref[i]);
      if (entry["best_eta"].is_null() || eta > entry["best_eta"].get<double>()) {
        entry["best_eta"] = eta;
        entry["best_eta_exposure_ms"] = t[i];
      }
    }
    bool increasing = t.size() >= 2;
    for (std::size_t i = 1; i < t.size(); ++i) increasing &= t[i] > t[i - 1];
    if (increasing) {
      if (auto red = metrics::readout_time_reduction(t, ref, me)) {
        entry["readout_time_reduction"] = {{"fraction", red->reduction},
                                           {"method_exposure_ms", red->method_exposure_ms},
                                           {"reference_exposure_ms", red->reference_exposure_ms}};
      }
    }
    summary["methods"][experiment::method_name(m)] = entry;
  }
  io::write_text(cfg.out / "sweep_summary.json", summary.dump(2) + "\n");
  log << "wrote " << (cfg.out / "sweep.csv").string() << '\n';
}

}  // namespace naqr::cli
