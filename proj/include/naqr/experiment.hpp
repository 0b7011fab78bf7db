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

// Fits and trains the four readout methods on one split dataset and
// predicts the evaluation split. Everything fitted (masks, thresholds,
// normalization, crop centers, weights) sees training images only; the
// networks also see validation images for checkpoint selection.

#pragma once

#include <chrono>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "naqr/arch.hpp"
#include "naqr/baseline.hpp"
#include "naqr/io/container.hpp"
#include "naqr/metrics.hpp"
#include "naqr/nn/serialize.hpp"
#include "naqr/pipeline.hpp"

namespace naqr::experiment {

enum class Method { gaussian, square, cnn_site, cnn_array };

inline constexpr Method kAllMethods[] = {Method::gaussian, Method::square, Method::cnn_site, Method::cnn_array};

inline const char* method_name(Method m) {
  switch (m) {
    case Method::gaussian:
      return "gaussian";
    case Method::square:
      return "square";
    case Method::cnn_site:
      return "cnn-site";
    default:
      return "cnn-array";
  }
}

inline Method parse_method(std::string_view s) {
  for (Method m : kAllMethods) {
    if (s == method_name(m)) return m;
  }
  throw ValidationError("unknown method \"" + std::string(s) + "\" (expected gaussian, square, cnn-site, cnn-array)");
}

struct Options {
  std::vector<Method> methods{kAllMethods, kAllMethods + 4};
  baseline::ThresholdMode threshold_mode = baseline::ThresholdMode::per_site;
  pipeline::TrainConfig site_train = pipeline::TrainConfig::cnn_site();
  pipeline::TrainConfig array_train = pipeline::TrainConfig::cnn_array();
  arch::CnnSiteSpec site_spec;
  arch::CnnArraySpec array_spec;
  std::uint64_t seed = 1;  // network initialization
  pipeline::Split eval_split = pipeline::Split::test;
  std::ostream* log = nullptr;
};

/// Where the sites are expected to be before fitting.
struct Layout {
  std::vector<sim::SiteCenter> guesses;
  double spacing_px = 5.0;
  metrics::ArrayShape shape;

  static Layout from(const sim::ArrayGeometry& g) { return {g.site_centers(), g.spacing_px, {g.rows, g.cols}}; }
};

struct MethodOutcome {
  Method method = Method::gaussian;
  std::vector<std::uint8_t> predictions;  // eval images x sites
  std::optional<baseline::MaskClassifier> classifier;
  std::optional<nn::Network<float>> network;
  std::optional<pipeline::TrainingHistory> history;
  double fit_seconds = 0.0;
};

struct Outcome {
  std::vector<std::size_t> eval_indices;
  std::vector<std::uint8_t> eval_reference;  // truth if the dataset has it, labels otherwise
  pipeline::PreprocessStats stats;
  std::vector<baseline::SpotFit> crop_centers;
  std::vector<MethodOutcome> methods;

  const MethodOutcome& get(Method m) const {
    for (const auto& o : methods) {
      if (o.method == m) return o;
    }
    throw ValidationError(std::string("method ") + method_name(m) + " was not run");
  }
};

inline std::vector<sim::SiteCenter> centers_of(std::span<const baseline::SpotFit> fits) {
  std::vector<sim::SiteCenter> out;
  for (const auto& f : fits) out.push_back(f.center());
  return out;
}

/// Normalizes, crops, and classifies every site of every frame.
inline std::vector<std::uint8_t> predict_cnn_site(const nn::Network<float>& net, const pipeline::PreprocessStats& stats,
                                                  std::span<const sim::SiteCenter> centers,
                                                  std::span<const Frame> frames) {
  const auto normalized = pipeline::preprocess(frames, stats);
  const auto crops = pipeline::partition_sites(normalized, centers);
  return pipeline::predict_labels(net, crops.crops);
}

inline std::vector<std::uint8_t> predict_cnn_array(const nn::Network<float>& net, const pipeline::PreprocessStats& stats,
                                                   std::span<const Frame> frames) {
  return pipeline::predict_labels(net, pipeline::preprocess(frames, stats));
}

/// Metadata stored alongside network weights so a saved model can be
/// applied to raw frames.
inline io::json model_metadata(const pipeline::PreprocessStats& stats, std::span<const sim::SiteCenter> centers,
                               const pipeline::TrainConfig& cfg, const pipeline::TrainingHistory& hist) {
  io::json c = io::json::array();
  for (const auto& s : centers) c.push_back({s.x, s.y});
  return {{"preprocess", {{"mu", stats.mu}, {"alpha", stats.alpha}}},
          {"site_centers", c},
          {"train", {{"learning_rate", cfg.learning_rate}, {"max_epochs", cfg.max_epochs},
                     {"batch_size", cfg.batch_size}, {"seed", cfg.seed}}},
          {"best_epoch", hist.best_epoch},
          {"best_val_loss", hist.best().val_loss}};
}

inline pipeline::PreprocessStats stats_from_metadata(const io::json& j) {
  try {
    return {j.at("preprocess").at("mu").get<double>(), j.at("preprocess").at("alpha").get<double>()};
  } catch (const io::json::exception& e) {
    throw IoError(std::string("model file lacks preprocessing metadata: ") + e.what());
  }
}

inline std::vector<sim::SiteCenter> centers_from_metadata(const io::json& j) {
  std::vector<sim::SiteCenter> out;
  try {
    for (const auto& c : j.at("site_centers")) out.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
  } catch (const io::json::exception& e) {
    throw IoError(std::string("model file lacks site centers: ") + e.what());
  }
  return out;
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline pipeline::EpochCallback epoch_logger(std::ostream* log, const char* name) {
  if (!log) return {};
  return [log, name](const pipeline::EpochRecord& r) {
    *log << "  [" << name << "] epoch " << std::setw(3) << r.epoch << "  train_loss " << std::fixed
         << std::setprecision(5) << r.train_loss << "  train_acc " << r.train_accuracy << "  val_loss "
         << r.val_loss << "  val_acc " << r.val_accuracy << std::defaultfloat << '\n';
  };
}

}  // namespace detail

inline Outcome run(const pipeline::LabeledDataset& ds, const Layout& layout, const Options& opt) {
  ds.validate();
  if (ds.splits.size() != ds.n_images()) throw ValidationError("dataset has not been split");
  if (layout.guesses.size() != ds.n_sites) throw ShapeError("layout site count differs from dataset");
  const auto train_idx = ds.indices(pipeline::Split::train);
  const auto val_idx = ds.indices(pipeline::Split::validation);
  Outcome out;
  out.eval_indices = ds.indices(opt.eval_split);
  if (train_idx.empty()) throw ValidationError("training split is empty");
  if (out.eval_indices.empty()) throw ValidationError(std::string(pipeline::split_name(opt.eval_split)) + " split is empty");

  const std::span<const Frame> frames(ds.frames);
  const auto train_frames = pipeline::gather(frames, train_idx);
  const auto eval_frames = pipeline::gather(frames, out.eval_indices);
  const auto& reference = ds.truth.empty() ? ds.labels : ds.truth;
  out.eval_reference = pipeline::gather_rows(reference, ds.n_sites, out.eval_indices);

  baseline::SpotFitOptions spot;
  spot.half_window = baseline::default_half_window(layout.spacing_px);

  bool need_cnn = false;
  for (Method m : opt.methods) need_cnn |= (m == Method::cnn_site || m == Method::cnn_array);
  std::vector<Frame> norm_train, norm_val;
  if (need_cnn) {
    if (val_idx.empty()) throw ValidationError("validation split is empty");
    out.stats = pipeline::compute_preprocess_stats(train_frames);
    out.crop_centers = baseline::fit_site_gaussians(baseline::average_frames(train_frames), layout.guesses, spot);
    norm_train = pipeline::preprocess(train_frames, out.stats);
    norm_val = pipeline::preprocess(pipeline::gather(frames, val_idx), out.stats);
  }
  const auto train_labels = pipeline::gather_rows(ds.labels, ds.n_sites, train_idx);
  const auto val_labels = pipeline::gather_rows(ds.labels, ds.n_sites, val_idx);

  for (Method m : opt.methods) {
    const auto t0 = std::chrono::steady_clock::now();
    MethodOutcome mo;
    mo.method = m;
    if (m == Method::gaussian || m == Method::square) {
      baseline::MaskClassifier::Options mopt;
      mopt.kind = m == Method::gaussian ? baseline::MaskKind::gaussian : baseline::MaskKind::square;
      mopt.mode = opt.threshold_mode;
      mopt.spot = spot;
      mo.classifier = baseline::MaskClassifier::fit(train_frames, layout.guesses, mopt);
      mo.predictions = mo.classifier->classify_all(eval_frames);
    } else if (m == Method::cnn_site) {
      const auto centers = centers_of(out.crop_centers);
      const auto tr = pipeline::partition_sites(norm_train, centers, train_labels);
      const auto va = pipeline::partition_sites(norm_val, centers, val_labels);
      auto net = arch::build_cnn_site(opt.seed, opt.site_spec);
      mo.history = pipeline::train(net, pipeline::make_examples(tr.crops, tr.labels, 1),
                                   pipeline::make_examples(va.crops, va.labels, 1), opt.site_train,
                                   detail::epoch_logger(opt.log, "cnn-site"));
      mo.predictions = predict_cnn_site(net, out.stats, centers, eval_frames);
      mo.network = std::move(net);
    } else {
      auto spec = opt.array_spec;
      spec.input_height = ds.frames[0].height;
      spec.input_width = ds.frames[0].width;
      auto net = arch::build_cnn_array(ds.n_sites, opt.seed, spec);
      mo.history = pipeline::train(net, pipeline::make_examples(norm_train, train_labels, ds.n_sites),
                                   pipeline::make_examples(norm_val, val_labels, ds.n_sites), opt.array_train,
                                   detail::epoch_logger(opt.log, "cnn-array"));
      mo.predictions = predict_cnn_array(net, out.stats, eval_frames);
      mo.network = std::move(net);
    }
    mo.fit_seconds = detail::seconds_since(t0);
    if (opt.log) *opt.log << method_name(m) << ": fitted in " << mo.fit_seconds << " s\n";
    out.methods.push_back(std::move(mo));
  }
  return out;
}

/// Test-split scores for one method.
struct Scores {
  metrics::FidelityReport report;
  metrics::CrossFidelityMatrix cross;
  std::optional<double> nn_abs_cross;       // mean |F_ij| over 4-connected pairs
  std::optional<double> distant_abs_cross;  // mean |F_ij| over non-adjacent pairs
};

inline Scores score(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> reference,
                    const metrics::ArrayShape& shape) {
  Scores s{metrics::per_site_report(predictions, reference, shape),
           metrics::cross_fidelity_matrix(predictions, shape.n_sites()), std::nullopt, std::nullopt};
  const auto nn_pairs = metrics::nearest_neighbor_pairs(shape);
  const auto far_pairs = metrics::distant_pairs(shape);
  try {
    s.nn_abs_cross = metrics::mean_abs_cross_fidelity(s.cross, nn_pairs);
  } catch (const UndefinedMetricError&) {
  }
  try {
    s.distant_abs_cross = metrics::mean_abs_cross_fidelity(s.cross, far_pairs);
  } catch (const UndefinedMetricError&) {
  }
  return s;
}

}  // namespace naqr::experiment
