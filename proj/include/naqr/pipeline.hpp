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

// Dataset preparation and the training loop.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "naqr/baseline.hpp"
#include "naqr/error.hpp"
#include "naqr/frame.hpp"
#include "naqr/nn/adam.hpp"
#include "naqr/nn/network.hpp"
#include "naqr/simulator.hpp"

namespace naqr::pipeline {

using sim::SiteCenter;

enum class Split : std::uint8_t { train = 0, validation = 1, test = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::validation:
      return "validation";
    default:
      return "test";
  }
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split \"" + std::string(s) + "\"");
}

enum class Provenance { dual_path, aba, simulator_truth };

inline const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::dual_path:
      return "dual-path";
    case Provenance::aba:
      return "aba";
    default:
      return "simulator-truth";
  }
}

inline Provenance parse_provenance(std::string_view s) {
  if (s == "dual-path") return Provenance::dual_path;
  if (s == "aba") return Provenance::aba;
  if (s == "simulator-truth") return Provenance::simulator_truth;
  throw ValidationError("unknown label provenance \"" + std::string(s) + "\"");
}

/// Secondary-path frames with one label per (image, site) and a split tag per
/// image. `truth` optionally holds simulator occupancy for auditing.
struct LabeledDataset {
  std::vector<Frame> frames;
  std::vector<std::uint8_t> labels;
  std::size_t n_sites = 0;
  std::vector<Split> splits;
  Provenance provenance = Provenance::dual_path;
  std::vector<std::uint8_t> truth;

  std::size_t n_images() const noexcept { return frames.size(); }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i) {
      if (splits[i] == s) out.push_back(i);
    }
    return out;
  }

  void validate() const {
    if (n_sites == 0) throw ValidationError("dataset has no sites");
    if (labels.size() != frames.size() * n_sites) throw ShapeError("labels do not cover every (image, site)");
    if (!splits.empty() && splits.size() != frames.size()) throw ShapeError("split tags do not cover every image");
    if (!truth.empty() && truth.size() != labels.size()) throw ShapeError("truth does not cover every (image, site)");
    for (auto l : labels) {
      if (l > 1) throw ValidationError("labels must be 0 or 1");
    }
  }
};

template <class T>
std::vector<T> gather(std::span<const T> items, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(items[i]);
  return out;
}

/// Rows `idx` of an (n x width) row-major table.
inline std::vector<std::uint8_t> gather_rows(std::span<const std::uint8_t> table, std::size_t width,
                                             std::span<const std::size_t> idx) {
  std::vector<std::uint8_t> out;
  out.reserve(idx.size() * width);
  for (auto i : idx) out.insert(out.end(), table.begin() + static_cast<long>(i * width),
                                table.begin() + static_cast<long>((i + 1) * width));
  return out;
}

// ---------------------------------------------------------------- labeling

struct PrimaryLabels {
  std::vector<std::uint8_t> labels;  // image-major
  baseline::MaskClassifier classifier;
  double min_separation = 0.0;  // smallest per-site fitted separation, sigma units
  std::vector<std::string> warnings;
};

inline constexpr double kMinPrimarySeparation = 4.0;

/// Gaussian-mask per-site thresholding of the high-SNR path.
inline PrimaryLabels label_from_primary(std::span<const Frame> primary, std::span<const SiteCenter> guesses,
                                        double spacing_px) {
  if (primary.empty()) throw ValidationError("label_from_primary: empty frame set");
  baseline::MaskClassifier::Options opt;
  opt.kind = baseline::MaskKind::gaussian;
  opt.mode = baseline::ThresholdMode::per_site;
  opt.spot.half_window = baseline::default_half_window(spacing_px);
  PrimaryLabels out{{}, baseline::MaskClassifier::fit(primary, guesses, opt), 0.0, {}};
  out.labels = out.classifier.classify_all(primary);
  out.min_separation = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < out.classifier.n_sites(); ++s) {
    const double sep = out.classifier.mixtures()[s].separation();
    out.min_separation = std::min(out.min_separation, sep);
    if (sep < kMinPrimarySeparation) {
      std::ostringstream msg;
      msg << "site " << s << ": primary-path separation " << sep << " sigma is below " << kMinPrimarySeparation
          << " sigma; labels may be unreliable";
      out.warnings.push_back(msg.str());
    }
  }
  return out;
}

// ------------------------------------------------------------------ splits

/// Fisher-Yates permutation from a seeded mt19937_64, written out so the
/// result does not depend on the standard library's shuffle.
inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

/// Per-image random partition: round(f_train n) train, round(f_val n)
/// validation, the remainder test.
inline std::vector<Split> split_dataset(std::size_t n_images, std::array<double, 3> fractions, std::uint64_t seed) {
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("split fractions must lie in [0, 1]");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ValidationError("split fractions must sum to 1");
  }
  const auto n = static_cast<double>(n_images);
  const std::size_t n_train = std::min(n_images, static_cast<std::size_t>(std::llround(fractions[0] * n)));
  const std::size_t n_val =
      std::min(n_images - n_train, static_cast<std::size_t>(std::llround(fractions[1] * n)));
  const auto perm = permutation(n_images, sim::mix_seed(seed ^ 0x5b11ull));
  std::vector<Split> out(n_images, Split::test);
  for (std::size_t k = 0; k < n_images; ++k) {
    out[perm[k]] = k < n_train ? Split::train : (k < n_train + n_val ? Split::validation : Split::test);
  }
  return out;
}

inline void split_dataset(LabeledDataset& ds, std::array<double, 3> fractions, std::uint64_t seed) {
  ds.splits = split_dataset(ds.n_images(), fractions, seed);
}

// ----------------------------------------------------------- preprocessing

struct PreprocessStats {
  double mu = 0.0;
  double alpha = 1.0;
};

inline PreprocessStats compute_preprocess_stats(std::span<const Frame> training) {
  if (training.empty()) throw ValidationError("preprocess stats need at least one training frame");
  double sum = 0.0;
  std::size_t count = 0;
  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  for (const auto& f : training) {
    for (float v : f.pixels) {
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    count += f.size();
  }
  const double alpha = static_cast<double>(hi) - static_cast<double>(lo);
  if (!(alpha > 0.0)) throw ValidationError("training pixels are constant: normalization span alpha is 0");
  return {sum / static_cast<double>(count), alpha};
}

inline Frame preprocess(const Frame& f, const PreprocessStats& s) {
  Frame out(f.height, f.width);
  for (std::size_t i = 0; i < f.size(); ++i) out.pixels[i] = static_cast<float>((f.pixels[i] - s.mu) / s.alpha);
  return out;
}

inline std::vector<Frame> preprocess(std::span<const Frame> frames, const PreprocessStats& s) {
  std::vector<Frame> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(preprocess(f, s));
  return out;
}

// ---------------------------------------------------------------- cropping

/// 10x10 window whose row/col 5 is the pixel nearest the center.
inline Frame crop_site(const Frame& f, SiteCenter c, std::size_t site = 0) {
  constexpr long half = static_cast<long>(sim::kCropSize / 2);
  const long x0 = std::lround(c.x) - half, y0 = std::lround(c.y) - half;
  const long size = static_cast<long>(sim::kCropSize);
  if (x0 < 0 || y0 < 0 || x0 + size > static_cast<long>(f.width) || y0 + size > static_cast<long>(f.height)) {
    throw ValidationError("crop of site " + std::to_string(site) + " centered at (" + std::to_string(c.x) + ", " +
                          std::to_string(c.y) + ") falls outside the " + std::to_string(f.height) + "x" +
                          std::to_string(f.width) + " frame");
  }
  Frame out(sim::kCropSize, sim::kCropSize);
  for (long y = 0; y < size; ++y)
    for (long x = 0; x < size; ++x) out.at(y, x) = f.at(y0 + y, x0 + x);
  return out;
}

struct SiteCrops {
  std::vector<Frame> crops;           // image-major, then site
  std::vector<std::uint8_t> labels;   // aligned with crops; empty if none given
};

inline SiteCrops partition_sites(std::span<const Frame> frames, std::span<const SiteCenter> centers,
                                 std::span<const std::uint8_t> labels = {}) {
  if (!labels.empty() && labels.size() != frames.size() * centers.size()) {
    throw ShapeError("labels do not cover every (image, site)");
  }
  SiteCrops out;
  out.crops.reserve(frames.size() * centers.size());
  for (const auto& f : frames) {
    for (std::size_t s = 0; s < centers.size(); ++s) out.crops.push_back(crop_site(f, centers[s], s));
  }
  out.labels.assign(labels.begin(), labels.end());
  return out;
}

// ----------------------------------------------------------------- A-B-A

struct AbaSelection {
  std::vector<std::size_t> kept;  // triple indices whose A1 and A2 agree everywhere
  std::size_t discarded = 0;
};

inline AbaSelection aba_select(std::span<const std::uint8_t> a1, std::span<const std::uint8_t> a2,
                               std::size_t n_sites) {
  if (n_sites == 0 || a1.size() != a2.size() || a1.size() % n_sites != 0) {
    throw ShapeError("A1/A2 label tables must have equal n_triples x n_sites shape");
  }
  AbaSelection sel;
  for (std::size_t t = 0; t < a1.size() / n_sites; ++t) {
    if (std::equal(a1.begin() + static_cast<long>(t * n_sites), a1.begin() + static_cast<long>((t + 1) * n_sites),
                   a2.begin() + static_cast<long>(t * n_sites))) {
      sel.kept.push_back(t);
    } else {
      ++sel.discarded;
    }
  }
  return sel;
}

struct AbaDataset {
  std::vector<Frame> b_frames;
  std::vector<std::uint8_t> labels;  // from A1, image-major
  std::vector<std::size_t> kept;
  std::size_t discarded = 0;
};

/// Classifies A1 and A2 with `a_classifier`, keeps triples whose labels
/// agree at every site, and labels each kept B frame with its A1 labels.
inline AbaDataset aba_postselect(std::span<const sim::AbaTriple> triples, const baseline::MaskClassifier& a_classifier) {
  std::vector<std::uint8_t> l1, l2;
  for (const auto& t : triples) {
    const auto x = a_classifier.classify(t.a1), y = a_classifier.classify(t.a2);
    l1.insert(l1.end(), x.begin(), x.end());
    l2.insert(l2.end(), y.begin(), y.end());
  }
  AbaDataset out;
  if (triples.empty()) return out;
  const std::size_t n_sites = a_classifier.n_sites();
  const auto sel = aba_select(l1, l2, n_sites);
  out.kept = sel.kept;
  out.discarded = sel.discarded;
  for (auto t : sel.kept) {
    out.b_frames.push_back(triples[t].b);
    out.labels.insert(out.labels.end(), l1.begin() + static_cast<long>(t * n_sites),
                      l1.begin() + static_cast<long>((t + 1) * n_sites));
  }
  return out;
}

// ---------------------------------------------------------------- training

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t max_epochs = 40;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;

  static TrainConfig cnn_site() { return {1e-4, 40, 64, 1}; }
  static TrainConfig cnn_array() { return {5e-4, 30, 16, 1}; }

  void validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("train.learning_rate must be positive");
    if (max_epochs == 0) throw ValidationError("train.max_epochs must be positive");
    if (batch_size == 0) throw ValidationError("train.batch_size must be positive");
  }
};

/// Network-ready examples: inputs (n, H, W, 1) flattened plus n * heads labels.
struct Examples {
  std::size_t height = 0, width = 0, heads = 1;
  std::vector<float> inputs;
  std::vector<std::uint8_t> labels;

  std::size_t size() const noexcept { return height * width == 0 ? 0 : inputs.size() / (height * width); }
};

inline Examples make_examples(std::span<const Frame> frames, std::span<const std::uint8_t> labels, std::size_t heads) {
  if (frames.empty()) throw ValidationError("no examples");
  if (labels.size() != frames.size() * heads) throw ShapeError("labels do not match examples x heads");
  Examples ex{frames[0].height, frames[0].width, heads, {}, {labels.begin(), labels.end()}};
  ex.inputs.reserve(frames.size() * ex.height * ex.width);
  for (const auto& f : frames) {
    if (f.height != ex.height || f.width != ex.width) throw ShapeError("examples differ in shape");
    ex.inputs.insert(ex.inputs.end(), f.pixels.begin(), f.pixels.end());
  }
  return ex;
}

struct EvalStats {
  double loss = 0.0;      // mean over examples of the head-summed cross-entropy
  double accuracy = 0.0;  // fraction of (example, head) pairs classified correctly
};

namespace detail {

inline nn::Tensor<float> batch_tensor(const Examples& ex, std::span<const std::size_t> idx) {
  const std::size_t px = ex.height * ex.width;
  nn::Buffer<float> buf(idx.size() * px);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::copy_n(ex.inputs.begin() + static_cast<long>(idx[k] * px), px, buf.begin() + static_cast<long>(k * px));
  }
  return nn::Tensor<float>({idx.size(), ex.height, ex.width, 1}, std::move(buf));
}

inline std::vector<std::uint8_t> batch_labels(const Examples& ex, std::span<const std::size_t> idx) {
  std::vector<std::uint8_t> out;
  out.reserve(idx.size() * ex.heads);
  for (auto i : idx) {
    out.insert(out.end(), ex.labels.begin() + static_cast<long>(i * ex.heads),
               ex.labels.begin() + static_cast<long>((i + 1) * ex.heads));
  }
  return out;
}

inline std::size_t count_correct(const nn::Tensor<float>& probs, std::span<const std::uint8_t> labels) {
  std::size_t ok = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const std::uint8_t pred = probs[2 * r + 1] > probs[2 * r] ? 1 : 0;
    ok += pred == labels[r];
  }
  return ok;
}

}  // namespace detail

inline constexpr std::size_t kEvalChunk = 256;

inline EvalStats evaluate(const nn::Network<float>& net, const Examples& ex) {
  if (ex.size() == 0) throw ValidationError("cannot evaluate on an empty set");
  nn::Workspace<float> ws;
  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ex.size(); start += kEvalChunk) {
    idx.resize(std::min(kEvalChunk, ex.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto labels = detail::batch_labels(ex, idx);
    const auto& probs = net.forward(detail::batch_tensor(ex, idx), ws);
    loss += static_cast<double>(net.loss(probs, labels)) * static_cast<double>(idx.size());
    correct += detail::count_correct(probs, labels);
  }
  return {loss / static_cast<double>(ex.size()),
          static_cast<double>(correct) / static_cast<double>(ex.size() * ex.heads)};
}

/// Argmax labels for every (example, head), example-major.
inline std::vector<std::uint8_t> predict_labels(const nn::Network<float>& net, std::span<const Frame> frames) {
  std::vector<std::uint8_t> out;
  out.reserve(frames.size() * net.n_heads());
  nn::Workspace<float> ws;
  for (std::size_t start = 0; start < frames.size(); start += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, frames.size() - start);
    const auto& probs = net.forward(stack_frames(frames.subspan(start, n)), ws);
    for (std::size_t r = 0; r < probs.size() / 2; ++r) out.push_back(probs[2 * r + 1] > probs[2 * r] ? 1 : 0);
  }
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based epoch whose parameters were kept

  const EpochRecord& best() const { return epochs.at(best_epoch - 1); }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    for (const auto& e : epochs) {
      os << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',' << e.val_loss << ','
         << e.val_accuracy << '\n';
    }
    return os.str();
  }
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam over shuffled mini-batches for `max_epochs` epochs (the last batch
/// of an epoch may be short). After every epoch the validation loss is
/// measured; the parameters of the epoch with the lowest validation loss are
/// written back into `net` on return.
inline TrainingHistory train(nn::Network<float>& net, const Examples& train_set, const Examples& val_set,
                             const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw ValidationError("train and validation sets must be non-empty");
  if (train_set.heads != net.n_heads() || val_set.heads != net.n_heads()) {
    throw ShapeError("example label width does not match the network's head count");
  }
  nn::AdamState<float> adam(net.params(), cfg.learning_rate);
  nn::Workspace<float> ws;
  TrainingHistory hist;
  nn::ParamStore<float> best = net.params();
  double best_loss = std::numeric_limits<double>::infinity();
  const std::size_t n = train_set.size();
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = permutation(n, sim::stream_seed(cfg.seed, epoch));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, n - start));
      const auto labels = detail::batch_labels(train_set, idx);
      const auto& probs = net.forward(detail::batch_tensor(train_set, idx), ws);
      const double loss = net.loss(probs, labels);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training loss became non-finite in epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(idx.size());
      correct += detail::count_correct(probs, labels);
      nn::adam_step(net.params(), net.backward(ws, labels), adam);
    }
    const auto val = evaluate(net, val_set);
    if (!std::isfinite(val.loss)) throw DivergenceError("validation loss became non-finite in epoch " + std::to_string(epoch));
    EpochRecord rec{epoch, loss_sum / static_cast<double>(n),
                    static_cast<double>(correct) / static_cast<double>(n * train_set.heads), val.loss, val.accuracy};
    hist.epochs.push_back(rec);
    if (val.loss < best_loss) {
      best_loss = val.loss;
      best = net.params();
      hist.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(rec);
  }
  net.params() = std::move(best);
  return hist;
}

}  // namespace naqr::pipeline
