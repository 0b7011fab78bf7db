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

// Readout quality metrics.
//
//   fidelity        F      = 1 - (P(bright_pred | dark) + P(dark_pred | bright)) / 2
//   cross-fidelity  F_ij   = 1 - [P(dark_i | bright_j) + P(bright_i | dark_j)]
//   relative infidelity eta = ((1 - F_ref) - (1 - F)) / (1 - F_ref)
//
// Conditionals are empirical frequencies over images. An empty conditioning
// class raises UndefinedMetricError instead of producing 0/0.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "naqr/error.hpp"

namespace naqr::metrics {

struct ConfusionCounts {
  std::size_t n_true_dark = 0;
  std::size_t n_true_bright = 0;
  std::size_t n_false_bright = 0;  // predicted bright, truly dark
  std::size_t n_false_dark = 0;    // predicted dark, truly bright

  double false_bright_rate() const {
    if (n_true_dark == 0) throw UndefinedMetricError("no truly dark examples: P(bright_pred | dark) undefined");
    return static_cast<double>(n_false_bright) / static_cast<double>(n_true_dark);
  }
  double false_dark_rate() const {
    if (n_true_bright == 0) throw UndefinedMetricError("no truly bright examples: P(dark_pred | bright) undefined");
    return static_cast<double>(n_false_dark) / static_cast<double>(n_true_bright);
  }
};

inline ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) throw ShapeError("predictions and truths differ in length");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i]) {
      ++c.n_true_bright;
      c.n_false_dark += pred[i] ? 0 : 1;
    } else {
      ++c.n_true_dark;
      c.n_false_bright += pred[i] ? 1 : 0;
    }
  }
  return c;
}

inline double fidelity(const ConfusionCounts& c) { return 1.0 - 0.5 * (c.false_bright_rate() + c.false_dark_rate()); }

inline double fidelity(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  return fidelity(confusion(pred, truth));
}

/// Both arguments are per-image predictions for sites i and j.
inline double cross_fidelity(std::span<const std::uint8_t> pred_i, std::span<const std::uint8_t> pred_j) {
  if (pred_i.size() != pred_j.size()) throw ShapeError("site prediction vectors differ in length");
  std::size_t bright_j = 0, dark_j = 0, dark_i_bright_j = 0, bright_i_dark_j = 0;
  for (std::size_t k = 0; k < pred_i.size(); ++k) {
    if (pred_j[k]) {
      ++bright_j;
      dark_i_bright_j += pred_i[k] ? 0 : 1;
    } else {
      ++dark_j;
      bright_i_dark_j += pred_i[k] ? 1 : 0;
    }
  }
  if (bright_j == 0 || dark_j == 0) {
    throw UndefinedMetricError("site j predictions are single-class: cross-fidelity undefined");
  }
  return 1.0 - (static_cast<double>(dark_i_bright_j) / static_cast<double>(bright_j) +
                static_cast<double>(bright_i_dark_j) / static_cast<double>(dark_j));
}

inline double relative_infidelity(double f_method, double f_reference) {
  if (!(f_reference < 1.0)) throw UndefinedMetricError("reference fidelity is 1: relative infidelity undefined");
  return ((1.0 - f_reference) - (1.0 - f_method)) / (1.0 - f_reference);
}

/// Column `site` of an (n_images x n_sites) row-major table.
inline std::vector<std::uint8_t> site_column(std::span<const std::uint8_t> table, std::size_t n_sites,
                                             std::size_t site) {
  if (n_sites == 0 || table.size() % n_sites != 0) throw ShapeError("table width does not divide its length");
  if (site >= n_sites) throw ShapeError("site index out of range");
  std::vector<std::uint8_t> out(table.size() / n_sites);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = table[i * n_sites + site];
  return out;
}

// -------------------------------------------------------- array layout

struct ArrayShape {
  std::size_t rows = 3;
  std::size_t cols = 3;

  std::size_t n_sites() const noexcept { return rows * cols; }
  std::optional<std::size_t> center() const {
    if (rows % 2 == 0 || cols % 2 == 0) return std::nullopt;
    return (rows / 2) * cols + cols / 2;
  }
  std::vector<std::size_t> corners() const {
    std::vector<std::size_t> c{0, cols - 1, (rows - 1) * cols, rows * cols - 1};
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    return c;
  }
  /// 4-connected neighbors.
  std::vector<std::size_t> neighbors(std::size_t site) const {
    std::vector<std::size_t> out;
    const std::size_t r = site / cols, c = site % cols;
    if (r > 0) out.push_back(site - cols);
    if (c > 0) out.push_back(site - 1);
    if (c + 1 < cols) out.push_back(site + 1);
    if (r + 1 < rows) out.push_back(site + cols);
    return out;
  }
};

using SitePair = std::pair<std::size_t, std::size_t>;

/// Ordered (i, j) pairs of 4-connected sites, both directions.
inline std::vector<SitePair> nearest_neighbor_pairs(const ArrayShape& a) {
  std::vector<SitePair> out;
  for (std::size_t i = 0; i < a.n_sites(); ++i)
    for (std::size_t j : a.neighbors(i)) out.emplace_back(i, j);
  return out;
}

/// Ordered pairs that are not adjacent even diagonally (Chebyshev distance
/// >= 2): the crosstalk-free baseline.
inline std::vector<SitePair> distant_pairs(const ArrayShape& a) {
  std::vector<SitePair> out;
  for (std::size_t i = 0; i < a.n_sites(); ++i)
    for (std::size_t j = 0; j < a.n_sites(); ++j) {
      const long dr = std::labs(static_cast<long>(i / a.cols) - static_cast<long>(j / a.cols));
      const long dc = std::labs(static_cast<long>(i % a.cols) - static_cast<long>(j % a.cols));
      if (std::max(dr, dc) >= 2) out.emplace_back(i, j);
    }
  return out;
}

// ---------------------------------------------------------- reports

struct SiteFidelity {
  std::size_t site = 0;
  std::optional<double> fidelity;
  std::string error;  // set when fidelity is undefined

  std::optional<double> infidelity() const {
    return fidelity ? std::optional<double>(1.0 - *fidelity) : std::nullopt;
  }
};

struct FidelityReport {
  std::vector<SiteFidelity> sites;
  std::optional<double> aggregate;  // pooled over every (image, site)
  std::string aggregate_error;
  std::optional<double> center_infidelity;
  std::optional<double> mean_corner_infidelity;

  /// True when the center site is worse than the corner average.
  bool center_worse_than_corners() const {
    return center_infidelity && mean_corner_infidelity && *center_infidelity > *mean_corner_infidelity;
  }
};

/// `pred` and `truth` are (n_images x n_sites) row-major.
inline FidelityReport per_site_report(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                                      const ArrayShape& shape) {
  const std::size_t n_sites = shape.n_sites();
  if (pred.size() != truth.size() || pred.size() % n_sites != 0) {
    throw ShapeError("prediction and truth tables must be aligned n_images x n_sites");
  }
  FidelityReport rep;
  for (std::size_t s = 0; s < n_sites; ++s) {
    SiteFidelity sf{s, std::nullopt, {}};
    try {
      sf.fidelity = fidelity(site_column(pred, n_sites, s), site_column(truth, n_sites, s));
    } catch (const UndefinedMetricError& e) {
      sf.error = e.what();
    }
    rep.sites.push_back(std::move(sf));
  }
  try {
    rep.aggregate = fidelity(pred, truth);
  } catch (const UndefinedMetricError& e) {
    rep.aggregate_error = e.what();
  }
  if (auto c = shape.center(); c && n_sites > 1) rep.center_infidelity = rep.sites[*c].infidelity();
  double sum = 0.0;
  std::size_t n = 0;
  for (auto c : shape.corners()) {
    if (auto inf = rep.sites[c].infidelity()) {
      sum += *inf;
      ++n;
    }
  }
  if (n > 0) rep.mean_corner_infidelity = sum / static_cast<double>(n);
  return rep;
}

/// n x n matrix, row i column j holds F_ij. The diagonal and undefined
/// entries hold NaN; undefined entries also get a message in `errors`.
struct CrossFidelityMatrix {
  std::size_t n = 0;
  std::vector<double> values;
  std::vector<std::string> errors;

  double at(std::size_t i, std::size_t j) const { return values.at(i * n + j); }
  bool defined(std::size_t i, std::size_t j) const { return i != j && !std::isnan(at(i, j)); }
};

inline CrossFidelityMatrix cross_fidelity_matrix(std::span<const std::uint8_t> pred, std::size_t n_sites) {
  CrossFidelityMatrix m{n_sites, std::vector<double>(n_sites * n_sites, std::numeric_limits<double>::quiet_NaN()), {}};
  std::vector<std::vector<std::uint8_t>> cols;
  for (std::size_t s = 0; s < n_sites; ++s) cols.push_back(site_column(pred, n_sites, s));
  for (std::size_t i = 0; i < n_sites; ++i)
    for (std::size_t j = 0; j < n_sites; ++j) {
      if (i == j) continue;
      try {
        m.values[i * n_sites + j] = cross_fidelity(cols[i], cols[j]);
      } catch (const UndefinedMetricError& e) {
        m.errors.push_back("F(" + std::to_string(i) + "," + std::to_string(j) + "): " + e.what());
      }
    }
  return m;
}

/// Mean |F_ij| over the defined entries among `pairs`.
inline double mean_abs_cross_fidelity(const CrossFidelityMatrix& m, std::span<const SitePair> pairs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (auto [i, j] : pairs) {
    if (m.defined(i, j)) {
      sum += std::abs(m.at(i, j));
      ++n;
    }
  }
  if (n == 0) throw UndefinedMetricError("no defined cross-fidelity entries among the requested pairs");
  return sum / static_cast<double>(n);
}

// --------------------------------------------- neighbor-conditioned counts

struct ValueHistogram {
  double lo = 0.0;
  double bin_width = 1.0;
  std::vector<std::size_t> counts;
  std::size_t n = 0;
  std::optional<double> mean;
};

struct NeighborHistograms {
  ValueHistogram without_bright_neighbor;
  ValueHistogram with_bright_neighbor;
  std::vector<std::string> warnings;
};

/// Splits one site's integrated values by whether any 4-connected neighbor
/// is bright in `occupancy` (n_images x n_sites). With `own_state` set, only
/// images where the site itself is in that state are used. Both histograms
/// share one binning over the pooled range.
inline NeighborHistograms neighbor_conditioned_histograms(std::span<const double> values,
                                                          std::span<const std::uint8_t> occupancy,
                                                          std::size_t site, const ArrayShape& shape,
                                                          std::size_t bins = 50,
                                                          std::optional<std::uint8_t> own_state = std::nullopt) {
  const std::size_t n_sites = shape.n_sites();
  if (occupancy.size() != values.size() * n_sites) throw ShapeError("occupancy must be n_images x n_sites");
  if (site >= n_sites) throw ShapeError("site index out of range");
  if (bins == 0) throw ValidationError("histogram needs at least one bin");
  const auto nbrs = shape.neighbors(site);
  std::vector<double> with, without;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint8_t* row = occupancy.data() + i * n_sites;
    if (own_state && row[site] != *own_state) continue;
    const bool any = std::any_of(nbrs.begin(), nbrs.end(), [&](std::size_t j) { return row[j] != 0; });
    (any ? with : without).push_back(values[i]);
  }
  NeighborHistograms out;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : with) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : without) lo = std::min(lo, v), hi = std::max(hi, v);
  const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  auto fill = [&](const std::vector<double>& v, ValueHistogram& h, const char* name) {
    h.lo = std::isfinite(lo) ? lo : 0.0;
    h.bin_width = width;
    h.counts.assign(bins, 0);
    h.n = v.size();
    if (v.empty()) {
      out.warnings.push_back(std::string("site ") + std::to_string(site) + ": empty '" + name + "' partition");
      return;
    }
    double s = 0.0;
    for (double x : v) {
      s += x;
      auto b = static_cast<std::size_t>((x - h.lo) / width);
      ++h.counts[std::min(b, bins - 1)];
    }
    h.mean = s / static_cast<double>(v.size());
  };
  fill(without, out.without_bright_neighbor, "without");
  fill(with, out.with_bright_neighbor, "with");
  return out;
}

// ---------------------------------------------------------------- latency

struct LatencyStats {
  double mean_us = 0.0;
  double stddev_us = 0.0;
  std::size_t samples = 0;
};

/// Times `samples` calls of `infer(k)` (k = 0, 1, ...) after `warmup`
/// untimed calls. Each call classifies `sites_per_call` sites; reported
/// times are per site.
template <class Infer>
LatencyStats measure_latency(Infer&& infer, std::size_t samples = 1000, std::size_t warmup = 100,
                             std::size_t sites_per_call = 1) {
  if (samples == 0) throw ValidationError("latency needs at least one sample");
  if (sites_per_call == 0) throw ValidationError("sites_per_call must be positive");
  using clock = std::chrono::steady_clock;
  for (std::size_t k = 0; k < warmup; ++k) infer(k);
  std::vector<double> t(samples);
  for (std::size_t k = 0; k < samples; ++k) {
    const auto t0 = clock::now();
    infer(k);
    const auto t1 = clock::now();
    t[k] = std::chrono::duration<double, std::micro>(t1 - t0).count() / static_cast<double>(sites_per_call);
  }
  double mean = 0.0;
  for (double v : t) mean += v;
  mean /= static_cast<double>(samples);
  double var = 0.0;
  for (double v : t) var += (v - mean) * (v - mean);
  const double sd = samples > 1 ? std::sqrt(var / static_cast<double>(samples - 1)) : 0.0;
  return {mean, sd, samples};
}

// -------------------------------------------------- readout-time reduction

struct ReadoutReduction {
  double method_exposure_ms = 0.0;
  double reference_exposure_ms = 0.0;  // where the reference reaches the same infidelity
  double reduction = 0.0;              // 1 - method / reference
};

/// For each swept exposure t, finds the exposure at which the reference
/// infidelity curve (linearly interpolated between sweep points) falls to the
/// method's infidelity at t. Returns the largest fractional saving, or
/// nothing if the reference never reaches the method's level inside the sweep.
inline std::optional<ReadoutReduction> readout_time_reduction(std::span<const double> exposures_ms,
                                                              std::span<const double> reference_infidelity,
                                                              std::span<const double> method_infidelity) {
  if (exposures_ms.size() != reference_infidelity.size() || exposures_ms.size() != method_infidelity.size()) {
    throw ShapeError("sweep curves differ in length");
  }
  for (std::size_t i = 1; i < exposures_ms.size(); ++i) {
    if (!(exposures_ms[i] > exposures_ms[i - 1])) throw ValidationError("sweep exposures must be increasing");
  }
  std::optional<ReadoutReduction> best;
  for (std::size_t m = 0; m < exposures_ms.size(); ++m) {
    const double target = method_infidelity[m];
    std::optional<double> t_ref;
    for (std::size_t i = 0; i < exposures_ms.size() && !t_ref; ++i) {
      if (reference_infidelity[i] <= target) {
        if (i == 0) {
          t_ref = exposures_ms[0];
        } else {
          const double y0 = reference_infidelity[i - 1], y1 = reference_infidelity[i];
          const double f = y0 == y1 ? 0.0 : (y0 - target) / (y0 - y1);
          t_ref = exposures_ms[i - 1] + f * (exposures_ms[i] - exposures_ms[i - 1]);
        }
      }
    }
    if (!t_ref || *t_ref <= 0.0) continue;
    const ReadoutReduction r{exposures_ms[m], *t_ref, 1.0 - exposures_ms[m] / *t_ref};
    if (!best || r.reduction > best->reduction) best = r;
  }
  return best;
}

}  // namespace naqr::metrics
