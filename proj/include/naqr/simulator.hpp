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

// Synthetic dual-path fluorescence readout of a rectangular tweezer array.
//
// Photon model per pixel p:
//   lambda_p = eff * t * (rate * sum_s occ_s * m_s(p) + dark)
//   k_p ~ Poisson(lambda_p)
//   counts_p = baseline + Gamma(k_p, gain) + Normal(0, read_noise)
// where m_s(p) is the exact mass of site s's 2-D Gaussian PSF inside pixel p
// and eff is 1 for the primary path. Gamma(k, g) is the EM register output
// for k input electrons; it doubles the shot-noise variance (excess factor 2).
// Crosstalk comes only from PSF tails reaching neighboring ROIs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "naqr/error.hpp"
#include "naqr/frame.hpp"

namespace naqr::sim {

inline constexpr std::size_t kCropSize = 10;

struct SiteCenter {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const SiteCenter&, const SiteCenter&) = default;
};

struct ArrayGeometry {
  std::size_t rows = 3;
  std::size_t cols = 3;
  double spacing_px = 5.0;
  double psf_sigma_px = 1.2;
  std::size_t image_height = 28;
  std::size_t image_width = 28;
  double origin_x = 9.0;  // center of site 0 (top-left)
  double origin_y = 9.0;

  std::size_t n_sites() const noexcept { return rows * cols; }

  /// Sites are numbered row-major from the top-left.
  SiteCenter site_center(std::size_t site) const {
    return {origin_x + spacing_px * static_cast<double>(site % cols),
            origin_y + spacing_px * static_cast<double>(site / cols)};
  }

  std::vector<SiteCenter> site_centers() const {
    std::vector<SiteCenter> out;
    for (std::size_t s = 0; s < n_sites(); ++s) out.push_back(site_center(s));
    return out;
  }

  /// Places the array symmetrically, with site centers on pixel centers.
  static ArrayGeometry centered(std::size_t rows, std::size_t cols, double spacing, double psf_sigma,
                                std::size_t height, std::size_t width) {
    ArrayGeometry g;
    g.rows = rows;
    g.cols = cols;
    g.spacing_px = spacing;
    g.psf_sigma_px = psf_sigma;
    g.image_height = height;
    g.image_width = width;
    g.origin_x = std::round((static_cast<double>(width) - 1.0) / 2.0 - spacing * (static_cast<double>(cols) - 1.0) / 2.0);
    g.origin_y = std::round((static_cast<double>(height) - 1.0) / 2.0 - spacing * (static_cast<double>(rows) - 1.0) / 2.0);
    return g;
  }

  void validate() const {
    if (rows == 0 || cols == 0) throw ValidationError("geometry.rows and geometry.cols must be positive");
    if (!(spacing_px > 0.0)) throw ValidationError("geometry.spacing_px must be positive");
    if (!(psf_sigma_px > 0.0)) throw ValidationError("geometry.psf_sigma_px must be positive");
    if (image_height < kCropSize || image_width < kCropSize) {
      throw ValidationError("geometry.image_height/image_width must be at least 10");
    }
    const auto half = static_cast<long>(kCropSize / 2);
    for (std::size_t s = 0; s < n_sites(); ++s) {
      const auto c = site_center(s);
      const long cx = std::lround(c.x), cy = std::lround(c.y);
      if (cx - half < 0 || cx + half > static_cast<long>(image_width)) {
        throw ValidationError("geometry.origin_x: 10x10 crop of site " + std::to_string(s) +
                              " falls outside the image width");
      }
      if (cy - half < 0 || cy + half > static_cast<long>(image_height)) {
        throw ValidationError("geometry.origin_y: 10x10 crop of site " + std::to_string(s) +
                              " falls outside the image height");
      }
    }
  }

  friend bool operator==(const ArrayGeometry&, const ArrayGeometry&) = default;
};

/// 3x3 at 9 px pitch in a 32x32 frame: the low-crosstalk configuration.
inline ArrayGeometry sparse_geometry() { return ArrayGeometry::centered(3, 3, 9.0, 1.2, 32, 32); }

/// 3x3 at 5 px pitch in a 28x28 frame. The PSF is wider than the sparse
/// default so that tails reach into the neighbors' square ROIs.
inline ArrayGeometry dense_geometry() { return ArrayGeometry::centered(3, 3, 5.0, 1.7, 28, 28); }

struct NoiseModel {
  double bright_photons_per_ms = 2.0;  // collected photons per ms per atom, primary path
  double dark_photons_per_ms = 0.001;  // per pixel background / stray light
  double em_gain = 20.0;
  double read_noise_rms = 10.0;  // counts
  double baseline_offset = 100.0;  // counts
  double secondary_efficiency = 0.6;

  void validate() const {
    if (!(dark_photons_per_ms >= 0.0)) throw ValidationError("noise.dark_photons_per_ms must be >= 0");
    if (!(bright_photons_per_ms > dark_photons_per_ms)) {
      throw ValidationError("noise.bright_photons_per_ms must exceed noise.dark_photons_per_ms");
    }
    if (!(em_gain >= 1.0)) throw ValidationError("noise.em_gain must be >= 1");
    if (!(read_noise_rms >= 0.0)) throw ValidationError("noise.read_noise_rms must be >= 0");
    if (!(secondary_efficiency > 0.0 && secondary_efficiency <= 1.0)) {
      throw ValidationError("noise.secondary_efficiency must lie in (0, 1]");
    }
  }

  friend bool operator==(const NoiseModel&, const NoiseModel&) = default;
};

enum class Path { primary, secondary };

inline const char* path_name(Path p) { return p == Path::primary ? "primary" : "secondary"; }

using Occupancy = std::vector<std::uint8_t>;

struct SimConfig {
  ArrayGeometry geometry;
  NoiseModel noise;
  std::size_t n_images = 3000;
  double p_fill = 0.5;
  std::vector<double> exposures_ms{10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  std::uint64_t seed = 1;

  void validate() const {
    geometry.validate();
    noise.validate();
    if (n_images == 0) throw ValidationError("sim.n_images must be positive");
    if (!(p_fill >= 0.0 && p_fill <= 1.0)) throw ValidationError("sim.p_fill must lie in [0, 1]");
    if (exposures_ms.empty()) throw ValidationError("sim.exposures_ms must not be empty");
    for (double e : exposures_ms) {
      if (!(e > 0.0)) throw ValidationError("sim.exposures_ms entries must be positive");
    }
  }
};

struct FramePair {
  Frame primary;
  Frame secondary;
  Occupancy truth;
  double exposure_ms = 0.0;
};

struct SimDataset {
  ArrayGeometry geometry;
  NoiseModel noise;
  double exposure_ms = 0.0;
  std::uint64_t seed = 0;
  std::vector<FramePair> pairs;

  std::size_t n_sites() const noexcept { return geometry.n_sites(); }

  std::vector<Frame> frames(Path p) const {
    std::vector<Frame> out;
    out.reserve(pairs.size());
    for (const auto& fp : pairs) out.push_back(p == Path::primary ? fp.primary : fp.secondary);
    return out;
  }

  /// Truth labels, image-major then site.
  std::vector<std::uint8_t> truth() const {
    std::vector<std::uint8_t> out;
    out.reserve(pairs.size() * n_sites());
    for (const auto& fp : pairs) out.insert(out.end(), fp.truth.begin(), fp.truth.end());
    return out;
  }
};

// splitmix64 finalizer; derives independent per-frame stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) {
  return mix_seed(master ^ mix_seed(index + 0x5eedull));
}

using Rng = std::mt19937_64;

inline Occupancy sample_occupancy(const ArrayGeometry& geometry, double p_fill, Rng& rng) {
  if (!(p_fill >= 0.0 && p_fill <= 1.0)) throw ValidationError("p_fill must lie in [0, 1]");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Occupancy occ(geometry.n_sites());
  for (auto& o : occ) o = u(rng) < p_fill ? 1 : 0;
  return occ;
}

/// Mass of a 1-D Gaussian N(center, sigma^2) inside [lo, hi].
inline double gaussian_interval_mass(double lo, double hi, double center, double sigma) {
  const double s = sigma * std::sqrt(2.0);
  return 0.5 * (std::erf((hi - center) / s) - std::erf((lo - center) / s));
}

/// Precomputed per-site PSF pixel masses for one geometry.
class Renderer {
 public:
  explicit Renderer(ArrayGeometry geometry) : geometry_(std::move(geometry)) {
    geometry_.validate();
    const std::size_t h = geometry_.image_height, w = geometry_.image_width;
    psf_.resize(geometry_.n_sites());
    for (std::size_t s = 0; s < geometry_.n_sites(); ++s) {
      const auto c = geometry_.site_center(s);
      std::vector<double> fx(w), fy(h);
      for (std::size_t x = 0; x < w; ++x) {
        fx[x] = gaussian_interval_mass(static_cast<double>(x) - 0.5, static_cast<double>(x) + 0.5, c.x,
                                       geometry_.psf_sigma_px);
      }
      for (std::size_t y = 0; y < h; ++y) {
        fy[y] = gaussian_interval_mass(static_cast<double>(y) - 0.5, static_cast<double>(y) + 0.5, c.y,
                                       geometry_.psf_sigma_px);
      }
      auto& m = psf_[s];
      m.resize(h * w);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) m[y * w + x] = fy[y] * fx[x];
      }
    }
  }

  const ArrayGeometry& geometry() const noexcept { return geometry_; }
  std::span<const double> psf_mass(std::size_t site) const { return psf_.at(site); }

  /// Expected photo-electrons per pixel (before EM gain).
  std::vector<double> expected_photons(const Occupancy& occ, const NoiseModel& noise, double exposure_ms,
                                       Path path) const {
    if (occ.size() != geometry_.n_sites()) throw ShapeError("occupancy length does not match geometry");
    const double eff = path == Path::primary ? 1.0 : noise.secondary_efficiency;
    const std::size_t n = geometry_.image_height * geometry_.image_width;
    std::vector<double> lambda(n, eff * exposure_ms * noise.dark_photons_per_ms);
    const double bright = eff * exposure_ms * noise.bright_photons_per_ms;
    for (std::size_t s = 0; s < occ.size(); ++s) {
      if (!occ[s]) continue;
      for (std::size_t p = 0; p < n; ++p) lambda[p] += bright * psf_[s][p];
    }
    return lambda;
  }

  Frame render(const Occupancy& occ, const NoiseModel& noise, double exposure_ms, Path path, Rng& rng) const {
    if (!(exposure_ms > 0.0)) throw ValidationError("exposure_ms must be positive");
    const auto lambda = expected_photons(occ, noise, exposure_ms, path);
    Frame f(geometry_.image_height, geometry_.image_width);
    std::normal_distribution<double> read(0.0, 1.0);
    for (std::size_t p = 0; p < lambda.size(); ++p) {
      double counts = noise.baseline_offset;
      if (lambda[p] > 0.0) {
        std::poisson_distribution<long> photons(lambda[p]);
        const long k = photons(rng);
        if (k > 0) {
          std::gamma_distribution<double> em(static_cast<double>(k), noise.em_gain);
          counts += em(rng);
        }
      }
      if (noise.read_noise_rms > 0.0) counts += noise.read_noise_rms * read(rng);
      f.pixels[p] = static_cast<float>(counts);
    }
    return f;
  }

 private:
  ArrayGeometry geometry_;
  std::vector<std::vector<double>> psf_;
};

inline Frame render_frame(const ArrayGeometry& geometry, const Occupancy& occupancy, const NoiseModel& noise,
                          double exposure_ms, Path path, Rng& rng) {
  return Renderer(geometry).render(occupancy, noise, exposure_ms, path, rng);
}

/// Frame i draws its occupancy, then its primary frame, then its secondary
/// frame from a stream seeded by (seed, i); generation order does not matter.
inline SimDataset generate_dataset(const SimConfig& cfg, double exposure_ms, std::uint64_t seed) {
  cfg.validate();
  if (!(exposure_ms > 0.0)) throw ValidationError("exposure_ms must be positive");
  const Renderer renderer(cfg.geometry);
  SimDataset ds{cfg.geometry, cfg.noise, exposure_ms, seed, {}};
  ds.pairs.resize(cfg.n_images);
  for (std::size_t i = 0; i < cfg.n_images; ++i) {
    Rng rng(stream_seed(seed, i));
    auto& fp = ds.pairs[i];
    fp.truth = sample_occupancy(cfg.geometry, cfg.p_fill, rng);
    fp.primary = renderer.render(fp.truth, cfg.noise, exposure_ms, Path::primary, rng);
    fp.secondary = renderer.render(fp.truth, cfg.noise, exposure_ms, Path::secondary, rng);
    fp.exposure_ms = exposure_ms;
  }
  return ds;
}

inline SimDataset generate_dataset(const SimConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return generate_dataset(cfg, cfg.exposures_ms.front(), seed);
}

/// (mu_bright - mu_dark) / mean(sigma_bright, sigma_dark), each class fitted
/// by its maximum-likelihood Gaussian.
inline double separation_from_values(std::span<const double> values, std::span<const std::uint8_t> truth) {
  if (values.size() != truth.size()) throw ShapeError("values and truth differ in length");
  double sum[2] = {0, 0}, sum2[2] = {0, 0};
  std::size_t n[2] = {0, 0};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int c = truth[i] ? 1 : 0;
    sum[c] += values[i];
    ++n[c];
  }
  if (n[0] == 0 || n[1] == 0) throw FitError("separation undefined: a truth class is empty");
  const double mean[2] = {sum[0] / static_cast<double>(n[0]), sum[1] / static_cast<double>(n[1])};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int c = truth[i] ? 1 : 0;
    sum2[c] += (values[i] - mean[c]) * (values[i] - mean[c]);
  }
  const double sd0 = std::sqrt(sum2[0] / static_cast<double>(n[0]));
  const double sd1 = std::sqrt(sum2[1] / static_cast<double>(n[1]));
  const double pooled = 0.5 * (sd0 + sd1);
  if (!(pooled > 0.0)) return mean[1] == mean[0] ? 0.0 : std::copysign(INFINITY, mean[1] - mean[0]);
  return (mean[1] - mean[0]) / pooled;
}

/// Sum of pixels whose centers lie within the (2 sigma)-side square around c.
inline double square_roi_sum(const Frame& f, SiteCenter c, double half_side) {
  double total = 0.0;
  const long x0 = std::max(0L, static_cast<long>(std::ceil(c.x - half_side)));
  const long x1 = std::min(static_cast<long>(f.width) - 1, static_cast<long>(std::floor(c.x + half_side)));
  const long y0 = std::max(0L, static_cast<long>(std::ceil(c.y - half_side)));
  const long y1 = std::min(static_cast<long>(f.height) - 1, static_cast<long>(std::floor(c.y + half_side)));
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) total += f.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  }
  return total;
}

inline double measure_separation(std::span<const Frame> frames, std::span<const std::uint8_t> truth,
                                 const ArrayGeometry& geometry) {
  const std::size_t n_sites = geometry.n_sites();
  if (truth.size() != frames.size() * n_sites) throw ShapeError("truth does not cover every (image, site)");
  std::vector<double> values;
  values.reserve(truth.size());
  const auto centers = geometry.site_centers();
  for (const auto& f : frames) {
    for (const auto& c : centers) values.push_back(square_roi_sum(f, c, geometry.psf_sigma_px));
  }
  return separation_from_values(values, truth);
}

inline double measure_separation(const SimDataset& ds, Path path) {
  const auto frames = ds.frames(path);
  return measure_separation(frames, ds.truth(), ds.geometry);
}

/// Bisects bright_photons_per_ms (log scale) until the measured separation on
/// `path` at `exposure_ms` matches `target_sigma`. Uses common random numbers
/// across iterations so the objective is smooth in the rate.
inline double calibrate_bright_rate(SimConfig cfg, double exposure_ms, double target_sigma, Path path,
                                    std::size_t n_frames = 2000, std::uint64_t seed = 7) {
  cfg.n_images = n_frames;
  const Renderer renderer(cfg.geometry);
  std::vector<Occupancy> occ(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    Rng rng(stream_seed(seed, i));
    occ[i] = sample_occupancy(cfg.geometry, cfg.p_fill, rng);
  }
  auto separation_at = [&](double rate) {
    NoiseModel noise = cfg.noise;
    noise.bright_photons_per_ms = rate;
    std::vector<Frame> frames(n_frames);
    std::vector<std::uint8_t> truth;
    for (std::size_t i = 0; i < n_frames; ++i) {
      Rng rng(stream_seed(seed ^ 0xca1ull, i));
      frames[i] = renderer.render(occ[i], noise, exposure_ms, path, rng);
      truth.insert(truth.end(), occ[i].begin(), occ[i].end());
    }
    return measure_separation(frames, truth, cfg.geometry);
  };
  double lo = std::max(cfg.noise.dark_photons_per_ms * 1.001, 1e-3), hi = 1e3;
  for (int it = 0; it < 40; ++it) {
    const double mid = std::sqrt(lo * hi);
    if (separation_at(mid) < target_sigma) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::sqrt(lo * hi);
}

/// One single-path A-B-A sequence: two high-fidelity readouts bracketing a
/// noisy one.
struct AbaTriple {
  Frame a1, b, a2;
  Occupancy truth_a1, truth_b, truth_a2;
};

/// Each loaded atom is lost with `loss_probability` per sequence; a lost atom
/// disappears before B or between B and A2 with equal odds.
inline std::vector<AbaTriple> generate_aba_sequences(const SimConfig& cfg, double exposure_a_ms,
                                                     double exposure_b_ms, double loss_probability,
                                                     std::size_t n, std::uint64_t seed) {
  cfg.validate();
  if (!(loss_probability >= 0.0 && loss_probability <= 1.0)) {
    throw ValidationError("loss_probability must lie in [0, 1]");
  }
  const Renderer renderer(cfg.geometry);
  std::vector<AbaTriple> out(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(stream_seed(seed, i));
    auto& t = out[i];
    t.truth_a1 = sample_occupancy(cfg.geometry, cfg.p_fill, rng);
    t.truth_b = t.truth_a1;
    t.truth_a2 = t.truth_a1;
    for (std::size_t s = 0; s < t.truth_a1.size(); ++s) {
      if (t.truth_a1[s] && u(rng) < loss_probability) {
        if (u(rng) < 0.5) t.truth_b[s] = 0;
        t.truth_a2[s] = 0;
      }
    }
    t.a1 = renderer.render(t.truth_a1, cfg.noise, exposure_a_ms, Path::primary, rng);
    t.b = renderer.render(t.truth_b, cfg.noise, exposure_b_ms, Path::primary, rng);
    t.a2 = renderer.render(t.truth_a2, cfg.noise, exposure_a_ms, Path::primary, rng);
  }
  return out;
}

}  // namespace naqr::sim
