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

// Mask-and-threshold readout: fit each site's spot on the mean training
// image, integrate every frame under a per-site mask, and threshold the
// integrated counts at the crossing of a two-Gaussian histogram fit.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "naqr/error.hpp"
#include "naqr/frame.hpp"
#include "naqr/simulator.hpp"

namespace naqr::baseline {

using sim::SiteCenter;

inline Frame average_frames(std::span<const Frame> frames) {
  if (frames.empty()) throw ShapeError("cannot average an empty frame list");
  std::vector<double> acc(frames[0].size(), 0.0);
  for (const auto& f : frames) {
    if (!f.same_shape(frames[0])) throw ShapeError("frames differ in shape");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f.pixels[i];
  }
  Frame out(frames[0].height, frames[0].width);
  const double n = static_cast<double>(frames.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out.pixels[i] = static_cast<float>(acc[i] / n);
  return out;
}

/// offset + amplitude * exp(-((x-cx)^2 + (y-cy)^2) / (2 sigma^2))
struct SpotFit {
  double center_x = 0.0;
  double center_y = 0.0;
  double sigma = 1.0;
  double amplitude = 0.0;
  double offset = 0.0;
  bool from_moments = false;  // centroid fallback rather than a converged fit

  SiteCenter center() const { return {center_x, center_y}; }
};

struct SpotFitOptions {
  std::size_t half_window = 2;  // fit window is (2h+1) x (2h+1) around the guess
  std::size_t max_iterations = 200;
  double tolerance = 1e-10;
  bool allow_moment_fallback = true;
  // Refines all sites together over the union of their windows, so that
  // overlapping tails at tight pitch are modeled instead of widening each fit.
  bool joint_refine = true;
};

/// Window half-width that keeps neighbor spots out of the fit window.
inline std::size_t default_half_window(double spacing_px) {
  const auto h = static_cast<long>(std::floor((spacing_px - 1.0) / 2.0));
  return static_cast<std::size_t>(std::clamp(h, 2L, 4L));
}

namespace detail {

struct Window {
  long x0, x1, y0, y1;
};

inline Window window_around(const Frame& f, SiteCenter guess, std::size_t half) {
  const long cx = std::lround(guess.x), cy = std::lround(guess.y);
  const long h = static_cast<long>(half);
  Window w{std::max(0L, cx - h), std::min(static_cast<long>(f.width) - 1, cx + h), std::max(0L, cy - h),
           std::min(static_cast<long>(f.height) - 1, cy + h)};
  if (w.x1 - w.x0 < 2 || w.y1 - w.y0 < 2) throw FitError("spot fit window falls outside the image");
  return w;
}

}  // namespace detail

/// Intensity-weighted centroid and second moment over the window, after
/// subtracting the window minimum.
inline SpotFit moment_spot(const Frame& image, SiteCenter guess, std::size_t half_window) {
  const auto w = detail::window_around(image, guess, half_window);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (long y = w.y0; y <= w.y1; ++y)
    for (long x = w.x0; x <= w.x1; ++x) {
      lo = std::min<double>(lo, image.at(y, x));
      hi = std::max<double>(hi, image.at(y, x));
    }
  double s = 0, sx = 0, sy = 0, sr = 0;
  for (long y = w.y0; y <= w.y1; ++y)
    for (long x = w.x0; x <= w.x1; ++x) {
      const double v = image.at(y, x) - lo;
      s += v;
      sx += v * x;
      sy += v * y;
    }
  if (!(s > 0.0)) throw FitError("flat spot window: no centroid");
  SpotFit fit;
  fit.center_x = sx / s;
  fit.center_y = sy / s;
  for (long y = w.y0; y <= w.y1; ++y)
    for (long x = w.x0; x <= w.x1; ++x) {
      const double dx = x - fit.center_x, dy = y - fit.center_y;
      sr += (image.at(y, x) - lo) * (dx * dx + dy * dy);
    }
  fit.sigma = std::sqrt(sr / s / 2.0);
  fit.amplitude = hi - lo;
  fit.offset = lo;
  fit.from_moments = true;
  return fit;
}

/// Levenberg-Marquardt fit of a circular Gaussian plus constant offset to the
/// window around `guess`. Throws FitError if it fails to converge or lands
/// on a non-physical solution.
inline SpotFit fit_spot(const Frame& image, SiteCenter guess, const SpotFitOptions& opt = {}) {
  const auto w = detail::window_around(image, guess, opt.half_window);
  std::vector<double> xs, ys, zs;
  for (long y = w.y0; y <= w.y1; ++y)
    for (long x = w.x0; x <= w.x1; ++x) {
      xs.push_back(static_cast<double>(x));
      ys.push_back(static_cast<double>(y));
      zs.push_back(image.at(y, x));
    }
  const auto n = static_cast<Eigen::Index>(zs.size());
  const SpotFit start = moment_spot(image, guess, opt.half_window);
  // p = [cx, cy, log sigma, amplitude, offset]
  Eigen::Matrix<double, 5, 1> p;
  p << start.center_x, start.center_y, std::log(std::max(start.sigma, 0.5)), start.amplitude, start.offset;

  auto residuals = [&](const Eigen::Matrix<double, 5, 1>& q, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    const double s = std::exp(q[2]);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dx = xs[i] - q[0], dy = ys[i] - q[1];
      const double r2 = dx * dx + dy * dy;
      const double g = std::exp(-r2 / (2 * s * s));
      r[i] = q[4] + q[3] * g - zs[i];
      if (jac) {
        (*jac)(i, 0) = q[3] * g * dx / (s * s);
        (*jac)(i, 1) = q[3] * g * dy / (s * s);
        (*jac)(i, 2) = q[3] * g * r2 / (s * s);
        (*jac)(i, 3) = g;
        (*jac)(i, 4) = 1.0;
      }
    }
  };

  Eigen::VectorXd r(n), r_try(n);
  Eigen::MatrixXd J(n, 5);
  residuals(p, r, &J);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  bool converged = false;
  for (std::size_t it = 0; it < opt.max_iterations && !converged; ++it) {
    const Eigen::Matrix<double, 5, 5> JtJ = J.transpose() * J;
    const Eigen::Matrix<double, 5, 1> g = J.transpose() * r;
    bool accepted = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Eigen::Matrix<double, 5, 5> A = JtJ;
      A.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-12);
      const Eigen::Matrix<double, 5, 1> step = A.ldlt().solve(-g);
      const Eigen::Matrix<double, 5, 1> trial = p + step;
      residuals(trial, r_try, nullptr);
      const double c = r_try.squaredNorm();
      if (std::isfinite(c) && c <= cost) {
        const double rel = (cost - c) / std::max(cost, 1e-300);
        p = trial;
        cost = c;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (rel < opt.tolerance || step.norm() < 1e-10) converged = true;
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted) {
      converged = true;  // no descent direction left: at a minimum
      break;
    }
    residuals(p, r, &J);
  }
  SpotFit fit{p[0], p[1], std::exp(p[2]), p[3], p[4], false};
  const bool inside = fit.center_x >= static_cast<double>(w.x0) - 0.5 &&
                      fit.center_x <= static_cast<double>(w.x1) + 0.5 &&
                      fit.center_y >= static_cast<double>(w.y0) - 0.5 && fit.center_y <= static_cast<double>(w.y1) + 0.5;
  if (!converged) throw FitError("spot fit did not converge");
  // A spot wider than the window trades amplitude against offset freely.
  const double max_sigma = static_cast<double>(opt.half_window) + 1.0;
  if (!(fit.amplitude > 0.0) || !inside || !(fit.sigma > 0.1) || !(fit.sigma <= max_sigma)) {
    throw FitError("spot fit converged to a non-physical solution");
  }
  return fit;
}

namespace detail {

/// One Levenberg-Marquardt fit of offset + sum of circular Gaussians over the
/// pixels of every site's window. `init` seeds the parameters. Returns
/// nothing if the fit fails or any spot ends non-physical.
inline std::optional<std::vector<SpotFit>> refine_jointly(const Frame& image, std::span<const SiteCenter> guesses,
                                                          const std::vector<SpotFit>& init,
                                                          const SpotFitOptions& opt) {
  const std::size_t k = init.size();
  std::vector<Window> wins;
  std::vector<bool> used(image.height * image.width, false);
  std::vector<double> xs, ys, zs;
  for (std::size_t s = 0; s < k; ++s) {
    wins.push_back(window_around(image, guesses[s], opt.half_window));
    const auto& w = wins.back();
    for (long y = w.y0; y <= w.y1; ++y)
      for (long x = w.x0; x <= w.x1; ++x) {
        const auto idx = static_cast<std::size_t>(y) * image.width + static_cast<std::size_t>(x);
        if (used[idx]) continue;
        used[idx] = true;
        xs.push_back(static_cast<double>(x));
        ys.push_back(static_cast<double>(y));
        zs.push_back(image.at(y, x));
      }
  }
  const auto n = static_cast<Eigen::Index>(zs.size());
  const auto np = static_cast<Eigen::Index>(4 * k + 1);
  if (n <= np) return std::nullopt;
  // p = [cx, cy, log sigma, amplitude] per site, then the shared offset
  Eigen::VectorXd p(np);
  double offset = 0.0;
  for (std::size_t s = 0; s < k; ++s) {
    const auto i = static_cast<Eigen::Index>(4 * s);
    p[i] = init[s].center_x;
    p[i + 1] = init[s].center_y;
    p[i + 2] = std::log(std::clamp(init[s].sigma, 0.5, static_cast<double>(opt.half_window)));
    p[i + 3] = std::max(init[s].amplitude, 1e-6);
    offset += init[s].offset / static_cast<double>(k);
  }
  p[np - 1] = offset;

  auto residuals = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    if (jac) jac->setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      double model = q[np - 1];
      for (std::size_t s = 0; s < k; ++s) {
        const auto b = static_cast<Eigen::Index>(4 * s);
        const double sg = std::exp(q[b + 2]);
        const double dx = xs[i] - q[b], dy = ys[i] - q[b + 1];
        const double r2 = dx * dx + dy * dy;
        const double g = std::exp(-r2 / (2 * sg * sg));
        model += q[b + 3] * g;
        if (jac) {
          (*jac)(i, b) = q[b + 3] * g * dx / (sg * sg);
          (*jac)(i, b + 1) = q[b + 3] * g * dy / (sg * sg);
          (*jac)(i, b + 2) = q[b + 3] * g * r2 / (sg * sg);
          (*jac)(i, b + 3) = g;
        }
      }
      if (jac) (*jac)(i, np - 1) = 1.0;
      r[i] = model - zs[i];
    }
  };

  Eigen::VectorXd r(n), r_try(n);
  Eigen::MatrixXd J(n, np);
  residuals(p, r, &J);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  bool converged = false;
  for (std::size_t it = 0; it < opt.max_iterations && !converged; ++it) {
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;
    bool accepted = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Eigen::MatrixXd A = JtJ;
      A.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-12);
      const Eigen::VectorXd step = A.ldlt().solve(-g);
      const Eigen::VectorXd trial = p + step;
      residuals(trial, r_try, nullptr);
      const double c = r_try.squaredNorm();
      if (std::isfinite(c) && c <= cost) {
        const double rel = (cost - c) / std::max(cost, 1e-300);
        p = trial;
        cost = c;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (rel < opt.tolerance || step.norm() < 1e-10) converged = true;
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted) {
      converged = true;
      break;
    }
    residuals(p, r, &J);
  }
  if (!converged) return std::nullopt;
  std::vector<SpotFit> out;
  const double max_sigma = static_cast<double>(opt.half_window) + 1.0;
  for (std::size_t s = 0; s < k; ++s) {
    const auto b = static_cast<Eigen::Index>(4 * s);
    SpotFit f{p[b], p[b + 1], std::exp(p[b + 2]), p[b + 3], p[np - 1], false};
    const auto& w = wins[s];
    const bool inside = f.center_x >= static_cast<double>(w.x0) - 0.5 && f.center_x <= static_cast<double>(w.x1) + 0.5 &&
                        f.center_y >= static_cast<double>(w.y0) - 0.5 && f.center_y <= static_cast<double>(w.y1) + 0.5;
    if (!(f.amplitude > 0.0) || !inside || !(f.sigma > 0.1) || !(f.sigma <= max_sigma)) return std::nullopt;
    out.push_back(f);
  }
  return out;
}

}  // namespace detail

/// One fit per site; falls back to moments for sites whose fit fails when
/// `opt.allow_moment_fallback` is set. With `opt.joint_refine`, the per-site
/// results seed a joint fit whose result replaces them if it succeeds.
inline std::vector<SpotFit> fit_site_gaussians(const Frame& mean_image, std::span<const SiteCenter> guesses,
                                               const SpotFitOptions& opt = {}) {
  std::vector<SpotFit> fits;
  for (std::size_t s = 0; s < guesses.size(); ++s) {
    try {
      fits.push_back(fit_spot(mean_image, guesses[s], opt));
    } catch (const FitError& e) {
      if (!opt.allow_moment_fallback) throw FitError("site " + std::to_string(s) + ": " + e.what());
      fits.push_back(moment_spot(mean_image, guesses[s], opt.half_window));
    }
  }
  if (opt.joint_refine && guesses.size() > 1) {
    if (auto joint = detail::refine_jointly(mean_image, guesses, fits, opt)) return std::move(*joint);
  }
  return fits;
}

/// Per-pixel weights over the full frame.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> weights;
  // Bounding box of nonzero weights (inclusive), for fast integration.
  std::size_t row0 = 0, row1 = 0, col0 = 0, col1 = 0;

  void update_bounds() {
    row0 = height;
    col0 = width;
    row1 = col1 = 0;
    bool any = false;
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        if (weights[y * width + x] != 0.0) {
          any = true;
          row0 = std::min(row0, y);
          row1 = std::max(row1, y);
          col0 = std::min(col0, x);
          col1 = std::max(col1, x);
        }
    if (!any) row0 = col0 = 1, row1 = col1 = 0;
  }
};

enum class MaskKind { gaussian, square };

inline const char* mask_kind_name(MaskKind k) { return k == MaskKind::gaussian ? "gaussian" : "square"; }

/// Unit-peak Gaussian of the fitted center and sigma, evaluated at every
/// pixel center.
inline Mask gaussian_mask(const SpotFit& fit, std::size_t height, std::size_t width) {
  Mask m{height, width, std::vector<double>(height * width)};
  const double s2 = 2.0 * fit.sigma * fit.sigma;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double dx = static_cast<double>(x) - fit.center_x, dy = static_cast<double>(y) - fit.center_y;
      m.weights[y * width + x] = std::exp(-(dx * dx + dy * dy) / s2);
    }
  m.update_bounds();
  return m;
}

/// Binary square of side 2 sigma centered on the fit: pixels whose centers lie
/// within sigma of the center along both axes.
inline Mask square_mask(const SpotFit& fit, std::size_t height, std::size_t width) {
  Mask m{height, width, std::vector<double>(height * width, 0.0)};
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      if (std::abs(static_cast<double>(x) - fit.center_x) <= fit.sigma &&
          std::abs(static_cast<double>(y) - fit.center_y) <= fit.sigma) {
        m.weights[y * width + x] = 1.0;
      }
    }
  m.update_bounds();
  if (m.row0 > m.row1) throw FitError("square mask contains no pixels");
  return m;
}

inline Mask build_mask(MaskKind kind, const SpotFit& fit, std::size_t height, std::size_t width) {
  return kind == MaskKind::gaussian ? gaussian_mask(fit, height, width) : square_mask(fit, height, width);
}

inline double integrate(const Frame& frame, const Mask& mask) {
  if (frame.height != mask.height || frame.width != mask.width) throw ShapeError("mask and frame differ in shape");
  double total = 0.0;
  for (std::size_t y = mask.row0; y <= mask.row1 && y < mask.height; ++y) {
    const float* row = frame.pixels.data() + y * frame.width;
    const double* w = mask.weights.data() + y * mask.width;
    for (std::size_t x = mask.col0; x <= mask.col1; ++x) total += w[x] * row[x];
  }
  return total;
}

/// A * exp(-(x - mean)^2 / (2 sigma^2)), in histogram-count units.
struct GaussianComponent {
  double amplitude = 0.0;
  double mean = 0.0;
  double sigma = 1.0;

  double operator()(double x) const {
    const double d = (x - mean) / sigma;
    return amplitude * std::exp(-0.5 * d * d);
  }
};

struct MixtureFit {
  GaussianComponent dark;  // lower mean
  GaussianComponent bright;
  double bin_width = 0.0;
  std::size_t n_values = 0;

  /// Separation in units of the mean of the two sigmas.
  double separation() const { return (bright.mean - dark.mean) / (0.5 * (dark.sigma + bright.sigma)); }
};

struct MixtureOptions {
  std::size_t bins = 100;
  std::size_t max_iterations = 500;
  // Ashman's D = sqrt(2) |mu_b - mu_d| / sqrt(s_d^2 + s_b^2) below this means
  // the fit found one mode, not two. EM noise makes the bright peak ~10x
  // wider than the dark one, so genuine low-SNR mixtures sit near D = 1.
  double min_bimodality = 0.5;
  // Residual improvement over a single Gaussian, as an F statistic with
  // (3, bins - 6) degrees of freedom.
  double min_f_ratio = 10.0;
  // Side-moment separation accepted when a peak is narrower than one bin.
  double resolved_separation = 6.0;
};

struct Histogram1D {
  double lo = 0.0;
  double width = 1.0;
  std::vector<double> counts;

  double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * width; }
};

inline Histogram1D histogram(std::span<const double> values, std::size_t bins) {
  if (values.empty() || bins == 0) throw FitError("histogram of empty data");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  Histogram1D h;
  h.lo = *mn;
  h.width = (*mx - *mn) / static_cast<double>(bins);
  h.counts.assign(bins, 0.0);
  if (!(h.width > 0.0)) throw FitError("all values identical: histogram has zero width");
  for (double v : values) {
    auto i = static_cast<std::size_t>((v - h.lo) / h.width);
    h.counts[std::min(i, bins - 1)] += 1.0;
  }
  return h;
}

namespace detail {

/// Largest gap between adjacent sorted values, looking only between the
/// 5th and 95th percentile ranks so isolated tail values cannot win.
inline double largest_gap_split(std::span<const double> sorted) {
  const std::size_t n = sorted.size();
  const std::size_t lo = std::max<std::size_t>(1, n / 20), hi = std::max(lo + 1, n - n / 20);
  std::size_t best = lo;
  for (std::size_t i = lo; i < std::min(hi, n); ++i) {
    if (sorted[i] - sorted[i - 1] > sorted[best] - sorted[best - 1]) best = i;
  }
  return 0.5 * (sorted[best] + sorted[best - 1]);
}

/// Two-means threshold iterated from the median.
inline double two_means_split(std::span<const double> sorted) {
  double split = sorted[sorted.size() / 2];
  for (int it = 0; it < 100; ++it) {
    double m0 = 0, m1 = 0;
    std::size_t n0 = 0, n1 = 0;
    for (double v : sorted) {
      if (v <= split) {
        m0 += v;
        ++n0;
      } else {
        m1 += v;
        ++n1;
      }
    }
    if (n0 == 0 || n1 == 0) break;
    const double next = 0.5 * (m0 / static_cast<double>(n0) + m1 / static_cast<double>(n1));
    if (next == split) break;
    split = next;
  }
  return split;
}

struct MixtureAttempt {
  std::optional<MixtureFit> fit;
  double cost = std::numeric_limits<double>::infinity();
  std::string error;
  bool collapsed = false;
};

/// Levenberg-Marquardt fit of a sum of K scaled Gaussians to the histogram.
/// Parameters per component: [A, mu, log s].
template <int K>
struct HistogramLm {
  using Vec = Eigen::Matrix<double, 3 * K, 1>;
  Vec q;
  double cost = 0.0;
  bool converged = false;
};

template <int K>
HistogramLm<K> fit_histogram_lm(const Histogram1D& h, typename HistogramLm<K>::Vec q, std::size_t max_iterations) {
  using Vec = typename HistogramLm<K>::Vec;
  using Mat = Eigen::Matrix<double, 3 * K, 3 * K>;
  const auto nb = static_cast<Eigen::Index>(h.counts.size());
  auto residuals = [&](const Vec& p, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    for (Eigen::Index i = 0; i < nb; ++i) {
      const double x = h.center(static_cast<std::size_t>(i));
      double model = 0.0;
      for (int k = 0; k < K; ++k) {
        const double a = p[3 * k], mu = p[3 * k + 1], s = std::exp(p[3 * k + 2]);
        const double d = (x - mu) / s;
        const double g = std::exp(-0.5 * d * d);
        model += a * g;
        if (jac) {
          (*jac)(i, 3 * k) = g;
          (*jac)(i, 3 * k + 1) = a * g * d / s;
          (*jac)(i, 3 * k + 2) = a * g * d * d;
        }
      }
      r[i] = model - h.counts[static_cast<std::size_t>(i)];
    }
  };
  Eigen::VectorXd r(nb), r_try(nb);
  Eigen::MatrixXd J(nb, 3 * K);
  residuals(q, r, &J);
  HistogramLm<K> out{q, r.squaredNorm(), false};
  double lambda = 1e-3;
  for (std::size_t it = 0; it < max_iterations && !out.converged; ++it) {
    const Mat JtJ = J.transpose() * J;
    const Vec g = J.transpose() * r;
    bool accepted = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Mat A = JtJ;
      A.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-12);
      const Vec step = A.ldlt().solve(-g);
      const Vec trial = out.q + step;
      residuals(trial, r_try, nullptr);
      const double c = r_try.squaredNorm();
      if (std::isfinite(c) && c <= out.cost) {
        const double rel = (out.cost - c) / std::max(out.cost, 1e-300);
        out.q = trial;
        out.cost = c;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (rel < 1e-12 || step.norm() < 1e-12 * (1.0 + out.q.norm())) out.converged = true;
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted) {
      out.converged = true;  // no further descent: stationary point
      break;
    }
    residuals(out.q, r, &J);
  }
  return out;
}

struct SideMoments {
  double n0 = 0, m0 = 0, s0 = 0, n1 = 0, m1 = 0, s1 = 0;
};

inline SideMoments side_moments(std::span<const double> sorted, double split) {
  SideMoments m;
  for (double v : sorted) {
    if (v <= split) {
      m.m0 += v;
      ++m.n0;
    } else {
      m.m1 += v;
      ++m.n1;
    }
  }
  if (m.n0 == 0 || m.n1 == 0) return m;
  m.m0 /= m.n0;
  m.m1 /= m.n1;
  for (double v : sorted) {
    if (v <= split) {
      m.s0 += (v - m.m0) * (v - m.m0);
    } else {
      m.s1 += (v - m.m1) * (v - m.m1);
    }
  }
  m.s0 = std::sqrt(m.s0 / m.n0);
  m.s1 = std::sqrt(m.s1 / m.n1);
  return m;
}

/// Two-component fit started from the moments of the two sides of `split`.
inline MixtureAttempt fit_mixture_from(const Histogram1D& h, std::span<const double> sorted, double split,
                                       std::size_t n_values, std::size_t max_iterations) {
  const auto m = side_moments(sorted, split);
  if (m.n0 == 0 || m.n1 == 0) return {std::nullopt, std::numeric_limits<double>::infinity(), "initial split left a component empty"};
  const double s0 = std::max(m.s0, h.width), s1 = std::max(m.s1, h.width);
  const double norm = h.width / std::sqrt(2.0 * M_PI);
  typename HistogramLm<2>::Vec q;
  q << m.n0 * norm / s0, m.m0, std::log(s0), m.n1 * norm / s1, m.m1, std::log(s1);
  const auto lm = fit_histogram_lm<2>(h, q, max_iterations);
  if (!lm.converged) return {std::nullopt, lm.cost, "two-Gaussian histogram fit did not converge"};

  GaussianComponent a{lm.q[0], lm.q[1], std::exp(lm.q[2])}, b{lm.q[3], lm.q[4], std::exp(lm.q[5])};
  if (a.mean > b.mean) std::swap(a, b);
  if (!(a.amplitude > 0.0) || !(b.amplitude > 0.0)) return {std::nullopt, lm.cost, "mixture component with non-positive amplitude"};
  if (a.sigma < h.width || b.sigma < h.width) {
    return {std::nullopt, lm.cost, "mixture component collapsed below one bin width", true};
  }
  return {MixtureFit{a, b, h.width, n_values}, lm.cost, {}};
}

/// Residual of the best single-Gaussian fit, the null model for the
/// bimodality test.
inline double single_gaussian_cost(const Histogram1D& h, std::span<const double> sorted, std::size_t max_iterations) {
  double mean = 0.0, var = 0.0;
  for (double v : sorted) mean += v;
  mean /= static_cast<double>(sorted.size());
  for (double v : sorted) var += (v - mean) * (v - mean);
  const double s = std::max(std::sqrt(var / static_cast<double>(sorted.size())), h.width);
  typename HistogramLm<1>::Vec q;
  q << static_cast<double>(sorted.size()) * h.width / (std::sqrt(2.0 * M_PI) * s), mean, std::log(s);
  return fit_histogram_lm<1>(h, q, max_iterations).cost;
}

inline double ashman_d(const GaussianComponent& a, const GaussianComponent& b) {
  return std::sqrt(2.0) * std::abs(b.mean - a.mean) / std::hypot(a.sigma, b.sigma);
}

}  // namespace detail

/// Least-squares fit of two Gaussians to the histogram of `values`. LM is
/// started from the largest-gap split and from a two-means split; the valid
/// fit with the lower residual wins. The winner must beat a single Gaussian
/// by an F-ratio of at least `min_f_ratio` and have Ashman's D of at least
/// `min_bimodality`.
///
/// When the classes are so far apart that one peak is narrower than a bin,
/// the histogram cannot resolve it; if the split sides are then separated by
/// D >= `resolved_separation`, the components come from the side moments.
inline MixtureFit fit_two_gaussian_mixture(std::span<const double> values, const MixtureOptions& opt = {}) {
  if (values.size() < 4) throw FitError("too few values for a two-component fit");
  const Histogram1D h = histogram(values, opt.bins);
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());

  std::optional<detail::MixtureAttempt> best;
  std::string first_error;
  std::optional<MixtureFit> from_moments;
  for (double split : {detail::largest_gap_split(sorted), detail::two_means_split(sorted)}) {
    auto a = detail::fit_mixture_from(h, sorted, split, values.size(), opt.max_iterations);
    if (!a.fit) {
      if (first_error.empty()) first_error = a.error;
      if (a.collapsed && !from_moments) {
        const auto m = detail::side_moments(sorted, split);
        const double s0 = std::max(m.s0, 1e-12 * h.width), s1 = std::max(m.s1, 1e-12 * h.width);
        const double norm = h.width / std::sqrt(2.0 * M_PI);
        const GaussianComponent d{m.n0 * norm / s0, m.m0, s0}, b{m.n1 * norm / s1, m.m1, s1};
        if (detail::ashman_d(d, b) >= opt.resolved_separation) from_moments = MixtureFit{d, b, h.width, values.size()};
      }
      continue;
    }
    if (!best || a.cost < best->cost) best = std::move(a);
  }
  if (!best) {
    if (from_moments) return *from_moments;
    throw FitError(first_error);
  }
  const auto& f = *best->fit;
  const double dof = static_cast<double>(h.counts.size()) - 6.0;
  const double single = detail::single_gaussian_cost(h, sorted, opt.max_iterations);
  const double f_ratio = ((single - best->cost) / 3.0) / std::max(best->cost / dof, 1e-300);
  if (!(f_ratio >= opt.min_f_ratio)) throw FitError("histogram is not bimodal (one Gaussian fits as well as two)");
  if (!(detail::ashman_d(f.dark, f.bright) >= opt.min_bimodality)) {
    throw FitError("histogram is not bimodal (components overlap)");
  }
  return f;
}

/// Crossing of the two fitted curves between their means:
///   A_d exp(-(x-mu_d)^2 / 2s_d^2) = A_b exp(-(x-mu_b)^2 / 2s_b^2)
/// solved in closed form. This is also the single threshold minimizing the
/// fitted misclassification mass.
inline double compute_threshold(const MixtureFit& fit) {
  const auto& d = fit.dark;
  const auto& b = fit.bright;
  if (!(d.mean < b.mean)) throw FitError("threshold needs distinct component means");
  const double a = 1.0 / (2 * b.sigma * b.sigma) - 1.0 / (2 * d.sigma * d.sigma);
  const double bb = d.mean / (d.sigma * d.sigma) - b.mean / (b.sigma * b.sigma);
  const double c = b.mean * b.mean / (2 * b.sigma * b.sigma) - d.mean * d.mean / (2 * d.sigma * d.sigma) +
                   std::log(d.amplitude / b.amplitude);
  std::vector<double> roots;
  const double scale = std::abs(bb) + std::abs(c) / std::max(std::abs(d.mean) + std::abs(b.mean), 1.0);
  if (std::abs(a) <= 1e-14 * std::max(scale, 1e-300)) {
    roots.push_back(-c / bb);
  } else {
    const double disc = bb * bb - 4 * a * c;
    if (disc < 0) throw FitError("fitted curves do not cross");
    const double sq = std::sqrt(disc);
    const double qq = -0.5 * (bb + std::copysign(sq, bb));
    if (qq != 0.0) {
      roots.push_back(qq / a);
      roots.push_back(c / qq);
    } else {
      roots.push_back(-bb / (2 * a));
    }
  }
  std::optional<double> best;
  for (double x : roots) {
    if (x > d.mean && x < b.mean && (!best || std::abs(x - 0.5 * (d.mean + b.mean)) <
                                                  std::abs(*best - 0.5 * (d.mean + b.mean)))) {
      best = x;
    }
  }
  if (!best) throw FitError("no curve crossing between the component means");
  return *best;
}

/// Strictly above the threshold is bright; equality is dark.
inline std::uint8_t classify_threshold(double value, double threshold) { return value > threshold ? 1 : 0; }

enum class ThresholdMode { per_site, global };

inline const char* threshold_mode_name(ThresholdMode m) {
  return m == ThresholdMode::per_site ? "per-site" : "global";
}

/// A fitted Gaussian-mask or square-mask classifier for one array geometry.
class MaskClassifier {
 public:
  struct Options {
    MaskKind kind = MaskKind::gaussian;
    ThresholdMode mode = ThresholdMode::per_site;
    SpotFitOptions spot;
    MixtureOptions mixture;
  };

  /// Fits spots on the mean of `training`, then one mixture per site (or one
  /// pooled mixture in global mode) on the training integrals.
  static MaskClassifier fit(std::span<const Frame> training, std::span<const SiteCenter> guesses,
                            const Options& opt) {
    if (training.empty()) throw FitError("mask classifier needs training frames");
    MaskClassifier c;
    c.opt_ = opt;
    c.height_ = training[0].height;
    c.width_ = training[0].width;
    c.spots_ = fit_site_gaussians(average_frames(training), guesses, opt.spot);
    for (const auto& s : c.spots_) c.masks_.push_back(build_mask(opt.kind, s, c.height_, c.width_));
    const std::size_t n_sites = guesses.size();
    std::vector<std::vector<double>> values(n_sites);
    for (const auto& f : training) {
      for (std::size_t s = 0; s < n_sites; ++s) values[s].push_back(integrate(f, c.masks_[s]));
    }
    if (opt.mode == ThresholdMode::per_site) {
      for (std::size_t s = 0; s < n_sites; ++s) {
        try {
          c.mixtures_.push_back(fit_two_gaussian_mixture(values[s], opt.mixture));
          c.thresholds_.push_back(compute_threshold(c.mixtures_.back()));
        } catch (const FitError& e) {
          throw FitError("site " + std::to_string(s) + ": " + e.what());
        }
      }
    } else {
      std::vector<double> pooled;
      for (const auto& v : values) pooled.insert(pooled.end(), v.begin(), v.end());
      const auto m = fit_two_gaussian_mixture(pooled, opt.mixture);
      const double t = compute_threshold(m);
      c.mixtures_.assign(n_sites, m);
      c.thresholds_.assign(n_sites, t);
    }
    return c;
  }

  std::size_t n_sites() const noexcept { return masks_.size(); }
  const std::vector<SpotFit>& spots() const noexcept { return spots_; }
  const std::vector<Mask>& masks() const noexcept { return masks_; }
  const std::vector<MixtureFit>& mixtures() const noexcept { return mixtures_; }
  const std::vector<double>& thresholds() const noexcept { return thresholds_; }
  const Options& options() const noexcept { return opt_; }

  double integrate_site(const Frame& f, std::size_t site) const {
    if (f.height != height_ || f.width != width_) throw ShapeError("frame shape differs from training frames");
    return integrate(f, masks_.at(site));
  }

  std::uint8_t classify_site(const Frame& f, std::size_t site) const {
    return classify_threshold(integrate_site(f, site), thresholds_.at(site));
  }

  std::vector<std::uint8_t> classify(const Frame& f) const {
    std::vector<std::uint8_t> out(n_sites());
    for (std::size_t s = 0; s < out.size(); ++s) out[s] = classify_site(f, s);
    return out;
  }

  /// Labels for every frame, image-major.
  std::vector<std::uint8_t> classify_all(std::span<const Frame> frames) const {
    std::vector<std::uint8_t> out;
    out.reserve(frames.size() * n_sites());
    for (const auto& f : frames) {
      const auto l = classify(f);
      out.insert(out.end(), l.begin(), l.end());
    }
    return out;
  }

 private:
  Options opt_;
  std::size_t height_ = 0, width_ = 0;
  std::vector<SpotFit> spots_;
  std::vector<Mask> masks_;
  std::vector<MixtureFit> mixtures_;
  std::vector<double> thresholds_;
};

}  // namespace naqr::baseline
