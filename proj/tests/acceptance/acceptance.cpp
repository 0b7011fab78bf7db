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

// Acceptance suite. Each criterion prints its measurements followed by one
// PASS/FAIL line; the exit status is nonzero if any selected criterion fails.
//
//   naqr_acceptance                  run every criterion
//   naqr_acceptance --criterion 3    run one (repeatable)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "naqr/experiment.hpp"
#include "support/metric_oracles.hpp"
#include "support/nn_oracles.hpp"

namespace naqr {
namespace {

using experiment::Method;

struct Verdict {
  bool pass = true;
  std::string summary;
};

/// Prints one indented measurement line and folds it into the verdict.
void check(Verdict& v, bool ok, const std::string& what) {
  std::cout << "    " << (ok ? "ok   " : "FAIL ") << what << '\n';
  v.pass &= ok;
}

std::string num(double x, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << x;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

pipeline::LabeledDataset truth_labeled(const sim::SimDataset& ds) {
  pipeline::LabeledDataset out;
  out.frames = ds.frames(sim::Path::secondary);
  out.labels = ds.truth();
  out.truth = ds.truth();
  out.n_sites = ds.n_sites();
  out.provenance = pipeline::Provenance::simulator_truth;
  return out;
}

// Reduced CNN-array used wherever the full-width network would not train in
// the time budget on one core.
arch::CnnArraySpec reduced_array_spec() { return {28, 28, {16, 32, 32}, {16, 16, 2}}; }

// ------------------------------------------------------------------ 1

Verdict architecture_counts() {
  Verdict v{true, "layer parameter counts"};
  const auto site = arch::build_cnn_site(1);
  const auto& p = site.params();
  const std::vector<std::size_t> want_site{320, 18496, 73856, 262272, 258};
  std::vector<std::size_t> got_site{p.convs[0].param_count(), p.convs[1].param_count(), p.convs[2].param_count(),
                                    p.heads[0][0].param_count(), p.heads[0][1].param_count()};
  check(v, got_site == want_site, "cnn-site per layer 320 / 18496 / 73856 / 262272 / 258");
  check(v, nn::param_count(site) == 355202, "cnn-site total " + std::to_string(nn::param_count(site)));

  const auto spec = arch::CnnArraySpec{}.network(9);
  const nn::ParamStore<float> a(spec);
  check(v,
        a.convs[0].param_count() == 320 && a.convs[1].param_count() == 18496 && a.convs[2].param_count() == 73856,
        "cnn-array convolutions 320 / 18496 / 73856");
  std::size_t dense1 = 0, dense2 = 0, dense3 = 0;
  for (const auto& h : a.heads) {
    dense1 = h[0].param_count();
    dense2 += h[1].param_count();
    dense3 += h[2].param_count();
  }
  check(v, dense2 == 74304, "cnn-array dense-2 over 9 heads " + std::to_string(dense2));
  check(v, dense3 == 1170, "cnn-array dense-3 over 9 heads " + std::to_string(dense3));
  // 28x28 input, three valid 3x3 convolutions -> 22x22x128 flattened.
  const std::size_t flat = (28 - 6) * (28 - 6) * 128;
  check(v, spec.flatten_size() == flat && dense1 == flat * 128 + 128,
        "cnn-array dense-1 per head " + std::to_string(dense1) + " (shape-derived " +
            std::to_string(flat * 128 + 128) + ")");
  return v;
}

// ------------------------------------------------------------------ 2

Verdict gradient_check() {
  Verdict v{true, "finite-difference gradient check"};
  double worst = 0.0;
  std::size_t n_params = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto net = nn::Network<double>::initialized(testing::tiny_spec(), seed);
    testing::bias_away_from_kinks(net);
    const auto x = testing::random_input(net.spec(), 4, seed + 1000);
    const auto r = testing::gradient_check(net, x, {0, 1, 1, 0});
    worst = std::max(worst, r.max_rel_error);
    n_params = r.n_params;
  }
  check(v, worst < 1e-4,
        "4x4 input, 2-channel conv, 2-unit dense, " + std::to_string(n_params) +
            " parameters x 10 seeds: max relative error " + num(worst, 3));
  return v;
}

// ------------------------------------------------------------------ 3

Verdict threshold_oracle() {
  Verdict v{true, "mixture threshold against grid scan"};
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  int fitted = 0, attempts = 0;
  while (fitted < 100 && attempts < 400) {
    ++attempts;
    const double s_dark = 0.3 + 1.2 * u(rng), s_bright = 0.3 + 2.2 * u(rng);
    const double m_dark = 10.0 * u(rng);
    const double m_bright = m_dark + (3.0 + 3.0 * u(rng)) * std::max(s_dark, s_bright);
    const double frac = 0.3 + 0.4 * u(rng);
    std::normal_distribution<double> nd(m_dark, s_dark), nb(m_bright, s_bright);
    std::vector<double> values(4000);
    for (auto& x : values) x = u(rng) < frac ? nb(rng) : nd(rng);
    baseline::MixtureFit fit;
    double t = 0.0;
    try {
      fit = baseline::fit_two_gaussian_mixture(values);
      t = baseline::compute_threshold(fit);
    } catch (const FitError&) {
      continue;
    }
    ++fitted;
    // First sign change of dark(x) - bright(x) walking up from the dark mean.
    double scan = NAN;
    for (double x = fit.dark.mean; x <= fit.bright.mean; x += 1e-4) {
      if (fit.dark(x) - fit.bright(x) <= 0.0) {
        scan = x;
        break;
      }
    }
    worst = std::max(worst, std::isnan(scan) ? INFINITY : std::abs(t - scan));
  }
  check(v, fitted == 100, std::to_string(fitted) + " mixtures fitted in " + std::to_string(attempts) + " draws");
  check(v, worst < 1e-3, "max |threshold - grid crossing| " + num(worst, 3));

  double worst_mid = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double a = 0.1 + 10.0 * u(rng), s = 0.2 + 5.0 * u(rng), m0 = -50.0 + 100.0 * u(rng);
    const double m1 = m0 + 0.5 + 20.0 * u(rng);
    baseline::MixtureFit f;
    f.dark = {a, m0, s};
    f.bright = {a, m1, s};
    worst_mid = std::max(worst_mid, std::abs(baseline::compute_threshold(f) - 0.5 * (m0 + m1)));
  }
  check(v, worst_mid < 1e-9, "equal components: max |threshold - midpoint| " + num(worst_mid, 3));
  return v;
}

// ------------------------------------------------------------------ 4

Verdict metric_oracles() {
  Verdict v{true, "metrics against contingency oracles"};
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&](std::size_t n, double p) {
    std::vector<std::uint8_t> out(n);
    for (auto& x : out) x = u(rng) < p ? 1 : 0;
    return out;
  };
  double worst = 0.0;
  int mismatched_definedness = 0, defined = 0;
  auto compare = [&](std::optional<oracle::Rational> want, auto&& compute) {
    try {
      const double got = compute();
      if (!want) {
        ++mismatched_definedness;
        return;
      }
      ++defined;
      worst = std::max(worst, std::abs(got - want->to_double()));
    } catch (const UndefinedMetricError&) {
      if (want) ++mismatched_definedness;
    }
  };
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 1 + rng() % 40;
    const auto truth = draw(n, u(rng)), pa = draw(n, u(rng)), pb = draw(n, u(rng));
    compare(oracle::fidelity(pa, truth), [&] { return metrics::fidelity(pa, truth); });
    compare(oracle::cross_fidelity(pa, pb), [&] { return metrics::cross_fidelity(pa, pb); });
    const auto fa = oracle::fidelity(pa, truth), fb = oracle::fidelity(pb, truth);
    if (fa && fb) {
      compare(oracle::relative_infidelity(*fa, *fb),
              [&] { return metrics::relative_infidelity(metrics::fidelity(pa, truth), metrics::fidelity(pb, truth)); });
    }
  }
  check(v, mismatched_definedness == 0,
        std::to_string(defined) + " defined values, " + std::to_string(mismatched_definedness) +
            " disagreements on definedness");
  check(v, worst <= 1e-12, "1000 random cases: max |metric - oracle| " + num(worst, 3));

  const auto a = draw(10000, 0.5), b = draw(10000, 0.5);
  std::vector<std::uint8_t> neg(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) neg[i] = 1 - a[i];
  const double same = metrics::cross_fidelity(a, a), opposite = metrics::cross_fidelity(neg, a),
               coins = metrics::cross_fidelity(b, a);
  check(v, same == 1.0, "identical predictions: F_CF " + num(same));
  check(v, opposite == -1.0, "negated predictions: F_CF " + num(opposite));
  check(v, std::abs(coins) <= 0.05, "independent fair coins, n = 10000: F_CF " + num(coins, 3));
  return v;
}

// ------------------------------------------------------------------ 5

Verdict high_snr() {
  Verdict v{true, "all methods at >= 6 sigma"};
  sim::SimConfig cfg;
  cfg.geometry = sim::sparse_geometry();
  cfg.n_images = 1000;
  cfg.noise.bright_photons_per_ms = sim::calibrate_bright_rate(cfg, 10.0, 6.5, sim::Path::secondary);
  const auto ds = sim::generate_dataset(cfg, 10.0, 501);
  const double sep = sim::measure_separation(ds, sim::Path::secondary);
  check(v, sep >= 6.0, "secondary-path separation " + num(sep) + " sigma at bright rate " +
                           num(cfg.noise.bright_photons_per_ms) + " /ms");

  pipeline::LabeledDataset lds;
  lds.frames = ds.frames(sim::Path::secondary);
  const auto primary = ds.frames(sim::Path::primary);
  const auto pl = pipeline::label_from_primary(primary, cfg.geometry.site_centers(), cfg.geometry.spacing_px);
  lds.labels = pl.labels;
  lds.truth = ds.truth();
  lds.n_sites = 9;
  lds.provenance = pipeline::Provenance::dual_path;
  std::size_t agree = 0;
  for (std::size_t k = 0; k < lds.labels.size(); ++k) agree += lds.labels[k] == lds.truth[k];
  std::cout << "    dual-path label agreement with truth "
            << num(static_cast<double>(agree) / static_cast<double>(lds.labels.size()), 5) << '\n';
  pipeline::split_dataset(lds, {0.6, 0.2, 0.2}, 502);

  experiment::Options opt;
  opt.array_spec = reduced_array_spec();
  opt.seed = 503;
  const auto out = experiment::run(lds, experiment::Layout::from(cfg.geometry), opt);
  for (const auto& mo : out.methods) {
    const auto sc = experiment::score(mo.predictions, out.eval_reference, {3, 3});
    const double f = sc.report.aggregate.value_or(0.0);
    check(v, f >= 0.995,
          std::string(experiment::method_name(mo.method)) + " test fidelity " + num(f, 5) + " (" +
              num(mo.fit_seconds, 3) + " s)");
  }
  return v;
}

// ------------------------------------------------------------------ 6

Verdict low_snr_sparse() {
  Verdict v{true, "cnn-site vs gaussian mask at ~2.2 sigma, 9 px pitch"};
  sim::SimConfig cfg;
  cfg.geometry = sim::sparse_geometry();
  cfg.n_images = 3000;
  cfg.noise.bright_photons_per_ms = sim::calibrate_bright_rate(cfg, 10.0, 2.2, sim::Path::secondary);
  std::vector<double> g_inf, c_inf, eta;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto ds = sim::generate_dataset(cfg, 10.0, 600 + seed);
    auto lds = truth_labeled(ds);
    pipeline::split_dataset(lds, {0.6, 0.2, 0.2}, 610 + seed);
    experiment::Options opt;
    opt.methods = {Method::gaussian, Method::cnn_site};
    opt.seed = 620 + seed;
    const auto out = experiment::run(lds, experiment::Layout::from(cfg.geometry), opt);
    const double fg = *experiment::score(out.get(Method::gaussian).predictions, out.eval_reference, {3, 3})
                           .report.aggregate;
    const double fc = *experiment::score(out.get(Method::cnn_site).predictions, out.eval_reference, {3, 3})
                           .report.aggregate;
    g_inf.push_back(1.0 - fg);
    c_inf.push_back(1.0 - fc);
    eta.push_back(metrics::relative_infidelity(fc, fg));
    std::cout << "    seed " << seed << ": separation " << num(sim::measure_separation(ds, sim::Path::secondary), 3)
              << " sigma, infidelity gaussian " << num(1.0 - fg) << " cnn-site " << num(1.0 - fc) << ", eta "
              << num(eta.back(), 3) << '\n';
  }
  check(v, median(c_inf) <= median(g_inf),
        "median infidelity cnn-site " + num(median(c_inf)) + " <= gaussian " + num(median(g_inf)));
  check(v, median(eta) >= 0.1, "median eta " + num(median(eta), 3) + " >= 0.1");
  return v;
}

// ------------------------------------------------------------------ 7

Verdict crosstalk_dense() {
  Verdict v{true, "crosstalk at 5 px pitch"};
  sim::SimConfig cfg;
  cfg.geometry = sim::dense_geometry();
  cfg.noise.bright_photons_per_ms = 3.5;
  cfg.noise.dark_photons_per_ms = 0.0;
  cfg.n_images = 10000;
  std::vector<double> fg, fs, nn_g, nn_s, nn_a, far_s, center_g, corner_g, center_s, corner_s;
  for (std::uint64_t seed = 101; seed <= 105; ++seed) {
    const auto ds = sim::generate_dataset(cfg, 10.0, seed);
    auto lds = truth_labeled(ds);
    pipeline::split_dataset(lds, {0.3, 0.1, 0.6}, seed + 10);
    experiment::Options opt;
    opt.methods = {Method::gaussian, Method::square, Method::cnn_array};
    opt.array_spec = reduced_array_spec();
    opt.array_train.max_epochs = 6;
    opt.seed = seed + 20;
    const auto out = experiment::run(lds, experiment::Layout::from(cfg.geometry), opt);
    const auto g = experiment::score(out.get(Method::gaussian).predictions, out.eval_reference, {3, 3});
    const auto s = experiment::score(out.get(Method::square).predictions, out.eval_reference, {3, 3});
    const auto a = experiment::score(out.get(Method::cnn_array).predictions, out.eval_reference, {3, 3});
    fg.push_back(*g.report.aggregate);
    fs.push_back(*s.report.aggregate);
    nn_g.push_back(*g.nn_abs_cross);
    nn_s.push_back(*s.nn_abs_cross);
    nn_a.push_back(*a.nn_abs_cross);
    far_s.push_back(*s.distant_abs_cross);
    center_g.push_back(*g.report.center_infidelity);
    corner_g.push_back(*g.report.mean_corner_infidelity);
    center_s.push_back(*s.report.center_infidelity);
    corner_s.push_back(*s.report.mean_corner_infidelity);
    std::cout << "    seed " << seed << ": infidelity gaussian " << num(1.0 - fg.back()) << " square "
              << num(1.0 - fs.back()) << " cnn-array " << num(1.0 - *a.report.aggregate) << "; nn |F_CF| gaussian "
              << num(nn_g.back(), 3) << " square " << num(nn_s.back(), 3) << " cnn-array " << num(nn_a.back(), 3)
              << "; distant square " << num(far_s.back(), 3) << '\n';
  }
  check(v, median(fg) >= median(fs),
        "(a) median fidelity gaussian " + num(median(fg)) + " >= square " + num(median(fs)));
  check(v, median(nn_s) >= 2.0 * median(far_s),
        "(b) square nn |F_CF| " + num(median(nn_s), 3) + " >= 2 x distant " + num(median(far_s), 3));
  const double reduction = 1.0 - median(nn_a) / median(nn_g);
  check(v, reduction >= 0.4,
        "(c) cnn-array nn |F_CF| " + num(median(nn_a), 3) + " vs gaussian " + num(median(nn_g), 3) +
            ": reduction " + num(reduction, 3) + " >= 0.4");
  check(v, median(center_g) > median(corner_g),
        "(d) gaussian center infidelity " + num(median(center_g)) + " > corner mean " + num(median(corner_g)));
  check(v, median(center_s) > median(corner_s),
        "(d) square center infidelity " + num(median(center_s)) + " > corner mean " + num(median(corner_s)));
  return v;
}

// ------------------------------------------------------------------ 8

experiment::Options protocol_options() {
  experiment::Options opt;
  opt.site_spec.conv_channels = {4, 4, 4};
  opt.site_spec.dense_units = {8, 2};
  opt.array_spec.conv_channels = {4, 4, 4};
  opt.array_spec.head_units = {8, 4, 2};
  opt.site_train = {1e-3, 4, 32, 5};
  opt.array_train = {1e-3, 3, 16, 5};
  opt.seed = 3;
  return opt;
}

Verdict pipeline_protocol() {
  Verdict v{true, "leakage, checkpoint, determinism, A-B-A"};
  sim::SimConfig cfg;
  cfg.geometry = sim::sparse_geometry();
  cfg.noise.bright_photons_per_ms = 4.0;
  cfg.n_images = 300;
  auto ds = truth_labeled(sim::generate_dataset(cfg, 10.0, 50));
  pipeline::split_dataset(ds, {0.6, 0.2, 0.2}, 51);
  const auto layout = experiment::Layout::from(cfg.geometry);
  const auto opt = protocol_options();

  auto mutated = [&](pipeline::Split s) {
    auto d = ds;
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<float> u(0.0f, 5000.0f);
    for (auto i : d.indices(s))
      for (auto& p : d.frames[i].pixels) p = u(rng);
    return d;
  };
  const auto base = experiment::run(ds, layout, opt);
  const auto again = experiment::run(ds, layout, opt);
  const auto test_mut = experiment::run(mutated(pipeline::Split::test), layout, opt);
  const auto val_mut = experiment::run(mutated(pipeline::Split::validation), layout, opt);

  bool same_fit = base.stats.mu == test_mut.stats.mu && base.stats.alpha == test_mut.stats.alpha;
  bool val_isolated = base.stats.mu == val_mut.stats.mu && base.stats.alpha == val_mut.stats.alpha;
  for (std::size_t s = 0; s < base.crop_centers.size(); ++s) {
    val_isolated &= base.crop_centers[s].center_x == val_mut.crop_centers[s].center_x &&
                    base.crop_centers[s].center_y == val_mut.crop_centers[s].center_y;
  }
  for (Method m : {Method::gaussian, Method::square}) {
    same_fit &= base.get(m).classifier->thresholds() == test_mut.get(m).classifier->thresholds();
    val_isolated &= base.get(m).classifier->thresholds() == val_mut.get(m).classifier->thresholds();
  }
  bool deterministic = base.eval_indices == again.eval_indices;
  bool checkpoint = true;
  for (Method m : {Method::cnn_site, Method::cnn_array}) {
    same_fit &= base.get(m).network->params() == test_mut.get(m).network->params();
    same_fit &= base.get(m).history->to_csv() == test_mut.get(m).history->to_csv();
    const auto &hb = *base.get(m).history, &hv = *val_mut.get(m).history;
    val_isolated &= hb.epochs.size() == hv.epochs.size();
    for (std::size_t e = 0; e < std::min(hb.epochs.size(), hv.epochs.size()); ++e) {
      val_isolated &= hb.epochs[e].train_loss == hv.epochs[e].train_loss;
    }
    deterministic &= base.get(m).network->params() == again.get(m).network->params();
    for (const auto& e : hb.epochs) checkpoint &= e.val_loss >= hb.best().val_loss;
  }
  for (Method m : experiment::kAllMethods) deterministic &= base.get(m).predictions == again.get(m).predictions;
  check(v, same_fit, "test-split frames change no fitted statistic, threshold, weight, or history");
  check(v, val_isolated, "validation-split frames change no statistic, center, threshold, or training loss");
  check(v, deterministic, "rerun with the same seeds reproduces weights and predictions exactly");

  // The returned network re-evaluates to the minimum validation loss.
  {
    const auto stats = base.stats;
    const auto centers = experiment::centers_of(base.crop_centers);
    const auto val_idx = ds.indices(pipeline::Split::validation);
    const auto val = pipeline::preprocess(pipeline::gather(std::span<const Frame>(ds.frames), val_idx), stats);
    const auto labels = pipeline::gather_rows(ds.labels, 9, val_idx);
    const auto crops = pipeline::partition_sites(val, centers, labels);
    const auto& net = *base.get(Method::cnn_site).network;
    const double loss = pipeline::evaluate(net, pipeline::make_examples(crops.crops, crops.labels, 1)).loss;
    const auto& hist = *base.get(Method::cnn_site).history;
    checkpoint &= loss == hist.best().val_loss;
    check(v, checkpoint,
          "checkpoint: best epoch " + std::to_string(hist.best_epoch) + " of " + std::to_string(hist.epochs.size()) +
              ", re-evaluated validation loss " + num(loss, 8) + " equals the recorded minimum");
  }

  // A-B-A: all 2^9 disagreement patterns; only the all-agree pattern survives.
  std::mt19937_64 rng(5);
  std::vector<std::uint8_t> a1, a2;
  for (unsigned pattern = 0; pattern < 512; ++pattern) {
    for (unsigned s = 0; s < 9; ++s) {
      const std::uint8_t bit = rng() & 1u;
      a1.push_back(bit);
      a2.push_back(bit ^ ((pattern >> s) & 1u));
    }
  }
  const auto sel = pipeline::aba_select(a1, a2, 9);
  check(v, sel.kept == std::vector<std::size_t>{0} && sel.discarded == 511,
        "A-B-A selection keeps " + std::to_string(sel.kept.size()) + " of 512 patterns");
  return v;
}

// ------------------------------------------------------------------ 9

Verdict latency() {
  Verdict v{true, "latency statistics"};
  sim::SimConfig cfg;
  cfg.geometry = sim::sparse_geometry();
  cfg.noise.bright_photons_per_ms = 4.0;
  cfg.n_images = 300;
  const auto ds = sim::generate_dataset(cfg, 10.0, 90);
  const auto frames = ds.frames(sim::Path::secondary);
  baseline::MaskClassifier::Options mopt;
  mopt.spot.half_window = baseline::default_half_window(cfg.geometry.spacing_px);
  const auto clf = baseline::MaskClassifier::fit(frames, cfg.geometry.site_centers(), mopt);
  const auto stats = pipeline::compute_preprocess_stats(frames);
  const auto crops = pipeline::partition_sites(pipeline::preprocess(frames, stats), cfg.geometry.site_centers());
  const auto net = arch::build_cnn_site(1);

  auto repeat = [](auto&& infer, const char* name) {
    std::vector<double> means;
    for (int r = 0; r < 5; ++r) means.push_back(metrics::measure_latency(infer, 2000, 200).mean_us);
    double m = 0.0;
    for (double x : means) m += x;
    m /= static_cast<double>(means.size());
    double var = 0.0;
    for (double x : means) var += (x - m) * (x - m);
    const double cv = std::sqrt(var / static_cast<double>(means.size() - 1)) / m;
    std::cout << "    " << name << ": mean " << num(m, 4) << " us per site over 5 repeats, CV " << num(cv, 3)
              << '\n';
    return std::pair{m, cv};
  };
  const auto [gauss_us, gauss_cv] =
      repeat([&](std::size_t k) { return clf.classify_site(frames[k % frames.size()], 4); }, "gaussian mask");
  const auto [site_us, site_cv] =
      repeat([&](std::size_t k) { return arch::infer_site(net, crops.crops[k % crops.crops.size()]); }, "cnn-site");
  check(v, gauss_cv < 0.2 && site_cv < 0.2, "coefficient of variation across repeats below 20%");
  check(v, gauss_us < site_us, "gaussian mask faster than cnn-site per site");
  return v;
}

struct Criterion {
  int id;
  const char* title;
  std::function<Verdict()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {1, "architecture exactness", architecture_counts},
      {2, "gradient correctness", gradient_check},
      {3, "threshold oracle", threshold_oracle},
      {4, "metric oracles", metric_oracles},
      {5, "high-SNR regime", high_snr},
      {6, "low-SNR sparse trend", low_snr_sparse},
      {7, "dense crosstalk regime", crosstalk_dense},
      {8, "pipeline protocol", pipeline_protocol},
      {9, "latency report", latency},
  };
  return all;
}

}  // namespace
}  // namespace naqr

int main(int argc, char** argv) {
  CLI::App app{"naqr acceptance suite"};
  std::vector<int> selected;
  app.add_option("--criterion", selected, "criterion number 1-9 (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  bool all_pass = true;
  for (const auto& c : naqr::criteria()) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    std::cout << "criterion " << c.id << ": " << c.title << '\n';
    const auto t0 = std::chrono::steady_clock::now();
    naqr::Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      std::cout << "    error: " << e.what() << '\n';
      v = {false, "threw"};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.title << "): " << v.summary
              << "  [" << naqr::num(secs, 3) << " s]" << std::endl;
    all_pass &= v.pass;
  }
  return all_pass ? 0 : 1;
}
