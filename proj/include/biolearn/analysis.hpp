#pragma once

// Synaptic weight statistics: sparsity, detection-threshold clipping, maximum
// likelihood fits (lognormal, Weibull, normal), Kolmogorov-Smirnov distance
// and activation decorrelation.
//
// The Weibull family stands in for stretched (k < 1) and compressed (k > 1)
// exponentials: f(v) = (k/λ)(v/λ)^(k-1) exp(-(v/λ)^k).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "biolearn/error.hpp"
#include "biolearn/network.hpp"
#include "biolearn/numerics.hpp"

namespace biolearn {

inline constexpr double kDetectionThreshold = 0.005;

struct WeightSample {
  std::vector<double> values;  // |w| / max|w| for entries >= threshold
  double threshold = kDetectionThreshold;
  std::size_t n_total = 0;
  std::size_t n_below_threshold = 0;
};

/// Normalises |W| by its maximum and drops entries below the threshold.
inline WeightSample weight_sample(const Matrix& w, double threshold = kDetectionThreshold) {
  const double mx = max_abs(w.values());
  if (!(mx > 0.0)) throw DegenerateError("weight_sample: all-zero matrix");
  WeightSample s;
  s.threshold = threshold;
  s.n_total = w.size();
  for (double x : w.values()) {
    const double v = std::abs(x) / mx;
    if (v < threshold) {
      ++s.n_below_threshold;
    } else {
      s.values.push_back(v);
    }
  }
  return s;
}

struct Sparsity {
  double exact_zero = 0.0;
  double below_threshold = 0.0;  // normalised |w| < threshold, or exactly zero
};

inline Sparsity sparsity(const Matrix& w, double threshold = kDetectionThreshold) {
  if (w.empty()) return {1.0, 1.0};
  const double mx = max_abs(w.values());
  if (!(mx > 0.0)) return {1.0, 1.0};
  std::size_t zero = 0, below = 0;
  for (double x : w.values()) {
    zero += x == 0.0;
    below += x == 0.0 || std::abs(x) / mx < threshold;
  }
  const double n = static_cast<double>(w.size());
  return {static_cast<double>(zero) / n, static_cast<double>(below) / n};
}

// ---------------------------------------------------------------------------
// Fits

enum class Family { lognormal, weibull, normal };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::lognormal: return "lognormal";
    case Family::weibull: return "weibull";
    case Family::normal: return "normal";
  }
  return "?";
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

struct FitResult {
  Family family = Family::lognormal;
  // lognormal/normal: (mu, sigma); weibull: (shape k, scale lambda)
  double p1 = 0.0;
  double p2 = 0.0;
  double log_likelihood = 0.0;
  double ks_stat = 0.0;
  std::size_t n = 0;

  double cdf(double x) const {
    switch (family) {
      case Family::lognormal:
        return x <= 0.0 ? 0.0 : normal_cdf((std::log(x) - p1) / p2);
      case Family::weibull:
        return x <= 0.0 ? 0.0 : -std::expm1(-std::pow(x / p2, p1));
      case Family::normal:
        return normal_cdf((x - p1) / p2);
    }
    return 0.0;
  }

  double pdf(double x) const {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    switch (family) {
      case Family::lognormal: {
        if (x <= 0.0) return 0.0;
        const double z = (std::log(x) - p1) / p2;
        return inv_sqrt_2pi / (x * p2) * std::exp(-0.5 * z * z);
      }
      case Family::weibull: {
        if (x < 0.0) return 0.0;
        const double t = x / p2;
        return p1 / p2 * std::pow(t, p1 - 1.0) * std::exp(-std::pow(t, p1));
      }
      case Family::normal: {
        const double z = (x - p1) / p2;
        return inv_sqrt_2pi / p2 * std::exp(-0.5 * z * z);
      }
    }
    return 0.0;
  }

  /// "stretched" (k < 1), "compressed" (k > 1) or "exponential" for Weibull.
  std::string regime() const {
    if (family != Family::weibull) return family_name(family);
    if (p1 < 1.0) return "stretched";
    if (p1 > 1.0) return "compressed";
    return "exponential";
  }
};

/// sup |F_n - F| evaluated on both sides of every sorted sample point.
inline double ks_statistic(std::span<const double> values,
                           const std::function<double(double)>& cdf) {
  if (values.empty()) throw ParameterError("ks_statistic: empty sample");
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double f = cdf(s[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return std::clamp(d, 0.0, 1.0);
}

namespace detail {

inline void check_fit_input(std::span<const double> v, bool positive, const char* who) {
  if (v.size() < 2) throw ParameterError(std::string(who) + ": need at least 2 values");
  for (double x : v) {
    if (!std::isfinite(x)) throw DomainError(std::string(who) + ": non-finite value");
    if (positive && !(x > 0.0))
      throw DomainError(std::string(who) + ": non-positive value " + std::to_string(x));
  }
  if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); }))
    throw DegenerateError(std::string(who) + ": all values equal");
}

inline void finish_fit(FitResult& f, std::span<const double> v) {
  f.n = v.size();
  f.ks_stat = ks_statistic(v, [&](double x) { return f.cdf(x); });
}

}  // namespace detail

/// MLE: mu = mean(ln v), sigma = population std of ln v.
inline FitResult fit_lognormal(std::span<const double> v) {
  detail::check_fit_input(v, true, "fit_lognormal");
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += std::log(x);
  const double mu = s / n;
  double ss = 0.0, sum_log = 0.0;
  for (double x : v) {
    const double d = std::log(x) - mu;
    ss += d * d;
    sum_log += std::log(x);
  }
  const double sigma = std::sqrt(ss / n);
  FitResult f;
  f.family = Family::lognormal;
  f.p1 = mu;
  f.p2 = sigma;
  f.log_likelihood = -sum_log - n * std::log(sigma) - 0.5 * n * std::log(2.0 * std::numbers::pi) -
                     ss / (2.0 * sigma * sigma);
  detail::finish_fit(f, v);
  return f;
}

inline FitResult fit_normal(std::span<const double> v) {
  detail::check_fit_input(v, false, "fit_normal");
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += x;
  const double mu = s / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  const double sigma = std::sqrt(ss / n);
  FitResult f;
  f.family = Family::normal;
  f.p1 = mu;
  f.p2 = sigma;
  f.log_likelihood =
      -n * std::log(sigma) - 0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5 * n;
  detail::finish_fit(f, v);
  return f;
}

/// Weibull log-likelihood at (k, lambda).
inline double weibull_log_likelihood(std::span<const double> v, double k, double lambda) {
  double ll = 0.0;
  for (double x : v) {
    const double t = x / lambda;
    ll += std::log(k / lambda) + (k - 1.0) * std::log(t) - std::pow(t, k);
  }
  return ll;
}

inline constexpr int kWeibullMaxIter = 200;
inline constexpr double kWeibullTol = 1e-10;

/// Profile-likelihood MLE. The shape solves
///   g(k) = Σ v^k ln v / Σ v^k - 1/k - mean(ln v) = 0,
/// which is increasing in k; a safeguarded Newton iteration inside a bracket
/// finds it; lambda = (mean v^k)^(1/k).
inline FitResult fit_weibull(std::span<const double> v) {
  detail::check_fit_input(v, true, "fit_weibull");
  const double n = static_cast<double>(v.size());
  // Work with ln(v / max v) <= 0 so v^k never overflows.
  const double vmax = *std::max_element(v.begin(), v.end());
  std::vector<double> lv(v.size());
  double mean_log = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    lv[i] = std::log(v[i] / vmax);
    mean_log += lv[i];
  }
  mean_log /= n;

  auto score = [&](double k, double* deriv) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    for (double l : lv) {
      const double e = std::exp(k * l);
      s0 += e;
      s1 += e * l;
      s2 += e * l * l;
    }
    if (deriv) *deriv = (s2 * s0 - s1 * s1) / (s0 * s0) + 1.0 / (k * k);
    return s1 / s0 - 1.0 / k - mean_log;
  };

  double lo = 1.0, hi = 1.0;
  while (score(lo, nullptr) > 0.0) {
    lo *= 0.5;
    if (lo < 1e-8) throw NumericError("fit_weibull: cannot bracket shape");
  }
  while (score(hi, nullptr) < 0.0) {
    hi *= 2.0;
    if (hi > 1e6) throw NumericError("fit_weibull: cannot bracket shape");
  }
  double k = 0.5 * (lo + hi);
  bool converged = false;
  for (int it = 0; it < kWeibullMaxIter; ++it) {
    double d = 0.0;
    const double g = score(k, &d);
    if (std::abs(g) < kWeibullTol) {
      converged = true;
      break;
    }
    (g < 0.0 ? lo : hi) = k;
    double next = k - g / d;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    k = next;
  }
  if (!converged) throw NumericError("fit_weibull: no convergence in 200 iterations");

  double s0 = 0.0;
  for (double l : lv) s0 += std::exp(k * l);
  const double lambda = vmax * std::pow(s0 / n, 1.0 / k);
  FitResult f;
  f.family = Family::weibull;
  f.p1 = k;
  f.p2 = lambda;
  f.log_likelihood = weibull_log_likelihood(v, k, lambda);
  detail::finish_fit(f, v);
  return f;
}

// ---------------------------------------------------------------------------
// Decorrelation

struct Decorrelation {
  double mean_abs_corr = 0.0;  // over off-diagonal pairs of live units
  std::size_t live_units = 0;
  std::size_t dead_units = 0;  // zero variance over the sample
};

/// Mean |Pearson r| between columns of `a` (samples x units).
inline Decorrelation decorrelation(const Matrix& a) {
  const std::size_t n = a.rows();
  if (n < 2) throw ParameterError("decorrelation: need at least 2 samples");
  std::vector<std::size_t> live;
  std::vector<double> mean(a.cols(), 0.0), sd(a.cols(), 0.0);
  for (std::size_t c = 0; c < a.cols(); ++c) {
    for (std::size_t r = 0; r < n; ++r) mean[c] += a(r, c);
    mean[c] /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) sd[c] += (a(r, c) - mean[c]) * (a(r, c) - mean[c]);
    sd[c] = std::sqrt(sd[c] / static_cast<double>(n));
    if (sd[c] > 1e-12) live.push_back(c);
  }
  Decorrelation out;
  out.live_units = live.size();
  out.dead_units = a.cols() - live.size();
  if (live.size() < 2) throw DegenerateError("decorrelation: fewer than 2 live units");
  Matrix zs(n, live.size());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < live.size(); ++j)
      zs(r, j) = (a(r, live[j]) - mean[live[j]]) / (sd[live[j]] * std::sqrt(static_cast<double>(n)));
  const Matrix corr = matmul_tn(zs, zs);
  double total = 0.0;
  for (std::size_t i = 0; i < live.size(); ++i)
    for (std::size_t j = 0; j < live.size(); ++j)
      if (i != j) total += std::min(1.0, std::abs(corr(i, j)));
  const double pairs = static_cast<double>(live.size()) * static_cast<double>(live.size() - 1);
  out.mean_abs_corr = total / pairs;
  return out;
}

/// Decorrelation of the final hidden layer's eval-mode activations on X.
inline Decorrelation activation_decorrelation(const MlpModel& m, const Matrix& x) {
  if (x.rows() == 0) throw ParameterError("activation_decorrelation: empty input");
  const auto tr = forward(m, x, Mode::eval);
  return decorrelation(final_hidden(tr, x));
}

// ---------------------------------------------------------------------------
// Histogram export

inline constexpr std::size_t kHistogramBins = 64;

/// CSV `bin_lo,bin_hi,count,lognormal_pdf,weibull_pdf`, 64 equal bins over
/// [threshold, 1]; densities are evaluated at bin centres.
inline std::string histogram_csv(const WeightSample& s, const FitResult& lognormal,
                                 const FitResult& weibull) {
  std::vector<std::size_t> counts(kHistogramBins, 0);
  const double lo = s.threshold, hi = 1.0;
  const double width = (hi - lo) / static_cast<double>(kHistogramBins);
  for (double v : s.values) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    counts[std::min(b, kHistogramBins - 1)]++;
  }
  std::string out = "bin_lo,bin_hi,count,lognormal_pdf,weibull_pdf\n";
  char line[256];
  for (std::size_t b = 0; b < kHistogramBins; ++b) {
    const double a = lo + width * static_cast<double>(b);
    const double e = b + 1 == kHistogramBins ? hi : a + width;
    const double c = 0.5 * (a + e);
    std::snprintf(line, sizeof line, "%.17g,%.17g,%zu,%.17g,%.17g\n", a, e, counts[b],
                  lognormal.pdf(c), weibull.pdf(c));
    out += line;
  }
  return out;
}

}  // namespace biolearn
