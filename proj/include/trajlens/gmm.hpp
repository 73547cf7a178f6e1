#pragma once

// Two-dimensional Gaussian mixture fitted by EM, and the signature-nearest
// destination predictor built on it.
//
// Each trajectory is summarised by its signature: the mean over its points of
// the per-component responsibilities. A query is answered with the
// destination of the training trajectory whose signature is closest.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "trajlens/detail/parallel.hpp"
#include "trajlens/detail/random.hpp"
#include "trajlens/error.hpp"
#include "trajlens/geo.hpp"

namespace trajlens {

struct Point2 {
  double x = 0.0;  // lon
  double y = 0.0;  // lat

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Symmetric 2x2 matrix [[xx, xy], [xy, yy]].
struct Cov2 {
  double xx = 0.0;
  double xy = 0.0;
  double yy = 0.0;

  double det() const { return xx * yy - xy * xy; }

  std::array<double, 2> eigenvalues() const {
    const double mid = 0.5 * (xx + yy);
    const double rad = std::hypot(0.5 * (xx - yy), xy);
    return {mid - rad, mid + rad};
  }
};

inline constexpr double kCovarianceFloor = 1e-8;

/// Raises every eigenvalue below `floor` to `floor`, keeping eigenvectors.
inline Cov2 floor_eigenvalues(const Cov2& c, double floor) {
  const auto [lo, hi] = c.eigenvalues();
  if (lo >= floor) return c;
  const double l1 = std::max(lo, floor);
  const double l2 = std::max(hi, floor);
  // Unit eigenvector for the larger eigenvalue.
  double vx = 1.0, vy = 0.0;
  if (c.xy != 0.0) {
    vx = hi - c.yy;
    vy = c.xy;
    const double norm = std::hypot(vx, vy);
    vx /= norm;
    vy /= norm;
  } else if (c.yy > c.xx) {
    vx = 0.0;
    vy = 1.0;
  }
  // C = l2 v v^T + l1 w w^T with w = (-vy, vx).
  return {l2 * vx * vx + l1 * vy * vy, (l2 - l1) * vx * vy, l2 * vy * vy + l1 * vx * vx};
}

struct GmmOptions {
  std::size_t components = 25;
  std::uint64_t seed = 0;
  std::size_t max_iters = 200;
  double tol = 1e-6;
  double covariance_floor = kCovarianceFloor;
};

struct GmmModel {
  std::vector<double> weights;
  std::vector<Point2> means;
  std::vector<Cov2> covariances;
  /// Per training trajectory: mean responsibilities (sums to 1).
  std::vector<std::vector<double>> train_signatures;
  std::vector<Point2> train_destinations;
  std::vector<std::string> train_ids;
  /// Log-likelihood at each EM iteration, evaluated before its M-step.
  std::vector<double> log_likelihood_trace;

  std::size_t components() const noexcept { return weights.size(); }
  bool fitted() const noexcept { return !weights.empty(); }
};

namespace detail {

struct GaussianTerms {
  double log_norm;  // log w - log(2 pi) - 0.5 log det
  double ixx, ixy, iyy;
};

inline std::vector<GaussianTerms> gaussian_terms(const GmmModel& m) {
  std::vector<GaussianTerms> terms(m.components());
  for (std::size_t k = 0; k < m.components(); ++k) {
    const auto& c = m.covariances[k];
    const double det = c.det();
    if (!(det > 0.0) || !std::isfinite(det)) {
      fail(ErrorCode::DegenerateComponent, "component " + std::to_string(k) + " covariance is singular");
    }
    terms[k] = {std::log(m.weights[k]) - std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det), c.yy / det,
                -c.xy / det, c.xx / det};
  }
  return terms;
}

/// Writes normalised responsibilities into `out` and returns log p(x).
inline double responsibilities(const GmmModel& m, std::span<const GaussianTerms> terms, Point2 p,
                               std::span<double> out) {
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const double dx = p.x - m.means[k].x;
    const double dy = p.y - m.means[k].y;
    const auto& t = terms[k];
    const double maha = t.ixx * dx * dx + 2.0 * t.ixy * dx * dy + t.iyy * dy * dy;
    out[k] = t.log_norm - 0.5 * maha;
    max_log = std::max(max_log, out[k]);
  }
  double sum = 0.0;
  for (auto& v : out) {
    v = std::exp(v - max_log);
    sum += v;
  }
  for (auto& v : out) v /= sum;
  return max_log + std::log(sum);
}

inline constexpr std::size_t kEmChunk = 4096;

}  // namespace detail

/// Mean responsibility vector of a set of points under the model.
inline std::vector<double> gmm_signature(const GmmModel& model, std::span<const Point2> points) {
  if (!model.fitted()) fail(ErrorCode::UnfittedModel, "GMM has not been fitted");
  if (points.empty()) fail(ErrorCode::EmptyInput, "signature of an empty trajectory");
  const auto terms = detail::gaussian_terms(model);
  const std::size_t k = model.components();
  std::vector<double> sig(k, 0.0), r(k);
  for (const auto& p : points) {
    detail::responsibilities(model, terms, p, r);
    for (std::size_t c = 0; c < k; ++c) sig[c] += r[c];
  }
  for (auto& v : sig) v /= static_cast<double>(points.size());
  return sig;
}

/// EM with k-means++ seeding. Components start at the seeded centres with
/// the pooled covariance and equal weights. Iterates until the log-likelihood
/// gain drops below tol or max_iters is reached.
inline GmmModel gmm_fit(std::span<const Point2> points, const GmmOptions& opts) {
  const std::size_t n = points.size();
  const std::size_t kc = opts.components;
  if (kc == 0) fail(ErrorCode::InvalidArgument, "GMM needs at least one component");
  if (n < kc) fail(ErrorCode::TooFewPoints, "GMM needs at least as many points as components");

  // Work in coordinates centred on the data mean; lon/lat magnitudes would
  // otherwise swamp small covariances.
  Point2 origin;
  for (const auto& p : points) {
    origin.x += p.x;
    origin.y += p.y;
  }
  origin.x /= static_cast<double>(n);
  origin.y /= static_cast<double>(n);
  std::vector<Point2> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = {points[i].x - origin.x, points[i].y - origin.y};

  detail::Rng rng(opts.seed);
  GmmModel m;
  m.means.reserve(kc);
  m.means.push_back(xs[rng.below(n)]);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (m.means.size() < kc) {
    const auto& last = m.means.back();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = xs[i].x - last.x, dy = xs[i].y - last.y;
      d2[i] = std::min(d2[i], dx * dx + dy * dy);
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.below(n);
    }
    m.means.push_back(xs[pick]);
  }
  Cov2 pooled;
  for (const auto& p : xs) {
    pooled.xx += p.x * p.x;
    pooled.xy += p.x * p.y;
    pooled.yy += p.y * p.y;
  }
  pooled = {pooled.xx / static_cast<double>(n), pooled.xy / static_cast<double>(n), pooled.yy / static_cast<double>(n)};
  pooled = floor_eigenvalues(pooled, opts.covariance_floor);
  m.covariances.assign(kc, pooled);
  m.weights.assign(kc, 1.0 / static_cast<double>(kc));

  std::vector<double> resp(n * kc);
  const std::size_t n_chunks = (n + detail::kEmChunk - 1) / detail::kEmChunk;
  std::vector<double> chunk_ll(n_chunks);

  auto e_step = [&]() {
    const auto terms = detail::gaussian_terms(m);
    detail::parallel_for(n_chunks, [&](std::size_t c) {
      const std::size_t lo = c * detail::kEmChunk;
      const std::size_t hi = std::min(n, lo + detail::kEmChunk);
      double ll = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        ll += detail::responsibilities(m, terms, xs[i], std::span<double>(resp).subspan(i * kc, kc));
      }
      chunk_ll[c] = ll;
    });
    double ll = 0.0;
    for (double v : chunk_ll) ll += v;
    return ll;
  };

  auto m_step = [&]() {
    for (std::size_t k = 0; k < kc; ++k) {
      double nk = 0.0, sx = 0.0, sy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp[i * kc + k];
        nk += r;
        sx += r * xs[i].x;
        sy += r * xs[i].y;
      }
      if (!(nk > 0.0) || !std::isfinite(nk)) {
        fail(ErrorCode::DegenerateComponent, "component " + std::to_string(k) + " lost all mass");
      }
      const Point2 mu{sx / nk, sy / nk};
      Cov2 c;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp[i * kc + k];
        const double dx = xs[i].x - mu.x, dy = xs[i].y - mu.y;
        c.xx += r * dx * dx;
        c.xy += r * dx * dy;
        c.yy += r * dy * dy;
      }
      c = {c.xx / nk, c.xy / nk, c.yy / nk};
      m.weights[k] = nk / static_cast<double>(n);
      m.means[k] = mu;
      m.covariances[k] = floor_eigenvalues(c, opts.covariance_floor);
      if (!(m.covariances[k].det() > 0.0)) {
        fail(ErrorCode::DegenerateComponent, "component " + std::to_string(k) + " is singular after flooring");
      }
    }
  };

  double prev = e_step();
  m.log_likelihood_trace.push_back(prev);
  for (std::size_t it = 0; it < opts.max_iters; ++it) {
    m_step();
    const double ll = e_step();
    m.log_likelihood_trace.push_back(ll);
    if (ll - prev < opts.tol) break;
    prev = ll;
  }

  for (auto& mu : m.means) {
    mu.x += origin.x;
    mu.y += origin.y;
  }
  return m;
}

struct TrainingTrajectory {
  std::string id;
  std::vector<Point2> points;
  Point2 destination;
};

inline std::vector<Point2> to_point2(std::span<const TrackPoint> pts) {
  std::vector<Point2> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back({p.lon, p.lat});
  return out;
}

/// Fits the mixture on all training points pooled, then records each
/// training trajectory's signature and destination.
inline GmmModel gmm_fit_baseline(std::span<const TrainingTrajectory> train, const GmmOptions& opts) {
  std::vector<Point2> pooled;
  for (const auto& t : train) pooled.insert(pooled.end(), t.points.begin(), t.points.end());
  auto model = gmm_fit(pooled, opts);
  for (const auto& t : train) {
    model.train_signatures.push_back(gmm_signature(model, t.points));
    model.train_destinations.push_back(t.destination);
    model.train_ids.push_back(t.id);
  }
  return model;
}

/// Destination of the training trajectory with the nearest signature
/// (Euclidean); ties go to the smallest id.
inline Point2 gmm_predict(const GmmModel& model, std::span<const Point2> partial) {
  if (!model.fitted() || model.train_signatures.empty()) {
    fail(ErrorCode::UnfittedModel, "GMM baseline has no fitted training signatures");
  }
  const auto sig = gmm_signature(model, partial);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < model.train_signatures.size(); ++t) {
    double d = 0.0;
    for (std::size_t k = 0; k < sig.size(); ++k) {
      const double diff = sig[k] - model.train_signatures[t][k];
      d += diff * diff;
    }
    if (d < best_d || (d == best_d && model.train_ids[t] < model.train_ids[best])) {
      best_d = d;
      best = t;
    }
  }
  return model.train_destinations[best];
}

}  // namespace trajlens
