#pragma once

// Classical trajectory distances (Hausdorff, DTW, LCSS) and the pairwise
// distance-matrix engine. Point distance is planar degrees throughout.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trajlens/detail/parallel.hpp"
#include "trajlens/error.hpp"
#include "trajlens/geo.hpp"
#include "trajlens/io.hpp"

namespace trajlens {

using PointSpan = std::span<const TrackPoint>;

enum class Metric { Hausdorff, Dtw, Lcss, Cosine };

struct MetricParams {
  Metric metric = Metric::Hausdorff;
  double epsilon = 0.0;  // degrees, LCSS only

  static MetricParams hausdorff() { return {Metric::Hausdorff, 0.0}; }
  static MetricParams dtw() { return {Metric::Dtw, 0.0}; }
  static MetricParams lcss(double eps) {
    if (!(eps > 0.0)) fail(ErrorCode::InvalidArgument, "LCSS epsilon must be positive");
    return {Metric::Lcss, eps};
  }
  static MetricParams cosine() { return {Metric::Cosine, 0.0}; }

  /// Display label, e.g. "lcss(eps=0.005)".
  std::string label() const {
    switch (metric) {
      case Metric::Hausdorff: return "hausdorff";
      case Metric::Dtw: return "dtw";
      case Metric::Lcss: return "lcss(eps=" + detail::format_double(epsilon) + ")";
      case Metric::Cosine: return "cosine";
    }
    return "unknown";
  }
};

inline std::optional<Metric> metric_from_string(std::string_view s) {
  if (s == "hausdorff") return Metric::Hausdorff;
  if (s == "dtw") return Metric::Dtw;
  if (s == "lcss") return Metric::Lcss;
  if (s == "cosine") return Metric::Cosine;
  return std::nullopt;
}

namespace detail {

inline void require_non_empty(PointSpan a, PointSpan b) {
  if (a.empty() || b.empty()) fail(ErrorCode::EmptyInput, "distance requires non-empty inputs");
}

/// Directed Hausdorff h(A, B) with early break: once a candidate's min falls
/// below the running max, it cannot raise the result.
inline double directed_hausdorff(PointSpan a, PointSpan b) {
  double cmax = 0.0;
  for (const auto& p : a) {
    double cmin = std::numeric_limits<double>::infinity();
    for (const auto& q : b) {
      const double d = euclidean_deg(p, q);
      if (d < cmin) {
        cmin = d;
        if (cmin <= cmax) break;
      }
    }
    if (cmin > cmax) cmax = cmin;
  }
  return cmax;
}

}  // namespace detail

inline double hausdorff(PointSpan a, PointSpan b) {
  detail::require_non_empty(a, b);
  return std::max(detail::directed_hausdorff(a, b), detail::directed_hausdorff(b, a));
}

/// Unconstrained DTW, accumulating euclidean_deg along the optimal monotone
/// alignment. Rolling rows keep memory at O(|b|); evaluation order is fixed
/// row-major so results are bit-stable.
inline double dtw(PointSpan a, PointSpan b) {
  detail::require_non_empty(a, b);
  const std::size_t m = b.size();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, kInf), cur(m + 1, kInf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = kInf;
    for (std::size_t j = 1; j <= m; ++j) {
      const double best = std::min({prev[j], cur[j - 1], prev[j - 1]});
      cur[j] = euclidean_deg(a[i - 1], b[j - 1]) + best;
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// Length of the longest common subsequence where points match iff their
/// planar distance is at most epsilon (disk, not box).
inline std::size_t lcss_length(PointSpan a, PointSpan b, double epsilon) {
  const std::size_t m = b.size();
  std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = 0;
    for (std::size_t j = 1; j <= m; ++j) {
      if (euclidean_deg(a[i - 1], b[j - 1]) <= epsilon) {
        cur[j] = prev[j - 1] + 1;
      } else {
        cur[j] = std::max(prev[j], cur[j - 1]);
      }
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// 1 - L / min(|a|, |b|), in [0, 1].
inline double lcss_distance(PointSpan a, PointSpan b, double epsilon) {
  detail::require_non_empty(a, b);
  if (!(epsilon > 0.0)) fail(ErrorCode::InvalidArgument, "LCSS epsilon must be positive");
  const auto l = lcss_length(a, b, epsilon);
  return 1.0 - static_cast<double>(l) / static_cast<double>(std::min(a.size(), b.size()));
}

inline double hausdorff(const Trajectory& a, const Trajectory& b) { return hausdorff(a.points(), b.points()); }
inline double dtw(const Trajectory& a, const Trajectory& b) { return dtw(a.points(), b.points()); }
inline double lcss_distance(const Trajectory& a, const Trajectory& b, double epsilon) {
  return lcss_distance(a.points(), b.points(), epsilon);
}

/// Symmetric n x n matrix with zero diagonal, labeled by trajectory id.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::vector<std::string> ids)
      : ids_(std::move(ids)), values_(ids_.size() * ids_.size(), 0.0) {}

  DistanceMatrix(std::vector<std::string> ids, std::vector<double> values)
      : ids_(std::move(ids)), values_(std::move(values)) {
    if (values_.size() != ids_.size() * ids_.size()) {
      fail(ErrorCode::InvalidArgument, "matrix values do not match id count");
    }
    const auto n = size();
    for (std::size_t i = 0; i < n; ++i) {
      if (at(i, i) != 0.0) fail(ErrorCode::InvalidArgument, "matrix diagonal must be zero");
      for (std::size_t j = 0; j < n; ++j) {
        const double v = at(i, j);
        if (!(v >= 0.0) || !std::isfinite(v)) {
          fail(ErrorCode::InvalidArgument, "matrix values must be finite and non-negative");
        }
        if (std::abs(v - at(j, i)) > 1e-9) fail(ErrorCode::InvalidArgument, "matrix is not symmetric");
      }
    }
  }

  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  double at(std::size_t i, std::size_t j) const { return values_[i * ids_.size() + j]; }

  /// Writes d into (i, j) and (j, i).
  void set_symmetric(std::size_t i, std::size_t j, double d) {
    values_[i * ids_.size() + j] = d;
    values_[j * ids_.size() + i] = d;
  }

  /// Strict upper triangle, row-major.
  std::vector<double> upper_triangle() const {
    std::vector<double> out;
    const auto n = size();
    out.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) out.push_back(at(i, j));
    }
    return out;
  }

  friend bool operator==(const DistanceMatrix&, const DistanceMatrix&) = default;

 private:
  std::vector<std::string> ids_;
  std::vector<double> values_;
};

/// Cosine distance between the embeddings of trajs[i] and trajs[j]. Only
/// consulted for Metric::Cosine; see embedding.hpp for the usual overload.
using EmbeddingDistanceFn = std::function<double(std::size_t i, std::size_t j)>;

/// Computes the upper triangle in parallel, one independent work unit per row,
/// then mirrors it. Output does not depend on scheduling.
inline DistanceMatrix pairwise_matrix(std::span<const Trajectory> trajs, const MetricParams& params,
                                      const EmbeddingDistanceFn& embedding_distance = {},
                                      unsigned threads = 0) {
  if (trajs.size() < 2) fail(ErrorCode::TooFewItems, "pairwise matrix needs at least 2 trajectories");
  if (params.metric == Metric::Cosine && !embedding_distance) {
    fail(ErrorCode::MissingEmbeddings, "cosine metric requires embeddings");
  }
  if (params.metric == Metric::Lcss && !(params.epsilon > 0.0)) {
    fail(ErrorCode::InvalidArgument, "LCSS epsilon must be positive");
  }
  std::vector<std::string> ids;
  ids.reserve(trajs.size());
  for (const auto& t : trajs) ids.push_back(t.traj_id());
  DistanceMatrix m(std::move(ids));
  const std::size_t n = trajs.size();
  detail::parallel_for(
      n,
      [&](std::size_t i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          double d = 0.0;
          switch (params.metric) {
            case Metric::Hausdorff: d = hausdorff(trajs[i], trajs[j]); break;
            case Metric::Dtw: d = dtw(trajs[i], trajs[j]); break;
            case Metric::Lcss: d = lcss_distance(trajs[i], trajs[j], params.epsilon); break;
            case Metric::Cosine: d = embedding_distance(i, j); break;
          }
          m.set_symmetric(i, j, d);
        }
      },
      threads);
  return m;
}

// DistanceMatrix CSV: header `id,<id_1>,...,<id_n>`, then one row per id.

inline void write_matrix_csv(std::ostream& out, const DistanceMatrix& m) {
  out << "id";
  for (const auto& id : m.ids()) out << ',' << id;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << m.ids()[i];
    for (std::size_t j = 0; j < m.size(); ++j) out << ',' << detail::format_double(m.at(i, j));
    out << '\n';
  }
}

inline DistanceMatrix read_matrix_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::MalformedRow, "matrix CSV is empty");
  auto header = detail::split(detail::trim(line), ',');
  if (header.empty() || header[0] != "id") fail(ErrorCode::MalformedRow, "matrix CSV header must start with id");
  std::vector<std::string> ids(header.begin() + 1, header.end());
  const auto n = ids.size();
  std::vector<double> values;
  values.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) fail(ErrorCode::MalformedRow, "matrix CSV has too few rows");
    const auto cols = detail::split(detail::trim(line), ',');
    if (cols.size() != n + 1 || cols[0] != ids[i]) {
      fail(ErrorCode::MalformedRow, "matrix CSV row " + std::to_string(i + 2) + " is malformed");
    }
    for (std::size_t j = 1; j <= n; ++j) {
      double v = 0.0;
      if (!detail::parse_double(cols[j], v)) {
        fail(ErrorCode::MalformedRow, "matrix CSV row " + std::to_string(i + 2) + " has a bad value");
      }
      values.push_back(v);
    }
  }
  return DistanceMatrix(std::move(ids), std::move(values));
}

}  // namespace trajlens
