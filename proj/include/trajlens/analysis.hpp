#pragma once

// Agreement statistics between distance matrices: Spearman correlation,
// agglomerative clustering, Rand index, and k-NN overlap.

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trajlens/detail/parallel.hpp"
#include "trajlens/distance.hpp"
#include "trajlens/error.hpp"

namespace trajlens {

enum class Linkage { Average, Complete, Single };

inline std::optional<Linkage> linkage_from_string(std::string_view s) {
  if (s == "average") return Linkage::Average;
  if (s == "complete") return Linkage::Complete;
  if (s == "single") return Linkage::Single;
  return std::nullopt;
}

struct ClusterParams {
  std::size_t n_clusters = 10;
  Linkage linkage = Linkage::Average;
};

struct Partition {
  std::vector<std::string> ids;
  std::vector<int> labels;

  std::size_t size() const noexcept { return ids.size(); }
  friend bool operator==(const Partition&, const Partition&) = default;
};

struct EvalParams {
  std::size_t k = 5;
};

/// Average ranks, 1-based; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && x[order[j]] == x[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorCode::ConstantInput, "correlation of a constant sequence");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman's rho: Pearson correlation of average ranks.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::LengthMismatch, "spearman inputs differ in length");
  if (x.size() < 3) fail(ErrorCode::LengthMismatch, "spearman needs at least 3 values");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

inline void require_same_ids(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a != b) fail(ErrorCode::IdMismatch, "inputs are not over the same ids in the same order");
}

/// Spearman over the strict upper triangles, flattened row-major.
inline double matrix_correlation(const DistanceMatrix& a, const DistanceMatrix& b) {
  require_same_ids(a.ids(), b.ids());
  const auto ua = a.upper_triangle();
  const auto ub = b.upper_triangle();
  return spearman(ua, ub);
}

struct Dendrogram {
  struct Merge {
    std::size_t left;   // surviving slot (smaller index)
    std::size_t right;  // absorbed slot
    double height;
  };
  std::vector<Merge> merges;
};

struct ClusterResult {
  Partition partition;
  Dendrogram dendrogram;
};

/// Bottom-up clustering on a precomputed matrix, stopping at n_clusters.
/// The closest pair is merged each step; ties go to the smallest (i, j).
/// The merged cluster keeps the smaller slot, and distances are updated with
/// the Lance-Williams rule for the chosen linkage. Labels are numbered by
/// first appearance in id order.
inline ClusterResult agglomerative_cluster_with_dendrogram(const DistanceMatrix& m, const ClusterParams& params) {
  const std::size_t n = m.size();
  if (params.n_clusters < 1 || n < params.n_clusters || n == 0) {
    fail(ErrorCode::TooFewItems, "need at least n_clusters items");
  }
  std::vector<double> d(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] = m.at(i, j);
  auto dist = [&](std::size_t i, std::size_t j) -> double& { return d[i * n + j]; };

  std::vector<bool> active(n, true);
  std::vector<std::size_t> size(n, 1);
  std::vector<std::size_t> owner(n);  // slot each item currently belongs to
  std::iota(owner.begin(), owner.end(), 0);

  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  // row_min[i]/row_arg[i]: nearest active j > i, smallest j on ties.
  std::vector<double> row_min(n, kInf);
  std::vector<std::size_t> row_arg(n, kNone);
  auto refresh_row = [&](std::size_t i) {
    row_min[i] = kInf;
    row_arg[i] = kNone;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (active[j] && dist(i, j) < row_min[i]) {
        row_min[i] = dist(i, j);
        row_arg[i] = j;
      }
    }
  };
  for (std::size_t i = 0; i < n; ++i) refresh_row(i);

  ClusterResult result;
  std::size_t clusters = n;
  while (clusters > params.n_clusters) {
    std::size_t bi = kNone;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i] || row_arg[i] == kNone) continue;
      if (bi == kNone || row_min[i] < row_min[bi]) bi = i;
    }
    const std::size_t bj = row_arg[bi];
    const double height = row_min[bi];
    const double si = static_cast<double>(size[bi]);
    const double sj = static_cast<double>(size[bj]);
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      const double dik = dist(bi, k);
      const double djk = dist(bj, k);
      double nd = 0.0;
      switch (params.linkage) {
        case Linkage::Average: nd = (si * dik + sj * djk) / (si + sj); break;
        case Linkage::Complete: nd = std::max(dik, djk); break;
        case Linkage::Single: nd = std::min(dik, djk); break;
      }
      dist(bi, k) = nd;
      dist(k, bi) = nd;
    }
    active[bj] = false;
    size[bi] += size[bj];
    for (auto& o : owner) {
      if (o == bj) o = bi;
    }
    result.dendrogram.merges.push_back({bi, bj, height});
    --clusters;

    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k]) continue;
      if (k == bi || row_arg[k] == bi || row_arg[k] == bj) {
        refresh_row(k);
      } else if (k < bi) {
        const double v = dist(k, bi);
        if (v < row_min[k] || (v == row_min[k] && bi < row_arg[k])) {
          row_min[k] = v;
          row_arg[k] = bi;
        }
      }
    }
  }

  result.partition.ids = m.ids();
  result.partition.labels.resize(n);
  std::map<std::size_t, int> label_of_slot;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = label_of_slot.try_emplace(owner[i], static_cast<int>(label_of_slot.size()));
    result.partition.labels[i] = it->second;
  }
  return result;
}

inline Partition agglomerative_cluster(const DistanceMatrix& m, const ClusterParams& params) {
  return agglomerative_cluster_with_dendrogram(m, params).partition;
}

/// (a + b) / C(n, 2): a counts pairs together in both, b pairs apart in both.
inline double rand_index(const Partition& p, const Partition& q) {
  require_same_ids(p.ids, q.ids);
  const std::size_t n = p.size();
  if (p.labels.size() != n || q.labels.size() != n) fail(ErrorCode::IdMismatch, "labels do not cover ids");
  if (n < 2) return 1.0;
  // Contingency counts give the pair tallies without enumerating pairs.
  std::vector<std::pair<int, int>> joint(n);
  std::vector<int> rows(p.labels), cols(q.labels);
  for (std::size_t i = 0; i < n; ++i) joint[i] = {p.labels[i], q.labels[i]};
  std::sort(joint.begin(), joint.end());
  std::sort(rows.begin(), rows.end());
  std::sort(cols.begin(), cols.end());
  auto choose2 = [](std::size_t c) { return static_cast<double>(c) * static_cast<double>(c - (c > 0)) / 2.0; };
  auto pair_sum = [&](const auto& sorted) {
    double s = 0.0;
    for (std::size_t i = 0, j = 0; i < sorted.size(); i = j) {
      while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
      s += choose2(j - i);
    }
    return s;
  };
  const double together_both = pair_sum(joint), together_p = pair_sum(rows), together_q = pair_sum(cols);
  const double total = choose2(n);
  const double apart_both = total - together_p - together_q + together_both;
  return (together_both + apart_both) / total;
}

/// The k nearest items to `row`, excluding itself; distance ties go to the
/// lexicographically smaller id.
inline std::vector<std::size_t> nearest_neighbors(const DistanceMatrix& m, std::size_t row, std::size_t k) {
  std::vector<std::size_t> cand;
  cand.reserve(m.size() - 1);
  for (std::size_t j = 0; j < m.size(); ++j) {
    if (j != row) cand.push_back(j);
  }
  const auto& ids = m.ids();
  auto closer = [&](std::size_t a, std::size_t b) {
    const double da = m.at(row, a), db = m.at(row, b);
    if (da != db) return da < db;
    return ids[a] < ids[b];
  };
  k = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), closer);
  cand.resize(k);
  return cand;
}

/// Mean over items of |kNN_A ∩ kNN_B| / k.
inline double knn_overlap(const DistanceMatrix& a, const DistanceMatrix& b, const EvalParams& params) {
  require_same_ids(a.ids(), b.ids());
  const std::size_t n = a.size();
  if (params.k < 1 || params.k >= n) fail(ErrorCode::InvalidArgument, "k must satisfy 1 <= k < n");
  std::vector<double> per_item(n);
  detail::parallel_for(n, [&](std::size_t i) {
    auto na = nearest_neighbors(a, i, params.k);
    auto nb = nearest_neighbors(b, i, params.k);
    std::sort(na.begin(), na.end());
    std::sort(nb.begin(), nb.end());
    std::vector<std::size_t> common;
    std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(), std::back_inserter(common));
    per_item[i] = static_cast<double>(common.size()) / static_cast<double>(params.k);
  });
  double sum = 0.0;
  for (double v : per_item) sum += v;
  return sum / static_cast<double>(n);
}

}  // namespace trajlens
