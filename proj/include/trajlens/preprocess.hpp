#pragma once

// GPS cleaning pipeline: noise filtering, compression, stay points, stay-point
// clustering, user filtering, and experiment-specific selection.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trajlens/error.hpp"
#include "trajlens/geo.hpp"

namespace trajlens {

struct PreprocessConfig {
  double max_speed_kmh = 500.0;
  double compress_radius_km = 0.2;
  double stop_radius_km = 0.2;
  double stop_min_minutes = 20.0;
  double dbscan_eps_km = 0.5;
  std::size_t dbscan_min_samples = 1;
  std::size_t min_trajs_per_user = 10;

  void validate() const {
    if (!(max_speed_kmh > 0 && compress_radius_km > 0 && stop_radius_km > 0 &&
          stop_min_minutes > 0 && dbscan_eps_km > 0 && min_trajs_per_user > 0) ||
        dbscan_min_samples < 1) {
      fail(ErrorCode::InvalidArgument, "preprocess parameters must be positive");
    }
  }
};

struct StayPoint {
  std::string user_id;
  double lon = 0.0;
  double lat = 0.0;
  EpochSeconds t_start = 0;
  EpochSeconds t_end = 0;
  std::optional<int> cluster_id;

  TrackPoint location() const { return {lon, lat, t_start}; }

  friend bool operator==(const StayPoint&, const StayPoint&) = default;
};

/// Drops every point whose speed from the previously retained point exceeds
/// max_speed_kmh. The first point is always kept.
inline Trajectory filter_noise(const Trajectory& traj, double max_speed_kmh) {
  const auto pts = traj.points();
  std::vector<TrackPoint> kept;
  kept.reserve(pts.size());
  kept.push_back(pts.front());
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const auto& prev = kept.back();
    const double km = haversine_km(prev, pts[i]);
    const double hours = static_cast<double>(pts[i].t - prev.t) / 3600.0;
    double speed = 0.0;
    if (km > 0.0) speed = hours > 0.0 ? km / hours : std::numeric_limits<double>::infinity();
    if (speed > max_speed_kmh) continue;
    kept.push_back(pts[i]);
  }
  if (kept.size() < 2) {
    fail(ErrorCode::EmptyTrajectory, "'" + traj.traj_id() + "' has < 2 points after noise filtering");
  }
  return Trajectory(traj.user_id(), traj.traj_id(), std::move(kept));
}

/// Greedy radial compression: emit a point, skip followers within radius of
/// it. The final point is always emitted.
inline Trajectory compress(const Trajectory& traj, double compress_radius_km) {
  const auto pts = traj.points();
  std::vector<TrackPoint> out;
  out.push_back(pts.front());
  std::size_t last_emitted = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (haversine_km(out.back(), pts[i]) <= compress_radius_km) continue;
    out.push_back(pts[i]);
    last_emitted = i;
  }
  if (last_emitted != pts.size() - 1) out.push_back(pts.back());
  return Trajectory(traj.user_id(), traj.traj_id(), std::move(out));
}

/// Forward scan for maximal runs of consecutive points that all lie within
/// stop_radius_km of the run's first point and span at least stop_min_minutes.
inline std::vector<StayPoint> detect_stay_points(const Trajectory& traj, double stop_radius_km,
                                                 double stop_min_minutes) {
  const auto pts = traj.points();
  const double min_s = stop_min_minutes * 60.0;
  std::vector<StayPoint> stays;
  std::size_t i = 0;
  while (i < pts.size()) {
    std::size_t j = i + 1;
    while (j < pts.size() && haversine_km(pts[i], pts[j]) <= stop_radius_km) ++j;
    // [i, j) is the maximal run anchored at i.
    const auto last = j - 1;
    if (static_cast<double>(pts[last].t - pts[i].t) >= min_s && pts[last].t > pts[i].t) {
      double lon = 0.0, lat = 0.0;
      for (std::size_t k = i; k < j; ++k) {
        lon += pts[k].lon;
        lat += pts[k].lat;
      }
      const auto n = static_cast<double>(j - i);
      stays.push_back({traj.user_id(), lon / n, lat / n, pts[i].t, pts[last].t, std::nullopt});
      i = j;
    } else {
      ++i;
    }
  }
  return stays;
}

/// DBSCAN over haversine distance. Noise keeps cluster_id empty; ids are
/// contiguous from 0 in order of each cluster's first member.
inline std::vector<StayPoint> cluster_stay_points(std::vector<StayPoint> stays, double dbscan_eps_km,
                                                  std::size_t dbscan_min_samples) {
  const std::size_t n = stays.size();
  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (haversine_km(stays[i].location(), stays[j].location()) <= dbscan_eps_km) {
        neighbors[i].push_back(j);
      }
    }
  }
  auto is_core = [&](std::size_t i) { return neighbors[i].size() >= dbscan_min_samples; };

  constexpr int kUnassigned = -1;
  std::vector<int> label(n, kUnassigned);
  int next_label = 0;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (label[seed] != kUnassigned || !is_core(seed)) continue;
    const int cluster = next_label++;
    label[seed] = cluster;
    std::deque<std::size_t> frontier{seed};
    while (!frontier.empty()) {
      const auto p = frontier.front();
      frontier.pop_front();
      if (!is_core(p)) continue;
      for (auto q : neighbors[p]) {
        if (label[q] != kUnassigned) continue;
        label[q] = cluster;
        frontier.push_back(q);
      }
    }
  }

  // Relabel by first member appearance.
  std::map<int, int> canonical;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] == kUnassigned) {
      stays[i].cluster_id.reset();
      continue;
    }
    auto [it, inserted] = canonical.try_emplace(label[i], static_cast<int>(canonical.size()));
    stays[i].cluster_id = it->second;
  }
  return stays;
}

/// Nearest-rank percentile of a sorted, non-empty sample. pct in [0, 100].
inline std::size_t nearest_rank(const std::vector<std::size_t>& sorted, double pct) {
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(pct * n / 100.0 - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

/// Keeps trajectories whose point count lies within the [lo_pct, hi_pct]
/// nearest-rank percentile band of the point-count distribution.
inline std::vector<Trajectory> select_medium_length(const std::vector<Trajectory>& trajs,
                                                    double lo_pct = 25.0, double hi_pct = 75.0) {
  if (!(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 100.0)) {
    fail(ErrorCode::InvalidArgument, "percentile band requires 0 <= lo < hi <= 100");
  }
  if (trajs.empty()) fail(ErrorCode::EmptySelection, "no trajectories to select from");
  std::vector<std::size_t> lengths;
  lengths.reserve(trajs.size());
  for (const auto& t : trajs) lengths.push_back(t.size());
  std::sort(lengths.begin(), lengths.end());
  const auto lo = nearest_rank(lengths, lo_pct);
  const auto hi = nearest_rank(lengths, hi_pct);
  std::vector<Trajectory> out;
  for (const auto& t : trajs) {
    if (t.size() >= lo && t.size() <= hi) out.push_back(t);
  }
  if (out.empty()) fail(ErrorCode::EmptySelection, "no trajectory in the percentile band");
  return out;
}

struct PredictionInstance {
  Trajectory partial;
  TrackPoint destination;
};

/// Keeps the last window_minutes of the trip and the leading `fraction` of
/// that window (by point count). The destination is the trip's final point.
inline PredictionInstance truncate_for_prediction(const Trajectory& traj, double window_minutes = 15.0,
                                                  double fraction = 0.75) {
  if (!(fraction > 0.0 && fraction <= 1.0) || !(window_minutes > 0.0)) {
    fail(ErrorCode::InvalidArgument, "fraction must be in (0, 1] and window positive");
  }
  const double window_s = window_minutes * 60.0;
  if (static_cast<double>(traj.duration_s()) < window_s) {
    fail(ErrorCode::TooShort, "'" + traj.traj_id() + "' spans less than the window");
  }
  const auto pts = traj.points();
  const EpochSeconds t_end = pts.back().t;
  const auto first = std::find_if(pts.begin(), pts.end(), [&](const TrackPoint& p) {
    return static_cast<double>(p.t) >= static_cast<double>(t_end) - window_s;
  });
  const auto window_size = static_cast<std::size_t>(pts.end() - first);
  if (window_size < 4) {
    fail(ErrorCode::TooShort, "'" + traj.traj_id() + "' has fewer than 4 points in the window");
  }
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(window_size) - 1e-9));
  std::vector<TrackPoint> partial(first, first + static_cast<std::ptrdiff_t>(keep));
  return {Trajectory(traj.user_id(), traj.traj_id(), std::move(partial)), pts.back()};
}

/// Drops users with fewer than min_trajs trajectories; order is preserved.
inline std::vector<Trajectory> filter_users(const std::vector<Trajectory>& trajs, std::size_t min_trajs) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : trajs) ++counts[t.user_id()];
  std::vector<Trajectory> out;
  for (const auto& t : trajs) {
    if (counts[t.user_id()] >= min_trajs) out.push_back(t);
  }
  return out;
}

}  // namespace trajlens
