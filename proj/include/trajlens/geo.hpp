#pragma once

// Core trajectory types and geodesic primitives.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajlens/error.hpp"

namespace trajlens {

/// Seconds since the Unix epoch, UTC.
using EpochSeconds = std::int64_t;

inline constexpr double kEarthRadiusKm = 6371.0088;

struct TrackPoint {
  double lon = 0.0;
  double lat = 0.0;
  EpochSeconds t = 0;

  friend bool operator==(const TrackPoint&, const TrackPoint&) = default;
};

/// True iff lon in [-180, 180] and lat in [-90, 90], inclusive.
/// Throws NonFinite for NaN or infinite inputs.
inline bool validate_coordinate(double lon, double lat) {
  if (!std::isfinite(lon) || !std::isfinite(lat)) {
    fail(ErrorCode::NonFinite, "coordinate is not finite");
  }
  return lon >= -180.0 && lon <= 180.0 && lat >= -90.0 && lat <= 90.0;
}

/// Great-circle distance on a sphere of radius kEarthRadiusKm.
inline double haversine_km(const TrackPoint& a, const TrackPoint& b) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double phi1 = a.lat * kDeg;
  const double phi2 = b.lat * kDeg;
  const double dphi = (b.lat - a.lat) * kDeg;
  const double dlambda = (b.lon - a.lon) * kDeg;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::min(1.0, std::max(0.0, h));
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

/// Planar distance in degree space. All classical trajectory metrics use this,
/// so LCSS thresholds are expressed in degrees too.
inline double euclidean_deg(const TrackPoint& a, const TrackPoint& b) {
  return std::hypot(a.lon - b.lon, a.lat - b.lat);
}

/// Ordered, timestamped trip. Holds at least two points, non-decreasing in
/// time, all with valid coordinates.
class Trajectory {
 public:
  Trajectory() = default;

  Trajectory(std::string user_id, std::string traj_id, std::vector<TrackPoint> points)
      : user_id_(std::move(user_id)), traj_id_(std::move(traj_id)), points_(std::move(points)) {
    if (points_.size() < 2) {
      fail(ErrorCode::EmptyTrajectory, "trajectory '" + traj_id_ + "' has fewer than 2 points");
    }
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto& p = points_[i];
      if (!validate_coordinate(p.lon, p.lat)) {
        fail(ErrorCode::OutOfRangeCoordinate,
             "trajectory '" + traj_id_ + "' point " + std::to_string(i) + " out of range");
      }
      if (i > 0 && p.t < points_[i - 1].t) {
        fail(ErrorCode::InvalidArgument,
             "trajectory '" + traj_id_ + "' timestamps decrease at point " + std::to_string(i));
      }
    }
  }

  const std::string& user_id() const noexcept { return user_id_; }
  const std::string& traj_id() const noexcept { return traj_id_; }
  std::span<const TrackPoint> points() const noexcept { return points_; }
  std::size_t size() const noexcept { return points_.size(); }
  const TrackPoint& front() const { return points_.front(); }
  const TrackPoint& back() const { return points_.back(); }

  EpochSeconds duration_s() const { return points_.back().t - points_.front().t; }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;

 private:
  std::string user_id_;
  std::string traj_id_;
  std::vector<TrackPoint> points_;
};

struct GeoBounds {
  double min_lon = -180.0;
  double min_lat = -90.0;
  double max_lon = 180.0;
  double max_lat = 90.0;

  GeoBounds() = default;
  GeoBounds(double min_lon_, double min_lat_, double max_lon_, double max_lat_)
      : min_lon(min_lon_), min_lat(min_lat_), max_lon(max_lon_), max_lat(max_lat_) {
    if (!(min_lon <= max_lon && min_lat <= max_lat)) {
      fail(ErrorCode::InvalidArgument, "bounds require min <= max on both axes");
    }
  }

  bool contains(double lon, double lat) const {
    return lon >= min_lon && lon <= max_lon && lat >= min_lat && lat <= max_lat;
  }
  bool contains(const TrackPoint& p) const { return contains(p.lon, p.lat); }
};

}  // namespace trajlens
