#pragma once

// GeoLife PLT ingestion and the trajectory/bounds interchange formats.

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "trajlens/error.hpp"
#include "trajlens/geo.hpp"

namespace trajlens {

using json = nlohmann::json;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

inline bool parse_int(std::string_view s, int& out) {
  s = trim(s);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return !s.empty() && ec == std::errc() && ptr == end;
}

/// "YYYY-MM-DD" + "HH:MM:SS" interpreted as UTC.
inline bool parse_utc(std::string_view date, std::string_view time, EpochSeconds& out) {
  const auto d = split(trim(date), '-');
  const auto t = split(trim(time), ':');
  if (d.size() != 3 || t.size() != 3) return false;
  int y = 0, mo = 0, dd = 0, hh = 0, mi = 0, ss = 0;
  if (!parse_int(d[0], y) || !parse_int(d[1], mo) || !parse_int(d[2], dd)) return false;
  if (!parse_int(t[0], hh) || !parse_int(t[1], mi) || !parse_int(t[2], ss)) return false;
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(dd)}};
  if (!ymd.ok() || hh < 0 || hh > 23 || mi < 0 || mi > 59 || ss < 0 || ss > 60) return false;
  const auto days = sys_days{ymd}.time_since_epoch().count();
  out = static_cast<EpochSeconds>(days) * 86400 + hh * 3600 + mi * 60 + ss;
  return true;
}

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

struct PltOptions {
  /// Strict mode throws on the first invalid row; lenient mode drops it and counts it.
  bool strict = true;
};

struct PltResult {
  Trajectory trajectory;
  std::size_t dropped_rows = 0;
};

inline constexpr std::size_t kPltHeaderLines = 6;

/// Parses GeoLife PLT content: 6 header lines, then rows
/// `lat,lon,0,alt_ft,days_since_1899,date,time`. Altitude and day number are
/// read but discarded.
inline PltResult parse_plt(std::string_view content, const std::string& user_id,
                           const std::string& traj_id, PltOptions opts = {}) {
  std::vector<TrackPoint> points;
  std::size_t dropped = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto eol = content.find('\n', pos);
    if (eol == std::string_view::npos) eol = content.size();
    const auto line = detail::trim(content.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line_no <= kPltHeaderLines || line.empty()) continue;

    const auto where = traj_id + ":" + std::to_string(line_no);
    const auto cols = detail::split(line, ',');
    TrackPoint p;
    double alt = 0.0, days = 0.0;
    const bool ok = cols.size() == 7 && detail::parse_double(cols[0], p.lat) &&
                    detail::parse_double(cols[1], p.lon) && detail::parse_double(cols[3], alt) &&
                    detail::parse_double(cols[4], days) && detail::parse_utc(cols[5], cols[6], p.t);
    if (!ok || !std::isfinite(p.lat) || !std::isfinite(p.lon)) {
      if (opts.strict) fail(ErrorCode::MalformedRow, "malformed row at " + where);
      ++dropped;
      continue;
    }
    if (!validate_coordinate(p.lon, p.lat)) {
      if (opts.strict) fail(ErrorCode::OutOfRangeCoordinate, "coordinate out of range at " + where);
      ++dropped;
      continue;
    }
    if (!points.empty() && p.t < points.back().t) {
      if (opts.strict) fail(ErrorCode::MalformedRow, "timestamp goes backwards at " + where);
      ++dropped;
      continue;
    }
    points.push_back(p);
  }
  if (points.size() < 2) {
    fail(ErrorCode::EmptyTrajectory, "'" + traj_id + "' has fewer than 2 valid rows");
  }
  return {Trajectory(user_id, traj_id, std::move(points)), dropped};
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << content;
  if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Trajectory JSONL: {"user_id": "...", "traj_id": "...", "points": [[lon, lat, epoch_s], ...]}
// ---------------------------------------------------------------------------

inline json points_to_json(std::span<const TrackPoint> points) {
  json pts = json::array();
  for (const auto& p : points) pts.push_back(json::array({p.lon, p.lat, p.t}));
  return pts;
}

inline std::vector<TrackPoint> points_from_json(const json& pts) {
  std::vector<TrackPoint> points;
  points.reserve(pts.size());
  for (const auto& row : pts) {
    if (!row.is_array() || row.size() != 3 || !row[0].is_number() || !row[1].is_number() ||
        !row[2].is_number_integer()) {
      fail(ErrorCode::MalformedRow, "point must be [lon, lat, epoch_s]");
    }
    points.push_back({row[0].get<double>(), row[1].get<double>(), row[2].get<EpochSeconds>()});
  }
  return points;
}

inline json trajectory_to_json(const Trajectory& traj) {
  json j;
  j["user_id"] = traj.user_id();
  j["traj_id"] = traj.traj_id();
  j["points"] = points_to_json(traj.points());
  return j;
}

inline Trajectory trajectory_from_json(const json& j) {
  if (!j.is_object() || !j.contains("user_id") || !j.contains("traj_id") || !j.contains("points")) {
    fail(ErrorCode::MalformedRow, "trajectory record needs user_id, traj_id, points");
  }
  return Trajectory(j.at("user_id").get<std::string>(), j.at("traj_id").get<std::string>(),
                    points_from_json(j.at("points")));
}

/// Calls fn(json, line_no) for every non-blank line.
template <typename Fn>
void for_each_jsonl(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::MalformedRow, "line " + std::to_string(line_no) + ": " + e.what());
    }
    fn(j, line_no);
  }
}

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  for_each_jsonl(in, std::forward<Fn>(fn));
}

inline std::vector<Trajectory> read_trajectories(std::istream& in) {
  std::vector<Trajectory> out;
  for_each_jsonl(in, [&](const json& j, std::size_t line_no) {
    try {
      out.push_back(trajectory_from_json(j));
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      fail(ErrorCode::MalformedRow, "line " + std::to_string(line_no) + ": " + e.what());
    }
  });
  return out;
}

inline std::vector<Trajectory> read_trajectories(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  return read_trajectories(in);
}

inline void write_trajectories(std::ostream& out, std::span<const Trajectory> trajs) {
  for (const auto& t : trajs) out << trajectory_to_json(t).dump() << '\n';
}

inline void write_trajectories(const std::filesystem::path& path, std::span<const Trajectory> trajs) {
  std::ostringstream ss;
  write_trajectories(ss, trajs);
  write_file(path, ss.str());
}

// Bounds file: {"min_lon":..., "min_lat":..., "max_lon":..., "max_lat":...}

inline GeoBounds bounds_from_json(const json& j) {
  try {
    return GeoBounds(j.at("min_lon").get<double>(), j.at("min_lat").get<double>(),
                     j.at("max_lon").get<double>(), j.at("max_lat").get<double>());
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("bounds file: ") + e.what());
  }
}

inline GeoBounds read_bounds(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::InvalidArgument, "bounds file: " + std::string(e.what()));
  }
  return bounds_from_json(j);
}

}  // namespace trajlens
