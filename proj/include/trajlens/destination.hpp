#pragma once

// Destination-prediction harness: dataset splits, prompt export, completion
// parsing, and Error@k / Accuracy@k / Validity@k.

#include <algorithm>
#include <cmath>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trajlens/detail/random.hpp"
#include "trajlens/embedding.hpp"
#include "trajlens/error.hpp"
#include "trajlens/geo.hpp"
#include "trajlens/gmm.hpp"
#include "trajlens/io.hpp"

namespace trajlens {

struct Coordinate {
  double lon = 0.0;
  double lat = 0.0;

  TrackPoint as_point() const { return {lon, lat, 0}; }
  friend bool operator==(const Coordinate&, const Coordinate&) = default;
};

struct SplitConfig {
  double train = 0.80;
  double valid = 0.05;
  double test = 0.15;
  std::uint64_t seed = 0;

  void validate() const {
    if (train < 0 || valid < 0 || test < 0 || std::abs(train + valid + test - 1.0) > 1e-9) {
      fail(ErrorCode::InvalidArgument, "split ratios must be non-negative and sum to 1");
    }
  }

  /// Parses "80:5:15" (any positive scale), normalising by the sum.
  static SplitConfig parse(std::string_view text, std::uint64_t seed = 0) {
    const auto parts = detail::split(text, ':');
    double r[3];
    if (parts.size() != 3 || !detail::parse_double(parts[0], r[0]) || !detail::parse_double(parts[1], r[1]) ||
        !detail::parse_double(parts[2], r[2]) || r[0] < 0 || r[1] < 0 || r[2] < 0 ||
        !(r[0] + r[1] + r[2] > 0)) {
      fail(ErrorCode::InvalidArgument, "split must look like 80:5:15");
    }
    const double total = r[0] + r[1] + r[2];
    SplitConfig cfg{r[0] / total, r[1] / total, r[2] / total, seed};
    cfg.test = 1.0 - cfg.train - cfg.valid;
    if (cfg.test < 0) cfg.test = 0;
    return cfg;
  }
};

template <typename T>
struct Splits {
  std::vector<T> train;
  std::vector<T> valid;
  std::vector<T> test;
};

struct SplitSizes {
  std::size_t train, valid, test;
};

inline SplitSizes split_sizes(std::size_t n, const SplitConfig& cfg) {
  auto floor_of = [n](double r) {
    return std::min(n, static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9)));
  };
  const auto train = floor_of(cfg.train);
  const auto valid = std::min(n - train, floor_of(cfg.valid));
  return {train, valid, n - train - valid};
}

/// Seeded uniform shuffle, then contiguous slices: floor for train and valid,
/// remainder to test.
template <typename T>
Splits<T> split_dataset(std::vector<T> instances, const SplitConfig& cfg) {
  cfg.validate();
  if (instances.size() < 3) fail(ErrorCode::TooFewItems, "splitting needs at least 3 instances");
  detail::Rng rng(cfg.seed);
  detail::shuffle(instances, rng);
  const auto sizes = split_sizes(instances.size(), cfg);
  Splits<T> out;
  auto it = std::make_move_iterator(instances.begin());
  out.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes.train));
  it += static_cast<std::ptrdiff_t>(sizes.train);
  out.valid.assign(it, it + static_cast<std::ptrdiff_t>(sizes.valid));
  it += static_cast<std::ptrdiff_t>(sizes.valid);
  out.test.assign(it, std::make_move_iterator(instances.end()));
  return out;
}

inline constexpr std::string_view kDestinationMarker = " => Destination";

/// Training form ends with " => Destination (lon, lat)"; test form stops at
/// " => Destination".
inline std::string build_prompt(std::span<const TrackPoint> partial, const std::optional<Coordinate>& destination,
                                const SerializationConfig& cfg = {}) {
  if (partial.empty()) fail(ErrorCode::EmptyInput, "prompt needs a non-empty partial trajectory");
  std::string out = serialize_points(partial, cfg);
  out += kDestinationMarker;
  if (destination) out += " " + format_pair(destination->lon, destination->lat, cfg);
  return out;
}

/// The completion a fine-tuned model is expected to produce: " (lon, lat)".
inline std::string completion_text(const Coordinate& destination, const SerializationConfig& cfg = {}) {
  return " " + format_pair(destination.lon, destination.lat, cfg);
}

/// First "(number, number)" after the literal "Destination" (or anywhere when
/// the literal is absent), accepted only if it is a valid coordinate.
inline std::optional<Coordinate> parse_completion(std::string_view text) {
  static const std::regex kPair(
      R"(\(\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*,\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*\))");
  const auto marker = text.find("Destination");
  if (marker != std::string_view::npos) text.remove_prefix(marker + std::string_view("Destination").size());
  std::match_results<std::string_view::const_iterator> match;
  if (!std::regex_search(text.begin(), text.end(), match, kPair)) return std::nullopt;
  Coordinate c;
  if (!detail::parse_double(std::string_view(&*match[1].first, static_cast<std::size_t>(match[1].length())), c.lon) ||
      !detail::parse_double(std::string_view(&*match[2].first, static_cast<std::size_t>(match[2].length())), c.lat)) {
    return std::nullopt;
  }
  if (!std::isfinite(c.lon) || !std::isfinite(c.lat) || !validate_coordinate(c.lon, c.lat)) return std::nullopt;
  return c;
}

struct PredictionRecord {
  std::string id;
  Coordinate truth;
  std::vector<std::optional<Coordinate>> candidates;
  /// Aligned with candidates; empty where the candidate is invalid.
  std::vector<std::optional<double>> errors_km;

  bool any_valid(std::size_t k) const {
    const auto lim = std::min(k, candidates.size());
    return std::any_of(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(lim),
                       [](const auto& c) { return c.has_value(); });
  }
};

/// Parses up to k raw outputs and scores the valid ones against truth.
inline PredictionRecord make_record(std::string id, const Coordinate& truth, std::span<const std::string> outputs,
                                    std::size_t k) {
  PredictionRecord r{std::move(id), truth, {}, {}};
  const auto lim = std::min(k, outputs.size());
  for (std::size_t i = 0; i < lim; ++i) {
    auto c = parse_completion(outputs[i]);
    r.candidates.push_back(c);
    r.errors_km.push_back(c ? std::optional<double>(haversine_km(truth.as_point(), c->as_point())) : std::nullopt);
  }
  return r;
}

enum class ErrorMode { Min, Mean };

struct ErrorAtK {
  double mean_km = 0.0;
  std::size_t used = 0;      // records with >= 1 valid candidate in the first k
  std::size_t excluded = 0;  // records with none
};

/// Mean over records of the best (Min) or average (Mean) error among the
/// valid candidates within each record's first k.
inline ErrorAtK error_at_k(std::span<const PredictionRecord> records, std::size_t k, ErrorMode mode = ErrorMode::Min) {
  if (k == 0) fail(ErrorCode::InvalidArgument, "k must be positive");
  ErrorAtK out;
  double total = 0.0;
  for (const auto& r : records) {
    const auto lim = std::min(k, r.errors_km.size());
    double best = std::numeric_limits<double>::infinity(), sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < lim; ++i) {
      if (!r.errors_km[i]) continue;
      best = std::min(best, *r.errors_km[i]);
      sum += *r.errors_km[i];
      ++count;
    }
    if (count == 0) {
      ++out.excluded;
      continue;
    }
    total += mode == ErrorMode::Min ? best : sum / static_cast<double>(count);
    ++out.used;
  }
  if (out.used == 0) fail(ErrorCode::NoValidRecords, "no record has a valid candidate");
  out.mean_km = total / static_cast<double>(out.used);
  return out;
}

/// Fraction of records with some candidate among the first k within
/// radius_m of the truth. Records without valid candidates count as misses.
/// Absent for an empty record set.
inline std::optional<double> accuracy_at_k(std::span<const PredictionRecord> records, std::size_t k,
                                           double radius_m) {
  if (records.empty()) return std::nullopt;
  std::size_t hits = 0;
  for (const auto& r : records) {
    const auto lim = std::min(k, r.errors_km.size());
    for (std::size_t i = 0; i < lim; ++i) {
      if (r.errors_km[i] && *r.errors_km[i] * 1000.0 <= radius_m) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

/// Pooled fraction of generated strings (first k per record) that parse to
/// valid coordinates. Absent when there are no strings at all.
inline std::optional<double> validity_at_k(std::span<const std::vector<std::string>> raw_outputs, std::size_t k) {
  std::size_t total = 0, valid = 0;
  for (const auto& outs : raw_outputs) {
    const auto lim = std::min(k, outs.size());
    for (std::size_t i = 0; i < lim; ++i) {
      ++total;
      if (parse_completion(outs[i])) ++valid;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(valid) / static_cast<double>(total);
}

inline std::optional<Coordinate> coordinate_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) return std::nullopt;
  return Coordinate{j[0].get<double>(), j[1].get<double>()};
}

// GMM model persistence.

inline json gmm_to_json(const GmmModel& m) {
  json j;
  j["components"] = m.components();
  j["weights"] = m.weights;
  json means = json::array(), covs = json::array(), dests = json::array();
  for (const auto& mu : m.means) means.push_back({mu.x, mu.y});
  for (const auto& c : m.covariances) covs.push_back({{c.xx, c.xy}, {c.xy, c.yy}});
  for (const auto& d : m.train_destinations) dests.push_back({d.x, d.y});
  j["means"] = means;
  j["covariances"] = covs;
  j["train_ids"] = m.train_ids;
  j["train_signatures"] = m.train_signatures;
  j["train_destinations"] = dests;
  j["log_likelihood_trace"] = m.log_likelihood_trace;
  return j;
}

inline GmmModel gmm_from_json(const json& j) {
  GmmModel m;
  try {
    m.weights = j.at("weights").get<std::vector<double>>();
    for (const auto& mu : j.at("means")) m.means.push_back({mu.at(0).get<double>(), mu.at(1).get<double>()});
    for (const auto& c : j.at("covariances")) {
      m.covariances.push_back({c.at(0).at(0).get<double>(), c.at(0).at(1).get<double>(), c.at(1).at(1).get<double>()});
    }
    m.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    m.train_signatures = j.at("train_signatures").get<std::vector<std::vector<double>>>();
    for (const auto& d : j.at("train_destinations")) {
      m.train_destinations.push_back({d.at(0).get<double>(), d.at(1).get<double>()});
    }
    if (j.contains("log_likelihood_trace")) {
      m.log_likelihood_trace = j["log_likelihood_trace"].get<std::vector<double>>();
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedRow, std::string("GMM model file: ") + e.what());
  }
  const auto k = m.weights.size();
  if (m.means.size() != k || m.covariances.size() != k || m.train_ids.size() != m.train_signatures.size() ||
      m.train_ids.size() != m.train_destinations.size()) {
    fail(ErrorCode::MalformedRow, "GMM model file has inconsistent sizes");
  }
  return m;
}

}  // namespace trajlens
