#pragma once

// Trajectory-to-text serialization, the offline reference embedder, pooling,
// cosine distance and the embedding store format.

#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trajlens/detail/random.hpp"
#include "trajlens/distance.hpp"
#include "trajlens/error.hpp"
#include "trajlens/geo.hpp"
#include "trajlens/io.hpp"

namespace trajlens {

struct SerializationConfig {
  std::string prefix = "Trajectory: ";
  int decimals = 5;
  std::string pair_separator = ", ";
  /// Drop trailing zeros ("40.012" rather than "40.01200").
  bool trim_zeros = false;

  void validate() const {
    if (decimals < 1 || decimals > 10) fail(ErrorCode::InvalidArgument, "decimals must be in [1, 10]");
  }
};

/// Fixed-point rendering, correctly rounded (ties to even on the exact binary
/// value) and locale independent.
inline std::string format_coordinate(double v, int decimals, bool trim_zeros = false) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, decimals);
  if (ec != std::errc()) fail(ErrorCode::InvalidArgument, "coordinate cannot be formatted");
  std::string s(buf, ptr);
  if (trim_zeros) {
    while (s.size() > 2 && s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
  }
  return s;
}

inline std::string format_pair(double lon, double lat, const SerializationConfig& cfg) {
  return "(" + format_coordinate(lon, cfg.decimals, cfg.trim_zeros) + ", " +
         format_coordinate(lat, cfg.decimals, cfg.trim_zeros) + ")";
}

/// `<prefix>(lon, lat), (lon, lat), ...`
inline std::string serialize_points(std::span<const TrackPoint> points, const SerializationConfig& cfg = {}) {
  cfg.validate();
  if (points.empty()) fail(ErrorCode::EmptyInput, "cannot serialize an empty trajectory");
  std::string out = cfg.prefix;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i > 0) out += cfg.pair_separator;
    out += format_pair(points[i].lon, points[i].lat, cfg);
  }
  return out;
}

inline std::string serialize_trajectory(const Trajectory& traj, const SerializationConfig& cfg = {}) {
  return serialize_points(traj.points(), cfg);
}

struct EmbeddingVector {
  std::string traj_id;
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

using TokenVectors = std::vector<std::vector<double>>;

enum class BackendKind { Reference, Remote };

struct BackendDescriptor {
  BackendKind kind = BackendKind::Reference;
  std::optional<std::string> endpoint;
  std::string model_name = "reference-trigram-256";
  /// Expected vector length; 0 for a remote backend means "accept what the
  /// server advertises".
  std::size_t dim = 256;

  static BackendDescriptor reference() { return {}; }
  static BackendDescriptor remote(std::string endpoint, std::string model_name = "remote", std::size_t dim = 0) {
    return {BackendKind::Remote, std::move(endpoint), std::move(model_name), dim};
  }

  void validate() const {
    if ((kind == BackendKind::Remote) != endpoint.has_value()) {
      fail(ErrorCode::InvalidArgument, "endpoint must be set iff the backend is remote");
    }
  }
};

/// Offline stand-in for a language model. Each whitespace token becomes the
/// sum of signed random projections of its character trigrams, then is
/// modulated elementwise by a per-position vector in [0.5, 1.5). Pure function
/// of the input bytes; makes no claim of model semantics.
class ReferenceEmbedder {
 public:
  static constexpr std::size_t kDim = 256;
  static constexpr std::uint64_t kSeed = 0x7472616A6C656E73ULL;  // "trajlens"

  TokenVectors embed_tokens(std::string_view text) const {
    TokenVectors out;
    std::size_t position = 0;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && is_space(text[i])) ++i;
      const std::size_t start = i;
      while (i < text.size() && !is_space(text[i])) ++i;
      if (i > start) out.push_back(token_vector(text.substr(start, i - start), position++));
    }
    if (out.empty()) fail(ErrorCode::EmptyText, "text has no tokens");
    return out;
  }

  std::vector<double> token_vector(std::string_view token, std::size_t position) const {
    std::string padded;
    padded.reserve(token.size() + 2);
    padded += '\x02';
    padded += token;
    padded += '\x03';
    std::vector<double> v(kDim, 0.0);
    for (std::size_t k = 0; k + 3 <= padded.size(); ++k) {
      const auto h = detail::fnv1a64(std::string_view(padded).substr(k, 3), kSeed);
      for (std::size_t block = 0; block < kDim / 64; ++block) {
        const auto bits = detail::splitmix64(h + block * 0xD6E8FEB86659FD93ULL);
        for (std::size_t b = 0; b < 64; ++b) v[block * 64 + b] += ((bits >> b) & 1U) ? 1.0 : -1.0;
      }
    }
    for (std::size_t d = 0; d < kDim; d += 4) {
      const auto bits = detail::splitmix64(kSeed ^ (position * 0x9E3779B97F4A7C15ULL) ^ (d << 40));
      for (std::size_t lane = 0; lane < 4; ++lane) {
        const auto u = static_cast<double>((bits >> (16 * lane)) & 0xFFFFU) / 65536.0;
        v[d + lane] *= 0.5 + u;
      }
    }
    return v;
  }

 private:
  static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }
};

/// Elementwise arithmetic mean of the token vectors.
inline std::vector<double> mean_pool_values(const TokenVectors& tokens) {
  if (tokens.empty()) fail(ErrorCode::RaggedInput, "cannot pool zero vectors");
  const std::size_t dim = tokens.front().size();
  std::vector<double> sum(dim, 0.0);
  for (const auto& t : tokens) {
    if (t.size() != dim) fail(ErrorCode::RaggedInput, "token vectors have unequal lengths");
    for (std::size_t d = 0; d < dim; ++d) sum[d] += t[d];
  }
  const auto n = static_cast<double>(tokens.size());
  for (auto& x : sum) x /= n;
  return sum;
}

inline EmbeddingVector mean_pool(const TokenVectors& tokens, std::string traj_id = {}) {
  return {std::move(traj_id), mean_pool_values(tokens)};
}

/// 1 - cos(u, v), clamped to [0, 2].
inline double cosine_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) fail(ErrorCode::DimensionMismatch, "embedding dimensions differ");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) fail(ErrorCode::ZeroVector, "cosine distance of a zero vector");
  const double d = 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(d, 0.0, 2.0);
}

inline double cosine_distance(const EmbeddingVector& u, const EmbeddingVector& v) {
  return cosine_distance(std::span<const double>(u.values), std::span<const double>(v.values));
}

/// Pairwise cosine matrix over trajs, looking embeddings up by traj_id.
inline DistanceMatrix pairwise_matrix(std::span<const Trajectory> trajs, const MetricParams& params,
                                      std::span<const EmbeddingVector> embeddings, unsigned threads = 0) {
  if (params.metric != Metric::Cosine) return pairwise_matrix(trajs, params, EmbeddingDistanceFn{}, threads);
  std::map<std::string_view, const EmbeddingVector*> by_id;
  for (const auto& e : embeddings) by_id[e.traj_id] = &e;
  std::vector<const EmbeddingVector*> aligned;
  aligned.reserve(trajs.size());
  std::size_t dim = 0;
  for (const auto& t : trajs) {
    const auto it = by_id.find(t.traj_id());
    if (it == by_id.end()) fail(ErrorCode::MissingEmbeddings, "no embedding for '" + t.traj_id() + "'");
    if (aligned.empty()) dim = it->second->dim();
    if (it->second->dim() != dim) fail(ErrorCode::DimensionMismatch, "embedding dims differ within the run");
    aligned.push_back(it->second);
  }
  return pairwise_matrix(
      trajs, params, [&](std::size_t i, std::size_t j) { return cosine_distance(*aligned[i], *aligned[j]); },
      threads);
}

// Embedding store JSONL: {"traj_id": "...", "dim": D, "values": [...]}

inline json embedding_to_json(const EmbeddingVector& e) {
  json j;
  j["traj_id"] = e.traj_id;
  j["dim"] = e.dim();
  j["values"] = e.values;
  return j;
}

inline EmbeddingVector embedding_from_json(const json& j) {
  EmbeddingVector e;
  try {
    e.traj_id = j.at("traj_id").get<std::string>();
    e.values = j.at("values").get<std::vector<double>>();
    if (j.at("dim").get<std::size_t>() != e.values.size()) {
      fail(ErrorCode::DimensionMismatch, "'" + e.traj_id + "' dim does not match values");
    }
  } catch (const json::exception& ex) {
    fail(ErrorCode::MalformedRow, std::string("embedding record: ") + ex.what());
  }
  for (double x : e.values) {
    if (!std::isfinite(x)) fail(ErrorCode::NonFinite, "'" + e.traj_id + "' has non-finite values");
  }
  return e;
}

inline std::vector<EmbeddingVector> read_embeddings(const std::filesystem::path& path) {
  std::vector<EmbeddingVector> out;
  for_each_jsonl(path, [&](const json& j, std::size_t) { out.push_back(embedding_from_json(j)); });
  return out;
}

inline void write_embeddings(const std::filesystem::path& path, std::span<const EmbeddingVector> vectors) {
  std::ostringstream ss;
  for (const auto& e : vectors) ss << embedding_to_json(e).dump() << '\n';
  write_file(path, ss.str());
}

}  // namespace trajlens
