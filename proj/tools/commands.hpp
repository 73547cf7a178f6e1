#pragma once

// Pipeline commands behind the trajlens CLI. Stages talk only through files:
// trajectory JSONL -> embeddings JSONL -> matrices/partitions/reports, and
// prompt JSONL -> (external model) -> completions JSONL -> metrics report.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "trajlens/analysis.hpp"
#include "trajlens/destination.hpp"
#include "trajlens/detail/parallel.hpp"
#include "trajlens/detail/random.hpp"
#include "trajlens/distance.hpp"
#include "trajlens/embed_client.hpp"
#include "trajlens/embedding.hpp"
#include "trajlens/error.hpp"
#include "trajlens/gmm.hpp"
#include "trajlens/io.hpp"
#include "trajlens/preprocess.hpp"

#ifndef TRAJLENS_VERSION
#define TRAJLENS_VERSION "0.0.0"
#endif

namespace trajlens::cli {

namespace fs = std::filesystem;

/// Advisory lock on a work directory, held for the lifetime of the object.
class WorkDirLock {
 public:
  explicit WorkDirLock(const fs::path& dir) : path_(dir / ".trajlens.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      fail(ErrorCode::LockHeld, "work dir " + dir.string() + " is locked by another run (" + path_.string() + ")");
    }
  }
  WorkDirLock(const WorkDirLock&) = delete;
  WorkDirLock& operator=(const WorkDirLock&) = delete;
  ~WorkDirLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

/// Effective configuration of one command run, echoed into the work dir.
struct RunContext {
  std::string command;
  fs::path work_dir;
  std::string effective_config;

  std::string config_hash() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a64(effective_config)));
    return buf;
  }

  json meta() const {
    return {{"toolkit_version", TRAJLENS_VERSION}, {"command", command}, {"config_hash", config_hash()}};
  }

  void echo_config() const {
    fs::create_directories(work_dir);
    write_file(work_dir / (command + ".config.toml"), effective_config);
  }
};

inline void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

inline void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

struct IngestOptions {
  fs::path geolife_dir;
  fs::path out;
  bool strict = false;
};

struct IngestSummary {
  std::size_t files = 0;
  std::size_t trajectories = 0;
  std::size_t users = 0;
  std::size_t dropped_rows = 0;
  std::size_t failed_files = 0;
};

/// Lists `<root>/<user>/Trajectory/*.plt` in sorted order. A root holding a
/// `Data` directory (the distribution layout) is descended into.
inline std::vector<std::pair<std::string, fs::path>> list_plt_files(fs::path root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) fail(ErrorCode::Io, "cannot read GeoLife root " + root.string());
  if (fs::is_directory(root / "Data", ec)) root /= "Data";
  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& user_dir : fs::directory_iterator(root)) {
    if (!user_dir.is_directory()) continue;
    const auto traj_dir = user_dir.path() / "Trajectory";
    if (!fs::is_directory(traj_dir, ec)) continue;
    for (const auto& f : fs::directory_iterator(traj_dir)) {
      auto ext = f.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (f.is_regular_file() && ext == ".plt") files.emplace_back(user_dir.path().filename().string(), f.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline IngestSummary cmd_ingest(const IngestOptions& opts, const RunContext& ctx) {
  const auto files = list_plt_files(opts.geolife_dir);
  std::vector<std::optional<PltResult>> results(files.size());
  std::vector<std::string> errors(files.size());
  detail::parallel_for(files.size(), [&](std::size_t i) {
    const auto& [user, path] = files[i];
    try {
      results[i] = parse_plt(read_file(path), user, user + "_" + path.stem().string(), {opts.strict});
    } catch (const Error& e) {
      errors[i] = std::string(to_string(e.code())) + ": " + e.what();
    }
  });

  IngestSummary s;
  s.files = files.size();
  std::set<std::string> users;
  std::ostringstream out;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!results[i]) {
      ++s.failed_files;
      std::cerr << "trajlens: warning file=\"" << files[i].second.string() << "\" " << errors[i] << '\n';
      continue;
    }
    ++s.trajectories;
    s.dropped_rows += results[i]->dropped_rows;
    users.insert(results[i]->trajectory.user_id());
    out << trajectory_to_json(results[i]->trajectory).dump() << '\n';
  }
  s.users = users.size();
  if (files.empty()) std::cerr << "trajlens: warning no .plt files under " << opts.geolife_dir.string() << '\n';
  ensure_parent(opts.out);
  write_file(opts.out, out.str());

  json report = ctx.meta();
  report["files"] = s.files;
  report["trajectories"] = s.trajectories;
  report["users"] = s.users;
  report["dropped_rows"] = s.dropped_rows;
  report["failed_files"] = s.failed_files;
  write_json(ctx.work_dir / "ingest.report.json", report);
  std::cout << "files=" << s.files << " trajectories=" << s.trajectories << " users=" << s.users
            << " dropped_rows=" << s.dropped_rows << " failed_files=" << s.failed_files << '\n';
  return s;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

struct PreprocessOptions {
  fs::path in;
  fs::path out;
  std::optional<fs::path> stays_out;
  PreprocessConfig config;
  bool compress = true;
};

inline json stay_to_json(const StayPoint& s) {
  json j = {{"user_id", s.user_id}, {"lon", s.lon}, {"lat", s.lat}, {"t_start", s.t_start}, {"t_end", s.t_end}};
  j["cluster_id"] = s.cluster_id ? json(*s.cluster_id) : json(nullptr);
  return j;
}

inline void cmd_preprocess(const PreprocessOptions& opts, const RunContext& ctx) {
  opts.config.validate();
  const auto input = read_trajectories(opts.in);
  const auto& cfg = opts.config;

  struct Stage {
    std::optional<Trajectory> traj;
    std::vector<StayPoint> stays;
    std::size_t noise_dropped = 0;
    std::size_t compress_dropped = 0;
  };
  std::vector<Stage> stages(input.size());
  detail::parallel_for(input.size(), [&](std::size_t i) {
    auto& st = stages[i];
    try {
      auto clean = filter_noise(input[i], cfg.max_speed_kmh);
      st.noise_dropped = input[i].size() - clean.size();
      st.stays = detect_stay_points(clean, cfg.stop_radius_km, cfg.stop_min_minutes);
      if (opts.compress) {
        auto small = compress(clean, cfg.compress_radius_km);
        st.compress_dropped = clean.size() - small.size();
        clean = std::move(small);
      }
      st.traj = std::move(clean);
    } catch (const Error&) {
      st.noise_dropped = input[i].size();
    }
  });

  std::size_t noise_points = 0, noise_trajs = 0, compress_points = 0;
  std::vector<Trajectory> cleaned;
  std::map<std::string, std::vector<StayPoint>> stays_by_user;
  for (auto& st : stages) {
    noise_points += st.noise_dropped;
    compress_points += st.compress_dropped;
    if (!st.traj) {
      ++noise_trajs;
      continue;
    }
    auto& bucket = stays_by_user[st.traj->user_id()];
    bucket.insert(bucket.end(), st.stays.begin(), st.stays.end());
    cleaned.push_back(std::move(*st.traj));
  }
  const auto kept = filter_users(cleaned, cfg.min_trajs_per_user);
  std::set<std::string> users_before, users_after;
  for (const auto& t : cleaned) users_before.insert(t.user_id());
  for (const auto& t : kept) users_after.insert(t.user_id());

  std::size_t n_stays = 0, n_noise_stays = 0, n_clusters = 0;
  std::ostringstream stays_out;
  for (auto& [user, stays] : stays_by_user) {
    if (!users_after.contains(user)) continue;
    const auto clustered = cluster_stay_points(stays, cfg.dbscan_eps_km, cfg.dbscan_min_samples);
    int max_id = -1;
    for (const auto& s : clustered) {
      ++n_stays;
      if (!s.cluster_id) ++n_noise_stays;
      else max_id = std::max(max_id, *s.cluster_id);
      stays_out << stay_to_json(s).dump() << '\n';
    }
    n_clusters += static_cast<std::size_t>(max_id + 1);
  }

  ensure_parent(opts.out);
  write_trajectories(opts.out, kept);
  if (opts.stays_out) {
    ensure_parent(*opts.stays_out);
    write_file(*opts.stays_out, stays_out.str());
  }

  json report = ctx.meta();
  report["config"] = {{"max_speed_kmh", cfg.max_speed_kmh},
                      {"compress_radius_km", cfg.compress_radius_km},
                      {"stop_radius_km", cfg.stop_radius_km},
                      {"stop_min_minutes", cfg.stop_min_minutes},
                      {"dbscan_eps_km", cfg.dbscan_eps_km},
                      {"dbscan_min_samples", cfg.dbscan_min_samples},
                      {"min_trajs_per_user", cfg.min_trajs_per_user},
                      {"compress", opts.compress}};
  report["input_trajectories"] = input.size();
  report["noise_filter"] = {{"dropped_points", noise_points}, {"dropped_trajectories", noise_trajs}};
  report["compression"] = {{"dropped_points", compress_points}};
  report["stay_points"] = {{"count", n_stays}, {"noise", n_noise_stays}, {"clusters", n_clusters}};
  report["user_filter"] = {{"dropped_users", users_before.size() - users_after.size()},
                           {"dropped_trajectories", cleaned.size() - kept.size()}};
  report["output_trajectories"] = kept.size();
  write_json(ctx.work_dir / "preprocess.report.json", report);
  std::cout << "input=" << input.size() << " output=" << kept.size() << " stay_points=" << n_stays << '\n';
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

struct BackendOptions {
  std::string backend = "reference";
  std::string endpoint;
  std::string model_name;
  std::size_t dim = 0;
  std::string layer = "last";
  std::size_t batch_size = 8;
  unsigned concurrency = 4;
  int retries = 3;
  long backoff_ms = 1000;
  bool client_pooling = false;

  BackendDescriptor descriptor() const {
    if (backend == "reference") {
      if (!endpoint.empty()) fail(ErrorCode::InvalidArgument, "--endpoint only applies to the remote backend");
      return BackendDescriptor::reference();
    }
    if (backend == "remote") {
      if (endpoint.empty()) fail(ErrorCode::InvalidArgument, "remote backend needs --endpoint");
      return BackendDescriptor::remote(endpoint, model_name.empty() ? "remote" : model_name, dim);
    }
    fail(ErrorCode::InvalidArgument, "unknown backend '" + backend + "'");
  }

  CorpusOptions corpus() const {
    CorpusOptions c;
    c.batch_size = batch_size;
    c.concurrency = concurrency;
    c.remote.retries = retries;
    c.remote.initial_backoff = std::chrono::milliseconds(backoff_ms);
    c.remote.layer = layer;
    c.server_pooling = !client_pooling;
    return c;
  }
};

struct EmbedOptions {
  fs::path in;
  fs::path out;
  std::optional<fs::path> failures_out;
  BackendOptions backend;
  SerializationConfig serialization;
};

inline CorpusResult cmd_embed(const EmbedOptions& opts, const RunContext& ctx) {
  opts.serialization.validate();
  const auto trajs = read_trajectories(opts.in);
  auto corpus_opts = opts.backend.corpus();
  corpus_opts.progress = [](std::size_t done, std::size_t total) {
    std::cerr << "trajlens: progress " << done << "/" << total << '\n';
  };
  auto result = embed_corpus(trajs, opts.backend.descriptor(), opts.serialization, corpus_opts);
  ensure_parent(opts.out);
  write_embeddings(opts.out, result.vectors);
  std::ostringstream failures;
  for (const auto& f : result.failures) {
    failures << json{{"traj_id", f.traj_id}, {"error", f.message}}.dump() << '\n';
  }
  write_file(opts.failures_out.value_or(ctx.work_dir / "embed.failures.jsonl"), failures.str());
  std::cout << "embedded=" << result.vectors.size() << " failed=" << result.failures.size() << '\n';
  if (!trajs.empty() && result.vectors.empty()) fail(ErrorCode::RemoteUnavailable, "every embedding failed");
  return result;
}

// ---------------------------------------------------------------------------
// distances
// ---------------------------------------------------------------------------

struct DistancesOptions {
  fs::path in;
  fs::path out;
  std::string metric = "hausdorff";
  double lcss_eps = 0.005;
  std::optional<fs::path> embeddings;
};

inline MetricParams make_metric(const std::string& name, double eps) {
  const auto m = metric_from_string(name);
  if (!m) fail(ErrorCode::InvalidArgument, "unknown metric '" + name + "'");
  if (*m == Metric::Lcss) return MetricParams::lcss(eps);
  return {*m, 0.0};
}

inline void cmd_distances(const DistancesOptions& opts, const RunContext&) {
  const auto params = make_metric(opts.metric, opts.lcss_eps);
  const auto trajs = read_trajectories(opts.in);
  std::vector<EmbeddingVector> emb;
  if (params.metric == Metric::Cosine) {
    if (!opts.embeddings) fail(ErrorCode::MissingEmbeddings, "cosine metric needs --embeddings");
    emb = read_embeddings(*opts.embeddings);
  }
  const auto m = pairwise_matrix(trajs, params, emb);
  std::ostringstream ss;
  write_matrix_csv(ss, m);
  ensure_parent(opts.out);
  write_file(opts.out, ss.str());
  std::cout << "metric=" << params.label() << " n=" << m.size() << '\n';
}

// ---------------------------------------------------------------------------
// t1
// ---------------------------------------------------------------------------

struct T1Options {
  fs::path in;
  fs::path out_dir;
  std::optional<fs::path> embeddings;
  std::optional<BackendOptions> inline_backend;
  SerializationConfig serialization;
  bool medium_length = true;
  double length_lo_pct = 25.0;
  double length_hi_pct = 75.0;
  std::optional<std::string> user;
  std::size_t limit = 0;
  std::vector<double> lcss_eps{0.005, 0.02};
  ClusterParams cluster;
  std::vector<std::size_t> knn{5, 20};
  bool write_matrices = false;
};

inline std::string partition_csv(const Partition& p) {
  std::ostringstream ss;
  ss << "traj_id,cluster\n";
  for (std::size_t i = 0; i < p.size(); ++i) ss << p.ids[i] << ',' << p.labels[i] << '\n';
  return ss.str();
}

inline json partition_geojson(std::span<const Trajectory> trajs, const Partition& p, const std::string& metric) {
  json features = json::array();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    json coords = json::array();
    for (const auto& pt : trajs[i].points()) coords.push_back({pt.lon, pt.lat});
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "LineString"}, {"coordinates", coords}}},
                        {"properties",
                         {{"traj_id", trajs[i].traj_id()},
                          {"user_id", trajs[i].user_id()},
                          {"metric", metric},
                          {"cluster", p.labels[i]}}}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

struct T1Result {
  std::vector<std::string> metrics;
  std::vector<std::vector<double>> rho;
  double rand_hausdorff_cosine = 0.0;
  std::vector<std::pair<std::size_t, double>> knn_hausdorff_cosine;
};

inline T1Result cmd_t1(const T1Options& opts, const RunContext& ctx) {
  auto trajs = read_trajectories(opts.in);
  if (opts.user) {
    std::erase_if(trajs, [&](const Trajectory& t) { return t.user_id() != *opts.user; });
  }
  if (trajs.empty()) fail(ErrorCode::EmptySelection, "no trajectories selected");
  if (opts.medium_length) trajs = select_medium_length(trajs, opts.length_lo_pct, opts.length_hi_pct);
  std::sort(trajs.begin(), trajs.end(),
            [](const Trajectory& a, const Trajectory& b) { return a.traj_id() < b.traj_id(); });
  if (opts.limit > 0 && trajs.size() > opts.limit) trajs.resize(opts.limit);

  std::vector<EmbeddingVector> emb;
  if (opts.embeddings) {
    emb = read_embeddings(*opts.embeddings);
  } else if (opts.inline_backend) {
    auto res = embed_corpus(trajs, opts.inline_backend->descriptor(), opts.serialization,
                            opts.inline_backend->corpus());
    if (!res.failures.empty()) {
      fail(ErrorCode::MissingEmbeddings, "embedding failed for '" + res.failures.front().traj_id + "'");
    }
    emb = std::move(res.vectors);
  } else {
    fail(ErrorCode::MissingEmbeddings, "t1 needs --embeddings or --backend");
  }

  std::vector<MetricParams> params{MetricParams::hausdorff(), MetricParams::dtw()};
  for (double eps : opts.lcss_eps) params.push_back(MetricParams::lcss(eps));
  params.push_back(MetricParams::cosine());

  std::vector<DistanceMatrix> mats;
  for (const auto& p : params) mats.push_back(pairwise_matrix(trajs, p, emb));

  fs::create_directories(opts.out_dir);
  T1Result r;
  for (const auto& p : params) r.metrics.push_back(p.label());
  const std::size_t nm = mats.size();
  r.rho.assign(nm, std::vector<double>(nm, 1.0));
  for (std::size_t a = 0; a < nm; ++a) {
    for (std::size_t b = a + 1; b < nm; ++b) {
      double rho = std::numeric_limits<double>::quiet_NaN();
      try {
        rho = matrix_correlation(mats[a], mats[b]);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ConstantInput) throw;
      }
      r.rho[a][b] = r.rho[b][a] = rho;
    }
  }
  json rho_json = json::array();
  for (const auto& row : r.rho) {
    json jr = json::array();
    for (double v : row) jr.push_back(std::isnan(v) ? json(nullptr) : json(v));
    rho_json.push_back(jr);
  }
  json corr = ctx.meta();
  corr["metrics"] = r.metrics;
  corr["rho"] = rho_json;
  write_json(opts.out_dir / "correlation.json", corr);

  if (opts.write_matrices) {
    for (std::size_t a = 0; a < nm; ++a) {
      std::ostringstream ss;
      write_matrix_csv(ss, mats[a]);
      write_file(opts.out_dir / ("matrix_" + r.metrics[a] + ".csv"), ss.str());
    }
  }

  const auto& haus = mats.front();
  const auto& cos = mats.back();
  const auto p_haus = agglomerative_cluster(haus, opts.cluster);
  const auto p_cos = agglomerative_cluster(cos, opts.cluster);
  write_file(opts.out_dir / "partition_hausdorff.csv", partition_csv(p_haus));
  write_file(opts.out_dir / "partition_cosine.csv", partition_csv(p_cos));
  write_file(opts.out_dir / "clusters_hausdorff.geojson", partition_geojson(trajs, p_haus, "hausdorff").dump() + "\n");
  write_file(opts.out_dir / "clusters_cosine.geojson", partition_geojson(trajs, p_cos, "cosine").dump() + "\n");
  r.rand_hausdorff_cosine = rand_index(p_haus, p_cos);

  json knn = json::array();
  for (auto k : opts.knn) {
    const double ov = knn_overlap(haus, cos, {k});
    r.knn_hausdorff_cosine.emplace_back(k, ov);
    knn.push_back({{"k", k}, {"overlap", ov}});
  }
  json report = ctx.meta();
  report["n_trajectories"] = trajs.size();
  report["n_clusters"] = opts.cluster.n_clusters;
  report["rand_index"] = {{"a", "hausdorff"}, {"b", "cosine"}, {"value", r.rand_hausdorff_cosine}};
  report["knn_overlap"] = {{"a", "hausdorff"}, {"b", "cosine"}, {"values", knn}};
  write_json(opts.out_dir / "t1_report.json", report);
  std::cout << "n=" << trajs.size() << " rand(hausdorff,cosine)=" << r.rand_hausdorff_cosine << '\n';
  return r;
}

// ---------------------------------------------------------------------------
// t2-prepare
// ---------------------------------------------------------------------------

struct T2PrepareOptions {
  fs::path in;
  fs::path bounds;
  fs::path out_dir;
  SplitConfig split;
  double window_minutes = 15.0;
  double fraction = 0.75;
  SerializationConfig serialization;
};

struct T2PrepareSummary {
  std::size_t input = 0;
  std::size_t out_of_bounds = 0;
  std::size_t too_short = 0;
  SplitSizes sizes{0, 0, 0};
};

inline T2PrepareSummary cmd_t2_prepare(const T2PrepareOptions& opts, const RunContext& ctx) {
  opts.serialization.validate();
  opts.split.validate();
  const auto bounds = read_bounds(opts.bounds);
  const auto trajs = read_trajectories(opts.in);
  T2PrepareSummary s;
  s.input = trajs.size();
  std::vector<PredictionInstance> instances;
  for (const auto& t : trajs) {
    if (!bounds.contains(t.back())) {
      ++s.out_of_bounds;
      continue;
    }
    try {
      instances.push_back(truncate_for_prediction(t, opts.window_minutes, opts.fraction));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::TooShort) throw;
      ++s.too_short;
    }
  }
  if (instances.empty()) fail(ErrorCode::EmptySelection, "no trajectory qualifies for prediction");
  auto splits = split_dataset(std::move(instances), opts.split);
  s.sizes = {splits.train.size(), splits.valid.size(), splits.test.size()};

  fs::create_directories(opts.out_dir);
  std::ostringstream inst_out, truth_out;
  auto export_split = [&](const std::vector<PredictionInstance>& part, const std::string& name, bool with_completion) {
    std::ostringstream prompts;
    for (const auto& inst : part) {
      const Coordinate dest{inst.destination.lon, inst.destination.lat};
      json rec = {{"id", inst.partial.traj_id()}, {"prompt", build_prompt(inst.partial.points(), std::nullopt, opts.serialization)}};
      if (with_completion) rec["completion"] = completion_text(dest, opts.serialization);
      prompts << rec.dump() << '\n';
      if (name != "train") {
        truth_out << json{{"id", inst.partial.traj_id()}, {"split", name}, {"truth", {dest.lon, dest.lat}}}.dump()
                  << '\n';
      }
      inst_out << json{{"id", inst.partial.traj_id()},
                       {"user_id", inst.partial.user_id()},
                       {"split", name},
                       {"partial", points_to_json(inst.partial.points())},
                       {"destination", {dest.lon, dest.lat}}}
                      .dump()
               << '\n';
    }
    write_file(opts.out_dir / (name + ".jsonl"), prompts.str());
  };
  export_split(splits.train, "train", true);
  export_split(splits.valid, "valid", true);
  export_split(splits.test, "test", false);
  write_file(opts.out_dir / "truth.jsonl", truth_out.str());
  write_file(opts.out_dir / "instances.jsonl", inst_out.str());

  json report = ctx.meta();
  report["input_trajectories"] = s.input;
  report["destination_out_of_bounds"] = s.out_of_bounds;
  report["too_short"] = s.too_short;
  report["instances"] = s.sizes.train + s.sizes.valid + s.sizes.test;
  report["split"] = {{"train", s.sizes.train}, {"valid", s.sizes.valid}, {"test", s.sizes.test}};
  report["split_ratios"] = {opts.split.train, opts.split.valid, opts.split.test};
  report["seed"] = opts.split.seed;
  write_json(opts.out_dir / "t2_prepare.report.json", report);
  std::cout << "instances=" << (s.sizes.train + s.sizes.valid + s.sizes.test) << " train=" << s.sizes.train
            << " valid=" << s.sizes.valid << " test=" << s.sizes.test << " out_of_bounds=" << s.out_of_bounds
            << " too_short=" << s.too_short << '\n';
  return s;
}

// ---------------------------------------------------------------------------
// gmm-baseline and t2-eval
// ---------------------------------------------------------------------------

struct Instance {
  std::string id;
  std::string split;
  std::vector<Point2> partial;
  Point2 destination;
};

inline std::vector<Instance> read_instances(const fs::path& path) {
  std::vector<Instance> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line_no) {
    try {
      Instance inst;
      inst.id = j.at("id").get<std::string>();
      inst.split = j.at("split").get<std::string>();
      for (const auto& p : points_from_json(j.at("partial"))) inst.partial.push_back({p.lon, p.lat});
      const auto d = coordinate_from_json(j.at("destination"));
      if (!d) fail(ErrorCode::MalformedRow, "bad destination");
      inst.destination = {d->lon, d->lat};
      out.push_back(std::move(inst));
    } catch (const json::exception& e) {
      fail(ErrorCode::MalformedRow, "instances line " + std::to_string(line_no) + ": " + e.what());
    }
  });
  return out;
}

struct GmmBaselineOptions {
  GmmOptions gmm;
  std::vector<std::string> predict_splits{"valid", "test"};
};

/// Fits on the train split and predicts one candidate per requested record.
inline std::map<std::string, std::vector<std::string>> run_gmm_baseline(std::span<const Instance> instances,
                                                                        const GmmBaselineOptions& opts,
                                                                        GmmModel* model_out = nullptr) {
  std::vector<TrainingTrajectory> train;
  for (const auto& inst : instances) {
    if (inst.split == "train") train.push_back({inst.id, inst.partial, inst.destination});
  }
  if (train.empty()) fail(ErrorCode::TooFewPoints, "no training instances for the GMM baseline");
  auto model = gmm_fit_baseline(train, opts.gmm);
  std::map<std::string, std::vector<std::string>> outputs;
  for (const auto& inst : instances) {
    if (std::find(opts.predict_splits.begin(), opts.predict_splits.end(), inst.split) == opts.predict_splits.end()) {
      continue;
    }
    const auto p = gmm_predict(model, inst.partial);
    outputs[inst.id] = {"(" + detail::format_double(p.x) + ", " + detail::format_double(p.y) + ")"};
  }
  if (model_out) *model_out = std::move(model);
  return outputs;
}

struct GmmBaselineCmdOptions {
  fs::path instances;
  fs::path out;
  std::optional<fs::path> model_out;
  GmmBaselineOptions baseline;
};

inline void cmd_gmm_baseline(const GmmBaselineCmdOptions& opts, const RunContext& ctx) {
  const auto instances = read_instances(opts.instances);
  GmmModel model;
  const auto outputs = run_gmm_baseline(instances, opts.baseline, &model);
  std::ostringstream ss;
  for (const auto& inst : instances) {
    const auto it = outputs.find(inst.id);
    if (it == outputs.end()) continue;
    ss << json{{"id", inst.id}, {"outputs", it->second}}.dump() << '\n';
  }
  ensure_parent(opts.out);
  write_file(opts.out, ss.str());
  json mj = ctx.meta();
  mj["model"] = gmm_to_json(model);
  write_json(opts.model_out.value_or(ctx.work_dir / "gmm_model.json"), mj);
  std::cout << "components=" << model.components() << " iterations=" << (model.log_likelihood_trace.size() - 1)
            << " predictions=" << outputs.size() << '\n';
}

struct T2EvalOptions {
  fs::path completions;
  fs::path truths;
  std::optional<fs::path> instances;
  fs::path out;
  std::vector<std::size_t> ks{1, 5};
  std::vector<double> radii_m{100.0, 500.0};
  ErrorMode error_mode = ErrorMode::Min;
  GmmBaselineOptions baseline;
};

struct Truth {
  std::string split;
  Coordinate coord;
};

inline std::map<std::string, Truth> read_truths(const fs::path& path) {
  std::map<std::string, Truth> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line_no) {
    try {
      const auto c = coordinate_from_json(j.at("truth"));
      if (!c || !validate_coordinate(c->lon, c->lat)) fail(ErrorCode::MalformedRow, "bad truth coordinate");
      out[j.at("id").get<std::string>()] = {j.value("split", std::string("test")), *c};
    } catch (const json::exception& e) {
      fail(ErrorCode::MalformedRow, "truths line " + std::to_string(line_no) + ": " + e.what());
    }
  });
  return out;
}

inline std::map<std::string, std::vector<std::string>> read_completions(const fs::path& path) {
  std::map<std::string, std::vector<std::string>> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line_no) {
    try {
      auto& slot = out[j.at("id").get<std::string>()];
      for (const auto& o : j.at("outputs")) slot.push_back(o.is_string() ? o.get<std::string>() : o.dump());
    } catch (const json::exception& e) {
      fail(ErrorCode::MalformedRow, "completions line " + std::to_string(line_no) + ": " + e.what());
    }
  });
  return out;
}

inline std::string radius_key(double r) { return detail::format_double(r) + "m"; }

/// Metrics for one method on one split. Any @k whose k exceeds the most
/// candidates any record offers is reported as null.
inline json split_metrics(const std::map<std::string, Truth>& truths,
                          const std::map<std::string, std::vector<std::string>>& outputs, const std::string& split,
                          const T2EvalOptions& opts) {
  std::vector<PredictionRecord> records;
  std::vector<std::vector<std::string>> raw;
  std::size_t missing = 0, max_outputs = 0;
  const auto k_max = *std::max_element(opts.ks.begin(), opts.ks.end());
  for (const auto& [id, truth] : truths) {
    if (truth.split != split) continue;
    const auto it = outputs.find(id);
    if (it == outputs.end()) {
      ++missing;
      continue;
    }
    max_outputs = std::max(max_outputs, it->second.size());
    records.push_back(make_record(id, truth.coord, it->second, k_max));
    raw.push_back(it->second);
  }
  json j;
  j["records"] = records.size();
  j["missing"] = missing;
  const auto validity = validity_at_k(raw, k_max);
  j["validity@" + std::to_string(k_max)] = validity ? json(*validity) : json(nullptr);
  json err = json::object(), excluded = json::object(), acc = json::object();
  for (auto k : opts.ks) {
    const auto key = std::to_string(k);
    if (k > max_outputs || records.empty()) {
      err[key] = nullptr;
      excluded[key] = nullptr;
      continue;
    }
    try {
      const auto e = error_at_k(records, k, opts.error_mode);
      err[key] = e.mean_km;
      excluded[key] = e.excluded;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoValidRecords) throw;
      err[key] = nullptr;
      excluded[key] = records.size();
    }
  }
  for (double r : opts.radii_m) {
    json per_k = json::object();
    for (auto k : opts.ks) {
      const auto a = k > max_outputs ? std::nullopt : accuracy_at_k(records, k, r);
      per_k[std::to_string(k)] = a ? json(*a) : json(nullptr);
    }
    acc[radius_key(r)] = per_k;
  }
  j["error_km"] = err;
  j["error_excluded_records"] = excluded;
  j["accuracy"] = acc;
  return j;
}

inline json cmd_t2_eval(const T2EvalOptions& opts, const RunContext& ctx) {
  if (opts.ks.empty()) fail(ErrorCode::InvalidArgument, "at least one --k is required");
  const auto truths = read_truths(opts.truths);
  const auto completions = read_completions(opts.completions);
  std::size_t covered = 0;
  for (const auto& [id, _] : truths) covered += completions.contains(id);
  if (covered == 0) fail(ErrorCode::NoValidRecords, "completions cover none of the truth ids");

  std::set<std::string> splits;
  for (const auto& [_, t] : truths) splits.insert(t.split);

  json report = ctx.meta();
  report["units"] = {{"error", "km"}, {"radius", "m"}};
  report["error_mode"] = opts.error_mode == ErrorMode::Min ? "min" : "mean";
  json methods;
  for (const auto& s : splits) methods["llm"][s] = split_metrics(truths, completions, s, opts);
  if (opts.instances) {
    const auto instances = read_instances(*opts.instances);
    auto baseline = opts.baseline;
    baseline.predict_splits.assign(splits.begin(), splits.end());
    const auto gmm_out = run_gmm_baseline(instances, baseline);
    for (const auto& s : splits) methods["gmm"][s] = split_metrics(truths, gmm_out, s, opts);
    report["gmm"] = {{"components", opts.baseline.gmm.components}, {"seed", opts.baseline.gmm.seed}};
  }
  report["methods"] = methods;
  ensure_parent(opts.out);
  write_json(opts.out, report);
  std::cout << "records=" << covered << " report=" << opts.out.string() << '\n';
  return report;
}

}  // namespace trajlens::cli
