// trajlens command-line entry point.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error. Errors are
// printed to stderr as `trajlens: error code=<Code> message="..."`.

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <sstream>

#include "commands.hpp"

namespace {

using namespace trajlens;
using namespace trajlens::cli;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::LockHeld: return 1;
    default: return 2;
  }
}

void report_error(std::string_view code, std::string_view message) {
  std::string escaped;
  for (char c : message) {
    if (c == '"' || c == '\\') escaped += '\\';
    escaped += (c == '\n') ? ' ' : c;
  }
  std::cerr << "trajlens: error code=" << code << " message=\"" << escaped << "\"\n";
}

void add_backend_options(CLI::App* cmd, BackendOptions& b) {
  cmd->add_option("--endpoint", b.endpoint, "Remote embedding service base URL");
  cmd->add_option("--model-name", b.model_name, "Model label recorded for the remote backend");
  cmd->add_option("--dim", b.dim, "Expected embedding dimension for the remote backend (0 = accept server)");
  cmd->add_option("--layer", b.layer, "Hidden layer requested from the remote service")
      ->check(CLI::IsMember({"last", "input"}))
      ->capture_default_str();
  cmd->add_option("--batch-size", b.batch_size, "Texts per remote request")->capture_default_str();
  cmd->add_option("--concurrency", b.concurrency, "Concurrent remote requests")->capture_default_str();
  cmd->add_option("--retries", b.retries, "Retries per failed request")->capture_default_str();
  cmd->add_option("--backoff-ms", b.backoff_ms, "Initial retry backoff in milliseconds")->capture_default_str();
  cmd->add_flag("--client-pooling", b.client_pooling, "Fetch token vectors and pool locally");
}

void add_serialization_options(CLI::App* cmd, SerializationConfig& s) {
  cmd->add_option("--prefix", s.prefix, "Text placed before the coordinate list")->capture_default_str();
  cmd->add_option("--decimals", s.decimals, "Decimal places per coordinate")
      ->check(CLI::Range(1, 10))
      ->capture_default_str();
  cmd->add_flag("--trim-zeros", s.trim_zeros, "Drop trailing zeros from coordinates");
}

fs::path default_work_dir(const std::string& explicit_dir, const fs::path& out, bool out_is_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (out_is_dir) return out;
  return out.has_parent_path() ? out.parent_path() : fs::path(".");
}

/// The subcommand's settings as a TOML section that `--config` reads back.
/// CLI11 writes an unset vector option's default as a quoted string, so those
/// defaults are recorded as results first to come out as arrays.
std::string effective_config(CLI::App* cmd) {
  for (CLI::Option* opt : cmd->get_options()) {
    const std::string def = opt->get_default_str();
    if (opt->count() > 0 || def.size() < 2 || def.front() != '[' || def.back() != ']') continue;
    std::vector<std::string> items;
    std::stringstream ss(def.substr(1, def.size() - 2));
    for (std::string item; std::getline(ss, item, ',');) items.push_back(item);
    opt->add_result(items);
  }
  return "[" + cmd->get_name() + "]\n" + cmd->config_to_str(true, false);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajlens: trajectory analytics with language-model embeddings"};
  app.set_version_flag("--version", std::string(TRAJLENS_VERSION));
  app.set_config("--config", "", "TOML config file; command-line flags override it");
  app.require_subcommand(1);

  std::string work_dir;
  std::function<void(const RunContext&)> action;
  fs::path out_for_work_dir;
  bool out_is_dir = false;

  // ingest ------------------------------------------------------------------
  IngestOptions ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Parse a GeoLife directory into trajectory JSONL");
  c_ingest->add_option("--geolife-dir", ingest.geolife_dir, "GeoLife root (<root>/<user>/Trajectory/*.plt)")
      ->required();
  c_ingest->add_option("--out", ingest.out, "Output trajectory JSONL")->required();
  c_ingest->add_flag("--strict", ingest.strict, "Reject a file on its first invalid row");
  c_ingest->add_option("--work-dir", work_dir, "Directory for reports and the lock file");
  c_ingest->callback([&] {
    out_for_work_dir = ingest.out;
    action = [&](const RunContext& ctx) { cmd_ingest(ingest, ctx); };
  });

  // preprocess ----------------------------------------------------------------
  PreprocessOptions pre;
  std::string stays_out;
  bool no_compress = false;
  auto* c_pre = app.add_subcommand("preprocess", "Noise filtering, compression, stay points, user filtering");
  c_pre->add_option("--in", pre.in, "Input trajectory JSONL")->required();
  c_pre->add_option("--out", pre.out, "Output trajectory JSONL")->required();
  c_pre->add_option("--stays-out", stays_out, "Optional stay-point JSONL output");
  c_pre->add_option("--max-speed-kmh", pre.config.max_speed_kmh)->capture_default_str();
  c_pre->add_option("--compress-radius-km", pre.config.compress_radius_km)->capture_default_str();
  c_pre->add_option("--stop-radius-km", pre.config.stop_radius_km)->capture_default_str();
  c_pre->add_option("--stop-min-minutes", pre.config.stop_min_minutes)->capture_default_str();
  c_pre->add_option("--dbscan-eps-km", pre.config.dbscan_eps_km)->capture_default_str();
  c_pre->add_option("--dbscan-min-samples", pre.config.dbscan_min_samples)->capture_default_str();
  c_pre->add_option("--min-trajs-per-user", pre.config.min_trajs_per_user)->capture_default_str();
  c_pre->add_flag("--no-compress", no_compress, "Skip trajectory compression");
  c_pre->add_option("--work-dir", work_dir, "Directory for reports and the lock file");
  c_pre->callback([&] {
    if (!stays_out.empty()) pre.stays_out = stays_out;
    pre.compress = !no_compress;
    out_for_work_dir = pre.out;
    action = [&](const RunContext& ctx) { cmd_preprocess(pre, ctx); };
  });

  // embed ---------------------------------------------------------------------
  EmbedOptions emb;
  std::string failures_out;
  auto* c_emb = app.add_subcommand("embed", "Embed serialized trajectories with a backend");
  c_emb->add_option("--in", emb.in, "Input trajectory JSONL")->required();
  c_emb->add_option("--out", emb.out, "Output embedding JSONL")->required();
  c_emb->add_option("--failures", failures_out, "Failure list JSONL (default <work-dir>/embed.failures.jsonl)");
  c_emb->add_option("--backend", emb.backend.backend, "reference | remote")
      ->check(CLI::IsMember({"reference", "remote"}))
      ->capture_default_str();
  add_backend_options(c_emb, emb.backend);
  add_serialization_options(c_emb, emb.serialization);
  c_emb->add_option("--work-dir", work_dir, "Directory for reports and the lock file");
  c_emb->callback([&] {
    if (!failures_out.empty()) emb.failures_out = failures_out;
    out_for_work_dir = emb.out;
    action = [&](const RunContext& ctx) { cmd_embed(emb, ctx); };
  });

  // distances -----------------------------------------------------------------
  DistancesOptions dist;
  std::string dist_emb;
  auto* c_dist = app.add_subcommand("distances", "Pairwise distance matrix as CSV");
  c_dist->add_option("--in", dist.in, "Input trajectory JSONL")->required();
  c_dist->add_option("--out", dist.out, "Output matrix CSV")->required();
  c_dist->add_option("--metric", dist.metric, "hausdorff | dtw | lcss | cosine")
      ->check(CLI::IsMember({"hausdorff", "dtw", "lcss", "cosine"}))
      ->capture_default_str();
  c_dist->add_option("--lcss-eps", dist.lcss_eps, "LCSS matching threshold in degrees")->capture_default_str();
  c_dist->add_option("--embeddings", dist_emb, "Embedding JSONL (cosine only)");
  c_dist->add_option("--work-dir", work_dir, "Directory for reports and the lock file");
  c_dist->callback([&] {
    if (!dist_emb.empty()) dist.embeddings = dist_emb;
    out_for_work_dir = dist.out;
    action = [&](const RunContext& ctx) { cmd_distances(dist, ctx); };
  });

  // t1 ------------------------------------------------------------------------
  T1Options t1;
  std::string t1_emb, t1_user, t1_linkage = "average";
  bool all_lengths = false;
  BackendOptions t1_backend;
  std::string t1_backend_kind;
  auto* c_t1 = app.add_subcommand("t1", "Distance-structure agreement between classical metrics and embeddings");
  c_t1->add_option("--in", t1.in, "Input trajectory JSONL")->required();
  c_t1->add_option("--out-dir", t1.out_dir, "Output directory")->required();
  c_t1->add_option("--embeddings", t1_emb, "Embedding JSONL");
  c_t1->add_option("--backend", t1_backend_kind, "Embed inline with this backend when --embeddings is absent")
      ->check(CLI::IsMember({"reference", "remote"}));
  add_backend_options(c_t1, t1_backend);
  add_serialization_options(c_t1, t1.serialization);
  c_t1->add_flag("--all-lengths", all_lengths, "Skip the medium-length percentile selection");
  c_t1->add_option("--length-lo-pct", t1.length_lo_pct)->capture_default_str();
  c_t1->add_option("--length-hi-pct", t1.length_hi_pct)->capture_default_str();
  c_t1->add_option("--user", t1_user, "Restrict to one user id");
  c_t1->add_option("--limit", t1.limit, "Keep at most this many trajectories (id order, 0 = all)");
  c_t1->add_option("--lcss-eps", t1.lcss_eps, "LCSS thresholds in degrees (repeatable)")->capture_default_str();
  c_t1->add_option("--n-clusters", t1.cluster.n_clusters)->capture_default_str();
  c_t1->add_option("--linkage", t1_linkage)
      ->check(CLI::IsMember({"average", "complete", "single"}))
      ->capture_default_str();
  c_t1->add_option("--knn", t1.knn, "Neighbour counts (repeatable)")->capture_default_str();
  c_t1->add_flag("--write-matrices", t1.write_matrices, "Also write every distance matrix as CSV");
  c_t1->add_option("--work-dir", work_dir, "Directory for reports and the lock file");
  c_t1->callback([&] {
    if (!t1_emb.empty()) t1.embeddings = t1_emb;
    t1.medium_length = !all_lengths;
    if (!t1_user.empty()) t1.user = t1_user;
    if (!t1_backend_kind.empty()) {
      t1_backend.backend = t1_backend_kind;
      t1.inline_backend = t1_backend;
    }
    t1.cluster.linkage = *linkage_from_string(t1_linkage);
    out_for_work_dir = t1.out_dir;
    out_is_dir = true;
    action = [&](const RunContext& ctx) { cmd_t1(t1, ctx); };
  });

  // t2-prepare ----------------------------------------------------------------
  T2PrepareOptions prep;
  std::string split_text = "80:5:15";
  std::uint64_t prep_seed = 0;
  auto* c_prep = app.add_subcommand("t2-prepare", "Build destination-prediction prompts and splits");
  c_prep->add_option("--in", prep.in, "Input trajectory JSONL")->required();
  c_prep->add_option("--bounds", prep.bounds, "Bounds JSON for the destination region")->required();
  c_prep->add_option("--out-dir", prep.out_dir, "Output directory")->required();
  c_prep->add_option("--split", split_text, "train:valid:test ratio")->capture_default_str();
  c_prep->add_option("--seed", prep_seed, "Shuffle seed")->capture_default_str();
  c_prep->add_option("--window-minutes", prep.window_minutes)->capture_default_str();
  c_prep->add_option("--fraction", prep.fraction, "Leading share of the window kept as the partial trajectory")
      ->capture_default_str();
  add_serialization_options(c_prep, prep.serialization);
  c_prep->add_option("--work-dir", work_dir, "Directory for reports and the lock file");
  c_prep->callback([&] {
    prep.split = SplitConfig::parse(split_text, prep_seed);
    out_for_work_dir = prep.out_dir;
    out_is_dir = true;
    action = [&](const RunContext& ctx) { cmd_t2_prepare(prep, ctx); };
  });

  // gmm-baseline --------------------------------------------------------------
  GmmBaselineCmdOptions gmm;
  std::string gmm_model_out;
  auto add_gmm_options = [](CLI::App* cmd, GmmOptions& g) {
    cmd->add_option("--components", g.components, "Mixture components")->capture_default_str();
    cmd->add_option("--gmm-seed", g.seed, "EM initialisation seed")->capture_default_str();
    cmd->add_option("--max-iters", g.max_iters)->capture_default_str();
    cmd->add_option("--tol", g.tol, "Stop when the log-likelihood gain is below this")->capture_default_str();
  };
  auto* c_gmm = app.add_subcommand("gmm-baseline", "Fit the GMM baseline on train and predict valid/test");
  c_gmm->add_option("--instances", gmm.instances, "instances.jsonl from t2-prepare")->required();
  c_gmm->add_option("--out", gmm.out, "Completions JSONL with one candidate per record")->required();
  c_gmm->add_option("--model-out", gmm_model_out, "Model JSON (default <work-dir>/gmm_model.json)");
  add_gmm_options(c_gmm, gmm.baseline.gmm);
  c_gmm->add_option("--work-dir", work_dir, "Directory for reports and the lock file");
  c_gmm->callback([&] {
    if (!gmm_model_out.empty()) gmm.model_out = gmm_model_out;
    out_for_work_dir = gmm.out;
    action = [&](const RunContext& ctx) { cmd_gmm_baseline(gmm, ctx); };
  });

  // t2-eval -------------------------------------------------------------------
  T2EvalOptions ev;
  std::string ev_instances, error_mode = "min";
  auto* c_ev = app.add_subcommand("t2-eval", "Score completions against withheld destinations");
  c_ev->add_option("--completions", ev.completions, "Completions JSONL {id, outputs}")->required();
  c_ev->add_option("--truths", ev.truths, "truth.jsonl from t2-prepare")->required();
  c_ev->add_option("--instances", ev_instances, "instances.jsonl; adds the GMM baseline row");
  c_ev->add_option("--out", ev.out, "Metrics report JSON")->required();
  c_ev->add_option("--k", ev.ks, "Candidate counts (repeatable)")->capture_default_str();
  c_ev->add_option("--radius-m", ev.radii_m, "Accuracy radii in metres (repeatable)")->capture_default_str();
  c_ev->add_option("--error-mode", error_mode, "min: best of k; mean: average of valid candidates")
      ->check(CLI::IsMember({"min", "mean"}))
      ->capture_default_str();
  add_gmm_options(c_ev, ev.baseline.gmm);
  c_ev->add_option("--work-dir", work_dir, "Directory for reports and the lock file");
  c_ev->callback([&] {
    if (!ev_instances.empty()) ev.instances = ev_instances;
    ev.error_mode = error_mode == "mean" ? ErrorMode::Mean : ErrorMode::Min;
    out_for_work_dir = ev.out;
    action = [&](const RunContext& ctx) { cmd_t2_eval(ev, ctx); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const Error& e) {
    report_error(to_string(e.code()), e.what());
    return exit_code_for(e.code());
  }

  CLI::App* selected = app.get_subcommands().front();
  try {
    RunContext ctx{selected->get_name(), default_work_dir(work_dir, out_for_work_dir, out_is_dir),
                   effective_config(selected)};
    WorkDirLock lock(ctx.work_dir);
    ctx.echo_config();
    action(ctx);
  } catch (const Error& e) {
    report_error(to_string(e.code()), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    report_error("Internal", e.what());
    return 2;
  }
  return 0;
}
