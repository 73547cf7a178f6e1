#pragma once

// Token embedding through either backend, and the batch corpus driver.
//
// Remote protocol: POST <endpoint>/v1/embed with
//   {"texts": [...], "pooling": "mean"|"none", "layer": "last"|"input"}
// answered by
//   {"model": "...", "dim": D, "embeddings": [...]}
// where each entry is one vector ("mean") or a list of token vectors ("none").
// Failures are an HTTP status plus {"error": "..."}.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "trajlens/detail/parallel.hpp"
#include "trajlens/embedding.hpp"
#include "trajlens/error.hpp"

namespace trajlens {

inline constexpr const char* kEmbedTokenEnv = "TRAJLENS_EMBED_TOKEN";

struct RemoteOptions {
  int retries = 3;
  std::chrono::milliseconds initial_backoff{1000};
  std::chrono::seconds timeout{120};
  std::string layer = "last";
  /// Bearer token; when empty, TRAJLENS_EMBED_TOKEN is consulted.
  std::string token;
};

class RemoteEmbedClient {
 public:
  RemoteEmbedClient(const BackendDescriptor& backend, RemoteOptions opts)
      : backend_(backend), opts_(std::move(opts)) {
    backend_.validate();
    if (backend_.kind != BackendKind::Remote) fail(ErrorCode::InvalidArgument, "backend is not remote");
    const auto& url = *backend_.endpoint;
    const auto scheme_end = url.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = url.find('/', host_start);
    if (path_start == std::string::npos) {
      base_ = url;
    } else {
      base_ = url.substr(0, path_start);
      path_prefix_ = url.substr(path_start);
      while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    }
    if (opts_.token.empty()) {
      if (const char* env = std::getenv(kEmbedTokenEnv)) opts_.token = env;
    }
  }

  /// One pooled vector per text.
  std::vector<std::vector<double>> embed_pooled(const std::vector<std::string>& texts) const {
    const auto body = request(texts, "mean");
    std::vector<std::vector<double>> out;
    try {
      out = body.at("embeddings").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::RemoteUnavailable, std::string("malformed embed response: ") + e.what());
    }
    if (out.size() != texts.size()) fail(ErrorCode::RemoteUnavailable, "embed response has wrong count");
    const auto dim = advertised_dim(body);
    for (const auto& v : out) check_vector(v, dim);
    return out;
  }

  /// Token vectors per text.
  std::vector<TokenVectors> embed_tokens(const std::vector<std::string>& texts) const {
    const auto body = request(texts, "none");
    std::vector<TokenVectors> out;
    try {
      out = body.at("embeddings").get<std::vector<TokenVectors>>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::RemoteUnavailable, std::string("malformed embed response: ") + e.what());
    }
    if (out.size() != texts.size()) fail(ErrorCode::RemoteUnavailable, "embed response has wrong count");
    const auto dim = advertised_dim(body);
    for (const auto& tokens : out) {
      if (tokens.empty()) fail(ErrorCode::RemoteUnavailable, "embed response has no tokens");
      for (const auto& v : tokens) check_vector(v, dim);
    }
    return out;
  }

 private:
  std::size_t advertised_dim(const nlohmann::json& body) const {
    std::size_t dim = 0;
    if (body.contains("dim") && body["dim"].is_number_unsigned()) dim = body["dim"].get<std::size_t>();
    if (backend_.dim != 0 && dim != 0 && dim != backend_.dim) {
      fail(ErrorCode::DimensionMismatch, "server dim " + std::to_string(dim) + " != expected " +
                                             std::to_string(backend_.dim));
    }
    return backend_.dim != 0 ? backend_.dim : dim;
  }

  static void check_vector(const std::vector<double>& v, std::size_t dim) {
    if (dim != 0 && v.size() != dim) {
      fail(ErrorCode::DimensionMismatch, "vector of length " + std::to_string(v.size()) + ", expected " +
                                             std::to_string(dim));
    }
    for (double x : v) {
      if (!std::isfinite(x)) fail(ErrorCode::NonFinite, "embedding contains non-finite values");
    }
  }

  nlohmann::json request(const std::vector<std::string>& texts, const char* pooling) const {
    const nlohmann::json req = {{"texts", texts}, {"pooling", pooling}, {"layer", opts_.layer}};
    const auto payload = req.dump();
    std::string last_error;
    auto backoff = opts_.initial_backoff;
    for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      httplib::Client cli(base_);
      cli.set_connection_timeout(opts_.timeout);
      cli.set_read_timeout(opts_.timeout);
      cli.set_write_timeout(opts_.timeout);
      if (!opts_.token.empty()) cli.set_bearer_token_auth(opts_.token);
      auto res = cli.Post(path_prefix_ + "/v1/embed", payload, "application/json");
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 200) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
          last_error = std::string("unparseable body: ") + e.what();
          continue;
        }
      }
      last_error = "HTTP " + std::to_string(res->status);
      try {
        const auto err = nlohmann::json::parse(res->body);
        if (err.contains("error")) last_error += ": " + err["error"].get<std::string>();
      } catch (const std::exception&) {
      }
    }
    fail(ErrorCode::RemoteUnavailable, last_error);
  }

  BackendDescriptor backend_;
  RemoteOptions opts_;
  std::string base_;
  std::string path_prefix_;
};

/// Token vectors for one text, one per model token.
inline TokenVectors embed_tokens(std::string_view text, const BackendDescriptor& backend,
                                 const RemoteOptions& remote = {}) {
  backend.validate();
  if (text.empty()) fail(ErrorCode::EmptyText, "cannot embed empty text");
  if (backend.kind == BackendKind::Reference) {
    if (backend.dim != ReferenceEmbedder::kDim) {
      fail(ErrorCode::DimensionMismatch, "reference backend has dim " + std::to_string(ReferenceEmbedder::kDim));
    }
    return ReferenceEmbedder{}.embed_tokens(text);
  }
  RemoteEmbedClient client(backend, remote);
  return std::move(client.embed_tokens({std::string(text)}).front());
}

struct CorpusOptions {
  std::size_t batch_size = 8;
  unsigned concurrency = 4;
  RemoteOptions remote;
  /// Remote only: pool on the server ("mean") or fetch tokens and pool here.
  bool server_pooling = true;
  /// Called with (completed, total) after each batch.
  std::function<void(std::size_t, std::size_t)> progress;
};

struct EmbedFailure {
  std::string traj_id;
  std::string message;
};

struct CorpusResult {
  std::vector<EmbeddingVector> vectors;  // input order, failures omitted
  std::vector<EmbedFailure> failures;    // input order
};

/// Embeds every trajectory. A failing item is recorded and the batch goes on.
/// Remote batches that fail as a whole are retried item by item to isolate the
/// culprit.
inline CorpusResult embed_corpus(std::span<const Trajectory> trajs, const BackendDescriptor& backend,
                                 const SerializationConfig& cfg, const CorpusOptions& opts = {}) {
  backend.validate();
  const std::size_t n = trajs.size();
  std::vector<std::optional<std::vector<double>>> slots(n);
  std::vector<std::string> errors(n);
  std::vector<std::string> texts(n);
  for (std::size_t i = 0; i < n; ++i) texts[i] = serialize_trajectory(trajs[i], cfg);

  const std::size_t batch = std::max<std::size_t>(1, opts.batch_size);
  const std::size_t n_batches = (n + batch - 1) / batch;
  std::mutex progress_mutex;
  std::size_t done = 0;

  std::optional<RemoteEmbedClient> client;
  if (backend.kind == BackendKind::Remote) client.emplace(backend, opts.remote);

  auto embed_one = [&](std::size_t i) {
    try {
      if (!client) {
        slots[i] = mean_pool_values(embed_tokens(texts[i], backend));
      } else if (opts.server_pooling) {
        slots[i] = std::move(client->embed_pooled({texts[i]}).front());
      } else {
        slots[i] = mean_pool_values(client->embed_tokens({texts[i]}).front());
      }
    } catch (const Error& e) {
      errors[i] = std::string(to_string(e.code())) + ": " + e.what();
    }
  };

  auto run_batch = [&](std::size_t b) {
    const std::size_t lo = b * batch;
    const std::size_t hi = std::min(n, lo + batch);
    bool batched_ok = false;
    if (client && hi - lo > 1) {
      std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(lo),
                                     texts.begin() + static_cast<std::ptrdiff_t>(hi));
      try {
        if (opts.server_pooling) {
          auto vecs = client->embed_pooled(chunk);
          for (std::size_t k = 0; k < vecs.size(); ++k) slots[lo + k] = std::move(vecs[k]);
        } else {
          auto toks = client->embed_tokens(chunk);
          for (std::size_t k = 0; k < toks.size(); ++k) slots[lo + k] = mean_pool_values(toks[k]);
        }
        batched_ok = true;
      } catch (const Error&) {
      }
    }
    if (!batched_ok) {
      for (std::size_t i = lo; i < hi; ++i) embed_one(i);
    }
    if (opts.progress) {
      std::lock_guard lock(progress_mutex);
      done += hi - lo;
      opts.progress(done, n);
    }
  };

  const unsigned workers = client ? std::max(1U, opts.concurrency) : 0;
  detail::parallel_for(n_batches, run_batch, workers);

  CorpusResult result;
  std::size_t dim = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!slots[i]) {
      result.failures.push_back({trajs[i].traj_id(), errors[i]});
      continue;
    }
    if (result.vectors.empty()) dim = slots[i]->size();
    if (slots[i]->size() != dim) {
      result.failures.push_back({trajs[i].traj_id(), "DimensionMismatch: dim changed within the run"});
      continue;
    }
    result.vectors.push_back({trajs[i].traj_id(), std::move(*slots[i])});
  }
  return result;
}

}  // namespace trajlens
