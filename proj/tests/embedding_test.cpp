#include <gtest/gtest.h>

#include <httplib.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "test_support.hpp"
#include "trajlens/embed_client.hpp"

using namespace trajlens;

namespace {

Trajectory two_point() {
  return Trajectory("000", "t", {{116.31752, 39.98461, 0}, {116.31338, 39.98459, 5}});
}

}  // namespace

TEST(Serialize, FiveDecimalString) {
  EXPECT_EQ(serialize_trajectory(two_point()), "Trajectory: (116.31752, 39.98461), (116.31338, 39.98459)");
}

TEST(Serialize, ZeroKeepsTrailingZeros) {
  const std::vector<TrackPoint> p{{0, 0, 0}};
  EXPECT_EQ(serialize_points(p), "Trajectory: (0.00000, 0.00000)");
}

TEST(Serialize, TrimZerosKeepsOneDecimal) {
  EXPECT_EQ(format_coordinate(40.012, 4, true), "40.012");
  EXPECT_EQ(format_coordinate(40.0, 4, true), "40.0");
  EXPECT_EQ(format_coordinate(-3.5, 2, false), "-3.50");
}

TEST(Serialize, EmptyPrefix) {
  SerializationConfig cfg;
  cfg.prefix = "";
  EXPECT_EQ(serialize_trajectory(two_point(), cfg).front(), '(');
}

TEST(Serialize, InjectiveUnderPerturbation) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> pick(0, 9), sign(0, 1);
  std::uniform_real_distribution<double> mag(1.5e-5, 1e-3);
  const auto base = support::random_points(rng, 10, 0.1);
  const auto base_text = serialize_points(base);
  for (int i = 0; i < 2000; ++i) {
    auto p = base;
    const double delta = (sign(rng) ? 1 : -1) * mag(rng);
    auto& pt = p[pick(rng)];
    (sign(rng) ? pt.lon : pt.lat) += delta;
    EXPECT_NE(serialize_points(p), base_text);
  }
}

TEST(Reference, DeterministicAndShaped) {
  const ReferenceEmbedder e;
  const auto text = serialize_trajectory(two_point());
  const auto a = e.embed_tokens(text), b = e.embed_tokens(text);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 5u);  // "Trajectory:", "(116.31752,", "39.98461),", ...
  for (const auto& v : a) {
    ASSERT_EQ(v.size(), ReferenceEmbedder::kDim);
    for (double x : v) EXPECT_TRUE(std::isfinite(x));
  }
  EXPECT_THROW(e.embed_tokens("   "), Error);
}

TEST(Reference, NoCollisionsOverOneCharacterVariants) {
  std::mt19937_64 rng(99);
  const std::string base = "Trajectory: (116.31752, 39.98461), (116.31338, 39.98459), (116.30990, 39.98102)";
  std::set<std::string> texts{base};
  std::uniform_int_distribution<std::size_t> pos(12, base.size() - 1);
  std::uniform_int_distribution<int> digit(0, 9);
  while (texts.size() < 10'000) {
    std::string t = *std::next(texts.begin(), static_cast<long>(rng() % texts.size()));
    const auto p = pos(rng);
    if (!std::isdigit(static_cast<unsigned char>(t[p]))) continue;
    t[p] = static_cast<char>('0' + digit(rng));
    texts.insert(t);
  }
  const ReferenceEmbedder e;
  std::set<std::uint64_t> seen;
  for (const auto& t : texts) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& v : e.embed_tokens(t)) {
      for (double x : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof(bits));
        h = (h ^ bits) * 1099511628211ULL;
      }
    }
    seen.insert(h);
  }
  EXPECT_EQ(seen.size(), texts.size());
}

TEST(MeanPool, Examples) {
  EXPECT_EQ(mean_pool_values({{1.5, -2.0}}), (std::vector<double>{1.5, -2.0}));
  EXPECT_EQ(mean_pool_values({{1, 2}, {3, 4}}), (std::vector<double>{2, 3}));
  EXPECT_EQ(mean_pool_values({{1, 2}, {3, 4}, {8, 0}}), mean_pool_values({{8, 0}, {1, 2}, {3, 4}}));
  EXPECT_THROW(mean_pool_values({{1, 2}, {3}}), Error);
  EXPECT_THROW(mean_pool_values({}), Error);
}

TEST(MeanPool, ScalesLinearly) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  TokenVectors toks(7, std::vector<double>(16));
  for (auto& v : toks) for (auto& x : v) x = g(rng);
  auto scaled = toks;
  for (auto& v : scaled) for (auto& x : v) x *= 4.0;
  const auto a = mean_pool_values(toks), b = mean_pool_values(scaled);
  ASSERT_EQ(a.size(), 16u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 4.0 * a[i], 1e-12);
}

TEST(Cosine, Examples) {
  const std::vector<double> u{1, 2, 3}, neg{-1, -2, -3};
  EXPECT_NEAR(cosine_distance(u, u), 0.0, 1e-15);
  EXPECT_NEAR(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 1.0, 1e-15);
  EXPECT_NEAR(cosine_distance(u, neg), 2.0, 1e-15);
  EXPECT_THROW(cosine_distance(u, std::vector<double>{0, 0, 0}), Error);
  EXPECT_THROW(cosine_distance(u, std::vector<double>{1, 2}), Error);
}

TEST(Cosine, ScaleInvariant) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> u(32);
    for (auto& x : u) x = g(rng);
    auto v = u;
    const double c = std::exp(g(rng));
    for (auto& x : v) x *= c;
    EXPECT_NEAR(cosine_distance(u, v), 0.0, 1e-12);
  }
}

TEST(EmbeddingStore, JsonRoundTrip) {
  support::TempDir dir;
  const std::vector<EmbeddingVector> vs{{"a", {0.1, -2.5, 3e-7}}, {"b", {1, 2, 3}}};
  write_embeddings(dir / "e.jsonl", vs);
  const auto back = read_embeddings(dir / "e.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].traj_id, "a");
  EXPECT_EQ(back[0].values, vs[0].values);
  EXPECT_EQ(back[1].values, vs[1].values);
}

TEST(EmbedCorpus, EmptyAndReference) {
  const auto backend = BackendDescriptor::reference();
  EXPECT_TRUE(embed_corpus({}, backend, {}).vectors.empty());
  std::mt19937_64 rng(1);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 3; ++i) trajs.push_back(support::random_walk(rng, "t" + std::to_string(i), 8, 116.3, 40, 0.01));
  const auto r = embed_corpus(trajs, backend, {});
  ASSERT_EQ(r.vectors.size(), 3u);
  EXPECT_TRUE(r.failures.empty());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.vectors[i].traj_id, trajs[i].traj_id());
    EXPECT_EQ(r.vectors[i].values, mean_pool_values(ReferenceEmbedder{}.embed_tokens(serialize_trajectory(trajs[i]))));
  }
}

// ---------------------------------------------------------------------------
// Remote protocol against an in-process stub server.
// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kStubDim = 4;

std::vector<double> stub_token(const std::string& tok, std::size_t pos) {
  return {static_cast<double>(tok.size()), static_cast<double>(pos), static_cast<double>(tok.front()), 1.0};
}

class StubServer {
 public:
  explicit StubServer(std::string required_token = {}, std::string fail_marker = "FAIL")
      : token_(std::move(required_token)), fail_marker_(std::move(fail_marker)) {
    server_.Post("/v1/embed", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      if (!token_.empty() && req.get_header_value("Authorization") != "Bearer " + token_) {
        res.status = 401;
        res.set_content(R"({"error":"unauthorized"})", "application/json");
        return;
      }
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const std::exception&) {
        res.status = 400;
        return;
      }
      const auto pooling = body.value("pooling", std::string("mean"));
      nlohmann::json out = nlohmann::json::array();
      for (const auto& t : body.at("texts")) {
        const auto text = t.get<std::string>();
        if (text.find(fail_marker_) != std::string::npos) {
          res.status = 500;
          res.set_content(R"({"error":"injected failure"})", "application/json");
          return;
        }
        std::vector<std::vector<double>> toks;
        std::istringstream ss(text);
        std::string w;
        while (ss >> w) toks.push_back(stub_token(w, toks.size()));
        if (pooling == "none") {
          out.push_back(toks);
        } else {
          out.push_back(mean_pool_values(toks));
        }
      }
      res.set_content(nlohmann::json{{"embeddings", out}, {"dim", kStubDim}, {"model", "stub"}}.dump(),
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int requests() const { return requests_; }

 private:
  httplib::Server server_;
  std::string token_;
  std::string fail_marker_;
  int port_ = 0;
  std::atomic<int> requests_{0};
  std::thread thread_;
};

RemoteOptions fast() {
  RemoteOptions o;
  o.retries = 2;
  o.initial_backoff = std::chrono::milliseconds(1);
  o.timeout = std::chrono::seconds(5);
  return o;
}

}  // namespace

TEST(Remote, TokensHaveAdvertisedDim) {
  StubServer stub;
  const auto toks = embed_tokens("Trajectory: (0.00000, 0.00000)", BackendDescriptor::remote(stub.url()), fast());
  ASSERT_EQ(toks.size(), 3u);
  for (const auto& v : toks) EXPECT_EQ(v.size(), kStubDim);
  EXPECT_EQ(toks[1], stub_token("(0.00000,", 1));
}

TEST(Remote, PathPrefixIsKept) {
  httplib::Server server;
  server.Post("/api/v1/embed", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"embeddings":[[1.0,2.0]],"dim":2})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const RemoteEmbedClient client(BackendDescriptor::remote("http://127.0.0.1:" + std::to_string(port) + "/api/"),
                                 fast());
  EXPECT_EQ(client.embed_pooled({"x"}).front(), (std::vector<double>{1.0, 2.0}));
  server.stop();
  th.join();
}

TEST(Remote, DimensionMismatch) {
  StubServer stub;
  try {
    embed_tokens("a b", BackendDescriptor::remote(stub.url(), "stub", 8), fast());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Remote, UnreachableIsRemoteUnavailable) {
  // Bind an ephemeral port and release it without listening.
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  socklen_t len = sizeof(addr);
  ASSERT_EQ(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)), 0);
  ASSERT_EQ(::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len), 0);
  const int port = ntohs(addr.sin_port);
  ::close(fd);
  try {
    embed_tokens("a b", BackendDescriptor::remote("http://127.0.0.1:" + std::to_string(port)), fast());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RemoteUnavailable);
  }
}

TEST(Remote, BearerToken) {
  StubServer stub("s3cret");
  EXPECT_THROW(embed_tokens("a", BackendDescriptor::remote(stub.url()), fast()), Error);
  auto opts = fast();
  opts.token = "s3cret";
  EXPECT_EQ(embed_tokens("a", BackendDescriptor::remote(stub.url()), opts).size(), 1u);
}

TEST(Remote, CorpusIsolatesFailingText) {
  StubServer stub({}, "116.50000");
  const std::vector<Trajectory> trajs{
      Trajectory("u", "a", {{116.3, 40.0, 0}, {116.4, 40.1, 5}}),
      Trajectory("u", "b", {{116.5, 40.0, 0}, {116.6, 40.1, 5}}),
      Trajectory("u", "c", {{116.7, 40.0, 0}, {116.8, 40.1, 5}}),
  };
  CorpusOptions opts;
  opts.remote = fast();
  opts.batch_size = 3;
  for (bool server_pooling : {true, false}) {
    opts.server_pooling = server_pooling;
    const auto r = embed_corpus(trajs, BackendDescriptor::remote(stub.url()), {}, opts);
    ASSERT_EQ(r.vectors.size(), 2u);
    EXPECT_EQ(r.vectors[0].traj_id, "a");
    EXPECT_EQ(r.vectors[1].traj_id, "c");
    ASSERT_EQ(r.failures.size(), 1u);
    EXPECT_EQ(r.failures[0].traj_id, "b");
    EXPECT_NE(r.failures[0].message.find("injected failure"), std::string::npos);
    std::vector<std::vector<double>> toks;
    std::istringstream ss(serialize_trajectory(trajs[2]));
    std::string w;
    while (ss >> w) toks.push_back(stub_token(w, toks.size()));
    EXPECT_EQ(r.vectors[1].values, mean_pool_values(toks));
  }
}

TEST(Remote, ClientPoolingMatchesServerPooling) {
  StubServer stub;
  std::mt19937_64 rng(2);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 20; ++i) trajs.push_back(support::random_walk(rng, "t" + std::to_string(i), 6, 116.3, 40, 0.01));
  CorpusOptions opts;
  opts.remote = fast();
  const auto server = embed_corpus(trajs, BackendDescriptor::remote(stub.url()), {}, opts);
  opts.server_pooling = false;
  const auto client = embed_corpus(trajs, BackendDescriptor::remote(stub.url()), {}, opts);
  ASSERT_EQ(server.vectors.size(), 20u);
  ASSERT_EQ(client.vectors.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t d = 0; d < kStubDim; ++d) {
      EXPECT_NEAR(server.vectors[i].values[d], client.vectors[i].values[d], 1e-5);
    }
  }
}
