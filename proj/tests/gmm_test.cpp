#include <gtest/gtest.h>

#include <random>

#include "trajlens/gmm.hpp"

using namespace trajlens;

namespace {

std::vector<Point2> cloud(std::mt19937_64& rng, std::size_t n, Point2 c, double sx, double sy) {
  std::normal_distribution<double> gx(c.x, sx), gy(c.y, sy);
  std::vector<Point2> out(n);
  for (auto& p : out) p = {gx(rng), gy(rng)};
  return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

}  // namespace

TEST(Gmm, SingleComponentIsClosedForm) {
  std::mt19937_64 rng(1);
  auto pts = cloud(rng, 400, {116.3, 39.9}, 0.05, 0.02);
  for (std::size_t i = 0; i < pts.size(); i += 2) pts[i].y += 0.3 * (pts[i].x - 116.3);  // correlate
  const auto m = gmm_fit(pts, {.components = 1, .seed = 3});
  double mx = 0, my = 0;
  for (const auto& p : pts) {
    mx += p.x;
    my += p.y;
  }
  mx /= pts.size();
  my /= pts.size();
  double xx = 0, xy = 0, yy = 0;
  for (const auto& p : pts) {
    xx += (p.x - mx) * (p.x - mx);
    xy += (p.x - mx) * (p.y - my);
    yy += (p.y - my) * (p.y - my);
  }
  xx /= pts.size();
  xy /= pts.size();
  yy /= pts.size();
  ASSERT_EQ(m.components(), 1u);
  EXPECT_DOUBLE_EQ(m.weights[0], 1.0);
  EXPECT_NEAR(m.means[0].x, mx, 1e-12);
  EXPECT_NEAR(m.means[0].y, my, 1e-12);
  EXPECT_NEAR(m.covariances[0].xx, xx, 1e-12);
  EXPECT_NEAR(m.covariances[0].xy, xy, 1e-12);
  EXPECT_NEAR(m.covariances[0].yy, yy, 1e-12);
}

TEST(Gmm, RecoversTwoSeparatedClouds) {
  std::mt19937_64 rng(2);
  const Point2 c1{116.20, 39.90}, c2{116.50, 40.10};
  const double sigma = 0.01;
  const std::size_t n = 600;
  auto pts = cloud(rng, n, c1, sigma, sigma);
  const auto more = cloud(rng, n, c2, sigma, sigma);
  pts.insert(pts.end(), more.begin(), more.end());
  const auto m = gmm_fit(pts, {.components = 2, .seed = 11});
  const double se = sigma / std::sqrt(static_cast<double>(n));
  auto near = [&](Point2 mu, Point2 c) { return std::abs(mu.x - c.x) <= 3 * se && std::abs(mu.y - c.y) <= 3 * se; };
  const bool ok = (near(m.means[0], c1) && near(m.means[1], c2)) || (near(m.means[0], c2) && near(m.means[1], c1));
  EXPECT_TRUE(ok) << m.means[0].x << "," << m.means[0].y << " " << m.means[1].x << "," << m.means[1].y;
  EXPECT_NEAR(m.weights[0], 0.5, 1e-6);
}

TEST(Gmm, LogLikelihoodNonDecreasing) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> cx(116.0, 117.0), cy(39.5, 40.5), s(0.005, 0.1);
    std::vector<Point2> pts;
    const int groups = 1 + static_cast<int>(seed % 5);
    for (int g = 0; g < groups; ++g) {
      const auto c = cloud(rng, 100 + seed * 13, {cx(rng), cy(rng)}, s(rng), s(rng));
      pts.insert(pts.end(), c.begin(), c.end());
    }
    const auto m = gmm_fit(pts, {.components = 2 + seed % 5, .seed = seed, .max_iters = 100, .tol = 0});
    ASSERT_GE(m.log_likelihood_trace.size(), 2u);
    for (std::size_t i = 1; i < m.log_likelihood_trace.size(); ++i) {
      EXPECT_GE(m.log_likelihood_trace[i], m.log_likelihood_trace[i - 1] - 1e-9) << "seed " << seed << " iter " << i;
    }
    double wsum = 0;
    for (double w : m.weights) wsum += w;
    EXPECT_NEAR(wsum, 1.0, 1e-12);
    for (const auto& c : m.covariances) {
      const auto [l1, l2] = c.eigenvalues();
      EXPECT_GE(std::min(l1, l2), kCovarianceFloor * (1 - 1e-6));
    }
  }
}

TEST(Gmm, DeterministicForSeed) {
  std::mt19937_64 rng(4);
  const auto pts = cloud(rng, 300, {116.3, 39.9}, 0.05, 0.05);
  const auto a = gmm_fit(pts, {.components = 4, .seed = 9});
  const auto b = gmm_fit(pts, {.components = 4, .seed = 9});
  EXPECT_EQ(a.log_likelihood_trace, b.log_likelihood_trace);
  EXPECT_EQ(a.weights, b.weights);
}

TEST(Gmm, Errors) {
  const std::vector<Point2> two{{0, 0}, {1, 1}};
  EXPECT_EQ(code_of([&] { gmm_fit(two, {.components = 3}); }), ErrorCode::TooFewPoints);
  EXPECT_EQ(code_of([] { gmm_predict(GmmModel{}, std::vector<Point2>{{0, 0}}); }), ErrorCode::UnfittedModel);
}

TEST(Gmm, SignatureSumsToOne) {
  std::mt19937_64 rng(5);
  const auto pts = cloud(rng, 200, {116.3, 39.9}, 0.05, 0.05);
  const auto m = gmm_fit(pts, {.components = 5});
  const auto sig = gmm_signature(m, std::span(pts).first(17));
  double s = 0;
  for (double x : sig) s += x;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

namespace {

std::vector<TrainingTrajectory> two_regions(std::mt19937_64& rng) {
  std::vector<TrainingTrajectory> train;
  train.push_back({"r1", cloud(rng, 30, {116.2, 39.9}, 0.005, 0.005), {116.21, 39.91}});
  train.push_back({"r2", cloud(rng, 30, {116.6, 40.2}, 0.005, 0.005), {116.61, 40.21}});
  return train;
}

}  // namespace

TEST(GmmPredict, DisjointRegions) {
  std::mt19937_64 rng(6);
  const auto train = two_regions(rng);
  const auto m = gmm_fit_baseline(train, {.components = 2, .seed = 1});
  const auto q1 = cloud(rng, 5, {116.2, 39.9}, 0.005, 0.005);
  const auto q2 = cloud(rng, 5, {116.6, 40.2}, 0.005, 0.005);
  const auto p1 = gmm_predict(m, q1), p2 = gmm_predict(m, q2);
  EXPECT_EQ(p1.x, 116.21);
  EXPECT_EQ(p1.y, 39.91);
  EXPECT_EQ(p2.x, 116.61);
  EXPECT_EQ(p2.y, 40.21);
}

TEST(GmmPredict, IdenticalPartialReturnsOwnDestination) {
  std::mt19937_64 rng(7);
  std::vector<TrainingTrajectory> train;
  for (int i = 0; i < 6; ++i) {
    train.push_back({"t" + std::to_string(i), cloud(rng, 20, {116.1 + 0.1 * i, 39.9 + 0.05 * i}, 0.01, 0.01),
                     {116.0 + i, 40.0}});
  }
  const auto m = gmm_fit_baseline(train, {.components = 4, .seed = 2});
  for (const auto& t : train) {
    const auto p = gmm_predict(m, t.points);
    EXPECT_EQ(p.x, t.destination.x);
    EXPECT_EQ(p.y, t.destination.y);
  }
}

TEST(GmmPredict, SingleComponentTieGoesToSmallestId) {
  std::mt19937_64 rng(8);
  std::vector<TrainingTrajectory> train{
      {"b", cloud(rng, 10, {116.3, 39.9}, 0.01, 0.01), {116.5, 40.5}},
      {"a", cloud(rng, 10, {116.4, 39.8}, 0.01, 0.01), {116.1, 40.1}},
      {"c", cloud(rng, 10, {116.2, 39.7}, 0.01, 0.01), {116.9, 40.9}},
  };
  const auto m = gmm_fit_baseline(train, {.components = 1});
  const auto p = gmm_predict(m, cloud(rng, 3, {116.0, 39.0}, 0.01, 0.01));
  EXPECT_EQ(p.x, 116.1);
  EXPECT_EQ(p.y, 40.1);
}
