#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cirl/cirl.hpp"
#include "cirl/cohort.hpp"
#include "cirl/rng.hpp"

using namespace cirl;

namespace {

struct CoinPolicy {
  int operator()(const History&, Rng& rng) const { return rng.bernoulli(0.5) ? 1 : 0; }
};

VectorXd vec2(double a, double b) {
  VectorXd v(2);
  v << a, b;
  return v;
}

// Exact best response over a finite candidate set: the synthetic stand-in
// for policy optimization + mu-learning when feature expectations are known.
struct ExactLoopResult {
  std::vector<double> margins;
  std::vector<VectorXd> deltas;
  bool converged = false;
};

ExactLoopResult run_exact_projection_loop(const VectorXd& mu_expert,
                                          const std::vector<VectorXd>& points,
                                          double epsilon, int max_iters, Rng& rng) {
  auto best_response = [&](const VectorXd& w) {
    int best = 0;
    double best_v = -1e300;
    for (std::size_t j = 0; j < points.size(); ++j) {
      double v = w.dot(points[j]);
      if (v > best_v) {
        best_v = v;
        best = static_cast<int>(j);
      }
    }
    return points[best];
  };

  ExactLoopResult res;
  VectorXd w0 = random_unit_vector(static_cast<int>(mu_expert.size()), rng);
  VectorXd mu_bar = best_response(w0);
  res.deltas.push_back(mu_bar);
  for (int k = 1; k <= max_iters; ++k) {
    VectorXd w = mu_expert - mu_bar;
    VectorXd mu_k = best_response(w);
    res.deltas.push_back(mu_k);
    try {
      ProjectionResult pr = projection_step(mu_expert, mu_bar, mu_k);
      mu_bar = pr.mu_bar;
      res.margins.push_back(pr.margin);
    } catch (const degenerate_direction_error&) {
      res.margins.push_back((mu_expert - mu_bar).norm());
      break;
    }
    if (res.margins.back() < epsilon) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace

TEST_CASE("projection step reproduces the hand-computed example") {
  ProjectionResult r = projection_step(vec2(1, 1), vec2(0, 0), vec2(2, 0));
  REQUIRE(r.mu_bar(0) == Catch::Approx(1.0));
  REQUIRE(r.mu_bar(1) == Catch::Approx(0.0));
  REQUIRE(r.margin == Catch::Approx(1.0));
}

TEST_CASE("projection onto the expert point gives zero margin") {
  ProjectionResult r = projection_step(vec2(1, 1), vec2(0, 0), vec2(1, 1));
  REQUIRE((r.mu_bar - vec2(1, 1)).norm() < 1e-12);
  REQUIRE(r.margin == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("projection with a degenerate direction throws") {
  REQUIRE_THROWS_AS(projection_step(vec2(1, 1), vec2(0.5, 0.5), vec2(0.5, 0.5)),
                    degenerate_direction_error);
}

TEST_CASE("projection clamps to the segment and never increases the margin") {
  // unclamped coefficient would be 3
  ProjectionResult r = projection_step(vec2(3, 0), vec2(0, 0), vec2(1, 0));
  REQUIRE(r.mu_bar(0) == Catch::Approx(1.0));
  REQUIRE(r.margin == Catch::Approx(2.0));

  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    VectorXd mu_e = vec2(rng.normal(), rng.normal());
    VectorXd prev = vec2(rng.normal(), rng.normal());
    VectorXd mu_k = vec2(rng.normal(), rng.normal());
    if ((mu_k - prev).norm() < 1e-6) continue;
    ProjectionResult step = projection_step(mu_e, prev, mu_k);
    REQUIRE(step.margin <= (mu_e - prev).norm() + 1e-12);
    // mu_bar stays on the segment [prev, mu_k]
    double seg = (mu_k - prev).norm();
    REQUIRE((step.mu_bar - prev).norm() <= seg + 1e-9);
    REQUIRE((step.mu_bar - mu_k).norm() <= seg + 1e-9);
  }
}

TEST_CASE("simplex projection lands on the simplex and fixes simplex points") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 1 + static_cast<int>(rng.below(6));
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal(0, 2);
    VectorXd p = simplex_project(v);
    REQUIRE(p.minCoeff() >= 0.0);
    REQUIRE(p.sum() == Catch::Approx(1.0).margin(1e-9));
    VectorXd q = simplex_project(p);
    REQUIRE((p - q).lpNorm<Eigen::Infinity>() < 1e-9);
  }
  VectorXd inside(3);
  inside << 0.2, 0.5, 0.3;
  REQUIRE((simplex_project(inside) - inside).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("mixing policy solves the worked examples") {
  {
    std::vector<VectorXd> deltas = {vec2(1, 1)};
    MixingPolicy m = mixing_policy(vec2(1, 1), deltas);
    REQUIRE(m.lambdas(0) == Catch::Approx(1.0));
    REQUIRE(m.distance == Catch::Approx(0.0).margin(1e-9));
  }
  {
    std::vector<VectorXd> deltas = {vec2(0, 0), vec2(2, 0)};
    MixingPolicy m = mixing_policy(vec2(1, 0), deltas);
    REQUIRE(m.lambdas(0) == Catch::Approx(0.5).margin(1e-6));
    REQUIRE(m.lambdas(1) == Catch::Approx(0.5).margin(1e-6));
    REQUIRE(m.distance == Catch::Approx(0.0).margin(1e-7));
  }
  {
    std::vector<VectorXd> deltas = {vec2(0, 0), vec2(0, 2)};
    MixingPolicy m = mixing_policy(vec2(1, 1), deltas);
    REQUIRE((m.achieved_mu - vec2(0, 1)).norm() < 1e-6);
    REQUIRE(m.distance == Catch::Approx(1.0).margin(1e-7));

    // independent fine grid over the 2-candidate simplex
    double best = 1e300;
    for (int i = 0; i <= 100000; ++i) {
      double lam = i / 100000.0;
      best = std::min(best, (vec2(1, 1) - lam * vec2(0, 2)).norm());
    }
    REQUIRE(m.distance == Catch::Approx(best).margin(1e-6));
  }
  REQUIRE_THROWS_AS(mixing_policy(vec2(0, 0), {}), std::invalid_argument);
}

TEST_CASE("exact-geometry loop: margins nonincreasing, convergence certified") {
  Rng rng(31);
  for (int instance = 0; instance < 12; ++instance) {
    int d = instance % 2 == 0 ? 2 : 5;
    int n_points = 4 + static_cast<int>(rng.below(5));
    std::vector<VectorXd> points;
    for (int j = 0; j < n_points; ++j) {
      VectorXd v(d);
      for (int i = 0; i < d; ++i) v(i) = rng.normal(0, 1);
      points.push_back(v);
    }
    // expert inside the convex hull
    VectorXd lambda(n_points);
    for (int j = 0; j < n_points; ++j) lambda(j) = rng.uniform(0.05, 1.0);
    lambda /= lambda.sum();
    VectorXd mu_expert = VectorXd::Zero(d);
    for (int j = 0; j < n_points; ++j) mu_expert += lambda(j) * points[j];

    const double epsilon = 1e-3;
    ExactLoopResult res =
        run_exact_projection_loop(mu_expert, points, epsilon, 5000, rng);
    for (std::size_t k = 1; k < res.margins.size(); ++k)
      REQUIRE(res.margins[k] <= res.margins[k - 1] + 1e-12);
    REQUIRE(res.converged);
    MixingPolicy mix = mixing_policy(mu_expert, res.deltas);
    REQUIRE(mix.distance <= epsilon);
  }
}

TEST_CASE("l1 normalization and random unit directions") {
  VectorXd w = l1_normalized(vec2(-2, 6));
  REQUIRE(std::fabs(w(0)) + std::fabs(w(1)) == Catch::Approx(1.0));
  REQUIRE(w(0) == Catch::Approx(-0.25));
  REQUIRE(l1_normalized(vec2(0, 0)).norm() == 0.0);

  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    VectorXd v = random_unit_vector(3, rng);
    REQUIRE(v.norm() == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("run_cirl trivial paths: zero iterations and immediate convergence",
          "[slow]") {
  SimConfig cfg;
  cfg.set_order(1);
  cfg.noise_std = 0.0;
  cfg.max_horizon = 3;
  BatchDataset d = generate(CoinPolicy{}, 0, cfg, 60, 41);
  EncodedDataset enc(d);
  FeatureMap fmap = FeatureMap::from_simulator(cfg);

  CirlHyper hyper;
  hyper.td.hidden_dim = 8;
  hyper.td.iterations = 150;
  hyper.td.batch_size = 64;
  hyper.seed = 7;

  {
    CirlHyper h0 = hyper;
    h0.max_iters = 0;
    CirlResult r = run_cirl(enc, fmap, 0.9, h0);
    REQUIRE(r.policies.size() == 1);
    REQUIRE(r.mus.size() == 1);
    REQUIRE(r.margins.empty());
    REQUIRE(r.selected == 0);
    REQUIRE(r.weights[0].norm() == Catch::Approx(1.0).margin(1e-9));
  }
  {
    CirlHyper h1 = hyper;
    h1.epsilon = 1e300;  // any margin converges immediately
    h1.max_iters = 10;
    CirlResult r = run_cirl(enc, fmap, 0.9, h1);
    REQUIRE(r.status == "converged");
    REQUIRE(r.policies.size() == 2);
    REQUIRE(r.margins.size() == 1);
    // weight update identity: w_1 = mu_E - mu_bar_0 = mu_E - mu^{pi_0}
    REQUIRE((r.weights[1] - (r.mu_expert - r.mus[0])).lpNorm<Eigen::Infinity>() <
            1e-12);
    // post-convergence guarantee on the mixing policy
    REQUIRE(mixing_policy(r.mu_expert, r.mus).distance <= r.margins.back() + 1e-9);
  }
}

TEST_CASE("run_cirl rejects bad arguments") {
  SimConfig cfg;
  BatchDataset d = generate(CoinPolicy{}, 0, cfg, 5, 42);
  EncodedDataset enc(d);
  FeatureMap fmap = FeatureMap::from_simulator(cfg);
  CirlHyper hyper;
  hyper.epsilon = 0.0;
  REQUIRE_THROWS_AS(run_cirl(enc, fmap, 0.9, hyper), std::invalid_argument);
}
