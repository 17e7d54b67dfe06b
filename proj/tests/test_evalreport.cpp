#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "cirl/evalreport.hpp"
#include "cirl/expert.hpp"
#include "cirl/oncosim.hpp"
#include "cirl/rng.hpp"

using namespace cirl;

namespace {
struct CoinPolicy {
  int operator()(const History&, Rng& rng) const { return rng.bernoulli(0.5) ? 1 : 0; }
};
struct UntreatedPolicy {
  int operator()(const History&, Rng&) const { return 0; }
};
struct TreatedPolicy {
  int operator()(const History&, Rng&) const { return 1; }
};
}  // namespace

TEST_CASE("cumulative reward is reproducible for a fixed seed") {
  SimConfig cfg;
  RewardWeights w(-0.3, -0.7, 0.99);
  MeanStderr a = cumulative_reward(CoinPolicy{}, cfg, w, 0.99, 1, 77);
  MeanStderr b = cumulative_reward(CoinPolicy{}, cfg, w, 0.99, 1, 77);
  REQUIRE(a.mean == b.mean);
  REQUIRE(a.n == 1);
  REQUIRE_THROWS_AS(cumulative_reward(CoinPolicy{}, cfg, w, 0.99, 0, 1),
                    std::invalid_argument);
}

TEST_CASE("always-untreated play matches the hand-iterated recursion and loses") {
  // fully deterministic environment: no noise, fixed initial state
  SimConfig cfg;
  cfg.noise_std = 0.0;
  cfg.x0_std = 0.0;
  cfg.z0_std = 0.0;
  RewardWeights w(-0.3, -0.7, 0.99);

  // independent evaluation of the autoregressive recursion
  std::vector<double> xb(cfg.p, 30.0), zb(cfg.p, 2.0);
  double expected = 0.0, g = 1.0;
  for (int t = 0; t < cfg.max_horizon; ++t) {
    double xm = 0, zm = 0;
    for (int k = 0; k < cfg.p; ++k) {
      xm += xb[k];
      zm += zb[k];
    }
    double xn = clamp(xm / cfg.p + cfg.drift_x, 0.0, cfg.x_max);
    double zn = clamp(zm / cfg.p + cfg.drift_z, 0.0, cfg.z_max);
    expected += g * (w.w1 * xn / cfg.x_max + w.w2 * zn / cfg.z_max);
    g *= w.gamma;
    xb.erase(xb.begin());
    xb.push_back(xn);
    zb.erase(zb.begin());
    zb.push_back(zn);
    if (xn <= 0 || xn >= cfg.x_max || zn >= cfg.z_max) break;
  }

  MeanStderr untreated = cumulative_reward(UntreatedPolicy{}, cfg, w, w.gamma, 1, 5);
  REQUIRE(untreated.mean == Catch::Approx(expected).margin(1e-12));

  MeanStderr treated = cumulative_reward(TreatedPolicy{}, cfg, w, w.gamma, 1, 5);
  REQUIRE(treated.mean > untreated.mean);
}

TEST_CASE("cumulative-reward stderr scales like the square-root law", "[slow]") {
  SimConfig cfg;
  RewardWeights w(-0.3, -0.7, 0.99);
  MeanStderr small = cumulative_reward(CoinPolicy{}, cfg, w, 0.99, 400, 11);
  MeanStderr big = cumulative_reward(CoinPolicy{}, cfg, w, 0.99, 1600, 11);
  double ratio = small.stderr_ / big.stderr_;
  REQUIRE(ratio == Catch::Approx(2.0).margin(0.5));  // within 25%
}

TEST_CASE("uniform-random policy matches a stochastic expert about half the time",
          "[slow]") {
  SimConfig cfg;
  ExpertPolicy expert = logging_policy(init_network(5, kHistoryInputDim, 8, 2), 3.0, cfg);
  MeanStderr acc = action_match_accuracy(CoinPolicy{}, expert, cfg, 1000, 13);
  REQUIRE(acc.mean == Catch::Approx(0.5).margin(0.02));
  REQUIRE(acc.stderr_ > 0.0);
}

TEST_CASE("a policy matches its own near-deterministic logging exactly", "[slow]") {
  SimConfig cfg;
  ExpertPolicy expert = logging_policy(init_network(6, kHistoryInputDim, 8, 2), 1e9, cfg);
  auto greedy = [&expert](const History& h, Rng&) { return expert.greedy(h); };
  MeanStderr acc = action_match_accuracy(greedy, expert, cfg, 200, 17);
  REQUIRE(acc.mean == Catch::Approx(1.0));
}

TEST_CASE("accuracy aggregation is invariant to order and duplication") {
  std::vector<double> per_traj = {0.25, 0.5, 1.0, 0.75};
  MeanStderr base = mean_stderr(per_traj);
  std::vector<double> shuffled = {1.0, 0.25, 0.75, 0.5};
  REQUIRE(mean_stderr(shuffled).mean == Catch::Approx(base.mean));
  std::vector<double> doubled = per_traj;
  doubled.insert(doubled.end(), per_traj.begin(), per_traj.end());
  REQUIRE(mean_stderr(doubled).mean == Catch::Approx(base.mean));
}

TEST_CASE("weight report flags sign and ordering structure") {
  WeightReport same = weight_report(-0.3, -0.7, -0.3, -0.7);
  REQUIRE(same.l1_distance == Catch::Approx(0.0));
  REQUIRE(same.sign_agree_w1);
  REQUIRE(same.sign_agree_w2);
  REQUIRE(same.ordering_agree);

  WeightReport swapped = weight_report(-0.7, -0.3, -0.3, -0.7);
  REQUIRE(swapped.sign_agree_w1);
  REQUIRE(swapped.sign_agree_w2);
  REQUIRE_FALSE(swapped.ordering_agree);

  WeightReport flipped = weight_report(0.3, -0.7, -0.3, -0.7);
  REQUIRE_FALSE(flipped.sign_agree_w1);
  REQUIRE(flipped.sign_agree_w2);

  // normalization happens before distances
  WeightReport scaled = weight_report(-3.0, -7.0, -0.3, -0.7);
  REQUIRE(scaled.l1_distance == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("csv writer produces identical bytes for identical rows") {
  auto write = [](const std::string& path) {
    CsvWriter csv(path);
    csv.header("a,b,c");
    csv.row(1, 0.30000000000000004, "x");
    csv.row(2L, -0.7, std::string("y"));
  };
  write("csv_a.csv");
  write("csv_b.csv");
  std::ifstream a("csv_a.csv"), b("csv_b.csv");
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  REQUIRE(sa == sb);
  REQUIRE(sa.find("0.30000000000000004") != std::string::npos);
  std::remove("csv_a.csv");
  std::remove("csv_b.csv");
}

TEST_CASE("svg artifacts are self-contained markup") {
  write_weights_scatter_svg("w.svg", {{-0.3, -0.6}, {-0.25, -0.7}}, {-0.3, -0.7});
  write_margin_curve_svg("m.svg", {0.8, 0.4, 0.2, 0.1});
  for (const char* path : {"w.svg", "m.svg"}) {
    std::ifstream in(path);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(s.rfind("<svg", 0) == 0);
    REQUIRE(s.find("</svg>") != std::string::npos);
    REQUIRE(s.find("http://") == s.find("http://www.w3.org/2000/svg"));
    std::remove(path);
  }
}
