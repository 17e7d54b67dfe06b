#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cirl/cfmodel.hpp"
#include "cirl/cohort.hpp"
#include "cirl/policyopt.hpp"
#include "cirl/rng.hpp"

using namespace cirl;

namespace {

struct CoinPolicy {
  int operator()(const History&, Rng& rng) const { return rng.bernoulli(0.5) ? 1 : 0; }
};

TdHyper q_hyper(int iterations, std::uint64_t seed, int hidden = 16) {
  TdHyper h;
  h.hidden_dim = hidden;
  h.iterations = iterations;
  h.batch_size = 128;
  h.seed = seed;
  return h;
}

double greedy_treat_frequency(const CandidatePolicy& policy, const EncodedDataset& enc) {
  const BatchDataset& d = *enc.data;
  long ones = 0, total = 0;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    SeqBatch b = pack_sequences({&enc.inputs[i]});
    BatchCache cache;
    forward_batch(policy.q_net, b, cache);
    for (int s = 0; s < d.trajectories[i].steps(); ++s) {
      ones += argmax2(cache.y[s](0, 0), cache.y[s](1, 0));
      ++total;
    }
  }
  return static_cast<double>(ones) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("zero reward weights keep Q near zero", "[slow]") {
  SimConfig cfg;
  cfg.set_order(1);
  cfg.noise_std = 0.0;
  cfg.max_horizon = 4;
  BatchDataset d = generate(CoinPolicy{}, 0, cfg, 150, 31);
  EncodedDataset enc(d);
  FeatureMap fmap = FeatureMap::from_simulator(cfg);
  VectorXd w = VectorXd::Zero(2);
  PolicyOptResult r = optimize_policy(w, enc, fmap, 0.9, q_hyper(2500, 3));

  double worst = 0.0;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    if (!enc.is_validation(i)) continue;
    SeqBatch b = pack_sequences({&enc.inputs[i]});
    BatchCache cache;
    forward_batch(r.policy.q_net, b, cache);
    for (int s = 0; s < d.trajectories[i].steps(); ++s)
      worst = std::max(worst,
                       std::max(std::fabs(cache.y[s](0, 0)), std::fabs(cache.y[s](1, 0))));
  }
  REQUIRE(worst < 0.05);
}

TEST_CASE("tumor-focused weights treat more than side-effect-focused weights",
          "[slow]") {
  SimConfig cfg;
  BatchDataset d = generate(CoinPolicy{}, 0, cfg, 300, 32);
  EncodedDataset enc(d);
  FeatureMap fmap = FeatureMap::from_simulator(cfg);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);

  VectorXd w_tumor(2), w_side(2);
  w_tumor << -inv_sqrt2, 0.0;
  w_side << 0.0, -inv_sqrt2;
  PolicyOptResult tumor = optimize_policy(w_tumor, enc, fmap, 0.9, q_hyper(3000, 4));
  PolicyOptResult side = optimize_policy(w_side, enc, fmap, 0.9, q_hyper(3000, 4));

  double f_tumor = greedy_treat_frequency(tumor.policy, enc);
  double f_side = greedy_treat_frequency(side.policy, enc);
  REQUIRE(f_tumor > f_side);
  REQUIRE(f_tumor > 0.9);  // treating always shrinks the predicted tumor
}

TEST_CASE("myopic reduction: gamma 0 greedy equals the feature-map argmax",
          "[slow]") {
  SimConfig cfg;
  cfg.set_order(1);
  cfg.noise_std = 0.0;
  cfg.max_horizon = 4;
  BatchDataset d = generate(CoinPolicy{}, 0, cfg, 150, 33);
  EncodedDataset enc(d);
  FeatureMap fmap = FeatureMap::from_simulator(cfg);
  VectorXd w(2);
  w << -0.6, -0.4;
  PolicyOptResult r = optimize_policy(w, enc, fmap, 0.0, q_hyper(3000, 5));

  long match = 0, total = 0;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    const Trajectory& t = d.trajectories[i];
    for (int s = 0; s < t.steps(); ++s) {
      History h = t.prefix(s);
      if (r.policy.greedy(h) == myopic_greedy_action(fmap, w, h)) ++match;
      ++total;
    }
  }
  REQUIRE(static_cast<double>(match) / total >= 0.95);
}

TEST_CASE("greedy argmax is scale invariant in the exact myopic case") {
  SimConfig cfg;
  FeatureMap fmap = FeatureMap::from_simulator(cfg);
  Rng rng(6);
  VectorXd w(2);
  w << -0.4, -0.6;
  for (int i = 0; i < 200; ++i) {
    History h = History::initial(rng.uniform(1.0, 49.0), rng.uniform(0.0, 14.0));
    if (rng.bernoulli(0.5))
      h = h.extended(static_cast<int>(rng.below(2)), rng.uniform(1.0, 49.0),
                     rng.uniform(0.0, 14.0));
    // exact ties can flip under floating-point rescaling; the invariant is
    // about strict preferences
    double gap = w.dot(fmap.phi(h, 0)) - w.dot(fmap.phi(h, 1));
    if (std::fabs(gap) < 1e-12) continue;
    for (double c : {0.1, 3.0, 250.0})
      REQUIRE(myopic_greedy_action(fmap, w, h) ==
              myopic_greedy_action(fmap, VectorXd(c * w), h));
  }
}

TEST_CASE("tie-breaking picks action 0") {
  REQUIRE(argmax2(1.0, 1.0) == 0);
  REQUIRE(argmax2(2.0, 1.0) == 0);
  REQUIRE(argmax2(1.0, 2.0) == 1);
}

TEST_CASE("optimize_policy validates inputs") {
  SimConfig cfg;
  BatchDataset d = generate(CoinPolicy{}, 0, cfg, 5, 34);
  EncodedDataset enc(d);
  FeatureMap fmap = FeatureMap::from_simulator(cfg);
  VectorXd bad(2);
  bad << std::nan(""), 0.0;
  REQUIRE_THROWS_AS(optimize_policy(bad, enc, fmap, 0.9, q_hyper(1, 1)),
                    std::invalid_argument);
  VectorXd w = VectorXd::Zero(2);
  REQUIRE_THROWS_AS(optimize_policy(w, enc, fmap, 1.0, q_hyper(1, 1)),
                    std::invalid_argument);
}

TEST_CASE("policy optimization is deterministic in the seed", "[slow]") {
  SimConfig cfg;
  cfg.set_order(1);
  cfg.max_horizon = 3;
  BatchDataset d = generate(CoinPolicy{}, 0, cfg, 60, 35);
  EncodedDataset enc(d);
  FeatureMap fmap = FeatureMap::from_simulator(cfg);
  VectorXd w(2);
  w << -0.7, -0.3;
  PolicyOptResult a = optimize_policy(w, enc, fmap, 0.9, q_hyper(300, 9));
  PolicyOptResult b = optimize_policy(w, enc, fmap, 0.9, q_hyper(300, 9));
  REQUIRE(a.policy.q_net.fingerprint() == b.policy.q_net.fingerprint());
}
