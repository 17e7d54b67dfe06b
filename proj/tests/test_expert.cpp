#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cirl/cohort.hpp"
#include "cirl/expert.hpp"
#include "cirl/oncosim.hpp"
#include "cirl/rng.hpp"

using namespace cirl;

namespace {
History some_history() {
  History h = History::initial(30.0, 2.0);
  h = h.extended(1, 28.0, 1.5);
  h = h.extended(0, 29.0, 0.0);
  return h;
}

ExpertPolicy policy_with(double kappa, std::uint64_t seed = 9) {
  SimConfig cfg;
  return logging_policy(init_network(seed, kHistoryInputDim, 8, 2), kappa, cfg);
}
}  // namespace

TEST_CASE("kappa = 0 gives the uniform logging policy") {
  ExpertPolicy p = policy_with(0.0);
  REQUIRE(p.prob_treat(some_history()) == Catch::Approx(0.5));
  REQUIRE(p.prob_treat(History::initial(10.0, 5.0)) == Catch::Approx(0.5));
}

TEST_CASE("logging policy normalizes and saturates") {
  ExpertPolicy p = policy_with(3.0);
  History h = some_history();
  double p1 = p.prob_treat(h);
  REQUIRE(p1 > 0.0);
  REQUIRE(p1 < 1.0);
  // pi(0|h) + pi(1|h) = 1 by construction of the Bernoulli form
  REQUIRE((1.0 - p1) + p1 == Catch::Approx(1.0));

  ExpertPolicy sat = policy_with(1e6);
  double q1 = sat.prob_treat(h);
  REQUIRE((q1 < 1e-6 || q1 > 1.0 - 1e-6));
}

TEST_CASE("argmax invariance: logging preference follows the greedy action") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ExpertPolicy p = policy_with(4.0, seed);
    History h = some_history();
    VectorXd q = p.q_values(h);
    int greedy = argmax2(q(0), q(1));
    double pt = p.prob_treat(h);
    if (greedy == 1)
      REQUIRE(pt >= 0.5);
    else
      REQUIRE(pt <= 0.5);
    REQUIRE(p.greedy(h) == greedy);
  }
}

TEST_CASE("logging policy rejects negative kappa") {
  SimConfig cfg;
  REQUIRE_THROWS_AS(logging_policy(init_network(1, 3, 4, 2), -1.0, cfg),
                    std::invalid_argument);
}

TEST_CASE("expert_action sampling: fair coin at kappa = 0", "[slow]") {
  ExpertPolicy p = policy_with(0.0);
  History h = some_history();
  Rng rng(123);
  int ones = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) ones += p(h, rng);
  double freq = static_cast<double>(ones) / n;
  REQUIRE(freq > 0.48);
  REQUIRE(freq < 0.52);
}

TEST_CASE("expert_action is reproducible for a fixed seed") {
  ExpertPolicy p = policy_with(2.0);
  History h = some_history();
  Rng a(5), b(5);
  for (int i = 0; i < 50; ++i) REQUIRE(p(h, a) == p(h, b));
}

TEST_CASE("large advantage with large kappa saturates the sample frequency") {
  ExpertPolicy p = policy_with(0.0);
  p.kappa = 50.0;
  p.q_net.for_each_tensor([](const char*, MatrixXd& m) { m.setZero(); });
  p.q_net.b_o(0, 0) = -1.0;
  p.q_net.b_o(1, 0) = 1.0;  // Q(h,1) >> Q(h,0)
  History h = some_history();
  Rng rng(7);
  int ones = 0;
  for (int i = 0; i < 1000; ++i) ones += p(h, rng);
  REQUIRE(ones > 990);
}

TEST_CASE("replay buffer evicts FIFO at capacity") {
  ReplayBuffer buf(3);
  auto epi = std::make_shared<EpisodeRecord>();
  for (int i = 0; i < 5; ++i) buf.push(Transition{epi, i, false});
  REQUIRE(buf.size() == 3);
  REQUIRE(buf[0].t == 2);
  REQUIRE(buf[2].t == 4);
}

TEST_CASE("zero training iterations return the initialization") {
  SimConfig cfg;
  RewardWeights w(-0.3, -0.7, 0.99);
  ExpertHyper hyper;
  hyper.iterations = 0;
  hyper.hidden_dim = 6;
  hyper.seed = 17;
  ExpertTrainResult r = train_expert(cfg, w, hyper);
  NetworkParams init = init_network(17, kHistoryInputDim, 6, 2);
  REQUIRE(r.q_net.fingerprint() == init.fingerprint());
}

TEST_CASE("terminal transitions bootstrap to the reward alone") {
  REQUIRE(td_target(-0.25, true, 0.99, 123.0) == Catch::Approx(-0.25));
  REQUIRE(td_target(-0.25, false, 0.5, 2.0) == Catch::Approx(-0.25 + 0.5 * 2.0));
}

TEST_CASE("short expert training runs and improves over random play", "[slow]") {
  SimConfig cfg;
  RewardWeights w(-0.3, -0.7, 0.99);
  ExpertHyper hyper;
  hyper.hidden_dim = 16;
  hyper.iterations = 4000;
  hyper.batch_size = 64;
  hyper.eps_decay = 3e-4;
  hyper.seed = 21;
  ExpertTrainResult r = train_expert(cfg, w, hyper);
  REQUIRE(r.q_net.all_finite());
  REQUIRE(r.episodes > 10);

  // greedy rollouts under the trained net vs uniform-random play
  ExpertPolicy trained = logging_policy(r.q_net, 1e9, cfg);
  auto greedy_return = [&](auto&& pol) {
    double total = 0.0;
    for (int i = 0; i < 200; ++i) {
      Rng rng(Rng::derive_seed(500, i));
      EnvState env = reset(cfg, rng);
      History h = History::initial(env.x(), env.z());
      double ret = 0.0, g = 1.0;
      while (!env.terminated) {
        int a = pol(h, rng);
        StepResult sr = step(cfg, env, a, rng);
        ret += g * reward_from_next(cfg, w, sr.next_x, sr.next_z);
        g *= w.gamma;
        env = std::move(sr.state);
        h = h.extended(a, sr.next_x, sr.next_z);
      }
      total += ret;
    }
    return total / 200.0;
  };
  double trained_ret = greedy_return(trained);
  double random_ret = greedy_return(
      [](const History&, Rng& rng) { return rng.bernoulli(0.5) ? 1 : 0; });
  REQUIRE(trained_ret > random_ret);
}

TEST_CASE("expert training is deterministic in the seed", "[slow]") {
  SimConfig cfg;
  RewardWeights w(-0.5, -0.5, 0.99);
  ExpertHyper hyper;
  hyper.hidden_dim = 8;
  hyper.iterations = 600;
  hyper.batch_size = 32;
  hyper.seed = 4;
  ExpertTrainResult a = train_expert(cfg, w, hyper);
  ExpertTrainResult b = train_expert(cfg, w, hyper);
  REQUIRE(a.q_net.fingerprint() == b.q_net.fingerprint());
}
