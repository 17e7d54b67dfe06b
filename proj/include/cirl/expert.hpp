#pragma once

// Expert synthesis: deep recurrent Q-learning against the true reward with
// experience replay and a target network, plus the stochastic history-
// dependent logging policy pi(1|h) = sigmoid(kappa * (Q(h,1) - Q(h,0)))
// that generates the confounded batch data.

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "cirl/common.hpp"
#include "cirl/history.hpp"
#include "cirl/oncosim.hpp"
#include "cirl/rng.hpp"
#include "cirl/seqnet.hpp"

namespace cirl {

inline int argmax2(double q0, double q1) { return q1 > q0 ? 1 : 0; }

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// 1-step TD target; bootstrap is suppressed on terminal transitions.
inline double td_target(double reward, bool terminal, double gamma, double bootstrap) {
  return terminal ? reward : reward + gamma * bootstrap;
}

// Forward a single encoded sequence and return the output at the last step.
inline VectorXd eval_last(const NetworkParams& p, const std::vector<VectorXd>& seq) {
  SeqBatch b;
  b.lengths = {static_cast<int>(seq.size())};
  b.x.assign(seq.begin(), seq.end());
  BatchCache cache;
  forward_batch(p, b, cache);
  return cache.y.back().col(0);
}

struct ExpertPolicy {
  NetworkParams q_net;
  double kappa = 5.0;
  int action_count = 2;
  double x_max = 50.0, z_max = 15.0;  // input normalization

  VectorXd q_values(const History& h) const {
    return eval_last(q_net, encode_history(h, x_max, z_max));
  }

  double prob_treat(const History& h) const {
    VectorXd q = q_values(h);
    return sigmoid(kappa * (q(1) - q(0)));
  }

  int operator()(const History& h, Rng& rng) const {
    return rng.bernoulli(prob_treat(h)) ? 1 : 0;
  }

  int greedy(const History& h) const {
    VectorXd q = q_values(h);
    return argmax2(q(0), q(1));
  }

  std::uint64_t fingerprint() const {
    std::uint64_t f = q_net.fingerprint();
    return fnv1a(&kappa, sizeof(kappa), f);
  }
};

inline ExpertPolicy logging_policy(const NetworkParams& q_net, double kappa,
                                   const SimConfig& cfg) {
  if (kappa < 0) throw std::invalid_argument("logging_policy: kappa must be >= 0");
  ExpertPolicy p;
  p.q_net = q_net;
  p.kappa = kappa;
  p.x_max = cfg.x_max;
  p.z_max = cfg.z_max;
  return p;
}

// ---------------------------------------------------------------------------
// Replay buffer: FIFO over (episode, t) transitions. Episodes are append-only
// so a stored prefix view stays valid while the episode continues.

struct EpisodeRecord {
  std::vector<VectorXd> inputs;  // encoded decision positions 0..T-1
  std::vector<double> rewards;
  std::vector<int> actions;
};

struct Transition {
  std::shared_ptr<EpisodeRecord> episode;
  int t = 0;
  bool terminal = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(Transition tr) {
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.push_back(std::move(tr));
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return entries_[i]; }

 private:
  std::size_t capacity_;
  std::deque<Transition> entries_;
};

// ---------------------------------------------------------------------------

struct ExpertHyper {
  int hidden_dim = 32;
  int iterations = 10000;       // training iterations (one env step each)
  int batch_size = 256;         // transitions per gradient step
  std::size_t replay_capacity = 10000;
  double learning_rate = 1e-3;
  int target_sync = 200;        // M-
  double eps_max = 0.9;
  double eps_min = 0.0;
  double eps_decay = 5e-5;      // linear, per iteration
  std::uint64_t seed = 1;
  int curve_every = 200;
};

struct TrainCurveRow {
  long iteration = 0;
  double loss = 0.0;
  double epsilon = 0.0;
  double mean_episode_return = 0.0;  // discounted, over recent episodes
};

struct ExpertTrainResult {
  NetworkParams q_net;
  std::vector<TrainCurveRow> curve;
  long episodes = 0;
};

// Epsilon-greedy deep recurrent Q-learning on the true reward.
inline ExpertTrainResult train_expert(const SimConfig& cfg, const RewardWeights& weights,
                                      const ExpertHyper& hyper) {
  if (std::fabs(weights.w1) + std::fabs(weights.w2) > 1.0 + 1e-12)
    throw std::invalid_argument("train_expert: |w|_1 must be <= 1");

  ExpertTrainResult result;
  NetworkParams q = init_network(hyper.seed, kHistoryInputDim, hyper.hidden_dim, 2);
  NetworkParams q_target = copy_params(q);
  OptimizerState opt = make_optimizer(q, hyper.learning_rate);
  ReplayBuffer replay(hyper.replay_capacity);
  Rng rng(Rng::derive_seed(hyper.seed, 0xe0));

  const double gamma = weights.gamma;
  EnvState env;
  std::shared_ptr<EpisodeRecord> episode;
  History hist;
  double episode_return = 0.0;
  std::deque<double> recent_returns;

  auto begin_episode = [&]() {
    env = reset(cfg, rng);
    episode = std::make_shared<EpisodeRecord>();
    hist = History::initial(env.x(), env.z());
    episode->inputs.push_back(encode_step(env.x(), env.z(), 0, cfg.x_max, cfg.z_max));
    episode_return = 0.0;
  };
  begin_episode();

  for (long iter = 0; iter < hyper.iterations; ++iter) {
    const double eps =
        std::max(hyper.eps_min, hyper.eps_max - hyper.eps_decay * static_cast<double>(iter));

    // one environment step
    int action;
    if (rng.bernoulli(eps)) {
      action = static_cast<int>(rng.below(2));
    } else {
      VectorXd qv = eval_last(q, episode->inputs);
      action = argmax2(qv(0), qv(1));
    }
    StepResult sr = step(cfg, env, action, rng);
    double reward = reward_from_next(cfg, weights, sr.next_x, sr.next_z);
    episode_return += std::pow(gamma, static_cast<double>(env.t)) * reward;
    env = std::move(sr.state);
    episode->actions.push_back(action);
    episode->rewards.push_back(reward);
    Transition tr{episode, static_cast<int>(episode->actions.size()) - 1, env.terminated};
    if (!env.terminated)
      episode->inputs.push_back(
          encode_step(sr.next_x, sr.next_z, action, cfg.x_max, cfg.z_max));
    replay.push(std::move(tr));
    if (env.terminated) {
      result.episodes += 1;
      recent_returns.push_back(episode_return);
      if (recent_returns.size() > 50) recent_returns.pop_front();
      begin_episode();
    }

    if (replay.size() < static_cast<std::size_t>(hyper.batch_size)) continue;

    // minibatch, grouped by episode so each episode is forwarded once;
    // column order follows first occurrence so runs are bit-reproducible
    std::vector<const EpisodeRecord*> cols;
    std::vector<std::vector<std::size_t>> group_idx;
    std::map<const EpisodeRecord*, std::size_t> col_of;
    for (int b = 0; b < hyper.batch_size; ++b) {
      std::size_t pick = rng.below(replay.size());
      const EpisodeRecord* epi = replay[pick].episode.get();
      auto [it, inserted] = col_of.try_emplace(epi, cols.size());
      if (inserted) {
        cols.push_back(epi);
        group_idx.emplace_back();
      }
      group_idx[it->second].push_back(pick);
    }

    SeqBatch batch;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      int need = 0;
      for (std::size_t k : group_idx[c]) {
        const Transition& t = replay[k];
        need = std::max(need, t.terminal ? t.t + 1 : t.t + 2);
      }
      batch.lengths.push_back(std::min<int>(need, static_cast<int>(cols[c]->inputs.size())));
    }
    int max_len = 0;
    for (int L : batch.lengths) max_len = std::max(max_len, L);
    batch.x.assign(max_len, MatrixXd::Zero(kHistoryInputDim, cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c)
      for (int t = 0; t < batch.lengths[c]; ++t) batch.x[t].col(c) = cols[c]->inputs[t];

    BatchCache main_cache, target_cache;
    forward_batch(q, batch, main_cache);
    forward_batch(q_target, batch, target_cache);

    std::vector<MatrixXd> dy(max_len, MatrixXd::Zero(2, cols.size()));
    double loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(hyper.batch_size);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const EpisodeRecord* epi = cols[c];
      for (std::size_t k : group_idx[c]) {
        const Transition& t = replay[k];
        double boot = 0.0;
        if (!t.terminal) {
          double b0 = target_cache.y[t.t + 1](0, c);
          double b1 = target_cache.y[t.t + 1](1, c);
          boot = std::max(b0, b1);
        }
        double y = td_target(epi->rewards[t.t], t.terminal, gamma, boot);
        double pred = main_cache.y[t.t](epi->actions[t.t], c);
        loss += (pred - y) * (pred - y) * inv_b;
        dy[t.t](epi->actions[t.t], c) += 2.0 * (pred - y) * inv_b;
      }
    }
    if (!std::isfinite(loss))
      throw numeric_error("train_expert: non-finite loss at iteration " + std::to_string(iter));

    NetworkParams grads = backward_batch(q, batch, main_cache, dy);
    optimizer_step(q, grads, opt);
    if ((iter + 1) % hyper.target_sync == 0) q_target = copy_params(q);

    if (iter % hyper.curve_every == 0) {
      double mean_ret = 0.0;
      for (double r : recent_returns) mean_ret += r;
      if (!recent_returns.empty()) mean_ret /= static_cast<double>(recent_returns.size());
      result.curve.push_back({iter, loss, eps, mean_ret});
    }
  }

  result.q_net = std::move(q);
  return result;
}

}  // namespace cirl
