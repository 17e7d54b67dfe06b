#pragma once

// Counterfactual mu-learning: off-policy estimation of a candidate policy's
// feature expectations by 1-step temporal-difference learning over
// counterfactual next histories h' = (h, a, E[Y[a]|h]).
//
// Minibatches are whole trajectories; every decision prefix of a sampled
// trajectory contributes one history sample, so each prefix in the pool has
// equal inclusion probability per gradient step. Targets follow the
// terminal/bootstrap split of the TD recursion, with the expectation over
// the policy's next action enumerated exactly (two actions).

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cirl/cfmodel.hpp"
#include "cirl/cohort.hpp"
#include "cirl/common.hpp"
#include "cirl/expert.hpp"
#include "cirl/history.hpp"
#include "cirl/rng.hpp"
#include "cirl/seqnet.hpp"

namespace cirl {

// Policy under evaluation: either a constant treatment probability or the
// greedy policy induced by a Q-network (ties break to action 0).
struct PolicySpec {
  enum class Kind { fixed_prob, greedy_net };
  Kind kind = Kind::fixed_prob;
  double p_treat = 0.5;
  NetworkParams net;

  static PolicySpec fixed(double p) {
    PolicySpec s;
    s.kind = Kind::fixed_prob;
    s.p_treat = p;
    return s;
  }
  static PolicySpec greedy(NetworkParams q) {
    PolicySpec s;
    s.kind = Kind::greedy_net;
    s.net = std::move(q);
    return s;
  }
};

// Shared hyperparameters for the TD trainers (mu-learning and recurrent
// Q-learning over reward weights).
struct TdHyper {
  int hidden_dim = 32;
  int iterations = 5000;
  int batch_size = 256;  // history samples per gradient step
  double learning_rate = 1e-3;
  double lr_min_frac = 0.05;  // linear decay floor; Adam jitters at constant lr
  int target_sync = 100;      // M-
  double eps_max = 0.9;       // linear anneal to 0 over 80% of the run
  std::uint64_t seed = 1;
  int curve_every = 100;
};

inline double annealed_epsilon(const TdHyper& h, long iter) {
  double frac = static_cast<double>(iter) / std::max(1.0, 0.8 * h.iterations);
  return std::max(0.0, h.eps_max * (1.0 - frac));
}

// Vector TD target: terminal histories contribute exactly phi(h, a).
inline VectorXd mu_td_target(const VectorXd& phi, bool terminal, double gamma,
                             const VectorXd& bootstrap) {
  return terminal ? phi : VectorXd(phi + gamma * bootstrap);
}

struct MuCurveRow {
  long iteration = 0;
  double loss = 0.0;
  double mu0 = 0.0, mu1 = 0.0;  // running estimate of mu_hat^pi
};

struct MuNetwork {
  NetworkParams net;
  NetworkParams target_net;
  int sync_period = 100;
};

struct MuEstimate {
  VectorXd mu;  // mu_hat^pi
  MuNetwork network;
  std::vector<MuCurveRow> curve;
};

// Empirical expert feature expectations over logged (history, action) pairs:
// (1/N) sum_i sum_t gamma^t phi(h_t^i, a_t^i).
inline VectorXd expert_feature_expectations(const EncodedDataset& enc,
                                            const FeatureMap& fmap, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("expert_feature_expectations: gamma must be in [0,1)");
  if (enc.size() == 0)
    throw std::invalid_argument("expert_feature_expectations: empty dataset");
  const BatchDataset& data = *enc.data;
  VectorXd mu = VectorXd::Zero(2);
  const std::size_t chunk = 256;
  for (std::size_t begin = 0; begin < enc.size(); begin += chunk) {
    std::vector<std::size_t> ids;
    for (std::size_t i = begin; i < std::min(begin + chunk, enc.size()); ++i)
      ids.push_back(i);
    PhiGrid grid = compute_phi_grid(fmap, enc, ids);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const Trajectory& t = data.trajectories[ids[k]];
      double g = 1.0;
      for (int s = 0; s < t.steps(); ++s) {
        mu += g * phi_from_raw(fmap, grid[k][s][t.actions[s]]);
        g *= gamma;
      }
    }
  }
  return mu / static_cast<double>(enc.size());
}

namespace detail {

// pi(a=1 | h) at each packed decision position, and at extension steps.
struct PolicyEval {
  const PolicySpec* policy;
  BatchCache cache;  // greedy_net forward over the packed batch

  void run(const SeqBatch& batch) {
    if (policy->kind == PolicySpec::Kind::greedy_net)
      forward_batch(policy->net, batch, cache);
  }

  int greedy_at(int t, int col) const {
    return argmax2(cache.y[t](0, col), cache.y[t](1, col));
  }

  double prob_treat_at(int t, int col) const {
    if (policy->kind == PolicySpec::Kind::fixed_prob) return policy->p_treat;
    return greedy_at(t, col) == 1 ? 1.0 : 0.0;
  }
};

}  // namespace detail

// Trains mu_hat by minibatch TD and returns
//   mu_hat^pi = (1/N) sum_i sum_a mu_hat(h_0^i, a) pi(a | h_0^i).
inline MuEstimate estimate_mu(const PolicySpec& policy, const EncodedDataset& enc,
                              const FeatureMap& fmap, double gamma,
                              const TdHyper& hyper) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("estimate_mu: gamma must be in [0,1)");
  const BatchDataset& data = *enc.data;
  const int d = 2;

  NetworkParams net = init_network(hyper.seed, kHistoryInputDim, hyper.hidden_dim, 2 * d);
  NetworkParams target = copy_params(net);
  OptimizerState opt = make_optimizer(net, hyper.learning_rate);
  Rng rng(Rng::derive_seed(hyper.seed, 0x35));
  const int n_traj = enc.batch_trajectories(hyper.batch_size);

  // initial-history batch for the closing estimator (position 0 only)
  SeqBatch init_batch;
  init_batch.x.assign(1, MatrixXd::Zero(kHistoryInputDim, enc.size()));
  init_batch.lengths.assign(enc.size(), 1);
  for (std::size_t i = 0; i < enc.size(); ++i) init_batch.x[0].col(i) = enc.inputs[i][0];

  // pi(a | h_0) is fixed during training (the policy never changes here)
  std::vector<double> init_prob_treat(enc.size(), 0.0);
  {
    detail::PolicyEval pe{&policy, {}};
    pe.run(init_batch);
    for (std::size_t i = 0; i < enc.size(); ++i)
      init_prob_treat[i] = pe.prob_treat_at(0, static_cast<int>(i));
  }

  auto closing_estimator = [&](const NetworkParams& p) {
    BatchCache cache;
    forward_batch(p, init_batch, cache);
    VectorXd mu = VectorXd::Zero(d);
    for (std::size_t i = 0; i < enc.size(); ++i) {
      double pt = init_prob_treat[i];
      mu += (1.0 - pt) * cache.y[0].block(0, i, d, 1) + pt * cache.y[0].block(d, i, d, 1);
    }
    return VectorXd(mu / static_cast<double>(enc.size()));
  };

  MuEstimate result;
  for (long iter = 0; iter < hyper.iterations; ++iter) {
    const double eps = annealed_epsilon(hyper, iter);

    std::vector<std::size_t> picked;
    for (int b = 0; b < n_traj; ++b) picked.push_back(rng.below(enc.size()));
    std::vector<const std::vector<VectorXd>*> seqs;
    for (std::size_t i : picked) seqs.push_back(&enc.inputs[i]);
    SeqBatch batch = pack_sequences(seqs);

    BatchCache main_cache, target_cache;
    forward_batch(net, batch, main_cache);
    forward_batch(target, batch, target_cache);
    detail::PolicyEval pol{&policy, {}};
    pol.run(batch);
    PhiGrid grid = compute_phi_grid(fmap, enc, picked);

    // choose actions and stage counterfactual extension steps
    struct Sample {
      int col, t, action;
      VectorXd phi;
      bool terminal;
      int ext = -1;  // column in the extension batch
    };
    std::vector<Sample> samples;
    long n_ext = 0;
    for (int c = 0; c < n_traj; ++c) {
      const Trajectory& traj = data.trajectories[picked[c]];
      for (int t = 0; t < traj.steps(); ++t) {
        Sample s;
        s.col = c;
        s.t = t;
        bool explore = rng.bernoulli(eps);
        if (explore)
          s.action = static_cast<int>(rng.below(2));
        else if (policy.kind == PolicySpec::Kind::fixed_prob)
          s.action = rng.bernoulli(policy.p_treat) ? 1 : 0;
        else
          s.action = pol.greedy_at(t, c);
        s.terminal = (t == traj.steps() - 1);
        s.phi = phi_from_raw(fmap, grid[c][t][s.action]);
        if (!s.terminal) s.ext = static_cast<int>(n_ext++);
        samples.push_back(std::move(s));
      }
    }

    // one batched cell step for all extensions: target net for mu_bar(h',.),
    // policy net for pi(.|h')
    MatrixXd ext_target_y, ext_policy_y;
    if (n_ext > 0) {
      MatrixXd ext_x(kHistoryInputDim, n_ext);
      MatrixXd ext_h_target(hyper.hidden_dim, n_ext);
      MatrixXd ext_h_policy;
      const bool greedy = policy.kind == PolicySpec::Kind::greedy_net;
      if (greedy) ext_h_policy.resize(policy.net.hidden_dim, n_ext);
      for (const Sample& s : samples) {
        if (s.ext < 0) continue;
        auto [px, pz] = grid[s.col][s.t][s.action];
        ext_x.col(s.ext) = encode_step(px, pz, s.action, fmap.x_max, fmap.z_max);
        ext_h_target.col(s.ext) = target_cache.h[s.t + 1].col(s.col);
        if (greedy) ext_h_policy.col(s.ext) = pol.cache.h[s.t + 1].col(s.col);
      }
      MatrixXd h_unused;
      gru_step_batch(target, ext_x, ext_h_target, h_unused, ext_target_y);
      if (greedy) gru_step_batch(policy.net, ext_x, ext_h_policy, h_unused, ext_policy_y);
    }

    const long n_samples = static_cast<long>(samples.size());
    std::vector<MatrixXd> dy(batch.max_len(), MatrixXd::Zero(2 * d, n_traj));
    double loss = 0.0;
    for (const Sample& s : samples) {
      VectorXd y;
      if (s.terminal) {
        y = s.phi;
      } else {
        double pt = policy.kind == PolicySpec::Kind::fixed_prob
                        ? policy.p_treat
                        : (argmax2(ext_policy_y(0, s.ext), ext_policy_y(1, s.ext)) == 1
                               ? 1.0
                               : 0.0);
        VectorXd boot = (1.0 - pt) * ext_target_y.block(0, s.ext, d, 1) +
                        pt * ext_target_y.block(d, s.ext, d, 1);
        y = mu_td_target(s.phi, false, gamma, boot);
      }
      VectorXd pred = main_cache.y[s.t].block(s.action * d, s.col, d, 1);
      VectorXd err = pred - y;
      loss += err.squaredNorm() / static_cast<double>(n_samples);
      dy[s.t].block(s.action * d, s.col, d, 1) += 2.0 * err / static_cast<double>(n_samples);
    }
    if (!std::isfinite(loss))
      throw numeric_error("estimate_mu: non-finite TD loss at iteration " + std::to_string(iter));

    NetworkParams grads = backward_batch(net, batch, main_cache, dy);
    opt.learning_rate =
        annealed_lr(hyper.learning_rate, hyper.lr_min_frac, iter, hyper.iterations);
    optimizer_step(net, grads, opt);
    if ((iter + 1) % hyper.target_sync == 0) target = copy_params(net);

    if (iter % hyper.curve_every == 0) {
      VectorXd mu = closing_estimator(net);
      result.curve.push_back({iter, loss, mu(0), mu(1)});
    }
  }

  result.mu = closing_estimator(net);
  result.network.net = std::move(net);
  result.network.target_net = std::move(target);
  result.network.sync_period = hyper.target_sync;
  return result;
}

}  // namespace cirl
