#pragma once

// Candidate-policy optimization: deep recurrent Q-learning over the batch
// dataset with counterfactual next histories and reward R(h, a) = w . phi(h, a).
// The returned policy is the deterministic greedy argmax of the learned
// Q-values, ties broken to action 0.

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
#include "cirl/mulearn.hpp"
#include "cirl/rng.hpp"
#include "cirl/seqnet.hpp"

namespace cirl {

struct CandidatePolicy {
  NetworkParams q_net;
  VectorXd reward_weights_used;  // unnormalized w the policy was trained for
  double x_max = 50.0, z_max = 15.0;

  VectorXd q_values(const History& h) const {
    return eval_last(q_net, encode_history(h, x_max, z_max));
  }

  int greedy(const History& h) const {
    VectorXd q = q_values(h);
    return argmax2(q(0), q(1));
  }

  int operator()(const History& h, Rng&) const { return greedy(h); }

  PolicySpec as_policy_spec() const { return PolicySpec::greedy(q_net); }
};

struct QCurveRow {
  long iteration = 0;
  double loss = 0.0;
};

struct PolicyOptResult {
  CandidatePolicy policy;
  std::vector<QCurveRow> curve;
};

// Myopic (gamma = 0) reduction: the greedy action maximizes w . phi(h, a)
// directly. Exact, used by tests and by scale-invariance checks.
inline int myopic_greedy_action(const FeatureMap& fmap, const VectorXd& w,
                                const History& h) {
  double q0 = w.dot(fmap.phi(h, 0));
  double q1 = w.dot(fmap.phi(h, 1));
  return argmax2(q0, q1);
}

inline PolicyOptResult optimize_policy(const VectorXd& weights, const EncodedDataset& enc,
                                       const FeatureMap& fmap, double gamma,
                                       const TdHyper& hyper) {
  if (!weights.allFinite())
    throw std::invalid_argument("optimize_policy: non-finite reward weights");
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("optimize_policy: gamma must be in [0,1)");
  const BatchDataset& data = *enc.data;

  NetworkParams net = init_network(hyper.seed, kHistoryInputDim, hyper.hidden_dim, 2);
  NetworkParams target = copy_params(net);
  OptimizerState opt = make_optimizer(net, hyper.learning_rate);
  Rng rng(Rng::derive_seed(hyper.seed, 0x9a));
  const int n_traj = enc.batch_trajectories(hyper.batch_size);

  PolicyOptResult result;
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
    PhiGrid grid = compute_phi_grid(fmap, enc, picked);

    struct Sample {
      int col, t, action;
      double reward;
      bool terminal;
      int ext = -1;
    };
    std::vector<Sample> samples;
    long n_ext = 0;
    for (int c = 0; c < n_traj; ++c) {
      const Trajectory& traj = data.trajectories[picked[c]];
      for (int t = 0; t < traj.steps(); ++t) {
        Sample s;
        s.col = c;
        s.t = t;
        // epsilon-greedy around the current argmax
        s.action = rng.bernoulli(eps)
                       ? static_cast<int>(rng.below(2))
                       : argmax2(main_cache.y[t](0, c), main_cache.y[t](1, c));
        s.terminal = (t == traj.steps() - 1);
        s.reward = weights.dot(phi_from_raw(fmap, grid[c][t][s.action]));
        if (!s.terminal) s.ext = static_cast<int>(n_ext++);
        samples.push_back(s);
      }
    }

    MatrixXd ext_y;
    if (n_ext > 0) {
      MatrixXd ext_x(kHistoryInputDim, n_ext);
      MatrixXd ext_h(hyper.hidden_dim, n_ext);
      for (const Sample& s : samples) {
        if (s.ext < 0) continue;
        auto [px, pz] = grid[s.col][s.t][s.action];
        ext_x.col(s.ext) = encode_step(px, pz, s.action, fmap.x_max, fmap.z_max);
        ext_h.col(s.ext) = target_cache.h[s.t + 1].col(s.col);
      }
      MatrixXd h_unused;
      gru_step_batch(target, ext_x, ext_h, h_unused, ext_y);
    }

    const long n_samples = static_cast<long>(samples.size());
    std::vector<MatrixXd> dy(batch.max_len(), MatrixXd::Zero(2, n_traj));
    double loss = 0.0;
    for (const Sample& s : samples) {
      double boot = s.terminal ? 0.0 : std::max(ext_y(0, s.ext), ext_y(1, s.ext));
      double y = td_target(s.reward, s.terminal, gamma, boot);
      double pred = main_cache.y[s.t](s.action, s.col);
      loss += (pred - y) * (pred - y) / static_cast<double>(n_samples);
      dy[s.t](s.action, s.col) += 2.0 * (pred - y) / static_cast<double>(n_samples);
    }
    if (!std::isfinite(loss))
      throw numeric_error("optimize_policy: non-finite TD loss at iteration " +
                          std::to_string(iter));

    NetworkParams grads = backward_batch(net, batch, main_cache, dy);
    opt.learning_rate =
        annealed_lr(hyper.learning_rate, hyper.lr_min_frac, iter, hyper.iterations);
    optimizer_step(net, grads, opt);
    if ((iter + 1) % hyper.target_sync == 0) target = copy_params(net);
    if (iter % hyper.curve_every == 0) result.curve.push_back({iter, loss});
  }

  result.policy.q_net = std::move(net);
  result.policy.reward_weights_used = weights;
  result.policy.x_max = fmap.x_max;
  result.policy.z_max = fmap.z_max;
  return result;
}

}  // namespace cirl
