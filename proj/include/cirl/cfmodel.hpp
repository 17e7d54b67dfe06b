#pragma once

// Counterfactual estimator: a propensity network plus an IPTW-weighted
// recurrent dynamics model supplying the feature map
//   phi(h, a) = (x_hat_{t+1}/x_max, z_hat_{t+1}/z_max) / sqrt(2),
// i.e. the estimated next-step potential outcomes, normalized and scaled so
// |phi|_2 <= 1. Unweighted (plain_history) and memoryless (plain_memoryless)
// ablations reproduce the model-based benchmark configurations.

#include <Eigen/Dense>
#include <array>
#include <cassert>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cirl/cohort.hpp"
#include "cirl/common.hpp"
#include "cirl/expert.hpp"
#include "cirl/history.hpp"
#include "cirl/oncosim.hpp"
#include "cirl/rng.hpp"
#include "cirl/seqnet.hpp"

namespace cirl {

// Decision-position encodings for one trajectory (positions 0..T-1).
inline std::vector<VectorXd> encode_decision_inputs(const Trajectory& t, double x_max,
                                                    double z_max) {
  std::vector<VectorXd> seq;
  seq.reserve(t.steps());
  for (int s = 0; s < t.steps(); ++s)
    seq.push_back(encode_step(t.x[s], t.z[s], s == 0 ? 0 : t.actions[s - 1], x_max, z_max));
  return seq;
}

// Dataset pre-encoded once; shared by every trainer.
struct EncodedDataset {
  const BatchDataset* data = nullptr;
  std::vector<std::vector<VectorXd>> inputs;  // per trajectory
  double mean_steps = 0.0;

  explicit EncodedDataset(const BatchDataset& d) : data(&d) {
    inputs.reserve(d.trajectories.size());
    long total = 0;
    for (const auto& t : d.trajectories) {
      inputs.push_back(encode_decision_inputs(t, d.sim_config.x_max, d.sim_config.z_max));
      total += t.steps();
    }
    mean_steps = static_cast<double>(total) / static_cast<double>(d.trajectories.size());
  }

  std::size_t size() const { return inputs.size(); }
  bool is_validation(std::size_t i) const { return i % 10 == 9; }  // 90/10 by trajectory

  int batch_trajectories(int batch_histories) const {
    return std::max(1, static_cast<int>(std::lround(batch_histories / std::max(1.0, mean_steps))));
  }
};

// ---------------------------------------------------------------------------
// Propensity model: history -> probability of action 1.

struct PropensityModel {
  NetworkParams net;
  double x_max = 50.0, z_max = 15.0;

  double prob_treat(const History& h) const {
    double logit = eval_last(net, encode_history(h, x_max, z_max))(0);
    return sigmoid(logit);
  }
};

struct CfHyper {
  int hidden_dim = 32;
  int iterations = 3000;
  int batch_size = 256;  // history samples per gradient step
  double learning_rate = 1e-3;
  double lr_min_frac = 0.05;  // linear decay floor
  std::uint64_t seed = 1;
  double weight_clip_lo = 0.1;   // IPTW stabilization clip
  double weight_clip_hi = 10.0;
  int curve_every = 100;
};

struct FitCurveRow {
  long iteration = 0;
  double loss = 0.0;
};

struct PropensityFit {
  PropensityModel model;
  double heldout_logloss = 0.0;
  double baseline_logloss = 0.0;  // constant-0.5 predictor, same split
  double heldout_mad_from_half = 0.0;
  std::vector<FitCurveRow> curve;
};

// Cross-entropy on (h_t -> a_t) pairs pooled over trajectories and timesteps.
// Refuses datasets with overlap warnings unless force is set.
inline PropensityFit fit_propensity(const EncodedDataset& enc, const CfHyper& hyper,
                                    bool force = false) {
  const BatchDataset& data = *enc.data;
  AuditReport rep = audit(data);
  if (rep.has_overlap_warnings() && !force)
    throw std::runtime_error(
        "fit_propensity: dataset has overlap warnings at " +
        std::to_string(rep.overlap_warnings.size()) +
        " timestep(s); rerun audit or pass force to proceed");

  PropensityFit fit;
  NetworkParams net = init_network(hyper.seed, kHistoryInputDim, hyper.hidden_dim, 1);
  OptimizerState opt = make_optimizer(net, hyper.learning_rate);
  Rng rng(Rng::derive_seed(hyper.seed, 0xb1));
  const int n_traj = enc.batch_trajectories(hyper.batch_size);

  std::vector<std::size_t> train_ids;
  for (std::size_t i = 0; i < enc.size(); ++i)
    if (!enc.is_validation(i)) train_ids.push_back(i);

  for (long iter = 0; iter < hyper.iterations; ++iter) {
    std::vector<const std::vector<VectorXd>*> seqs;
    std::vector<std::size_t> picked;
    for (int b = 0; b < n_traj; ++b) {
      std::size_t i = train_ids[rng.below(train_ids.size())];
      picked.push_back(i);
      seqs.push_back(&enc.inputs[i]);
    }
    SeqBatch batch = pack_sequences(seqs);
    BatchCache cache;
    forward_batch(net, batch, cache);

    long n_samples = 0;
    for (int L : batch.lengths) n_samples += L;
    std::vector<MatrixXd> dy(batch.max_len(), MatrixXd::Zero(1, n_traj));
    double loss = 0.0;
    for (int c = 0; c < n_traj; ++c) {
      const Trajectory& t = data.trajectories[picked[c]];
      for (int s = 0; s < batch.lengths[c]; ++s) {
        double p = sigmoid(cache.y[s](0, c));
        double a = static_cast<double>(t.actions[s]);
        loss += -(a * std::log(std::max(p, 1e-12)) +
                  (1.0 - a) * std::log(std::max(1.0 - p, 1e-12)));
        dy[s](0, c) = (p - a) / static_cast<double>(n_samples);
      }
    }
    loss /= static_cast<double>(n_samples);
    if (!std::isfinite(loss))
      throw numeric_error("fit_propensity: non-finite loss at iteration " + std::to_string(iter));
    NetworkParams grads = backward_batch(net, batch, cache, dy);
    opt.learning_rate =
        annealed_lr(hyper.learning_rate, hyper.lr_min_frac, iter, hyper.iterations);
    optimizer_step(net, grads, opt);
    if (iter % hyper.curve_every == 0) fit.curve.push_back({iter, loss});
  }

  fit.model.net = std::move(net);
  fit.model.x_max = data.sim_config.x_max;
  fit.model.z_max = data.sim_config.z_max;

  // held-out diagnostics
  double ll = 0.0, mad = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    if (!enc.is_validation(i)) continue;
    SeqBatch b = pack_sequences({&enc.inputs[i]});
    BatchCache cache;
    forward_batch(fit.model.net, b, cache);
    const Trajectory& t = data.trajectories[i];
    for (int s = 0; s < t.steps(); ++s) {
      double p = sigmoid(cache.y[s](0, 0));
      double a = static_cast<double>(t.actions[s]);
      ll += -(a * std::log(std::max(p, 1e-12)) +
              (1.0 - a) * std::log(std::max(1.0 - p, 1e-12)));
      mad += std::fabs(p - 0.5);
      ++n;
    }
  }
  fit.heldout_logloss = n ? ll / n : 0.0;
  fit.baseline_logloss = std::log(2.0);
  fit.heldout_mad_from_half = n ? mad / n : 0.0;
  return fit;
}

// ---------------------------------------------------------------------------
// Dynamics model: history (or current covariates) -> predicted next
// covariates per action. Output rows: [x|a=0, z|a=0, x|a=1, z|a=1] in
// normalized units; predictions are clamped to the covariate bounds at
// inference.

enum class DynamicsMode { iptw_history, plain_history, plain_memoryless };

inline const char* to_string(DynamicsMode m) {
  switch (m) {
    case DynamicsMode::iptw_history: return "iptw";
    case DynamicsMode::plain_history: return "plain-h";
    case DynamicsMode::plain_memoryless: return "plain-x";
  }
  return "iptw";
}

inline DynamicsMode dynamics_mode_from_string(const std::string& s) {
  if (s == "iptw") return DynamicsMode::iptw_history;
  if (s == "plain-h") return DynamicsMode::plain_history;
  if (s == "plain-x") return DynamicsMode::plain_memoryless;
  throw std::invalid_argument("unknown dynamics mode '" + s + "' (iptw|plain-h|plain-x)");
}

struct DynamicsModel {
  NetworkParams net;
  DynamicsMode mode = DynamicsMode::iptw_history;
  double x_max = 50.0, z_max = 15.0;

  std::pair<double, double> predict(const History& h, int action) const {
    std::vector<VectorXd> seq = mode == DynamicsMode::plain_memoryless
                                    ? encode_memoryless(h, x_max, z_max)
                                    : encode_history(h, x_max, z_max);
    VectorXd out = eval_last(net, seq);
    double x = clamp(out(2 * action + 0) * x_max, 0.0, x_max);
    double z = clamp(out(2 * action + 1) * z_max, 0.0, z_max);
    return {x, z};
  }
};

struct DynamicsFit {
  DynamicsModel model;
  double heldout_factual_rmse = 0.0;  // covariate units, pooled coordinates
  std::vector<FitCurveRow> curve;
  std::vector<double> weight_range = {1.0, 1.0};  // min/max applied weight
};

// Per-(trajectory, t) stabilized IPTW weights:
// marginal action frequency / estimated propensity of the logged action.
inline std::vector<std::vector<double>> iptw_weights(const EncodedDataset& enc,
                                                     const PropensityModel& prop,
                                                     double clip_lo, double clip_hi) {
  const BatchDataset& data = *enc.data;
  AuditReport rep = audit(data);
  const double f1 = rep.pooled_action1_frequency();
  const double marginal[2] = {1.0 - f1, f1};

  std::vector<std::vector<double>> w(enc.size());
  for (std::size_t i = 0; i < enc.size(); ++i) {
    SeqBatch b = pack_sequences({&enc.inputs[i]});
    BatchCache cache;
    forward_batch(prop.net, b, cache);
    const Trajectory& t = data.trajectories[i];
    w[i].resize(t.steps());
    for (int s = 0; s < t.steps(); ++s) {
      int a = t.actions[s];
      double p = sigmoid(cache.y[s](0, 0));
      double p_logged = a == 1 ? p : 1.0 - p;
      double weight = marginal[a] / p_logged;
      if (!std::isfinite(weight))
        throw numeric_error("iptw_weights: non-finite weight at trajectory " +
                            std::to_string(t.trajectory_id) + " step " + std::to_string(s));
      w[i][s] = clamp(weight, clip_lo, clip_hi);
    }
  }
  return w;
}

// Weighted squared error between predicted and observed next covariates.
// plain modes use weight 1; iptw_history requires a fitted propensity model.
inline DynamicsFit fit_dynamics(const EncodedDataset& enc,
                                const std::optional<PropensityModel>& propensity,
                                DynamicsMode mode, const CfHyper& hyper) {
  if (mode == DynamicsMode::iptw_history && !propensity)
    throw std::invalid_argument("fit_dynamics: iptw_history mode requires a propensity model");
  const BatchDataset& data = *enc.data;
  const double x_max = data.sim_config.x_max, z_max = data.sim_config.z_max;

  std::vector<std::vector<double>> weights;
  if (mode == DynamicsMode::iptw_history)
    weights = iptw_weights(enc, *propensity, hyper.weight_clip_lo, hyper.weight_clip_hi);

  // memoryless inputs: every decision position as its own length-1 sequence
  std::vector<std::vector<VectorXd>> memoryless;
  if (mode == DynamicsMode::plain_memoryless) {
    memoryless.resize(enc.size());
    for (std::size_t i = 0; i < enc.size(); ++i) {
      const Trajectory& t = data.trajectories[i];
      for (int s = 0; s < t.steps(); ++s)
        memoryless[i].push_back(encode_step(t.x[s], t.z[s], 0, x_max, z_max));
    }
  }

  DynamicsFit fit;
  NetworkParams net = init_network(hyper.seed, kHistoryInputDim, hyper.hidden_dim, 4);
  OptimizerState opt = make_optimizer(net, hyper.learning_rate);
  Rng rng(Rng::derive_seed(hyper.seed, 0xd1));
  const int n_traj = enc.batch_trajectories(hyper.batch_size);

  std::vector<std::size_t> train_ids;
  for (std::size_t i = 0; i < enc.size(); ++i)
    if (!enc.is_validation(i)) train_ids.push_back(i);

  double wmin = 1e300, wmax = -1e300;

  for (long iter = 0; iter < hyper.iterations; ++iter) {
    std::vector<std::size_t> picked;
    for (int b = 0; b < n_traj; ++b) picked.push_back(train_ids[rng.below(train_ids.size())]);

    SeqBatch batch;
    // column -> (trajectory, position) for memoryless; column -> trajectory otherwise
    std::vector<std::pair<std::size_t, int>> mem_cols;
    if (mode == DynamicsMode::plain_memoryless) {
      int total = 0;
      for (std::size_t i : picked) total += data.trajectories[i].steps();
      batch.x.assign(1, MatrixXd::Zero(kHistoryInputDim, total));
      batch.lengths.assign(total, 1);
      int c = 0;
      for (std::size_t i : picked)
        for (int s = 0; s < data.trajectories[i].steps(); ++s) {
          batch.x[0].col(c) = memoryless[i][s];
          mem_cols.emplace_back(i, s);
          ++c;
        }
    } else {
      std::vector<const std::vector<VectorXd>*> seqs;
      for (std::size_t i : picked) seqs.push_back(&enc.inputs[i]);
      batch = pack_sequences(seqs);
    }

    BatchCache cache;
    forward_batch(net, batch, cache);

    long n_samples = 0;
    if (mode == DynamicsMode::plain_memoryless)
      n_samples = static_cast<long>(mem_cols.size());
    else
      for (int L : batch.lengths) n_samples += L;

    std::vector<MatrixXd> dy(batch.max_len(), MatrixXd::Zero(4, batch.batch()));
    double loss = 0.0;
    auto accumulate = [&](std::size_t i, int s, int pos, int c) {
      const Trajectory& t = data.trajectories[i];
      const int a = t.actions[s];
      const double w = mode == DynamicsMode::iptw_history ? weights[i][s] : 1.0;
      wmin = std::min(wmin, w);
      wmax = std::max(wmax, w);
      const double tx = t.x[s + 1] / x_max;
      const double tz = t.z[s + 1] / z_max;
      const double ex = cache.y[pos](2 * a + 0, c) - tx;
      const double ez = cache.y[pos](2 * a + 1, c) - tz;
      loss += w * (ex * ex + ez * ez);
      dy[pos](2 * a + 0, c) = 2.0 * w * ex / static_cast<double>(n_samples);
      dy[pos](2 * a + 1, c) = 2.0 * w * ez / static_cast<double>(n_samples);
    };
    if (mode == DynamicsMode::plain_memoryless) {
      for (std::size_t c = 0; c < mem_cols.size(); ++c)
        accumulate(mem_cols[c].first, mem_cols[c].second, 0, static_cast<int>(c));
    } else {
      for (int c = 0; c < n_traj; ++c) {
        std::size_t i = picked[c];
        for (int s = 0; s < data.trajectories[i].steps(); ++s) accumulate(i, s, s, c);
      }
    }
    loss /= static_cast<double>(n_samples);
    if (!std::isfinite(loss))
      throw numeric_error("fit_dynamics: non-finite loss at iteration " + std::to_string(iter));
    NetworkParams grads = backward_batch(net, batch, cache, dy);
    opt.learning_rate =
        annealed_lr(hyper.learning_rate, hyper.lr_min_frac, iter, hyper.iterations);
    optimizer_step(net, grads, opt);
    if (iter % hyper.curve_every == 0) fit.curve.push_back({iter, loss});
  }

  fit.model.net = std::move(net);
  fit.model.mode = mode;
  fit.model.x_max = x_max;
  fit.model.z_max = z_max;
  fit.weight_range = {mode == DynamicsMode::iptw_history ? wmin : 1.0,
                      mode == DynamicsMode::iptw_history ? wmax : 1.0};

  // held-out factual one-step RMSE in covariate units (pooled coordinates)
  double se = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    if (!enc.is_validation(i)) continue;
    const Trajectory& t = data.trajectories[i];
    for (int s = 0; s < t.steps(); ++s) {
      History h = t.prefix(s);
      auto [px, pz] = fit.model.predict(h, t.actions[s]);
      se += (px - t.x[s + 1]) * (px - t.x[s + 1]) + (pz - t.z[s + 1]) * (pz - t.z[s + 1]);
      n += 2;
    }
  }
  fit.heldout_factual_rmse = n ? std::sqrt(se / n) : 0.0;
  return fit;
}

// Reconstructs the simulator buffer state implied by a history (initial
// values pad the warm-up, matching reset()).
inline EnvState state_from_history(const SimConfig& cfg, const History& h) {
  h.check();
  EnvState s;
  s.t = h.steps() - 1;
  s.x_buffer.assign(cfg.p, h.x.front());
  s.z_buffer.assign(cfg.p, h.z.front());
  s.a_buffer.assign(cfg.p, 0);
  const int t = h.steps() - 1;  // current time index
  for (int k = 0; k < cfg.p; ++k) {
    int idx = t - (cfg.p - 1) + k;
    if (idx >= 0) {
      s.x_buffer[k] = h.x[idx];
      s.z_buffer[k] = h.z[idx];
    }
    int aidx = idx - 1;  // a_buffer holds actions taken before the current step
    if (aidx >= 0) s.a_buffer[k] = h.actions[aidx];
  }
  return s;
}

// Counterfactual RMSE vs the simulator oracle: flip the logged action on
// held-out decision points and score predictions against the noise-free
// conditional mean of the simulator.
inline double counterfactual_rmse(const DynamicsModel& model, const EncodedDataset& enc) {
  const BatchDataset& data = *enc.data;
  const SimConfig& cfg = data.sim_config;
  double se = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    if (!enc.is_validation(i)) continue;
    const Trajectory& t = data.trajectories[i];
    for (int s = 0; s < t.steps(); ++s) {
      History h = t.prefix(s);
      int flipped = 1 - t.actions[s];
      auto [px, pz] = model.predict(h, flipped);
      EnvState env = state_from_history(cfg, h);
      auto [ox, oz] = mean_next(cfg, env, flipped);
      se += (px - ox) * (px - ox) + (pz - oz) * (pz - oz);
      n += 2;
    }
  }
  return n ? std::sqrt(se / n) : 0.0;
}

// ---------------------------------------------------------------------------
// Feature map phi(h, a): normalized, 1/sqrt(d)-scaled next-covariate
// predictions. Backed by a fitted dynamics model, or by a custom predictor
// (the simulator's conditional mean serves as the exact oracle).

struct FeatureMap {
  std::shared_ptr<const DynamicsModel> dynamics;  // null -> custom predictor
  std::function<std::pair<double, double>(const History&, int)> custom;
  double x_max = 50.0, z_max = 15.0;
  int dim = 2;

  double scale() const { return 1.0 / std::sqrt(static_cast<double>(dim)); }

  std::pair<double, double> predict_next(const History& h, int action) const {
    auto [x, z] = dynamics ? dynamics->predict(h, action) : custom(h, action);
    return {clamp(x, 0.0, x_max), clamp(z, 0.0, z_max)};
  }

  VectorXd phi(const History& h, int action) const {
    auto [x, z] = predict_next(h, action);
    VectorXd v(2);
    v << x / x_max * scale(), z / z_max * scale();
    assert(v.norm() <= 1.0 + 1e-12);
    return v;
  }

  History next_history(const History& h, int action) const {
    if (h.terminal)
      throw std::logic_error("next_history: cannot extend a terminal history");
    auto [x, z] = predict_next(h, action);
    return h.extended(action, x, z);
  }

  static FeatureMap from_dynamics(DynamicsModel model) {
    FeatureMap f;
    f.x_max = model.x_max;
    f.z_max = model.z_max;
    f.dynamics = std::make_shared<DynamicsModel>(std::move(model));
    return f;
  }

  // Exact conditional-mean feature map; with noise_std = 0 this is the true
  // potential-outcome oracle.
  static FeatureMap from_simulator(const SimConfig& cfg) {
    FeatureMap f;
    f.x_max = cfg.x_max;
    f.z_max = cfg.z_max;
    f.custom = [cfg](const History& h, int action) {
      EnvState s = state_from_history(cfg, h);
      return mean_next(cfg, s, action);
    };
    return f;
  }
};

// Raw next-covariate predictions for every decision position of the given
// trajectories, both actions: grid[c][t][a] = (x, z). Net-backed maps run
// one batched forward; custom maps fall back to per-prefix calls.
using PhiGrid = std::vector<std::vector<std::array<std::pair<double, double>, 2>>>;

inline PhiGrid compute_phi_grid(const FeatureMap& fmap, const EncodedDataset& enc,
                                const std::vector<std::size_t>& ids) {
  const BatchDataset& data = *enc.data;
  PhiGrid grid(ids.size());
  if (fmap.dynamics && fmap.dynamics->mode != DynamicsMode::plain_memoryless) {
    std::vector<const std::vector<VectorXd>*> seqs;
    for (std::size_t i : ids) seqs.push_back(&enc.inputs[i]);
    SeqBatch batch = pack_sequences(seqs);
    BatchCache cache;
    forward_batch(fmap.dynamics->net, batch, cache);
    for (std::size_t c = 0; c < ids.size(); ++c) {
      int steps = data.trajectories[ids[c]].steps();
      grid[c].resize(steps);
      for (int t = 0; t < steps; ++t)
        for (int a = 0; a < 2; ++a)
          grid[c][t][a] = {clamp(cache.y[t](2 * a + 0, c) * fmap.x_max, 0.0, fmap.x_max),
                           clamp(cache.y[t](2 * a + 1, c) * fmap.z_max, 0.0, fmap.z_max)};
    }
  } else if (fmap.dynamics) {
    // memoryless: every position is a length-1 sequence
    int total = 0;
    for (std::size_t i : ids) total += data.trajectories[i].steps();
    SeqBatch batch;
    batch.x.assign(1, MatrixXd::Zero(kHistoryInputDim, total));
    batch.lengths.assign(total, 1);
    int c = 0;
    for (std::size_t i : ids) {
      const Trajectory& t = data.trajectories[i];
      for (int s = 0; s < t.steps(); ++s)
        batch.x[0].col(c++) = encode_step(t.x[s], t.z[s], 0, fmap.x_max, fmap.z_max);
    }
    BatchCache cache;
    forward_batch(fmap.dynamics->net, batch, cache);
    c = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      int steps = data.trajectories[ids[k]].steps();
      grid[k].resize(steps);
      for (int t = 0; t < steps; ++t) {
        for (int a = 0; a < 2; ++a)
          grid[k][t][a] = {clamp(cache.y[0](2 * a + 0, c) * fmap.x_max, 0.0, fmap.x_max),
                           clamp(cache.y[0](2 * a + 1, c) * fmap.z_max, 0.0, fmap.z_max)};
        ++c;
      }
    }
  } else {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const Trajectory& t = data.trajectories[ids[k]];
      grid[k].resize(t.steps());
      for (int s = 0; s < t.steps(); ++s) {
        History h = t.prefix(s);
        for (int a = 0; a < 2; ++a) grid[k][s][a] = fmap.predict_next(h, a);
      }
    }
  }
  return grid;
}

// phi vector from a raw grid entry.
inline VectorXd phi_from_raw(const FeatureMap& fmap, const std::pair<double, double>& xz) {
  VectorXd v(2);
  v << xz.first / fmap.x_max * fmap.scale(), xz.second / fmap.z_max * fmap.scale();
  return v;
}

}  // namespace cirl
