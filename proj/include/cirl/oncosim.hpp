#pragma once

// Simulated clinical environment: order-p autoregressive tumor-volume (x)
// and side-effect (z) dynamics under a binary treatment.
//
//   x_{t+1} = mean(last p x) + treat_coeff_x * sum(last p actions) + drift_x + noise
//   z_{t+1} = mean(last p z) + treat_coeff_z * sum(last p actions) + drift_z + noise
//
// The action taken at step t is included in the action sum. Covariates are
// clamped to [0, x_max] x [0, z_max] after each step and the trajectory
// terminates on x = 0 (tumor cleared), x >= x_max, z >= z_max, or reaching
// the horizon. Buffers are padded with the initial covariates (actions with
// 0) so the recursion is well defined from t = 0.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cirl/common.hpp"
#include "cirl/rng.hpp"

namespace cirl {

struct SimConfig {
  int p = 5;
  double noise_std = 0.1;
  double x0_mean = 30.0, x0_std = 5.0;
  double z0_mean = 2.0, z0_std = 1.0;
  double x_max = 50.0, z_max = 15.0;
  int max_horizon = 20;
  double treat_coeff_x = -2.5, treat_coeff_z = 0.5;
  double drift_x = 0.5 * 5, drift_z = -5.0;  // 0.5*p and -p at the default p

  void set_order(int new_p) {
    p = new_p;
    drift_x = 0.5 * new_p;
    drift_z = -static_cast<double>(new_p);
  }
};

enum class TerminationReason { none, tumor_cleared, tumor_max, side_effect_max, horizon };

inline const char* to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::none: return "none";
    case TerminationReason::tumor_cleared: return "tumor_cleared";
    case TerminationReason::tumor_max: return "tumor_max";
    case TerminationReason::side_effect_max: return "side_effect_max";
    case TerminationReason::horizon: return "horizon";
  }
  return "none";
}

inline TerminationReason termination_from_string(const std::string& s) {
  if (s == "none") return TerminationReason::none;
  if (s == "tumor_cleared") return TerminationReason::tumor_cleared;
  if (s == "tumor_max") return TerminationReason::tumor_max;
  if (s == "side_effect_max") return TerminationReason::side_effect_max;
  if (s == "horizon") return TerminationReason::horizon;
  throw std::invalid_argument("unknown termination reason '" + s + "'");
}

struct EnvState {
  std::vector<double> x_buffer;  // last p tumor values, oldest first
  std::vector<double> z_buffer;
  std::vector<int> a_buffer;
  int t = 0;
  bool terminated = false;
  TerminationReason termination_reason = TerminationReason::none;

  double x() const { return x_buffer.back(); }
  double z() const { return z_buffer.back(); }
};

inline EnvState reset(const SimConfig& cfg, Rng& rng) {
  EnvState s;
  double x0 = clamp(rng.normal(cfg.x0_mean, cfg.x0_std),
                    std::nextafter(0.0, 1.0), cfg.x_max);
  double z0 = clamp(rng.normal(cfg.z0_mean, cfg.z0_std), 0.0,
                    std::nextafter(cfg.z_max, 0.0));
  s.x_buffer.assign(cfg.p, x0);
  s.z_buffer.assign(cfg.p, z0);
  s.a_buffer.assign(cfg.p, 0);
  return s;
}

inline EnvState reset(const SimConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return reset(cfg, rng);
}

struct StepResult {
  EnvState state;
  double next_x = 0.0;
  double next_z = 0.0;
};

// Noise-free conditional mean of the next covariates given the buffers and
// the action taken now. Shared by step() and the oracle feature map.
inline std::pair<double, double> mean_next(const SimConfig& cfg,
                                           const EnvState& s, int action) {
  double xsum = std::accumulate(s.x_buffer.begin(), s.x_buffer.end(), 0.0);
  double zsum = std::accumulate(s.z_buffer.begin(), s.z_buffer.end(), 0.0);
  // action sum over the window after inserting the current action
  int asum = std::accumulate(s.a_buffer.begin() + 1, s.a_buffer.end(), 0) + action;
  double x = xsum / cfg.p + cfg.treat_coeff_x * asum + cfg.drift_x;
  double z = zsum / cfg.p + cfg.treat_coeff_z * asum + cfg.drift_z;
  return {clamp(x, 0.0, cfg.x_max), clamp(z, 0.0, cfg.z_max)};
}

inline StepResult step(const SimConfig& cfg, const EnvState& state, int action,
                       Rng& rng) {
  if (state.terminated) throw std::logic_error("step: environment already terminated");
  if (action != 0 && action != 1) throw std::invalid_argument("step: action must be 0 or 1");

  StepResult out;
  out.state = state;
  EnvState& s = out.state;
  s.a_buffer.erase(s.a_buffer.begin());
  s.a_buffer.push_back(action);

  double xsum = std::accumulate(s.x_buffer.begin(), s.x_buffer.end(), 0.0);
  double zsum = std::accumulate(s.z_buffer.begin(), s.z_buffer.end(), 0.0);
  int asum = std::accumulate(s.a_buffer.begin(), s.a_buffer.end(), 0);
  double eps = cfg.noise_std > 0 ? rng.normal(0.0, cfg.noise_std) : 0.0;
  double eta = cfg.noise_std > 0 ? rng.normal(0.0, cfg.noise_std) : 0.0;
  double x = xsum / cfg.p + cfg.treat_coeff_x * asum + cfg.drift_x + eps;
  double z = zsum / cfg.p + cfg.treat_coeff_z * asum + cfg.drift_z + eta;
  x = clamp(x, 0.0, cfg.x_max);
  z = clamp(z, 0.0, cfg.z_max);

  s.x_buffer.erase(s.x_buffer.begin());
  s.x_buffer.push_back(x);
  s.z_buffer.erase(s.z_buffer.begin());
  s.z_buffer.push_back(z);
  s.t += 1;

  if (x <= 0.0) {
    s.terminated = true;
    s.termination_reason = TerminationReason::tumor_cleared;
  } else if (x >= cfg.x_max) {
    s.terminated = true;
    s.termination_reason = TerminationReason::tumor_max;
  } else if (z >= cfg.z_max) {
    s.terminated = true;
    s.termination_reason = TerminationReason::side_effect_max;
  } else if (s.t >= cfg.max_horizon) {
    s.terminated = true;
    s.termination_reason = TerminationReason::horizon;
  }

  out.next_x = x;
  out.next_z = z;
  return out;
}

// Interpretable linear reward weights, |w|_1 <= 1 (rescaled on construction
// when the input exceeds the ball).
struct RewardWeights {
  double w1 = 0.0;  // tumor-volume weight
  double w2 = 0.0;  // side-effect weight
  double gamma = 0.99;

  RewardWeights() = default;
  RewardWeights(double tumor_w, double side_w, double discount)
      : w1(tumor_w), w2(side_w), gamma(discount) {
    if (!(discount >= 0.0 && discount < 1.0))
      throw std::invalid_argument("RewardWeights: gamma must be in [0,1)");
    double l1 = std::fabs(w1) + std::fabs(w2);
    if (l1 > 1.0) {
      w1 /= l1;
      w2 /= l1;
    }
  }
};

// Reward for realized next covariates: w1*x'/x_max + w2*z'/z_max
// (feature minima are 0, so the normalization divides by the maxima).
inline double reward_from_next(const SimConfig& cfg, const RewardWeights& w,
                               double next_x, double next_z) {
  return w.w1 * next_x / cfg.x_max + w.w2 * next_z / cfg.z_max;
}

// Simulates one step under the action and returns the realized reward.
inline double true_reward(const SimConfig& cfg, const EnvState& state, int action,
                          const RewardWeights& w, Rng& rng) {
  StepResult r = step(cfg, state, action, rng);
  return reward_from_next(cfg, w, r.next_x, r.next_z);
}

}  // namespace cirl
