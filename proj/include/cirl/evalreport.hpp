#pragma once

// Evaluation metrics and report emission: cumulative-reward rollouts,
// action-match accuracy against freshly simulated expert trajectories,
// weight-recovery comparison, and static CSV/SVG artifacts.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cirl/cohort.hpp"
#include "cirl/common.hpp"
#include "cirl/history.hpp"
#include "cirl/oncosim.hpp"
#include "cirl/rng.hpp"

namespace cirl {

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
  long n = 0;
};

inline MeanStderr mean_stderr(const std::vector<double>& xs) {
  MeanStderr r;
  r.n = static_cast<long>(xs.size());
  if (r.n == 0) return r;
  double sum = 0.0;
  for (double x : xs) sum += x;
  r.mean = sum / r.n;
  if (r.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.stderr_ = std::sqrt(ss / (r.n - 1)) / std::sqrt(static_cast<double>(r.n));
  }
  return r;
}

// One environment rollout under the policy; returns the discounted return
// under the true reward.
template <typename Policy>
double rollout_return(const SimConfig& cfg, const RewardWeights& weights, double gamma,
                      Policy&& policy, Rng& rng) {
  EnvState env = reset(cfg, rng);
  History h = History::initial(env.x(), env.z());
  double ret = 0.0, g = 1.0;
  while (!env.terminated) {
    int a = policy(h, rng);
    StepResult sr = step(cfg, env, a, rng);
    ret += g * reward_from_next(cfg, weights, sr.next_x, sr.next_z);
    g *= gamma;
    env = std::move(sr.state);
    h = h.extended(a, sr.next_x, sr.next_z);
  }
  return ret;
}

// M fresh rollouts; per-trajectory streams derive from (seed, index).
template <typename Policy>
MeanStderr cumulative_reward(Policy&& policy, const SimConfig& cfg,
                             const RewardWeights& weights, double gamma, int rollouts,
                             std::uint64_t seed) {
  if (rollouts < 1) throw std::invalid_argument("cumulative_reward: M must be >= 1");
  std::vector<double> returns;
  returns.reserve(rollouts);
  for (int i = 0; i < rollouts; ++i) {
    Rng rng(Rng::derive_seed(seed, static_cast<std::uint64_t>(i)));
    returns.push_back(rollout_return(cfg, weights, gamma, policy, rng));
  }
  return mean_stderr(returns);
}

// Appendix-style double mean: generate test trajectories by running the
// expert in the environment, compare the evaluated policy's action at each
// logged history, average per trajectory, then across trajectories.
template <typename Policy, typename ExpertLike>
MeanStderr action_match_accuracy(Policy&& policy, ExpertLike&& expert,
                                 const SimConfig& cfg, int n_trajectories,
                                 std::uint64_t seed) {
  if (n_trajectories < 1)
    throw std::invalid_argument("action_match_accuracy: N must be >= 1");
  std::vector<double> per_trajectory;
  per_trajectory.reserve(n_trajectories);
  for (int i = 0; i < n_trajectories; ++i) {
    Rng rng(Rng::derive_seed(seed, static_cast<std::uint64_t>(i)));
    Trajectory t = simulate_trajectory(cfg, expert, rng, i);
    Rng eval_rng(Rng::derive_seed(seed ^ 0x5eed, static_cast<std::uint64_t>(i)));
    long matches = 0;
    for (int s = 0; s < t.steps(); ++s) {
      History h = t.prefix(s);
      if (policy(h, eval_rng) == t.actions[s]) ++matches;
    }
    per_trajectory.push_back(static_cast<double>(matches) /
                             static_cast<double>(t.steps()));
  }
  return mean_stderr(per_trajectory);
}

// ---------------------------------------------------------------------------

struct WeightReport {
  double recovered_w1 = 0.0, recovered_w2 = 0.0;
  double truth_w1 = 0.0, truth_w2 = 0.0;
  bool sign_agree_w1 = false, sign_agree_w2 = false;
  bool ordering_agree = false;  // |w1| vs |w2| comparison matches
  double l1_distance = 0.0;     // after l1 normalization of both
};

inline WeightReport weight_report(double rec_w1, double rec_w2, double truth_w1,
                                  double truth_w2) {
  auto norm = [](double& a, double& b) {
    double n = std::fabs(a) + std::fabs(b);
    if (n > 0) {
      a /= n;
      b /= n;
    }
  };
  WeightReport r;
  r.recovered_w1 = rec_w1;
  r.recovered_w2 = rec_w2;
  r.truth_w1 = truth_w1;
  r.truth_w2 = truth_w2;
  norm(r.recovered_w1, r.recovered_w2);
  norm(r.truth_w1, r.truth_w2);
  auto sign = [](double v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); };
  r.sign_agree_w1 = sign(r.recovered_w1) == sign(r.truth_w1);
  r.sign_agree_w2 = sign(r.recovered_w2) == sign(r.truth_w2);
  bool rec_order = std::fabs(r.recovered_w1) > std::fabs(r.recovered_w2);
  bool truth_order = std::fabs(r.truth_w1) > std::fabs(r.truth_w2);
  r.ordering_agree = rec_order == truth_order;
  r.l1_distance = std::fabs(r.recovered_w1 - r.truth_w1) +
                  std::fabs(r.recovered_w2 - r.truth_w2);
  return r;
}

// ---------------------------------------------------------------------------
// CSV and SVG artifacts. Numeric cells use round-trip formatting so repeated
// runs produce byte-identical files.

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error("CsvWriter: cannot open " + path);
  }

  void header(const std::string& line) { out_ << line << "\n"; }

  template <typename... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ","), first = false, write_cell(cells)), ...);
    out_ << "\n";
  }

 private:
  void write_cell(double v) { out_ << format_double(v); }
  void write_cell(int v) { out_ << v; }
  void write_cell(long v) { out_ << v; }
  void write_cell(std::uint64_t v) { out_ << v; }
  void write_cell(const std::string& v) { out_ << v; }
  void write_cell(const char* v) { out_ << v; }
  std::ofstream out_;
};

// Scatter of recovered weight vectors with the truth marked; fixed viewport
// over [-1, 1]^2.
inline void write_weights_scatter_svg(const std::string& path,
                                      const std::vector<std::pair<double, double>>& recovered,
                                      std::pair<double, double> truth) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_weights_scatter_svg: cannot open " + path);
  const double w = 420, h = 420, margin = 30;
  auto px = [&](double v) { return margin + (v + 1.0) / 2.0 * (w - 2 * margin); };
  auto py = [&](double v) { return h - margin - (v + 1.0) / 2.0 * (h - 2 * margin); };
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
      << "' viewBox='0 0 " << w << " " << h << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<line x1='" << px(-1) << "' y1='" << py(0) << "' x2='" << px(1) << "' y2='"
      << py(0) << "' stroke='#999'/>\n";
  out << "<line x1='" << px(0) << "' y1='" << py(-1) << "' x2='" << px(0) << "' y2='"
      << py(1) << "' stroke='#999'/>\n";
  out << "<text x='" << px(1) - 20 << "' y='" << py(0) - 6 << "' font-size='12'>w1</text>\n";
  out << "<text x='" << px(0) + 6 << "' y='" << py(1) + 12 << "' font-size='12'>w2</text>\n";
  for (const auto& [a, b] : recovered)
    out << "<circle cx='" << px(a) << "' cy='" << py(b)
        << "' r='4' fill='#1f77b4' fill-opacity='0.7'/>\n";
  out << "<path d='M " << px(truth.first) - 6 << " " << py(truth.second) << " L "
      << px(truth.first) + 6 << " " << py(truth.second) << " M " << px(truth.first) << " "
      << py(truth.second) - 6 << " L " << px(truth.first) << " " << py(truth.second) + 6
      << "' stroke='#d62728' stroke-width='2'/>\n";
  out << "</svg>\n";
}

inline void write_margin_curve_svg(const std::string& path,
                                   const std::vector<double>& margins) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_margin_curve_svg: cannot open " + path);
  const double w = 480, h = 320, margin = 40;
  double max_m = 1e-9;
  for (double m : margins) max_m = std::max(max_m, m);
  auto px = [&](std::size_t k) {
    return margin + (margins.size() <= 1
                         ? 0.0
                         : static_cast<double>(k) / (margins.size() - 1) * (w - 2 * margin));
  };
  auto py = [&](double v) { return h - margin - v / max_m * (h - 2 * margin); };
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
      << "' viewBox='0 0 " << w << " " << h << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<line x1='" << margin << "' y1='" << h - margin << "' x2='" << w - margin
      << "' y2='" << h - margin << "' stroke='#333'/>\n";
  out << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='"
      << h - margin << "' stroke='#333'/>\n";
  out << "<text x='" << w / 2 - 30 << "' y='" << h - 8
      << "' font-size='12'>iteration k</text>\n";
  out << "<text x='6' y='" << margin - 8 << "' font-size='12'>margin t_k</text>\n";
  if (!margins.empty()) {
    out << "<polyline fill='none' stroke='#1f77b4' stroke-width='2' points='";
    for (std::size_t k = 0; k < margins.size(); ++k)
      out << px(k) << "," << py(margins[k]) << " ";
    out << "'/>\n";
    for (std::size_t k = 0; k < margins.size(); ++k)
      out << "<circle cx='" << px(k) << "' cy='" << py(margins[k])
          << "' r='3' fill='#1f77b4'/>\n";
  }
  out << "</svg>\n";
}

}  // namespace cirl
