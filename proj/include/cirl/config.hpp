#pragma once

// Experiment configuration: flat key=value text with dotted section
// prefixes. Every key is overridable from the command line; budget scales
// iteration counts only. Defaults are the desk-scale profile.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "cirl/cfmodel.hpp"
#include "cirl/cirl.hpp"
#include "cirl/common.hpp"
#include "cirl/expert.hpp"
#include "cirl/oncosim.hpp"

namespace cirl {

struct ExperimentConfig {
  SimConfig sim;

  double expert_gamma = 0.99;
  double expert_w1 = -0.3;
  double expert_w2 = -0.7;
  double expert_kappa = 5.0;
  int expert_hidden = 32;
  int expert_iterations = 40000;
  int expert_batch = 256;
  double expert_lr = 1e-3;
  int expert_target_sync = 200;
  int expert_replay_capacity = 10000;
  double expert_eps_max = 0.9;
  double expert_eps_decay = 5e-5;

  int dataset_n = 2000;

  std::string cf_mode = "iptw";
  int cf_hidden = 32;
  int cf_iterations = 12000;
  int cf_batch = 256;
  double cf_lr = 1e-3;
  double cf_clip_lo = 0.1;
  double cf_clip_hi = 10.0;
  bool cf_force = false;

  double cirl_epsilon = 1e-3;
  int cirl_max_iters = 15;
  int cirl_hidden = 32;
  int cirl_iterations = 20000;
  int cirl_batch = 256;
  double cirl_lr = 1e-3;
  int cirl_target_sync = 100;
  double cirl_eps_max = 0.9;

  int eval_rollouts = 1000;
  int eval_test_trajectories = 1000;

  double budget = 0.25;
  std::uint64_t master_seed = 12345;
  std::string output_dir = "out";

  int scaled(int iterations) const {
    return std::max(1, static_cast<int>(std::lround(iterations * budget)));
  }

  ExpertHyper expert_hyper() const {
    ExpertHyper h;
    h.hidden_dim = expert_hidden;
    h.iterations = scaled(expert_iterations);
    h.batch_size = expert_batch;
    h.replay_capacity = static_cast<std::size_t>(expert_replay_capacity);
    h.learning_rate = expert_lr;
    h.target_sync = expert_target_sync;
    h.eps_max = expert_eps_max;
    h.eps_decay = expert_eps_decay;
    h.seed = Rng::derive_seed(master_seed, 1);
    return h;
  }

  RewardWeights true_weights() const {
    return RewardWeights(expert_w1, expert_w2, expert_gamma);
  }

  CfHyper cf_hyper(std::uint64_t stream) const {
    CfHyper h;
    h.hidden_dim = cf_hidden;
    h.iterations = scaled(cf_iterations);
    h.batch_size = cf_batch;
    h.learning_rate = cf_lr;
    h.weight_clip_lo = cf_clip_lo;
    h.weight_clip_hi = cf_clip_hi;
    h.seed = Rng::derive_seed(master_seed, stream);
    return h;
  }

  CirlHyper cirl_hyper() const {
    CirlHyper h;
    h.epsilon = cirl_epsilon;
    h.max_iters = cirl_max_iters;
    h.td.hidden_dim = cirl_hidden;
    h.td.iterations = scaled(cirl_iterations);
    h.td.batch_size = cirl_batch;
    h.td.learning_rate = cirl_lr;
    h.td.target_sync = cirl_target_sync;
    h.td.eps_max = cirl_eps_max;
    h.seed = Rng::derive_seed(master_seed, 5);
    return h;
  }

  // -- key/value plumbing ---------------------------------------------------

  void set(const std::string& key, const std::string& value) {
    if (!assign(key, value))
      throw std::invalid_argument("unknown config key '" + key + "'");
  }

  std::string serialize() const;

  std::uint64_t fingerprint() const {
    std::string s = serialize();
    return fnv1a(s.data(), s.size());
  }

 private:
  bool assign(const std::string& key, const std::string& value);
};

namespace detail {
inline int parse_int(const std::string& v) {
  std::size_t pos = 0;
  int out = std::stoi(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("malformed integer '" + v + "'");
  return out;
}
inline double parse_double(const std::string& v) {
  std::size_t pos = 0;
  double out = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("malformed real '" + v + "'");
  return out;
}
inline std::uint64_t parse_u64(const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = std::stoull(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("malformed seed '" + v + "'");
  return out;
}
inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("malformed bool '" + v + "'");
}
}  // namespace detail

inline bool ExperimentConfig::assign(const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "sim.p") { sim.set_order(parse_int(value)); return true; }
  if (key == "sim.noise_std") { sim.noise_std = parse_double(value); return true; }
  if (key == "sim.x0_mean") { sim.x0_mean = parse_double(value); return true; }
  if (key == "sim.x0_std") { sim.x0_std = parse_double(value); return true; }
  if (key == "sim.z0_mean") { sim.z0_mean = parse_double(value); return true; }
  if (key == "sim.z0_std") { sim.z0_std = parse_double(value); return true; }
  if (key == "sim.x_max") { sim.x_max = parse_double(value); return true; }
  if (key == "sim.z_max") { sim.z_max = parse_double(value); return true; }
  if (key == "sim.max_horizon") { sim.max_horizon = parse_int(value); return true; }
  if (key == "sim.treat_coeff_x") { sim.treat_coeff_x = parse_double(value); return true; }
  if (key == "sim.treat_coeff_z") { sim.treat_coeff_z = parse_double(value); return true; }
  if (key == "sim.drift_x") { sim.drift_x = parse_double(value); return true; }
  if (key == "sim.drift_z") { sim.drift_z = parse_double(value); return true; }
  if (key == "expert.gamma") { expert_gamma = parse_double(value); return true; }
  if (key == "expert.w1") { expert_w1 = parse_double(value); return true; }
  if (key == "expert.w2") { expert_w2 = parse_double(value); return true; }
  if (key == "expert.kappa") { expert_kappa = parse_double(value); return true; }
  if (key == "expert.hidden") { expert_hidden = parse_int(value); return true; }
  if (key == "expert.iterations") { expert_iterations = parse_int(value); return true; }
  if (key == "expert.batch") { expert_batch = parse_int(value); return true; }
  if (key == "expert.lr") { expert_lr = parse_double(value); return true; }
  if (key == "expert.target_sync") { expert_target_sync = parse_int(value); return true; }
  if (key == "expert.replay_capacity") { expert_replay_capacity = parse_int(value); return true; }
  if (key == "expert.eps_max") { expert_eps_max = parse_double(value); return true; }
  if (key == "expert.eps_decay") { expert_eps_decay = parse_double(value); return true; }
  if (key == "dataset.n") { dataset_n = parse_int(value); return true; }
  if (key == "cf.mode") { dynamics_mode_from_string(value); cf_mode = value; return true; }
  if (key == "cf.hidden") { cf_hidden = parse_int(value); return true; }
  if (key == "cf.iterations") { cf_iterations = parse_int(value); return true; }
  if (key == "cf.batch") { cf_batch = parse_int(value); return true; }
  if (key == "cf.lr") { cf_lr = parse_double(value); return true; }
  if (key == "cf.clip_lo") { cf_clip_lo = parse_double(value); return true; }
  if (key == "cf.clip_hi") { cf_clip_hi = parse_double(value); return true; }
  if (key == "cf.force") { cf_force = parse_bool(value); return true; }
  if (key == "cirl.epsilon") { cirl_epsilon = parse_double(value); return true; }
  if (key == "cirl.max_iters") { cirl_max_iters = parse_int(value); return true; }
  if (key == "cirl.hidden") { cirl_hidden = parse_int(value); return true; }
  if (key == "cirl.iterations") { cirl_iterations = parse_int(value); return true; }
  if (key == "cirl.batch") { cirl_batch = parse_int(value); return true; }
  if (key == "cirl.lr") { cirl_lr = parse_double(value); return true; }
  if (key == "cirl.target_sync") { cirl_target_sync = parse_int(value); return true; }
  if (key == "cirl.eps_max") { cirl_eps_max = parse_double(value); return true; }
  if (key == "eval.rollouts") { eval_rollouts = parse_int(value); return true; }
  if (key == "eval.test_trajectories") { eval_test_trajectories = parse_int(value); return true; }
  if (key == "budget") { budget = parse_double(value); return true; }
  if (key == "master_seed") { master_seed = parse_u64(value); return true; }
  if (key == "output_dir") { output_dir = value; return true; }
  return false;
}

inline std::string ExperimentConfig::serialize() const {
  std::ostringstream o;
  o << "sim.p=" << sim.p << "\n";
  o << "sim.noise_std=" << format_double(sim.noise_std) << "\n";
  o << "sim.x0_mean=" << format_double(sim.x0_mean) << "\n";
  o << "sim.x0_std=" << format_double(sim.x0_std) << "\n";
  o << "sim.z0_mean=" << format_double(sim.z0_mean) << "\n";
  o << "sim.z0_std=" << format_double(sim.z0_std) << "\n";
  o << "sim.x_max=" << format_double(sim.x_max) << "\n";
  o << "sim.z_max=" << format_double(sim.z_max) << "\n";
  o << "sim.max_horizon=" << sim.max_horizon << "\n";
  o << "sim.treat_coeff_x=" << format_double(sim.treat_coeff_x) << "\n";
  o << "sim.treat_coeff_z=" << format_double(sim.treat_coeff_z) << "\n";
  o << "sim.drift_x=" << format_double(sim.drift_x) << "\n";
  o << "sim.drift_z=" << format_double(sim.drift_z) << "\n";
  o << "expert.gamma=" << format_double(expert_gamma) << "\n";
  o << "expert.w1=" << format_double(expert_w1) << "\n";
  o << "expert.w2=" << format_double(expert_w2) << "\n";
  o << "expert.kappa=" << format_double(expert_kappa) << "\n";
  o << "expert.hidden=" << expert_hidden << "\n";
  o << "expert.iterations=" << expert_iterations << "\n";
  o << "expert.batch=" << expert_batch << "\n";
  o << "expert.lr=" << format_double(expert_lr) << "\n";
  o << "expert.target_sync=" << expert_target_sync << "\n";
  o << "expert.replay_capacity=" << expert_replay_capacity << "\n";
  o << "expert.eps_max=" << format_double(expert_eps_max) << "\n";
  o << "expert.eps_decay=" << format_double(expert_eps_decay) << "\n";
  o << "dataset.n=" << dataset_n << "\n";
  o << "cf.mode=" << cf_mode << "\n";
  o << "cf.hidden=" << cf_hidden << "\n";
  o << "cf.iterations=" << cf_iterations << "\n";
  o << "cf.batch=" << cf_batch << "\n";
  o << "cf.lr=" << format_double(cf_lr) << "\n";
  o << "cf.clip_lo=" << format_double(cf_clip_lo) << "\n";
  o << "cf.clip_hi=" << format_double(cf_clip_hi) << "\n";
  o << "cf.force=" << (cf_force ? "true" : "false") << "\n";
  o << "cirl.epsilon=" << format_double(cirl_epsilon) << "\n";
  o << "cirl.max_iters=" << cirl_max_iters << "\n";
  o << "cirl.hidden=" << cirl_hidden << "\n";
  o << "cirl.iterations=" << cirl_iterations << "\n";
  o << "cirl.batch=" << cirl_batch << "\n";
  o << "cirl.lr=" << format_double(cirl_lr) << "\n";
  o << "cirl.target_sync=" << cirl_target_sync << "\n";
  o << "cirl.eps_max=" << format_double(cirl_eps_max) << "\n";
  o << "eval.rollouts=" << eval_rollouts << "\n";
  o << "eval.test_trajectories=" << eval_test_trajectories << "\n";
  o << "budget=" << format_double(budget) << "\n";
  o << "master_seed=" << master_seed << "\n";
  o << "output_dir=" << output_dir << "\n";
  return o.str();
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  ExperimentConfig cfg;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = line;
    if (auto hash = s.find('#'); hash != std::string::npos) s = s.substr(0, hash);
    auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = s.find_last_not_of(" \t\r");
    s = s.substr(first, last - first + 1);
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw parse_error("load_config: expected key=value", line_no);
    std::string key = s.substr(0, eq);
    std::string value = s.substr(eq + 1);
    auto trim = [](std::string& v) {
      auto b = v.find_first_not_of(" \t");
      auto e = v.find_last_not_of(" \t");
      v = b == std::string::npos ? "" : v.substr(b, e - b + 1);
    };
    trim(key);
    trim(value);
    try {
      cfg.set(key, value);
    } catch (const std::invalid_argument& e) {
      throw parse_error(std::string("load_config: ") + e.what(), line_no);
    }
  }
  return cfg;
}

inline void save_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_config: cannot open " + path);
  out << cfg.serialize();
}

}  // namespace cirl
