#pragma once

// Batch observational dataset: generation under a logging policy,
// line-delimited text serialization, and overlap/coverage auditing.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cirl/common.hpp"
#include "cirl/history.hpp"
#include "cirl/oncosim.hpp"
#include "cirl/rng.hpp"

namespace cirl {

struct Trajectory {
  int trajectory_id = 0;
  TerminationReason termination_reason = TerminationReason::none;
  std::vector<double> x;  // length T+1
  std::vector<double> z;
  std::vector<int> actions;  // length T

  int steps() const { return static_cast<int>(actions.size()); }

  // Prefix h_t = (x_{0:t}, a_{0:t-1}). The terminal flag marks the last
  // decision point: taking the action at t = T-1 ends this trajectory, so
  // that history contributes a bootstrap-free target and cannot be extended.
  History prefix(int t) const {
    History h;
    h.x.assign(x.begin(), x.begin() + t + 1);
    h.z.assign(z.begin(), z.begin() + t + 1);
    h.actions.assign(actions.begin(), actions.begin() + t);
    h.terminal = (t >= steps() - 1);
    return h;
  }

  History full_history() const { return prefix(steps()); }

  bool operator==(const Trajectory&) const = default;
};

struct BatchDataset {
  std::vector<Trajectory> trajectories;
  SimConfig sim_config;
  std::uint64_t policy_fingerprint = 0;
  std::uint64_t master_seed = 0;

  std::size_t size() const { return trajectories.size(); }
};

// Simulates one trajectory; Policy is any callable (const History&, Rng&) -> int.
template <typename Policy>
Trajectory simulate_trajectory(const SimConfig& cfg, Policy&& policy, Rng& rng,
                               int id = 0) {
  Trajectory traj;
  traj.trajectory_id = id;
  EnvState s = reset(cfg, rng);
  traj.x.push_back(s.x());
  traj.z.push_back(s.z());
  History h = History::initial(s.x(), s.z());
  while (!s.terminated) {
    int a = policy(h, rng);
    StepResult r = step(cfg, s, a, rng);
    s = std::move(r.state);
    traj.actions.push_back(a);
    traj.x.push_back(r.next_x);
    traj.z.push_back(r.next_z);
    h = h.extended(a, r.next_x, r.next_z);
  }
  traj.termination_reason = s.termination_reason;
  return traj;
}

// N trajectories with per-trajectory streams derived from (master_seed, i);
// the result is identical whether trajectories are generated serially or in
// parallel.
template <typename Policy>
BatchDataset generate(Policy&& policy, std::uint64_t policy_fingerprint,
                      const SimConfig& cfg, int n, std::uint64_t master_seed) {
  if (n < 1) throw std::invalid_argument("generate: N must be >= 1");
  BatchDataset d;
  d.sim_config = cfg;
  d.policy_fingerprint = policy_fingerprint;
  d.master_seed = master_seed;
  d.trajectories.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(Rng::derive_seed(master_seed, static_cast<std::uint64_t>(i)));
    d.trajectories.push_back(simulate_trajectory(cfg, policy, rng, i));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Serialization: one trajectory per line, single header block, 17 significant
// digits for exact double round-trip.

namespace detail {
inline void write_sim_config(std::ostream& out, const SimConfig& c) {
  out << "sim p=" << c.p << " noise_std=" << format_double(c.noise_std)
      << " x0_mean=" << format_double(c.x0_mean) << " x0_std=" << format_double(c.x0_std)
      << " z0_mean=" << format_double(c.z0_mean) << " z0_std=" << format_double(c.z0_std)
      << " x_max=" << format_double(c.x_max) << " z_max=" << format_double(c.z_max)
      << " max_horizon=" << c.max_horizon
      << " treat_coeff_x=" << format_double(c.treat_coeff_x)
      << " treat_coeff_z=" << format_double(c.treat_coeff_z)
      << " drift_x=" << format_double(c.drift_x)
      << " drift_z=" << format_double(c.drift_z) << "\n";
}

inline SimConfig parse_sim_config(const std::string& line, long line_no) {
  SimConfig c;
  if (std::sscanf(line.c_str(),
                  "sim p=%d noise_std=%lf x0_mean=%lf x0_std=%lf z0_mean=%lf "
                  "z0_std=%lf x_max=%lf z_max=%lf max_horizon=%d "
                  "treat_coeff_x=%lf treat_coeff_z=%lf drift_x=%lf drift_z=%lf",
                  &c.p, &c.noise_std, &c.x0_mean, &c.x0_std, &c.z0_mean,
                  &c.z0_std, &c.x_max, &c.z_max, &c.max_horizon,
                  &c.treat_coeff_x, &c.treat_coeff_z, &c.drift_x,
                  &c.drift_z) != 13)
    throw parse_error("dataset: malformed sim config record", line_no);
  return c;
}
}  // namespace detail

inline void save(const BatchDataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save: cannot open " + path);
  out << "cirl-dataset v1\n";
  detail::write_sim_config(out, d.sim_config);
  out << "meta n=" << d.trajectories.size() << " master_seed=" << d.master_seed
      << " fingerprint=" << to_hex(d.policy_fingerprint) << "\n";
  for (const Trajectory& t : d.trajectories) {
    out << "traj id=" << t.trajectory_id << " reason="
        << to_string(t.termination_reason) << " T=" << t.steps() << " cov";
    for (std::size_t i = 0; i < t.x.size(); ++i)
      out << " " << format_double(t.x[i]) << " " << format_double(t.z[i]);
    out << " actions";
    for (int a : t.actions) out << " " << a;
    out << "\n";
  }
  if (!out) throw std::runtime_error("save: write failed for " + path);
}

inline BatchDataset load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load: cannot open " + path);
  long line_no = 0;
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw parse_error("dataset: unexpected end of file", line_no);
    ++line_no;
  };
  next_line();
  if (line != "cirl-dataset v1")
    throw parse_error("dataset: unsupported format version '" + line + "'", line_no);
  next_line();
  BatchDataset d;
  d.sim_config = detail::parse_sim_config(line, line_no);
  next_line();
  long n = 0;
  unsigned long long seed = 0;
  char fp[32];
  if (std::sscanf(line.c_str(), "meta n=%ld master_seed=%llu fingerprint=%31s",
                  &n, &seed, fp) != 3)
    throw parse_error("dataset: malformed meta record", line_no);
  if (n < 1) throw parse_error("dataset: empty trajectory list", line_no);
  d.master_seed = seed;
  d.policy_fingerprint = std::strtoull(fp, nullptr, 16);
  d.trajectories.reserve(n);
  for (long i = 0; i < n; ++i) {
    next_line();
    std::istringstream ss(line);
    std::string tag, kv;
    Trajectory t;
    ss >> tag;
    if (tag != "traj") throw parse_error("dataset: expected traj record", line_no);
    ss >> kv;
    if (std::sscanf(kv.c_str(), "id=%d", &t.trajectory_id) != 1)
      throw parse_error("dataset: malformed id field", line_no);
    ss >> kv;
    if (kv.rfind("reason=", 0) != 0)
      throw parse_error("dataset: malformed reason field", line_no);
    t.termination_reason = termination_from_string(kv.substr(7));
    int steps = 0;
    ss >> kv;
    if (std::sscanf(kv.c_str(), "T=%d", &steps) != 1 || steps < 1)
      throw parse_error("dataset: malformed T field", line_no);
    ss >> tag;
    if (tag != "cov") throw parse_error("dataset: expected cov block", line_no);
    for (int k = 0; k <= steps; ++k) {
      double x, z;
      if (!(ss >> x >> z)) throw parse_error("dataset: truncated covariate block", line_no);
      t.x.push_back(x);
      t.z.push_back(z);
    }
    ss >> tag;
    if (tag != "actions") throw parse_error("dataset: expected actions block", line_no);
    for (int k = 0; k < steps; ++k) {
      int a;
      if (!(ss >> a) || (a != 0 && a != 1))
        throw parse_error("dataset: truncated or invalid action block", line_no);
      t.actions.push_back(a);
    }
    const SimConfig& c = d.sim_config;
    for (std::size_t k = 0; k < t.x.size(); ++k)
      if (t.x[k] < 0 || t.x[k] > c.x_max || t.z[k] < 0 || t.z[k] > c.z_max)
        throw parse_error("dataset: covariate out of configured bounds", line_no);
    if (t.steps() > c.max_horizon)
      throw parse_error("dataset: trajectory longer than max_horizon", line_no);
    d.trajectories.push_back(std::move(t));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Audit: per-timestep action frequencies, length histogram, termination
// counts, covariate ranges, and overlap warnings.

struct AuditReport {
  // action_counts[t] = {count a=0, count a=1}
  std::vector<std::array<long, 2>> action_counts;
  std::vector<long> length_histogram;  // index = trajectory length T
  std::map<std::string, long> termination_counts;
  double x_min = 0, x_max = 0, z_min = 0, z_max = 0;
  double overlap_threshold = 0.01;
  std::vector<int> overlap_warnings;  // timestep indices

  bool has_overlap_warnings() const { return !overlap_warnings.empty(); }

  double action1_frequency(int t) const {
    long total = action_counts[t][0] + action_counts[t][1];
    return total == 0 ? 0.0 : static_cast<double>(action_counts[t][1]) / total;
  }

  double pooled_action1_frequency() const {
    long ones = 0, total = 0;
    for (const auto& c : action_counts) {
      ones += c[1];
      total += c[0] + c[1];
    }
    return total == 0 ? 0.0 : static_cast<double>(ones) / total;
  }
};

inline AuditReport audit(const BatchDataset& d, double overlap_threshold = 0.01) {
  if (d.trajectories.empty()) throw std::invalid_argument("audit: empty dataset");
  AuditReport rep;
  rep.overlap_threshold = overlap_threshold;
  int max_t = 0;
  for (const auto& t : d.trajectories) max_t = std::max(max_t, t.steps());
  rep.action_counts.assign(max_t, {0, 0});
  rep.length_histogram.assign(max_t + 1, 0);
  rep.x_min = rep.z_min = 1e300;
  rep.x_max = rep.z_max = -1e300;
  for (const auto& t : d.trajectories) {
    rep.length_histogram[t.steps()] += 1;
    rep.termination_counts[to_string(t.termination_reason)] += 1;
    for (int k = 0; k < t.steps(); ++k) rep.action_counts[k][t.actions[k]] += 1;
    for (std::size_t k = 0; k < t.x.size(); ++k) {
      rep.x_min = std::min(rep.x_min, t.x[k]);
      rep.x_max = std::max(rep.x_max, t.x[k]);
      rep.z_min = std::min(rep.z_min, t.z[k]);
      rep.z_max = std::max(rep.z_max, t.z[k]);
    }
  }
  for (int k = 0; k < max_t; ++k) {
    long total = rep.action_counts[k][0] + rep.action_counts[k][1];
    if (total == 0) continue;
    double f1 = static_cast<double>(rep.action_counts[k][1]) / total;
    if (f1 < overlap_threshold || 1.0 - f1 < overlap_threshold)
      rep.overlap_warnings.push_back(k);
  }
  return rep;
}

inline std::string render(const AuditReport& r) {
  std::ostringstream out;
  out << "timestep action0 action1 freq1\n";
  for (std::size_t t = 0; t < r.action_counts.size(); ++t)
    out << t << " " << r.action_counts[t][0] << " " << r.action_counts[t][1]
        << " " << format_double(r.action1_frequency(static_cast<int>(t))) << "\n";
  out << "lengths";
  for (std::size_t t = 0; t < r.length_histogram.size(); ++t)
    if (r.length_histogram[t]) out << " " << t << ":" << r.length_histogram[t];
  out << "\nterminations";
  for (const auto& [k, v] : r.termination_counts) out << " " << k << ":" << v;
  out << "\ncovariate_ranges x=[" << format_double(r.x_min) << ","
      << format_double(r.x_max) << "] z=[" << format_double(r.z_min) << ","
      << format_double(r.z_max) << "]\n";
  if (r.overlap_warnings.empty()) {
    out << "overlap ok\n";
  } else {
    out << "overlap WARNING at timesteps";
    for (int t : r.overlap_warnings) out << " " << t;
    out << " (threshold " << format_double(r.overlap_threshold) << ")\n";
  }
  return out.str();
}

}  // namespace cirl
