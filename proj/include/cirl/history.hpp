#pragma once

// History h_t = (x_{0:t}, z_{0:t}, a_{0:t-1}): the conditioning object for
// every policy and estimator. Encoded for the recurrent networks as one
// 3-vector per timestep: (x_s / x_max, z_s / z_max, a_{s-1}), with the
// action slot 0 at s = 0.

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace cirl {

struct History {
  std::vector<double> x;
  std::vector<double> z;
  std::vector<int> actions;  // size() == x.size() - 1
  bool terminal = false;

  int steps() const { return static_cast<int>(x.size()); }

  void check() const {
    if (x.empty() || x.size() != z.size() || actions.size() + 1 != x.size())
      throw std::invalid_argument("History: inconsistent field lengths");
  }

  static History initial(double x0, double z0) {
    History h;
    h.x = {x0};
    h.z = {z0};
    return h;
  }

  History extended(int action, double next_x, double next_z) const {
    History h = *this;
    h.actions.push_back(action);
    h.x.push_back(next_x);
    h.z.push_back(next_z);
    return h;
  }
};

// input_dim for all history-conditioned networks
inline constexpr int kHistoryInputDim = 3;

inline Eigen::VectorXd encode_step(double x, double z, int prev_action,
                                   double x_max, double z_max) {
  Eigen::VectorXd v(kHistoryInputDim);
  v << x / x_max, z / z_max, static_cast<double>(prev_action);
  return v;
}

inline std::vector<Eigen::VectorXd> encode_history(const History& h, double x_max,
                                                   double z_max) {
  h.check();
  std::vector<Eigen::VectorXd> seq;
  seq.reserve(h.x.size());
  for (std::size_t s = 0; s < h.x.size(); ++s)
    seq.push_back(encode_step(h.x[s], h.z[s], s == 0 ? 0 : h.actions[s - 1],
                              x_max, z_max));
  return seq;
}

// Memoryless encoding: only the current covariates, no action context.
inline std::vector<Eigen::VectorXd> encode_memoryless(const History& h, double x_max,
                                                      double z_max) {
  h.check();
  return {encode_step(h.x.back(), h.z.back(), 0, x_max, z_max)};
}

}  // namespace cirl
