#pragma once

// Max-margin projection loop: iterate reward-weight updates by orthogonally
// projecting the expert feature expectations onto the line through the
// previous anchor and the newest candidate's feature expectations, with the
// projection coefficient clamped to [0, 1] so the anchor stays inside the
// convex hull of visited points. Terminates when the margin drops below
// epsilon or the iteration budget runs out; the reported reward is the one
// whose policy's feature expectations are closest to the expert's.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cirl/cfmodel.hpp"
#include "cirl/cohort.hpp"
#include "cirl/common.hpp"
#include "cirl/mulearn.hpp"
#include "cirl/policyopt.hpp"
#include "cirl/rng.hpp"

namespace cirl {

class degenerate_direction_error : public std::runtime_error {
 public:
  explicit degenerate_direction_error(const std::string& what)
      : std::runtime_error(what) {}
};

struct ProjectionResult {
  VectorXd mu_bar;
  double margin = 0.0;
};

inline ProjectionResult projection_step(const VectorXd& mu_expert,
                                        const VectorXd& mu_bar_prev,
                                        const VectorXd& mu_k) {
  VectorXd dir = mu_k - mu_bar_prev;
  double denom = dir.squaredNorm();
  if (denom < 1e-24)
    throw degenerate_direction_error(
        "projection_step: candidate coincides with the projection anchor");
  double coeff = dir.dot(mu_expert - mu_bar_prev) / denom;
  coeff = clamp(coeff, 0.0, 1.0);  // stay on the segment [mu_bar_prev, mu_k]
  ProjectionResult r;
  r.mu_bar = mu_bar_prev + coeff * dir;
  r.margin = (mu_expert - r.mu_bar).norm();
  return r;
}

inline VectorXd l1_normalized(const VectorXd& w) {
  double n = w.lpNorm<1>();
  return n > 0 ? VectorXd(w / n) : w;
}

inline VectorXd random_unit_vector(int dim, Rng& rng) {
  VectorXd v(dim);
  double n = 0.0;
  while (n < 1e-12) {
    for (int i = 0; i < dim; ++i) v(i) = rng.normal();
    n = v.norm();
  }
  return v / n;
}

// ---------------------------------------------------------------------------
// Mixing policy: the convex combination of visited feature expectations
// closest to the expert's, found by projected gradient descent on the
// probability simplex.

struct MixingPolicy {
  VectorXd lambdas;
  VectorXd achieved_mu;
  double distance = 0.0;
};

// Euclidean projection onto the probability simplex (sort-based).
inline VectorXd simplex_project(const VectorXd& v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0, theta = 0.0;
  int rho = 0;
  for (int i = 0; i < n; ++i) {
    cum += u[i];
    double candidate = (cum - 1.0) / (i + 1);
    if (u[i] - candidate > 0) {
      rho = i + 1;
      theta = candidate;
    }
  }
  VectorXd out(n);
  for (int i = 0; i < n; ++i) out(i) = std::max(0.0, v(i) - theta);
  return out;
}

inline MixingPolicy mixing_policy(const VectorXd& mu_expert,
                                  const std::vector<VectorXd>& deltas) {
  if (deltas.empty()) throw std::invalid_argument("mixing_policy: empty candidate set");
  const int n = static_cast<int>(deltas.size());
  const int d = static_cast<int>(mu_expert.size());
  MatrixXd m(d, n);
  for (int i = 0; i < n; ++i) m.col(i) = deltas[i];

  VectorXd lambda = VectorXd::Constant(n, 1.0 / n);
  MatrixXd gram = m.transpose() * m;
  double lipschitz = 2.0 * gram.trace() + 1e-12;  // upper bound on 2*sigma_max
  const double step = 1.0 / lipschitz;

  for (int iter = 0; iter < 200000; ++iter) {
    VectorXd grad = 2.0 * (gram * lambda - m.transpose() * mu_expert);
    VectorXd next = simplex_project(lambda - step * grad);
    double moved = (next - lambda).lpNorm<Eigen::Infinity>();
    lambda = next;
    if (moved < 1e-12) break;
  }

  MixingPolicy out;
  out.lambdas = lambda;
  out.achieved_mu = m * lambda;
  out.distance = (mu_expert - out.achieved_mu).norm();
  return out;
}

// ---------------------------------------------------------------------------

struct CirlHyper {
  double epsilon = 1e-3;
  int max_iters = 15;
  TdHyper td;
  std::uint64_t seed = 1;
};

struct CirlResult {
  VectorXd mu_expert;
  std::vector<VectorXd> weights;        // w_k handed to the policy optimizer
  std::vector<VectorXd> mus;            // Delta, aligned with policies
  std::vector<CandidatePolicy> policies;  // Pi
  std::vector<double> margins;          // t_k for k >= 1
  int selected = 0;                     // K = argmin_k |mu_E - mu_k|
  VectorXd selected_weights;            // l1-normalized w_K
  MixingPolicy mixing;
  std::string status;                   // converged | max_iters | stalled
  std::vector<std::vector<MuCurveRow>> mu_curves;
  std::vector<std::vector<QCurveRow>> q_curves;
};

inline CirlResult run_cirl(const EncodedDataset& enc, const FeatureMap& fmap,
                           double gamma, const CirlHyper& hyper) {
  if (!(hyper.epsilon > 0)) throw std::invalid_argument("run_cirl: epsilon must be > 0");
  if (enc.size() == 0) throw std::invalid_argument("run_cirl: empty dataset");

  CirlResult res;
  res.status = "max_iters";
  res.mu_expert = expert_feature_expectations(enc, fmap, gamma);
  Rng rng(Rng::derive_seed(hyper.seed, 0xc1));

  auto train_candidate = [&](const VectorXd& w, int k) {
    TdHyper q_hyper = hyper.td;
    q_hyper.seed = Rng::derive_seed(hyper.seed, 1000 + 2 * k);
    PolicyOptResult pr = optimize_policy(w, enc, fmap, gamma, q_hyper);
    TdHyper mu_hyper = hyper.td;
    mu_hyper.seed = Rng::derive_seed(hyper.seed, 1000 + 2 * k + 1);
    MuEstimate me = estimate_mu(pr.policy.as_policy_spec(), enc, fmap, gamma, mu_hyper);
    res.weights.push_back(w);
    res.policies.push_back(std::move(pr.policy));
    res.mus.push_back(me.mu);
    res.q_curves.push_back(std::move(pr.curve));
    res.mu_curves.push_back(std::move(me.curve));
  };

  VectorXd w0 = random_unit_vector(2, rng);
  train_candidate(w0, 0);
  VectorXd mu_bar = res.mus[0];

  int consecutive_degenerate = 0;
  for (int k = 1; k <= hyper.max_iters; ++k) {
    VectorXd w_k = res.mu_expert - mu_bar;
    train_candidate(w_k, k);
    double margin;
    try {
      ProjectionResult pr = projection_step(res.mu_expert, mu_bar, res.mus.back());
      mu_bar = pr.mu_bar;
      margin = pr.margin;
      consecutive_degenerate = 0;
    } catch (const degenerate_direction_error&) {
      margin = (res.mu_expert - mu_bar).norm();
      if (++consecutive_degenerate >= 2) {
        res.margins.push_back(margin);
        res.status = "stalled";
        break;
      }
    }
    res.margins.push_back(margin);
    if (margin < hyper.epsilon) {
      res.status = "converged";
      break;
    }
  }

  int best = 0;
  double best_dist = 1e300;
  for (std::size_t k = 0; k < res.mus.size(); ++k) {
    double dist = (res.mu_expert - res.mus[k]).norm();
    if (dist < best_dist) {
      best_dist = dist;
      best = static_cast<int>(k);
    }
  }
  res.selected = best;
  res.selected_weights = l1_normalized(res.weights[best]);
  res.mixing = mixing_policy(res.mu_expert, res.mus);
  return res;
}

}  // namespace cirl
