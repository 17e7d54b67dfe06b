#pragma once

// Minimal recurrent sequence approximator: a single gated recurrent (GRU)
// cell with a linear output head, trained by exact backpropagation through
// time. This is the shared substrate for every learned function in the
// project (Q-networks, mu-networks, dynamics, propensity).
//
// Cell equations (reset gate applied to the previous hidden state):
//   r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//   z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//   n_t = tanh(W_n x_t + U_n (r_t . h_{t-1}) + b_n)
//   h_t = (1 - z_t) . n_t + z_t . h_{t-1},   h_{-1} = 0
//   y_t = W_o h_t + b_o
//
// All numerics are double precision; gradient correctness is enforced by a
// finite-difference suite in the tests.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cirl/common.hpp"
#include "cirl/rng.hpp"

namespace cirl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct NetworkParams {
  int input_dim = 0;
  int hidden_dim = 0;
  int output_dim = 0;

  // cell weights; biases kept as H x 1 matrices so the tensor table below
  // stays uniform
  MatrixXd w_r, u_r, b_r;
  MatrixXd w_z, u_z, b_z;
  MatrixXd w_n, u_n, b_n;
  // linear head
  MatrixXd w_o, b_o;

  template <typename F>
  void for_each_tensor(F&& f) {
    f("w_r", w_r); f("u_r", u_r); f("b_r", b_r);
    f("w_z", w_z); f("u_z", u_z); f("b_z", b_z);
    f("w_n", w_n); f("u_n", u_n); f("b_n", b_n);
    f("w_o", w_o); f("b_o", b_o);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    f("w_r", w_r); f("u_r", u_r); f("b_r", b_r);
    f("w_z", w_z); f("u_z", u_z); f("b_z", b_z);
    f("w_n", w_n); f("u_n", u_n); f("b_n", b_n);
    f("w_o", w_o); f("b_o", b_o);
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const char*, const MatrixXd& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    int dims[3] = {input_dim, hidden_dim, output_dim};
    h = fnv1a(dims, sizeof(dims), h);
    for_each_tensor([&](const char*, const MatrixXd& m) {
      h = fnv1a(m.data(), sizeof(double) * m.size(), h);
    });
    return h;
  }
};

// Weights uniform in [-1/sqrt(hidden), +1/sqrt(hidden)], biases zero.
// Deterministic function of the seed.
inline NetworkParams init_network(std::uint64_t seed, int input_dim,
                                  int hidden_dim, int output_dim) {
  if (input_dim < 1 || hidden_dim < 1 || output_dim < 1)
    throw std::invalid_argument("init_network: dimensions must be >= 1");
  NetworkParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.output_dim = output_dim;
  const int i = input_dim, h = hidden_dim, o = output_dim;
  p.w_r.resize(h, i); p.u_r.resize(h, h); p.b_r = MatrixXd::Zero(h, 1);
  p.w_z.resize(h, i); p.u_z.resize(h, h); p.b_z = MatrixXd::Zero(h, 1);
  p.w_n.resize(h, i); p.u_n.resize(h, h); p.b_n = MatrixXd::Zero(h, 1);
  p.w_o.resize(o, h); p.b_o = MatrixXd::Zero(o, 1);

  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (MatrixXd* m : {&p.w_r, &p.u_r, &p.w_z, &p.u_z, &p.w_n, &p.u_n, &p.w_o})
    for (Eigen::Index k = 0; k < m->size(); ++k)
      m->data()[k] = rng.uniform(-scale, scale);
  return p;
}

// Independent deep copy (Eigen matrices already have value semantics; the
// explicit function documents the target-network sync point).
inline NetworkParams copy_params(const NetworkParams& src) { return src; }

// ---------------------------------------------------------------------------
// Batched forward/backward. Sequences are padded to a common length with
// zero inputs; gradients beyond a sequence's length must be zero, which the
// caller gets for free by only writing dY inside each sequence.

struct SeqBatch {
  // time-major: x[t] is input_dim x batch
  std::vector<MatrixXd> x;
  std::vector<int> lengths;
  int batch() const { return lengths.empty() ? 0 : static_cast<int>(lengths.size()); }
  int max_len() const { return static_cast<int>(x.size()); }
};

struct BatchCache {
  std::vector<MatrixXd> h;  // max_len+1 entries, hidden x batch; h[0] = 0
  std::vector<MatrixXd> r, z, n;
  std::vector<MatrixXd> y;  // max_len entries, output x batch
};

inline void forward_batch(const NetworkParams& p, const SeqBatch& in,
                          BatchCache& cache) {
  const int T = in.max_len();
  const int B = in.batch();
  cache.h.assign(T + 1, MatrixXd());
  cache.r.assign(T, MatrixXd());
  cache.z.assign(T, MatrixXd());
  cache.n.assign(T, MatrixXd());
  cache.y.assign(T, MatrixXd());
  cache.h[0] = MatrixXd::Zero(p.hidden_dim, B);
  for (int t = 0; t < T; ++t) {
    const MatrixXd& xt = in.x[t];
    const MatrixXd& hp = cache.h[t];
    MatrixXd ar = p.w_r * xt + p.u_r * hp;
    ar.colwise() += p.b_r.col(0);
    MatrixXd az = p.w_z * xt + p.u_z * hp;
    az.colwise() += p.b_z.col(0);
    cache.r[t] = ar.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    cache.z[t] = az.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    MatrixXd an = p.w_n * xt + p.u_n * (cache.r[t].cwiseProduct(hp));
    an.colwise() += p.b_n.col(0);
    cache.n[t] = an.array().tanh();
    cache.h[t + 1] =
        (1.0 - cache.z[t].array()) * cache.n[t].array() + cache.z[t].array() * hp.array();
    cache.y[t] = p.w_o * cache.h[t + 1];
    cache.y[t].colwise() += p.b_o.col(0);
  }
}

// dy[t] must be output_dim x batch (zero outside sequence lengths).
inline NetworkParams backward_batch(const NetworkParams& p, const SeqBatch& in,
                                    const BatchCache& cache,
                                    const std::vector<MatrixXd>& dy) {
  const int T = in.max_len();
  const int B = in.batch();
  NetworkParams g;
  g.input_dim = p.input_dim;
  g.hidden_dim = p.hidden_dim;
  g.output_dim = p.output_dim;
  g.w_r = MatrixXd::Zero(p.w_r.rows(), p.w_r.cols());
  g.u_r = MatrixXd::Zero(p.u_r.rows(), p.u_r.cols());
  g.b_r = MatrixXd::Zero(p.b_r.rows(), 1);
  g.w_z = MatrixXd::Zero(p.w_z.rows(), p.w_z.cols());
  g.u_z = MatrixXd::Zero(p.u_z.rows(), p.u_z.cols());
  g.b_z = MatrixXd::Zero(p.b_z.rows(), 1);
  g.w_n = MatrixXd::Zero(p.w_n.rows(), p.w_n.cols());
  g.u_n = MatrixXd::Zero(p.u_n.rows(), p.u_n.cols());
  g.b_n = MatrixXd::Zero(p.b_n.rows(), 1);
  g.w_o = MatrixXd::Zero(p.w_o.rows(), p.w_o.cols());
  g.b_o = MatrixXd::Zero(p.b_o.rows(), 1);

  MatrixXd dh = MatrixXd::Zero(p.hidden_dim, B);
  for (int t = T - 1; t >= 0; --t) {
    const MatrixXd& xt = in.x[t];
    const MatrixXd& hp = cache.h[t];
    const MatrixXd& r = cache.r[t];
    const MatrixXd& z = cache.z[t];
    const MatrixXd& n = cache.n[t];

    g.w_o.noalias() += dy[t] * cache.h[t + 1].transpose();
    g.b_o.col(0) += dy[t].rowwise().sum();
    dh.noalias() += p.w_o.transpose() * dy[t];

    MatrixXd dz = dh.cwiseProduct(hp - n);
    MatrixXd dn = dh.cwiseProduct(MatrixXd::Ones(p.hidden_dim, B) - z);
    MatrixXd dhp = dh.cwiseProduct(z);

    MatrixXd dan = dn.array() * (1.0 - n.array().square());
    g.w_n.noalias() += dan * xt.transpose();
    g.u_n.noalias() += dan * (r.cwiseProduct(hp)).transpose();
    g.b_n.col(0) += dan.rowwise().sum();

    MatrixXd drh = p.u_n.transpose() * dan;
    MatrixXd dr = drh.cwiseProduct(hp);
    dhp += drh.cwiseProduct(r);

    MatrixXd dar = dr.array() * r.array() * (1.0 - r.array());
    g.w_r.noalias() += dar * xt.transpose();
    g.u_r.noalias() += dar * hp.transpose();
    g.b_r.col(0) += dar.rowwise().sum();
    dhp.noalias() += p.u_r.transpose() * dar;

    MatrixXd daz = dz.array() * z.array() * (1.0 - z.array());
    g.w_z.noalias() += daz * xt.transpose();
    g.u_z.noalias() += daz * hp.transpose();
    g.b_z.col(0) += daz.rowwise().sum();
    dhp.noalias() += p.u_z.transpose() * daz;

    dh = std::move(dhp);
  }
  return g;
}

// Zero-pads a set of sequences into one time-major batch.
inline SeqBatch pack_sequences(const std::vector<const std::vector<VectorXd>*>& seqs) {
  SeqBatch b;
  int max_len = 0;
  for (const auto* s : seqs) max_len = std::max(max_len, static_cast<int>(s->size()));
  const int input_dim = seqs.empty() || seqs[0]->empty() ? 0 : static_cast<int>((*seqs[0])[0].size());
  b.x.assign(max_len, MatrixXd::Zero(input_dim, seqs.size()));
  b.lengths.reserve(seqs.size());
  for (std::size_t c = 0; c < seqs.size(); ++c) {
    b.lengths.push_back(static_cast<int>(seqs[c]->size()));
    for (std::size_t t = 0; t < seqs[c]->size(); ++t) b.x[t].col(c) = (*seqs[c])[t];
  }
  return b;
}

// One cell step for a batch of hidden states; returns head outputs and the
// new hidden states. Used to extend cached sequences by one counterfactual
// step without re-running the whole prefix.
inline void gru_step_batch(const NetworkParams& p, const MatrixXd& x,
                           const MatrixXd& h_in, MatrixXd& h_out, MatrixXd& y) {
  MatrixXd ar = p.w_r * x + p.u_r * h_in;
  ar.colwise() += p.b_r.col(0);
  MatrixXd az = p.w_z * x + p.u_z * h_in;
  az.colwise() += p.b_z.col(0);
  MatrixXd r = ar.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  MatrixXd z = az.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  MatrixXd an = p.w_n * x + p.u_n * r.cwiseProduct(h_in);
  an.colwise() += p.b_n.col(0);
  MatrixXd n = an.array().tanh();
  h_out = (1.0 - z.array()) * n.array() + z.array() * h_in.array();
  y = p.w_o * h_out;
  y.colwise() += p.b_o.col(0);
}

// ---------------------------------------------------------------------------
// Single-sequence interface. The cache carries a fingerprint of the params
// it was produced with; backward() rejects caches from a different network.

struct Cache {
  SeqBatch batch;
  BatchCache inner;
  std::uint64_t params_stamp = 0;
};

inline std::pair<std::vector<VectorXd>, Cache> forward(
    const NetworkParams& p, const std::vector<VectorXd>& sequence) {
  if (sequence.empty()) throw std::invalid_argument("forward: empty sequence");
  for (const auto& v : sequence)
    if (v.size() != p.input_dim)
      throw std::invalid_argument("forward: input vector length " +
                                  std::to_string(v.size()) + " != input_dim " +
                                  std::to_string(p.input_dim));
  Cache cache;
  cache.batch.lengths = {static_cast<int>(sequence.size())};
  cache.batch.x.reserve(sequence.size());
  for (const auto& v : sequence) cache.batch.x.push_back(v);
  forward_batch(p, cache.batch, cache.inner);
  cache.params_stamp = p.fingerprint();
  std::vector<VectorXd> outputs;
  outputs.reserve(sequence.size());
  for (const auto& y : cache.inner.y) outputs.push_back(y.col(0));
  return {std::move(outputs), std::move(cache)};
}

inline NetworkParams backward(const NetworkParams& p, const Cache& cache,
                              const std::vector<VectorXd>& output_gradients) {
  if (cache.params_stamp != p.fingerprint())
    throw std::invalid_argument("backward: cache is stale (params changed since forward)");
  if (output_gradients.size() != cache.inner.y.size())
    throw std::invalid_argument("backward: output_gradients length mismatch");
  std::vector<MatrixXd> dy;
  dy.reserve(output_gradients.size());
  for (const auto& v : output_gradients) {
    if (v.size() != p.output_dim)
      throw std::invalid_argument("backward: gradient vector length mismatch");
    dy.push_back(v);
  }
  return backward_batch(p, cache.batch, cache.inner, dy);
}

// Incremental evaluation for rollouts: one cell step at a time.
class GruStepper {
 public:
  explicit GruStepper(const NetworkParams& p)
      : p_(&p), h_(VectorXd::Zero(p.hidden_dim)) {}

  void reset() { h_.setZero(); }

  // Feeds one input, returns the head output at this step.
  VectorXd step(const VectorXd& x) {
    const NetworkParams& p = *p_;
    VectorXd ar = p.w_r * x + p.u_r * h_ + p.b_r.col(0);
    VectorXd az = p.w_z * x + p.u_z * h_ + p.b_z.col(0);
    VectorXd r = ar.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    VectorXd z = az.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    VectorXd an = p.w_n * x + p.u_n * (r.cwiseProduct(h_)) + p.b_n.col(0);
    VectorXd n = an.array().tanh();
    h_ = (1.0 - z.array()) * n.array() + z.array() * h_.array();
    return p.w_o * h_ + p.b_o.col(0);
  }

  const VectorXd& hidden() const { return h_; }
  void set_hidden(const VectorXd& h) { h_ = h; }

 private:
  const NetworkParams* p_;
  VectorXd h_;
};

// ---------------------------------------------------------------------------
// Adam optimizer. Accumulator shapes mirror NetworkParams exactly.

struct OptimizerState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  NetworkParams m;  // first moments
  NetworkParams v;  // second moments
};

// Linear learning-rate decay from lr to min_frac*lr across a run; constant-lr
// Adam keeps a jitter floor that blocks tight late-stage convergence.
inline double annealed_lr(double lr, double min_frac, long iter, long total) {
  double frac = total <= 1 ? 1.0 : static_cast<double>(iter) / (total - 1);
  return lr * (1.0 - (1.0 - min_frac) * frac);
}

inline OptimizerState make_optimizer(const NetworkParams& p, double learning_rate) {
  OptimizerState s;
  s.learning_rate = learning_rate;
  s.m = p;
  s.v = p;
  s.m.for_each_tensor([](const char*, MatrixXd& m) { m.setZero(); });
  s.v.for_each_tensor([](const char*, MatrixXd& m) { m.setZero(); });
  return s;
}

inline void optimizer_step(NetworkParams& params, const NetworkParams& grads,
                           OptimizerState& state) {
  grads.for_each_tensor([](const char* name, const MatrixXd& g) {
    if (!g.allFinite())
      throw numeric_error(std::string("optimizer_step: non-finite gradient in ") + name);
  });
  state.step_count += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  const double lr = state.learning_rate, eps = state.epsilon;

  MatrixXd* mt[11];
  MatrixXd* vt[11];
  const MatrixXd* gt[11];
  MatrixXd* pt[11];
  int k = 0;
  state.m.for_each_tensor([&](const char*, MatrixXd& m) { mt[k++] = &m; });
  k = 0;
  state.v.for_each_tensor([&](const char*, MatrixXd& m) { vt[k++] = &m; });
  k = 0;
  grads.for_each_tensor([&](const char*, const MatrixXd& m) { gt[k++] = &m; });
  k = 0;
  params.for_each_tensor([&](const char*, MatrixXd& m) { pt[k++] = &m; });

  for (int i = 0; i < 11; ++i) {
    MatrixXd& m = *mt[i];
    MatrixXd& v = *vt[i];
    const MatrixXd& g = *gt[i];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    pt[i]->array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// Versioned text serialization. Field order is the for_each_tensor order;
// values are written with 17 significant digits for exact round-trip.

inline void save_network(const NetworkParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_network: cannot open " + path);
  out << "cirl-net v1\n";
  out << "dims in=" << p.input_dim << " hidden=" << p.hidden_dim
      << " out=" << p.output_dim << "\n";
  p.for_each_tensor([&](const char* name, const MatrixXd& m) {
    out << "tensor " << name << " " << m.rows() << " " << m.cols() << "\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        out << (c ? " " : "") << format_double(m(r, c));
      out << "\n";
    }
  });
  if (!out) throw std::runtime_error("save_network: write failed for " + path);
}

inline NetworkParams load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_network: cannot open " + path);
  long line_no = 0;
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw parse_error("load_network: unexpected end of file", line_no);
    ++line_no;
  };
  next_line();
  if (line != "cirl-net v1")
    throw parse_error("load_network: unsupported format version '" + line + "'", line_no);
  next_line();
  int din = 0, dhid = 0, dout = 0;
  if (std::sscanf(line.c_str(), "dims in=%d hidden=%d out=%d", &din, &dhid, &dout) != 3)
    throw parse_error("load_network: malformed dims record", line_no);
  NetworkParams p = init_network(0, din, dhid, dout);
  p.for_each_tensor([&](const char* name, MatrixXd& m) {
    next_line();
    char tname[32];
    long rows = 0, cols = 0;
    if (std::sscanf(line.c_str(), "tensor %31s %ld %ld", tname, &rows, &cols) != 3 ||
        std::string(tname) != name || rows != m.rows() || cols != m.cols())
      throw parse_error(std::string("load_network: expected tensor ") + name, line_no);
    for (long r = 0; r < rows; ++r) {
      next_line();
      const char* s = line.c_str();
      char* end = nullptr;
      for (long c = 0; c < cols; ++c) {
        double v = std::strtod(s, &end);
        if (end == s) throw parse_error("load_network: malformed tensor row", line_no);
        m(r, c) = v;
        s = end;
      }
    }
  });
  return p;
}

}  // namespace cirl
