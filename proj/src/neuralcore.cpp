#include "ouroboros/neuralcore.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

namespace ouroboros {

NetworkParams::NetworkParams(const NetDims& dims) : dims_(dims) {
  if (!dims.legal()) throw std::invalid_argument("illegal network dimensions");
  std::size_t off = 0;
  for (int layer = 0; layer < NetDims::kLayers; ++layer) {
    w_in_[layer] = off;
    off += w_in_size(layer);
    w_rec_[layer] = off;
    off += w_rec_size();
    bias_[layer] = off;
    off += gate_rows();
  }
  w_out_ = off;
  off += static_cast<std::size_t>(dims.out_dim() * dims.hid);
  b_out_ = off;
  off += static_cast<std::size_t>(dims.out_dim());
  data_.assign(off, 0.0);
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void fill_uniform(std::span<double> w, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : w) x = dist(rng);
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMajor>;
using MatrixMap = Eigen::Map<RowMajor>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;

// y += W x, W is rows x cols row-major.
void matvec_acc(std::span<const double> w, std::size_t rows, std::size_t cols, const double* x, double* y) {
  const auto r = static_cast<Eigen::Index>(rows), c = static_cast<Eigen::Index>(cols);
  VectorMap(y, r).noalias() += ConstMatrixMap(w.data(), r, c) * ConstVectorMap(x, c);
}

// dx += W^T dy
void matvec_t_acc(std::span<const double> w, std::size_t rows, std::size_t cols, const double* dy, double* dx) {
  const auto r = static_cast<Eigen::Index>(rows), c = static_cast<Eigen::Index>(cols);
  VectorMap(dx, c).noalias() += ConstMatrixMap(w.data(), r, c).transpose() * ConstVectorMap(dy, r);
}

// dW += dy x^T
void outer_acc(std::span<double> dw, std::size_t rows, std::size_t cols, const double* dy, const double* x) {
  const auto r = static_cast<Eigen::Index>(rows), c = static_cast<Eigen::Index>(cols);
  MatrixMap(dw.data(), r, c).noalias() += ConstVectorMap(dy, r) * ConstVectorMap(x, c).transpose();
}

// One LSTM layer forward. `gates` receives activated i, f, o, g blocks.
void layer_forward(const NetworkParams& p, int layer, const double* x, const double* h_prev, const double* c_prev,
                   double* gates, double* c, double* tanh_c, double* h) {
  const auto hid = static_cast<std::size_t>(p.dims().hid);
  const auto rows = 4 * hid;
  const auto in = static_cast<std::size_t>(p.dims().layer_input_dim(layer));
  auto b = p.bias(layer);
  std::copy(b.begin(), b.end(), gates);
  matvec_acc(p.w_in(layer), rows, in, x, gates);
  matvec_acc(p.w_rec(layer), rows, hid, h_prev, gates);
  for (std::size_t k = 0; k < hid; ++k) {
    double i = sigmoid(gates[k]);
    double f = sigmoid(gates[hid + k]);
    double o = sigmoid(gates[2 * hid + k]);
    double g = std::tanh(gates[3 * hid + k]);
    gates[k] = i;
    gates[hid + k] = f;
    gates[2 * hid + k] = o;
    gates[3 * hid + k] = g;
    c[k] = f * c_prev[k] + i * g;
    tanh_c[k] = std::tanh(c[k]);
    h[k] = o * tanh_c[k];
  }
}

void project_output(const NetworkParams& p, const double* h, double* logits, double* aux) {
  const auto& d = p.dims();
  const auto np = static_cast<std::size_t>(d.np);
  const auto na = static_cast<std::size_t>(d.aux);
  const auto hid = static_cast<std::size_t>(d.hid);
  auto b = p.b_out();
  std::copy(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(np), logits);
  matvec_acc(p.w_out().first(np * hid), np, hid, h, logits);
  if (na == 0) return;
  std::copy(b.begin() + static_cast<std::ptrdiff_t>(np), b.end(), aux);
  matvec_acc(p.w_out().subspan(np * hid), na, hid, h, aux);
  for (std::size_t k = 0; k < na; ++k) aux[k] = std::tanh(aux[k]);
}

void softmax(const double* logits, std::size_t n, double* out) {
  double mx = *std::max_element(logits, logits + n);
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = std::exp(logits[k] - mx);
    sum += out[k];
  }
  for (std::size_t k = 0; k < n; ++k) out[k] /= sum;
}

int argmax(const double* v, std::size_t n) {
  // first maximum wins ties
  return static_cast<int>(std::max_element(v, v + n) - v);
}

int sample_categorical(const double* probs, std::size_t n, std::mt19937_64& rng) {
  double r = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (std::size_t k = 0; k < n; ++k) {
    r -= probs[k];
    if (r < 0.0) return static_cast<int>(k);
  }
  return static_cast<int>(n - 1);
}

}  // namespace

NetworkParams init_params(const NetDims& dims, std::mt19937_64& rng) {
  NetworkParams p(dims);
  const int hid = dims.hid;
  for (int layer = 0; layer < NetDims::kLayers; ++layer) {
    const int in = dims.layer_input_dim(layer);
    fill_uniform(p.w_in(layer), std::sqrt(6.0 / (in + 4 * hid)), rng);
    fill_uniform(p.w_rec(layer), std::sqrt(6.0 / (hid + 4 * hid)), rng);
    auto b = p.bias(layer);
    std::fill(b.begin() + hid, b.begin() + 2 * hid, 1.0);
  }
  fill_uniform(p.w_out(), std::sqrt(6.0 / (hid + dims.out_dim())), rng);
  return p;
}

LstmState LstmState::zeros(const NetDims& dims) {
  LstmState s;
  for (int layer = 0; layer < NetDims::kLayers; ++layer) {
    s.h[layer].assign(static_cast<std::size_t>(dims.hid), 0.0);
    s.c[layer].assign(static_cast<std::size_t>(dims.hid), 0.0);
  }
  return s;
}

std::pair<LstmState, std::vector<double>> lstm_step(const NetworkParams& params, const LstmState& state,
                                                    std::span<const double> x) {
  const auto& d = params.dims();
  if (x.size() != static_cast<std::size_t>(d.in_dim())) throw std::invalid_argument("lstm_step: input size mismatch");
  LstmState next = LstmState::zeros(d);
  std::vector<double> gates(static_cast<std::size_t>(4 * d.hid));
  std::vector<double> tanh_c(static_cast<std::size_t>(d.hid));
  const double* input = x.data();
  for (int layer = 0; layer < NetDims::kLayers; ++layer) {
    layer_forward(params, layer, input, state.h[layer].data(), state.c[layer].data(), gates.data(),
                  next.c[layer].data(), tanh_c.data(), next.h[layer].data());
    input = next.h[layer].data();
  }
  std::vector<double> out(static_cast<std::size_t>(d.out_dim()));
  project_output(params, next.h[1].data(), out.data(), out.data() + d.np);
  return {std::move(next), std::move(out)};
}

std::string RolloutCache::text() const {
  if (dims.np != static_cast<int>(Alphabet::kSize)) throw std::logic_error("rollout alphabet is not the genome alphabet");
  std::string s;
  s.reserve(emitted.size());
  for (int idx : emitted) s.push_back(Alphabet::char_at(static_cast<std::size_t>(idx)));
  return s;
}

RolloutCache rollout(const NetworkParams& params, int length, std::span<const double> noise, RolloutMode mode,
                     FeedbackMode feedback, std::mt19937_64& rng, std::span<const int> stop_on_mismatch) {
  const NetDims& d = params.dims();
  if (length < 1) throw std::invalid_argument("rollout length must be >= 1");
  const auto L = static_cast<std::size_t>(length);
  const auto hid = static_cast<std::size_t>(d.hid);
  const auto in = static_cast<std::size_t>(d.in_dim());
  const auto np = static_cast<std::size_t>(d.np);
  const auto na = static_cast<std::size_t>(d.aux);
  const auto noi = static_cast<std::size_t>(d.noi);
  if (noise.size() != L * noi) throw std::invalid_argument("rollout: noise buffer size mismatch");

  RolloutCache cache;
  cache.dims = d;
  cache.length = length;
  cache.feedback = feedback;
  cache.inputs.assign(L * in, 0.0);
  for (int layer = 0; layer < NetDims::kLayers; ++layer) {
    cache.gates[layer].assign(L * 4 * hid, 0.0);
    cache.cells[layer].assign((L + 1) * hid, 0.0);
    cache.hiddens[layer].assign((L + 1) * hid, 0.0);
    cache.tanh_cells[layer].assign(L * hid, 0.0);
  }
  cache.logits.assign(L * np, 0.0);
  cache.probs.assign(L * np, 0.0);
  cache.aux.assign(L * na, 0.0);
  cache.emitted.assign(L, 0);

  for (std::size_t t = 0; t < L; ++t) {
    double* x = cache.inputs.data() + t * in;
    if (t == 0) {
      std::fill(x, x + np + na, 1.0);
    } else {
      const double* prev_probs = cache.probs.data() + (t - 1) * np;
      if (feedback == FeedbackMode::Continuous) {
        std::copy(prev_probs, prev_probs + np, x);
      } else {
        x[cache.emitted[t - 1]] = 1.0;
      }
      const double* prev_aux = cache.aux.data() + (t - 1) * na;
      std::copy(prev_aux, prev_aux + na, x + np);
    }
    std::copy(noise.begin() + static_cast<std::ptrdiff_t>(t * noi),
              noise.begin() + static_cast<std::ptrdiff_t>((t + 1) * noi), x + np + na);

    const double* layer_in = x;
    for (int layer = 0; layer < NetDims::kLayers; ++layer) {
      double* h = cache.hiddens[layer].data() + (t + 1) * hid;
      layer_forward(params, layer, layer_in, cache.hiddens[layer].data() + t * hid,
                    cache.cells[layer].data() + t * hid, cache.gates[layer].data() + t * 4 * hid,
                    cache.cells[layer].data() + (t + 1) * hid, cache.tanh_cells[layer].data() + t * hid, h);
      layer_in = h;
    }
    double* logits = cache.logits.data() + t * np;
    double* probs = cache.probs.data() + t * np;
    project_output(params, layer_in, logits, cache.aux.data() + t * na);
    softmax(logits, np, probs);
    cache.emitted[t] = mode == RolloutMode::EvalArgmax ? argmax(logits, np) : sample_categorical(probs, np, rng);
    if (t < stop_on_mismatch.size() && cache.emitted[t] != stop_on_mismatch[t]) {
      cache.length = static_cast<int>(t + 1);
      cache.emitted.resize(t + 1);
      break;
    }
  }
  return cache;
}

RolloutCache generate_sequence(const NetworkParams& params, int length, std::mt19937_64& rng, RolloutMode mode,
                               FeedbackMode feedback, std::span<const int> stop_on_mismatch) {
  const auto noi = static_cast<std::size_t>(params.dims().noi);
  std::vector<double> noise(static_cast<std::size_t>(std::max(length, 0)) * noi);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& z : noise) z = normal(rng);
  return rollout(params, length, noise, mode, feedback, rng, stop_on_mismatch);
}

double sequence_loss(const RolloutCache& cache, std::span<const int> target) {
  if (target.size() != static_cast<std::size_t>(cache.length)) throw std::invalid_argument("target length mismatch");
  const int np = cache.dims.np;
  double loss = 0.0;
  for (int t = 0; t < cache.length; ++t) {
    auto z = cache.step(cache.logits, t, np);
    double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    loss += mx + std::log(sum) - z[static_cast<std::size_t>(target[static_cast<std::size_t>(t)])];
  }
  return loss;
}

Gradients bptt(const RolloutCache& cache, std::span<const int> target, const NetworkParams& params) {
  const NetDims& d = params.dims();
  if (!(cache.dims == d)) throw std::invalid_argument("bptt: cache/params dimension mismatch");
  if (target.size() != static_cast<std::size_t>(cache.length)) throw std::invalid_argument("target length mismatch");
  const auto L = static_cast<std::size_t>(cache.length);
  const auto hid = static_cast<std::size_t>(d.hid);
  const auto in = static_cast<std::size_t>(d.in_dim());
  const auto np = static_cast<std::size_t>(d.np);
  const auto na = static_cast<std::size_t>(d.aux);
  const auto out = np + na;

  Gradients grads = params.zeros_like();

  std::vector<double> dy(out);
  std::array<std::vector<double>, NetDims::kLayers> dh_next, dc_next, dz;
  for (int layer = 0; layer < NetDims::kLayers; ++layer) {
    dh_next[layer].assign(hid, 0.0);
    dc_next[layer].assign(hid, 0.0);
    dz[layer].assign(4 * hid, 0.0);
  }
  std::vector<double> dh(hid), dx(in), dfeedback(out, 0.0);
  const bool continuous = cache.feedback == FeedbackMode::Continuous;

  for (std::size_t t = L; t-- > 0;) {
    // Output layer: loss gradient plus whatever step t+1 sent back through
    // its feedback slice.
    const double* p = cache.probs.data() + t * np;
    double* dlogits = dy.data();
    for (std::size_t k = 0; k < np; ++k) dlogits[k] = p[k];
    dlogits[target[t]] -= 1.0;
    if (continuous) {
      double dot = 0.0;
      for (std::size_t k = 0; k < np; ++k) dot += p[k] * dfeedback[k];
      for (std::size_t k = 0; k < np; ++k) dlogits[k] += p[k] * (dfeedback[k] - dot);
    }
    const double* a = cache.aux.data() + t * na;
    for (std::size_t k = 0; k < na; ++k) dy[np + k] = dfeedback[np + k] * (1.0 - a[k] * a[k]);

    const double* h_top = cache.hiddens[1].data() + (t + 1) * hid;
    outer_acc(grads.w_out(), out, hid, dy.data(), h_top);
    auto db_out = grads.b_out();
    for (std::size_t k = 0; k < out; ++k) db_out[k] += dy[k];

    std::copy(dh_next[1].begin(), dh_next[1].end(), dh.begin());
    matvec_t_acc(params.w_out(), out, hid, dy.data(), dh.data());

    for (int layer = NetDims::kLayers - 1; layer >= 0; --layer) {
      const double* g = cache.gates[layer].data() + t * 4 * hid;
      const double* c_prev = cache.cells[layer].data() + t * hid;
      const double* tc = cache.tanh_cells[layer].data() + t * hid;
      const double* h_prev = cache.hiddens[layer].data() + t * hid;
      double* z = dz[layer].data();
      for (std::size_t k = 0; k < hid; ++k) {
        const double i = g[k], f = g[hid + k], o = g[2 * hid + k], cand = g[3 * hid + k];
        const double dc = dh[k] * o * (1.0 - tc[k] * tc[k]) + dc_next[layer][k];
        const double d_o = dh[k] * tc[k];
        z[k] = dc * cand * i * (1.0 - i);
        z[hid + k] = dc * c_prev[k] * f * (1.0 - f);
        z[2 * hid + k] = d_o * o * (1.0 - o);
        z[3 * hid + k] = dc * i * (1.0 - cand * cand);
        dc_next[layer][k] = dc * f;
      }
      const double* x = layer == 0 ? cache.inputs.data() + t * in : cache.hiddens[0].data() + (t + 1) * hid;
      const auto layer_in = static_cast<std::size_t>(d.layer_input_dim(layer));
      outer_acc(grads.w_in(layer), 4 * hid, layer_in, z, x);
      outer_acc(grads.w_rec(layer), 4 * hid, hid, z, h_prev);
      auto db = grads.bias(layer);
      for (std::size_t k = 0; k < 4 * hid; ++k) db[k] += z[k];

      std::fill(dh_next[layer].begin(), dh_next[layer].end(), 0.0);
      matvec_t_acc(params.w_rec(layer), 4 * hid, hid, z, dh_next[layer].data());

      if (layer == 1) {
        std::copy(dh_next[0].begin(), dh_next[0].end(), dh.begin());
        matvec_t_acc(params.w_in(1), 4 * hid, hid, z, dh.data());
      } else {
        std::fill(dx.begin(), dx.end(), 0.0);
        matvec_t_acc(params.w_in(0), 4 * hid, in, z, dx.data());
      }
    }

    // The feedback slice of input t came from step t-1's output. At t=0 it
    // is the constant ones vector; the noise slice is always constant.
    if (continuous) {
      std::copy(dx.begin(), dx.begin() + static_cast<std::ptrdiff_t>(out), dfeedback.begin());
    } else {
      std::fill(dfeedback.begin(), dfeedback.begin() + static_cast<std::ptrdiff_t>(np), 0.0);
      std::copy(dx.begin() + static_cast<std::ptrdiff_t>(np), dx.begin() + static_cast<std::ptrdiff_t>(out),
                dfeedback.begin() + static_cast<std::ptrdiff_t>(np));
    }
  }
  return grads;
}

double global_norm(std::span<const double> values) {
  double sq = 0.0;
  for (double v : values) sq += v * v;
  return std::sqrt(sq);
}

double clip_gradients(Gradients& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_gradients: max_norm must be positive");
  const double norm = global_norm(grads.flat());
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grads.flat()) g *= scale;
  }
  return norm;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  ++state.t;
  const double bc1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k];
    state.m[k] = AdamState::kBeta1 * state.m[k] + (1.0 - AdamState::kBeta1) * g;
    state.v[k] = AdamState::kBeta2 * state.v[k] + (1.0 - AdamState::kBeta2) * g * g;
    const double m_hat = state.m[k] / bc1;
    const double v_hat = state.v[k] / bc2;
    params[k] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
  }
}

namespace {

// Plain scalar forward pass and loss in extended precision, used as the
// finite-difference side of gradient_check. Parameter `probe` is shifted by
// `delta` inside the extended-precision copy so the step is exact.
long double extended_loss(const NetworkParams& params, std::size_t probe, long double delta, int length,
                          const std::vector<double>& noise, const std::vector<int>& target) {
  using R = long double;
  const NetDims& d = params.dims();
  const int hid = d.hid, np = d.np, aux = d.aux, fb = d.feedback_dim();
  std::vector<R> theta(params.flat().begin(), params.flat().end());
  theta[probe] += delta;
  const auto offset = [&](std::span<const double> part) {
    return static_cast<std::size_t>(part.data() - params.flat().data());
  };

  std::array<std::vector<R>, NetDims::kLayers> h, c;
  for (int l = 0; l < NetDims::kLayers; ++l) {
    h[l].assign(static_cast<std::size_t>(hid), 0.0L);
    c[l].assign(static_cast<std::size_t>(hid), 0.0L);
  }
  std::vector<R> feedback(static_cast<std::size_t>(fb), 1.0L);
  R loss = 0.0L;
  for (int t = 0; t < length; ++t) {
    std::vector<R> x(feedback);
    for (int k = 0; k < d.noi; ++k) x.push_back(static_cast<R>(noise[static_cast<std::size_t>(t * d.noi + k)]));
    for (int l = 0; l < NetDims::kLayers; ++l) {
      const int in = d.layer_input_dim(l);
      const std::size_t wi = offset(params.w_in(l)), wr = offset(params.w_rec(l)), b = offset(params.bias(l));
      std::vector<R> z(static_cast<std::size_t>(4 * hid));
      for (int r = 0; r < 4 * hid; ++r) {
        R acc = theta[b + static_cast<std::size_t>(r)];
        for (int k = 0; k < in; ++k) acc += theta[wi + static_cast<std::size_t>(r * in + k)] * x[static_cast<std::size_t>(k)];
        for (int k = 0; k < hid; ++k)
          acc += theta[wr + static_cast<std::size_t>(r * hid + k)] * h[l][static_cast<std::size_t>(k)];
        z[static_cast<std::size_t>(r)] = acc;
      }
      for (int j = 0; j < hid; ++j) {
        const auto at = [&](int gate) { return z[static_cast<std::size_t>(gate * hid + j)]; };
        const R i = 1.0L / (1.0L + std::exp(-at(0)));
        const R f = 1.0L / (1.0L + std::exp(-at(1)));
        const R o = 1.0L / (1.0L + std::exp(-at(2)));
        const R g = std::tanh(at(3));
        auto& cj = c[l][static_cast<std::size_t>(j)];
        cj = f * cj + i * g;
        h[l][static_cast<std::size_t>(j)] = o * std::tanh(cj);
      }
      x = h[l];
    }
    const std::size_t wo = offset(params.w_out()), bo = offset(params.b_out());
    std::vector<R> y(static_cast<std::size_t>(d.out_dim()));
    for (int r = 0; r < d.out_dim(); ++r) {
      R acc = theta[bo + static_cast<std::size_t>(r)];
      for (int k = 0; k < hid; ++k) acc += theta[wo + static_cast<std::size_t>(r * hid + k)] * x[static_cast<std::size_t>(k)];
      y[static_cast<std::size_t>(r)] = acc;
    }
    const R top = *std::max_element(y.begin(), y.begin() + np);
    R denom = 0.0L;
    for (int k = 0; k < np; ++k) denom += std::exp(y[static_cast<std::size_t>(k)] - top);
    loss -= y[static_cast<std::size_t>(target[static_cast<std::size_t>(t)])] - top - std::log(denom);
    for (int k = 0; k < np; ++k) feedback[static_cast<std::size_t>(k)] = std::exp(y[static_cast<std::size_t>(k)] - top) / denom;
    for (int k = 0; k < aux; ++k)
      feedback[static_cast<std::size_t>(np + k)] = std::tanh(y[static_cast<std::size_t>(np + k)]);
  }
  return loss;
}

}  // namespace

GradCheckReport gradient_check(const NetDims& dims, int length, std::uint64_t seed, double step,
                               bool corrupt_analytic) {
  std::mt19937_64 rng(seed);
  NetworkParams params = init_params(dims, rng);
  std::vector<double> noise(static_cast<std::size_t>(length * dims.noi));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& z : noise) z = normal(rng);
  std::vector<int> target(static_cast<std::size_t>(length));
  std::uniform_int_distribution<int> pick(0, dims.np - 1);
  for (int& c : target) c = pick(rng);

  // Continuous feedback makes the loss independent of the sampled characters.
  std::mt19937_64 sampler(seed ^ 0x5eedULL);
  auto cache = rollout(params, length, noise, RolloutMode::TrainSampled, FeedbackMode::Continuous, sampler);
  Gradients analytic = bptt(cache, target, params);
  if (corrupt_analytic && analytic.size() > 0) analytic.flat()[analytic.size() / 2] += 1e-2;

  GradCheckReport report;
  report.parameters = params.size();
  const long double h = step;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const long double up = extended_loss(params, k, h, length, noise, target);
    const long double down = extended_loss(params, k, -h, length, noise, target);
    const double numeric = static_cast<double>((up - down) / (2.0L * h));
    const double a = analytic.flat()[k];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = k;
    }
  }
  return report;
}

}  // namespace ouroboros
