#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ouroboros/genome.hpp"

namespace ouroboros {

/// Shape of the two-layer LSTM generator.
///
/// Input  = feedback slice (np + aux) followed by noise slice (noi).
/// Output = np character logits followed by aux tanh units.
struct NetDims {
  static constexpr int kLayers = 2;

  int np = static_cast<int>(Alphabet::kSize);
  int aux = 8;
  int noi = 8;
  int hid = 16;

  int in_dim() const { return np + aux + noi; }
  int out_dim() const { return np + aux; }
  int feedback_dim() const { return np + aux; }
  int layer_input_dim(int layer) const { return layer == 0 ? in_dim() : hid; }
  bool legal() const { return np >= 1 && aux >= 0 && noi >= 0 && hid >= 1; }

  static NetDims from_genome(const Genome& g) { return NetDims{static_cast<int>(Alphabet::kSize), g.aux, g.noi, g.hid}; }
  friend bool operator==(const NetDims&, const NetDims&) = default;
};

/// All trainable parameters in a single contiguous buffer.
///
/// Per layer: input weights (4*hid x layer_input_dim), recurrent weights
/// (4*hid x hid), bias (4*hid). Gate row blocks are ordered input, forget,
/// output, candidate. Then the output projection (out_dim x hid) and its
/// bias. Matrices are row-major. Gradients use the same type.
class NetworkParams {
 public:
  enum Gate : int { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCandidate = 3 };

  explicit NetworkParams(const NetDims& dims);

  const NetDims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  std::span<double> w_in(int layer) { return slice(w_in_[layer], w_in_size(layer)); }
  std::span<double> w_rec(int layer) { return slice(w_rec_[layer], w_rec_size()); }
  std::span<double> bias(int layer) { return slice(bias_[layer], gate_rows()); }
  std::span<double> w_out() { return slice(w_out_, static_cast<std::size_t>(dims_.out_dim() * dims_.hid)); }
  std::span<double> b_out() { return slice(b_out_, static_cast<std::size_t>(dims_.out_dim())); }

  std::span<const double> w_in(int layer) const { return cslice(w_in_[layer], w_in_size(layer)); }
  std::span<const double> w_rec(int layer) const { return cslice(w_rec_[layer], w_rec_size()); }
  std::span<const double> bias(int layer) const { return cslice(bias_[layer], gate_rows()); }
  std::span<const double> w_out() const { return cslice(w_out_, static_cast<std::size_t>(dims_.out_dim() * dims_.hid)); }
  std::span<const double> b_out() const { return cslice(b_out_, static_cast<std::size_t>(dims_.out_dim())); }

  NetworkParams zeros_like() const { return NetworkParams(dims_); }

 private:
  std::size_t gate_rows() const { return static_cast<std::size_t>(4 * dims_.hid); }
  std::size_t w_in_size(int layer) const { return gate_rows() * static_cast<std::size_t>(dims_.layer_input_dim(layer)); }
  std::size_t w_rec_size() const { return gate_rows() * static_cast<std::size_t>(dims_.hid); }
  std::span<double> slice(std::size_t off, std::size_t n) { return std::span<double>(data_).subspan(off, n); }
  std::span<const double> cslice(std::size_t off, std::size_t n) const {
    return std::span<const double>(data_).subspan(off, n);
  }

  NetDims dims_;
  std::array<std::size_t, NetDims::kLayers> w_in_{}, w_rec_{}, bias_{};
  std::size_t w_out_ = 0, b_out_ = 0;
  std::vector<double> data_;
};

using Gradients = NetworkParams;

/// Glorot-uniform weights, zero biases except the forget gate (+1).
NetworkParams init_params(const NetDims& dims, std::mt19937_64& rng);

struct LstmState {
  std::array<std::vector<double>, NetDims::kLayers> h, c;
  static LstmState zeros(const NetDims& dims);
};

/// One recurrent step. Returns the new state and the output vector
/// (np raw logits followed by aux tanh values).
std::pair<LstmState, std::vector<double>> lstm_step(const NetworkParams& params, const LstmState& state,
                                                    std::span<const double> x);

enum class RolloutMode { TrainSampled, EvalArgmax };

/// What the next step sees in its feedback slice: the continuous output
/// (softmax probabilities + aux values) or a one-hot of the emitted
/// character (+ aux values).
enum class FeedbackMode { Continuous, OneHot };

/// Everything recorded during a rollout that backpropagation needs.
/// Per-step buffers are flattened row-major by timestep.
struct RolloutCache {
  NetDims dims;
  int length = 0;
  FeedbackMode feedback = FeedbackMode::Continuous;

  std::vector<double> inputs;                                     // L x in_dim
  std::array<std::vector<double>, NetDims::kLayers> gates;       // L x 4*hid, activated
  std::array<std::vector<double>, NetDims::kLayers> cells;       // (L+1) x hid, row 0 = initial
  std::array<std::vector<double>, NetDims::kLayers> hiddens;     // (L+1) x hid, row 0 = initial
  std::array<std::vector<double>, NetDims::kLayers> tanh_cells;  // L x hid
  std::vector<double> logits;                                     // L x np
  std::vector<double> probs;                                      // L x np
  std::vector<double> aux;                                        // L x aux, post-tanh
  std::vector<int> emitted;                                       // L

  std::span<const double> step(const std::vector<double>& buf, int t, int width) const {
    return std::span<const double>(buf).subspan(static_cast<std::size_t>(t) * static_cast<std::size_t>(width),
                                                 static_cast<std::size_t>(width));
  }
  /// Emitted characters as text; requires np to match the genome alphabet.
  std::string text() const;
};

/// Rollout with caller-supplied noise (length x noi, row-major). `rng` is
/// consulted only for categorical sampling in TrainSampled mode.
///
/// When `stop_on_mismatch` is non-empty, generation halts right after the
/// first emitted character that differs from it; the cache is then shorter
/// than `length` and only good for reading `emitted`.
RolloutCache rollout(const NetworkParams& params, int length, std::span<const double> noise, RolloutMode mode,
                     FeedbackMode feedback, std::mt19937_64& rng, std::span<const int> stop_on_mismatch = {});

/// Autoregressive generation seeded by an all-ones feedback vector, with
/// fresh standard-normal noise drawn for every step (all `length` steps are
/// drawn up front, so early stopping does not change rng consumption).
RolloutCache generate_sequence(const NetworkParams& params, int length, std::mt19937_64& rng, RolloutMode mode,
                               FeedbackMode feedback = FeedbackMode::Continuous,
                               std::span<const int> stop_on_mismatch = {});

/// Summed cross-entropy of the character logits against `target`.
double sequence_loss(const RolloutCache& cache, std::span<const int> target);

/// Exact gradient of sequence_loss through time, including the feedback
/// path from each step's output into the next step's input.
Gradients bptt(const RolloutCache& cache, std::span<const int> target, const NetworkParams& params);

double global_norm(std::span<const double> values);
/// Rescales so the global L2 norm is at most `max_norm`; returns the norm
/// before clipping.
double clip_gradients(Gradients& grads, double max_norm);

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<double> m, v;
  std::uint64_t t = 0;

  static AdamState fresh(std::size_t n) { return AdamState{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr);
inline void adam_step(NetworkParams& params, const Gradients& grads, AdamState& state, double lr) {
  adam_step(params.flat(), grads.flat(), state, lr);
}

/// Result of comparing bptt against central finite differences.
struct GradCheckReport {
  std::size_t parameters = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

/// Central-difference check of bptt on a freshly initialised network with
/// fixed noise and a random target. `corrupt_analytic` perturbs one
/// analytic entry (negative control).
GradCheckReport gradient_check(const NetDims& dims, int length, std::uint64_t seed, double step = 1e-5,
                               bool corrupt_analytic = false);

}  // namespace ouroboros
