#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "falcon/dense.hpp"
#include "falcon/random.hpp"

namespace falcon {

struct LinearLayer {
  DenseMatrix weight;  // out x in
  std::vector<double> bias;

  friend bool operator==(const LinearLayer&, const LinearLayer&) = default;
};

// Feed-forward network: linear layers with ReLU between them, no activation
// after the last layer. Also used to hold gradients and momentum buffers.
struct MlpParams {
  std::vector<LinearLayer> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;
  bool same_shape(const MlpParams& other) const;
  bool all_finite() const;
  MlpParams zeros_like() const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

struct MlpArchitecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;  // widths of the hidden layers
  std::size_t output_dim = 0;

  // `depth` linear layers of `width` hidden units.
  static MlpArchitecture standard(std::size_t input_dim, std::size_t output_dim,
                                  std::size_t depth = 4, std::size_t width = 64);
};

// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
MlpParams init_mlp(const MlpArchitecture& arch, Rng& rng);

struct ClassifierState {
  MlpParams theta;
  MlpParams theta_ema;
  MlpParams velocity;  // momentum buffer
  std::uint64_t step = 0;
  std::uint64_t seed = 0;

  static ClassifierState create(const MlpArchitecture& arch, std::uint64_t seed);
  // Takes ownership of explicit parameters; EMA starts as a copy of theta.
  static ClassifierState from_params(MlpParams theta, std::uint64_t seed = 0);

  friend bool operator==(const ClassifierState&, const ClassifierState&) = default;
};

enum class Branch { current, ema };

struct ForwardTrace {
  std::vector<DenseMatrix> inputs;  // input to each layer (post-ReLU for layers > 0)
  DenseMatrix logits;
};

ForwardTrace forward(const MlpParams& params, const DenseMatrix& batch);
DenseMatrix forward_logits(const MlpParams& params, const DenseMatrix& batch);
DenseMatrix forward_logits(const ClassifierState& state, Branch which, const DenseMatrix& batch);

// Row-wise softmax of logits / temperature, max-subtracted.
DenseMatrix softmax_rows(const DenseMatrix& logits, double temperature = 1.0);

// Gradients of <grad_logits, logits> with respect to every parameter.
MlpParams backward(const MlpParams& params, const ForwardTrace& trace,
                   const DenseMatrix& grad_logits);
MlpParams backward(const ClassifierState& state, const DenseMatrix& batch,
                   const DenseMatrix& grad_logits);

struct OptimizerConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::vector<std::size_t> milestones;  // epochs at which the rate is multiplied by decay
  double decay = 0.1;

  void validate() const;
  double rate_at(std::size_t epoch) const;
};

// velocity <- momentum * velocity + grad; theta <- theta - lr * velocity.
void sgd_step(ClassifierState& state, const MlpParams& grads, double learning_rate,
              double momentum);
void sgd_step(ClassifierState& state, const MlpParams& grads, const OptimizerConfig& config,
              std::size_t epoch = 0);

// theta_ema <- gamma * theta_ema + (1 - gamma) * theta.
void ema_update(ClassifierState& state, double gamma);

}  // namespace falcon
