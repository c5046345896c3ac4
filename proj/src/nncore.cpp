#include "falcon/nncore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "falcon/errors.hpp"

namespace falcon {

std::size_t MlpParams::input_dim() const {
  return layers.empty() ? 0 : layers.front().weight.cols();
}

std::size_t MlpParams::output_dim() const {
  return layers.empty() ? 0 : layers.back().weight.rows();
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

bool MlpParams::same_shape(const MlpParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = other.layers[i];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
        a.bias.size() != b.bias.size()) {
      return false;
    }
  }
  return true;
}

bool MlpParams::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.all_finite()) return false;
    if (!std::all_of(l.bias.begin(), l.bias.end(), [](double x) { return std::isfinite(x); }))
      return false;
  }
  return true;
}

MlpParams MlpParams::zeros_like() const {
  MlpParams z;
  z.layers.reserve(layers.size());
  for (const auto& l : layers) {
    z.layers.push_back({DenseMatrix(l.weight.rows(), l.weight.cols()),
                        std::vector<double>(l.bias.size(), 0.0)});
  }
  return z;
}

MlpArchitecture MlpArchitecture::standard(std::size_t input_dim, std::size_t output_dim,
                                          std::size_t depth, std::size_t width) {
  if (depth == 0) throw DimensionError("MlpArchitecture: depth must be at least 1");
  return {input_dim, std::vector<std::size_t>(depth - 1, width), output_dim};
}

MlpParams init_mlp(const MlpArchitecture& arch, Rng& rng) {
  if (arch.input_dim == 0 || arch.output_dim == 0) {
    throw DimensionError("init_mlp: input and output dimensions must be positive");
  }
  std::vector<std::size_t> widths{arch.input_dim};
  widths.insert(widths.end(), arch.hidden.begin(), arch.hidden.end());
  widths.push_back(arch.output_dim);

  MlpParams p;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t fan_in = widths[i];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    LinearLayer layer{DenseMatrix(widths[i + 1], fan_in), std::vector<double>(widths[i + 1])};
    for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
    for (double& b : layer.bias) b = rng.uniform(-bound, bound);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

ClassifierState ClassifierState::create(const MlpArchitecture& arch, std::uint64_t seed) {
  Rng rng(seed);
  return from_params(init_mlp(arch, rng), seed);
}

ClassifierState ClassifierState::from_params(MlpParams theta, std::uint64_t seed) {
  ClassifierState s;
  s.velocity = theta.zeros_like();
  s.theta_ema = theta;
  s.theta = std::move(theta);
  s.seed = seed;
  return s;
}

ForwardTrace forward(const MlpParams& params, const DenseMatrix& batch) {
  if (params.layers.empty()) throw DimensionError("forward: network has no layers");
  if (batch.cols() != params.input_dim()) {
    throw DimensionError("forward: batch has " + std::to_string(batch.cols()) +
                         " columns, network expects " + std::to_string(params.input_dim()));
  }
  ForwardTrace trace;
  trace.inputs.reserve(params.layers.size());
  DenseMatrix x = batch;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto& layer = params.layers[li];
    DenseMatrix z = matmul_transposed_b(x, layer.weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
    }
    trace.inputs.push_back(std::move(x));
    if (li + 1 < params.layers.size()) {
      for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
    }
    x = std::move(z);
  }
  trace.logits = std::move(x);
  return trace;
}

DenseMatrix forward_logits(const MlpParams& params, const DenseMatrix& batch) {
  return forward(params, batch).logits;
}

DenseMatrix forward_logits(const ClassifierState& state, Branch which, const DenseMatrix& batch) {
  return forward_logits(which == Branch::current ? state.theta : state.theta_ema, batch);
}

DenseMatrix softmax_rows(const DenseMatrix& logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax_rows: temperature must be > 0");
  if (!logits.all_finite()) throw NumericError("softmax_rows: non-finite logits");
  DenseMatrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto in = logits.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp((in[c] - mx) / temperature);
      z += o[c];
    }
    for (double& v : o) v /= z;
  }
  return out;
}

MlpParams backward(const MlpParams& params, const ForwardTrace& trace,
                   const DenseMatrix& grad_logits) {
  if (grad_logits.rows() != trace.logits.rows() || grad_logits.cols() != trace.logits.cols()) {
    throw DimensionError("backward: gradient shape does not match logits");
  }
  MlpParams grads;
  grads.layers.resize(params.layers.size());
  DenseMatrix delta = grad_logits;
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& layer = params.layers[li];
    const DenseMatrix& input = trace.inputs[li];
    auto& g = grads.layers[li];
    g.weight = matmul_transposed_a(delta, input);
    g.bias.assign(layer.bias.size(), 0.0);
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      const auto row = delta.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) g.bias[c] += row[c];
    }
    if (li == 0) break;
    DenseMatrix upstream = matmul(delta, layer.weight);
    // ReLU mask: the stored input is the post-activation, positive iff active.
    auto& ud = upstream.data();
    const auto& id = input.data();
    for (std::size_t k = 0; k < ud.size(); ++k) {
      if (!(id[k] > 0.0)) ud[k] = 0.0;
    }
    delta = std::move(upstream);
  }
  return grads;
}

MlpParams backward(const ClassifierState& state, const DenseMatrix& batch,
                   const DenseMatrix& grad_logits) {
  return backward(state.theta, forward(state.theta, batch), grad_logits);
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0,1)");
  if (!(decay > 0.0)) throw std::invalid_argument("decay factor must be positive");
  for (std::size_t i = 1; i < milestones.size(); ++i) {
    if (milestones[i] <= milestones[i - 1]) {
      throw std::invalid_argument("milestones must be strictly increasing");
    }
  }
}

double OptimizerConfig::rate_at(std::size_t epoch) const {
  double lr = learning_rate;
  for (std::size_t m : milestones) {
    if (epoch >= m) lr *= decay;
  }
  return lr;
}

namespace {

template <typename Fn>
void for_each_param(MlpParams& a, const MlpParams& b, Fn fn) {
  for (std::size_t li = 0; li < a.layers.size(); ++li) {
    auto& aw = a.layers[li].weight.data();
    const auto& bw = b.layers[li].weight.data();
    for (std::size_t k = 0; k < aw.size(); ++k) fn(aw[k], bw[k]);
    auto& ab = a.layers[li].bias;
    const auto& bb = b.layers[li].bias;
    for (std::size_t k = 0; k < ab.size(); ++k) fn(ab[k], bb[k]);
  }
}

}  // namespace

void sgd_step(ClassifierState& state, const MlpParams& grads, double learning_rate,
              double momentum) {
  if (!state.theta.same_shape(grads)) throw DimensionError("sgd_step: gradient shape mismatch");
  if (!state.velocity.same_shape(state.theta)) state.velocity = state.theta.zeros_like();
  for_each_param(state.velocity, grads, [momentum](double& v, double g) { v = momentum * v + g; });
  for_each_param(state.theta, state.velocity,
                 [learning_rate](double& t, double v) { t -= learning_rate * v; });
  ++state.step;
}

void sgd_step(ClassifierState& state, const MlpParams& grads, const OptimizerConfig& config,
              std::size_t epoch) {
  sgd_step(state, grads, config.rate_at(epoch), config.momentum);
}

void ema_update(ClassifierState& state, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("ema_update: gamma must be in [0,1)");
  }
  if (!state.theta_ema.same_shape(state.theta)) {
    throw DimensionError("ema_update: EMA shape differs from theta");
  }
  if (gamma == 0.0) {
    state.theta_ema = state.theta;
    return;
  }
  for_each_param(state.theta_ema, state.theta,
                 [gamma](double& e, double t) { e = gamma * e + (1.0 - gamma) * t; });
}

}  // namespace falcon
