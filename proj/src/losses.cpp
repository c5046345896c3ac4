#include "falcon/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "falcon/errors.hpp"
#include "falcon/nncore.hpp"

namespace falcon {

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0)) {
    throw std::invalid_argument("loss weights lambda1..3 must be nonnegative");
  }
  if (!(lambda_m >= 0.0)) throw std::invalid_argument("lambda_m must be nonnegative");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("EMA gamma must be in [0,1)");
  if (neighbors == 0) throw std::invalid_argument("number of neighbors must be positive");
  if (update_period == 0) throw std::invalid_argument("update period must be positive");
}

namespace {

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) +
                         "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                         "x" + std::to_string(b.cols()));
  }
}

void add_scaled(DenseMatrix& acc, const DenseMatrix& g, double w) {
  auto& a = acc.data();
  const auto& b = g.data();
  for (std::size_t k = 0; k < a.size(); ++k) a[k] += w * b[k];
}

}  // namespace

DenseMatrix sibling_mask(const RelationMatrix& m, std::span<const int> coarse_labels) {
  DenseMatrix mask(coarse_labels.size(), m.k_f());
  for (std::size_t n = 0; n < coarse_labels.size(); ++n) {
    const int y = coarse_labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= m.k_c()) {
      throw DimensionError("sibling_mask: coarse label " + std::to_string(y) + " out of range");
    }
    for (std::size_t i = 0; i < m.k_f(); ++i) mask(n, i) = m.parent(i) == y ? 1.0 : 0.0;
  }
  return mask;
}

DenseMatrix sibling_mask(std::span<const RelationMatrix> relations,
                         std::span<const int> coarse_labels,
                         std::span<const int> dataset_index) {
  if (coarse_labels.size() != dataset_index.size()) {
    throw DimensionError("sibling_mask: label and dataset index lengths differ");
  }
  if (relations.empty()) throw DimensionError("sibling_mask: no relation matrices");
  const std::size_t k_f = relations.front().k_f();
  DenseMatrix mask(coarse_labels.size(), k_f);
  for (std::size_t n = 0; n < coarse_labels.size(); ++n) {
    const int l = dataset_index[n];
    if (l < 0 || static_cast<std::size_t>(l) >= relations.size()) {
      throw DimensionError("sibling_mask: dataset index " + std::to_string(l) + " out of range");
    }
    const RelationMatrix& m = relations[static_cast<std::size_t>(l)];
    const int y = coarse_labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= m.k_c()) {
      throw DimensionError("sibling_mask: coarse label " + std::to_string(y) + " out of range");
    }
    for (std::size_t i = 0; i < k_f; ++i) mask(n, i) = m.parent(i) == y ? 1.0 : 0.0;
  }
  return mask;
}

LossTerm coarse_loss(const DenseMatrix& probs, const DenseMatrix& mask) {
  require_same_shape(probs, mask, "coarse_loss");
  const std::size_t n_rows = probs.rows();
  LossTerm out{0.0, DenseMatrix(probs.rows(), probs.cols()), 0};
  if (n_rows == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n_rows);
  for (std::size_t n = 0; n < n_rows; ++n) {
    const auto p = probs.row(n);
    const auto m = mask.row(n);
    double pc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) pc += m[i] * p[i];
    if (pc < kLogClamp) {
      ++out.clamped;
      out.value -= std::log(kLogClamp);
      continue;
    }
    out.value -= std::log(pc);
    auto g = out.grad.row(n);
    const double d = -inv_n / pc;
    for (std::size_t i = 0; i < p.size(); ++i) g[i] = d * m[i];
  }
  out.value *= inv_n;
  return out;
}

LossTerm coarse_loss(const DenseMatrix& probs, const RelationMatrix& m,
                     std::span<const int> coarse_labels) {
  if (probs.cols() != m.k_f()) throw DimensionError("coarse_loss: K_F mismatch with relations");
  return coarse_loss(probs, sibling_mask(m, coarse_labels));
}

LossTerm neighbor_loss(const DenseMatrix& probs, const DenseMatrix& neighbor_probs,
                       std::size_t neighbors) {
  if (neighbors == 0) throw std::invalid_argument("neighbor_loss: L must be positive");
  if (neighbor_probs.rows() != probs.rows() * neighbors || neighbor_probs.cols() != probs.cols()) {
    throw DimensionError("neighbor_loss: expected " + std::to_string(probs.rows() * neighbors) +
                         " neighbor rows of width " + std::to_string(probs.cols()));
  }
  LossTerm out{0.0, DenseMatrix(probs.rows(), probs.cols()), 0};
  if (probs.rows() == 0) return out;
  const double scale = 1.0 / static_cast<double>(probs.rows() * neighbors);
  for (std::size_t n = 0; n < probs.rows(); ++n) {
    const auto p = probs.row(n);
    auto g = out.grad.row(n);
    for (std::size_t k = 0; k < neighbors; ++k) {
      const auto nb = neighbor_probs.row(n * neighbors + k);
      double dot = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) dot += nb[i] * p[i];
      if (dot < kLogClamp) {
        ++out.clamped;
        out.value -= std::log(kLogClamp);
        continue;
      }
      out.value -= std::log(dot);
      const double d = -scale / dot;
      for (std::size_t i = 0; i < p.size(); ++i) g[i] += d * nb[i];
    }
  }
  out.value *= scale;
  return out;
}

std::vector<double> target_q(std::span<const double> ema_logits, std::span<const double> mask,
                             double temperature) {
  if (ema_logits.size() != mask.size()) throw DimensionError("target_q: mask width mismatch");
  if (!(temperature > 0.0)) throw std::invalid_argument("target_q: temperature must be positive");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0) mx = std::max(mx, ema_logits[i]);
  }
  if (mx == -std::numeric_limits<double>::infinity()) {
    throw InfeasibleError("target_q: coarse class has no fine class in the relation matrix");
  }
  if (!std::isfinite(mx)) throw NumericError("target_q: non-finite logits");
  std::vector<double> q(ema_logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (mask[i] == 0.0) continue;
    q[i] = std::exp((ema_logits[i] - mx) / temperature);
    z += q[i];
  }
  for (double& v : q) v /= z;
  return q;
}

std::vector<double> target_q(std::span<const double> ema_logits, int coarse_label,
                             const RelationMatrix& m, double temperature) {
  if (ema_logits.size() != m.k_f()) throw DimensionError("target_q: K_F mismatch");
  if (coarse_label < 0 || static_cast<std::size_t>(coarse_label) >= m.k_c()) {
    throw DimensionError("target_q: coarse label out of range");
  }
  std::vector<double> mask(m.k_f());
  for (std::size_t i = 0; i < m.k_f(); ++i) mask[i] = m.parent(i) == coarse_label ? 1.0 : 0.0;
  return target_q(ema_logits, mask, temperature);
}

DenseMatrix target_q_rows(const DenseMatrix& ema_logits, const DenseMatrix& mask,
                          double temperature) {
  require_same_shape(ema_logits, mask, "target_q_rows");
  DenseMatrix q(ema_logits.rows(), ema_logits.cols());
  for (std::size_t n = 0; n < q.rows(); ++n) {
    const auto row = target_q(ema_logits.row(n), mask.row(n), temperature);
    std::copy(row.begin(), row.end(), q.row(n).begin());
  }
  return q;
}

LossTerm confidence_loss(const DenseMatrix& q, const DenseMatrix& probs) {
  require_same_shape(q, probs, "confidence_loss");
  LossTerm out{0.0, DenseMatrix(probs.rows(), probs.cols()), 0};
  if (probs.rows() == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(probs.rows());
  for (std::size_t n = 0; n < probs.rows(); ++n) {
    const auto qr = q.row(n);
    const auto p = probs.row(n);
    auto g = out.grad.row(n);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (qr[i] == 0.0) continue;
      if (p[i] < kLogClamp) {
        ++out.clamped;
        out.value -= qr[i] * std::log(kLogClamp);
        continue;
      }
      out.value -= qr[i] * std::log(p[i]);
      g[i] = -inv_n * qr[i] / p[i];
    }
  }
  out.value *= inv_n;
  return out;
}

LossTerm fine_loss(const DenseMatrix& probs, const DenseMatrix& neighbor_probs,
                   std::size_t neighbors, const DenseMatrix& q) {
  LossTerm nn = neighbor_loss(probs, neighbor_probs, neighbors);
  const LossTerm conf = confidence_loss(q, probs);
  nn.value += conf.value;
  nn.clamped += conf.clamped;
  add_scaled(nn.grad, conf.grad, 1.0);
  return nn;
}

EntropyReg entropy_reg(std::span<const double> mean_prediction) {
  EntropyReg out;
  const std::size_t k = mean_prediction.size();
  if (k == 0) throw DimensionError("entropy_reg: empty prediction");
  out.value = std::log(static_cast<double>(k));
  out.grad.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double p = mean_prediction[i];
    if (p > 0.0) out.value += p * std::log(p);
    out.grad[i] = std::log(std::max(p, kLogClamp)) + 1.0;
  }
  return out;
}

LossTerm entropy_reg(const DenseMatrix& probs) {
  const auto mean = column_mean(probs);
  const EntropyReg reg = entropy_reg(mean);
  LossTerm out{reg.value, DenseMatrix(probs.rows(), probs.cols()), 0};
  const double inv_n = probs.rows() ? 1.0 / static_cast<double>(probs.rows()) : 0.0;
  for (std::size_t n = 0; n < probs.rows(); ++n) {
    auto g = out.grad.row(n);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = inv_n * reg.grad[i];
  }
  return out;
}

DenseMatrix softmax_backward(const DenseMatrix& probs, const DenseMatrix& grad_probs) {
  require_same_shape(probs, grad_probs, "softmax_backward");
  DenseMatrix out(probs.rows(), probs.cols());
  for (std::size_t n = 0; n < probs.rows(); ++n) {
    const auto p = probs.row(n);
    const auto g = grad_probs.row(n);
    double inner = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) inner += p[i] * g[i];
    auto o = out.row(n);
    for (std::size_t i = 0; i < p.size(); ++i) o[i] = p[i] * (g[i] - inner);
  }
  return out;
}

LossBreakdown total_loss(const LossInputs& in, const LossWeights& weights,
                         const LossSwitches& switches) {
  const DenseMatrix probs = softmax_rows(in.logits, 1.0);
  const LossTerm coarse = coarse_loss(probs, in.mask);
  const LossTerm nn = neighbor_loss(probs, in.neighbor_probs, in.neighbors);
  const LossTerm conf = confidence_loss(in.q, probs);
  const LossTerm reg = entropy_reg(probs);

  LossBreakdown out;
  out.coarse = coarse.value;
  out.neighbor = nn.value;
  out.confidence = conf.value;
  out.fine = nn.value + conf.value;
  out.reg = reg.value;
  out.grad_probs = DenseMatrix(probs.rows(), probs.cols());

  auto include = [&](bool on, double w, const LossTerm& term) {
    if (!on) return;
    out.total += w * term.value;
    out.clamped += term.clamped;
    if (w != 0.0) add_scaled(out.grad_probs, term.grad, w);
  };
  include(switches.coarse, weights.lambda1, coarse);
  include(switches.neighbor, weights.lambda2, nn);
  include(switches.confidence, weights.lambda2, conf);
  include(switches.reg, weights.lambda3, reg);

  out.grad_logits = softmax_backward(probs, out.grad_probs);
  return out;
}

}  // namespace falcon
