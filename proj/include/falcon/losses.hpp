#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "falcon/dense.hpp"
#include "falcon/relations.hpp"

namespace falcon {

// Floor applied inside every logarithm.
inline constexpr double kLogClamp = 1e-12;

// Defaults are the selected hyperparameters reported for the method.
struct LossWeights {
  double lambda1 = 0.5;      // coarse cross-entropy
  double lambda2 = 0.5;      // neighbor consistency + confidence
  double lambda3 = 2.0;      // entropy regularizer
  double lambda_m = 0.1;     // balance term of the relation objective
  double temperature = 0.9;  // sharpening of the target distribution
  double gamma = 0.99;       // EMA coefficient
  std::size_t neighbors = 20;
  std::size_t update_period = 20;

  void validate() const;
};

// Which terms enter the classifier objective.
struct LossSwitches {
  bool coarse = true;
  bool neighbor = true;
  bool confidence = true;
  bool reg = true;
};

// A scalar loss with its gradient with respect to the fine probabilities p_f.
struct LossTerm {
  double value = 0.0;
  DenseMatrix grad;
  std::size_t clamped = 0;  // logarithm arguments that hit kLogClamp
};

// Row n is column y_n of M: 1 for the fine classes under the sample's coarse label.
DenseMatrix sibling_mask(const RelationMatrix& m, std::span<const int> coarse_labels);
// Multi-dataset variant: sample n uses relations[dataset_index[n]].
DenseMatrix sibling_mask(std::span<const RelationMatrix> relations,
                         std::span<const int> coarse_labels,
                         std::span<const int> dataset_index);

// mean_n -ln(sum_i mask(n,i) p_f(n,i))
LossTerm coarse_loss(const DenseMatrix& probs, const DenseMatrix& mask);
LossTerm coarse_loss(const DenseMatrix& probs, const RelationMatrix& m,
                     std::span<const int> coarse_labels);

// -(1/(N L)) sum_n sum_k ln(<neighbor_probs(n*L+k), p_f(n)>). The neighbor rows
// come from the EMA network and are treated as constants.
LossTerm neighbor_loss(const DenseMatrix& probs, const DenseMatrix& neighbor_probs,
                       std::size_t neighbors);

// Softmax of ema_logits / temperature restricted to the fine classes with mask 1.
// Throws InfeasibleError when the mask row is empty.
std::vector<double> target_q(std::span<const double> ema_logits, std::span<const double> mask,
                             double temperature);
std::vector<double> target_q(std::span<const double> ema_logits, int coarse_label,
                             const RelationMatrix& m, double temperature);
DenseMatrix target_q_rows(const DenseMatrix& ema_logits, const DenseMatrix& mask,
                          double temperature);

// mean_n CE(q_n, p_f(n)); q is a constant target.
LossTerm confidence_loss(const DenseMatrix& q, const DenseMatrix& probs);

// neighbor_loss + confidence_loss.
LossTerm fine_loss(const DenseMatrix& probs, const DenseMatrix& neighbor_probs,
                   std::size_t neighbors, const DenseMatrix& q);

struct EntropyReg {
  double value = 0.0;
  std::vector<double> grad;  // with respect to the mean prediction
};

// ln K + sum_i pbar_i ln pbar_i, with 0 ln 0 = 0.
EntropyReg entropy_reg(std::span<const double> mean_prediction);
// Same, with pbar the column mean of probs; gradient with respect to probs.
LossTerm entropy_reg(const DenseMatrix& probs);

// Pulls a gradient with respect to softmax(logits) back to the logits.
DenseMatrix softmax_backward(const DenseMatrix& probs, const DenseMatrix& grad_probs);

struct LossInputs {
  const DenseMatrix& logits;          // current network, N x K_F
  const DenseMatrix& mask;            // sibling mask, N x K_F
  const DenseMatrix& q;               // target distribution, N x K_F
  const DenseMatrix& neighbor_probs;  // EMA predictions, (N*L) x K_F
  std::size_t neighbors;
};

struct LossBreakdown {
  double coarse = 0.0;
  double neighbor = 0.0;
  double confidence = 0.0;
  double fine = 0.0;
  double reg = 0.0;
  double total = 0.0;
  std::size_t clamped = 0;
  DenseMatrix grad_probs;   // d total / d p_f
  DenseMatrix grad_logits;  // d total / d logits
};

// lambda1 * coarse + lambda2 * (neighbor + confidence) + lambda3 * reg. Every
// component value is reported; disabled terms do not enter the total or gradient.
LossBreakdown total_loss(const LossInputs& in, const LossWeights& weights,
                         const LossSwitches& switches = {});

}  // namespace falcon
