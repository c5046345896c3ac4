#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "falcon/dense.hpp"

namespace falcon {

// Minimum-cost perfect matching on a square cost matrix (Hungarian method).
// Returns the column assigned to each row.
std::vector<std::size_t> solve_assignment(const DenseMatrix& cost);

// counts(p, t): samples predicted p with true label t. Both labels in [0, k).
DenseMatrix contingency(std::span<const int> pred, std::span<const int> truth, std::size_t k);

struct MatchedAccuracy {
  double accuracy = 0.0;
  // permutation[p] is the true label matched to predicted label p.
  std::vector<std::size_t> permutation;
};

// Accuracy maximized over relabelings of the predictions.
MatchedAccuracy clustering_accuracy(std::span<const int> pred, std::span<const int> truth,
                                    std::size_t k);

// Pair-counting agreement corrected for chance. Labels may be any integers.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

struct MacroAccuracy {
  double value = 0.0;
  std::vector<std::size_t> excluded;  // true classes with no samples
};

// Unweighted mean over true classes of per-class recall after mapping each
// prediction p to permutation[p].
MacroAccuracy macro_accuracy(std::span<const int> pred, std::span<const int> truth,
                             std::span<const std::size_t> permutation);

struct MetricsReport {
  double accuracy = 0.0;
  double ari = 0.0;
  double macro_accuracy = 0.0;
  std::size_t ged = 0;
  std::vector<std::size_t> matched_permutation;
  std::vector<std::size_t> excluded_classes;
};

std::string metrics_to_json(const MetricsReport& report, int indent = 2);

}  // namespace falcon
