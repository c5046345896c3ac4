#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "falcon/dense.hpp"
#include "falcon/random.hpp"

namespace falcon {

// Binary K_F x K_C fine-to-coarse relation matrix, stored as the parent of each
// fine class. Rows sum to one by construction; feasible() additionally requires
// every coarse class to have at least one child.
class RelationMatrix {
 public:
  RelationMatrix() = default;
  RelationMatrix(std::vector<int> parents, std::size_t k_c);

  // From a dense 0/1 matrix; throws InfeasibleError unless every row has exactly one 1.
  static RelationMatrix from_dense(const DenseMatrix& m);

  std::size_t k_f() const { return parents_.size(); }
  std::size_t k_c() const { return k_c_; }
  int parent(std::size_t fine) const { return parents_[fine]; }
  const std::vector<int>& parents() const { return parents_; }

  bool operator()(std::size_t fine, std::size_t coarse) const {
    return parents_[fine] == static_cast<int>(coarse);
  }

  std::vector<std::size_t> column_sums() const;
  std::vector<std::size_t> children(std::size_t coarse) const;
  bool feasible() const;
  // Throws InfeasibleError naming the first empty coarse class.
  void validate() const;
  DenseMatrix to_dense() const;

  friend bool operator==(const RelationMatrix&, const RelationMatrix&) = default;

 private:
  std::vector<int> parents_;
  std::size_t k_c_ = 0;
};

// C = Y_oh^T P: entry (j, i) is the summed probability of fine class i over
// samples labeled with coarse class j.
struct CostMatrix {
  DenseMatrix entries;  // K_C x K_F
  double sample_count = 0.0;

  std::size_t k_c() const { return entries.rows(); }
  std::size_t k_f() const { return entries.cols(); }
};

CostMatrix build_cost_matrix(const DenseMatrix& probs, std::span<const int> coarse_labels,
                             std::size_t k_c);

// Uniform [0,1) entries, sample count 1.
CostMatrix random_cost_matrix(std::size_t k_c, std::size_t k_f, Rng& rng);

struct RelationObjective {
  double linear = 0.0;
  double balance = 0.0;
  double total = 0.0;
};

// -(1/N) sum_{i,j} C(j,i) M(i,j)
double linear_objective(const RelationMatrix& m, const CostMatrix& cost);
// (1/K_C) sum_j colsum_j^2 - K_F^2 / K_C^2
double balance_penalty(const RelationMatrix& m);
RelationObjective evaluate_objective(const RelationMatrix& m, const CostMatrix& cost,
                                     double lambda_m);

struct SolverOptions {
  double lambda_m = 0.1;
  std::uint64_t enumeration_budget = 10'000'000;
  std::chrono::milliseconds time_budget{30'000};
};

struct RelationSolution {
  RelationMatrix relations;
  RelationObjective objective;
};

// Enumerates every feasible parent vector in lexicographic order and keeps the
// first one that improves the objective by more than 1e-12, so ties resolve to
// the lexicographically smallest assignment. Refuses with BudgetError when
// K_C^K_F exceeds the enumeration budget.
RelationSolution solve_relations_bruteforce(const CostMatrix& cost, const SolverOptions& options);

// Global minimizer of the linear-plus-balance objective for any K_F >= K_C.
// Solved as a min-cost flow: source -> fine (cap 1) -> coarse (cost -C(j,i)/N)
// -> sink, where each coarse node has one zero-cost unit arc that must saturate
// (the at-least-one-child constraint) and a convex arc for further children
// whose k-th unit costs lambda_m/K_C * (2k+1).
RelationSolution solve_relations_exact(const CostMatrix& cost, const SolverOptions& options);

// Number of edge insertions and deletions turning one bipartite relation graph
// into the other. Node sets coincide, so this is the edge symmetric difference.
std::size_t graph_edit_distance(const RelationMatrix& a, const RelationMatrix& b);

// Relabels fine classes: row i of `m` becomes row permutation[i] of the result.
RelationMatrix permute_fine(const RelationMatrix& m, std::span<const std::size_t> permutation);

// Text format: "K_F K_C" header, then one coarse index per line.
void write_relations(std::ostream& out, const RelationMatrix& m);
RelationMatrix read_relations(std::istream& in, const std::string& source = "<stream>");
void save_relations(const std::string& path, const RelationMatrix& m);
RelationMatrix load_relations(const std::string& path);

// Cost CSV: K_C rows of K_F comma-separated values, no header.
void write_cost_csv(std::ostream& out, const CostMatrix& cost);
CostMatrix read_cost_csv(std::istream& in, const std::string& source = "<stream>");

}  // namespace falcon
