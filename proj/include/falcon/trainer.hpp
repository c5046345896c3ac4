#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "falcon/datagen.hpp"
#include "falcon/dense.hpp"
#include "falcon/losses.hpp"
#include "falcon/nncore.hpp"
#include "falcon/relations.hpp"

namespace falcon {

// Exactly `neighbors` nearest samples (Euclidean, ties by index) sharing the
// sample's group, excluding the sample itself.
struct NeighborIndex {
  std::size_t neighbors = 0;
  std::vector<std::size_t> indices;  // sample n owns [n*L, (n+1)*L)

  std::size_t size() const { return neighbors ? indices.size() / neighbors : 0; }
  std::span<const std::size_t> of(std::size_t n) const {
    return {indices.data() + n * neighbors, neighbors};
  }
};

// Throws std::invalid_argument naming the first group with <= L members.
NeighborIndex build_neighbor_index(const DenseMatrix& features, std::span<const int> groups,
                                   std::size_t neighbors);

// Largest L the datasets support: smallest (dataset, coarse class) group size minus one.
std::size_t max_supported_neighbors(std::span<const Dataset> datasets);

struct TrainRunConfig {
  std::size_t k_f = 0;
  std::size_t epochs = 60;
  std::size_t batch_size = 256;
  std::size_t gather_subset_multiplier = 20;
  std::uint64_t seed = 0;
  std::size_t depth = 4;   // linear layers
  std::size_t width = 64;  // hidden units
  // Ablations. Without the coarse term the confidence term is dropped as well,
  // since its target depends on the relation matrix.
  bool enable_coarse = true;
  bool enable_fine = true;
  bool enable_reg = true;
  OptimizerConfig optimizer;
  LossWeights loss;
  SolverOptions solver() const { return {loss.lambda_m, 10'000'000, solver_time_budget}; }
  std::chrono::milliseconds solver_time_budget{30'000};

  void validate() const;
  LossSwitches switches() const;
};

struct LossTrace {
  std::vector<double> coarse;
  std::vector<double> fine;
  std::vector<double> reg;
  std::vector<double> total;
};

struct RelationSnapshot {
  std::size_t iteration = 0;  // 0 for the initial solve
  std::vector<RelationMatrix> relations;
};

struct TrainReport {
  TrainRunConfig config;
  std::size_t iterations_per_epoch = 0;
  std::size_t iterations = 0;
  LossTrace trace;  // one entry per iteration
  std::vector<RelationSnapshot> relation_history;
  ClassifierState state;
  std::vector<RelationMatrix> relations;  // final, one per dataset
};

// Alternating optimization over one or more coarsely labeled datasets sharing
// the fine classes: SGD on the classifier objective every iteration, EMA
// update of the teacher, and every `update_period` iterations an exact
// re-solve of each dataset's relation matrix from current predictions.
class Trainer {
 public:
  Trainer(std::vector<Dataset> datasets, TrainRunConfig config);

  // One SGD iteration on the next minibatch (relations re-solved when due).
  void step();
  void run();
  void resolve_relations();

  bool finished() const { return iteration_ >= total_iterations_; }
  std::size_t iteration() const { return iteration_; }
  std::size_t iterations_per_epoch() const { return iterations_per_epoch_; }

  ClassifierState& state() { return state_; }
  const ClassifierState& state() const { return state_; }
  const std::vector<RelationMatrix>& relations() const { return relations_; }
  void set_relations(std::vector<RelationMatrix> relations);
  const NeighborIndex& neighbor_index() const { return neighbors_; }

  TrainReport report() const;

 private:
  void start_epoch();

  std::vector<Dataset> datasets_;
  TrainRunConfig config_;
  DenseMatrix features_;
  std::vector<int> coarse_;
  std::vector<int> origin_;
  std::vector<std::size_t> offsets_;  // first combined row of each dataset
  NeighborIndex neighbors_;
  ClassifierState state_;
  std::vector<RelationMatrix> relations_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::size_t iteration_ = 0;
  std::size_t iterations_per_epoch_ = 0;
  std::size_t total_iterations_ = 0;
  LossTrace trace_;
  std::vector<RelationSnapshot> history_;
};

TrainReport train_single(const Dataset& data, const TrainRunConfig& config);
TrainReport train_multi(const std::vector<Dataset>& datasets, const TrainRunConfig& config);

// Argmax of the classifier's fine predictions.
std::vector<int> predict_fine(const ClassifierState& state, const DenseMatrix& features,
                              Branch which = Branch::current);

std::string config_to_json(const TrainRunConfig& config, int indent = 2);
std::string report_to_json(const TrainReport& report, int indent = 2);

}  // namespace falcon
