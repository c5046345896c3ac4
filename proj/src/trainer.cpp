#include "falcon/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>

#include "falcon/errors.hpp"
#include "json.hpp"

namespace falcon {

NeighborIndex build_neighbor_index(const DenseMatrix& features, std::span<const int> groups,
                                   std::size_t neighbors) {
  if (groups.size() != features.rows()) {
    throw DimensionError("build_neighbor_index: group count differs from sample count");
  }
  if (neighbors == 0) throw std::invalid_argument("build_neighbor_index: L must be positive");

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t n = 0; n < groups.size(); ++n) members[groups[n]].push_back(n);
  for (const auto& [group, rows] : members) {
    if (rows.size() <= neighbors) {
      throw std::invalid_argument("build_neighbor_index: coarse class " + std::to_string(group) +
                                  " has " + std::to_string(rows.size()) +
                                  " samples, need more than L=" + std::to_string(neighbors));
    }
  }

  NeighborIndex index;
  index.neighbors = neighbors;
  index.indices.assign(features.rows() * neighbors, 0);
  std::vector<std::pair<double, std::size_t>> candidates;
  for (const auto& [group, rows] : members) {
    for (std::size_t a : rows) {
      candidates.clear();
      const auto xa = features.row(a);
      for (std::size_t b : rows) {
        if (b == a) continue;
        const auto xb = features.row(b);
        double d2 = 0.0;
        for (std::size_t k = 0; k < xa.size(); ++k) {
          const double diff = xa[k] - xb[k];
          d2 += diff * diff;
        }
        candidates.emplace_back(d2, b);
      }
      std::partial_sort(candidates.begin(),
                        candidates.begin() + static_cast<std::ptrdiff_t>(neighbors),
                        candidates.end());
      for (std::size_t k = 0; k < neighbors; ++k) {
        index.indices[a * neighbors + k] = candidates[k].second;
      }
    }
  }
  return index;
}

std::size_t max_supported_neighbors(std::span<const Dataset> datasets) {
  std::size_t smallest = std::numeric_limits<std::size_t>::max();
  for (const auto& d : datasets) {
    std::vector<std::size_t> counts(d.k_c, 0);
    for (int y : d.coarse) ++counts[static_cast<std::size_t>(y)];
    for (std::size_t c : counts) smallest = std::min(smallest, c);
  }
  if (smallest == std::numeric_limits<std::size_t>::max() || smallest == 0) return 0;
  return smallest - 1;
}

void TrainRunConfig::validate() const {
  if (k_f == 0) throw std::invalid_argument("train config: K_F must be positive");
  if (batch_size == 0) throw std::invalid_argument("train config: batch size must be positive");
  if (gather_subset_multiplier == 0) {
    throw std::invalid_argument("train config: gather subset multiplier must be positive");
  }
  if (depth == 0 || width == 0) throw std::invalid_argument("train config: depth and width must be positive");
  optimizer.validate();
  loss.validate();
}

LossSwitches TrainRunConfig::switches() const {
  return {enable_coarse, enable_fine, enable_coarse && enable_fine, enable_reg};
}

namespace {

constexpr std::uint64_t kStreamOffset = 0x632BE59BD9B4E019ULL;

DenseMatrix concat_features(const std::vector<Dataset>& datasets) {
  std::size_t rows = 0;
  for (const auto& d : datasets) rows += d.size();
  DenseMatrix out(rows, datasets.front().dim());
  std::size_t r = 0;
  for (const auto& d : datasets) {
    std::copy(d.features.data().begin(), d.features.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(r * out.cols()));
    r += d.size();
  }
  return out;
}

}  // namespace

Trainer::Trainer(std::vector<Dataset> datasets, TrainRunConfig config)
    : datasets_(std::move(datasets)), config_(std::move(config)), rng_(config_.seed + kStreamOffset) {
  config_.validate();
  if (datasets_.empty()) throw std::invalid_argument("trainer: no datasets");
  const std::size_t dim = datasets_.front().dim();
  for (std::size_t l = 0; l < datasets_.size(); ++l) {
    Dataset& d = datasets_[l];
    d.validate();
    if (d.dim() != dim) {
      throw DimensionError("trainer: dataset " + std::to_string(l) + " has " +
                           std::to_string(d.dim()) + " features, expected " + std::to_string(dim));
    }
    if (d.size() == 0) throw std::invalid_argument("trainer: dataset " + std::to_string(l) + " is empty");
    if (config_.k_f < d.k_c) {
      throw InfeasibleError("trainer: K_F=" + std::to_string(config_.k_f) + " < K_C=" +
                            std::to_string(d.k_c) + " for dataset " + std::to_string(l));
    }
    d.index = static_cast<int>(l);
  }

  features_ = concat_features(datasets_);
  std::vector<int> groups;
  int group_offset = 0;
  for (std::size_t l = 0; l < datasets_.size(); ++l) {
    const Dataset& d = datasets_[l];
    offsets_.push_back(coarse_.size());
    for (int y : d.coarse) {
      coarse_.push_back(y);
      origin_.push_back(static_cast<int>(l));
      groups.push_back(group_offset + y);
    }
    group_offset += static_cast<int>(d.k_c);
  }
  neighbors_ = build_neighbor_index(features_, groups, config_.loss.neighbors);

  state_ = ClassifierState::create(
      MlpArchitecture::standard(dim, config_.k_f, config_.depth, config_.width), config_.seed);

  for (const Dataset& d : datasets_) {
    const CostMatrix cost = random_cost_matrix(d.k_c, config_.k_f, rng_);
    relations_.push_back(solve_relations_exact(cost, config_.solver()).relations);
  }
  history_.push_back({0, relations_});

  const std::size_t n = coarse_.size();
  iterations_per_epoch_ = (n + config_.batch_size - 1) / config_.batch_size;
  total_iterations_ = iterations_per_epoch_ * config_.epochs;
  order_.resize(n);
  cursor_ = n;  // forces a shuffle on the first step
}

void Trainer::set_relations(std::vector<RelationMatrix> relations) {
  if (relations.size() != datasets_.size()) {
    throw DimensionError("trainer: expected one relation matrix per dataset");
  }
  for (std::size_t l = 0; l < relations.size(); ++l) {
    if (relations[l].k_f() != config_.k_f || relations[l].k_c() != datasets_[l].k_c) {
      throw DimensionError("trainer: relation matrix " + std::to_string(l) + " has the wrong shape");
    }
    relations[l].validate();
  }
  relations_ = std::move(relations);
}

void Trainer::start_epoch() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  rng_.shuffle(order_);
  cursor_ = 0;
}

void Trainer::step() {
  if (cursor_ >= order_.size()) start_epoch();
  epoch_ = iteration_ / iterations_per_epoch_;
  const std::size_t end = std::min(order_.size(), cursor_ + config_.batch_size);
  const std::span<const std::size_t> batch(order_.data() + cursor_, end - cursor_);
  cursor_ = end;

  const DenseMatrix x = gather_rows(features_, batch);
  std::vector<int> labels, origin;
  labels.reserve(batch.size());
  origin.reserve(batch.size());
  for (std::size_t r : batch) {
    labels.push_back(coarse_[r]);
    origin.push_back(origin_[r]);
  }

  const ForwardTrace trace = forward(state_.theta, x);
  const DenseMatrix ema_logits = forward_logits(state_.theta_ema, x);
  const DenseMatrix mask = sibling_mask(relations_, labels, origin);
  const DenseMatrix q = target_q_rows(ema_logits, mask, config_.loss.temperature);

  // EMA predictions for the neighbors, evaluated once per distinct sample.
  const std::size_t L = neighbors_.neighbors;
  std::vector<std::size_t> wanted;
  wanted.reserve(batch.size() * L);
  for (std::size_t r : batch) {
    const auto nb = neighbors_.of(r);
    wanted.insert(wanted.end(), nb.begin(), nb.end());
  }
  std::vector<std::size_t> unique = wanted;
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  const DenseMatrix unique_probs =
      softmax_rows(forward_logits(state_.theta_ema, gather_rows(features_, unique)), 1.0);
  DenseMatrix neighbor_probs(wanted.size(), config_.k_f);
  for (std::size_t k = 0; k < wanted.size(); ++k) {
    const auto pos = static_cast<std::size_t>(
        std::lower_bound(unique.begin(), unique.end(), wanted[k]) - unique.begin());
    std::copy_n(unique_probs.row(pos).begin(), config_.k_f, neighbor_probs.row(k).begin());
  }

  const LossBreakdown loss =
      total_loss({trace.logits, mask, q, neighbor_probs, L}, config_.loss, config_.switches());
  if (!std::isfinite(loss.total)) {
    throw NumericError("training diverged at iteration " + std::to_string(iteration_ + 1) +
                       " (epoch " + std::to_string(epoch_) + "): total loss " +
                       std::to_string(loss.total) + ", coarse " + std::to_string(loss.coarse) +
                       ", fine " + std::to_string(loss.fine) + ", reg " + std::to_string(loss.reg));
  }
  trace_.coarse.push_back(loss.coarse);
  trace_.fine.push_back(loss.fine);
  trace_.reg.push_back(loss.reg);
  trace_.total.push_back(loss.total);

  const MlpParams grads = backward(state_.theta, trace, loss.grad_logits);
  sgd_step(state_, grads, config_.optimizer, epoch_);
  ema_update(state_, config_.loss.gamma);
  if (!state_.theta.all_finite()) {
    throw NumericError("training diverged at iteration " + std::to_string(iteration_ + 1) +
                       ": non-finite parameters");
  }

  ++iteration_;
  if (iteration_ % config_.loss.update_period == 0) {
    resolve_relations();
    history_.push_back({iteration_, relations_});
  }
}

void Trainer::run() {
  while (!finished()) step();
}

void Trainer::resolve_relations() {
  const std::size_t subset_cap = config_.gather_subset_multiplier * config_.batch_size;
  std::vector<CostMatrix> costs;
  for (std::size_t l = 0; l < datasets_.size(); ++l) {
    const Dataset& d = datasets_[l];
    std::vector<std::size_t> rows(d.size());
    std::iota(rows.begin(), rows.end(), offsets_[l]);
    rng_.shuffle(rows);
    rows.resize(std::min(rows.size(), subset_cap));
    const DenseMatrix probs = softmax_rows(forward_logits(state_.theta, gather_rows(features_, rows)), 1.0);
    std::vector<int> labels;
    labels.reserve(rows.size());
    for (std::size_t r : rows) labels.push_back(coarse_[r]);
    costs.push_back(build_cost_matrix(probs, labels, d.k_c));
  }

  const SolverOptions options = config_.solver();
  std::vector<RelationMatrix> solved;
  if (costs.size() == 1) {
    solved.push_back(solve_relations_exact(costs.front(), options).relations);
  } else {
    std::vector<std::future<RelationSolution>> jobs;
    for (const auto& c : costs) {
      jobs.push_back(std::async(std::launch::async,
                                [&c, &options] { return solve_relations_exact(c, options); }));
    }
    for (auto& j : jobs) solved.push_back(j.get().relations);
  }
  relations_ = std::move(solved);
}

TrainReport Trainer::report() const {
  TrainReport r;
  r.config = config_;
  r.iterations_per_epoch = iterations_per_epoch_;
  r.iterations = iteration_;
  r.trace = trace_;
  r.relation_history = history_;
  r.state = state_;
  r.relations = relations_;
  return r;
}

TrainReport train_single(const Dataset& data, const TrainRunConfig& config) {
  return train_multi({data}, config);
}

TrainReport train_multi(const std::vector<Dataset>& datasets, const TrainRunConfig& config) {
  Trainer trainer(datasets, config);
  trainer.run();
  return trainer.report();
}

std::vector<int> predict_fine(const ClassifierState& state, const DenseMatrix& features,
                              Branch which) {
  const DenseMatrix logits = forward_logits(state, which, features);
  std::vector<int> out(logits.rows());
  for (std::size_t n = 0; n < logits.rows(); ++n) out[n] = static_cast<int>(argmax(logits.row(n)));
  return out;
}

namespace {

nlohmann::ordered_json config_json(const TrainRunConfig& c) {
  nlohmann::ordered_json j;
  j["k_f"] = c.k_f;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["gather_subset_multiplier"] = c.gather_subset_multiplier;
  j["seed"] = c.seed;
  j["depth"] = c.depth;
  j["width"] = c.width;
  j["enable_coarse"] = c.enable_coarse;
  j["enable_fine"] = c.enable_fine;
  j["enable_reg"] = c.enable_reg;
  j["optimizer"] = {{"learning_rate", c.optimizer.learning_rate},
                    {"momentum", c.optimizer.momentum},
                    {"milestones", c.optimizer.milestones},
                    {"decay", c.optimizer.decay}};
  j["loss"] = {{"lambda1", c.loss.lambda1},         {"lambda2", c.loss.lambda2},
               {"lambda3", c.loss.lambda3},         {"lambda_m", c.loss.lambda_m},
               {"temperature", c.loss.temperature}, {"ema_gamma", c.loss.gamma},
               {"neighbors", c.loss.neighbors},     {"update_period", c.loss.update_period}};
  j["solver_time_budget_ms"] = c.solver_time_budget.count();
  return j;
}

}  // namespace

std::string config_to_json(const TrainRunConfig& config, int indent) {
  return config_json(config).dump(indent);
}

std::string report_to_json(const TrainReport& report, int indent) {
  nlohmann::ordered_json j;
  j["config"] = config_json(report.config);
  j["iterations_per_epoch"] = report.iterations_per_epoch;
  j["iterations"] = report.iterations;

  std::vector<double> epoch_total;
  const std::size_t ipe = std::max<std::size_t>(1, report.iterations_per_epoch);
  for (std::size_t start = 0; start < report.trace.total.size(); start += ipe) {
    const std::size_t end = std::min(report.trace.total.size(), start + ipe);
    double acc = 0.0;
    for (std::size_t k = start; k < end; ++k) acc += report.trace.total[k];
    epoch_total.push_back(acc / static_cast<double>(end - start));
  }
  j["trace"] = {{"coarse", report.trace.coarse},
                {"fine", report.trace.fine},
                {"reg", report.trace.reg},
                {"total", report.trace.total},
                {"epoch_mean_total", epoch_total}};

  auto relations_json = [](const std::vector<RelationMatrix>& rs) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& m : rs) {
      arr.push_back({{"k_f", m.k_f()}, {"k_c", m.k_c()}, {"parents", m.parents()}});
    }
    return arr;
  };
  nlohmann::ordered_json history = nlohmann::ordered_json::array();
  for (const auto& snap : report.relation_history) {
    history.push_back({{"iteration", snap.iteration}, {"relations", relations_json(snap.relations)}});
  }
  j["relation_history"] = history;
  j["relations"] = relations_json(report.relations);
  j["state"] = {{"step", report.state.step},
                {"seed", report.state.seed},
                {"parameters", report.state.theta.parameter_count()}};
  return j.dump(indent);
}

}  // namespace falcon
