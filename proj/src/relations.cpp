#include "falcon/relations.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "falcon/errors.hpp"
#include "text.hpp"

namespace falcon {

RelationMatrix::RelationMatrix(std::vector<int> parents, std::size_t k_c)
    : parents_(std::move(parents)), k_c_(k_c) {
  for (std::size_t i = 0; i < parents_.size(); ++i) {
    if (parents_[i] < 0 || static_cast<std::size_t>(parents_[i]) >= k_c_) {
      throw InfeasibleError("RelationMatrix: fine class " + std::to_string(i) +
                            " has parent " + std::to_string(parents_[i]) + " outside [0," +
                            std::to_string(k_c_) + ")");
    }
  }
}

RelationMatrix RelationMatrix::from_dense(const DenseMatrix& m) {
  std::vector<int> parents(m.rows(), -1);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    int ones = 0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      if (v == 1.0) {
        ++ones;
        parents[i] = static_cast<int>(j);
      } else if (v != 0.0) {
        throw InfeasibleError("RelationMatrix: entry (" + std::to_string(i) + "," +
                              std::to_string(j) + ") is not binary");
      }
    }
    if (ones != 1) {
      throw InfeasibleError("RelationMatrix: row " + std::to_string(i) + " sums to " +
                            std::to_string(ones));
    }
  }
  return RelationMatrix(std::move(parents), m.cols());
}

std::vector<std::size_t> RelationMatrix::column_sums() const {
  std::vector<std::size_t> sums(k_c_, 0);
  for (int p : parents_) ++sums[static_cast<std::size_t>(p)];
  return sums;
}

std::vector<std::size_t> RelationMatrix::children(std::size_t coarse) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < parents_.size(); ++i) {
    if (parents_[i] == static_cast<int>(coarse)) out.push_back(i);
  }
  return out;
}

bool RelationMatrix::feasible() const {
  if (k_c_ == 0 || parents_.size() < k_c_) return false;
  const auto sums = column_sums();
  return std::all_of(sums.begin(), sums.end(), [](std::size_t s) { return s >= 1; });
}

void RelationMatrix::validate() const {
  if (k_c_ == 0) throw InfeasibleError("RelationMatrix: no coarse classes");
  const auto sums = column_sums();
  for (std::size_t j = 0; j < sums.size(); ++j) {
    if (sums[j] == 0) {
      throw InfeasibleError("RelationMatrix: coarse class " + std::to_string(j) +
                            " has no fine class");
    }
  }
}

DenseMatrix RelationMatrix::to_dense() const {
  DenseMatrix m(parents_.size(), k_c_);
  for (std::size_t i = 0; i < parents_.size(); ++i) m(i, static_cast<std::size_t>(parents_[i])) = 1.0;
  return m;
}

CostMatrix build_cost_matrix(const DenseMatrix& probs, std::span<const int> coarse_labels,
                             std::size_t k_c) {
  if (probs.rows() != coarse_labels.size()) {
    throw DimensionError("build_cost_matrix: " + std::to_string(probs.rows()) +
                         " prediction rows but " + std::to_string(coarse_labels.size()) +
                         " labels");
  }
  CostMatrix cost{DenseMatrix(k_c, probs.cols()), static_cast<double>(probs.rows())};
  for (std::size_t n = 0; n < probs.rows(); ++n) {
    const int y = coarse_labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= k_c) {
      throw DimensionError("build_cost_matrix: label " + std::to_string(y) + " at row " +
                           std::to_string(n) + " outside [0," + std::to_string(k_c) + ")");
    }
    auto dst = cost.entries.row(static_cast<std::size_t>(y));
    const auto src = probs.row(n);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  }
  return cost;
}

CostMatrix random_cost_matrix(std::size_t k_c, std::size_t k_f, Rng& rng) {
  CostMatrix cost{DenseMatrix(k_c, k_f), 1.0};
  for (double& v : cost.entries.data()) v = rng.uniform();
  return cost;
}

namespace {

void check_shapes(const RelationMatrix& m, const CostMatrix& cost) {
  if (m.k_f() != cost.k_f() || m.k_c() != cost.k_c()) {
    throw DimensionError("relation matrix " + std::to_string(m.k_f()) + "x" +
                         std::to_string(m.k_c()) + " does not match cost matrix " +
                         std::to_string(cost.k_c()) + "x" + std::to_string(cost.k_f()));
  }
}

double linear_from_parents(std::span<const int> parents, const CostMatrix& cost) {
  double acc = 0.0;
  for (std::size_t i = 0; i < parents.size(); ++i) {
    acc += cost.entries(static_cast<std::size_t>(parents[i]), i);
  }
  return -acc / cost.sample_count;
}

double balance_from_sums(std::span<const std::size_t> sums, std::size_t k_f) {
  const double kc = static_cast<double>(sums.size());
  const double kf = static_cast<double>(k_f);
  double sq = 0.0;
  for (std::size_t s : sums) sq += static_cast<double>(s) * static_cast<double>(s);
  return sq / kc - (kf * kf) / (kc * kc);
}

void check_problem(const CostMatrix& cost, const SolverOptions& options) {
  if (cost.k_c() == 0) throw InfeasibleError("relation solver: no coarse classes");
  if (cost.k_f() < cost.k_c()) {
    throw InfeasibleError("relation solver: K_F=" + std::to_string(cost.k_f()) +
                          " < K_C=" + std::to_string(cost.k_c()) +
                          " leaves some coarse class without a fine class");
  }
  if (!(cost.sample_count > 0.0)) throw std::invalid_argument("relation solver: sample count must be positive");
  if (!(options.lambda_m >= 0.0)) throw std::invalid_argument("relation solver: lambda_m must be >= 0");
  if (!cost.entries.all_finite()) throw NumericError("relation solver: non-finite cost entries");
}

}  // namespace

double linear_objective(const RelationMatrix& m, const CostMatrix& cost) {
  check_shapes(m, cost);
  return linear_from_parents(m.parents(), cost);
}

double balance_penalty(const RelationMatrix& m) {
  const auto sums = m.column_sums();
  return balance_from_sums(sums, m.k_f());
}

RelationObjective evaluate_objective(const RelationMatrix& m, const CostMatrix& cost,
                                     double lambda_m) {
  RelationObjective obj;
  obj.linear = linear_objective(m, cost);
  obj.balance = balance_penalty(m);
  obj.total = obj.linear + lambda_m * obj.balance;
  return obj;
}

RelationSolution solve_relations_bruteforce(const CostMatrix& cost, const SolverOptions& options) {
  check_problem(cost, options);
  const std::size_t k_f = cost.k_f();
  const std::size_t k_c = cost.k_c();

  double states = 1.0;
  for (std::size_t i = 0; i < k_f; ++i) states *= static_cast<double>(k_c);
  if (states > static_cast<double>(options.enumeration_budget)) {
    throw BudgetError("solve_relations_bruteforce: " + std::to_string(k_c) + "^" +
                      std::to_string(k_f) + " states exceed the enumeration budget of " +
                      std::to_string(options.enumeration_budget));
  }

  std::vector<int> parents(k_f, 0);
  std::vector<std::size_t> sums(k_c, 0);
  sums[0] = k_f;
  std::vector<int> best;
  double best_total = std::numeric_limits<double>::infinity();
  constexpr double kTieTolerance = 1e-12;

  while (true) {
    if (std::all_of(sums.begin(), sums.end(), [](std::size_t s) { return s > 0; })) {
      const double total =
          linear_from_parents(parents, cost) + options.lambda_m * balance_from_sums(sums, k_f);
      if (best.empty() || total < best_total - kTieTolerance) {
        best_total = total;
        best = parents;
      }
    }
    // Odometer with the last fine class varying fastest: lexicographic order.
    std::size_t pos = k_f;
    while (pos > 0) {
      --pos;
      --sums[static_cast<std::size_t>(parents[pos])];
      if (static_cast<std::size_t>(parents[pos]) + 1 < k_c) {
        ++parents[pos];
        ++sums[static_cast<std::size_t>(parents[pos])];
        break;
      }
      parents[pos] = 0;
      ++sums[0];
      if (pos == 0) {
        pos = k_f + 1;  // wrapped around
        break;
      }
    }
    if (pos == k_f + 1) break;
  }

  RelationMatrix m(std::move(best), k_c);
  return {m, evaluate_objective(m, cost, options.lambda_m)};
}

RelationSolution solve_relations_exact(const CostMatrix& cost, const SolverOptions& options) {
  check_problem(cost, options);
  const auto deadline = std::chrono::steady_clock::now() + options.time_budget;
  const std::size_t k_f = cost.k_f();
  const std::size_t k_c = cost.k_c();
  const double unit = options.lambda_m / static_cast<double>(k_c);
  const std::size_t extra_capacity = k_f - k_c;

  // Node layout: source, fine classes, coarse classes, overflow hub, sink.
  const std::size_t source = 0;
  const std::size_t fine0 = 1;
  const std::size_t coarse0 = fine0 + k_f;
  const std::size_t hub = coarse0 + k_c;
  const std::size_t sink = hub + 1;
  const std::size_t nodes = sink + 1;
  constexpr double kInf = std::numeric_limits<double>::infinity();

  auto arc_cost = [&](std::size_t i, std::size_t j) {
    return -cost.entries(j, i) / cost.sample_count;
  };

  std::vector<int> assign(k_f, -1);
  std::vector<char> mandatory(k_c, 0);
  std::vector<std::size_t> extra(k_c, 0);
  std::size_t extra_total = 0;

  // Exact shortest distances of the empty-flow network serve as potentials.
  std::vector<double> potential(nodes, 0.0);
  double best_coarse = kInf;
  for (std::size_t j = 0; j < k_c; ++j) {
    double d = kInf;
    for (std::size_t i = 0; i < k_f; ++i) d = std::min(d, arc_cost(i, j));
    potential[coarse0 + j] = d;
    best_coarse = std::min(best_coarse, d);
  }
  potential[hub] = best_coarse + 3.0 * unit;
  potential[sink] = extra_capacity > 0 ? std::min(best_coarse, potential[hub]) : best_coarse;

  std::vector<double> dist(nodes);
  std::vector<std::size_t> prev(nodes);
  std::vector<char> done(nodes);

  for (std::size_t flow = 0; flow < k_f; ++flow) {
    if (std::chrono::steady_clock::now() > deadline) {
      throw BudgetError("solve_relations_exact: time budget exceeded");
    }
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(done.begin(), done.end(), 0);
    dist[source] = 0.0;

    // Finalized nodes stay final; round-off can make a reduced cost slightly negative.
    auto relax = [&](std::size_t u, std::size_t v, double c) {
      if (done[v]) return;
      const double nd = dist[u] + c + potential[u] - potential[v];
      if (nd < dist[v]) {
        dist[v] = nd;
        prev[v] = u;
      }
    };

    while (true) {
      std::size_t u = nodes;
      for (std::size_t v = 0; v < nodes; ++v) {
        if (!done[v] && dist[v] < kInf && (u == nodes || dist[v] < dist[u])) u = v;
      }
      if (u == nodes) break;
      done[u] = 1;
      if (u == source) {
        for (std::size_t i = 0; i < k_f; ++i) {
          if (assign[i] < 0) relax(u, fine0 + i, 0.0);
        }
      } else if (u < coarse0) {
        const std::size_t i = u - fine0;
        for (std::size_t j = 0; j < k_c; ++j) {
          if (assign[i] != static_cast<int>(j)) relax(u, coarse0 + j, arc_cost(i, j));
        }
      } else if (u < hub) {
        const std::size_t j = u - coarse0;
        if (!mandatory[j]) relax(u, sink, 0.0);
        if (extra[j] < extra_capacity) relax(u, hub, unit * static_cast<double>(2 * extra[j] + 3));
        for (std::size_t i = 0; i < k_f; ++i) {
          if (assign[i] == static_cast<int>(j)) relax(u, fine0 + i, -arc_cost(i, j));
        }
      } else if (u == hub) {
        if (extra_total < extra_capacity) relax(u, sink, 0.0);
        for (std::size_t j = 0; j < k_c; ++j) {
          if (extra[j] > 0) relax(u, coarse0 + j, -unit * static_cast<double>(2 * extra[j] + 1));
        }
      }
    }
    if (!(dist[sink] < kInf)) {
      throw InfeasibleError("solve_relations_exact: no augmenting path");
    }

    // Walk the path sink -> source and apply each arc.
    std::size_t v = sink;
    for (std::size_t hops = 0; v != source; ++hops) {
      if (hops > nodes) throw NumericError("solve_relations_exact: augmenting path has a cycle");
      const std::size_t u = prev[v];
      if (u >= fine0 && u < coarse0 && v >= coarse0 && v < hub) {
        assign[u - fine0] = static_cast<int>(v - coarse0);
      } else if (u >= coarse0 && u < hub && v == sink) {
        mandatory[u - coarse0] = 1;
      } else if (u >= coarse0 && u < hub && v == hub) {
        ++extra[u - coarse0];
        ++extra_total;
      } else if (u == hub && v >= coarse0 && v < hub) {
        --extra[v - coarse0];
        --extra_total;
      }
      // source->fine, coarse->fine and hub->sink carry no state of their own:
      // the fine node's next arc reassigns it and extra_total is the hub outflow.
      v = u;
    }

    for (std::size_t n = 0; n < nodes; ++n) {
      potential[n] += std::min(dist[n], dist[sink]);
    }
  }

  RelationMatrix m(std::move(assign), k_c);
  m.validate();
  return {m, evaluate_objective(m, cost, options.lambda_m)};
}

std::size_t graph_edit_distance(const RelationMatrix& a, const RelationMatrix& b) {
  if (a.k_f() != b.k_f() || a.k_c() != b.k_c()) {
    throw DimensionError("graph_edit_distance: relation graphs have different node sets");
  }
  std::size_t moved = 0;
  for (std::size_t i = 0; i < a.k_f(); ++i) {
    if (a.parent(i) != b.parent(i)) ++moved;
  }
  return 2 * moved;
}

RelationMatrix permute_fine(const RelationMatrix& m, std::span<const std::size_t> permutation) {
  if (permutation.size() != m.k_f()) throw DimensionError("permute_fine: permutation size mismatch");
  std::vector<int> parents(m.k_f(), -1);
  for (std::size_t i = 0; i < m.k_f(); ++i) {
    if (permutation[i] >= m.k_f() || parents[permutation[i]] != -1) {
      throw std::invalid_argument("permute_fine: not a permutation");
    }
    parents[permutation[i]] = m.parent(i);
  }
  return RelationMatrix(std::move(parents), m.k_c());
}

void write_relations(std::ostream& out, const RelationMatrix& m) {
  out << m.k_f() << ' ' << m.k_c() << '\n';
  for (int p : m.parents()) out << p << '\n';
}

RelationMatrix read_relations(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw ParseError(source + ":" + std::to_string(line_no) + ": " + what);
  };
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!text::trim(line).empty()) return true;
    }
    return false;
  };

  if (!next_line()) fail("missing 'K_F K_C' header");
  std::istringstream header(line);
  long long k_f = -1, k_c = -1;
  std::string rest;
  if (!(header >> k_f >> k_c) || (header >> rest) || k_f <= 0 || k_c <= 0) {
    fail("header must be two positive integers 'K_F K_C'");
  }
  std::vector<int> parents;
  parents.reserve(static_cast<std::size_t>(k_f));
  for (long long i = 0; i < k_f; ++i) {
    if (!next_line()) fail("expected " + std::to_string(k_f) + " rows, found " + std::to_string(i));
    const auto v = text::parse_int(line);
    if (!v || *v < 0 || *v >= k_c) fail("coarse index must be an integer in [0," + std::to_string(k_c) + ")");
    parents.push_back(static_cast<int>(*v));
  }
  if (next_line()) fail("unexpected trailing content");
  return RelationMatrix(std::move(parents), static_cast<std::size_t>(k_c));
}

void save_relations(const std::string& path, const RelationMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_relations(out, m);
  if (!out) throw std::runtime_error("failed writing " + path);
}

RelationMatrix load_relations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_relations(in, path);
}

void write_cost_csv(std::ostream& out, const CostMatrix& cost) {
  for (std::size_t j = 0; j < cost.k_c(); ++j) {
    for (std::size_t i = 0; i < cost.k_f(); ++i) {
      if (i) out << ',';
      out << text::format_double(cost.entries(j, i));
    }
    out << '\n';
  }
}

CostMatrix read_cost_csv(std::istream& in, const std::string& source) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    std::vector<double> row;
    const auto cells = text::split(line, ',');
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto v = text::parse_double(cells[c]);
      if (!v || !std::isfinite(*v) || *v < 0.0) {
        throw ParseError(source + ":" + std::to_string(line_no) + ": column " +
                         std::to_string(c) + " is not a nonnegative number");
      }
      row.push_back(*v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(rows.front().size()) + " columns, found " +
                       std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(source + ": empty cost matrix");
  CostMatrix cost{DenseMatrix::from_rows(rows), 0.0};
  for (double v : cost.entries.data()) cost.sample_count += v;
  return cost;
}

}  // namespace falcon
