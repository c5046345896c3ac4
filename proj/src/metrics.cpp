#include "falcon/metrics.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

#include "falcon/errors.hpp"
#include "json.hpp"

namespace falcon {

std::vector<std::size_t> solve_assignment(const DenseMatrix& cost) {
  const std::size_t n = cost.rows();
  if (cost.cols() != n) throw DimensionError("solve_assignment: cost matrix must be square");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is a virtual start.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    owner[0] = row;
    std::size_t col0 = 0;
    std::vector<double> min_to(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[col0] = 1;
      const std::size_t r0 = owner[col0];
      double delta = kInf;
      std::size_t col1 = 0;
      for (std::size_t col = 1; col <= n; ++col) {
        if (used[col]) continue;
        const double cur = cost(r0 - 1, col - 1) - u[r0] - v[col];
        if (cur < min_to[col]) {
          min_to[col] = cur;
          way[col] = col0;
        }
        if (min_to[col] < delta) {
          delta = min_to[col];
          col1 = col;
        }
      }
      for (std::size_t col = 0; col <= n; ++col) {
        if (used[col]) {
          u[owner[col]] += delta;
          v[col] -= delta;
        } else {
          min_to[col] -= delta;
        }
      }
      col0 = col1;
    } while (owner[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      owner[col0] = owner[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<std::size_t> assignment(n, 0);
  for (std::size_t col = 1; col <= n; ++col) {
    if (owner[col] != 0) assignment[owner[col] - 1] = col - 1;
  }
  return assignment;
}

DenseMatrix contingency(std::span<const int> pred, std::span<const int> truth, std::size_t k) {
  if (pred.size() != truth.size()) {
    throw DimensionError("contingency: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " labels");
  }
  DenseMatrix counts(k, k);
  for (std::size_t n = 0; n < pred.size(); ++n) {
    if (pred[n] < 0 || truth[n] < 0 || static_cast<std::size_t>(pred[n]) >= k ||
        static_cast<std::size_t>(truth[n]) >= k) {
      throw DimensionError("contingency: label outside [0," + std::to_string(k) + ") at " +
                           std::to_string(n));
    }
    counts(static_cast<std::size_t>(pred[n]), static_cast<std::size_t>(truth[n])) += 1.0;
  }
  return counts;
}

MatchedAccuracy clustering_accuracy(std::span<const int> pred, std::span<const int> truth,
                                    std::size_t k) {
  const DenseMatrix counts = contingency(pred, truth, k);
  DenseMatrix cost(k, k);
  for (std::size_t i = 0; i < counts.size(); ++i) cost.data()[i] = -counts.data()[i];
  MatchedAccuracy out;
  out.permutation = solve_assignment(cost);
  double matched = 0.0;
  for (std::size_t p = 0; p < k; ++p) matched += counts(p, out.permutation[p]);
  out.accuracy = pred.empty() ? 0.0 : matched / static_cast<double>(pred.size());
  return out;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw DimensionError("adjusted_rand_index: length mismatch");
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto pairs = [](double c) { return c * (c - 1.0) / 2.0; };
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [key, c] : joint) index += pairs(c);
  for (const auto& [key, c] : rows) sum_a += pairs(c);
  for (const auto& [key, c] : cols) sum_b += pairs(c);
  const double expected = sum_a * sum_b / pairs(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // e.g. both all-singletons or both one cluster
  return (index - expected) / (max_index - expected);
}

MacroAccuracy macro_accuracy(std::span<const int> pred, std::span<const int> truth,
                             std::span<const std::size_t> permutation) {
  if (pred.size() != truth.size()) throw DimensionError("macro_accuracy: length mismatch");
  const std::size_t k = permutation.size();
  std::vector<double> hits(k, 0.0), totals(k, 0.0);
  for (std::size_t n = 0; n < pred.size(); ++n) {
    if (pred[n] < 0 || truth[n] < 0 || static_cast<std::size_t>(pred[n]) >= k ||
        static_cast<std::size_t>(truth[n]) >= k) {
      throw DimensionError("macro_accuracy: label outside the permutation range");
    }
    const std::size_t t = static_cast<std::size_t>(truth[n]);
    totals[t] += 1.0;
    if (permutation[static_cast<std::size_t>(pred[n])] == t) hits[t] += 1.0;
  }
  MacroAccuracy out;
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t t = 0; t < k; ++t) {
    if (totals[t] == 0.0) {
      out.excluded.push_back(t);
      continue;
    }
    sum += hits[t] / totals[t];
    ++present;
  }
  out.value = present ? sum / static_cast<double>(present) : 0.0;
  return out;
}

std::string metrics_to_json(const MetricsReport& report, int indent) {
  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["ari"] = report.ari;
  j["macro_accuracy"] = report.macro_accuracy;
  j["ged"] = report.ged;
  j["matched_permutation"] = report.matched_permutation;
  j["excluded_classes"] = report.excluded_classes;
  return j.dump(indent);
}

}  // namespace falcon
