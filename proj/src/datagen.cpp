#include "falcon/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "falcon/errors.hpp"
#include "falcon/random.hpp"
#include "text.hpp"

namespace falcon {

void Dataset::validate() const {
  if (coarse.size() != features.rows()) {
    throw DimensionError("dataset: " + std::to_string(coarse.size()) + " coarse labels for " +
                         std::to_string(features.rows()) + " samples");
  }
  if (k_c == 0) throw DimensionError("dataset: K_C must be positive");
  for (std::size_t n = 0; n < coarse.size(); ++n) {
    if (coarse[n] < 0 || static_cast<std::size_t>(coarse[n]) >= k_c) {
      throw DimensionError("dataset: coarse label " + std::to_string(coarse[n]) + " at row " +
                           std::to_string(n) + " outside [0," + std::to_string(k_c) + ")");
    }
  }
  if (!features.all_finite()) throw NumericError("dataset: non-finite feature values");
  if (!fine) return;
  if (fine->size() != features.rows()) {
    throw DimensionError("dataset: fine label count differs from sample count");
  }
  if (k_f == 0) throw DimensionError("dataset: fine labels present but K_F is 0");
  std::vector<int> parent(k_f, -1);
  for (std::size_t n = 0; n < fine->size(); ++n) {
    const int f = (*fine)[n];
    if (f < 0 || static_cast<std::size_t>(f) >= k_f) {
      throw DimensionError("dataset: fine label " + std::to_string(f) + " at row " +
                           std::to_string(n) + " outside [0," + std::to_string(k_f) + ")");
    }
    int& p = parent[static_cast<std::size_t>(f)];
    if (p == -1) {
      p = coarse[n];
    } else if (p != coarse[n]) {
      throw InfeasibleError("dataset: fine class " + std::to_string(f) +
                            " appears under coarse classes " + std::to_string(p) + " and " +
                            std::to_string(coarse[n]));
    }
  }
}

RelationMatrix Dataset::induced_relations() const {
  if (!fine) throw std::invalid_argument("dataset has no fine labels");
  validate();
  std::vector<int> parent(k_f, -1);
  for (std::size_t n = 0; n < fine->size(); ++n) parent[static_cast<std::size_t>((*fine)[n])] = coarse[n];
  for (std::size_t i = 0; i < k_f; ++i) {
    if (parent[i] < 0) throw InfeasibleError("dataset: fine class " + std::to_string(i) + " has no samples");
  }
  return RelationMatrix(std::move(parent), k_c);
}

TaxonomySpec TaxonomySpec::round_robin(std::size_t k_c, std::size_t k_f) {
  TaxonomySpec spec;
  spec.k_c = k_c;
  spec.k_f = k_f;
  spec.assignment.resize(k_f);
  for (std::size_t i = 0; i < k_f; ++i) spec.assignment[i] = k_c ? static_cast<int>(i % k_c) : 0;
  return spec;
}

void TaxonomySpec::validate() const {
  if (k_c == 0) throw std::invalid_argument("taxonomy: K_C must be positive");
  if (k_f < k_c) {
    throw InfeasibleError("taxonomy: K_F=" + std::to_string(k_f) + " is smaller than K_C=" +
                          std::to_string(k_c) + "; some coarse class would have no fine class");
  }
  if (assignment.size() != k_f) {
    throw std::invalid_argument("taxonomy: assignment has " + std::to_string(assignment.size()) +
                                " entries, expected K_F=" + std::to_string(k_f));
  }
  relations().validate();
  if (!weights.empty()) {
    if (weights.size() != k_f) throw std::invalid_argument("taxonomy: weights must have K_F entries");
    for (double w : weights) {
      if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("taxonomy: weights must be positive");
    }
  }
  if (!(separation >= 0.0 && within_separation >= 0.0 && noise >= 0.0)) {
    throw std::invalid_argument("taxonomy: scales must be nonnegative");
  }
}

RelationMatrix TaxonomySpec::relations() const { return RelationMatrix(assignment, k_c); }

std::vector<double> imbalance_weights(std::size_t k_f, double ratio) {
  if (!(ratio >= 1.0)) throw std::invalid_argument("imbalance ratio must be >= 1");
  std::vector<double> w(k_f, 1.0);
  if (k_f < 2) return w;
  for (std::size_t i = 0; i < k_f; ++i) {
    w[i] = std::pow(ratio, -static_cast<double>(i) / static_cast<double>(k_f - 1));
  }
  return w;
}

std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(n) * weights[i] / total;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  // Largest remainder first, lower index on ties.
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
  return counts;
}

namespace {

std::vector<double> random_direction(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double norm = 0.0;
  while (norm == 0.0) {
    for (double& x : v) x = rng.normal();
    norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  }
  for (double& x : v) x /= norm;
  return v;
}

}  // namespace

Dataset generate(const TaxonomySpec& spec, std::size_t n, std::size_t dim, std::uint64_t seed) {
  spec.validate();
  if (dim < 2) throw std::invalid_argument("generate: dim must be at least 2");
  if (n < spec.k_f) {
    throw std::invalid_argument("generate: N=" + std::to_string(n) +
                                " is smaller than K_F=" + std::to_string(spec.k_f));
  }
  Rng rng(seed);
  std::vector<std::vector<double>> coarse_dir(spec.k_c), fine_dir(spec.k_f);
  for (auto& d : coarse_dir) d = random_direction(dim, rng);
  for (auto& d : fine_dir) d = random_direction(dim, rng);

  const std::vector<double> weights =
      spec.weights.empty() ? std::vector<double>(spec.k_f, 1.0) : spec.weights;
  const auto counts = apportion(n, weights);

  std::vector<int> fine_of;
  fine_of.reserve(n);
  for (std::size_t i = 0; i < spec.k_f; ++i) fine_of.insert(fine_of.end(), counts[i], static_cast<int>(i));
  rng.shuffle(fine_of);

  Dataset data;
  data.features = DenseMatrix(n, dim);
  data.coarse.resize(n);
  data.fine = fine_of;
  data.k_c = spec.k_c;
  data.k_f = spec.k_f;
  for (std::size_t r = 0; r < n; ++r) {
    const auto f = static_cast<std::size_t>(fine_of[r]);
    const auto c = static_cast<std::size_t>(spec.assignment[f]);
    data.coarse[r] = static_cast<int>(c);
    auto row = data.features.row(r);
    for (std::size_t d = 0; d < dim; ++d) {
      row[d] = spec.separation * coarse_dir[c][d] + spec.within_separation * fine_dir[f][d] +
               spec.noise * rng.normal();
    }
  }
  return data;
}

Dataset relabel(const Dataset& data, const TaxonomySpec& alternative) {
  if (!data.fine) throw std::invalid_argument("relabel: dataset has no fine labels");
  alternative.validate();
  Dataset out = data;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const int f = (*data.fine)[n];
    if (f < 0 || static_cast<std::size_t>(f) >= alternative.assignment.size()) {
      throw std::invalid_argument("relabel: fine class " + std::to_string(f) +
                                  " missing from the alternative assignment");
    }
    out.coarse[n] = alternative.assignment[static_cast<std::size_t>(f)];
  }
  out.k_c = alternative.k_c;
  out.k_f = std::max(data.k_f, alternative.k_f);
  return out;
}

Dataset slice(const Dataset& data, std::size_t begin, std::size_t end) {
  if (begin > end || end > data.size()) throw DimensionError("slice: invalid row range");
  std::vector<std::size_t> rows(end - begin);
  std::iota(rows.begin(), rows.end(), begin);
  Dataset out;
  out.features = gather_rows(data.features, rows);
  out.coarse.assign(data.coarse.begin() + static_cast<std::ptrdiff_t>(begin),
                    data.coarse.begin() + static_cast<std::ptrdiff_t>(end));
  if (data.fine) {
    out.fine = std::vector<int>(data.fine->begin() + static_cast<std::ptrdiff_t>(begin),
                                data.fine->begin() + static_cast<std::ptrdiff_t>(end));
  }
  out.index = data.index;
  out.k_c = data.k_c;
  out.k_f = data.k_f;
  return out;
}

std::string to_csv(const Dataset& data) {
  std::string out;
  for (std::size_t d = 0; d < data.dim(); ++d) out += "f" + std::to_string(d) + ",";
  out += "coarse";
  if (data.fine) out += ",fine";
  out += '\n';
  for (std::size_t n = 0; n < data.size(); ++n) {
    for (double v : data.features.row(n)) {
      out += text::format_double(v);
      out += ',';
    }
    out += std::to_string(data.coarse[n]);
    if (data.fine) out += "," + std::to_string((*data.fine)[n]);
    out += '\n';
  }
  return out;
}

void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << to_csv(data);
  if (!out) throw std::runtime_error("failed writing " + path);
}

Dataset parse_csv(const std::string& content, const std::string& source, std::size_t k_c,
                  std::size_t k_f) {
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> void {
    throw ParseError(source + ":" + std::to_string(line_no) + ": " + what);
  };

  if (!std::getline(in, line)) {
    line_no = 1;
    fail("missing header");
  }
  ++line_no;
  const auto header = text::split(text::trim(line), ',');
  std::size_t dim = 0;
  while (dim < header.size() && text::trim(header[dim]) == "f" + std::to_string(dim)) ++dim;
  const bool has_fine = header.size() == dim + 2 && text::trim(header[dim + 1]) == "fine";
  if (dim == 0 || header.size() < dim + 1 || text::trim(header[dim]) != "coarse" ||
      (header.size() == dim + 2 && !has_fine) || header.size() > dim + 2) {
    fail("header must be f0..f{dim-1},coarse[,fine]");
  }

  std::vector<double> values;
  std::vector<int> coarse, fine;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(line, ',');
    if (cells.size() != header.size()) {
      fail("expected " + std::to_string(header.size()) + " columns, found " +
           std::to_string(cells.size()));
    }
    for (std::size_t d = 0; d < dim; ++d) {
      const auto v = text::parse_double(cells[d]);
      if (!v || !std::isfinite(*v)) fail("column f" + std::to_string(d) + " is not a finite number");
      values.push_back(*v);
    }
    const auto c = text::parse_int(cells[dim]);
    if (!c || *c < 0) fail("column coarse is not a nonnegative integer");
    coarse.push_back(static_cast<int>(*c));
    if (has_fine) {
      const auto f = text::parse_int(cells[dim + 1]);
      if (!f || *f < 0) fail("column fine is not a nonnegative integer");
      fine.push_back(static_cast<int>(*f));
    }
  }

  Dataset data;
  const std::size_t n = coarse.size();
  data.features = DenseMatrix(n, dim, std::move(values));
  data.coarse = std::move(coarse);
  const int max_coarse = data.coarse.empty() ? -1 : *std::max_element(data.coarse.begin(), data.coarse.end());
  data.k_c = k_c ? k_c : static_cast<std::size_t>(max_coarse + 1);
  if (has_fine) {
    const int max_fine = fine.empty() ? -1 : *std::max_element(fine.begin(), fine.end());
    data.k_f = k_f ? k_f : static_cast<std::size_t>(max_fine + 1);
    data.fine = std::move(fine);
  } else {
    data.k_f = k_f;
  }
  data.validate();
  return data;
}

Dataset load_csv(const std::string& path, std::size_t k_c, std::size_t k_f) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), path, k_c, k_f);
}

}  // namespace falcon
