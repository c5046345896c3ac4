#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "falcon/dense.hpp"
#include "falcon/relations.hpp"

namespace falcon {

// Coarsely labeled samples. Fine labels, when present, are for evaluation only.
struct Dataset {
  DenseMatrix features;  // N x dim
  std::vector<int> coarse;
  std::optional<std::vector<int>> fine;
  int index = 0;  // dataset of origin when several are combined
  std::size_t k_c = 0;
  std::size_t k_f = 0;  // 0 when unknown

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool has_fine() const { return fine.has_value(); }

  // Label ranges, lengths, and (with fine labels) the single-parent property.
  void validate() const;
  // Fine-to-coarse map observed in the data; requires fine labels.
  RelationMatrix induced_relations() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct TaxonomySpec {
  std::size_t k_c = 0;
  std::size_t k_f = 0;
  std::vector<int> assignment;      // fine -> coarse, surjective
  std::vector<double> weights;      // per fine class; empty means uniform
  double separation = 20.0;         // distance scale between coarse centers
  double within_separation = 6.0;   // distance scale between sibling fine centers
  double noise = 1.0;               // isotropic standard deviation

  // Fine class i under coarse class i % k_c.
  static TaxonomySpec round_robin(std::size_t k_c, std::size_t k_f);
  void validate() const;
  RelationMatrix relations() const;
};

// Geometric class weights: the largest class is `ratio` times the smallest.
std::vector<double> imbalance_weights(std::size_t k_f, double ratio);

// Per-class sample counts summing to n, proportional to weights (largest remainder).
std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& weights);

// Gaussian mixture with one component per fine class. Coarse centers lie at
// `separation` along random unit directions, fine centers are offset from
// their parent by `within_separation` along further random directions.
Dataset generate(const TaxonomySpec& spec, std::size_t n, std::size_t dim, std::uint64_t seed);

// Same samples, coarse labels taken from the alternative assignment.
Dataset relabel(const Dataset& data, const TaxonomySpec& alternative);

// Rows [begin, end) as a new dataset.
Dataset slice(const Dataset& data, std::size_t begin, std::size_t end);

// Header f0..f{dim-1},coarse[,fine]; values printed with 17 significant digits.
void save_csv(const Dataset& data, const std::string& path);
std::string to_csv(const Dataset& data);
// k_c is inferred as max coarse label + 1 (likewise k_f) unless given.
Dataset load_csv(const std::string& path, std::size_t k_c = 0, std::size_t k_f = 0);
Dataset parse_csv(const std::string& content, const std::string& source, std::size_t k_c = 0,
                  std::size_t k_f = 0);

}  // namespace falcon
