#include <cmath>

#include "doctest.h"
#include "falcon/errors.hpp"
#include "falcon/losses.hpp"
#include "falcon/nncore.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace falcon;

namespace {

// Scalar references, written per sample.
double ref_coarse(const DenseMatrix& p, const DenseMatrix& mask) {
  double s = 0.0;
  for (std::size_t n = 0; n < p.rows(); ++n) {
    double mass = 0.0;
    for (std::size_t i = 0; i < p.cols(); ++i) mass += mask(n, i) * p(n, i);
    s -= std::log(mass);
  }
  return s / static_cast<double>(p.rows());
}

double ref_neighbor(const DenseMatrix& p, const DenseMatrix& nb, std::size_t L) {
  double s = 0.0;
  for (std::size_t n = 0; n < p.rows(); ++n) {
    for (std::size_t k = 0; k < L; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < p.cols(); ++i) dot += nb(n * L + k, i) * p(n, i);
      s -= std::log(dot);
    }
  }
  return s / static_cast<double>(p.rows() * L);
}

double ref_confidence(const DenseMatrix& q, const DenseMatrix& p) {
  double s = 0.0;
  for (std::size_t n = 0; n < p.rows(); ++n) {
    for (std::size_t i = 0; i < p.cols(); ++i) {
      if (q(n, i) > 0.0) s -= q(n, i) * std::log(p(n, i));
    }
  }
  return s / static_cast<double>(p.rows());
}

double ref_reg(const DenseMatrix& p) {
  double s = std::log(static_cast<double>(p.cols()));
  for (std::size_t i = 0; i < p.cols(); ++i) {
    double mean = 0.0;
    for (std::size_t n = 0; n < p.rows(); ++n) mean += p(n, i);
    mean /= static_cast<double>(p.rows());
    if (mean > 0.0) s += mean * std::log(mean);
  }
  return s;
}

struct Batch {
  std::size_t n, k, k_c, L;
  RelationMatrix m;
  std::vector<int> labels;
  DenseMatrix logits, mask, q, neighbor_probs;
};

Batch random_batch(Rng& rng) {
  Batch b;
  b.n = 2 + rng.below(6);
  b.k_c = 1 + rng.below(3);
  b.k = b.k_c + rng.below(5);
  b.L = 1 + rng.below(3);
  std::vector<int> parents(b.k);
  for (std::size_t i = 0; i < b.k; ++i) parents[i] = static_cast<int>(i < b.k_c ? i : rng.below(b.k_c));
  rng.shuffle(parents);
  b.m = RelationMatrix(parents, b.k_c);
  b.labels = oracle::random_labels(b.n, b.k_c, rng);
  b.logits = oracle::random_matrix(b.n, b.k, rng, 2.0);
  b.mask = sibling_mask(b.m, b.labels);
  b.q = target_q_rows(oracle::random_matrix(b.n, b.k, rng, 2.0), b.mask, 0.9);
  b.neighbor_probs = softmax_rows(oracle::random_matrix(b.n * b.L, b.k, rng, 2.0), 1.0);
  return b;
}

}  // namespace

TEST_CASE("coarse loss examples") {
  SUBCASE("identity relations and correct one-hot predictions") {
    const RelationMatrix m({0, 1, 2}, 3);
    const DenseMatrix p = DenseMatrix::from_rows({{1, 0, 0}, {0, 0, 1}});
    const std::vector<int> y{0, 2};
    const LossTerm t = coarse_loss(p, m, y);
    CHECK(t.value == 0.0);
    CHECK(t.clamped == 0);
  }
  SUBCASE("uniform predictions, two fine per coarse") {
    const RelationMatrix m({0, 0, 1, 1}, 2);
    const DenseMatrix p(3, 4, 0.25);
    const LossTerm t = coarse_loss(p, m, std::vector<int>{0, 1, 1});
    CHECK(t.value == doctest::Approx(-std::log(0.5)).epsilon(1e-15));
  }
  SUBCASE("zero mass on the true coarse class is clamped and flagged") {
    const RelationMatrix m({0, 1}, 2);
    const LossTerm t = coarse_loss(DenseMatrix::from_rows({{1, 0}}), m, std::vector<int>{1});
    CHECK(t.value == doctest::Approx(-std::log(kLogClamp)));
    CHECK(t.clamped == 1);
    CHECK(t.grad.all_finite());
  }
}

TEST_CASE("coarse loss matches scalar reference") {
  Rng rng(101);
  for (int trial = 0; trial < 30; ++trial) {
    const Batch b = random_batch(rng);
    const DenseMatrix p = softmax_rows(b.logits, 1.0);
    CHECK(coarse_loss(p, b.m, b.labels).value == doctest::Approx(ref_coarse(p, b.mask)).epsilon(1e-13));
  }
}

TEST_CASE("sibling gradient equality under coarse loss") {
  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    const Batch b = random_batch(rng);
    const DenseMatrix p = softmax_rows(b.logits, 1.0);
    const LossTerm t = coarse_loss(p, b.m, b.labels);
    for (std::size_t n = 0; n < b.n; ++n) {
      double sibling = NAN;
      for (std::size_t i = 0; i < b.k; ++i) {
        if (b.m(i, static_cast<std::size_t>(b.labels[n]))) {
          if (std::isnan(sibling)) sibling = t.grad(n, i);
          CHECK(t.grad(n, i) == sibling);
        } else {
          CHECK(t.grad(n, i) == 0.0);
        }
      }
    }
  }
}

TEST_CASE("neighbor loss examples") {
  SUBCASE("same one-hot") {
    const LossTerm t = neighbor_loss(DenseMatrix::from_rows({{0, 1, 0}}), DenseMatrix::from_rows({{0, 1, 0}}), 1);
    CHECK(t.value == 0.0);
  }
  SUBCASE("orthogonal one-hots hit the clamp") {
    const LossTerm t = neighbor_loss(DenseMatrix::from_rows({{0, 1, 0}}), DenseMatrix::from_rows({{1, 0, 0}}), 1);
    CHECK(t.value == doctest::Approx(-std::log(kLogClamp)));
    CHECK(t.clamped == 1);
    CHECK(t.grad.all_finite());
  }
  SUBCASE("uniform over five") {
    const LossTerm t = neighbor_loss(DenseMatrix(2, 5, 0.2), DenseMatrix(6, 5, 0.2), 3);
    CHECK(t.value == doctest::Approx(-std::log(0.2)).epsilon(1e-14));
  }
  SUBCASE("wrong neighbor row count") {
    CHECK_THROWS_AS(neighbor_loss(DenseMatrix(2, 5, 0.2), DenseMatrix(5, 5, 0.2), 3), DimensionError);
  }
}

TEST_CASE("neighbor loss matches scalar reference") {
  Rng rng(102);
  for (int trial = 0; trial < 30; ++trial) {
    const Batch b = random_batch(rng);
    const DenseMatrix p = softmax_rows(b.logits, 1.0);
    CHECK(neighbor_loss(p, b.neighbor_probs, b.L).value ==
          doctest::Approx(ref_neighbor(p, b.neighbor_probs, b.L)).epsilon(1e-13));
  }
}

TEST_CASE("target distribution examples") {
  SUBCASE("single sibling gives one-hot") {
    const RelationMatrix m({0, 1, 1}, 2);
    const auto q = target_q(std::vector<double>{3, -1, 2}, 0, m, 0.9);
    CHECK(q == std::vector<double>{1, 0, 0});
  }
  SUBCASE("equal sibling logits give uniform siblings") {
    const RelationMatrix m({1, 0, 1, 0}, 2);
    const auto q = target_q(std::vector<double>{0.7, 5, 0.7, -2}, 1, m, 0.9);
    CHECK(q[0] == doctest::Approx(0.5));
    CHECK(q[2] == doctest::Approx(0.5));
    CHECK(q[1] == 0.0);
    CHECK(q[3] == 0.0);
  }
  SUBCASE("masked softmax over siblings at the default temperature") {
    const auto q = target_q(std::vector<double>{1, 2, 3}, std::vector<double>{1, 0, 1}, 0.9);
    const double a = std::exp(1.0 / 0.9), c = std::exp(3.0 / 0.9);
    CHECK(q[0] == doctest::Approx(a / (a + c)).epsilon(1e-14));
    CHECK(q[1] == 0.0);
    CHECK(q[2] == doctest::Approx(c / (a + c)).epsilon(1e-14));
  }
  SUBCASE("empty sibling set") {
    CHECK_THROWS_AS(target_q(std::vector<double>{1, 2}, std::vector<double>{0, 0}, 0.9), InfeasibleError);
  }
}

TEST_CASE("target distribution support and normalization") {
  Rng rng(103);
  for (int trial = 0; trial < 100; ++trial) {
    const Batch b = random_batch(rng);
    for (std::size_t n = 0; n < b.n; ++n) {
      double s = 0.0;
      for (std::size_t i = 0; i < b.k; ++i) {
        if (b.mask(n, i) == 0.0) CHECK(b.q(n, i) == 0.0);
        CHECK(b.q(n, i) >= 0.0);
        s += b.q(n, i);
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("confidence loss") {
  SUBCASE("matching distributions give the entropy") {
    const DenseMatrix q = DenseMatrix::from_rows({{0.2, 0.8, 0}, {0.5, 0.25, 0.25}});
    const double h0 = -(0.2 * std::log(0.2) + 0.8 * std::log(0.8));
    const double h1 = -(0.5 * std::log(0.5) + 0.5 * std::log(0.25));
    CHECK(confidence_loss(q, q).value == doctest::Approx((h0 + h1) / 2).epsilon(1e-14));
  }
  SUBCASE("matching one-hots") {
    const DenseMatrix q = DenseMatrix::from_rows({{0, 1, 0}});
    CHECK(confidence_loss(q, q).value == 0.0);
  }
  SUBCASE("scalar reference") {
    Rng rng(104);
    for (int trial = 0; trial < 30; ++trial) {
      const Batch b = random_batch(rng);
      const DenseMatrix p = softmax_rows(b.logits, 1.0);
      CHECK(confidence_loss(b.q, p).value == doctest::Approx(ref_confidence(b.q, p)).epsilon(1e-13));
    }
  }
  SUBCASE("never below the target entropy") {
    Rng rng(105);
    for (int trial = 0; trial < 100; ++trial) {
      const Batch b = random_batch(rng);
      const DenseMatrix p = softmax_rows(b.logits, 1.0);
      CHECK(confidence_loss(b.q, p).value >= confidence_loss(b.q, b.q).value - 1e-12);
    }
  }
  SUBCASE("logit gradient is (p - q) / N") {
    Rng rng(106);
    const Batch b = random_batch(rng);
    const DenseMatrix p = softmax_rows(b.logits, 1.0);
    const DenseMatrix g = softmax_backward(p, confidence_loss(b.q, p).grad);
    for (std::size_t n = 0; n < b.n; ++n) {
      for (std::size_t i = 0; i < b.k; ++i) {
        CHECK(g(n, i) == doctest::Approx((p(n, i) - b.q(n, i)) / static_cast<double>(b.n)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("fine loss is additive") {
  Rng rng(107);
  for (int trial = 0; trial < 30; ++trial) {
    const Batch b = random_batch(rng);
    const DenseMatrix p = softmax_rows(b.logits, 1.0);
    const double parts = neighbor_loss(p, b.neighbor_probs, b.L).value + confidence_loss(b.q, p).value;
    CHECK(std::abs(fine_loss(p, b.neighbor_probs, b.L, b.q).value - parts) <= 1e-12);
  }
}

TEST_CASE("entropy regularizer") {
  CHECK(entropy_reg(std::vector<double>(6, 1.0 / 6)).value == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(entropy_reg(std::vector<double>{0, 0, 1, 0}).value == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(entropy_reg(std::vector<double>{0.5, 0.25, 0.25}).value ==
        doctest::Approx(std::log(3.0) + 0.5 * std::log(0.5) + 0.5 * std::log(0.25)).epsilon(1e-14));

  Rng rng(108);
  for (int trial = 0; trial < 50; ++trial) {
    const Batch b = random_batch(rng);
    const DenseMatrix p = softmax_rows(b.logits, 1.0);
    const LossTerm t = entropy_reg(p);
    CHECK(t.value >= -1e-15);
    CHECK(t.value == doctest::Approx(ref_reg(p)).epsilon(1e-13));
  }
}

TEST_CASE("every term matches central differences through the softmax") {
  Rng rng(109);
  for (int trial = 0; trial < 20; ++trial) {
    const Batch b = random_batch(rng);
    auto through = [](auto term) {
      return [term](const DenseMatrix& logits) { return term(softmax_rows(logits, 1.0)).value; };
    };
    auto analytic = [&](auto term) {
      const DenseMatrix p = softmax_rows(b.logits, 1.0);
      return softmax_backward(p, term(p).grad);
    };
    auto coarse = [&](const DenseMatrix& p) { return coarse_loss(p, b.mask); };
    auto neighbor = [&](const DenseMatrix& p) { return neighbor_loss(p, b.neighbor_probs, b.L); };
    auto confidence = [&](const DenseMatrix& p) { return confidence_loss(b.q, p); };
    auto reg = [&](const DenseMatrix& p) { return entropy_reg(p); };
    CHECK(gradcheck::worst_relative_error(through(coarse), b.logits, analytic(coarse)) <= 1e-5);
    CHECK(gradcheck::worst_relative_error(through(neighbor), b.logits, analytic(neighbor)) <= 1e-5);
    CHECK(gradcheck::worst_relative_error(through(confidence), b.logits, analytic(confidence)) <= 1e-5);
    CHECK(gradcheck::worst_relative_error(through(reg), b.logits, analytic(reg)) <= 1e-5);

    const LossWeights w;
    auto total = [&](const DenseMatrix& logits) {
      return total_loss({logits, b.mask, b.q, b.neighbor_probs, b.L}, w).total;
    };
    const LossBreakdown full = total_loss({b.logits, b.mask, b.q, b.neighbor_probs, b.L}, w);
    CHECK(gradcheck::worst_relative_error(total, b.logits, full.grad_logits) <= 1e-5);
  }
}

TEST_CASE("total loss composition") {
  Rng rng(110);
  const Batch b = random_batch(rng);
  const DenseMatrix p = softmax_rows(b.logits, 1.0);
  const LossInputs in{b.logits, b.mask, b.q, b.neighbor_probs, b.L};

  SUBCASE("default weights equal the weighted parts") {
    const LossWeights w;
    const LossBreakdown r = total_loss(in, w);
    const double expected = 0.5 * coarse_loss(p, b.mask).value +
                            0.5 * (neighbor_loss(p, b.neighbor_probs, b.L).value + confidence_loss(b.q, p).value) +
                            2.0 * entropy_reg(p).value;
    CHECK(r.total == doctest::Approx(expected).epsilon(1e-13));
    CHECK(r.fine == doctest::Approx(r.neighbor + r.confidence).epsilon(1e-15));
  }
  SUBCASE("coarse weight only") {
    LossWeights w;
    w.lambda1 = 1.0;
    w.lambda2 = 0.0;
    w.lambda3 = 0.0;
    const LossBreakdown r = total_loss(in, w);
    const LossTerm c = coarse_loss(p, b.mask);
    CHECK(r.total == doctest::Approx(c.value).epsilon(1e-15));
    CHECK(r.grad_probs == c.grad);
  }
  SUBCASE("all weights zero") {
    LossWeights w;
    w.lambda1 = w.lambda2 = w.lambda3 = 0.0;
    const LossBreakdown r = total_loss(in, w);
    CHECK(r.total == 0.0);
    for (double v : r.grad_logits.data()) CHECK(v == 0.0);
  }
  SUBCASE("switched-off terms are reported but excluded") {
    const LossWeights w;
    const LossBreakdown r = total_loss(in, w, {true, false, false, false});
    CHECK(r.total == doctest::Approx(0.5 * r.coarse).epsilon(1e-15));
    CHECK(r.fine > 0.0);
  }
}

TEST_CASE("loss weights validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.temperature = 0.0;
  CHECK_THROWS(w.validate());
  w = {};
  w.neighbors = 0;
  CHECK_THROWS(w.validate());
  w = {};
  w.lambda3 = -1.0;
  CHECK_THROWS(w.validate());
}
