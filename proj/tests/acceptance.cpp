// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "falcon/cli.hpp"
#include "falcon/datagen.hpp"
#include "falcon/losses.hpp"
#include "falcon/metrics.hpp"
#include "falcon/relations.hpp"
#include "falcon/trainer.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace falcon;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  if (!o.pass) ++failures;
  std::printf("%s  %d. %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- end-to-end scenario ------------------------------------------------

constexpr std::size_t kCoarse = 4;
constexpr std::size_t kFine = 12;
constexpr std::size_t kDim = 16;
constexpr std::size_t kSamples = 2400;
constexpr std::uint64_t kSeeds[] = {1, 2, 3};

TaxonomySpec scenario_taxonomy() {
  TaxonomySpec s = TaxonomySpec::round_robin(kCoarse, kFine);
  s.separation = 20.0;
  s.within_separation = 10.0;
  s.noise = 1.0;
  return s;
}

TrainRunConfig scenario_config(std::uint64_t seed) {
  TrainRunConfig c;
  c.k_f = kFine;
  c.seed = seed;
  c.epochs = 100;
  c.batch_size = 256;
  c.optimizer.learning_rate = 0.02;
  c.optimizer.milestones = {60, 80};
  c.loss.temperature = 0.3;
  return c;
}

struct RunResult {
  double accuracy = 0.0;
  double ari = 0.0;
  std::size_t ged = 0;
  double seconds = 0.0;
  bool histories_feasible = true;
};

RunResult evaluate_run(const TrainReport& report, const Dataset& eval_data,
                       const std::vector<RelationMatrix>& truth, double seconds) {
  RunResult r;
  r.seconds = seconds;
  const auto pred = predict_fine(report.state, eval_data.features);
  const MatchedAccuracy acc = clustering_accuracy(pred, *eval_data.fine, kFine);
  r.accuracy = acc.accuracy;
  r.ari = adjusted_rand_index(pred, *eval_data.fine);
  for (std::size_t l = 0; l < truth.size(); ++l) {
    r.ged += graph_edit_distance(permute_fine(report.relations[l], acc.permutation), truth[l]);
  }
  for (const auto& snap : report.relation_history) {
    for (const auto& m : snap.relations) r.histories_feasible = r.histories_feasible && m.feasible();
  }
  for (const auto& m : report.relations) r.histories_feasible = r.histories_feasible && m.feasible();
  return r;
}

RunResult train_and_score(const std::vector<Dataset>& train, const Dataset& eval_data,
                          const std::vector<RelationMatrix>& truth, const TrainRunConfig& config) {
  const auto start = Clock::now();
  const TrainReport report = train_multi(train, config);
  return evaluate_run(report, eval_data, truth, seconds_since(start));
}

std::string describe(const RunResult& r) {
  return fmt("acc=%.4f", r.accuracy) + fmt(" ari=%.4f", r.ari) + " ged=" + std::to_string(r.ged) +
         fmt(" (%.1fs)", r.seconds);
}

bool all_feasible = true;

// ---- criteria -------------------------------------------------------------

Outcome solver_exactness() {
  Rng rng(2024);
  const double lambdas[] = {0.0, 0.01, 0.1, 1.0};
  const auto start = Clock::now();
  std::size_t mismatches = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k_c = 1 + rng.below(3);
    const std::size_t k_f = k_c + rng.below(9 - k_c);
    CostMatrix c{DenseMatrix(k_c, k_f), 0.0};
    for (double& v : c.entries.data()) {
      v = rng.uniform();
      c.sample_count += v;
    }
    const SolverOptions opts{lambdas[rng.below(4)]};
    const double gap = std::abs(solve_relations_exact(c, opts).objective.total -
                                solve_relations_bruteforce(c, opts).objective.total);
    worst = std::max(worst, gap);
    if (gap > 1e-9) ++mismatches;
  }
  const double t = seconds_since(start);
  return {mismatches == 0 && t < 60.0, "1000 instances, " + std::to_string(mismatches) +
                                           " mismatches, worst gap " + fmt("%.2e", worst) + fmt(", %.2fs", t)};
}

Outcome gradient_fidelity() {
  Rng rng(77);
  const char* names[] = {"coarse", "neighbor", "confidence", "reg", "total"};
  double worst[5] = {0, 0, 0, 0, 0};
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    const std::size_t k_c = 1 + rng.below(4);
    const std::size_t k = k_c + rng.below(6);
    const std::size_t L = 1 + rng.below(4);
    std::vector<int> parents(k);
    for (std::size_t i = 0; i < k; ++i) parents[i] = static_cast<int>(i < k_c ? i : rng.below(k_c));
    rng.shuffle(parents);
    const RelationMatrix m(parents, k_c);
    const auto labels = oracle::random_labels(n, k_c, rng);
    const DenseMatrix logits = oracle::random_matrix(n, k, rng, 2.0);
    const DenseMatrix mask = sibling_mask(m, labels);
    const DenseMatrix q = target_q_rows(oracle::random_matrix(n, k, rng, 2.0), mask, rng.uniform(0.2, 2.0));
    const DenseMatrix nb = softmax_rows(oracle::random_matrix(n * L, k, rng, 2.0), 1.0);
    const DenseMatrix p = softmax_rows(logits, 1.0);

    const std::function<LossTerm(const DenseMatrix&)> terms[] = {
        [&](const DenseMatrix& x) { return coarse_loss(x, mask); },
        [&](const DenseMatrix& x) { return neighbor_loss(x, nb, L); },
        [&](const DenseMatrix& x) { return confidence_loss(q, x); },
        [&](const DenseMatrix& x) { return entropy_reg(x); },
    };
    for (int t = 0; t < 4; ++t) {
      const auto f = [&](const DenseMatrix& z) { return terms[t](softmax_rows(z, 1.0)).value; };
      worst[t] = std::max(worst[t], gradcheck::worst_relative_error(
                                        f, logits, softmax_backward(p, terms[t](p).grad)));
    }
    LossWeights w;
    w.lambda1 = rng.uniform(0, 2);
    w.lambda2 = rng.uniform(0, 2);
    w.lambda3 = rng.uniform(0, 2);
    const auto total = [&](const DenseMatrix& z) { return total_loss({z, mask, q, nb, L}, w).total; };
    worst[4] = std::max(worst[4], gradcheck::worst_relative_error(
                                      total, logits, total_loss({logits, mask, q, nb, L}, w).grad_logits));
  }
  bool ok = true;
  std::string detail = "50 configurations per term, worst relative error:";
  for (int t = 0; t < 5; ++t) {
    ok = ok && worst[t] <= 1e-5;
    detail += std::string(" ") + names[t] + "=" + fmt("%.1e", worst[t]);
  }
  return {ok, detail};
}

Outcome sibling_gradients() {
  Rng rng(303);
  std::size_t bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(10);
    const std::size_t k_c = 1 + rng.below(5);
    const std::size_t k = k_c + rng.below(8);
    std::vector<int> parents(k);
    for (std::size_t i = 0; i < k; ++i) parents[i] = static_cast<int>(i < k_c ? i : rng.below(k_c));
    rng.shuffle(parents);
    const RelationMatrix m(parents, k_c);
    const auto labels = oracle::random_labels(n, k_c, rng);
    const DenseMatrix p = softmax_rows(oracle::random_matrix(n, k, rng, 3.0), 1.0);
    const LossTerm t = coarse_loss(p, m, labels);
    bool ok = true;
    for (std::size_t s = 0; s < n; ++s) {
      const auto kids = m.children(static_cast<std::size_t>(labels[s]));
      for (std::size_t i = 0; i < k; ++i) {
        if (m(i, static_cast<std::size_t>(labels[s]))) {
          ok = ok && t.grad(s, i) == t.grad(s, kids.front()) && t.grad(s, i) != 0.0;
        } else {
          ok = ok && t.grad(s, i) == 0.0;
        }
      }
    }
    if (!ok) ++bad;
  }
  return {bad == 0, "100 random cases, " + std::to_string(bad) + " with unequal sibling or nonzero outside gradients"};
}

Outcome metric_oracles() {
  Rng rng(404);
  std::size_t acc_bad = 0, ari_bad = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 1 + rng.below(6);
    const std::size_t n = 1 + rng.below(10);
    const auto pred = oracle::random_labels(n, k, rng);
    const auto truth = oracle::random_labels(n, k, rng);
    if (std::abs(clustering_accuracy(pred, truth, k).accuracy - oracle::best_permutation_accuracy(pred, truth, k)) >
        1e-12) {
      ++acc_bad;
    }
  }
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(40);
    const auto a = oracle::random_labels(n, 1 + rng.below(6), rng);
    const auto b = oracle::random_labels(n, 1 + rng.below(6), rng);
    if (std::abs(adjusted_rand_index(a, b) - oracle::pair_ari(a, b)) > 1e-12) ++ari_bad;
  }
  return {acc_bad == 0 && ari_bad == 0, "accuracy vs factorial: " + std::to_string(acc_bad) +
                                            "/500 mismatches; ARI vs pairs: " + std::to_string(ari_bad) +
                                            "/200 mismatches"};
}

struct ScenarioRuns {
  std::vector<Dataset> data;
  std::vector<RunResult> full;
};

Outcome end_to_end(ScenarioRuns& runs) {
  const TaxonomySpec spec = scenario_taxonomy();
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    runs.data.push_back(generate(spec, kSamples, kDim, seed));
    const RunResult r = train_and_score({runs.data.back()}, runs.data.back(), {spec.relations()},
                                        scenario_config(seed));
    runs.full.push_back(r);
    all_feasible = all_feasible && r.histories_feasible;
    ok = ok && r.accuracy >= 0.95 && r.ari >= 0.90 && r.ged == 0 && r.seconds < 300.0;
    detail += "seed " + std::to_string(seed) + ": " + describe(r) + "; ";
  }
  return {ok, detail};
}

Outcome ablations(const ScenarioRuns& runs) {
  const TaxonomySpec spec = scenario_taxonomy();
  bool ok = true;
  std::string detail;
  for (std::size_t s = 0; s < runs.data.size(); ++s) {
    TrainRunConfig no_fine = scenario_config(kSeeds[s]);
    no_fine.enable_fine = false;
    TrainRunConfig no_reg = scenario_config(kSeeds[s]);
    no_reg.enable_reg = false;
    const RunResult a = train_and_score({runs.data[s]}, runs.data[s], {spec.relations()}, no_fine);
    const RunResult b = train_and_score({runs.data[s]}, runs.data[s], {spec.relations()}, no_reg);
    all_feasible = all_feasible && a.histories_feasible && b.histories_feasible;
    const double drop_fine = runs.full[s].accuracy - a.accuracy;
    const double drop_reg = runs.full[s].accuracy - b.accuracy;
    ok = ok && drop_fine >= 0.10 && drop_reg >= 0.10;
    detail += "seed " + std::to_string(kSeeds[s]) + fmt(": full=%.4f", runs.full[s].accuracy) +
              fmt(" no-fine=%.4f", a.accuracy) + fmt(" no-reg=%.4f", b.accuracy) + "; ";
  }
  return {ok, detail};
}

Outcome multi_dataset() {
  // Same fine classes under two groupings: i % 4 (four coarse classes) and
  // i / 4 (three coarse classes).
  const TaxonomySpec t1 = scenario_taxonomy();
  TaxonomySpec t2 = t1;
  t2.k_c = 3;
  for (std::size_t i = 0; i < kFine; ++i) t2.assignment[i] = static_cast<int>(i / 4);

  std::size_t wins = 0;
  bool within = true;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const Dataset all = generate(t1, kSamples, kDim, seed);
    const Dataset half1 = slice(all, 0, kSamples / 2);
    const Dataset half2 = relabel(slice(all, kSamples / 2, kSamples), t2);
    const TrainRunConfig config = scenario_config(seed);
    const RunResult s1 = train_and_score({half1}, all, {t1.relations()}, config);
    const RunResult s2 = train_and_score({half2}, all, {t2.relations()}, config);
    const RunResult m = train_and_score({half1, half2}, all, {t1.relations(), t2.relations()}, config);
    all_feasible = all_feasible && s1.histories_feasible && s2.histories_feasible && m.histories_feasible;
    within = within && m.accuracy >= s1.accuracy - 0.01 && m.accuracy >= s2.accuracy - 0.01;
    if (m.accuracy >= std::max(s1.accuracy, s2.accuracy)) ++wins;
    detail += "seed " + std::to_string(seed) + fmt(": T1=%.4f", s1.accuracy) + fmt(" T2=%.4f", s2.accuracy) +
              fmt(" both=%.4f", m.accuracy) + "; ";
  }
  return {within && wins >= 2, detail + std::to_string(wins) + "/3 seeds at or above the best single run"};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "falcon_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  auto cli = [](std::vector<std::string> args) {
    args.insert(args.begin(), "falcon");
    std::ostringstream out, err;
    return cli::run(args, out, err);
  };
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
  };
  bool ok = cli({"generate", "--seed", "11", "--k-c", "4", "--k-f", "12", "--n", "600", "--dim", "16", "--out",
                 (root / "data").string()}) == 0;
  for (const char* out : {"a", "b"}) {
    ok = ok && cli({"train", "--data", (root / "data" / "data.csv").string(), "--k-f", "12", "--seed", "11",
                    "--epochs", "10", "--out", (root / out).string()}) == 0;
  }
  std::string detail = ok ? "" : "a command failed; ";
  for (const char* f : {"report.json", "checkpoint.bin", "relations_0.txt"}) {
    const std::string a = slurp(root / "a" / f);
    const bool same = !a.empty() && a == slurp(root / "b" / f);
    ok = ok && same;
    detail += std::string(f) + (same ? " identical (" + std::to_string(a.size()) + " bytes); " : " DIFFERS; ");
  }
  fs::remove_all(root);
  return {ok, detail};
}

}  // namespace

int main() {
  const auto start = Clock::now();
  report(1, "solver exactness", solver_exactness());
  report(2, "gradient fidelity", gradient_fidelity());
  report(3, "sibling gradient equality under the coarse loss", sibling_gradients());
  report(4, "metric oracles", metric_oracles());
  ScenarioRuns runs;
  report(5, "end-to-end recovery", end_to_end(runs));
  report(6, "ablation direction", ablations(runs));
  report(7, "multi-dataset direction", multi_dataset());
  report(8, "feasibility of every emitted relation matrix",
         {all_feasible, all_feasible ? "all training histories feasible" : "infeasible matrix found"});
  report(9, "determinism", determinism());
  std::printf("%d criteria failed, %.1fs total\n", failures, seconds_since(start));
  return failures == 0 ? 0 : 1;
}
