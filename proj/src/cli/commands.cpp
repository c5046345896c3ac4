#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "falcon/checkpoint.hpp"
#include "falcon/cli.hpp"
#include "falcon/datagen.hpp"
#include "falcon/errors.hpp"
#include "falcon/metrics.hpp"
#include "falcon/relations.hpp"
#include "falcon/trainer.hpp"
#include "json.hpp"

namespace falcon::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct GenerateArgs {
  std::uint64_t seed = 0;
  std::size_t k_c = 4;
  std::size_t k_f = 12;
  std::size_t n = 2400;
  std::size_t dim = 16;
  double separation = 20.0;
  double within = 6.0;
  double noise = 1.0;
  double imbalance = 1.0;
  std::string taxonomy;
  std::string alt_taxonomy;
  std::string out = "out";
};

struct TrainArgs {
  std::vector<std::string> data;
  std::uint64_t seed = 0;
  TrainRunConfig config;
  std::vector<std::size_t> milestones;
  bool no_coarse = false;
  bool no_fine = false;
  bool no_reg = false;
  std::string out = "out";
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string taxonomy;
  std::string relations;
  int dataset_index = 0;
  bool ema = false;
  std::string out;
};

struct SolveArgs {
  std::string cost;
  double lambda_m = 0.1;
  double samples = 0.0;
  bool oracle = false;
  std::string out;
};

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << content;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  TaxonomySpec spec = a.taxonomy.empty() ? TaxonomySpec::round_robin(a.k_c, a.k_f) : TaxonomySpec{};
  if (!a.taxonomy.empty()) {
    const RelationMatrix m = load_relations(a.taxonomy);
    spec.k_c = m.k_c();
    spec.k_f = m.k_f();
    spec.assignment = m.parents();
  }
  spec.separation = a.separation;
  spec.within_separation = a.within;
  spec.noise = a.noise;
  if (a.imbalance != 1.0) spec.weights = imbalance_weights(spec.k_f, a.imbalance);
  spec.validate();
  if (a.n < spec.k_f) throw std::invalid_argument("--n must be at least K_F");
  if (a.dim < 2) throw std::invalid_argument("--dim must be at least 2");

  std::optional<TaxonomySpec> alt;
  if (!a.alt_taxonomy.empty()) {
    const RelationMatrix m = load_relations(a.alt_taxonomy);
    if (m.k_f() != spec.k_f) throw std::invalid_argument("alternative taxonomy must cover the same K_F fine classes");
    alt = spec;
    alt->k_c = m.k_c();
    alt->assignment = m.parents();
    alt->validate();
  }

  const Dataset data = generate(spec, a.n, a.dim, a.seed);

  std::vector<std::size_t> histogram(spec.k_f, 0);
  for (int f : *data.fine) ++histogram[static_cast<std::size_t>(f)];
  json meta;
  meta["config"] = {{"seed", a.seed},           {"k_c", spec.k_c},     {"k_f", spec.k_f},
                    {"n", a.n},                 {"dim", a.dim},        {"separation", a.separation},
                    {"within_separation", a.within}, {"noise", a.noise}, {"imbalance", a.imbalance}};
  meta["weights"] = spec.weights.empty() ? std::vector<double>(spec.k_f, 1.0) : spec.weights;
  meta["fine_histogram"] = histogram;

  fs::create_directories(a.out);
  const fs::path dir(a.out);
  save_csv(data, (dir / "data.csv").string());
  save_relations((dir / "taxonomy.txt").string(), spec.relations());
  if (alt) {
    const std::size_t half = data.size() / 2;
    save_csv(slice(data, 0, half), (dir / "data_t1.csv").string());
    save_csv(relabel(slice(data, half, data.size()), *alt), (dir / "data_t2.csv").string());
    save_relations((dir / "taxonomy_t2.txt").string(), alt->relations());
    meta["alt_taxonomy"] = {{"k_c", alt->k_c}, {"split", half}};
  }
  write_file(dir / "meta.json", meta.dump(2) + "\n");
  out << "wrote " << data.size() << " samples to " << (dir / "data.csv").string() << "\n";
  return kSuccess;
}

int cmd_train(TrainArgs a, std::ostream& out, std::ostream& err) {
  TrainRunConfig& config = a.config;
  config.seed = a.seed;
  config.enable_coarse = !a.no_coarse;
  config.enable_fine = !a.no_fine;
  config.enable_reg = !a.no_reg;
  if (a.milestones.empty()) {
    // Step decay at 60% and 80% of training.
    for (std::size_t m : {config.epochs * 6 / 10, config.epochs * 8 / 10}) {
      if (m > 0 && (config.optimizer.milestones.empty() || m > config.optimizer.milestones.back())) {
        config.optimizer.milestones.push_back(m);
      }
    }
  } else {
    config.optimizer.milestones = a.milestones;
  }
  config.validate();

  std::vector<Dataset> datasets;
  for (const auto& path : a.data) datasets.push_back(load_csv(path));
  for (std::size_t l = 0; l < datasets.size(); ++l) {
    if (datasets[l].k_f != 0 && datasets[l].k_f > config.k_f) {
      throw std::invalid_argument(a.data[l] + " has fine labels beyond --k-f");
    }
  }
  const std::size_t supported = max_supported_neighbors(datasets);
  if (supported == 0) throw std::invalid_argument("some coarse class has a single sample; no neighbors exist");
  if (supported < config.loss.neighbors) {
    err << "WARNING: reducing the number of neighbors from " << config.loss.neighbors << " to "
        << supported << " because the smallest coarse class has only " << supported + 1
        << " samples\n";
    config.loss.neighbors = supported;
  }

  const TrainReport report = train_multi(datasets, config);

  json report_json = json::parse(report_to_json(report));
  report_json["datasets"] = a.data;

  fs::create_directories(a.out);
  const fs::path dir(a.out);
  write_file(dir / "report.json", report_json.dump(2) + "\n");
  save_checkpoint((dir / "checkpoint.bin").string(), {report.state, report.relations});
  for (std::size_t l = 0; l < report.relations.size(); ++l) {
    save_relations((dir / ("relations_" + std::to_string(l) + ".txt")).string(), report.relations[l]);
  }
  out << "trained " << report.iterations << " iterations; outputs in " << dir.string() << "\n";
  return kSuccess;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const RelationMatrix reference = load_relations(a.taxonomy);
  const std::size_t k_f = ckpt.state.theta.output_dim();
  if (reference.k_f() != k_f) {
    throw std::invalid_argument("reference taxonomy has K_F=" + std::to_string(reference.k_f()) +
                                " but the checkpoint predicts " + std::to_string(k_f) + " classes");
  }
  const Dataset data = load_csv(a.data, reference.k_c(), k_f);
  if (!data.has_fine()) throw std::invalid_argument(a.data + " has no fine labels to evaluate against");

  RelationMatrix learned;
  if (!a.relations.empty()) {
    learned = load_relations(a.relations);
  } else {
    if (a.dataset_index < 0 || static_cast<std::size_t>(a.dataset_index) >= ckpt.relations.size()) {
      throw std::invalid_argument("checkpoint holds no relation matrix for dataset index " +
                                  std::to_string(a.dataset_index));
    }
    learned = ckpt.relations[static_cast<std::size_t>(a.dataset_index)];
  }
  if (learned.k_f() != k_f || learned.k_c() != reference.k_c()) {
    throw std::invalid_argument("learned relation matrix shape differs from the reference taxonomy");
  }

  const auto pred = predict_fine(ckpt.state, data.features, a.ema ? Branch::ema : Branch::current);
  const auto& truth = *data.fine;
  const MatchedAccuracy acc = clustering_accuracy(pred, truth, k_f);
  const MacroAccuracy macro = macro_accuracy(pred, truth, acc.permutation);

  MetricsReport report;
  report.accuracy = acc.accuracy;
  report.ari = adjusted_rand_index(pred, truth);
  report.macro_accuracy = macro.value;
  report.ged = graph_edit_distance(permute_fine(learned, acc.permutation), reference);
  report.matched_permutation = acc.permutation;
  report.excluded_classes = macro.excluded;

  json j = json::parse(metrics_to_json(report));
  j["config"] = {{"checkpoint", a.checkpoint}, {"data", a.data},          {"taxonomy", a.taxonomy},
                 {"relations", a.relations},   {"dataset_index", a.dataset_index},
                 {"branch", a.ema ? "ema" : "current"}};
  const std::string text = j.dump(2) + "\n";
  if (a.out.empty()) {
    out << text;
  } else {
    write_file(a.out, text);
  }
  return kSuccess;
}

int cmd_solve(const SolveArgs& a, std::ostream& out) {
  std::ifstream in(a.cost, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + a.cost);
  CostMatrix cost = read_cost_csv(in, a.cost);
  if (a.samples > 0.0) cost.sample_count = a.samples;
  SolverOptions options;
  options.lambda_m = a.lambda_m;
  const RelationSolution sol =
      a.oracle ? solve_relations_bruteforce(cost, options) : solve_relations_exact(cost, options);
  if (!a.out.empty()) save_relations(a.out, sol.relations);
  out << "solver " << (a.oracle ? "bruteforce" : "exact") << "\n";
  out << "linear " << json(sol.objective.linear).dump() << "\n";
  out << "balance " << json(sol.objective.balance).dump() << "\n";
  out << "total " << json(sol.objective.total).dump() << "\n";
  if (a.out.empty()) write_relations(out, sol.relations);
  return kSuccess;
}

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  auto& c = a.config;
  cmd->add_option("--data", a.data, "Dataset CSV; repeat for multi-dataset training")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "Random seed")->required();
  cmd->add_option("--k-f", c.k_f, "Number of fine classes")->required();
  cmd->add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch-size", c.batch_size, "Minibatch size")->capture_default_str();
  cmd->add_option("--lr", c.optimizer.learning_rate, "Initial learning rate")->capture_default_str();
  cmd->add_option("--momentum", c.optimizer.momentum, "SGD momentum")->capture_default_str();
  cmd->add_option("--milestones", a.milestones,
                  "Epochs at which the learning rate drops by 10x (default 60% and 80%)");
  cmd->add_option("--depth", c.depth, "Linear layers in the MLP")->capture_default_str();
  cmd->add_option("--width", c.width, "Hidden units per layer")->capture_default_str();
  cmd->add_option("--lambda1", c.loss.lambda1, "Weight of the coarse loss")->capture_default_str();
  cmd->add_option("--lambda2", c.loss.lambda2, "Weight of the fine loss")->capture_default_str();
  cmd->add_option("--lambda3", c.loss.lambda3, "Weight of the entropy regularizer")->capture_default_str();
  cmd->add_option("--lambda-m", c.loss.lambda_m, "Balance weight for relation inference")->capture_default_str();
  cmd->add_option("--temperature", c.loss.temperature, "Target sharpening temperature")->capture_default_str();
  cmd->add_option("--ema-gamma", c.loss.gamma, "EMA coefficient")->capture_default_str();
  cmd->add_option("--neighbors", c.loss.neighbors, "Nearest neighbors per sample")->capture_default_str();
  cmd->add_option("--update-period", c.loss.update_period, "Iterations between relation updates")
      ->capture_default_str();
  cmd->add_option("--gather-multiplier", c.gather_subset_multiplier,
                  "Relation update subset size in batches")
      ->capture_default_str();
  cmd->add_flag("--no-coarse", a.no_coarse, "Drop the coarse (and confidence) loss");
  cmd->add_flag("--no-fine", a.no_fine, "Drop the fine loss");
  cmd->add_flag("--no-reg", a.no_reg, "Drop the entropy regularizer");
  cmd->add_option("--out", a.out, "Output directory")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fine-grained class discovery from coarse labels", "falcon"};
  app.set_config("--config", "", "INI/TOML config file; sections are named after subcommands");
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate_cmd = app.add_subcommand("generate", "Generate a synthetic hierarchical dataset");
  generate_cmd->add_option("--seed", gen.seed, "Random seed")->required();
  generate_cmd->add_option("--k-c", gen.k_c, "Number of coarse classes")->capture_default_str();
  generate_cmd->add_option("--k-f", gen.k_f, "Number of fine classes")->capture_default_str();
  generate_cmd->add_option("--n", gen.n, "Number of samples")->capture_default_str();
  generate_cmd->add_option("--dim", gen.dim, "Feature dimension")->capture_default_str();
  generate_cmd->add_option("--separation", gen.separation, "Coarse center distance scale")->capture_default_str();
  generate_cmd->add_option("--within", gen.within, "Sibling fine center distance scale")->capture_default_str();
  generate_cmd->add_option("--noise", gen.noise, "Isotropic noise standard deviation")->capture_default_str();
  generate_cmd->add_option("--imbalance", gen.imbalance, "Largest/smallest fine class size ratio")
      ->capture_default_str();
  generate_cmd->add_option("--taxonomy", gen.taxonomy, "Fine-to-coarse assignment file")
      ->check(CLI::ExistingFile);
  generate_cmd->add_option("--alt-taxonomy", gen.alt_taxonomy,
                           "Second assignment: also write halves labeled by each taxonomy")
      ->check(CLI::ExistingFile);
  generate_cmd->add_option("--out", gen.out, "Output directory")->capture_default_str();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train the classifier and infer class relations");
  add_train_options(train_cmd, train);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint against fine labels");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "Dataset CSV with fine labels")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--taxonomy", ev.taxonomy, "Reference relation file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--relations", ev.relations, "Learned relations (default: from checkpoint)")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset-index", ev.dataset_index, "Which learned relation matrix to use")
      ->capture_default_str();
  eval_cmd->add_flag("--ema", ev.ema, "Predict with the EMA parameters");
  eval_cmd->add_option("--out", ev.out, "Write the metrics JSON here instead of stdout");
  eval_cmd->add_option("--seed", "Accepted for uniformity; evaluation is deterministic");

  SolveArgs sv;
  auto* solve_cmd = app.add_subcommand("solve", "Solve the relation program for a cost matrix");
  solve_cmd->add_option("--cost", sv.cost, "Cost CSV (K_C rows, K_F columns)")->required()->check(CLI::ExistingFile);
  solve_cmd->add_option("--lambda-m", sv.lambda_m, "Balance weight")->capture_default_str();
  solve_cmd->add_option("--samples", sv.samples, "Sample count N (default: sum of the cost matrix)");
  solve_cmd->add_flag("--oracle", sv.oracle, "Use exhaustive enumeration");
  solve_cmd->add_option("--out", sv.out, "Relation output file (default: stdout)");
  solve_cmd->add_option("--seed", "Accepted for uniformity; solving is deterministic");

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }

  try {
    if (generate_cmd->parsed()) return cmd_generate(gen, out);
    if (train_cmd->parsed()) return cmd_train(train, out, err);
    if (eval_cmd->parsed()) return cmd_eval(ev, out);
    if (solve_cmd->parsed()) return cmd_solve(sv, out);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace falcon::cli
