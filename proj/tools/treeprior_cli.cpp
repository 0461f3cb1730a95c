/*
 * Copyright 2026 The TabForest Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// treeprior: command-line front end.
//
// Exit codes: 0 success, 1 unexpected error, 2 usage error, 3 malformed
// input file, 4 missing column, 5 checkpoint/config mismatch, 6 degenerate
// data, 7 non-finite loss, 8 invalid argument value.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "treeprior/analysis.hpp"
#include "treeprior/io.hpp"
#include "treeprior/training.hpp"

namespace fs = std::filesystem;
using namespace treeprior;

namespace {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kMalformed = 3,
  kMissingColumn = 4,
  kMismatch = 5,
  kDegenerate = 6,
  kNonFinite = 7,
  kBadValue = 8,
};

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Range flags accept "V" or "LO,HI".
IntRange to_int_range(const std::vector<int>& v, const char* flag) {
  if (v.size() == 1) return {v[0], v[0]};
  if (v.size() == 2) return {v[0], v[1]};
  throw UsageError(std::string(flag) + " takes one value or LO,HI");
}

RealRange to_real_range(const std::vector<double>& v, const char* flag) {
  if (v.size() == 1) return {v[0], v[0]};
  if (v.size() == 2) return {v[0], v[1]};
  throw UsageError(std::string(flag) + " takes one value or LO,HI");
}

struct ForestFlags {
  std::vector<int> base_size, dataset_size, tree_depth, n_features, n_classes;
  std::vector<double> categorical_ratio;
  int tree_depth_max = -1;
  int base_size_max = -1;
  double class_balance = -1.0;

  void attach(CLI::App* app) {
    app->add_option("--base-size", base_size, "Observations the generating tree is fit on (V or LO,HI)")->delimiter(',')->expected(1, 2);
    app->add_option("--base-size-max", base_size_max, "Upper base-size bound");
    app->add_option("--dataset-size", dataset_size, "Rows per generated dataset (V or LO,HI)")->delimiter(',')->expected(1, 2);
    app->add_option("--tree-depth", tree_depth, "Depth cap of the generating tree (V or LO,HI)")->delimiter(',')->expected(1, 2);
    app->add_option("--tree-depth-max", tree_depth_max, "Upper tree-depth bound");
    app->add_option("--n-features", n_features, "Feature count (V or LO,HI)")->delimiter(',')->expected(1, 2);
    app->add_option("--n-classes", n_classes, "Class count (V or LO,HI)")->delimiter(',')->expected(1, 2);
    app->add_option("--categorical-ratio", categorical_ratio, "Fraction of categorical features (V or LO,HI)")->delimiter(',')->expected(1, 2);
    app->add_option("--class-balance", class_balance, "Reject datasets whose class shares differ from 1/k by more than this");
  }

  void apply(ForestGenBounds& b, GenerationLimits& limits) const {
    if (!base_size.empty()) b.base_size = to_int_range(base_size, "--base-size");
    if (base_size_max > 0) b.base_size.hi = base_size_max;
    if (!dataset_size.empty()) b.dataset_size = to_int_range(dataset_size, "--dataset-size");
    if (!tree_depth.empty()) b.tree_depth = to_int_range(tree_depth, "--tree-depth");
    if (tree_depth_max > 0) b.tree_depth.hi = tree_depth_max;
    if (!n_features.empty()) b.n_features = to_int_range(n_features, "--n-features");
    if (!n_classes.empty()) b.n_classes = to_int_range(n_classes, "--n-classes");
    if (!categorical_ratio.empty()) b.categorical_ratio = to_real_range(categorical_ratio, "--categorical-ratio");
    if (class_balance >= 0) limits.class_balance_tolerance = class_balance;
    b.validate();
  }
};

struct NeuralFlags {
  std::vector<int> dataset_size, n_features, n_classes, hidden_layers, hidden_width;
  std::vector<double> noise_scale;

  void attach(CLI::App* app) {
    app->add_option("--dataset-size", dataset_size, "Rows per dataset (V or LO,HI)")->delimiter(',')->expected(1, 2);
    app->add_option("--n-features", n_features, "Feature count (V or LO,HI)")->delimiter(',')->expected(1, 2);
    app->add_option("--n-classes", n_classes, "Class count (V or LO,HI)")->delimiter(',')->expected(1, 2);
    app->add_option("--hidden-layers", hidden_layers, "Hidden layers (V or LO,HI)")->delimiter(',')->expected(1, 2);
    app->add_option("--hidden-width", hidden_width, "Hidden width (V or LO,HI)")->delimiter(',')->expected(1, 2);
    app->add_option("--noise-scale", noise_scale, "Output noise (V or LO,HI)")->delimiter(',')->expected(1, 2);
  }

  void apply(NeuralGenBounds& b) const {
    if (!dataset_size.empty()) b.dataset_size = to_int_range(dataset_size, "--dataset-size");
    if (!n_features.empty()) b.n_features = to_int_range(n_features, "--n-features");
    if (!n_classes.empty()) b.n_classes = to_int_range(n_classes, "--n-classes");
    if (!hidden_layers.empty()) b.hidden_layers = to_int_range(hidden_layers, "--hidden-layers");
    if (!hidden_width.empty()) b.hidden_width = to_int_range(hidden_width, "--hidden-width");
    if (!noise_scale.empty()) b.noise_scale = to_real_range(noise_scale, "--noise-scale");
    b.validate();
  }
};

void emit(const std::string& path, const std::string& bytes) {
  if (path.empty() || path == "-") {
    std::fwrite(bytes.data(), 1, bytes.size(), stdout);
    std::fflush(stdout);
  } else {
    write_file(path, bytes);
  }
}

// Writes generated datasets to DIR (one file each) or, without DIR, their
// CSVs to stdout separated by blank lines.
void write_datasets(const std::vector<RawDataset>& sets, const std::string& out_dir, const std::string& format,
                    std::uint64_t seed, const char* generator) {
  if (out_dir.empty()) {
    std::string all;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      if (i) all += "\n";
      all += dataset_to_csv(sets[i]);
    }
    emit("", all);
    return;
  }
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%05zu.%s", generator, i, format == "csv" ? "csv" : "tfep");
    const std::string bytes =
        format == "csv" ? dataset_to_csv(sets[i]) : encode_episode(episode_from_dataset(sets[i], seed, generator));
    write_file(fs::path(out_dir) / name, bytes);
  }
}

template <typename Fn>
std::vector<RawDataset> generate_all(std::size_t count, std::size_t threads, Fn&& make) {
  std::vector<RawDataset> out(count);
  // Dataset i depends only on its own stream, so workers may take any slice.
  threads = std::max<std::size_t>(1, std::min(threads, count));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += threads) out[i] = make(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

ModelParams<float> load_params(const std::string& path) { return decode_checkpoint(read_file(path)).params; }

RawDataset require_target(const CsvTable& t, const std::string& what) {
  if (!t.has_target) throw MissingColumnError(what + ": no target column '" + t.schema.target + "'");
  return t.data;
}

std::string predictions_csv(const Tensor<float>& probs, const CsvSchema& schema) {
  std::string out;
  for (std::size_t c = 0; c < probs.cols(); ++c) out += "p_" + schema.classes[c] + ",";
  out += "label\n";
  const auto labels = argmax_rows(probs);
  char buf[32];
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    for (std::size_t c = 0; c < probs.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.9g,", static_cast<double>(probs(r, c)));
      out += buf;
    }
    out += schema.classes[static_cast<std::size_t>(labels[r])] + "\n";
  }
  return out;
}

// Splits off a validation part of train when none is given: 20% of rows,
// at least one, chosen by the run seed.
std::pair<RawDataset, RawDataset> holdout(const RawDataset& train, std::uint64_t seed) {
  if (train.size() < 3) throw DegenerateDatasetError("training set needs at least 3 rows to hold out validation rows");
  Rng rng(seed, 7);
  const auto perm = random_permutation(train.size(), rng);
  const std::size_t n_val = std::max<std::size_t>(1, train.size() / 5);
  std::vector<std::size_t> v(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> t(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  return {train.subset(t), train.subset(v)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic tabular data, in-context transformer training and decision-boundary analysis."};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  app.add_option("--seed", seed, "Master seed")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads; outputs do not depend on it")->envname("TREEPRIOR_THREADS");

  // gen-forest
  auto* gen_forest = app.add_subcommand("gen-forest", "Generate forest-prior datasets");
  std::size_t count = 1;
  std::string out_dir, format = "tfep";
  ForestFlags forest_flags;
  for (auto* sub : {gen_forest}) {
    sub->add_option("--seed", seed, "Master seed");
    sub->add_option("--count", count, "Number of datasets");
    sub->add_option("--out", out_dir, "Output directory (stdout CSV when omitted)");
    sub->add_option("--format", format, "tfep or csv")->check(CLI::IsMember({"tfep", "csv"}));
  }
  forest_flags.attach(gen_forest);

  // gen-neural
  auto* gen_neural = app.add_subcommand("gen-neural", "Generate neural-prior datasets");
  NeuralFlags neural_flags;
  gen_neural->add_option("--seed", seed, "Master seed");
  gen_neural->add_option("--count", count, "Number of datasets");
  gen_neural->add_option("--out", out_dir, "Output directory (stdout CSV when omitted)");
  gen_neural->add_option("--format", format, "tfep or csv")->check(CLI::IsMember({"tfep", "csv"}));
  neural_flags.attach(gen_neural);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Pretrain on synthetic episodes");
  double p_forest = 0.5;
  std::int64_t steps = -1;
  std::string preset = "desk", ckpt_out, log_path;
  std::size_t batch_size = 0;
  double lr = -1;
  ForestFlags pre_forest;
  pre->add_option("--p-forest", p_forest, "Probability an episode comes from the forest generator");
  pre->add_option("--steps", steps, "Optimizer steps (preset default when omitted)");
  pre->add_option("--preset", preset, "desk or reference")->check(CLI::IsMember({"desk", "reference"}))->envname("TREEPRIOR_PRESET");
  pre->add_option("--seed", seed, "Master seed");
  pre->add_option("--batch-size", batch_size, "Episodes per step");
  pre->add_option("--lr", lr, "Peak learning rate");
  pre->add_option("--out", ckpt_out, "Checkpoint path")->required();
  pre->add_option("--log", log_path, "JSONL progress log (stdout when omitted)");
  pre_forest.attach(pre);

  // finetune
  auto* fine = app.add_subcommand("finetune", "Fine-tune a checkpoint on a CSV dataset");
  std::string ckpt_in, train_path, val_path, test_path, target, report_path;
  bool no_early_stop = false;
  FinetuneConfig ft;
  fine->add_option("--ckpt", ckpt_in, "Input checkpoint")->required();
  fine->add_option("--train", train_path, "Training CSV")->required();
  fine->add_option("--val", val_path, "Validation CSV")->required();
  fine->add_option("--target", target, "Target column")->required();
  fine->add_flag("--no-early-stop", no_early_stop, "Run every step");
  fine->add_option("--max-steps", ft.max_steps, "Step limit");
  fine->add_option("--patience", ft.patience, "Steps without improvement before stopping");
  fine->add_option("--lr", ft.lr, "Learning rate");
  fine->add_option("--seed", seed, "Master seed");
  fine->add_option("--out", ckpt_out, "Fine-tuned checkpoint path")->required();
  fine->add_option("--report", report_path, "Report JSON path (stdout when omitted)");

  // predict
  auto* pred = app.add_subcommand("predict", "Class probabilities for a test CSV");
  bool zero_shot = false;
  std::string preds_out;
  pred->add_option("--ckpt", ckpt_in, "Checkpoint")->required();
  pred->add_option("--train", train_path, "Training CSV (the support set)")->required();
  pred->add_option("--test", test_path, "Test CSV")->required();
  pred->add_option("--target", target, "Target column")->required();
  pred->add_option("--val", val_path, "Validation CSV for fine-tuning (20% of train when omitted)");
  pred->add_flag("--zero-shot", zero_shot, "Skip fine-tuning");
  pred->add_option("--max-steps", ft.max_steps, "Fine-tuning step limit");
  pred->add_option("--seed", seed, "Master seed");
  pred->add_option("--out", preds_out, "Output CSV (stdout when omitted)");

  // boundary
  auto* bnd = app.add_subcommand("boundary", "Probability grid over two features and its complexity score");
  std::vector<std::size_t> features;
  std::size_t resolution = 100;
  std::string grid_out, pgm_out;
  bnd->add_option("--ckpt", ckpt_in, "Checkpoint")->required();
  bnd->add_option("--train", train_path, "Training CSV")->required();
  bnd->add_option("--test", test_path, "Test CSV")->required();
  bnd->add_option("--target", target, "Target column")->required();
  bnd->add_option("--features", features, "Two feature indices")->expected(2)->required();
  bnd->add_option("--resolution", resolution, "Cells per axis");
  bnd->add_option("--seed", seed, "Master seed");
  bnd->add_option("--out", grid_out, "Grid CSV")->required();
  bnd->add_option("--pgm", pgm_out, "Optional grayscale image");

  // eval
  auto* ev = app.add_subcommand("eval", "Accuracy, normalized accuracy and rank tables");
  std::string results_path, json_out;
  ev->add_option("--results", results_path, "Results JSON")->required();
  ev->add_option("--json", json_out, "Also write the summary as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (gen_forest->parsed()) {
      ForestGenBounds bounds;
      GenerationLimits limits;
      forest_flags.apply(bounds, limits);
      const Rng root(seed);
      const auto sets = generate_all(count, threads, [&](std::size_t i) {
        const Rng r = root.derive(i);
        Rng cfg_rng = r.derive(0);
        const ForestGenConfig cfg = sample_config(bounds, cfg_rng, seed, i);
        return generate_forest_dataset(cfg, r.derive(1), limits);
      });
      write_datasets(sets, out_dir, format, seed, "forest");
    } else if (gen_neural->parsed()) {
      NeuralGenBounds bounds;
      neural_flags.apply(bounds);
      const Rng root(seed);
      const auto sets = generate_all(count, threads, [&](std::size_t i) {
        const Rng r = root.derive(i);
        Rng cfg_rng = r.derive(0);
        const NeuralGenConfig cfg = sample_neural_config(bounds, cfg_rng, seed, i);
        return generate_neural_dataset(cfg, r.derive(1));
      });
      write_datasets(sets, out_dir, format, seed, "neural");
    } else if (pre->parsed()) {
      const bool full = preset == "reference";
      PretrainConfig pc = full ? PretrainConfig::reference() : PretrainConfig::desk();
      const ModelConfig mc = full ? ModelConfig::reference() : ModelConfig::desk();
      if (steps >= 0) pc.steps = steps;
      if (batch_size > 0) pc.batch_size = batch_size;
      if (lr > 0) pc.lr = lr;
      pc.seed = seed;
      pc.threads = threads;
      pc.source.policy.p_forest = p_forest;
      pre_forest.apply(pc.source.forest, pc.source.limits);
      std::FILE* log = log_path.empty() ? stdout : std::fopen(log_path.c_str(), "wb");
      if (!log) throw std::runtime_error("cannot write " + log_path);
      const auto result = pretrain(mc, pc, [&](const LogRecord& r) {
        std::fprintf(log, "%s\n", r.to_json().c_str());
        std::fflush(log);
      });
      if (log != stdout) std::fclose(log);
      write_file(ckpt_out, encode_checkpoint({result.params, seed, pc.steps, pretrain_digest(pc)}));
    } else if (fine->parsed()) {
      const Checkpoint ck = decode_checkpoint(read_file(ckpt_in));
      const CsvTable train = read_csv_file(train_path, target);
      const CsvTable val = read_csv_file(val_path, target, &train.schema);
      ft.seed = seed;
      ft.early_stop = !no_early_stop;
      const auto result = finetune(ck.params, train.data, require_target(val, "validation CSV"), ft);
      write_file(ckpt_out, encode_checkpoint({result.params, ck.seed, ck.step + result.report.best_step, ck.pretrain_digest}));
      emit(report_path, result.report.to_json() + "\n");
    } else if (pred->parsed()) {
      ModelParams<float> params = load_params(ckpt_in);
      const CsvTable train = read_csv_file(train_path, target);
      const CsvTable test = read_csv_file(test_path, target, &train.schema);
      RawDataset support = train.data;
      if (!zero_shot) {
        RawDataset fit = train.data, val;
        if (val_path.empty()) {
          std::tie(fit, val) = holdout(train.data, seed);
        } else {
          val = require_target(read_csv_file(val_path, target, &train.schema), "validation CSV");
        }
        ft.seed = seed;
        params = finetune(params, fit, val, ft).params;
      }
      Rng rng(seed, 3);
      const auto probs = zero_shot_predict(params, support, test.data.X, EpisodeCaps{8192, 1024}, rng);
      emit(preds_out, predictions_csv(probs, train.schema));
    } else if (bnd->parsed()) {
      const ModelParams<float> params = load_params(ckpt_in);
      const CsvTable train = read_csv_file(train_path, target);
      const CsvTable test = read_csv_file(test_path, target, &train.schema);
      Rng rng(seed, 4);
      const auto grid = boundary_grid(params, train.data, test.data.X, features[0], features[1], resolution, resolution,
                                      EpisodeCaps{8192, 1024}, rng);
      write_file(grid_out, grid_to_csv(grid));
      if (!pgm_out.empty()) write_file(pgm_out, grid_to_pgm(grid));
      std::printf("complexity %.9g\n", complexity_score(grid));
    } else if (ev->parsed()) {
      const auto rows = rank_table(results_from_json(read_file(results_path)));
      std::fputs(summary_to_text(rows).c_str(), stdout);
      if (!json_out.empty()) write_file(json_out, summary_to_json(rows));
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMalformed;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: malformed JSON: %s\n", e.what());
    return kMalformed;
  } catch (const MissingColumnError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMissingColumn;
  } catch (const ConfigMismatchError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMismatch;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMismatch;
  } catch (const DegenerateDatasetError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDegenerate;
  } catch (const NonFiniteError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNonFinite;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kBadValue;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUnexpected;
  }
  return kOk;
}
