// cgp: synthesize trajectory datasets, train the class-guided predictor and
// its baselines, evaluate, and render prediction figures.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cgp/baselines.hpp"
#include "cgp/checkpoint.hpp"
#include "cgp/data.hpp"
#include "cgp/evaluation.hpp"
#include "cgp/manifest.hpp"
#include "cgp/network.hpp"
#include "cgp/prediction.hpp"
#include "cgp/svg.hpp"
#include "cgp/synthetic.hpp"
#include "cgp/training.hpp"
#include "cgp/util.hpp"
#include "cgp/version.hpp"

namespace fs = std::filesystem;
using namespace cgp;

namespace {

std::vector<int> parse_int_list(const std::string& csv, const char* flag) {
  std::vector<int> out;
  for (const auto& part : split(csv, ',')) {
    if (part.empty()) continue;
    try {
      out.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw CLI::ValidationError(flag, "bad integer '" + part + "'");
    }
  }
  if (out.empty()) throw CLI::ValidationError(flag, "empty list");
  return out;
}

std::string threads_setting() {
  if (const char* env = std::getenv("CGP_THREADS")) return env;
  return "auto";
}

struct TrainedModels {
  std::optional<CgpModel> cgp;
  std::optional<MdnModel> mdn;
  std::optional<DlstmModel> dlstm;
  NnIndex nn;

  ModelRef ref() const {
    if (cgp) return ModelRef::of(*cgp);
    if (mdn) return ModelRef::of(*mdn);
    if (dlstm) return ModelRef::of(*dlstm);
    return ModelRef::of(nn);
  }
};

TrainedModels load_model(const std::string& ckpt_path) {
  const LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  TrainedModels models;
  switch (ckpt.kind) {
    case ModelKind::cgp: {
      CgpModel m = init_model(ckpt.cfg, 0);
      restore_parameters(ckpt, m.parameters());
      models.cgp = std::move(m);
      break;
    }
    case ModelKind::mdn: {
      MdnModel m = init_mdn(ckpt.cfg.components, ckpt.cfg.hidden, 0, ckpt.cfg.input_dim);
      restore_parameters(ckpt, m.parameters());
      models.mdn = std::move(m);
      break;
    }
    case ModelKind::dlstm: {
      DlstmModel m = init_dlstm(ckpt.cfg.hidden, 0, ckpt.cfg.input_dim);
      restore_parameters(ckpt, m.parameters());
      models.dlstm = std::move(m);
      break;
    }
  }
  return models;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path))
    throw CLI::ValidationError(what, "file not found: " + path);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  require_file(a.config, "--config");
  const std::string meta_path = a.out + ".meta.json";
  const std::string manifest_path = a.out + ".manifest.json";

  RunManifest manifest;
  manifest.command = "synth";
  manifest.options = {{"config", a.config}, {"out", a.out}, {"seed", a.seed}};
  manifest.inputs = {a.config};
  manifest.outputs = {a.out, meta_path};
  manifest.write(manifest_path);

  const SynthConfig cfg = load_synth_config(a.config);
  SynthMeta meta;
  const auto samples = synth_generate(cfg, a.seed, &meta);
  save_trajectories(a.out, samples);
  save_synth_meta(meta_path, meta);
  std::cerr << "synth: wrote " << samples.size() << " samples to " << a.out
            << " (first divergence at step " << meta.first_divergence_step << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string model = "cgp";
  std::string data, out;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 42;
  int hidden = 128;
  int components = 0;  // 0: per-kind default (4 per class for cgp, 40 total for mdn)
  int classes = 0;     // 0: infer from data
  double lr = 1e-3;
  int batch = 32;
  int patience = 10;
  int max_epochs = 200;
  bool no_sigma_floor = false;
};

int run_train(const TrainArgs& a) {
  require_file(a.data, "--data");
  const ModelKind kind = model_kind_from(a.model);
  fs::create_directories(a.out);
  const std::string ckpt_path = (fs::path(a.out) / "checkpoint.cgpt").string();
  const std::string log_path = (fs::path(a.out) / "train_log.tsv").string();
  const std::string manifest_path = (fs::path(a.out) / "manifest.json").string();

  auto samples = load_trajectories(a.data, a.classes);
  if (samples.empty()) throw std::runtime_error("train: dataset is empty");
  const int num_classes = samples[0].num_classes;
  const int components = a.components > 0 ? a.components : (kind == ModelKind::mdn ? 40 : 4);

  RunManifest manifest;
  manifest.command = "train";
  manifest.options = {{"model", a.model},
                      {"data", a.data},
                      {"out", a.out},
                      {"seed", a.seed},
                      {"split_seed", a.split_seed},
                      {"hidden", a.hidden},
                      {"components", components},
                      {"classes", num_classes},
                      {"lr", a.lr},
                      {"batch", a.batch},
                      {"patience", a.patience},
                      {"max_epochs", a.max_epochs},
                      {"sigma_floor", !a.no_sigma_floor},
                      {"threads", threads_setting()}};
  manifest.inputs = {a.data};
  manifest.outputs = {ckpt_path, log_path};
  manifest.write(manifest_path);

  const auto prepared = preprocess_all(samples);
  const DatasetSplit sp = split_dataset(prepared, a.split_seed);
  const auto train_set = gather(prepared, sp.train);
  const auto val_set = gather(prepared, sp.validation);

  TrainConfig cfg;
  cfg.learning_rate = a.lr;
  cfg.batch_size = a.batch;
  cfg.max_epochs = a.max_epochs;
  cfg.patience = a.patience;
  cfg.seed = a.seed;
  cfg.sigma_floor = !a.no_sigma_floor;

  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw std::runtime_error("train: cannot open " + log_path);
  log << "epoch\ttrain_loss\tval_loss\n";
  const auto on_epoch = [&](const EpochRecord& r) {
    log << r.epoch << '\t' << fmt_double(r.train_loss) << '\t' << fmt_double(r.val_loss) << '\n';
    log.flush();
    std::fprintf(stderr, "epoch %4d  train %.6f  val %.6f  (%.0f ms)\n", r.epoch, r.train_loss,
                 r.val_loss, r.wall_ms);
  };

  NetConfig net;
  net.num_classes = num_classes;
  net.components = components;
  net.hidden = a.hidden;
  TrainHistory history;
  if (kind == ModelKind::cgp) {
    if (num_classes < 2)
      throw std::runtime_error("train: cgp needs at least 2 classes, dataset has " +
                               std::to_string(num_classes));
    CgpModel model = init_model(net, a.seed);
    const auto save = [&] { save_checkpoint(ckpt_path, kind, model.cfg, model.parameters()); };
    history = train_cgp(model, train_set, val_set, cfg, on_epoch, save);
    save();
  } else if (kind == ModelKind::mdn) {
    MdnModel model = init_mdn(components, a.hidden, a.seed);
    const auto save = [&] { save_checkpoint(ckpt_path, kind, model.cfg, model.parameters()); };
    history = train_mdn(model, train_set, val_set, cfg, on_epoch, save);
    save();
  } else {
    DlstmModel model = init_dlstm(a.hidden, a.seed);
    const auto save = [&] { save_checkpoint(ckpt_path, kind, model.cfg, model.parameters()); };
    history = train_dlstm(model, train_set, val_set, cfg, on_epoch, save);
    save();
  }

  if (a.max_epochs == 0)
    std::cerr << "warning: --max-epochs 0, checkpoint holds the untrained weights\n";
  else
    std::cerr << "train: best validation loss " << history.best_val << " at epoch "
              << history.best_epoch << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, out;
  std::string model;  // "nn" evaluates the nearest-neighbor baseline instead of a checkpoint
  std::string metrics = "rmse1,rmse2,rmse3,nll";
  std::string t_list = "15";
  std::string dt_list = "1,2,3,4,5,6,7,8,9,10";
  int samples = 20;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 42;
};

int run_eval(const EvalArgs& a) {
  require_file(a.data, "--data");
  const bool use_nn = a.model == "nn";
  if (!use_nn) {
    if (a.ckpt.empty()) throw CLI::ValidationError("--ckpt", "required unless --model nn");
    require_file(a.ckpt, "--ckpt");
  }
  fs::create_directories(a.out);
  const std::string report_path = (fs::path(a.out) / "report.tsv").string();
  const std::string summary_path = (fs::path(a.out) / "summary.txt").string();
  const std::string manifest_path = (fs::path(a.out) / "manifest.json").string();

  EvalConfig cfg;
  cfg.n_samples = a.samples;
  cfg.ts = parse_int_list(a.t_list, "--t");
  cfg.dts = parse_int_list(a.dt_list, "--dt");
  cfg.seed = a.seed;

  RunManifest manifest;
  manifest.command = "eval";
  manifest.options = {{"ckpt", a.ckpt},
                      {"data", a.data},
                      {"out", a.out},
                      {"model", use_nn ? "nn" : ""},
                      {"metrics", a.metrics},
                      {"t", cfg.ts},
                      {"dt", cfg.dts},
                      {"samples", cfg.n_samples},
                      {"seed", a.seed},
                      {"split_seed", a.split_seed},
                      {"threads", threads_setting()}};
  manifest.inputs = use_nn ? std::vector<std::string>{a.data}
                           : std::vector<std::string>{a.ckpt, a.data};
  manifest.outputs = {report_path, summary_path};
  manifest.write(manifest_path);

  const auto prepared = preprocess_all(load_trajectories(a.data));
  const DatasetSplit sp = split_dataset(prepared, a.split_seed);
  const auto test_set = gather(prepared, sp.test);

  TrainedModels models;
  if (use_nn)
    models.nn = build_nn_index(gather(prepared, sp.train));
  else
    models = load_model(a.ckpt);

  const MetricReport report = evaluate(models.ref(), test_set, split(a.metrics, ','), cfg);
  write_report(report_path, report);
  const std::string summary = summary_table(report);
  write_text_file(summary_path, summary);
  std::cout << summary;
  for (const auto& note : report.notes) std::cerr << "warning: " << note << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string ckpt, data, out;
  std::string item;  // test-set index or sample id; default first test item
  std::string t_list = "15";
  std::string dt_list = "10";
  int n = 100;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 42;
  std::string dump;
};

int run_sample(const SampleArgs& a) {
  require_file(a.ckpt, "--ckpt");
  require_file(a.data, "--data");

  const std::vector<int> ts = parse_int_list(a.t_list, "--t");
  const std::vector<int> dts = parse_int_list(a.dt_list, "--dt");

  RunManifest manifest;
  manifest.command = "sample";
  manifest.options = {{"ckpt", a.ckpt},   {"data", a.data},       {"out", a.out},
                      {"item", a.item},   {"t", ts},              {"dt", dts},
                      {"n", a.n},         {"seed", a.seed},       {"split_seed", a.split_seed},
                      {"dump", a.dump}};
  manifest.inputs = {a.ckpt, a.data};
  manifest.outputs = {a.out};
  if (!a.dump.empty()) manifest.outputs.push_back(a.dump);
  manifest.write(a.out + ".manifest.json");

  const auto prepared = preprocess_all(load_trajectories(a.data));
  const DatasetSplit sp = split_dataset(prepared, a.split_seed);
  const auto test_set = gather(prepared, sp.test);
  if (test_set.empty()) throw std::runtime_error("sample: empty test set");

  const TrajectorySample* item = &test_set[0];
  if (!a.item.empty()) {
    item = nullptr;
    try {
      const std::size_t idx = std::stoul(a.item);
      if (idx < test_set.size()) item = &test_set[idx];
    } catch (const std::exception&) {
    }
    if (!item)
      for (const auto& s : test_set)
        if (s.id == a.item) {
          item = &s;
          break;
        }
    if (!item) throw std::runtime_error("sample: item '" + a.item + "' not in the test set");
  }

  const TrainedModels models = load_model(a.ckpt);
  const std::string svg = render_prediction_svg(models.ref(), *item, ts, dts, a.n, a.seed);
  write_text_file(a.out, svg);

  if (!a.dump.empty()) {
    if (!models.cgp) throw std::runtime_error("sample: --dump requires a cgp checkpoint");
    const RelativeSequence full = to_relative(*item);
    RelativeSequence prefix{full.origin,
                            {full.deltas.begin(), full.deltas.begin() + (ts.front() - 1)}};
    const auto rollouts = rollout_batch(*models.cgp, prefix, dts.front(), a.n, a.seed);
    std::ofstream out(a.dump, std::ios::binary);
    if (!out) throw std::runtime_error("sample: cannot open " + a.dump);
    for (std::size_t i = 0; i < rollouts.size(); ++i)
      out << rollout_record(item->id + "#" + std::to_string(i), item->label, rollouts[i]) << '\n';
  }
  std::cerr << "sample: wrote " << a.out << " (item " << item->id << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"class-guided probabilistic handwriting trajectory prediction"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic bifurcating dataset");
  synth->add_option("--config", synth_args.config, "synthetic config (json)")->required();
  synth->add_option("--out", synth_args.out, "output trajectory file")->required();
  synth->add_option("--seed", synth_args.seed, "rng seed");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--model", train_args.model, "cgp|mdn|dlstm")
      ->check(CLI::IsMember({"cgp", "mdn", "dlstm"}));
  train->add_option("--data", train_args.data, "trajectory file")->required();
  train->add_option("--out", train_args.out, "output directory")->required();
  train->add_option("--seed", train_args.seed, "rng seed");
  train->add_option("--split-seed", train_args.split_seed, "dataset split seed");
  train->add_option("--hidden", train_args.hidden, "LSTM hidden size per layer");
  train->add_option("--components", train_args.components,
                    "mixture components (per class for cgp, total for mdn)");
  train->add_option("--classes", train_args.classes, "class count (0 = infer)");
  train->add_option("--lr", train_args.lr, "learning rate");
  train->add_option("--batch", train_args.batch, "batch size");
  train->add_option("--patience", train_args.patience, "early-stop patience (epochs)");
  train->add_option("--max-epochs", train_args.max_epochs, "epoch cap");
  train->add_flag("--no-sigma-floor", train_args.no_sigma_floor,
                  "disable the log-sigma floor in the mixture head");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "compute metrics on the test split");
  eval->add_option("--ckpt", eval_args.ckpt, "checkpoint file");
  eval->add_option("--data", eval_args.data, "trajectory file")->required();
  eval->add_option("--out", eval_args.out, "output directory")->required();
  eval->add_option("--model", eval_args.model, "evaluate a checkpoint-free baseline: nn");
  eval->add_option("--metrics", eval_args.metrics,
                   "comma list: rmse1,rmse2,rmse3,nll,class_rmse,freq");
  eval->add_option("--t", eval_args.t_list, "input times (comma list)");
  eval->add_option("--dt", eval_args.dt_list, "horizons (comma list)");
  eval->add_option("--samples", eval_args.samples, "rollouts per test item");
  eval->add_option("--seed", eval_args.seed, "rng seed");
  eval->add_option("--split-seed", eval_args.split_seed, "dataset split seed");

  SampleArgs sample_args;
  auto* sample = app.add_subcommand("sample", "render prediction rollouts as svg");
  sample->add_option("--ckpt", sample_args.ckpt, "checkpoint file")->required();
  sample->add_option("--data", sample_args.data, "trajectory file")->required();
  sample->add_option("--out", sample_args.out, "output svg")->required();
  sample->add_option("--item", sample_args.item, "test item index or id");
  sample->add_option("--t", sample_args.t_list, "prefix lengths (comma list)");
  sample->add_option("--dt", sample_args.dt_list, "horizons (comma list)");
  sample->add_option("--n", sample_args.n, "rollouts per panel");
  sample->add_option("--seed", sample_args.seed, "rng seed");
  sample->add_option("--split-seed", sample_args.split_seed, "dataset split seed");
  sample->add_option("--dump", sample_args.dump,
                     "also dump rollouts (trajectory format + class column)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return run_synth(synth_args);
    if (train->parsed()) return run_train(train_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (sample->parsed()) return run_sample(sample_args);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
