#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmsa/checkpoint.hpp"
#include "mmsa/errors.hpp"
#include "mmsa/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmsa;

namespace {

// Sub-stream salts for the seeded pieces the CLI owns. train() and the late
// fusion pipeline use their own salts off the same user seed.
constexpr uint64_t kSplitSalt = 40;
constexpr uint64_t kInitSalt = 41;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void print_time(const std::string& label, Clock::time_point start) {
  std::printf("# time: %s %.1fs\n", label.c_str(), seconds_since(start));
}

std::string percent(Scalar v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", double(v) * 100.0);
  return buf;
}

struct HyperOptions {
  int model_dim = 32;
  int heads = 4;
  int ff_dim = 64;
  int layers = 1;
  int max_seq_len = 64;
  double dropout = 0.1;
  int fusion_hidden = 64;

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int epochs = 30;
  uint64_t seed = 7;

  double train_frac = 0.7;
  double val_frac = 0.15;
  double test_frac = 0.15;
};

void add_model_options(CLI::App* cmd, HyperOptions& h) {
  cmd->add_option("--model-dim", h.model_dim, "Shared encoder width");
  cmd->add_option("--heads", h.heads, "Attention heads per layer");
  cmd->add_option("--ff-dim", h.ff_dim, "Feed-forward hidden width");
  cmd->add_option("--layers", h.layers, "Encoder layers per modality");
  cmd->add_option("--max-seq-len", h.max_seq_len, "Positional encoding capacity");
  cmd->add_option("--dropout", h.dropout, "Dropout rate during training");
  cmd->add_option("--fusion-hidden", h.fusion_hidden, "Fusion classifier hidden width");
  cmd->add_option("--lr", h.lr, "Adam learning rate");
  cmd->add_option("--beta1", h.beta1, "Adam first-moment decay");
  cmd->add_option("--beta2", h.beta2, "Adam second-moment decay");
  cmd->add_option("--adam-eps", h.adam_eps, "Adam denominator epsilon");
  cmd->add_option("--batch-size", h.batch_size, "Samples per optimizer step");
  cmd->add_option("--epochs", h.epochs, "Training epochs");
  cmd->add_option("--train-frac", h.train_frac, "Training split fraction");
  cmd->add_option("--val-frac", h.val_frac, "Validation split fraction");
  cmd->add_option("--test-frac", h.test_frac, "Test split fraction");
}

void add_config_file(CLI::App* cmd, std::string& path) {
  cmd->add_option("--config", path, "Flat key=value settings file; flags win");
}

// Applies a flat key=value settings file to one subcommand. Keys are option
// names without the leading dashes; values given on the command line win.
void apply_config_file(CLI::App& cmd, const std::string& path) {
  std::ifstream file(path);
  if (!file) throw CLI::FileError::Missing(path);
  std::set<std::string> seen;
  std::string line;
  for (int line_no = 1; std::getline(file, line); ++line_no) {
    std::string text = CLI::detail::trim_copy(line);
    if (text.empty() || text[0] == '#') continue;
    auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw CLI::ConfigError(path + ":" + std::to_string(line_no) +
                             ": expected key=value, got \"" + text + "\"");
    }
    std::string key = CLI::detail::trim_copy(text.substr(0, eq));
    std::string value = CLI::detail::trim_copy(text.substr(eq + 1));
    if (key.empty()) {
      throw CLI::ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
    }
    if (!seen.insert(key).second) {
      throw CLI::ConfigError(path + ": duplicate config key: " + key);
    }
    CLI::Option* opt = key == "config" ? nullptr : cmd.get_option_no_throw("--" + key);
    if (opt == nullptr) throw CLI::ConfigError(path + ": unknown config key: " + key);
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

EncoderConfig encoder_config(const HyperOptions& h) {
  EncoderConfig cfg;
  cfg.model_dim = h.model_dim;
  cfg.num_heads = h.heads;
  cfg.ff_dim = h.ff_dim;
  cfg.num_layers = h.layers;
  cfg.max_seq_len = h.max_seq_len;
  cfg.dropout_rate = Scalar(h.dropout);
  return cfg;
}

TrainConfig train_config(const HyperOptions& h, Approach approach) {
  TrainConfig cfg;
  cfg.approach = approach;
  cfg.learning_rate = Scalar(h.lr);
  cfg.beta1 = Scalar(h.beta1);
  cfg.beta2 = Scalar(h.beta2);
  cfg.eps = Scalar(h.adam_eps);
  cfg.batch_size = h.batch_size;
  cfg.epochs = h.epochs;
  cfg.seed = h.seed;
  return cfg;
}

std::map<std::string, std::string> settings_echo(const HyperOptions& h, Approach approach) {
  std::map<std::string, std::string> echo;
  echo["approach"] = approach_name(approach);
  echo["seed"] = std::to_string(h.seed);
  echo["epochs"] = std::to_string(h.epochs);
  echo["batch_size"] = std::to_string(h.batch_size);
  echo["lr"] = format_scalar(Scalar(h.lr));
  echo["beta1"] = format_scalar(Scalar(h.beta1));
  echo["beta2"] = format_scalar(Scalar(h.beta2));
  echo["adam_eps"] = format_scalar(Scalar(h.adam_eps));
  echo["train_frac"] = format_scalar(Scalar(h.train_frac));
  echo["val_frac"] = format_scalar(Scalar(h.val_frac));
  echo["test_frac"] = format_scalar(Scalar(h.test_frac));
  return echo;
}

void write_metrics_csv(const fs::path& path, const TrainHistory& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (size_t e = 0; e < history.size(); ++e) {
    out << (e + 1) << ',' << format_scalar(history[e].train_loss) << ','
        << format_scalar(history[e].train_accuracy) << ','
        << format_scalar(history[e].val_loss) << ','
        << format_scalar(history[e].val_accuracy) << '\n';
  }
  if (!out) throw IoError("write failed on " + path.string());
}

struct RunResult {
  Scalar test_accuracy = 0;
  std::array<Scalar, 3> unimodal_accuracy{};
  bool voted = false;
};

// One full training run: split, train, save the checkpoint plus metrics and
// the test split, then reload the checkpoint and score it, so the reported
// accuracy is exactly what cmd_eval reproduces from the artifacts.
RunResult run_training(const Dataset& full, Approach approach, const HyperOptions& h,
                       const fs::path& outdir, const std::string& warm_start) {
  fs::create_directories(outdir);
  SplitRatios ratios{h.train_frac, h.val_frac, h.test_frac};
  SplitDataset splits = split_dataset(full, ratios, sub_seed(h.seed, kSplitSalt));
  std::array<int, 3> dims = {int(full.shapes[0].feat_dim), int(full.shapes[1].feat_dim),
                             int(full.shapes[2].feat_dim)};
  EncoderConfig enc = encoder_config(h);
  TrainConfig cfg = train_config(h, approach);

  RunResult result;
  Checkpoint ck;
  if (approach == Approach::LateVote) {
    if (!warm_start.empty()) {
      throw CLI::ValidationError("--warm-start", "only applies to approaches a1 and a2");
    }
    PipelineResult pipeline =
        late_fusion_pipeline(splits.train, splits.val, splits.test, enc, h.fusion_hidden, cfg);
    for (int m = 0; m < 3; ++m) {
      Approach sub = static_cast<Approach>(m);
      write_metrics_csv(outdir / ("metrics_" + std::string(approach_name(sub)) + ".csv"),
                        pipeline.unimodal_history[size_t(m)]);
    }
    result.unimodal_accuracy = pipeline.unimodal_test_accuracy;
    result.voted = true;
    ck = make_checkpoint(pipeline.model);
  } else {
    if (!warm_start.empty() && approach_is_unimodal(approach)) {
      throw CLI::ValidationError("--warm-start", "only applies to approaches a1 and a2");
    }
    Rng init_rng(sub_seed(h.seed, kInitSalt));
    FusionModel model =
        make_fusion_model(approach_mode(approach), dims, enc, h.fusion_hidden, init_rng);
    if (!warm_start.empty()) {
      FusionModel donor = restore_model(load_checkpoint(warm_start));
      int copied = copy_matching_params(donor, model);
      std::cout << "warm start: copied " << copied << " tensors from " << warm_start << "\n";
    }
    write_metrics_csv(outdir / "metrics.csv", train(model, splits.train, splits.val, cfg));
    ck = make_checkpoint(model);
  }

  for (const auto& [key, value] : settings_echo(h, approach)) ck.config[key] = value;
  fs::path ck_path = outdir / "model.ckpt";
  save_checkpoint(ck, ck_path.string());
  write_dataset(splits.test, (outdir / "test_split.mmsa").string());

  FusionModel reloaded = restore_model(load_checkpoint(ck_path.string()));
  result.test_accuracy = evaluate(reloaded, approach, splits.test, h.batch_size).accuracy;

  json summary;
  summary["approach"] = approach_name(approach);
  summary["seed"] = h.seed;
  summary["epochs"] = h.epochs;
  summary["test_accuracy"] = double(result.test_accuracy);
  json echo;
  for (const auto& [key, value] : ck.config) echo[key] = value;
  summary["config_echo"] = echo;
  std::ofstream out(outdir / "summary.json", std::ios::trunc);
  if (!out) throw IoError("cannot open " + (outdir / "summary.json").string() + " for writing");
  out << summary.dump(2) << "\n";
  if (!out) throw IoError("write failed on " + (outdir / "summary.json").string());
  return result;
}

struct GenerateOptions {
  std::string out;
  std::string mode = "joint";
  SyntheticConfig synth;
};

int cmd_generate(const GenerateOptions& opts) {
  SyntheticConfig cfg = opts.synth;
  cfg.coupling = opts.mode == "independent" ? Coupling::Independent : Coupling::Joint;
  Dataset ds = generate_synthetic(cfg);
  write_dataset(ds, opts.out);
  std::array<int, 3> counts = ds.class_counts();
  std::cout << "wrote " << ds.size() << " samples to " << opts.out << " (negative "
            << counts[0] << ", neutral " << counts[1] << ", positive " << counts[2] << ")\n";
  if (ds.size() == 0) {
    std::cout << "warning: dataset is empty (header-only file)\n";
  }
  return 0;
}

struct TrainOptions {
  std::string data;
  std::string approach;
  std::string out;
  std::string warm_start;
  HyperOptions hyper;
};

int cmd_train(const TrainOptions& opts) {
  auto start = Clock::now();
  Dataset full = load_dataset(opts.data);
  Approach approach = parse_approach(opts.approach);
  RunResult result = run_training(full, approach, opts.hyper, opts.out, opts.warm_start);
  if (result.voted) {
    for (int m = 0; m < 3; ++m) {
      std::cout << approach_name(static_cast<Approach>(m))
                << " test accuracy: " << percent(result.unimodal_accuracy[size_t(m)]) << "\n";
    }
  }
  std::cout << "test accuracy: " << percent(result.test_accuracy) << "\n";
  print_time("total", start);
  return 0;
}

struct EvalOptions {
  std::string data;
  std::string checkpoint;
  std::string out;
  int batch_size = 32;
};

int cmd_eval(const EvalOptions& opts) {
  auto start = Clock::now();
  Checkpoint ck = load_checkpoint(opts.checkpoint);
  FusionModel model = restore_model(ck);
  auto it = ck.config.find("approach");
  if (it == ck.config.end()) {
    throw FormatError("checkpoint config missing key 'approach'");
  }
  Approach approach = parse_approach(it->second);

  Dataset ds = load_dataset(opts.data);
  std::array<int, 3> dims = {int(ds.shapes[0].feat_dim), int(ds.shapes[1].feat_dim),
                             int(ds.shapes[2].feat_dim)};
  if (dims != model.input_dims) {
    auto fmt = [](const std::array<int, 3>& d) {
      return std::to_string(d[0]) + "/" + std::to_string(d[1]) + "/" + std::to_string(d[2]);
    };
    throw ConfigError("dataset feature dims " + fmt(dims) + " do not match checkpoint dims " +
                      fmt(model.input_dims));
  }

  EvalResult result = evaluate(model, approach, ds, opts.batch_size);
  std::cout << "accuracy: " << percent(result.accuracy) << "\n";
  json report;
  report["approach"] = approach_name(approach);
  report["accuracy"] = double(result.accuracy);
  report["mean_loss"] = double(result.mean_loss);
  report["samples"] = ds.size();
  if (opts.out.empty()) {
    std::cout << report.dump(2) << "\n";
  } else {
    std::ofstream out(opts.out, std::ios::trunc);
    if (!out) throw IoError("cannot open " + opts.out + " for writing");
    out << report.dump(2) << "\n";
    if (!out) throw IoError("write failed on " + opts.out);
  }
  print_time("total", start);
  return 0;
}

struct CompareOptions {
  std::string data;
  std::string out;
  std::vector<uint64_t> seeds;
  HyperOptions hyper;
};

int cmd_compare(const CompareOptions& opts) {
  auto start = Clock::now();
  Dataset full = load_dataset(opts.data);
  fs::create_directories(opts.out);

  const std::array<Approach, 6> order = {Approach::Video,       Approach::Audio,
                                         Approach::Text,        Approach::LateVote,
                                         Approach::EarlyConcat, Approach::Attention};
  std::map<Approach, std::vector<Scalar>> accuracies;
  for (Approach approach : order) {
    for (uint64_t seed : opts.seeds) {
      auto run_start = Clock::now();
      HyperOptions h = opts.hyper;
      h.seed = seed;
      fs::path run_dir = fs::path(opts.out) / ("run_" + std::string(approach_name(approach)) +
                                               "_" + std::to_string(seed));
      RunResult r = run_training(full, approach, h, run_dir, "");
      accuracies[approach].push_back(r.test_accuracy);
      std::cout << approach_name(approach) << " seed " << seed << ": "
                << percent(r.test_accuracy) << "\n";
      print_time(std::string(approach_name(approach)) + " seed " + std::to_string(seed),
                 run_start);
    }
  }

  fs::path table_path = fs::path(opts.out) / "comparison.csv";
  std::ofstream table(table_path, std::ios::trunc);
  if (!table) throw IoError("cannot open " + table_path.string() + " for writing");
  table << "approach";
  for (uint64_t seed : opts.seeds) table << ",seed_" << seed;
  table << ",mean_test_accuracy\n";
  std::cout << "\napproach  mean test accuracy\n";
  for (Approach approach : order) {
    const std::vector<Scalar>& accs = accuracies[approach];
    Scalar mean = 0;
    table << approach_name(approach);
    for (Scalar a : accs) {
      table << ',' << format_scalar(a);
      mean += a;
    }
    mean /= Scalar(accs.size());
    table << ',' << format_scalar(mean) << '\n';
    std::printf("%-9s %s\n", approach_name(approach), percent(mean).c_str());
  }
  if (!table) throw IoError("write failed on " + table_path.string());
  print_time("total", start);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal sentiment classifier: transformer encoders with selectable fusion"};
  app.require_subcommand(1);
  std::string config_path;

  GenerateOptions gen;
  CLI::App* generate = app.add_subcommand("generate", "Write a synthetic dataset file");
  generate->add_option("--out", gen.out, "Output dataset path")->required();
  generate->add_option("--mode", gen.mode, "Cross-modality coupling")
      ->check(CLI::IsMember({"joint", "independent"}));
  generate->add_option("--n", gen.synth.n_samples, "Sample count");
  generate->add_option("--seed", gen.synth.seed, "Generator seed");
  generate->add_option("--noise", gen.synth.noise_std, "Feature noise level");
  generate->add_option("--video-seq", gen.synth.shapes[0].seq_len, "Video sequence length");
  generate->add_option("--video-dim", gen.synth.shapes[0].feat_dim, "Video feature dim");
  generate->add_option("--audio-seq", gen.synth.shapes[1].seq_len, "Audio sequence length");
  generate->add_option("--audio-dim", gen.synth.shapes[1].feat_dim, "Audio feature dim");
  generate->add_option("--text-seq", gen.synth.shapes[2].seq_len, "Text sequence length");
  generate->add_option("--text-dim", gen.synth.shapes[2].feat_dim, "Text feature dim");
  add_config_file(generate, config_path);

  TrainOptions tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train one approach and save artifacts");
  train_cmd->add_option("--data", tr.data, "Dataset file")->required();
  train_cmd->add_option("--approach", tr.approach, "What to train")
      ->required()
      ->check(CLI::IsMember({"video", "audio", "text", "a0", "a1", "a2"}));
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--warm-start", tr.warm_start,
                        "Checkpoint whose matching encoder weights seed a1/a2");
  train_cmd->add_option("--seed", tr.hyper.seed, "Run seed");
  add_model_options(train_cmd, tr.hyper);
  add_config_file(train_cmd, config_path);

  EvalOptions ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  eval_cmd->add_option("--data", ev.data, "Dataset file")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--out", ev.out, "Write the JSON report here instead of stdout");
  eval_cmd->add_option("--batch-size", ev.batch_size, "Evaluation batch size");
  add_config_file(eval_cmd, config_path);

  CompareOptions cmp;
  CLI::App* compare = app.add_subcommand("compare", "Train every approach across seeds");
  compare->add_option("--data", cmp.data, "Dataset file")->required();
  compare->add_option("--out", cmp.out, "Output directory")->required();
  compare->add_option("--seeds", cmp.seeds, "Run seeds")->required()->delimiter(',');
  add_model_options(compare, cmp.hyper);
  add_config_file(compare, config_path);

  try {
    app.parse(argc, argv);
    if (!config_path.empty()) apply_config_file(*app.get_subcommands().front(), config_path);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (generate->parsed()) return cmd_generate(gen);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (eval_cmd->parsed()) return cmd_eval(ev);
    if (compare->parsed()) return cmd_compare(cmp);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
