#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "mmsa/checkpoint.hpp"
#include "mmsa/data.hpp"
#include "test_helpers.hpp"

using namespace mmsa;
using namespace mmsa::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCli = MMSA_CLI_PATH;

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp_text(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(bool(in));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<char> slurp_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

// Runs the installed binary with the given argument string, capturing exit
// code and both output streams through scratch files.
CliRun run_cli(const std::string& args, const fs::path& scratch) {
  fs::path out_path = scratch / "stdout.txt";
  fs::path err_path = scratch / "stderr.txt";
  std::string command = std::string(kCli) + " " + args + " > " + out_path.string() + " 2> " +
                        err_path.string();
  int status = std::system(command.c_str());
  CliRun run;
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  run.code = WEXITSTATUS(status);
  run.out = slurp_text(out_path);
  run.err = slurp_text(err_path);
  return run;
}

// Small feature shapes and a thin model keep each training run well under a
// second without changing any code path under test.
const std::string kTinyData =
    " --noise 0.2 --video-seq 3 --video-dim 4 --audio-seq 4 --audio-dim 3"
    " --text-seq 2 --text-dim 5";
const std::string kTinyModel =
    " --model-dim 8 --heads 2 --ff-dim 16 --layers 1 --max-seq-len 8"
    " --batch-size 16 --fusion-hidden 8";

// Generates a small dataset through the CLI and returns its path.
fs::path make_dataset(const fs::path& dir, int n, uint64_t seed) {
  fs::path path = dir / ("data_" + std::to_string(n) + "_" + std::to_string(seed) + ".mmsa");
  CliRun run = run_cli("generate --out " + path.string() + " --mode joint --n " +
                           std::to_string(n) + " --seed " + std::to_string(seed) + kTinyData,
                       dir);
  REQUIRE(run.code == 0);
  return path;
}

std::string strip_time_lines(const std::string& text) {
  std::istringstream in(text);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("# time:", 0) != 0) out << line << "\n";
  }
  return out.str();
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("generate balances classes and is reproducible") {
  fs::path dir = fresh_temp_dir("cli_gen");
  fs::path a = dir / "a.mmsa";
  CliRun run = run_cli("generate --out " + a.string() + " --mode joint --n 300 --seed 7" +
                           kTinyData,
                       dir);
  CHECK(run.code == 0);
  CHECK(contains(run.out, "wrote 300 samples"));
  CHECK(contains(run.out, "negative 100, neutral 100, positive 100"));

  Dataset ds = load_dataset(a.string());
  CHECK(ds.size() == 300);
  CHECK(ds.class_counts() == std::array<int, 3>{100, 100, 100});

  fs::path b = dir / "b.mmsa";
  run_cli("generate --out " + b.string() + " --mode joint --n 300 --seed 7" + kTinyData, dir);
  CHECK(slurp_bytes(a) == slurp_bytes(b));
}

TEST_CASE("generate with zero samples warns and writes a loadable header") {
  fs::path dir = fresh_temp_dir("cli_gen0");
  fs::path path = dir / "empty.mmsa";
  CliRun run = run_cli("generate --out " + path.string() + " --n 0" + kTinyData, dir);
  CHECK(run.code == 0);
  CHECK(contains(run.out, "warning"));
  CHECK(load_dataset(path.string()).size() == 0);
}

TEST_CASE("generate fails with exit 1 when the output path is unwritable") {
  fs::path dir = fresh_temp_dir("cli_genbad");
  CliRun run = run_cli("generate --out /nonexistent_dir_mmsa/x.mmsa --n 3" + kTinyData, dir);
  CHECK(run.code == 1);
  CHECK(contains(run.err, "error"));
}

TEST_CASE("train writes artifacts and eval replays the reported accuracy exactly") {
  fs::path dir = fresh_temp_dir("cli_train");
  fs::path data = make_dataset(dir, 90, 7);
  fs::path out = dir / "run";
  CliRun train = run_cli("train --data " + data.string() + " --approach a1 --epochs 2 --seed 3" +
                             kTinyModel + " --out " + out.string(),
                         dir);
  REQUIRE(train.code == 0);
  CHECK(contains(train.out, "test accuracy: "));
  CHECK(contains(train.out, "%"));

  for (const char* name : {"model.ckpt", "metrics.csv", "test_split.mmsa", "summary.json"}) {
    CAPTURE(name);
    CHECK(fs::exists(out / name));
  }

  std::string csv = slurp_text(out / "metrics.csv");
  CHECK(csv.rfind("epoch,train_loss,train_acc,val_loss,val_acc\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  json summary = json::parse(slurp_text(out / "summary.json"));
  CHECK(summary["approach"] == "a1");
  CHECK(summary["seed"] == 3);
  CHECK(summary["epochs"] == 2);
  CHECK(summary["config_echo"]["approach"] == "a1");
  double reported = summary["test_accuracy"].get<double>();

  fs::path report_path = dir / "eval.json";
  CliRun eval = run_cli("eval --data " + (out / "test_split.mmsa").string() + " --checkpoint " +
                            (out / "model.ckpt").string() + " --out " + report_path.string(),
                        dir);
  REQUIRE(eval.code == 0);
  CHECK(contains(eval.out, "accuracy: "));
  json report = json::parse(slurp_text(report_path));
  CHECK(report["approach"] == "a1");
  CHECK(report["samples"].get<int>() > 0);
  CHECK(report["accuracy"].get<double>() == reported);

  // Without --out the report goes to stdout instead.
  CliRun eval_stdout = run_cli("eval --data " + (out / "test_split.mmsa").string() +
                                   " --checkpoint " + (out / "model.ckpt").string(),
                               dir);
  REQUIRE(eval_stdout.code == 0);
  CHECK(json::parse(strip_time_lines(eval_stdout.out).substr(
            eval_stdout.out.find('{')))["accuracy"].get<double>() == reported);
}

TEST_CASE("train with zero epochs checkpoints the initial weights") {
  fs::path dir = fresh_temp_dir("cli_epoch0");
  fs::path data = make_dataset(dir, 30, 5);
  fs::path out = dir / "run";
  CliRun train = run_cli("train --data " + data.string() + " --approach a2 --epochs 0 --seed 1" +
                             kTinyModel + " --out " + out.string(),
                         dir);
  REQUIRE(train.code == 0);
  CHECK(slurp_text(out / "metrics.csv") == "epoch,train_loss,train_acc,val_loss,val_acc\n");
  CliRun eval = run_cli("eval --data " + data.string() + " --checkpoint " +
                            (out / "model.ckpt").string(),
                        dir);
  CHECK(eval.code == 0);
}

TEST_CASE("identical train invocations produce identical artifacts and output") {
  fs::path dir = fresh_temp_dir("cli_det");
  fs::path data = make_dataset(dir, 60, 11);
  std::string flags = "train --data " + data.string() + " --approach a0 --epochs 1 --seed 9" +
                      kTinyModel + " --out ";
  CliRun first = run_cli(flags + (dir / "r1").string(), dir);
  CliRun second = run_cli(flags + (dir / "r2").string(), dir);
  REQUIRE(first.code == 0);
  REQUIRE(second.code == 0);
  CHECK(strip_time_lines(first.out) == strip_time_lines(second.out));
  for (const char* name : {"model.ckpt", "metrics_video.csv", "metrics_audio.csv",
                           "metrics_text.csv", "test_split.mmsa", "summary.json"}) {
    CAPTURE(name);
    CHECK(slurp_bytes(dir / "r1" / name) == slurp_bytes(dir / "r2" / name));
  }
}

TEST_CASE("late vote training reports per modality accuracies") {
  fs::path dir = fresh_temp_dir("cli_vote");
  fs::path data = make_dataset(dir, 60, 2);
  fs::path out = dir / "run";
  CliRun train = run_cli("train --data " + data.string() + " --approach a0 --epochs 1 --seed 4" +
                             kTinyModel + " --out " + out.string(),
                         dir);
  REQUIRE(train.code == 0);
  for (const char* modality : {"video", "audio", "text"}) {
    CAPTURE(modality);
    CHECK(contains(train.out, std::string(modality) + " test accuracy: "));
    CHECK(fs::exists(out / ("metrics_" + std::string(modality) + ".csv")));
  }
  CHECK(contains(train.out, "\ntest accuracy: "));
  CHECK(!fs::exists(out / "metrics.csv"));
}

TEST_CASE("exit codes separate success, data errors, and usage errors") {
  fs::path dir = fresh_temp_dir("cli_exit");
  fs::path data = make_dataset(dir, 30, 3);

  CHECK(run_cli("--help", dir).code == 0);
  CHECK(run_cli("train --help", dir).code == 0);

  CliRun bad_approach = run_cli("train --data " + data.string() + " --approach a9 --out " +
                                    (dir / "x").string(),
                                dir);
  CHECK(bad_approach.code == 2);
  CHECK(contains(bad_approach.err, "--approach"));

  CHECK(run_cli("train --approach a1 --out " + (dir / "x").string(), dir).code == 2);
  CHECK(run_cli("frobnicate", dir).code == 2);

  CliRun missing_data = run_cli("train --data " + (dir / "absent.mmsa").string() +
                                    " --approach a1 --out " + (dir / "x").string(),
                                dir);
  CHECK(missing_data.code == 1);

  fs::path junk = dir / "junk.ckpt";
  std::ofstream(junk) << "not a checkpoint";
  CliRun corrupt = run_cli("eval --data " + data.string() + " --checkpoint " + junk.string(),
                           dir);
  CHECK(corrupt.code == 1);

  CliRun warm_misuse = run_cli("train --data " + data.string() +
                                   " --approach video --warm-start " + junk.string() +
                                   " --out " + (dir / "x").string() + kTinyModel,
                               dir);
  CHECK(warm_misuse.code == 2);
  CHECK(contains(warm_misuse.err, "--warm-start"));
}

TEST_CASE("eval names both shapes on a dimension mismatch") {
  fs::path dir = fresh_temp_dir("cli_dims");
  fs::path data = make_dataset(dir, 30, 3);
  fs::path out = dir / "run";
  CliRun train = run_cli("train --data " + data.string() + " --approach a1 --epochs 0 --seed 1" +
                             kTinyModel + " --out " + out.string(),
                         dir);
  REQUIRE(train.code == 0);

  fs::path other = dir / "other.mmsa";
  run_cli("generate --out " + other.string() +
              " --n 6 --seed 1 --video-dim 9 --audio-dim 3 --text-dim 5 --video-seq 3"
              " --audio-seq 4 --text-seq 2",
          dir);
  CliRun eval = run_cli("eval --data " + other.string() + " --checkpoint " +
                            (out / "model.ckpt").string(),
                        dir);
  CHECK(eval.code == 1);
  CHECK(contains(eval.err, "9/3/5"));
  CHECK(contains(eval.err, "4/3/5"));
  CHECK(contains(eval.err, "do not match"));
}

TEST_CASE("config files merge under flags and reject unknown keys") {
  fs::path dir = fresh_temp_dir("cli_cfg");
  fs::path data = make_dataset(dir, 30, 6);
  std::string base = "train --data " + data.string() + " --approach video" + kTinyModel;

  fs::path cfg = dir / "settings.cfg";
  std::ofstream(cfg) << "# comment line\n\nepochs=3\nseed=5\n";
  CliRun from_file = run_cli(base + " --config " + cfg.string() + " --out " +
                                 (dir / "r1").string(),
                             dir);
  REQUIRE(from_file.code == 0);
  json summary = json::parse(slurp_text(dir / "r1" / "summary.json"));
  CHECK(summary["epochs"] == 3);
  CHECK(summary["seed"] == 5);

  CliRun flag_wins = run_cli(base + " --config " + cfg.string() + " --epochs 1 --out " +
                                 (dir / "r2").string(),
                             dir);
  REQUIRE(flag_wins.code == 0);
  json overridden = json::parse(slurp_text(dir / "r2" / "summary.json"));
  CHECK(overridden["epochs"] == 1);
  CHECK(overridden["seed"] == 5);

  fs::path bogus = dir / "bogus.cfg";
  std::ofstream(bogus) << "epochs=3\nbogus-key=1\n";
  CliRun unknown = run_cli(base + " --config " + bogus.string() + " --out " +
                               (dir / "r3").string(),
                           dir);
  CHECK(unknown.code == 2);
  CHECK(contains(unknown.err, "bogus-key"));

  fs::path malformed = dir / "malformed.cfg";
  std::ofstream(malformed) << "epochs 3\n";
  CHECK(run_cli(base + " --config " + malformed.string() + " --out " + (dir / "r4").string(),
                dir)
            .code == 2);

  fs::path repeated = dir / "repeated.cfg";
  std::ofstream(repeated) << "epochs=3\nepochs=4\n";
  CliRun dup = run_cli(base + " --config " + repeated.string() + " --out " +
                           (dir / "r5").string(),
                       dir);
  CHECK(dup.code == 2);
  CHECK(contains(dup.err, "duplicate"));

  CHECK(run_cli(base + " --config " + (dir / "absent.cfg").string() + " --out " +
                    (dir / "r6").string(),
                dir)
            .code == 2);
}

TEST_CASE("warm start copies the donor encoder weights into a fused model") {
  fs::path dir = fresh_temp_dir("cli_warm");
  fs::path data = make_dataset(dir, 60, 8);
  fs::path donor_dir = dir / "donor";
  CliRun donor = run_cli("train --data " + data.string() +
                             " --approach video --epochs 1 --seed 2" + kTinyModel + " --out " +
                             donor_dir.string(),
                         dir);
  REQUIRE(donor.code == 0);

  fs::path warm_dir = dir / "warm";
  CliRun warm = run_cli("train --data " + data.string() + " --approach a1 --epochs 0 --seed 2" +
                            kTinyModel + " --warm-start " + (donor_dir / "model.ckpt").string() +
                            " --out " + warm_dir.string(),
                        dir);
  REQUIRE(warm.code == 0);
  CHECK(contains(warm.out, "warm start: copied "));

  // With zero epochs the copied tensors must survive into the new checkpoint
  // bit for bit; fusion-only tensors exist only on the warm side.
  Checkpoint donor_ck = load_checkpoint((donor_dir / "model.ckpt").string());
  Checkpoint warm_ck = load_checkpoint((warm_dir / "model.ckpt").string());
  std::map<std::string, Tensor> warm_by_name(warm_ck.tensors.begin(), warm_ck.tensors.end());
  int compared = 0;
  for (const auto& [name, tensor] : donor_ck.tensors) {
    if (name.rfind("video.", 0) != 0) continue;
    auto it = warm_by_name.find(name);
    REQUIRE(it != warm_by_name.end());
    CHECK(max_abs_diff(tensor.data(), it->second.data()) == 0.0);
    ++compared;
  }
  CHECK(compared > 0);
  CHECK(warm_by_name.count("early.hidden.weight") == 1);
  CHECK(donor_ck.config.at("approach") == "video");
  CHECK(warm_ck.config.at("approach") == "a1");
}

TEST_CASE("compare writes an ordered table and leaves its input untouched") {
  fs::path dir = fresh_temp_dir("cli_cmp");
  fs::path data = make_dataset(dir, 60, 12);
  std::vector<char> before = slurp_bytes(data);

  fs::path out = dir / "cmp";
  CliRun run = run_cli("compare --data " + data.string() + " --seeds 3,4 --epochs 1" +
                           kTinyModel + " --out " + out.string(),
                       dir);
  REQUIRE(run.code == 0);
  CHECK(slurp_bytes(data) == before);

  const std::vector<std::string> order = {"video", "audio", "text", "a0", "a1", "a2"};
  for (const std::string& approach : order) {
    for (const char* seed : {"3", "4"}) {
      CAPTURE(approach);
      CHECK(fs::exists(out / ("run_" + approach + "_" + seed) / "model.ckpt"));
      CHECK(contains(run.out, approach + " seed " + seed + ": "));
    }
  }

  std::istringstream table(slurp_text(out / "comparison.csv"));
  std::string line;
  REQUIRE(std::getline(table, line));
  CHECK(line == "approach,seed_3,seed_4,mean_test_accuracy");
  for (const std::string& approach : order) {
    CAPTURE(approach);
    REQUIRE(std::getline(table, line));
    std::istringstream fields(line);
    std::string name, s3, s4, mean;
    REQUIRE(std::getline(fields, name, ','));
    REQUIRE(std::getline(fields, s3, ','));
    REQUIRE(std::getline(fields, s4, ','));
    REQUIRE(std::getline(fields, mean, ','));
    CHECK(name == approach);
    CHECK(std::stod(mean) == doctest::Approx((std::stod(s3) + std::stod(s4)) / 2).epsilon(1e-12));
    CHECK(std::stod(mean) >= 0.0);
    CHECK(std::stod(mean) <= 1.0);
  }
  CHECK(!std::getline(table, line));
}
