// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line with
// its key numbers; the exit code is the number of failed criteria. The
// trained-model criteria use the library directly; the determinism criterion
// shells out to the command line binary given with --cli.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mmsa/checkpoint.hpp"
#include "mmsa/data.hpp"
#include "mmsa/errors.hpp"
#include "mmsa/ops.hpp"
#include "mmsa/training.hpp"

using namespace mmsa;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

std::string g_cli_path;
fs::path g_workdir;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(digits);
  out << v;
  return out.str();
}

Tensor random_tensor(const std::vector<int>& shape, Rng& rng, double lo = -2.0,
                     double hi = 2.0) {
  Tensor t = Tensor::zeros(shape);
  for (Scalar& v : t.data()) v = Scalar(rng.uniform(lo, hi));
  return t;
}

// Scalar loss weighting every output element differently so misplaced or
// transposed entries cannot cancel.
Tensor weighted_sum(const Tensor& t, uint64_t weight_seed) {
  Rng rng(weight_seed);
  Tensor w = random_tensor(t.shape(), rng, -1.0, 1.0);
  return sum_all(mul(t, w));
}

// ---------------------------------------------------------------------------
// criterion 1: gradient checks for every op (10 seeds) and the full fused
// losses at b=2, s=4, d=8, h=2, layers=2
// ---------------------------------------------------------------------------

struct GradCase {
  const char* name;
  double worst;
};

bool criterion_gradients(std::string& detail) {
  auto start = Clock::now();
  double worst_op = 0.0;
  std::string worst_name = "none";

  auto check = [&](const char* name, const std::function<Tensor(std::vector<Tensor>&)>& f,
                   std::vector<Tensor> inputs) {
    GradCheckReport r = finite_difference_check(f, std::move(inputs), 1e-4, 1e-4);
    if (r.max_rel_error > worst_op) {
      worst_op = r.max_rel_error;
      worst_name = name;
    }
    return r.passed;
  };

  bool ok = true;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    uint64_t ws = seed * 1000;

    ok &= check("matmul",
                [&](std::vector<Tensor>& in) { return weighted_sum(matmul(in[0], in[1]), ws); },
                {random_tensor({3, 5}, rng), random_tensor({5, 4}, rng)});
    ok &= check("bmm",
                [&](std::vector<Tensor>& in) { return weighted_sum(bmm(in[0], in[1]), ws + 1); },
                {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)});
    ok &= check("transpose_last2",
                [&](std::vector<Tensor>& in) {
                  return weighted_sum(transpose_last2(in[0]), ws + 2);
                },
                {random_tensor({3, 4}, rng)});
    ok &= check("add",
                [&](std::vector<Tensor>& in) { return weighted_sum(add(in[0], in[1]), ws + 3); },
                {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)});
    ok &= check("mul",
                [&](std::vector<Tensor>& in) { return weighted_sum(mul(in[0], in[1]), ws + 4); },
                {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)});
    ok &= check("add_bias",
                [&](std::vector<Tensor>& in) {
                  return weighted_sum(add_bias(in[0], in[1]), ws + 5);
                },
                {random_tensor({3, 4}, rng), random_tensor({4}, rng)});
    ok &= check("add_rows",
                [&](std::vector<Tensor>& in) {
                  return weighted_sum(add_rows(in[0], in[1]), ws + 6);
                },
                {random_tensor({2, 3, 4}, rng), random_tensor({3, 4}, rng)});
    ok &= check("scale",
                [&](std::vector<Tensor>& in) {
                  return weighted_sum(scale(in[0], Scalar(-1.7)), ws + 7);
                },
                {random_tensor({6}, rng)});
    ok &= check("relu",
                [&](std::vector<Tensor>& in) { return weighted_sum(relu(in[0]), ws + 8); },
                {[&] {
                  Tensor t = random_tensor({6}, rng);
                  for (Scalar& v : t.data())
                    if (std::abs(double(v)) < 0.1) v += v >= Scalar(0) ? Scalar(0.2) : Scalar(-0.2);
                  return t;
                }()});
    ok &= check("softmax",
                [&](std::vector<Tensor>& in) { return weighted_sum(softmax(in[0], 1), ws + 9); },
                {random_tensor({2, 5}, rng)});
    ok &= check("layer_norm",
                [&](std::vector<Tensor>& in) {
                  return weighted_sum(layer_norm(in[0], in[1], in[2]), ws + 10);
                },
                {random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)});
    ok &= check("concat",
                [&](std::vector<Tensor>& in) {
                  return weighted_sum(concat({in[0], in[1]}, 1), ws + 11);
                },
                {random_tensor({2, 2}, rng), random_tensor({2, 3}, rng)});
    ok &= check("slice",
                [&](std::vector<Tensor>& in) {
                  return weighted_sum(slice(in[0], 1, 1, 2), ws + 12);
                },
                {random_tensor({2, 4}, rng)});
    ok &= check("split_heads",
                [&](std::vector<Tensor>& in) {
                  return weighted_sum(split_heads(in[0], 2), ws + 13);
                },
                {random_tensor({2, 3, 4}, rng)});
    ok &= check("merge_heads",
                [&](std::vector<Tensor>& in) {
                  return weighted_sum(merge_heads(in[0], 2), ws + 14);
                },
                {random_tensor({4, 3, 2}, rng)});
    std::vector<int> picks{2, 0};
    ok &= check("take_rows",
                [&](std::vector<Tensor>& in) {
                  return weighted_sum(take_rows(in[0], picks), ws + 15);
                },
                {random_tensor({2, 3, 4}, rng)});
    ok &= check("mean_axis",
                [&](std::vector<Tensor>& in) {
                  return weighted_sum(mean_axis(in[0], 1), ws + 16);
                },
                {random_tensor({2, 3, 4}, rng)});
    ok &= check("sum_all", [&](std::vector<Tensor>& in) { return sum_all(in[0]); },
                {random_tensor({3, 3}, rng)});
    ok &= check("dropout",
                [&](std::vector<Tensor>& in) {
                  Rng mask_rng(99);
                  return weighted_sum(dropout(in[0], Scalar(0.4), &mask_rng), ws + 17);
                },
                {random_tensor({4, 4}, rng)});
    ok &= check("cross_entropy",
                [&](std::vector<Tensor>& in) {
                  return cross_entropy(in[0], {1, 0});
                },
                {random_tensor({2, 3}, rng)});
  }

  // Full fused losses on a fixed batch; the looser 1e-3 bound absorbs the
  // longer chain of float cancellations. The seeds pin an evaluation point
  // with no relu pre-activation within 4x the step of zero (verified by the
  // error scaling as O(h^2) through h=4e-4); at a kink the central difference
  // reports the subgradient gap instead of the derivative.
  EncoderConfig cfg;
  cfg.model_dim = 8;
  cfg.num_heads = 2;
  cfg.ff_dim = 16;
  cfg.num_layers = 2;
  cfg.max_seq_len = 4;
  cfg.dropout_rate = 0;

  Rng data_rng(202);
  Batch batch;
  batch.labels = {0, 2};
  for (int m = 0; m < 3; ++m) {
    batch.features[size_t(m)] = random_tensor({2, 4, 3 + m}, data_rng, -1.0, 1.0);
    batch.lengths[size_t(m)] = {4, 3};
  }

  double worst_loss = 0.0;
  for (Approach approach : {Approach::EarlyConcat, Approach::Attention}) {
    Rng init(88);
    FusionModel model = make_fusion_model(approach_mode(approach), {3, 4, 5}, cfg, 8, init);
    auto f = [&](std::vector<Tensor>&) {
      return approach_loss(model, approach, batch, ForwardCtx{});
    };
    GradCheckReport r = finite_difference_check(f, trainable_params(model), 1e-4, 1e-3);
    ok &= r.passed;
    worst_loss = std::max(worst_loss, r.max_rel_error);
  }

  double elapsed = seconds_since(start);
  ok &= elapsed < 60.0;
  detail = "worst op rel err " + fmt(worst_op, 8) + " (" + worst_name + "), worst fused loss " +
           fmt(worst_loss, 8) + ", " + fmt(elapsed, 1) + "s (budget 60s)";
  return ok;
}

// ---------------------------------------------------------------------------
// criterion 2: majority vote against the exhaustive oracle
// ---------------------------------------------------------------------------

int argmax3(const double* row) {
  int best = 0;
  for (int c = 1; c < 3; ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

// Independent restatement of the rule: majority of per-modality argmaxes,
// otherwise the class with the largest summed softmax mass, ties to the
// lowest index. The mass sum is evaluated in double with the canonical
// max-shifted softmax so that symmetric logit triples (permutations of one
// multiset, which the coarse grid produces on purpose) tie exactly and the
// lowest-index rule decides; a wider precision would instead break those
// ties on sub-1e-19 rounding noise.
int vote_oracle(const std::array<std::array<double, 3>, 3>& logits) {
  std::array<int, 3> votes{};
  for (const auto& row : logits) votes[size_t(argmax3(row.data()))]++;
  for (int c = 0; c < 3; ++c)
    if (votes[size_t(c)] >= 2) return c;
  std::array<double, 3> mass{};
  for (const auto& row : logits) {
    double peak = std::max({row[0], row[1], row[2]});
    double total = 0;
    std::array<double, 3> e{};
    for (int c = 0; c < 3; ++c) {
      e[size_t(c)] = std::exp(row[c] - peak);
      total += e[size_t(c)];
    }
    for (int c = 0; c < 3; ++c) mass[size_t(c)] += e[size_t(c)] / total;
  }
  int best = 0;
  for (int c = 1; c < 3; ++c)
    if (mass[size_t(c)] > mass[best]) best = c;
  return best;
}

bool criterion_vote(std::string& detail) {
  const int trials = 1000;
  Rng rng(2024);
  Tensor video = Tensor::zeros({trials, 3});
  Tensor audio = Tensor::zeros({trials, 3});
  Tensor text = Tensor::zeros({trials, 3});
  std::vector<std::array<std::array<double, 3>, 3>> rows(trials);

  for (int i = 0; i < trials; ++i) {
    // Mix smooth draws with a coarse grid so exact argmax ties and three-way
    // disagreements occur often.
    bool coarse = i % 3 == 0;
    for (int m = 0; m < 3; ++m) {
      Tensor& t = m == 0 ? video : m == 1 ? audio : text;
      for (int c = 0; c < 3; ++c) {
        double v = coarse ? double(rng.uniform_int(3) - 1) : rng.uniform(-4.0, 4.0);
        rows[size_t(i)][size_t(m)][size_t(c)] = v;
        t.data()[size_t(i) * 3 + size_t(c)] = Scalar(v);
      }
    }
  }

  std::vector<int> got = late_fusion_predict(video, audio, text);
  int mismatches = 0;
  for (int i = 0; i < trials; ++i)
    if (got[size_t(i)] != vote_oracle(rows[size_t(i)])) ++mismatches;

  detail = std::to_string(mismatches) + " mismatches in " + std::to_string(trials) + " trials";
  return mismatches == 0;
}

// ---------------------------------------------------------------------------
// criterion 3: discretization boundary table
// ---------------------------------------------------------------------------

bool criterion_boundaries(std::string& detail) {
  const std::array<double, 7> scores = {-3.0, -1.0 - 1e-9, -1.0, 0.0,
                                        1.0,  1.0 + 1e-7,  3.0};
  const std::array<SentimentClass, 7> want = {
      SentimentClass::Negative, SentimentClass::Negative, SentimentClass::Neutral,
      SentimentClass::Neutral,  SentimentClass::Neutral,  SentimentClass::Positive,
      SentimentClass::Positive};
  int wrong = 0;
  for (size_t i = 0; i < scores.size(); ++i)
    if (discretize_sentiment(Scalar(scores[i])) != want[i]) ++wrong;
  detail = std::to_string(7 - wrong) + "/7 table entries exact";
  return wrong == 0;
}

// ---------------------------------------------------------------------------
// shared small-model pieces for the training criteria
// ---------------------------------------------------------------------------

SyntheticConfig joint_config(uint32_t n, uint64_t seed, double noise,
                             std::array<ModalityShape, 3> shapes) {
  SyntheticConfig cfg;
  cfg.n_samples = n;
  cfg.shapes = shapes;
  cfg.coupling = Coupling::Joint;
  cfg.noise_std = noise;
  cfg.seed = seed;
  return cfg;
}

std::array<int, 3> dims_of(const Dataset& ds) {
  return {int(ds.shapes[0].feat_dim), int(ds.shapes[1].feat_dim), int(ds.shapes[2].feat_dim)};
}

// ---------------------------------------------------------------------------
// criterion 4: overfit 64 joint samples
// ---------------------------------------------------------------------------

bool criterion_overfit(std::string& detail) {
  auto start = Clock::now();
  Dataset ds = generate_synthetic(joint_config(64, 92, 0.1, {{{3, 5}, {4, 4}, {2, 6}}}));

  EncoderConfig cfg;
  cfg.model_dim = 16;
  cfg.num_heads = 2;
  cfg.ff_dim = 32;
  cfg.num_layers = 1;
  cfg.max_seq_len = 8;
  cfg.dropout_rate = 0;

  Rng init(93);
  FusionModel model = make_fusion_model(FusionMode::EarlyConcat, dims_of(ds), cfg, 32, init);
  TrainConfig train_cfg;
  train_cfg.approach = Approach::EarlyConcat;
  train_cfg.epochs = 200;
  train_cfg.batch_size = 32;
  train_cfg.seed = 94;

  TrainHistory history = train(model, ds, ds, train_cfg);
  double best = 0.0;
  int best_epoch = 0;
  for (size_t e = 0; e < history.size(); ++e) {
    if (double(history[e].train_accuracy) > best) {
      best = double(history[e].train_accuracy);
      best_epoch = int(e) + 1;
    }
  }
  double elapsed = seconds_since(start);
  detail = "train accuracy " + fmt(best) + " by epoch " + std::to_string(best_epoch) + ", " +
           fmt(elapsed, 1) + "s (budget 300s)";
  return best >= 0.95 && elapsed < 300.0;
}

// ---------------------------------------------------------------------------
// criterion 5: fusion-benefit ordering across three seeds
// ---------------------------------------------------------------------------

bool criterion_ordering(std::string& detail) {
  auto start = Clock::now();
  Dataset full =
      generate_synthetic(joint_config(1500, 505, 0.3, {{{8, 12}, {8, 12}, {8, 12}}}));

  EncoderConfig cfg;
  cfg.model_dim = 32;
  cfg.num_heads = 4;
  cfg.ff_dim = 64;
  cfg.num_layers = 1;
  cfg.max_seq_len = 8;
  cfg.dropout_rate = Scalar(0.1);
  const int fusion_hidden = 64;

  std::array<double, 3> unimodal_mean{};
  double a0_mean = 0, a1_mean = 0, a2_mean = 0;
  const std::array<uint64_t, 3> seeds = {1, 2, 3};

  for (uint64_t seed : seeds) {
    SplitDataset splits = split_dataset(full, {0.7, 0.15, 0.15}, sub_seed(seed, 40));

    TrainConfig base;
    base.epochs = 100;
    base.batch_size = 32;
    base.seed = seed;

    TrainConfig vote_cfg = base;
    vote_cfg.approach = Approach::LateVote;
    PipelineResult pipeline = late_fusion_pipeline(splits.train, splits.val, splits.test, cfg,
                                                   fusion_hidden, vote_cfg);
    for (int m = 0; m < 3; ++m)
      unimodal_mean[size_t(m)] += double(pipeline.unimodal_test_accuracy[size_t(m)]);
    a0_mean += double(pipeline.voted_test_accuracy);

    for (Approach approach : {Approach::EarlyConcat, Approach::Attention}) {
      TrainConfig fused_cfg = base;
      fused_cfg.approach = approach;
      Rng init(sub_seed(seed, 41));
      FusionModel model =
          make_fusion_model(approach_mode(approach), dims_of(full), cfg, fusion_hidden, init);
      train(model, splits.train, splits.val, fused_cfg);
      double acc = double(evaluate(model, approach, splits.test, base.batch_size).accuracy);
      (approach == Approach::EarlyConcat ? a1_mean : a2_mean) += acc;
    }
  }

  for (double& v : unimodal_mean) v /= double(seeds.size());
  a0_mean /= double(seeds.size());
  a1_mean /= double(seeds.size());
  a2_mean /= double(seeds.size());

  double elapsed = seconds_since(start);
  bool ok = unimodal_mean[0] <= 0.45 && unimodal_mean[1] <= 0.45 && unimodal_mean[2] <= 0.45 &&
            a0_mean <= 0.50 && a1_mean >= 0.90 && a2_mean >= a1_mean - 0.02 && elapsed < 1800.0;
  detail = "video " + fmt(unimodal_mean[0]) + ", audio " + fmt(unimodal_mean[1]) + ", text " +
           fmt(unimodal_mean[2]) + ", a0 " + fmt(a0_mean) + ", a1 " + fmt(a1_mean) + ", a2 " +
           fmt(a2_mean) + ", " + fmt(elapsed, 1) + "s (budget 1800s)";
  return ok;
}

// ---------------------------------------------------------------------------
// criterion 6: bitwise determinism of the train command
// ---------------------------------------------------------------------------

int run_command(const std::string& command) {
  int status = std::system(command.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

std::vector<char> file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

bool criterion_determinism(std::string& detail) {
  if (g_cli_path.empty()) {
    detail = "no --cli path given";
    return false;
  }
  fs::path dir = g_workdir / "determinism";
  fs::create_directories(dir);
  fs::path data = dir / "data.mmsa";

  std::string quiet = " > " + (dir / "log.txt").string() + " 2>&1";
  int rc = run_command(g_cli_path + " generate --out " + data.string() +
                       " --mode joint --n 90 --seed 7 --noise 0.2 --video-seq 3 --video-dim 4"
                       " --audio-seq 4 --audio-dim 3 --text-seq 2 --text-dim 5" + quiet);
  if (rc != 0) {
    detail = "generate exited " + std::to_string(rc);
    return false;
  }

  std::string train_flags =
      " train --data " + data.string() +
      " --approach a0 --epochs 2 --seed 9 --model-dim 8 --heads 2 --ff-dim 16 --layers 1"
      " --max-seq-len 8 --batch-size 16 --fusion-hidden 8 --out ";
  for (const char* run : {"r1", "r2"}) {
    rc = run_command(g_cli_path + train_flags + (dir / run).string() + quiet);
    if (rc != 0) {
      detail = "train exited " + std::to_string(rc);
      return false;
    }
  }

  int identical = 0;
  const std::array<const char*, 4> files = {"model.ckpt", "metrics_video.csv",
                                            "metrics_audio.csv", "metrics_text.csv"};
  for (const char* name : files)
    if (file_bytes(dir / "r1" / name) == file_bytes(dir / "r2" / name)) ++identical;

  detail = std::to_string(identical) + "/" + std::to_string(files.size()) +
           " artifacts bitwise identical across two runs";
  return identical == int(files.size());
}

// ---------------------------------------------------------------------------
// criterion 7: container round trips
// ---------------------------------------------------------------------------

Dataset random_dataset(Rng& rng) {
  Dataset ds;
  for (auto& shape : ds.shapes) {
    shape.seq_len = uint32_t(1 + rng.uniform_int(5));
    shape.feat_dim = uint32_t(1 + rng.uniform_int(6));
  }
  int n = rng.uniform_int(25);
  ds.samples.resize(size_t(n));
  for (MultimodalSample& s : ds.samples) {
    s.score = float(rng.uniform(-3.0, 3.0));
    for (int m = 0; m < 3; ++m) {
      const ModalityShape& shape = ds.shapes[size_t(m)];
      s.valid_lens[size_t(m)] = uint32_t(1 + rng.uniform_int(int(shape.seq_len)));
      s.features[size_t(m)].resize(size_t(shape.seq_len) * shape.feat_dim);
      for (size_t i = 0; i < size_t(s.valid_lens[size_t(m)]) * shape.feat_dim; ++i)
        s.features[size_t(m)][i] = float(rng.uniform(-4.0, 4.0));
    }
  }
  return ds;
}

bool criterion_round_trip(std::string& detail) {
  fs::path dir = g_workdir / "round_trip";
  fs::create_directories(dir);
  Rng rng(31337);

  int dataset_ok = 0;
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    Dataset ds = random_dataset(rng);
    fs::path first = dir / "ds_a.mmsa", second = dir / "ds_b.mmsa";
    write_dataset(ds, first.string());
    Dataset loaded = load_dataset(first.string());
    write_dataset(loaded, second.string());

    bool same = loaded.shapes == ds.shapes && loaded.size() == ds.size();
    for (size_t i = 0; same && i < ds.samples.size(); ++i) {
      same = loaded.samples[i].score == ds.samples[i].score &&
             loaded.samples[i].valid_lens == ds.samples[i].valid_lens &&
             loaded.samples[i].features == ds.samples[i].features;
    }
    if (same && file_bytes(first) == file_bytes(second)) ++dataset_ok;
  }

  int checkpoint_ok = 0;
  EncoderConfig cfg;
  cfg.model_dim = 8;
  cfg.num_heads = 2;
  cfg.ff_dim = 16;
  cfg.num_layers = 1;
  cfg.max_seq_len = 6;
  cfg.dropout_rate = Scalar(0.1);
  for (FusionMode mode : {FusionMode::LateVote, FusionMode::EarlyConcat, FusionMode::Attention}) {
    Rng init(uint64_t(mode) + 400);
    FusionModel model = make_fusion_model(mode, {5, 4, 6}, cfg, 8, init);
    fs::path first = dir / "ck_a.ckpt", second = dir / "ck_b.ckpt";
    save_checkpoint(make_checkpoint(model), first.string());
    FusionModel restored = restore_model(load_checkpoint(first.string()));
    save_checkpoint(make_checkpoint(restored), second.string());
    if (file_bytes(first) == file_bytes(second)) ++checkpoint_ok;
  }

  detail = std::to_string(dataset_ok) + "/" + std::to_string(trials) + " dataset trials, " +
           std::to_string(checkpoint_ok) + "/3 checkpoint modes bit-exact";
  return dataset_ok == trials && checkpoint_ok == 3;
}

// ---------------------------------------------------------------------------
// criterion 8: appended padding never moves logits
// ---------------------------------------------------------------------------

Batch padded_copy(const Batch& batch, int extra_rows, double fill) {
  Batch out = batch;
  for (int m = 0; m < 3; ++m) {
    const Tensor& src = batch.features[size_t(m)];
    int b = src.shape()[0], s = src.shape()[1], d = src.shape()[2];
    Tensor grown = Tensor::zeros({b, s + extra_rows, d});
    for (Scalar& v : grown.data()) v = Scalar(fill);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < s; ++j)
        for (int k = 0; k < d; ++k)
          grown.data()[(size_t(i) * size_t(s + extra_rows) + size_t(j)) * size_t(d) +
                       size_t(k)] = src.data()[(size_t(i) * size_t(s) + size_t(j)) * size_t(d) +
                                               size_t(k)];
    out.features[size_t(m)] = grown;
  }
  return out;
}

double max_logit_shift(const FusionModel& model, const Batch& a, const Batch& b) {
  auto diff = [](const Tensor& x, const Tensor& y) {
    double worst = 0;
    for (size_t i = 0; i < x.data().size(); ++i)
      worst = std::max(worst, std::abs(double(x.data()[i]) - double(y.data()[i])));
    return worst;
  };
  switch (model.mode) {
    case FusionMode::EarlyConcat:
      return diff(early_fusion_forward(model, a), early_fusion_forward(model, b));
    case FusionMode::Attention:
      return diff(attention_fusion_forward(model, a), attention_fusion_forward(model, b));
    default: {
      std::array<Tensor, 3> la = late_fusion_logits(model, a);
      std::array<Tensor, 3> lb = late_fusion_logits(model, b);
      double worst = 0;
      for (int m = 0; m < 3; ++m) worst = std::max(worst, diff(la[size_t(m)], lb[size_t(m)]));
      return worst;
    }
  }
}

bool criterion_mask_invariance(std::string& detail) {
  EncoderConfig cfg;
  cfg.model_dim = 8;
  cfg.num_heads = 2;
  cfg.ff_dim = 16;
  cfg.num_layers = 2;
  cfg.max_seq_len = 16;
  cfg.dropout_rate = 0;

  Rng data_rng(6060);
  Batch batch;
  batch.labels = {0, 1};
  for (int m = 0; m < 3; ++m) {
    batch.features[size_t(m)] = random_tensor({2, 4, 3 + m}, data_rng, -1.5, 1.5);
    batch.lengths[size_t(m)] = {4, 2};
  }

  double worst = 0;
  for (FusionMode mode : {FusionMode::LateVote, FusionMode::EarlyConcat, FusionMode::Attention}) {
    Rng init(uint64_t(mode) + 900);
    FusionModel model = make_fusion_model(mode, {3, 4, 5}, cfg, 8, init);
    // Zero padding matches the container convention; the nonzero fill proves
    // the mask alone blocks the new rows.
    worst = std::max(worst, max_logit_shift(model, batch, padded_copy(batch, 3, 0.0)));
    worst = std::max(worst, max_logit_shift(model, batch, padded_copy(batch, 5, 7.0)));
  }

  detail = "max logit shift " + fmt(worst, 12) + " after appending padding";
  return worst <= 1e-6;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--cli" && i + 1 < argc) {
      g_cli_path = argv[++i];
    } else if (arg == "--workdir" && i + 1 < argc) {
      g_workdir = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--cli PATH] [--workdir DIR]\n";
      return 64;
    }
  }
  if (g_workdir.empty()) {
    g_workdir = fs::temp_directory_path() /
                ("mmsa_acceptance_" + std::to_string(Clock::now().time_since_epoch().count()));
  }
  fs::create_directories(g_workdir);

  struct Criterion {
    const char* label;
    std::function<bool(std::string&)> run;
  };
  const std::vector<Criterion> criteria = {
      {"gradient checks (ops at 1e-4, fused losses at 1e-3)", criterion_gradients},
      {"vote matches the 27-combination oracle", criterion_vote},
      {"sentiment boundary table", criterion_boundaries},
      {"overfit 64 joint samples to 0.95", criterion_overfit},
      {"fusion ordering across seeds", criterion_ordering},
      {"train command bitwise determinism", criterion_determinism},
      {"dataset and checkpoint round trips", criterion_round_trip},
      {"padding mask invariance", criterion_mask_invariance},
  };

  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    std::string detail;
    bool pass = false;
    try {
      pass = criteria[i].run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    if (!pass) ++failures;
    std::cout << "criterion " << (i + 1) << ": " << (pass ? "PASS" : "FAIL") << " - "
              << criteria[i].label << " (" << detail << ")" << std::endl;
  }
  std::cout << (criteria.size() - size_t(failures)) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failures;
}
