#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmsa/checkpoint.hpp"
#include "mmsa/data.hpp"
#include "mmsa/errors.hpp"
#include "mmsa/training.hpp"

namespace py = pybind11;
using namespace mmsa;

namespace {

ModalityShape to_shape(const std::pair<int, int>& seq_and_dim) {
  ModalityShape shape;
  shape.seq_len = uint32_t(seq_and_dim.first);
  shape.feat_dim = uint32_t(seq_and_dim.second);
  return shape;
}

// Defaulted approach: the model's own mode, so fused models evaluate fused
// and late-vote models evaluate the vote.
Approach to_approach(const FusionModel& model, const std::optional<std::string>& name) {
  if (name) return parse_approach(*name);
  switch (model.mode) {
    case FusionMode::LateVote: return Approach::LateVote;
    case FusionMode::EarlyConcat: return Approach::EarlyConcat;
    default: return Approach::Attention;
  }
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multimodal sentiment classifier: per-modality transformer encoders "
            "with selectable late-vote, early-concatenation, or attention fusion.";

  py::register_exception<Error>(m, "Error");

  m.attr("CLASS_NAMES") = py::make_tuple("negative", "neutral", "positive");
  m.attr("APPROACHES") = py::make_tuple("video", "audio", "text", "a0", "a1", "a2");

  m.def(
      "discretize",
      [](double score) { return int(discretize_sentiment(Scalar(score))); },
      py::arg("score"),
      "Map a sentiment score in [-3, 3] to a class index: [-3,-1) negative, "
      "[-1,1] neutral, (1,3] positive.");

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def("class_counts", &Dataset::class_counts,
           "Sample counts per class, (negative, neutral, positive).")
      .def_property_readonly(
          "feature_dims",
          [](const Dataset& ds) {
            return std::array<int, 3>{int(ds.shapes[0].feat_dim), int(ds.shapes[1].feat_dim),
                                      int(ds.shapes[2].feat_dim)};
          },
          "Per-modality feature widths, (video, audio, text).")
      .def_property_readonly(
          "seq_lens",
          [](const Dataset& ds) {
            return std::array<int, 3>{int(ds.shapes[0].seq_len), int(ds.shapes[1].seq_len),
                                      int(ds.shapes[2].seq_len)};
          },
          "Per-modality padded sequence lengths, (video, audio, text).")
      .def("labels",
           [](const Dataset& ds) {
             std::vector<int> out;
             out.reserve(ds.size());
             for (const MultimodalSample& s : ds.samples) out.push_back(int(s.label()));
             return out;
           })
      .def("scores", [](const Dataset& ds) {
        std::vector<float> out;
        out.reserve(ds.size());
        for (const MultimodalSample& s : ds.samples) out.push_back(s.score);
        return out;
      });

  m.def(
      "generate",
      [](int n, const std::string& mode, uint64_t seed, double noise,
         std::pair<int, int> video, std::pair<int, int> audio, std::pair<int, int> text) {
        SyntheticConfig cfg;
        cfg.n_samples = uint32_t(n);
        if (mode == "joint") {
          cfg.coupling = Coupling::Joint;
        } else if (mode == "independent") {
          cfg.coupling = Coupling::Independent;
        } else {
          throw ConfigError("mode must be 'joint' or 'independent', got '" + mode + "'");
        }
        cfg.seed = seed;
        cfg.noise_std = noise;
        cfg.shapes = {to_shape(video), to_shape(audio), to_shape(text)};
        return generate_synthetic(cfg);
      },
      py::arg("n"), py::arg("mode") = "joint", py::arg("seed") = 0, py::arg("noise") = 0.3,
      py::arg("video") = std::pair<int, int>{20, 35},
      py::arg("audio") = std::pair<int, int>{20, 74},
      py::arg("text") = std::pair<int, int>{50, 300},
      "Balanced synthetic dataset. Modality shapes are (seq_len, feat_dim) pairs. "
      "In 'independent' mode any single modality predicts the label; in 'joint' "
      "mode only the full triple does.");

  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def(
      "save_dataset",
      [](const Dataset& ds, const std::string& path) { write_dataset(ds, path); },
      py::arg("dataset"), py::arg("path"));

  m.def(
      "split",
      [](const Dataset& ds, double train, double val, double test, uint64_t seed) {
        SplitDataset s = split_dataset(ds, {train, val, test}, seed);
        return py::make_tuple(std::move(s.train), std::move(s.val), std::move(s.test));
      },
      py::arg("dataset"), py::arg("train") = 0.7, py::arg("val") = 0.15, py::arg("test") = 0.15,
      py::arg("seed") = 0, "Seeded shuffle then contiguous (train, val, test) datasets.");

  py::class_<FusionModel>(m, "Model")
      .def_property_readonly(
          "mode", [](const FusionModel& f) { return std::string(fusion_mode_name(f.mode)); })
      .def_property_readonly("input_dims", [](const FusionModel& f) { return f.input_dims; })
      .def("parameter_names",
           [](const FusionModel& f) {
             std::vector<std::string> names;
             for (const auto& [name, tensor] : named_params(f)) names.push_back(name);
             return names;
           })
      .def(
          "save",
          [](const FusionModel& f, const std::string& path) {
            save_checkpoint(make_checkpoint(f), path);
          },
          py::arg("path"), "Write a checkpoint holding the config and all parameters.");

  m.def(
      "make_model",
      [](const std::string& approach, std::array<int, 3> input_dims, int model_dim, int heads,
         int ff_dim, int layers, int max_seq_len, double dropout, int fusion_hidden,
         uint64_t seed) {
        EncoderConfig cfg;
        cfg.model_dim = model_dim;
        cfg.num_heads = heads;
        cfg.ff_dim = ff_dim;
        cfg.num_layers = layers;
        cfg.max_seq_len = max_seq_len;
        cfg.dropout_rate = Scalar(dropout);
        Rng rng(seed);
        return make_fusion_model(approach_mode(parse_approach(approach)), input_dims, cfg,
                                 fusion_hidden, rng);
      },
      py::arg("approach"), py::arg("input_dims"), py::arg("model_dim") = 32,
      py::arg("heads") = 4, py::arg("ff_dim") = 64, py::arg("layers") = 1,
      py::arg("max_seq_len") = 64, py::arg("dropout") = 0.1, py::arg("fusion_hidden") = 64,
      py::arg("seed") = 0,
      "Fresh model shaped for the approach: 'a1'/'a2' build their fusion head, "
      "'a0' and the modality names build the three-encoder late-vote shape.");

  m.def("load_model",
        [](const std::string& path) { return restore_model(load_checkpoint(path)); },
        py::arg("path"));

  m.def(
      "train",
      [](FusionModel& model, const Dataset& train_set, const Dataset& val_set,
         const std::string& approach, double lr, double beta1, double beta2, double eps,
         int batch_size, int epochs, uint64_t seed) {
        TrainConfig cfg;
        cfg.approach = parse_approach(approach);
        cfg.learning_rate = Scalar(lr);
        cfg.beta1 = Scalar(beta1);
        cfg.beta2 = Scalar(beta2);
        cfg.eps = Scalar(eps);
        cfg.batch_size = batch_size;
        cfg.epochs = epochs;
        cfg.seed = seed;
        TrainHistory history = mmsa::train(model, train_set, val_set, cfg);
        py::list out;
        for (const EpochMetrics& e : history) {
          py::dict row;
          row["train_loss"] = double(e.train_loss);
          row["train_acc"] = double(e.train_accuracy);
          row["val_loss"] = double(e.val_loss);
          row["val_acc"] = double(e.val_accuracy);
          out.append(std::move(row));
        }
        return out;
      },
      py::arg("model"), py::arg("train_set"), py::arg("val_set"), py::arg("approach"),
      py::arg("lr") = 1e-3, py::arg("beta1") = 0.9, py::arg("beta2") = 0.999,
      py::arg("eps") = 1e-8, py::arg("batch_size") = 32, py::arg("epochs") = 30,
      py::arg("seed") = 7,
      "Adam training in place; returns one metrics dict per epoch. The approach "
      "must match the model shape ('video'/'audio'/'text'/'a0' on a late-vote "
      "model, 'a1'/'a2' on their fused models).");

  m.def(
      "evaluate",
      [](const FusionModel& model, const Dataset& ds, const std::optional<std::string>& approach,
         int batch_size) {
        EvalResult r = mmsa::evaluate(model, to_approach(model, approach), ds, batch_size);
        py::dict out;
        out["accuracy"] = double(r.accuracy);
        out["mean_loss"] = double(r.mean_loss);
        return out;
      },
      py::arg("model"), py::arg("dataset"), py::arg("approach") = py::none(),
      py::arg("batch_size") = 32,
      "Dropout-free accuracy and mean loss; approach defaults to the model's mode.");

  m.def(
      "predict",
      [](const FusionModel& model, const Dataset& ds, const std::optional<std::string>& approach,
         int batch_size) {
        Approach a = to_approach(model, approach);
        std::vector<int> out;
        out.reserve(ds.size());
        for (const Batch& batch : make_batches(ds, identity_order(ds.size()), batch_size)) {
          std::vector<int> labels = approach_predict(model, a, batch);
          out.insert(out.end(), labels.begin(), labels.end());
        }
        return out;
      },
      py::arg("model"), py::arg("dataset"), py::arg("approach") = py::none(),
      py::arg("batch_size") = 32, "Class indices in dataset order.");
}
