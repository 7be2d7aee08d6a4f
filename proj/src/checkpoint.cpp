#include "mmsa/checkpoint.hpp"

#include <cstring>
#include <sstream>

#include "binary_io.hpp"
#include "mmsa/errors.hpp"

namespace mmsa {

using io::put_f32;
using io::put_string;
using io::put_u32;
using io::read_file;
using io::Reader;
using io::write_file;

namespace {

constexpr char kMagic[4] = {'M', 'M', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;
constexpr uint32_t kMaxRank = 8;

const std::string& require_key(const Checkpoint& ck, const std::string& key) {
  auto it = ck.config.find(key);
  if (it == ck.config.end()) {
    throw FormatError("checkpoint config missing key '" + key + "'");
  }
  return it->second;
}

int parse_int(const Checkpoint& ck, const std::string& key) {
  const std::string& text = require_key(ck, key);
  try {
    size_t used = 0;
    int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw FormatError("checkpoint key '" + key + "' has non-integer value '" + text + "'");
  }
}

Scalar parse_scalar(const Checkpoint& ck, const std::string& key) {
  const std::string& text = require_key(ck, key);
  try {
    size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return Scalar(v);
  } catch (const std::exception&) {
    throw FormatError("checkpoint key '" + key + "' has non-numeric value '" + text + "'");
  }
}

FusionMode parse_mode(const std::string& text) {
  for (FusionMode mode :
       {FusionMode::LateVote, FusionMode::EarlyConcat, FusionMode::Attention}) {
    if (text == fusion_mode_name(mode)) return mode;
  }
  throw FormatError("checkpoint names unknown fusion mode '" + text + "'");
}

std::string config_text(const std::map<std::string, std::string>& config) {
  std::string text;
  for (const auto& [key, value] : config) {
    if (key.empty() || key.find('=') != std::string::npos ||
        key.find('\n') != std::string::npos) {
      throw ContractError("config key '" + key + "' is not storable");
    }
    if (value.find('\n') != std::string::npos) {
      throw ContractError("config value for '" + key + "' contains a newline");
    }
    text += key;
    text += '=';
    text += value;
    text += '\n';
  }
  return text;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> config;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw FormatError("malformed checkpoint config line '" + line + "'");
    }
    std::string key = line.substr(0, eq);
    if (!config.emplace(key, line.substr(eq + 1)).second) {
      throw FormatError("duplicate checkpoint config key '" + key + "'");
    }
  }
  return config;
}

}  // namespace

std::string format_scalar(Scalar v) {
  std::ostringstream os;
  os.precision(17);
  os << double(v);
  return os.str();
}

Checkpoint make_checkpoint(const FusionModel& model) {
  Checkpoint ck;
  ck.config["model.mode"] = fusion_mode_name(model.mode);
  ck.config["model.model_dim"] = std::to_string(model.config.model_dim);
  ck.config["model.num_heads"] = std::to_string(model.config.num_heads);
  ck.config["model.ff_dim"] = std::to_string(model.config.ff_dim);
  ck.config["model.num_layers"] = std::to_string(model.config.num_layers);
  ck.config["model.max_seq_len"] = std::to_string(model.config.max_seq_len);
  ck.config["model.dropout_rate"] = format_scalar(model.config.dropout_rate);
  ck.config["model.fusion_hidden"] = std::to_string(model.fusion_hidden);
  ck.config["model.video_dim"] = std::to_string(model.input_dims[0]);
  ck.config["model.audio_dim"] = std::to_string(model.input_dims[1]);
  ck.config["model.text_dim"] = std::to_string(model.input_dims[2]);
  ck.tensors = named_params(model);
  return ck;
}

FusionModel restore_model(const Checkpoint& ck) {
  FusionMode mode = parse_mode(require_key(ck, "model.mode"));
  EncoderConfig cfg;
  cfg.model_dim = parse_int(ck, "model.model_dim");
  cfg.num_heads = parse_int(ck, "model.num_heads");
  cfg.ff_dim = parse_int(ck, "model.ff_dim");
  cfg.num_layers = parse_int(ck, "model.num_layers");
  cfg.max_seq_len = parse_int(ck, "model.max_seq_len");
  cfg.dropout_rate = parse_scalar(ck, "model.dropout_rate");
  int fusion_hidden = parse_int(ck, "model.fusion_hidden");
  std::array<int, 3> dims = {parse_int(ck, "model.video_dim"),
                             parse_int(ck, "model.audio_dim"),
                             parse_int(ck, "model.text_dim")};
  for (int d : dims) {
    if (d < 1) {
      throw FormatError("checkpoint names nonpositive input dim " + std::to_string(d));
    }
  }

  Rng rng(0);  // placeholder weights, overwritten below
  FusionModel model;
  try {
    model = make_fusion_model(mode, dims, cfg, fusion_hidden, rng);
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint config is not a valid model: " + std::string(e.what()));
  }

  auto named = named_params(model);
  if (ck.tensors.size() != named.size()) {
    throw FormatError("checkpoint holds " + std::to_string(ck.tensors.size()) +
                      " tensors, model needs " + std::to_string(named.size()));
  }
  std::map<std::string, Tensor> by_name(named.begin(), named.end());
  for (const auto& [name, stored] : ck.tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw FormatError("checkpoint tensor '" + name + "' does not belong to this model");
    }
    if (it->second.shape() != stored.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " +
                        shape_string(stored.shape()) + ", model expects " +
                        shape_string(it->second.shape()));
    }
    std::span<Scalar> dst = it->second.data();
    std::span<const Scalar> src = stored.data();
    std::copy(src.begin(), src.end(), dst.begin());
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw FormatError("checkpoint is missing tensor '" + by_name.begin()->first + "'");
  }
  return model;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, kCheckpointVersion);
  put_string(buf, config_text(ck.config));
  put_u32(buf, uint32_t(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    if (name.empty()) throw ContractError("checkpoint tensor with empty name");
    put_string(buf, name);
    put_u32(buf, uint32_t(t.rank()));
    for (int axis = 0; axis < t.rank(); ++axis) put_u32(buf, uint32_t(t.extent(axis)));
    for (Scalar v : t.data()) put_f32(buf, float(v));
  }
  write_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::vector<uint8_t> buf = read_file(path);
  Reader r{buf};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError(path + " is not a checkpoint file (bad magic)");
  }
  r.off = 4;
  uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(path + " has unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config = parse_config_text(r.string("config block"));
  uint32_t count = r.u32("tensor count");
  for (uint32_t i = 0; i < count; ++i) {
    std::string tag = "tensor " + std::to_string(i);
    std::string name = r.string(tag + " name");
    if (name.empty()) throw FormatError(tag + " has an empty name");
    uint32_t rank = r.u32(name + " rank");
    if (rank == 0 || rank > kMaxRank) {
      throw FormatError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    }
    std::vector<int> shape;
    int64_t numel = 1;
    for (uint32_t axis = 0; axis < rank; ++axis) {
      uint32_t extent = r.u32(name + " extent");
      if (extent == 0 || extent > (1u << 24)) {
        throw FormatError("tensor '" + name + "' has implausible extent " +
                          std::to_string(extent));
      }
      shape.push_back(int(extent));
      numel *= extent;
    }
    r.need(size_t(numel) * 4, name + " data");
    Tensor t = Tensor::zeros(shape);
    std::span<Scalar> dst = t.data();
    for (int64_t k = 0; k < numel; ++k) dst[size_t(k)] = Scalar(r.f32(name + " data"));
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.off != buf.size()) {
    throw FormatError(path + " has " + std::to_string(buf.size() - r.off) +
                      " trailing bytes after the checkpoint payload");
  }
  return ck;
}

int copy_matching_params(const FusionModel& source, FusionModel& target) {
  auto source_named = named_params(source);
  std::map<std::string, Tensor> by_name(source_named.begin(), source_named.end());
  int copied = 0;
  for (auto& [name, t] : named_params(target)) {
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second.shape() != t.shape()) continue;
    std::span<const Scalar> src = it->second.data();
    std::span<Scalar> dst = t.data();
    std::copy(src.begin(), src.end(), dst.begin());
    ++copied;
  }
  return copied;
}

}  // namespace mmsa
