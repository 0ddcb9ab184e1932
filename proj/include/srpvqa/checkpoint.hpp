#pragma once

#include <zlib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "srpvqa/pipeline.hpp"

namespace srpvqa {

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "srpvqa-checkpoint";

class CheckpointError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

struct Checkpoint {
  RunConfig config;
  std::vector<std::string> answer_vocab;
  TrainState state;
  std::optional<DetectorParams> detector;
};

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

/// Writes `contents` to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::string& path, std::string_view contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw std::runtime_error("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

namespace detail {

inline nlohmann::json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.storage()}}; }

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

template <class Params>
nlohmann::json named_tensors_json(Params& p) {
  nlohmann::json out = nlohmann::json::object();
  for (auto& [name, t] : named_parameters(p)) out[name] = tensor_json(*t);
  return out;
}

template <class Params>
void assign_named_tensors(Params& p, const nlohmann::json& j, const std::string& what) {
  std::size_t used = 0;
  for (auto& [name, t] : named_parameters(p)) {
    if (!j.contains(name)) throw CheckpointError("checkpoint: " + what + " is missing tensor '" + name + "'");
    Tensor loaded = tensor_from_json(j.at(name));
    if (loaded.shape() != t->shape()) {
      throw CheckpointError("checkpoint: tensor '" + name + "' has shape " + shape_string(loaded.shape()) +
                            ", expected " + shape_string(t->shape()));
    }
    *t = std::move(loaded);
    ++used;
  }
  if (used != j.size()) throw CheckpointError("checkpoint: " + what + " has unexpected extra tensors");
}

}  // namespace detail

inline nlohmann::json checkpoint_payload(Checkpoint& c) {
  nlohmann::json moments_m = nlohmann::json::array(), moments_v = nlohmann::json::array();
  for (const Tensor& t : c.state.optimizer.first_moment) moments_m.push_back(detail::tensor_json(t));
  for (const Tensor& t : c.state.optimizer.second_moment) moments_v.push_back(detail::tensor_json(t));
  nlohmann::json history = nlohmann::json::array();
  for (const EpochLog& e : c.state.history) {
    history.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy}});
  }
  nlohmann::json j{{"config", c.config},
                   {"answer_vocab", c.answer_vocab},
                   {"params", detail::named_tensors_json(c.state.params)},
                   {"optimizer",
                    {{"step", c.state.optimizer.step},
                     {"lr", c.state.optimizer.lr},
                     {"beta1", c.state.optimizer.beta1},
                     {"beta2", c.state.optimizer.beta2},
                     {"eps", c.state.optimizer.eps},
                     {"m", moments_m},
                     {"v", moments_v}}},
                   {"epoch", c.state.epoch},
                   {"history", history}};
  if (c.detector) {
    j["detector"] = {{"params", detail::named_tensors_json(*c.detector)},
                     {"object_words", detail::tensor_json(c.detector->object_words)},
                     {"predicate_words", detail::tensor_json(c.detector->predicate_words)},
                     {"margin", c.detector->margin}};
  }
  return j;
}

inline std::string serialize_checkpoint(Checkpoint& c) {
  const std::string payload = checkpoint_payload(c).dump();
  std::ostringstream header;
  header << kCheckpointMagic << ' ' << kCheckpointVersion << ' ' << std::hex << std::setw(8) << std::setfill('0')
         << crc32_of(payload) << std::dec << ' ' << payload.size() << '\n';
  return header.str() + payload;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const std::size_t eol = bytes.find('\n');
  if (eol == std::string::npos) throw CheckpointError("checkpoint: missing header line");
  std::istringstream header(bytes.substr(0, eol));
  std::string magic, crc_hex;
  long long version = -1;
  std::size_t length = 0;
  if (!(header >> magic >> version >> crc_hex >> length) || magic != kCheckpointMagic) {
    throw CheckpointError("checkpoint: malformed header");
  }
  if (version < kCheckpointVersion) {
    throw CheckpointError("checkpoint: version " + std::to_string(version) + " predates supported version " +
                          std::to_string(kCheckpointVersion) + "; migration is not supported, retrain or regenerate");
  }
  if (version > kCheckpointVersion) {
    throw CheckpointError("checkpoint: version " + std::to_string(version) + " is newer than this build (" +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::string payload = bytes.substr(eol + 1);
  if (payload.size() != length) throw CheckpointError("checkpoint: truncated or padded payload");
  std::uint32_t expected = 0;
  try {
    expected = static_cast<std::uint32_t>(std::stoul(crc_hex, nullptr, 16));
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint: malformed checksum");
  }
  if (crc32_of(payload) != expected) throw CheckpointError("checkpoint: checksum mismatch (file is corrupted)");

  Checkpoint c;
  try {
    const nlohmann::json j = nlohmann::json::parse(payload);
    c.config = j.at("config").get<RunConfig>();
    c.answer_vocab = j.at("answer_vocab").get<std::vector<std::string>>();
    c.state = init_training(c.config, c.answer_vocab.size());
    detail::assign_named_tensors(c.state.params, j.at("params"), "model");
    const auto& opt = j.at("optimizer");
    AdamState& a = c.state.optimizer;
    a.step = opt.at("step").get<std::uint64_t>();
    a.lr = opt.at("lr").get<double>();
    a.beta1 = opt.at("beta1").get<double>();
    a.beta2 = opt.at("beta2").get<double>();
    a.eps = opt.at("eps").get<double>();
    if (opt.at("m").size() != a.first_moment.size() || opt.at("v").size() != a.second_moment.size()) {
      throw CheckpointError("checkpoint: optimizer state does not match the model");
    }
    for (std::size_t i = 0; i < a.first_moment.size(); ++i) {
      Tensor m = detail::tensor_from_json(opt.at("m")[i]);
      Tensor v = detail::tensor_from_json(opt.at("v")[i]);
      if (m.shape() != a.first_moment[i].shape() || v.shape() != a.second_moment[i].shape()) {
        throw CheckpointError("checkpoint: optimizer moment shape mismatch");
      }
      a.first_moment[i] = std::move(m);
      a.second_moment[i] = std::move(v);
    }
    c.state.epoch = j.at("epoch").get<std::size_t>();
    for (const auto& e : j.at("history")) {
      c.state.history.push_back(EpochLog{e.at("epoch").get<std::size_t>(), e.at("loss").get<double>(),
                                         e.at("train_accuracy").get<double>()});
    }
    if (j.contains("detector")) {
      const auto& d = j.at("detector");
      DetectorConfig dc = c.config.detector_training;
      dc.margin = d.at("margin").get<double>();
      DetectorParams p = init_detector(c.config.d_v(), c.config.d_q, dc, detail::tensor_from_json(d.at("object_words")),
                                       detail::tensor_from_json(d.at("predicate_words")));
      detail::assign_named_tensors(p, d.at("params"), "detector");
      c.detector = std::move(p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  return c;
}

inline void save_checkpoint(const std::string& path, Checkpoint& c) { write_file_atomic(path, serialize_checkpoint(c)); }

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace srpvqa
