#pragma once

#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "srpvqa/data.hpp"
#include "srpvqa/model.hpp"
#include "srpvqa/srp.hpp"

namespace srpvqa {

enum class RelationSource { ParsedSemantic, ParsedVisual, Oracle };
enum class DetectorMode { Simulated, Learned };

inline std::string_view relation_source_name(RelationSource s) {
  switch (s) {
    case RelationSource::ParsedSemantic:
      return "parsed-semantic";
    case RelationSource::ParsedVisual:
      return "parsed-visual";
    case RelationSource::Oracle:
      return "oracle";
  }
  return "parsed-semantic";
}

inline std::string_view attention_mode_name(AttentionMode m) {
  switch (m) {
    case AttentionMode::Mutual:
      return "mutual";
    case AttentionMode::Self:
      return "self";
    case AttentionMode::Msa:
      return "msa";
  }
  return "msa";
}

inline InputSet parse_input_set(std::string_view s) {
  if (s == "r+q") return InputSet::RQ;
  if (s == "v+q") return InputSet::VQ;
  if (s == "v+r+q") return InputSet::VRQ;
  throw ConfigError("unknown inputs '" + std::string(s) + "' (expected r+q, v+q or v+r+q)");
}

inline AttentionMode parse_attention_mode(std::string_view s) {
  if (s == "mutual") return AttentionMode::Mutual;
  if (s == "self") return AttentionMode::Self;
  if (s == "msa") return AttentionMode::Msa;
  throw ConfigError("unknown attention '" + std::string(s) + "' (expected mutual, self or msa)");
}

inline RelationSource parse_relation_source(std::string_view s) {
  if (s == "parsed-semantic") return RelationSource::ParsedSemantic;
  if (s == "parsed-visual") return RelationSource::ParsedVisual;
  if (s == "oracle") return RelationSource::Oracle;
  throw ConfigError("unknown relation source '" + std::string(s) + "' (expected parsed-semantic, parsed-visual or oracle)");
}

inline DetectorMode parse_detector_mode(std::string_view s) {
  if (s == "simulated") return DetectorMode::Simulated;
  if (s == "learned") return DetectorMode::Learned;
  throw ConfigError("unknown detector '" + std::string(s) + "' (expected simulated or learned)");
}

inline std::string_view detector_mode_name(DetectorMode m) {
  return m == DetectorMode::Simulated ? "simulated" : "learned";
}

struct RunConfig {
  std::string profile = "desk";

  // dims; d_r always equals d_q and d_v lives in data.feature_width
  std::size_t d_q = 32;
  std::size_t d = 32;
  std::size_t heads = 4;
  std::size_t d_h = 8;
  std::size_t layers = 2;
  std::size_t d_f = 32;
  std::size_t mlp_hidden = 32;
  std::size_t encoder_heads = 4;
  std::size_t vocab_size = 4096;

  double alpha = 0.8;
  double beta = 0.5;
  std::size_t min_keep = 3;

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::size_t warmup_steps = 0;  // linear lr ramp over the first optimizer steps
  std::size_t epochs = 10;
  std::size_t batch = 32;

  InputSet inputs = InputSet::VRQ;
  AttentionMode attention = AttentionMode::Msa;
  RelationSource relation_source = RelationSource::ParsedSemantic;
  bool fusion_relu = true;

  DetectorMode detector = DetectorMode::Simulated;
  DetectorConfig detector_training;
  DetectionSim detection{0.2, 0.05, 0.05, 0.05};

  DataConfig data;
  QuestionTemplates templates;
  std::size_t n_scenes = 1000;
  double holdout = 0.2;

  std::uint64_t seed = 1;           // model init and batch order
  std::uint64_t data_seed = 1;      // scenes and questions
  std::uint64_t encoder_seed = 17;  // frozen text encoder
  std::uint64_t detection_seed = 23;
  std::size_t threads = 1;

  std::size_t d_v() const { return data.feature_width; }
  std::size_t d_r() const { return d_q; }

  static RunConfig desk() { return RunConfig{}; }

  static RunConfig paper_scale() {
    RunConfig c;
    c.profile = "paper-scale";
    c.d = 512;
    c.heads = 8;
    c.d_h = 64;
    c.d_q = 1024;
    c.d_f = 1024;
    c.mlp_hidden = 512;
    c.encoder_heads = 8;
    c.data.feature_width = 2048;
    c.data.min_objects = 10;
    c.data.max_objects = 20;
    return c;
  }

  static RunConfig named_profile(std::string_view name) {
    if (name == "desk") return desk();
    if (name == "paper-scale") return paper_scale();
    throw ConfigError("unknown profile '" + std::string(name) + "' (expected desk or paper-scale)");
  }

  void validate() const {
    validate_thresholds(alpha, beta);
    if (heads == 0 || d % heads != 0) throw ConfigError("config: d must be divisible by heads");
    if (d_h * heads != d) throw ConfigError("config: d_h * heads must equal d");
    if (encoder_heads == 0 || d_q % encoder_heads != 0) throw ConfigError("config: d_q must be divisible by encoder_heads");
    if (d_q == 0 || d_f == 0 || mlp_hidden == 0 || vocab_size == 0) throw ConfigError("config: widths must be positive");
    if (!(lr >= 0)) throw ConfigError("config: lr must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0)) throw ConfigError("config: bad Adam constants");
    if (batch == 0) throw ConfigError("config: batch must be positive");
    if (!(holdout > 0 && holdout < 1)) throw ConfigError("config: holdout must lie in (0,1)");
    if (n_scenes == 0) throw ConfigError("config: n_scenes must be positive");
    if (threads == 0) throw ConfigError("config: threads must be positive");
    detection.validate();
    data.validate();
  }

  ModelDims model_dims(std::size_t answers) const {
    ModelDims m;
    m.q_width = d_q;
    m.v_width = d_v() + 4;
    m.r_width = relation_source == RelationSource::ParsedVisual ? 2 * d_v() + 8 : d_r() + 8;
    m.model_width = d;
    m.heads = heads;
    m.layers = layers;
    m.mlp_hidden = mlp_hidden;
    m.fused_width = d_f;
    m.answers = answers;
    return m;
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("config: unknown key '" + where + "." + key + "'");
  }
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"profile", c.profile},
      {"dims",
       {{"d_q", c.d_q},
        {"d", c.d},
        {"heads", c.heads},
        {"d_h", c.d_h},
        {"layers", c.layers},
        {"d_f", c.d_f},
        {"mlp_hidden", c.mlp_hidden},
        {"encoder_heads", c.encoder_heads},
        {"vocab_size", c.vocab_size}}},
      {"thresholds", {{"alpha", c.alpha}, {"beta", c.beta}, {"min_keep", c.min_keep}}},
      {"optimizer",
       {{"lr", c.lr},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"eps", c.eps},
        {"warmup_steps", c.warmup_steps},
        {"epochs", c.epochs},
        {"batch", c.batch}}},
      {"ablation",
       {{"inputs", input_set_name(c.inputs)},
        {"attention", attention_mode_name(c.attention)},
        {"relation_source", relation_source_name(c.relation_source)},
        {"fusion_relu", c.fusion_relu}}},
      {"detector",
       {{"mode", detector_mode_name(c.detector)},
        {"hidden", c.detector_training.hidden},
        {"embedding", c.detector_training.embedding},
        {"margin", c.detector_training.margin},
        {"lr", c.detector_training.lr},
        {"epochs", c.detector_training.epochs},
        {"batch", c.detector_training.batch}}},
      {"detection",
       {{"sigma", c.detection.sigma},
        {"confusion", c.detection.confusion},
        {"dropout", c.detection.dropout},
        {"candidate_floor", c.detection.candidate_floor}}},
      {"data", c.data},
      {"questions",
       {{"exists", c.templates.exists},
        {"color", c.templates.color},
        {"relation_verify", c.templates.relation_verify},
        {"relation_query", c.templates.relation_query}}},
      {"n_scenes", c.n_scenes},
      {"holdout", c.holdout},
      {"seed", c.seed},
      {"data_seed", c.data_seed},
      {"encoder_seed", c.encoder_seed},
      {"detection_seed", c.detection_seed},
      {"threads", c.threads}};
}

/// Reads a config; keys that are absent keep the values of the named profile
/// (the "profile" key, default desk). Unknown keys are rejected.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  detail::reject_unknown(j,
                         {"profile", "dims", "thresholds", "optimizer", "ablation", "detector", "detection", "data",
                          "questions", "n_scenes", "holdout", "seed", "data_seed", "encoder_seed", "detection_seed",
                          "threads"},
                         "");
  c = RunConfig::named_profile(j.value("profile", std::string("desk")));
  try {
    if (j.contains("dims")) {
      const auto& s = j.at("dims");
      detail::reject_unknown(s, {"d_q", "d", "heads", "d_h", "layers", "d_f", "mlp_hidden", "encoder_heads", "vocab_size"},
                             "dims");
      c.d_q = s.value("d_q", c.d_q);
      c.d = s.value("d", c.d);
      c.heads = s.value("heads", c.heads);
      c.d_h = s.value("d_h", c.d_h);
      c.layers = s.value("layers", c.layers);
      c.d_f = s.value("d_f", c.d_f);
      c.mlp_hidden = s.value("mlp_hidden", c.mlp_hidden);
      c.encoder_heads = s.value("encoder_heads", c.encoder_heads);
      c.vocab_size = s.value("vocab_size", c.vocab_size);
    }
    if (j.contains("thresholds")) {
      const auto& s = j.at("thresholds");
      detail::reject_unknown(s, {"alpha", "beta", "min_keep"}, "thresholds");
      c.alpha = s.value("alpha", c.alpha);
      c.beta = s.value("beta", c.beta);
      c.min_keep = s.value("min_keep", c.min_keep);
    }
    if (j.contains("optimizer")) {
      const auto& s = j.at("optimizer");
      detail::reject_unknown(s, {"lr", "beta1", "beta2", "eps", "warmup_steps", "epochs", "batch"}, "optimizer");
      c.lr = s.value("lr", c.lr);
      c.beta1 = s.value("beta1", c.beta1);
      c.beta2 = s.value("beta2", c.beta2);
      c.eps = s.value("eps", c.eps);
      c.warmup_steps = s.value("warmup_steps", c.warmup_steps);
      c.epochs = s.value("epochs", c.epochs);
      c.batch = s.value("batch", c.batch);
    }
    if (j.contains("ablation")) {
      const auto& s = j.at("ablation");
      detail::reject_unknown(s, {"inputs", "attention", "relation_source", "fusion_relu"}, "ablation");
      if (s.contains("inputs")) c.inputs = parse_input_set(s.at("inputs").get<std::string>());
      if (s.contains("attention")) c.attention = parse_attention_mode(s.at("attention").get<std::string>());
      if (s.contains("relation_source")) {
        c.relation_source = parse_relation_source(s.at("relation_source").get<std::string>());
      }
      c.fusion_relu = s.value("fusion_relu", c.fusion_relu);
    }
    if (j.contains("detector")) {
      const auto& s = j.at("detector");
      detail::reject_unknown(s, {"mode", "hidden", "embedding", "margin", "lr", "epochs", "batch"}, "detector");
      if (s.contains("mode")) c.detector = parse_detector_mode(s.at("mode").get<std::string>());
      auto& t = c.detector_training;
      t.hidden = s.value("hidden", t.hidden);
      t.embedding = s.value("embedding", t.embedding);
      t.margin = s.value("margin", t.margin);
      t.lr = s.value("lr", t.lr);
      t.epochs = s.value("epochs", t.epochs);
      t.batch = s.value("batch", t.batch);
    }
    if (j.contains("detection")) {
      const auto& s = j.at("detection");
      detail::reject_unknown(s, {"sigma", "confusion", "dropout", "candidate_floor"}, "detection");
      c.detection.sigma = s.value("sigma", c.detection.sigma);
      c.detection.confusion = s.value("confusion", c.detection.confusion);
      c.detection.dropout = s.value("dropout", c.detection.dropout);
      c.detection.candidate_floor = s.value("candidate_floor", c.detection.candidate_floor);
    }
    if (j.contains("data")) {
      nlohmann::json merged = c.data;
      for (const auto& [key, value] : j.at("data").items()) {
        if (!merged.contains(key)) throw ConfigError("config: unknown key 'data." + key + "'");
        merged[key] = value;
      }
      c.data = merged.get<DataConfig>();
    }
    if (j.contains("questions")) {
      const auto& s = j.at("questions");
      detail::reject_unknown(s, {"exists", "color", "relation_verify", "relation_query"}, "questions");
      c.templates.exists = s.value("exists", c.templates.exists);
      c.templates.color = s.value("color", c.templates.color);
      c.templates.relation_verify = s.value("relation_verify", c.templates.relation_verify);
      c.templates.relation_query = s.value("relation_query", c.templates.relation_query);
    }
    c.n_scenes = j.value("n_scenes", c.n_scenes);
    c.holdout = j.value("holdout", c.holdout);
    c.seed = j.value("seed", c.seed);
    c.data_seed = j.value("data_seed", c.data_seed);
    c.encoder_seed = j.value("encoder_seed", c.encoder_seed);
    c.detection_seed = j.value("detection_seed", c.detection_seed);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return j.get<RunConfig>();
}

}  // namespace srpvqa
