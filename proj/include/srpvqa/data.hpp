#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srpvqa/nn.hpp"
#include "srpvqa/scene.hpp"
#include "srpvqa/srp.hpp"

namespace srpvqa {

inline constexpr int kDatasetSchemaVersion = 1;

struct DataConfig {
  std::size_t min_objects = 3;
  std::size_t max_objects = 12;
  double width = 100.0;
  double height = 100.0;
  std::size_t feature_width = 16;  // d_v
  double latent_noise = 0.1;
  std::uint64_t prototype_seed = 7;
  double max_iou = 0.1;
  double min_size = 0.08;  // box side range as a fraction of the extent
  double max_size = 0.2;
  double stack_probability = 0.25;
  std::size_t relation_pairs = 4;
  std::size_t placement_retries = 200;
  GeometryRules geometry;

  void validate() const {
    if (min_objects < 2 || min_objects > max_objects) throw ConfigError("data: need 2 <= min_objects <= max_objects");
    if (max_objects > kObjectLabelCount) throw ConfigError("data: max_objects exceeds the object vocabulary");
    if (!(width > 0 && height > 0)) throw ConfigError("data: extent must be positive");
    if (feature_width == 0) throw ConfigError("data: feature_width must be positive");
    if (!(min_size > 0 && min_size <= max_size && max_size < 1.0)) throw ConfigError("data: bad box size range");
    if (!(max_iou >= 0 && max_iou <= 1)) throw ConfigError("data: max_iou outside [0,1]");
    if (!(stack_probability >= 0 && stack_probability <= 1)) throw ConfigError("data: stack_probability outside [0,1]");
  }
};

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json{{"min_objects", c.min_objects},
                     {"max_objects", c.max_objects},
                     {"width", c.width},
                     {"height", c.height},
                     {"feature_width", c.feature_width},
                     {"latent_noise", c.latent_noise},
                     {"prototype_seed", c.prototype_seed},
                     {"max_iou", c.max_iou},
                     {"min_size", c.min_size},
                     {"max_size", c.max_size},
                     {"stack_probability", c.stack_probability},
                     {"relation_pairs", c.relation_pairs},
                     {"placement_retries", c.placement_retries},
                     {"margin", c.geometry.margin},
                     {"near_radius", c.geometry.near_radius},
                     {"contact_tolerance", c.geometry.contact_tolerance}};
}

inline void from_json(const nlohmann::json& j, DataConfig& c) {
  DataConfig d;
  c.min_objects = j.value("min_objects", d.min_objects);
  c.max_objects = j.value("max_objects", d.max_objects);
  c.width = j.value("width", d.width);
  c.height = j.value("height", d.height);
  c.feature_width = j.value("feature_width", d.feature_width);
  c.latent_noise = j.value("latent_noise", d.latent_noise);
  c.prototype_seed = j.value("prototype_seed", d.prototype_seed);
  c.max_iou = j.value("max_iou", d.max_iou);
  c.min_size = j.value("min_size", d.min_size);
  c.max_size = j.value("max_size", d.max_size);
  c.stack_probability = j.value("stack_probability", d.stack_probability);
  c.relation_pairs = j.value("relation_pairs", d.relation_pairs);
  c.placement_retries = j.value("placement_retries", d.placement_retries);
  c.geometry.margin = j.value("margin", d.geometry.margin);
  c.geometry.near_radius = j.value("near_radius", d.geometry.near_radius);
  c.geometry.contact_tolerance = j.value("contact_tolerance", d.geometry.contact_tolerance);
}

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Class and attribute prototypes; latent features are their sum plus noise.
struct Prototypes {
  Tensor shapes;  // |shapes| x d_v
  Tensor colors;  // |colors| x d_v

  static Prototypes make(std::size_t width, std::uint64_t seed) {
    Rng rng(seed);
    return Prototypes{random_normal(kShapes.size(), width, 1.0, rng), random_normal(kColors.size(), width, 1.0, rng)};
  }
};

inline bool holds(const Scene& s, Predicate p, std::size_t a, std::size_t b, const GeometryRules& rules) {
  return predicate_holds(p, s.objects[a].box, s.objects[b].box, s.width, s.height, rules);
}

/// Places objects with bounded rejection sampling, then samples up to
/// `relation_pairs` unordered pairs, orients each at random and records every
/// predicate that holds in that orientation.
inline Scene generate_scene(std::uint64_t seed, const DataConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  const Prototypes protos = Prototypes::make(cfg.feature_width, cfg.prototype_seed);
  Scene scene;
  scene.width = cfg.width;
  scene.height = cfg.height;
  const std::size_t count = cfg.min_objects + rng.index(cfg.max_objects - cfg.min_objects + 1);

  std::vector<std::size_t> labels(kObjectLabelCount);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i;
  rng.shuffle(labels);

  for (std::size_t n = 0; n < count; ++n) {
    const double w = rng.uniform(cfg.min_size, cfg.max_size) * cfg.width;
    const double h = rng.uniform(cfg.min_size, cfg.max_size) * cfg.height;
    const bool stack = n > 0 && rng.bernoulli(cfg.stack_probability);
    const std::size_t base = n > 0 ? rng.index(n) : 0;
    std::optional<Box> placed;
    for (std::size_t attempt = 0; attempt < cfg.placement_retries && !placed; ++attempt) {
      Box b;
      if (stack && attempt < cfg.placement_retries / 2) {
        const Box& under = scene.objects[base].box;
        const double x0 = rng.uniform(under.x0 - 0.5 * w, under.x1 - 0.5 * w);
        b = Box{x0, under.y0 - h, x0 + w, under.y0};
      } else {
        const double x0 = rng.uniform(0.0, cfg.width - w);
        const double y0 = rng.uniform(0.0, cfg.height - h);
        b = Box{x0, y0, x0 + w, y0 + h};
      }
      if (b.x0 < 0 || b.y0 < 0 || b.x1 > cfg.width || b.y1 > cfg.height) continue;
      bool ok = true;
      for (const SceneObject& o : scene.objects) ok = ok && iou(o.box, b) <= cfg.max_iou;
      if (ok) placed = b;
    }
    if (!placed) throw PlacementError("generate_scene: could not place object " + std::to_string(n));
    SceneObject obj;
    obj.shape = labels[n] % kShapes.size();
    obj.color = labels[n] / kShapes.size();
    obj.box = *placed;
    obj.feature = Tensor::zeros(1, cfg.feature_width);
    for (std::size_t j = 0; j < cfg.feature_width; ++j) {
      obj.feature[j] = protos.shapes(obj.shape, j) + protos.colors(obj.color, j) + rng.normal(0.0, cfg.latent_noise);
    }
    scene.objects.push_back(std::move(obj));
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = i + 1; j < count; ++j) pairs.emplace_back(i, j);
  rng.shuffle(pairs);
  if (pairs.size() > cfg.relation_pairs) pairs.resize(cfg.relation_pairs);
  for (auto [i, j] : pairs) {
    if (rng.bernoulli(0.5)) std::swap(i, j);
    for (std::size_t k = 0; k < kPredicateCount; ++k) {
      const auto p = static_cast<Predicate>(k);
      if (holds(scene, p, i, j, cfg.geometry)) scene.graph.push_back(Edge{i, p, j});
    }
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Questions.

inline std::string exists_question(std::size_t color, std::size_t shape) {
  return "Is there a " + std::string(kColors[color]) + " " + std::string(kShapes[shape]) + "?";
}
inline std::string color_question(std::size_t shape) {
  return "What color is the " + std::string(kShapes[shape]) + "?";
}
inline std::string verify_question(const SceneObject& a, Predicate p, const SceneObject& b) {
  return "Is the " + a.name() + " " + std::string(predicate_name(p)) + " the " + b.name() + "?";
}
inline std::string query_question(Predicate p, const SceneObject& b) {
  return "What is " + std::string(predicate_name(p)) + " the " + b.name() + "?";
}

// Template answers, computed from ground truth only.
inline std::string answer_exists(const Scene& s, std::size_t color, std::size_t shape) {
  for (const SceneObject& o : s.objects)
    if (o.color == color && o.shape == shape) return "yes";
  return "no";
}
inline std::string answer_verify(const Scene& s, std::size_t a, Predicate p, std::size_t b,
                                 const GeometryRules& rules = {}) {
  return holds(s, p, a, b, rules) ? "yes" : "no";
}
// Shape of the unique object standing in relation p to object b, if exactly one does.
inline std::optional<std::size_t> unique_related(const Scene& s, Predicate p, std::size_t b,
                                                 const GeometryRules& rules = {}) {
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    if (i == b || !holds(s, p, i, b, rules)) continue;
    if (found) return std::nullopt;
    found = i;
  }
  return found;
}

struct QuestionTemplates {
  bool exists = true;
  bool color = true;
  bool relation_verify = true;
  bool relation_query = true;
};

/// Object-only questions (existence, color) plus relation questions that need
/// scene-graph edges: one "Is the A P the B?" answered yes and one answered
/// no, and "What is P the B?" when a unique answer exists. The yes/no
/// outcome of the existence question is drawn with probability 1/2.
inline std::vector<QAPair> generate_questions(const Scene& scene, const QuestionTemplates& templates,
                                              std::uint64_t seed, const GeometryRules& rules = {}) {
  std::vector<QAPair> out;
  if (scene.objects.size() < 2) return out;
  Rng rng(seed);
  const std::size_t n = scene.objects.size();

  if (templates.exists) {
    std::set<std::size_t> present;
    for (const SceneObject& o : scene.objects) present.insert(o.label());
    std::vector<std::size_t> absent;
    for (std::size_t l = 0; l < kObjectLabelCount; ++l)
      if (!present.count(l)) absent.push_back(l);
    const bool ask_present = rng.bernoulli(0.5) || absent.empty();
    const std::size_t label = ask_present ? scene.objects[rng.index(n)].label() : absent[rng.index(absent.size())];
    const std::size_t color = label / kShapes.size(), shape = label % kShapes.size();
    out.push_back(QAPair{exists_question(color, shape), answer_exists(scene, color, shape), QuestionType::Binary,
                         false, QuestionKind::Exists});
  }

  if (templates.color) {
    std::map<std::size_t, std::size_t> shape_count;
    for (const SceneObject& o : scene.objects) ++shape_count[o.shape];
    std::vector<std::size_t> unique;
    for (std::size_t i = 0; i < n; ++i)
      if (shape_count[scene.objects[i].shape] == 1) unique.push_back(i);
    if (!unique.empty()) {
      const SceneObject& o = scene.objects[unique[rng.index(unique.size())]];
      out.push_back(QAPair{color_question(o.shape), std::string(kColors[o.color]), QuestionType::Open, false,
                           QuestionKind::Color});
    }
  }

  if (templates.relation_verify && !scene.graph.empty()) {
    std::vector<Edge> directional;
    for (const Edge& e : scene.graph)
      if (is_directional(e.predicate)) directional.push_back(e);
    if (!directional.empty()) {
      const Edge& e = directional[rng.index(directional.size())];
      out.push_back(QAPair{verify_question(scene.objects[e.subject], e.predicate, scene.objects[e.object]),
                           answer_verify(scene, e.subject, e.predicate, e.object, rules), QuestionType::Binary, true,
                           QuestionKind::RelationVerify});
    }
    // Negative: a graph pair asked about a directional predicate that is false in the graph's orientation.
    const Edge& e = scene.graph[rng.index(scene.graph.size())];
    std::vector<Predicate> false_preds;
    for (std::size_t k = 0; k < 4; ++k) {
      const auto p = static_cast<Predicate>(k);
      if (!holds(scene, p, e.subject, e.object, rules)) false_preds.push_back(p);
    }
    if (!false_preds.empty()) {
      const Predicate p = false_preds[rng.index(false_preds.size())];
      out.push_back(QAPair{verify_question(scene.objects[e.subject], p, scene.objects[e.object]),
                           answer_verify(scene, e.subject, p, e.object, rules), QuestionType::Binary, true,
                           QuestionKind::RelationVerify});
    }
  }

  if (templates.relation_query) {
    std::vector<Edge> answerable;
    for (const Edge& e : scene.graph) {
      const auto who = unique_related(scene, e.predicate, e.object, rules);
      if (who && *who == e.subject) answerable.push_back(e);
    }
    if (!answerable.empty()) {
      const Edge& e = answerable[rng.index(answerable.size())];
      out.push_back(QAPair{query_question(e.predicate, scene.objects[e.object]),
                           std::string(kShapes[scene.objects[e.subject].shape]), QuestionType::Open, true,
                           QuestionKind::RelationQuery});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulated detections.

struct DetectionSim {
  double sigma = 0.0;       // feature / score noise level
  double confusion = 0.0;   // probability a proposal gets a wrong label
  double dropout = 0.0;     // probability an object yields no proposal
  double candidate_floor = 0.05;

  void validate() const {
    if (sigma < 0) throw ConfigError("detection: sigma must be >= 0");
    if (!(confusion >= 0 && confusion <= 1 && dropout >= 0 && dropout <= 1)) {
      throw ConfigError("detection: rates must lie in [0,1]");
    }
  }
};

struct Detections {
  std::vector<ObjectProposal> proposals;
  std::vector<CandidateRelation> candidates;
};

/// Degrades ground truth into proposals and relation candidates.
///
/// Every random draw is made regardless of sigma, so a fixed seed yields
/// common random numbers across noise levels. With sigma = 0 and zero rates
/// the proposals are the ground-truth objects with probability-1 labels and
/// the candidates are exactly the scene-graph edges with probability 1.
inline Detections simulate_detections(const Scene& scene, const DetectionSim& sim, std::uint64_t seed) {
  sim.validate();
  Rng rng(seed);
  Detections out;
  const std::size_t K = kObjectLabelCount;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const SceneObject& o = scene.objects[i];
    const bool dropped = rng.bernoulli(sim.dropout);
    const bool confused = rng.bernoulli(sim.confusion);
    const std::size_t wrong = detail::random_wrong_label(o.label(), K, rng);
    const double eta = rng.normal();
    std::vector<double> feature_noise(o.feature.size());
    for (double& v : feature_noise) v = rng.normal();
    std::array<double, 4> box_noise{};
    for (double& v : box_noise) v = rng.normal();
    if (dropped) continue;

    ObjectProposal p;
    p.feature = o.feature;
    for (std::size_t j = 0; j < feature_noise.size(); ++j) p.feature[j] += sim.sigma * feature_noise[j];
    Box b = o.box.normalized(scene.width, scene.height);
    std::array<double, 4> c = b.coords();
    for (std::size_t j = 0; j < 4; ++j) c[j] = std::clamp(c[j] + 0.02 * sim.sigma * box_noise[j], 0.0, 1.0);
    p.box = Box{std::min(c[0], c[2]), std::min(c[1], c[3]), std::max(c[0], c[2]), std::max(c[1], c[3])};
    p.label = confused ? wrong : o.label();
    const double conf = std::max(1.0 / static_cast<double>(K), std::exp(-sim.sigma * std::abs(eta)));
    p.class_scores.assign(K, (1.0 - conf) / static_cast<double>(K - 1));
    p.class_scores[p.label] = conf;
    p.source = i;
    out.proposals.push_back(std::move(p));
  }

  std::set<Edge> edges(scene.graph.begin(), scene.graph.end());
  for (std::size_t a = 0; a < out.proposals.size(); ++a) {
    for (std::size_t b = 0; b < out.proposals.size(); ++b) {
      if (a == b) continue;
      const ObjectProposal& ps = out.proposals[a];
      const ObjectProposal& po = out.proposals[b];
      for (std::size_t k = 0; k < kPredicateCount; ++k) {
        const double xi = std::abs(rng.normal());
        const bool truth = edges.count(Edge{*ps.source, static_cast<Predicate>(k), *po.source}) > 0;
        const double decay = std::exp(-sim.sigma * xi);
        const double p_rel = truth ? decay : 1.0 - decay;
        if (p_rel < sim.candidate_floor) continue;
        out.candidates.push_back(CandidateRelation{a, b, ps.class_scores[ps.label], po.class_scores[po.label], p_rel,
                                                   ps.label, k, po.label});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset.

struct DatasetRecord {
  std::uint64_t seed = 0;
  Scene scene;
  std::vector<QAPair> questions;

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

struct Dataset {
  DataConfig config;
  std::vector<std::string> answer_vocab;
  std::vector<DatasetRecord> records;

  std::size_t question_count() const {
    std::size_t n = 0;
    for (const DatasetRecord& r : records) n += r.questions.size();
    return n;
  }
};

/// Sorted unique answers; index = position.
inline std::vector<std::string> build_answer_vocab(const std::vector<DatasetRecord>& records) {
  std::set<std::string> answers;
  for (const DatasetRecord& r : records)
    for (const QAPair& q : r.questions) answers.insert(q.answer);
  if (answers.empty()) throw std::invalid_argument("build_answer_vocab: dataset has no answers");
  return {answers.begin(), answers.end()};
}

inline std::map<std::string, std::size_t> answer_index(const std::vector<std::string>& vocab) {
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < vocab.size(); ++i) out.emplace(vocab[i], i);
  return out;
}

inline Dataset generate_dataset(const DataConfig& cfg, const QuestionTemplates& templates, std::size_t scenes,
                                std::uint64_t seed) {
  Dataset ds;
  ds.config = cfg;
  for (std::size_t i = 0; i < scenes; ++i) {
    DatasetRecord rec;
    rec.seed = mix_seed(seed, i);
    rec.scene = generate_scene(rec.seed, cfg);
    rec.questions = generate_questions(rec.scene, templates, mix_seed(rec.seed, 1), cfg.geometry);
    ds.records.push_back(std::move(rec));
  }
  ds.answer_vocab = build_answer_vocab(ds.records);
  return ds;
}

inline nlohmann::json scene_json(const Scene& s) {
  nlohmann::json objects = nlohmann::json::array();
  for (const SceneObject& o : s.objects) {
    objects.push_back({{"shape", kShapes[o.shape]},
                       {"color", kColors[o.color]},
                       {"box", box_json(o.box)},
                       {"feature", o.feature.storage()}});
  }
  nlohmann::json graph = nlohmann::json::array();
  for (const Edge& e : s.graph) {
    graph.push_back({{"subject", e.subject}, {"predicate", predicate_name(e.predicate)}, {"object", e.object}});
  }
  return {{"width", s.width}, {"height", s.height}, {"objects", objects}, {"graph", graph}};
}

namespace detail {
template <std::size_t N>
std::size_t vocab_lookup(const std::array<std::string_view, N>& vocab, const std::string& s, const char* what) {
  for (std::size_t i = 0; i < N; ++i)
    if (vocab[i] == s) return i;
  throw SchemaError(std::string("unknown ") + what + " '" + s + "'");
}
}  // namespace detail

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  s.width = j.at("width").get<double>();
  s.height = j.at("height").get<double>();
  for (const auto& o : j.at("objects")) {
    SceneObject obj;
    obj.shape = detail::vocab_lookup(kShapes, o.at("shape").get<std::string>(), "shape");
    obj.color = detail::vocab_lookup(kColors, o.at("color").get<std::string>(), "color");
    obj.box = box_from_json(o.at("box"));
    obj.feature = Tensor::row_vector(o.at("feature").get<std::vector<double>>());
    s.objects.push_back(std::move(obj));
  }
  for (const auto& e : j.at("graph")) {
    const auto p = parse_predicate(e.at("predicate").get<std::string>());
    if (!p) throw SchemaError("unknown predicate '" + e.at("predicate").get<std::string>() + "'");
    s.graph.push_back(Edge{e.at("subject").get<std::size_t>(), *p, e.at("object").get<std::size_t>()});
  }
  return s;
}

inline nlohmann::json qa_json(const QAPair& q) {
  return {{"question", q.question},
          {"answer", q.answer},
          {"qtype", q.qtype == QuestionType::Binary ? "binary" : "open"},
          {"depends_on_relations", q.depends_on_relations},
          {"kind", question_kind_name(q.kind)}};
}

inline QAPair qa_from_json(const nlohmann::json& j) {
  QAPair q;
  q.question = j.at("question").get<std::string>();
  q.answer = j.at("answer").get<std::string>();
  const std::string t = j.at("qtype").get<std::string>();
  if (t != "binary" && t != "open") throw SchemaError("unknown qtype '" + t + "'");
  q.qtype = t == "binary" ? QuestionType::Binary : QuestionType::Open;
  q.depends_on_relations = j.at("depends_on_relations").get<bool>();
  q.kind = parse_question_kind(j.at("kind").get<std::string>());
  return q;
}

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  nlohmann::json header{{"schema_version", kDatasetSchemaVersion},
                        {"config", ds.config},
                        {"answer_vocab", ds.answer_vocab}};
  os << header.dump() << '\n';
  for (const DatasetRecord& r : ds.records) {
    nlohmann::json qs = nlohmann::json::array();
    for (const QAPair& q : r.questions) qs.push_back(qa_json(q));
    os << nlohmann::json{{"seed", r.seed}, {"scene", scene_json(r.scene)}, {"questions", qs}}.dump() << '\n';
  }
}

inline Dataset read_dataset(std::istream& is) {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("dataset line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    }
    try {
      if (!have_header) {
        const int version = j.at("schema_version").get<int>();
        if (version != kDatasetSchemaVersion) {
          throw SchemaError("dataset line " + std::to_string(line_no) + ": unsupported schema_version " +
                            std::to_string(version) + " (expected " + std::to_string(kDatasetSchemaVersion) + ")");
        }
        ds.config = j.at("config").get<DataConfig>();
        ds.answer_vocab = j.at("answer_vocab").get<std::vector<std::string>>();
        have_header = true;
        continue;
      }
      DatasetRecord r;
      r.seed = j.at("seed").get<std::uint64_t>();
      r.scene = scene_from_json(j.at("scene"));
      for (const auto& q : j.at("questions")) r.questions.push_back(qa_from_json(q));
      ds.records.push_back(std::move(r));
    } catch (const SchemaError& e) {
      const std::string msg = e.what();
      if (msg.rfind("dataset line", 0) == 0) throw;
      throw SchemaError("dataset line " + std::to_string(line_no) + ": " + msg);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw SchemaError("dataset: missing header record");
  return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_dataset(os, ds);
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_dataset(is);
}

}  // namespace srpvqa
