#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "srpvqa/embed.hpp"
#include "srpvqa/scene.hpp"

namespace srpvqa {

/// One detected region.
struct ObjectProposal {
  Tensor feature;                     // f_j, 1 x d_v
  Box box;                            // normalized to [0,1]
  std::vector<double> class_scores;   // over the object label vocabulary
  std::size_t label = 0;              // argmax of class_scores
  std::optional<std::size_t> source;  // index of the generating scene object, when known
};

struct CandidateRelation {
  std::size_t subject = 0;  // proposal indices
  std::size_t object = 0;
  double p_subj = 0.0;
  double p_obj = 0.0;
  double p_rel = 0.0;
  std::size_t subject_label = 0;
  std::size_t predicate = 0;
  std::size_t object_label = 0;

  double pair_score() const { return p_subj * p_obj; }
  double joint_score() const { return p_subj * p_obj * p_rel; }
  std::tuple<std::size_t, std::size_t, std::size_t> label_key() const {
    return {subject_label, predicate, object_label};
  }

  friend bool operator==(const CandidateRelation&, const CandidateRelation&) = default;
};

enum class Provenance { Parsed, Oracle };

struct RelationshipTriplet {
  std::string subject;
  std::string predicate;
  std::string object;
  Box subject_box;  // normalized
  Box object_box;   // normalized
  double p_subj = 1.0;
  double p_obj = 1.0;
  double p_rel = 1.0;
  Provenance provenance = Provenance::Parsed;

  // "subject predicate object." -- a complete sentence for the text encoder.
  std::string sentence() const { return subject + " " + predicate + " " + object + "."; }

  friend bool operator==(const RelationshipTriplet&, const RelationshipTriplet&) = default;
};

/// Layout descriptor of the union region of two proposals, padded or truncated to `width`.
/// The simulated world has no pixels, so the union-box feature is its geometry.
inline Tensor union_box_feature(const ObjectProposal& s, const ObjectProposal& o, std::size_t width) {
  const Box u = union_box(s.box, o.box);
  const double dx = s.box.cx() - o.box.cx();
  const double dy = s.box.cy() - o.box.cy();
  const double overlap_x = std::max(0.0, std::min(s.box.x1, o.box.x1) - std::max(s.box.x0, o.box.x0));
  const std::vector<double> g = {u.x0,
                                 u.y0,
                                 u.x1,
                                 u.y1,
                                 4.0 * dx,
                                 4.0 * dy,
                                 4.0 * std::abs(dx),
                                 4.0 * std::abs(dy),
                                 4.0 * std::sqrt(dx * dx + dy * dy),
                                 10.0 * (s.box.y1 - o.box.y0),
                                 10.0 * overlap_x,
                                 4.0 * (s.box.width() - o.box.width()),
                                 4.0 * (s.box.height() - o.box.height())};
  Tensor out = Tensor::zeros(1, width);
  for (std::size_t i = 0; i < std::min(width, g.size()); ++i) out[i] = g[i];
  return out;
}

// ---------------------------------------------------------------------------
// Relationship detector: visual -> semantic embeddings trained with triplet losses.

struct DetectorSample {
  Tensor subject_feature;   // f_s
  Tensor relation_feature;  // f_r
  Tensor object_feature;    // f_o
  std::size_t subject_label = 0;
  std::size_t predicate_label = 0;
  std::size_t object_label = 0;
};

struct DetectorTrainingSet {
  std::vector<DetectorSample> samples;
  Tensor object_words;     // one word vector per subject/object label
  Tensor predicate_words;  // one word vector per predicate label
};

struct DetectorConfig {
  std::size_t hidden = 32;
  std::size_t embedding = 16;
  double margin = 0.5;
  double lr = 0.01;
  std::size_t epochs = 200;
  std::size_t batch = 16;
  std::uint64_t seed = 1;
};

struct DetectorParams {
  LayerStack object_map;           // f_s / f_o -> semantic space (shared)
  LayerStack relation_map;         // [f_s, f_r, f_o] -> semantic space
  LayerStack object_label_map;     // word vector -> semantic space
  LayerStack predicate_label_map;  // word vector -> semantic space
  Tensor object_words;
  Tensor predicate_words;
  double margin = 0.5;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    object_map.visit(prefix + ".object_map", f);
    relation_map.visit(prefix + ".relation_map", f);
    object_label_map.visit(prefix + ".object_label_map", f);
    predicate_label_map.visit(prefix + ".predicate_label_map", f);
  }
};

struct DetectorTrainingResult {
  DetectorParams params;
  double initial_loss = 0.0;
  std::vector<double> loss_history;  // mean loss per epoch
  double final_loss() const { return loss_history.empty() ? initial_loss : loss_history.back(); }
};

class DegenerateDatasetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline Var squared_distance(Var a, Var b) {
  const Var d = ops::sub(a, b);
  return ops::sum(ops::mul(d, d));
}

/// max(0, |a - p|^2 - |a - n|^2 + margin)
inline Var triplet_margin_loss(Var anchor, Var positive, Var negative, double margin) {
  const Var gap = ops::sub(squared_distance(anchor, positive), squared_distance(anchor, negative));
  return ops::relu(ops::add(gap, anchor.tape().constant(Tensor::scalar(margin))));
}

namespace detail {

inline std::size_t random_wrong_label(std::size_t truth, std::size_t count, Rng& rng) {
  std::size_t pick = rng.index(count - 1);
  return pick >= truth ? pick + 1 : pick;
}

inline Var label_embedding(Tape& tape, const LayerStack& map, const Tensor& words, std::size_t label) {
  return mlp_forward(tape, map, ops::gather_rows(tape.bind(words), {label}));
}

struct Negatives {
  std::size_t subject, predicate, object;
};

inline Var detector_sample_loss(Tape& tape, const DetectorParams& p, const DetectorSample& s, const Negatives& neg) {
  const Var fs = tape.constant(s.subject_feature);
  const Var fo = tape.constant(s.object_feature);
  const Var fr = tape.constant(s.relation_feature);
  const Var es = mlp_forward(tape, p.object_map, fs);
  const Var eo = mlp_forward(tape, p.object_map, fo);
  const Var er = mlp_forward(tape, p.relation_map, ops::concat_cols({fs, fr, fo}));
  const Var ls = triplet_margin_loss(es, label_embedding(tape, p.object_label_map, p.object_words, s.subject_label),
                                     label_embedding(tape, p.object_label_map, p.object_words, neg.subject), p.margin);
  const Var lo = triplet_margin_loss(eo, label_embedding(tape, p.object_label_map, p.object_words, s.object_label),
                                     label_embedding(tape, p.object_label_map, p.object_words, neg.object), p.margin);
  const Var lr =
      triplet_margin_loss(er, label_embedding(tape, p.predicate_label_map, p.predicate_words, s.predicate_label),
                          label_embedding(tape, p.predicate_label_map, p.predicate_words, neg.predicate), p.margin);
  return ops::add(ops::add(ls, lo), lr);
}

inline Negatives draw_negatives(const DetectorSample& s, std::size_t objects, std::size_t predicates, Rng& rng) {
  return Negatives{random_wrong_label(s.subject_label, objects, rng),
                   random_wrong_label(s.predicate_label, predicates, rng),
                   random_wrong_label(s.object_label, objects, rng)};
}

}  // namespace detail

inline DetectorParams init_detector(std::size_t feature_width, std::size_t word_width, const DetectorConfig& cfg,
                                    Tensor object_words, Tensor predicate_words) {
  Rng rng(mix_seed(cfg.seed, 101));
  DetectorParams p;
  p.object_map = LayerStack::init({feature_width, cfg.hidden, cfg.embedding}, rng);
  p.relation_map = LayerStack::init({3 * feature_width, cfg.hidden, cfg.embedding}, rng);
  p.object_label_map = LayerStack::init({word_width, cfg.hidden, cfg.embedding}, rng);
  p.predicate_label_map = LayerStack::init({word_width, cfg.hidden, cfg.embedding}, rng);
  p.object_words = std::move(object_words);
  p.predicate_words = std::move(predicate_words);
  p.margin = cfg.margin;
  return p;
}

/// Minimizes the subject, object and relationship triplet losses with Adam.
/// Negatives are drawn uniformly among the wrong labels.
inline DetectorTrainingResult train_detector(const DetectorTrainingSet& data, const DetectorConfig& cfg) {
  const std::size_t objects = data.object_words.rows();
  const std::size_t predicates = data.predicate_words.rows();
  if (data.samples.empty()) throw DegenerateDatasetError("train_detector: no samples");
  std::set<std::size_t> obj_seen, pred_seen;
  for (const DetectorSample& s : data.samples) {
    if (s.subject_label >= objects || s.object_label >= objects || s.predicate_label >= predicates) {
      throw DimensionError("train_detector: label outside vocabulary");
    }
    obj_seen.insert(s.subject_label);
    obj_seen.insert(s.object_label);
    pred_seen.insert(s.predicate_label);
  }
  if (objects < 2 || predicates < 2 || obj_seen.size() < 2 || pred_seen.size() < 2) {
    throw DegenerateDatasetError("train_detector: need at least two distinct labels per vocabulary");
  }
  const std::size_t width = data.samples.front().subject_feature.size();
  DetectorTrainingResult result;
  result.params = init_detector(width, data.object_words.cols(), cfg, data.object_words, data.predicate_words);
  DetectorParams& p = result.params;
  std::vector<Tensor*> params = parameter_list(p);
  AdamState adam(params, cfg.lr);
  Rng rng(mix_seed(cfg.seed, 202));

  // Fixed negatives for the reference loss at initialization.
  {
    Rng probe(mix_seed(cfg.seed, 303));
    double total = 0.0;
    for (const DetectorSample& s : data.samples) {
      Tape tape(false);
      total += detail::detector_sample_loss(tape, p, s, detail::draw_negatives(s, objects, predicates, probe))
                   .value()
                   .item();
    }
    result.initial_loss = total / static_cast<double>(data.samples.size());
  }

  std::vector<std::size_t> order(data.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      Tape tape;
      std::optional<Var> total;
      for (std::size_t i = start; i < end; ++i) {
        const DetectorSample& s = data.samples[order[i]];
        const Var l = detail::detector_sample_loss(tape, p, s, detail::draw_negatives(s, objects, predicates, rng));
        total = total ? ops::add(*total, l) : l;
      }
      const Var loss = ops::scale(*total, 1.0 / static_cast<double>(end - start));
      epoch_loss += total->value().item();
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (Tensor* t : params) {
        const Tensor* g = tape.grad_of(*t);
        grads.push_back(g ? *g : Tensor(t->shape()));
      }
      adam_step(params, grads, adam);
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return result;
}

struct LabelPrediction {
  std::size_t label = 0;
  double probability = 0.0;
};

/// Nearest label embedding to `embedding`; probability is the softmax over negative squared distances.
inline LabelPrediction nearest_label(const Tensor& embedding, const Tensor& label_table) {
  std::vector<double> neg_dist(label_table.rows());
  for (std::size_t k = 0; k < label_table.rows(); ++k) {
    double d = 0.0;
    for (std::size_t j = 0; j < label_table.cols(); ++j) {
      const double diff = embedding[j] - label_table(k, j);
      d += diff * diff;
    }
    neg_dist[k] = -d;
  }
  const std::size_t best = static_cast<std::size_t>(std::max_element(neg_dist.begin(), neg_dist.end()) - neg_dist.begin());
  double sum = 0.0;
  for (double v : neg_dist) sum += std::exp(v - neg_dist[best]);
  return LabelPrediction{best, 1.0 / sum};
}

struct DetectorEmbeddings {
  Tensor object_labels;     // |objects| x e
  Tensor predicate_labels;  // |predicates| x e
};

inline DetectorEmbeddings label_tables(const DetectorParams& p) {
  Tape tape(false);
  return DetectorEmbeddings{mlp_forward(tape, p.object_label_map, tape.constant(p.object_words)).value(),
                            mlp_forward(tape, p.predicate_label_map, tape.constant(p.predicate_words)).value()};
}

struct SamplePrediction {
  LabelPrediction subject, predicate, object;
};

inline SamplePrediction predict_sample(const DetectorParams& p, const DetectorEmbeddings& tables, const Tensor& fs,
                                       const Tensor& fr, const Tensor& fo) {
  Tape tape(false);
  const Var vs = tape.constant(fs), vr = tape.constant(fr), vo = tape.constant(fo);
  const Tensor es = mlp_forward(tape, p.object_map, vs).value();
  const Tensor eo = mlp_forward(tape, p.object_map, vo).value();
  const Tensor er = mlp_forward(tape, p.relation_map, ops::concat_cols({vs, vr, vo})).value();
  return SamplePrediction{nearest_label(es, tables.object_labels), nearest_label(er, tables.predicate_labels),
                          nearest_label(eo, tables.object_labels)};
}

/// Fraction of subject, predicate and object labels (pooled) recovered by nearest-neighbor search.
inline double detector_label_accuracy(const DetectorParams& p, const std::vector<DetectorSample>& samples) {
  if (samples.empty()) return 0.0;
  const DetectorEmbeddings tables = label_tables(p);
  std::size_t hits = 0;
  for (const DetectorSample& s : samples) {
    const SamplePrediction pr = predict_sample(p, tables, s.subject_feature, s.relation_feature, s.object_feature);
    hits += pr.subject.label == s.subject_label;
    hits += pr.predicate.label == s.predicate_label;
    hits += pr.object.label == s.object_label;
  }
  return static_cast<double>(hits) / static_cast<double>(3 * samples.size());
}

/// Scores every ordered proposal pair (i, j), i != j.
inline std::vector<CandidateRelation> detect_relationships(const DetectorParams& p,
                                                           const std::vector<ObjectProposal>& proposals) {
  std::vector<CandidateRelation> out;
  if (proposals.size() < 2) return out;
  const DetectorEmbeddings tables = label_tables(p);
  const std::size_t width = proposals.front().feature.size();
  out.reserve(proposals.size() * (proposals.size() - 1));
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    for (std::size_t j = 0; j < proposals.size(); ++j) {
      if (i == j) continue;
      const Tensor fr = union_box_feature(proposals[i], proposals[j], width);
      const SamplePrediction pr = predict_sample(p, tables, proposals[i].feature, fr, proposals[j].feature);
      out.push_back(CandidateRelation{i, j, pr.subject.probability, pr.object.probability, pr.predicate.probability,
                                      pr.subject.label, pr.predicate.label, pr.object.label});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Two-stage filtering.

namespace detail {

// Total order used for output: joint score descending, then (subject, object, predicate) ascending,
// then the label pair (only reachable when proposal indices do not determine labels).
inline bool ranks_before(const CandidateRelation& a, const CandidateRelation& b) {
  if (a.joint_score() != b.joint_score()) return a.joint_score() > b.joint_score();
  return std::tie(a.subject, a.object, a.predicate, a.subject_label, a.object_label) <
         std::tie(b.subject, b.object, b.predicate, b.subject_label, b.object_label);
}

// Keeps the highest-p_rel candidate per label triple; ties fall back to ranks_before.
inline std::vector<CandidateRelation> dedup_by_labels(const std::vector<CandidateRelation>& in) {
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, CandidateRelation> best;
  for (const CandidateRelation& c : in) {
    auto [it, inserted] = best.emplace(c.label_key(), c);
    if (inserted) continue;
    const CandidateRelation& cur = it->second;
    if (c.p_rel > cur.p_rel || (c.p_rel == cur.p_rel && ranks_before(c, cur))) it->second = c;
  }
  std::vector<CandidateRelation> out;
  out.reserve(best.size());
  for (auto& [key, c] : best) out.push_back(c);
  std::sort(out.begin(), out.end(), ranks_before);
  return out;
}

}  // namespace detail

inline void validate_thresholds(double alpha, double beta) {
  if (!(alpha >= 0.0 && alpha <= 1.0 && beta >= 0.0 && beta <= 1.0)) {
    throw ConfigError("thresholds must lie in [0,1]");
  }
  if (alpha < beta) throw ConfigError("alpha must be >= beta");
}

/// Stage 1 keeps p_subj * p_obj >= alpha, stage 2 keeps p_rel >= beta, then
/// duplicates (same label triple) collapse to the highest p_rel. When fewer
/// than `min_keep` survive, the result is instead the top `min_keep` of the
/// deduplicated full candidate set ranked by p_subj * p_obj * p_rel.
inline std::vector<CandidateRelation> filter_triplets(const std::vector<CandidateRelation>& candidates, double alpha,
                                                      double beta, std::size_t min_keep = 3) {
  validate_thresholds(alpha, beta);
  std::vector<CandidateRelation> stage;
  for (const CandidateRelation& c : candidates)
    if (c.pair_score() >= alpha && c.p_rel >= beta) stage.push_back(c);
  std::vector<CandidateRelation> kept = detail::dedup_by_labels(stage);
  if (kept.size() >= min_keep) return kept;
  std::vector<CandidateRelation> all = detail::dedup_by_labels(candidates);
  if (all.size() > min_keep) all.resize(min_keep);
  return all;
}

inline RelationshipTriplet to_triplet(const CandidateRelation& c, const std::vector<ObjectProposal>& proposals) {
  if (c.subject >= proposals.size() || c.object >= proposals.size()) {
    throw std::out_of_range("to_triplet: proposal index out of range");
  }
  return RelationshipTriplet{object_label_name(c.subject_label),
                             std::string(kPredicateNames.at(c.predicate)),
                             object_label_name(c.object_label),
                             proposals[c.subject].box,
                             proposals[c.object].box,
                             c.p_subj,
                             c.p_obj,
                             c.p_rel,
                             Provenance::Parsed};
}

inline std::vector<RelationshipTriplet> to_triplets(const std::vector<CandidateRelation>& refined,
                                                    const std::vector<ObjectProposal>& proposals) {
  std::vector<RelationshipTriplet> out;
  out.reserve(refined.size());
  for (const CandidateRelation& c : refined) out.push_back(to_triplet(c, proposals));
  return out;
}

// ---------------------------------------------------------------------------
// Encodings.

inline Tensor mean_pool_rows(const Tensor& rows) {
  Tensor out = Tensor::zeros(1, rows.cols());
  for (std::size_t i = 0; i < rows.rows(); ++i)
    for (std::size_t j = 0; j < rows.cols(); ++j) out[j] += rows(i, j);
  for (double& v : out.data()) v /= static_cast<double>(rows.rows());
  return out;
}

/// Mean-pooled sentence encoding of one triplet (no boxes).
inline Tensor encode_triplet_sentence(const RelationshipTriplet& t, const SentenceEncoder& encoder) {
  return mean_pool_rows(encoder.encode(tokenize(t.sentence(), encoder.vocab_size())));
}

inline std::array<double, 8> triplet_box_coords(const RelationshipTriplet& t) {
  return {t.subject_box.x0, t.subject_box.y0, t.subject_box.x1, t.subject_box.y1,
          t.object_box.x0,  t.object_box.y0,  t.object_box.x1,  t.object_box.y1};
}

/// One row per triplet: pooled sentence encoding followed by b_s and b_o.
inline Tensor triplets_to_features(const std::vector<RelationshipTriplet>& triplets, const SentenceEncoder& encoder) {
  if (triplets.empty()) throw std::invalid_argument("triplets_to_features: empty triplet set");
  const std::size_t d = encoder.width();
  Tensor pooled = Tensor::zeros(triplets.size(), d);
  Tensor boxes = Tensor::zeros(triplets.size(), 8);
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const Tensor row = encode_triplet_sentence(triplets[i], encoder);
    for (std::size_t j = 0; j < d; ++j) pooled(i, j) = row[j];
    const auto coords = triplet_box_coords(triplets[i]);
    for (std::size_t j = 0; j < 8; ++j) boxes(i, j) = coords[j];
  }
  return ground_with_boxes(pooled, boxes);
}

/// f_subject, f_object, b_s, b_o concatenated: 2 d_v + 8 values.
inline Tensor visual_relationship_feature(const CandidateRelation& c, const std::vector<ObjectProposal>& proposals) {
  if (c.subject >= proposals.size() || c.object >= proposals.size()) {
    throw std::out_of_range("visual_relationship_feature: proposal index out of range");
  }
  const ObjectProposal& s = proposals[c.subject];
  const ObjectProposal& o = proposals[c.object];
  const std::size_t dv = s.feature.size();
  if (o.feature.size() != dv) throw DimensionError("visual_relationship_feature: feature widths differ");
  Tensor out = Tensor::zeros(1, 2 * dv + 8);
  for (std::size_t j = 0; j < dv; ++j) {
    out[j] = s.feature[j];
    out[dv + j] = o.feature[j];
  }
  const auto bs = s.box.coords();
  const auto bo = o.box.coords();
  for (std::size_t j = 0; j < 4; ++j) {
    out[2 * dv + j] = bs[j];
    out[2 * dv + 4 + j] = bo[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oracle scene-graph parsing.

/// Every ground-truth edge becomes a triplet with ground-truth boxes; no
/// thresholding. Edges with identical label triples collapse to the first.
inline std::vector<RelationshipTriplet> parse_scene_graph(const Scene& scene) {
  std::vector<RelationshipTriplet> out;
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  for (const Edge& e : scene.graph) {
    if (e.subject >= scene.objects.size() || e.object >= scene.objects.size()) {
      throw SchemaError("scene graph edge references missing object");
    }
    const SceneObject& s = scene.objects[e.subject];
    const SceneObject& o = scene.objects[e.object];
    if (!seen.insert({s.label(), static_cast<std::size_t>(e.predicate), o.label()}).second) continue;
    out.push_back(RelationshipTriplet{s.name(), std::string(predicate_name(e.predicate)), o.name(),
                                      s.box.normalized(scene.width, scene.height),
                                      o.box.normalized(scene.width, scene.height), 1.0, 1.0, 1.0,
                                      Provenance::Oracle});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Triplet dump (JSON lines).

inline nlohmann::json box_json(const Box& b) { return nlohmann::json::array({b.x0, b.y0, b.x1, b.y1}); }

inline Box box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw SchemaError("box must be an array of 4 numbers");
  return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline nlohmann::json triplet_json(const RelationshipTriplet& t) {
  return nlohmann::json{{"subject", t.subject},
                        {"predicate", t.predicate},
                        {"object", t.object},
                        {"p_subj", t.p_subj},
                        {"p_obj", t.p_obj},
                        {"p_rel", t.p_rel},
                        {"b_s", box_json(t.subject_box)},
                        {"b_o", box_json(t.object_box)},
                        {"provenance", t.provenance == Provenance::Oracle ? "oracle" : "parsed"}};
}

inline RelationshipTriplet triplet_from_json(const nlohmann::json& j) {
  try {
    RelationshipTriplet t;
    t.subject = j.at("subject").get<std::string>();
    t.predicate = j.at("predicate").get<std::string>();
    t.object = j.at("object").get<std::string>();
    t.p_subj = j.at("p_subj").get<double>();
    t.p_obj = j.at("p_obj").get<double>();
    t.p_rel = j.at("p_rel").get<double>();
    t.subject_box = box_from_json(j.at("b_s"));
    t.object_box = box_from_json(j.at("b_o"));
    const std::string prov = j.at("provenance").get<std::string>();
    if (prov != "oracle" && prov != "parsed") throw SchemaError("unknown provenance '" + prov + "'");
    t.provenance = prov == "oracle" ? Provenance::Oracle : Provenance::Parsed;
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("triplet record: ") + e.what());
  }
}

inline void write_triplets_jsonl(std::ostream& os, const std::vector<RelationshipTriplet>& triplets) {
  for (const RelationshipTriplet& t : triplets) os << triplet_json(t).dump() << '\n';
}

inline std::vector<RelationshipTriplet> read_triplets_jsonl(std::istream& is) {
  std::vector<RelationshipTriplet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(triplet_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw SchemaError("triplet dump line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace srpvqa
