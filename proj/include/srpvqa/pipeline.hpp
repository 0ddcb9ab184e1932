#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "srpvqa/config.hpp"
#include "srpvqa/data.hpp"
#include "srpvqa/model.hpp"
#include "srpvqa/srp.hpp"

namespace srpvqa {

inline constexpr int kMetricsSchemaVersion = 1;

inline ToyTextEncoder make_encoder(const RunConfig& cfg) {
  return ToyTextEncoder(TextEncoderParams::init(cfg.vocab_size, cfg.d_q, cfg.encoder_heads, cfg.encoder_seed, true));
}

/// Memoizes encoder output by sentence; the encoder is frozen, so results never go stale.
class EncodingCache {
 public:
  explicit EncodingCache(const SentenceEncoder& encoder) : encoder_(encoder) {}

  std::shared_ptr<const Tensor> rows(const std::string& text) {
    auto it = rows_.find(text);
    if (it != rows_.end()) return it->second;
    auto t = std::make_shared<const Tensor>(encoder_.encode(tokenize(text, encoder_.vocab_size())));
    rows_.emplace(text, t);
    return t;
  }

  Tensor pooled(const std::string& text) { return mean_pool_rows(*rows(text)); }

  const SentenceEncoder& encoder() const { return encoder_; }

 private:
  const SentenceEncoder& encoder_;
  std::map<std::string, std::shared_ptr<const Tensor>> rows_;
};

inline Tensor semantic_relation_rows(const std::vector<RelationshipTriplet>& triplets, EncodingCache& cache) {
  if (triplets.empty()) return Tensor();
  const std::size_t d = cache.encoder().width();
  Tensor pooled = Tensor::zeros(triplets.size(), d);
  Tensor boxes = Tensor::zeros(triplets.size(), 8);
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const Tensor row = cache.pooled(triplets[i].sentence());
    for (std::size_t j = 0; j < d; ++j) pooled(i, j) = row[j];
    const auto coords = triplet_box_coords(triplets[i]);
    for (std::size_t j = 0; j < 8; ++j) boxes(i, j) = coords[j];
  }
  return ground_with_boxes(pooled, boxes);
}

inline Tensor visual_rows(const std::vector<ObjectProposal>& proposals) {
  if (proposals.empty()) return Tensor();
  const std::size_t dv = proposals.front().feature.size();
  Tensor feats = Tensor::zeros(proposals.size(), dv);
  Tensor boxes = Tensor::zeros(proposals.size(), 4);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    for (std::size_t j = 0; j < dv; ++j) feats(i, j) = proposals[i].feature[j];
    const auto c = proposals[i].box.coords();
    for (std::size_t j = 0; j < 4; ++j) boxes(i, j) = c[j];
  }
  return ground_with_boxes(feats, boxes);
}

inline Tensor visual_relation_rows(const std::vector<CandidateRelation>& refined,
                                   const std::vector<ObjectProposal>& proposals) {
  if (refined.empty()) return Tensor();
  const std::size_t width = 2 * proposals.front().feature.size() + 8;
  Tensor out = Tensor::zeros(refined.size(), width);
  for (std::size_t i = 0; i < refined.size(); ++i) {
    const Tensor row = visual_relationship_feature(refined[i], proposals);
    for (std::size_t j = 0; j < width; ++j) out(i, j) = row[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Learned detector: trained on simulated proposals of the training scenes.

inline Tensor object_word_table(EncodingCache& cache) {
  Tensor out = Tensor::zeros(kObjectLabelCount, cache.encoder().width());
  for (std::size_t l = 0; l < kObjectLabelCount; ++l) {
    const Tensor row = cache.pooled(object_label_name(l));
    for (std::size_t j = 0; j < row.size(); ++j) out(l, j) = row[j];
  }
  return out;
}

inline Tensor predicate_word_table(EncodingCache& cache) {
  Tensor out = Tensor::zeros(kPredicateCount, cache.encoder().width());
  for (std::size_t p = 0; p < kPredicateCount; ++p) {
    const Tensor row = cache.pooled(std::string(kPredicateNames[p]));
    for (std::size_t j = 0; j < row.size(); ++j) out(p, j) = row[j];
  }
  return out;
}

inline std::uint64_t detection_seed(const RunConfig& cfg, const DatasetRecord& rec) {
  return mix_seed(cfg.detection_seed, rec.seed);
}

/// One sample per ground-truth edge whose two objects both survived detection.
inline DetectorTrainingSet detector_training_set(const Dataset& ds, const std::vector<std::size_t>& records,
                                                 const RunConfig& cfg, EncodingCache& cache) {
  DetectorTrainingSet set;
  set.object_words = object_word_table(cache);
  set.predicate_words = predicate_word_table(cache);
  for (std::size_t r : records) {
    const DatasetRecord& rec = ds.records[r];
    const Detections det = simulate_detections(rec.scene, cfg.detection, detection_seed(cfg, rec));
    std::map<std::size_t, std::size_t> by_source;
    for (std::size_t i = 0; i < det.proposals.size(); ++i) by_source[*det.proposals[i].source] = i;
    for (const Edge& e : rec.scene.graph) {
      auto s = by_source.find(e.subject), o = by_source.find(e.object);
      if (s == by_source.end() || o == by_source.end()) continue;
      const ObjectProposal& ps = det.proposals[s->second];
      const ObjectProposal& po = det.proposals[o->second];
      set.samples.push_back(DetectorSample{ps.feature, union_box_feature(ps, po, ps.feature.size()), po.feature,
                                           rec.scene.objects[e.subject].label(),
                                           static_cast<std::size_t>(e.predicate),
                                           rec.scene.objects[e.object].label()});
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Prepared examples.

struct SceneInputs {
  Tensor v;  // grounded proposals, possibly empty
  Tensor r;  // relation rows for the configured source, possibly empty
  std::vector<RelationshipTriplet> triplets;
  std::vector<ObjectProposal> proposals;
};

struct Example {
  std::size_t record = 0;
  std::size_t question = 0;
  std::shared_ptr<const Tensor> q;
  std::size_t answer = 0;
  QuestionType qtype = QuestionType::Binary;
  bool depends_on_relations = false;
};

struct PreparedData {
  std::vector<SceneInputs> scenes;
  std::vector<Example> examples;
  std::vector<std::size_t> train;  // example indices
  std::vector<std::size_t> eval;
  std::size_t answers = 0;

  ModelInput input(const Example& ex, InputSet inputs) const {
    const SceneInputs& s = scenes[ex.record];
    return ModelInput{*ex.q, uses_visual(inputs) ? s.v : Tensor(), uses_relations(inputs) ? s.r : Tensor()};
  }
  ModelInput input(std::size_t example, InputSet inputs) const { return input(examples[example], inputs); }
};

/// Scenes [0, split) train, [split, n) evaluate.
inline std::size_t split_point(std::size_t n, double holdout) {
  const auto held = static_cast<std::size_t>(std::llround(holdout * static_cast<double>(n)));
  return n - std::min(n, std::max<std::size_t>(held, n > 1 ? 1 : 0));
}

/// Builds the per-scene model inputs for the configured relation source.
/// `detector` is used only when the config selects the learned detector.
inline SceneInputs scene_inputs(const DatasetRecord& rec, const RunConfig& cfg, EncodingCache& cache,
                                const DetectorParams* detector) {
  SceneInputs out;
  const Detections det = simulate_detections(rec.scene, cfg.detection, detection_seed(cfg, rec));
  out.proposals = det.proposals;
  out.v = visual_rows(det.proposals);
  if (cfg.relation_source == RelationSource::Oracle) {
    out.triplets = parse_scene_graph(rec.scene);
    out.r = semantic_relation_rows(out.triplets, cache);
    return out;
  }
  std::vector<CandidateRelation> candidates;
  if (cfg.detector == DetectorMode::Learned) {
    if (!detector) throw std::logic_error("scene_inputs: learned detector requested but not trained");
    candidates = detect_relationships(*detector, det.proposals);
  } else {
    candidates = det.candidates;
  }
  const std::vector<CandidateRelation> refined = filter_triplets(candidates, cfg.alpha, cfg.beta, cfg.min_keep);
  out.triplets = to_triplets(refined, det.proposals);
  out.r = cfg.relation_source == RelationSource::ParsedVisual ? visual_relation_rows(refined, det.proposals)
                                                              : semantic_relation_rows(out.triplets, cache);
  return out;
}

inline std::optional<DetectorParams> maybe_train_detector(const Dataset& ds, const RunConfig& cfg,
                                                          EncodingCache& cache) {
  if (cfg.detector != DetectorMode::Learned || cfg.relation_source == RelationSource::Oracle) return std::nullopt;
  std::vector<std::size_t> train_records;
  for (std::size_t r = 0; r < split_point(ds.records.size(), cfg.holdout); ++r) train_records.push_back(r);
  DetectorConfig dc = cfg.detector_training;
  dc.seed = mix_seed(cfg.detection_seed, 404);
  return train_detector(detector_training_set(ds, train_records, cfg, cache), dc).params;
}

inline PreparedData prepare_data(const Dataset& ds, const RunConfig& cfg, EncodingCache& cache,
                                 const DetectorParams* detector = nullptr) {
  if (ds.records.empty()) throw SchemaError("dataset has no scene records");
  if (ds.config.feature_width != cfg.d_v()) {
    throw DimensionError("dataset feature width " + std::to_string(ds.config.feature_width) +
                         " does not match config d_v " + std::to_string(cfg.d_v()));
  }
  PreparedData out;
  const auto vocab = answer_index(ds.answer_vocab);
  out.answers = ds.answer_vocab.size();
  const std::size_t split = split_point(ds.records.size(), cfg.holdout);
  for (std::size_t r = 0; r < ds.records.size(); ++r) {
    const DatasetRecord& rec = ds.records[r];
    out.scenes.push_back(scene_inputs(rec, cfg, cache, detector));
    for (std::size_t k = 0; k < rec.questions.size(); ++k) {
      const QAPair& qa = rec.questions[k];
      auto it = vocab.find(qa.answer);
      if (it == vocab.end()) throw SchemaError("answer '" + qa.answer + "' missing from the answer vocabulary");
      (r < split ? out.train : out.eval).push_back(out.examples.size());
      out.examples.push_back(Example{r, k, cache.rows(qa.question), it->second, qa.qtype, qa.depends_on_relations});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics.

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;

  void add(bool hit) {
    ++total;
    correct += hit;
  }
  std::optional<double> accuracy() const {
    if (total == 0) return std::nullopt;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
  }
};

struct Metrics {
  Tally overall, binary, open, relation;

  void add(const Example& ex, bool hit) {
    overall.add(hit);
    (ex.qtype == QuestionType::Binary ? binary : open).add(hit);
    if (ex.depends_on_relations) relation.add(hit);
  }
};

inline nlohmann::json accuracy_json(const std::optional<double>& a) {
  return a ? nlohmann::json(*a) : nlohmann::json("n/a");
}

inline nlohmann::json metrics_json(const Metrics& m) {
  auto tally = [](const Tally& t) {
    return nlohmann::json{{"accuracy", accuracy_json(t.accuracy())}, {"correct", t.correct}, {"total", t.total}};
  };
  return {{"schema_version", kMetricsSchemaVersion},
          {"overall", tally(m.overall)},
          {"binary", tally(m.binary)},
          {"open", tally(m.open)},
          {"relation", tally(m.relation)}};
}

inline std::string format_accuracy(const std::optional<double>& a) {
  if (!a) return "n/a";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << *a;
  return os.str();
}

inline std::string metrics_table(const Metrics& m) {
  std::ostringstream os;
  os << "category    accuracy   correct/total\n";
  auto row = [&](const char* name, const Tally& t) {
    std::string acc = format_accuracy(t.accuracy());
    os << name << std::string(12 - std::string(name).size(), ' ') << acc << std::string(11 - std::min<std::size_t>(10, acc.size()), ' ')
       << t.correct << "/" << t.total << "\n";
  };
  row("overall", m.overall);
  row("binary", m.binary);
  row("open", m.open);
  row("relation", m.relation);
  return os.str();
}

struct Prediction {
  std::size_t example = 0;
  std::size_t record = 0;
  std::size_t question = 0;
  std::size_t predicted = 0;
  std::size_t answer = 0;
};

struct Evaluation {
  Metrics metrics;
  std::vector<Prediction> predictions;
};

inline Evaluation evaluate(const VqaModelParams& params, const PreparedData& data,
                           const std::vector<std::size_t>& indices) {
  Evaluation out;
  for (std::size_t i : indices) {
    const Example& ex = data.examples[i];
    const std::size_t pred = predict_answer(params, data.input(ex, params.inputs));
    out.metrics.add(ex, pred == ex.answer);
    out.predictions.push_back(Prediction{i, ex.record, ex.question, pred, ex.answer});
  }
  return out;
}

/// Recomputes the metric tallies from a per-example dump.
inline Metrics metrics_from_predictions(const std::vector<Prediction>& preds, const PreparedData& data) {
  Metrics m;
  for (const Prediction& p : preds) m.add(data.examples[p.example], p.predicted == p.answer);
  return m;
}

// ---------------------------------------------------------------------------
// Training.

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainState {
  VqaModelParams params;
  AdamState optimizer;
  std::size_t epoch = 0;
  std::vector<EpochLog> history;
};

inline TrainState init_training(const RunConfig& cfg, std::size_t answers) {
  TrainState st;
  st.params = VqaModelParams::init(cfg.model_dims(answers), cfg.attention, cfg.inputs, cfg.fusion_relu,
                                   mix_seed(cfg.seed, 11));
  st.optimizer = AdamState(parameter_list(st.params), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  return st;
}

namespace detail {

struct ExampleGrad {
  double loss = 0.0;
  bool hit = false;
  std::vector<Tensor> grads;
};

inline ExampleGrad example_gradient(const VqaModelParams& params, const std::vector<Tensor*>& plist,
                                    const ModelInput& in, std::size_t target) {
  Tape tape;
  const ModelOutput out = model_forward(tape, params, in);
  const Var loss = ops::cross_entropy(out.logits, target);
  if (!std::isfinite(loss.value().item())) throw NumericError("training loss is not finite");
  tape.backward(loss);
  ExampleGrad g;
  g.loss = loss.value().item();
  g.hit = argmax(out.logits.value().data()) == target;
  g.grads.reserve(plist.size());
  for (Tensor* p : plist) {
    const Tensor* gp = tape.grad_of(*p);
    g.grads.push_back(gp ? *gp : Tensor(p->shape()));
  }
  return g;
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochLog&)>;

/// Runs epochs until `state.epoch == cfg.epochs`. Each batch item is
/// differentiated on its own tape; gradients are summed in batch order, so
/// results do not depend on the thread count.
inline void train_epochs(TrainState& state, const RunConfig& cfg, const PreparedData& data,
                         const EpochCallback& on_epoch = {}) {
  if (data.train.empty()) throw SchemaError("no training examples");
  std::vector<Tensor*> plist = parameter_list(state.params);
  while (state.epoch < cfg.epochs) {
    std::vector<std::size_t> order = data.train;
    Rng rng(mix_seed(cfg.seed, 1000 + state.epoch));
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::vector<detail::ExampleGrad> results(end - start);
      auto work = [&](std::size_t from, std::size_t to) {
        for (std::size_t b = from; b < to; ++b) {
          const Example& ex = data.examples[order[start + b]];
          results[b] = detail::example_gradient(state.params, plist, data.input(ex, state.params.inputs), ex.answer);
        }
      };
      const std::size_t workers = std::min(cfg.threads, results.size());
      if (workers <= 1) {
        work(0, results.size());
      } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        const std::size_t chunk = (results.size() + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            try {
              work(std::min(results.size(), w * chunk), std::min(results.size(), (w + 1) * chunk));
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
      }
      std::vector<Tensor> grads;
      for (Tensor* p : plist) grads.emplace_back(p->shape());
      const double inv = 1.0 / static_cast<double>(results.size());
      for (const auto& r : results) {
        loss_sum += r.loss;
        hits += r.hit;
        for (std::size_t i = 0; i < grads.size(); ++i) {
          auto dst = grads[i].data();
          auto src = r.grads[i].data();
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += inv * src[k];
        }
      }
      const std::size_t warm = cfg.warmup_steps;
      state.optimizer.lr =
          warm == 0 ? cfg.lr
                    : cfg.lr * std::min(1.0, static_cast<double>(state.optimizer.step + 1) / static_cast<double>(warm));
      adam_step(plist, grads, state.optimizer);
      for (const Tensor* p : plist)
        if (!p->all_finite()) throw NumericError("parameters became non-finite at epoch " + std::to_string(state.epoch + 1));
    }
    ++state.epoch;
    EpochLog log{state.epoch, loss_sum / static_cast<double>(order.size()),
                 100.0 * static_cast<double>(hits) / static_cast<double>(order.size())};
    state.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
}

inline TrainState train_model(const RunConfig& cfg, const PreparedData& data, const EpochCallback& on_epoch = {}) {
  TrainState st = init_training(cfg, data.answers);
  train_epochs(st, cfg, data, on_epoch);
  return st;
}

}  // namespace srpvqa
