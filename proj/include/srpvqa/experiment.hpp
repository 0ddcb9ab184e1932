#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srpvqa/checkpoint.hpp"
#include "srpvqa/pipeline.hpp"

namespace srpvqa {

// ---------------------------------------------------------------------------
// Experiment matrix.

struct CellSpec {
  std::string name;
  InputSet inputs = InputSet::VRQ;
  AttentionMode attention = AttentionMode::Msa;
  RelationSource source = RelationSource::ParsedSemantic;
};

/// The 3x3 input/attention grid over parsed semantic relations, followed by
/// the oracle rows and the visual-relation baseline.
inline std::vector<CellSpec> matrix_cells() {
  std::vector<CellSpec> out;
  for (InputSet in : {InputSet::RQ, InputSet::VQ, InputSet::VRQ}) {
    for (AttentionMode at : {AttentionMode::Mutual, AttentionMode::Self, AttentionMode::Msa}) {
      out.push_back(CellSpec{std::string(input_set_name(in)) + "/" + std::string(attention_mode_name(at)), in, at,
                             RelationSource::ParsedSemantic});
    }
  }
  out.push_back(CellSpec{"r_oracle+q/msa", InputSet::RQ, AttentionMode::Msa, RelationSource::Oracle});
  out.push_back(CellSpec{"r_oracle+v+q/msa", InputSet::VRQ, AttentionMode::Msa, RelationSource::Oracle});
  out.push_back(CellSpec{"r_vis+v+q/msa", InputSet::VRQ, AttentionMode::Msa, RelationSource::ParsedVisual});
  return out;
}

inline RunConfig cell_config(const RunConfig& base, const CellSpec& cell, std::uint64_t seed) {
  RunConfig c = base;
  c.inputs = cell.inputs;
  c.attention = cell.attention;
  c.relation_source = cell.source;
  c.seed = seed;
  return c;
}

inline std::optional<double> median(std::vector<double> xs) {
  if (xs.empty()) return std::nullopt;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

struct CellRun {
  std::uint64_t seed = 0;
  std::optional<Metrics> metrics;
  std::string error;
};

struct CellResult {
  CellSpec spec;
  std::vector<CellRun> runs;

  std::optional<double> median_of(Tally Metrics::*field) const {
    std::vector<double> xs;
    for (const CellRun& r : runs)
      if (r.metrics)
        if (auto a = ((*r.metrics).*field).accuracy()) xs.push_back(*a);
    return median(xs);
  }
  bool failed() const {
    return std::none_of(runs.begin(), runs.end(), [](const CellRun& r) { return r.metrics.has_value(); });
  }
};

/// Prepared inputs keyed by relation source; every cell reuses them.
class PreparedCache {
 public:
  PreparedCache(const Dataset& ds, const RunConfig& base, EncodingCache& cache) : ds_(ds), base_(base), cache_(cache) {}

  const PreparedData& get(RelationSource source) {
    auto it = data_.find(source);
    if (it != data_.end()) return it->second;
    RunConfig c = base_;
    c.relation_source = source;
    const std::optional<DetectorParams> det = maybe_train_detector(ds_, c, cache_);
    return data_.emplace(source, prepare_data(ds_, c, cache_, det ? &*det : nullptr)).first->second;
  }

 private:
  const Dataset& ds_;
  RunConfig base_;
  EncodingCache& cache_;
  std::map<RelationSource, PreparedData> data_;
};

/// Trains and evaluates one configuration; identical to a standalone train + eval.
inline Metrics train_and_evaluate(const RunConfig& cfg, const PreparedData& data) {
  const TrainState st = train_model(cfg, data);
  return evaluate(st.params, data, data.eval).metrics;
}

using CellCallback = std::function<void(const CellSpec&, const CellRun&)>;

inline CellResult run_cell(const RunConfig& base, const CellSpec& cell, const std::vector<std::uint64_t>& seeds,
                           PreparedCache& prepared, const CellCallback& on_run = {}) {
  CellResult out;
  out.spec = cell;
  for (std::uint64_t seed : seeds) {
    CellRun run;
    run.seed = seed;
    try {
      const RunConfig c = cell_config(base, cell, seed);
      run.metrics = train_and_evaluate(c, prepared.get(cell.source));
    } catch (const std::exception& e) {
      run.error = e.what();
    }
    if (on_run) on_run(cell, run);
    out.runs.push_back(std::move(run));
  }
  return out;
}

inline std::vector<CellResult> run_matrix(const RunConfig& base, const Dataset& ds, EncodingCache& cache,
                                          const std::vector<std::uint64_t>& seeds,
                                          const std::vector<CellSpec>& cells = matrix_cells(),
                                          const CellCallback& on_run = {}) {
  PreparedCache prepared(ds, base, cache);
  std::vector<CellResult> out;
  for (const CellSpec& cell : cells) out.push_back(run_cell(base, cell, seeds, prepared, on_run));
  return out;
}

inline nlohmann::json matrix_json(const std::vector<CellResult>& cells) {
  nlohmann::json rows = nlohmann::json::array();
  for (const CellResult& c : cells) {
    nlohmann::json runs = nlohmann::json::array();
    for (const CellRun& r : c.runs) {
      nlohmann::json jr{{"seed", r.seed}};
      if (r.metrics) {
        jr["metrics"] = metrics_json(*r.metrics);
      } else {
        jr["error"] = r.error;
      }
      runs.push_back(jr);
    }
    rows.push_back({{"cell", c.spec.name},
                    {"inputs", input_set_name(c.spec.inputs)},
                    {"attention", attention_mode_name(c.spec.attention)},
                    {"relation_source", relation_source_name(c.spec.source)},
                    {"status", c.failed() ? "failed" : "ok"},
                    {"runs", runs},
                    {"median",
                     {{"overall", accuracy_json(c.median_of(&Metrics::overall))},
                      {"binary", accuracy_json(c.median_of(&Metrics::binary))},
                      {"open", accuracy_json(c.median_of(&Metrics::open))},
                      {"relation", accuracy_json(c.median_of(&Metrics::relation))}}}});
  }
  return {{"schema_version", kMetricsSchemaVersion}, {"cells", rows}};
}

inline std::string matrix_table(const std::vector<CellResult>& cells) {
  std::ostringstream os;
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  os << pad("cell", 20) << pad("source", 17) << pad("acc", 9) << pad("binary", 9) << pad("open", 9)
     << pad("relation", 10) << "seeds\n";
  for (const CellResult& c : cells) {
    os << pad(c.spec.name, 20) << pad(std::string(relation_source_name(c.spec.source)), 17);
    if (c.failed()) {
      os << "FAILED";
    } else {
      os << pad(format_accuracy(c.median_of(&Metrics::overall)), 9) << pad(format_accuracy(c.median_of(&Metrics::binary)), 9)
         << pad(format_accuracy(c.median_of(&Metrics::open)), 9)
         << pad(format_accuracy(c.median_of(&Metrics::relation)), 10);
    }
    for (std::size_t i = 0; i < c.runs.size(); ++i) {
      os << (i ? "," : "") << c.runs[i].seed;
      if (!c.runs[i].metrics) os << "(failed)";
    }
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Attention visualization.

/// Attention mass over object boxes: each box is filled with 255 * w / max(w);
/// overlapping boxes keep the brighter value.
inline std::string render_attention_pgm(const std::vector<Box>& boxes, const std::vector<double>& weights,
                                        std::size_t width = 200, std::size_t height = 200) {
  if (boxes.size() != weights.size()) throw DimensionError("render_attention_pgm: boxes and weights differ in count");
  std::vector<unsigned char> pixels(width * height, 0);
  double top = 0.0;
  for (double w : weights) top = std::max(top, w);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto level = static_cast<unsigned char>(top > 0 ? std::lround(255.0 * weights[i] / top) : 0);
    const auto x0 = static_cast<std::size_t>(std::clamp(boxes[i].x0, 0.0, 1.0) * static_cast<double>(width));
    const auto x1 = static_cast<std::size_t>(std::clamp(boxes[i].x1, 0.0, 1.0) * static_cast<double>(width));
    const auto y0 = static_cast<std::size_t>(std::clamp(boxes[i].y0, 0.0, 1.0) * static_cast<double>(height));
    const auto y1 = static_cast<std::size_t>(std::clamp(boxes[i].y1, 0.0, 1.0) * static_cast<double>(height));
    for (std::size_t y = y0; y < std::min(y1, height); ++y)
      for (std::size_t x = x0; x < std::min(x1, width); ++x)
        pixels[y * width + x] = std::max(pixels[y * width + x], level);
  }
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(pixels.begin(), pixels.end());
  return out;
}

/// Indices of the k largest scores, ties broken by lower index.
inline std::vector<std::size_t> top_k(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  if (idx.size() > k) idx.resize(k);
  return idx;
}

inline std::vector<double> as_vector(const Var& v) {
  const auto d = v.value().data();
  return {d.begin(), d.end()};
}

inline nlohmann::json attended_json(const std::optional<AttendedSet>& set) {
  if (!set) return nullptr;
  nlohmann::json j = nlohmann::json::object();
  if (set->mutual) {
    j["z_xy"] = as_vector(set->mutual->x_scores);
    j["z_yx"] = as_vector(set->mutual->y_scores);
  }
  if (set->self) {
    j["psi_x"] = as_vector(set->self->x_scores);
    j["psi_yx"] = as_vector(set->self->y_scores);
  }
  return j;
}

struct VisualizationFiles {
  std::vector<std::string> written;
};

/// Locates the n-th question of the dataset in record order.
inline std::pair<std::size_t, std::size_t> locate_example(const Dataset& ds, std::size_t example) {
  std::size_t k = example;
  for (std::size_t r = 0; r < ds.records.size(); ++r) {
    if (k < ds.records[r].questions.size()) return {r, k};
    k -= ds.records[r].questions.size();
  }
  throw std::out_of_range("example " + std::to_string(example) + " does not exist (dataset has " +
                          std::to_string(ds.question_count()) + " questions)");
}

inline VisualizationFiles visualize_example(const Checkpoint& ckpt, const Dataset& ds, std::size_t example,
                                            const std::string& out_dir) {
  const auto [record, question] = locate_example(ds, example);
  const RunConfig& cfg = ckpt.config;
  const ToyTextEncoder encoder = make_encoder(cfg);
  EncodingCache cache(encoder);
  const DatasetRecord& rec = ds.records[record];
  const QAPair& qa = rec.questions[question];
  const SceneInputs scene = scene_inputs(rec, cfg, cache, ckpt.detector ? &*ckpt.detector : nullptr);
  const ModelInput in{*cache.rows(qa.question), uses_visual(cfg.inputs) ? scene.v : Tensor(),
                      uses_relations(cfg.inputs) ? scene.r : Tensor()};
  Tape tape(false);
  const ModelOutput out = model_forward(tape, ckpt.state.params, in);
  const std::size_t predicted = argmax(out.logits.value().data());

  std::filesystem::create_directories(out_dir);
  VisualizationFiles files;
  const std::string stem = out_dir + "/example_" + std::to_string(example);
  std::vector<Box> proposal_boxes;
  for (const ObjectProposal& p : scene.proposals) proposal_boxes.push_back(p.box);
  if (out.visual) {
    if (out.visual->self) {
      write_file_atomic(stem + "_self.pgm",
                        render_attention_pgm(proposal_boxes, as_vector(out.visual->self->y_scores)));
      files.written.push_back(stem + "_self.pgm");
    }
    if (out.visual->mutual) {
      write_file_atomic(stem + "_mutual.pgm",
                        render_attention_pgm(proposal_boxes, as_vector(out.visual->mutual->y_scores)));
      files.written.push_back(stem + "_mutual.pgm");
    }
  }

  // Triplet scores: relation-branch attention when the model has one, otherwise the joint probability.
  std::vector<double> scores;
  std::string score_kind = "joint_probability";
  std::optional<std::vector<double>> self_scores, mutual_scores;
  if (out.relation) {
    if (out.relation->self) self_scores = as_vector(out.relation->self->y_scores);
    if (out.relation->mutual) mutual_scores = as_vector(out.relation->mutual->y_scores);
  }
  if (self_scores) {
    scores = *self_scores;
    score_kind = "self_attention";
  } else if (mutual_scores) {
    scores = *mutual_scores;
    score_kind = "mutual_attention";
  } else {
    for (const RelationshipTriplet& t : scene.triplets) scores.push_back(t.p_subj * t.p_obj * t.p_rel);
  }
  nlohmann::json triplets = nlohmann::json::array();
  for (std::size_t i = 0; i < scene.triplets.size(); ++i) {
    nlohmann::json t = triplet_json(scene.triplets[i]);
    t["score"] = scores[i];
    if (self_scores) t["self_attention"] = (*self_scores)[i];
    if (mutual_scores) t["mutual_attention"] = (*mutual_scores)[i];
    triplets.push_back(t);
  }
  nlohmann::json top = nlohmann::json::array();
  for (std::size_t i : top_k(scores, 2)) top.push_back(i);

  const nlohmann::json header{{"example", example},
                              {"record", record},
                              {"question", qa.question},
                              {"answer", qa.answer},
                              {"predicted", ckpt.answer_vocab.at(predicted)}};
  nlohmann::json triplet_report = header;
  triplet_report["score_kind"] = score_kind;
  triplet_report["triplets"] = triplets;
  triplet_report["top2"] = top;
  write_file_atomic(stem + "_triplets.json", triplet_report.dump(2) + "\n");
  files.written.push_back(stem + "_triplets.json");

  nlohmann::json attention = header;
  attention["visual"] = attended_json(out.visual);
  attention["relation"] = attended_json(out.relation);
  attention["triplet_scores"] = scores;
  write_file_atomic(stem + "_attention.json", attention.dump(2) + "\n");
  files.written.push_back(stem + "_attention.json");
  return files;
}

}  // namespace srpvqa
