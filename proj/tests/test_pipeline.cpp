#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "srpvqa/experiment.hpp"

using namespace srpvqa;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.d_q = 16;
  c.encoder_heads = 2;
  c.d = 8;
  c.heads = 2;
  c.d_h = 4;
  c.layers = 1;
  c.d_f = 8;
  c.mlp_hidden = 8;
  c.batch = 8;
  c.epochs = 2;
  c.lr = 3e-3;
  c.data.feature_width = 8;
  c.threads = 1;
  return c;
}

struct Fixture {
  RunConfig cfg = tiny_config();
  Dataset ds;
  ToyTextEncoder encoder;
  EncodingCache cache;
  PreparedData data;

  explicit Fixture(std::size_t scenes = 30, RunConfig c = tiny_config())
      : cfg(c),
        ds(generate_dataset(cfg.data, cfg.templates, scenes, cfg.data_seed)),
        encoder(make_encoder(cfg)),
        cache(encoder),
        data(prepare_data(ds, cfg, cache)) {}
};

std::vector<Tensor> snapshot(VqaModelParams& p) {
  std::vector<Tensor> out;
  for (Tensor* t : parameter_list(p)) out.push_back(*t);
  return out;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("srpvqa_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Split, HoldsOutTrailingScenes) {
  EXPECT_EQ(split_point(10, 0.2), 8u);
  EXPECT_EQ(split_point(3, 0.1), 2u);
  EXPECT_EQ(split_point(1, 0.2), 1u);
  EXPECT_EQ(split_point(5, 0.01), 4u);
}

TEST(Prepare, ExamplesCoverEveryQuestionOnce) {
  Fixture f;
  EXPECT_EQ(f.data.examples.size(), f.ds.question_count());
  EXPECT_EQ(f.data.train.size() + f.data.eval.size(), f.data.examples.size());
  const std::size_t split = split_point(f.ds.records.size(), f.cfg.holdout);
  for (std::size_t i : f.data.train) EXPECT_LT(f.data.examples[i].record, split);
  for (std::size_t i : f.data.eval) EXPECT_GE(f.data.examples[i].record, split);
}

TEST(Prepare, FeatureWidthMismatchThrows) {
  Fixture f;
  RunConfig other = f.cfg;
  other.data.feature_width = 9;
  EXPECT_THROW(prepare_data(f.ds, other, f.cache), DimensionError);
}

TEST(Prepare, OracleRowsMatchGraph) {
  RunConfig c = tiny_config();
  c.relation_source = RelationSource::Oracle;
  Fixture f(10, c);
  for (std::size_t r = 0; r < f.ds.records.size(); ++r) {
    EXPECT_EQ(f.data.scenes[r].triplets, parse_scene_graph(f.ds.records[r].scene));
    EXPECT_EQ(f.data.scenes[r].r.rows(), f.data.scenes[r].triplets.size());
  }
}

TEST(Config, JsonRoundTripKeepsEveryField) {
  RunConfig c = tiny_config();
  c.warmup_steps = 77;
  c.alpha = 0.9;
  c.attention = AttentionMode::Self;
  c.relation_source = RelationSource::ParsedVisual;
  const nlohmann::json j = c;
  const RunConfig back = j.get<RunConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.warmup_steps, 77u);
  nlohmann::json bad = j;
  bad["optimizer"]["warmup"] = 3;
  EXPECT_THROW(bad.get<RunConfig>(), ConfigError);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  Fixture f;
  RunConfig c = f.cfg;
  c.lr = 0.0;
  TrainState st = init_training(c, f.data.answers);
  const auto before = snapshot(st.params);
  train_epochs(st, c, f.data);
  EXPECT_EQ(snapshot(st.params), before);
  EXPECT_EQ(st.epoch, 2u);
}

TEST(Train, LossDecreasesOverTenEpochs) {
  Fixture f(50);
  RunConfig c = f.cfg;
  c.epochs = 10;
  const TrainState st = train_model(c, f.data);
  ASSERT_EQ(st.history.size(), 10u);
  EXPECT_LT(st.history.back().loss, st.history.front().loss);
}

TEST(Train, WarmupRampsLearningRateLinearly) {
  Fixture f;
  RunConfig c = f.cfg;
  c.epochs = 1;
  c.warmup_steps = 1000;
  TrainState st = train_model(c, f.data);
  const double steps = static_cast<double>(st.optimizer.step);
  ASSERT_GT(steps, 1.0);
  EXPECT_DOUBLE_EQ(st.optimizer.lr, c.lr * steps / 1000.0);
  // Past the ramp the configured rate applies.
  c.epochs = 2;
  c.warmup_steps = 1;
  train_epochs(st, c, f.data);
  EXPECT_EQ(st.optimizer.lr, c.lr);
}

TEST(Train, RunsAreBitIdenticalAcrossThreadCounts) {
  Fixture f;
  RunConfig one = f.cfg, three = f.cfg;
  three.threads = 3;
  TrainState a = train_model(one, f.data);
  TrainState b = train_model(one, f.data);
  TrainState c = train_model(three, f.data);
  EXPECT_EQ(snapshot(a.params), snapshot(b.params));
  EXPECT_EQ(snapshot(a.params), snapshot(c.params));
}

TEST(Train, ResumingMatchesUninterruptedRun) {
  Fixture f;
  RunConfig c = f.cfg;
  c.epochs = 3;
  TrainState full = train_model(c, f.data);
  RunConfig first = c;
  first.epochs = 1;
  TrainState part = train_model(first, f.data);
  Checkpoint ck{first, f.ds.answer_vocab, std::move(part), std::nullopt};
  Checkpoint back = deserialize_checkpoint(serialize_checkpoint(ck));
  train_epochs(back.state, c, f.data);
  EXPECT_EQ(snapshot(back.state.params), snapshot(full.params));
}

TEST(Evaluate, ConstantPredictorScoresItsAnswerRate) {
  Fixture f;
  TrainState st = init_training(f.cfg, f.data.answers);
  Dense& cls = st.params.fusion.classifier;
  cls.weight = Tensor(cls.weight.shape());
  cls.bias = Tensor(cls.bias.shape());
  const std::size_t target = 0;
  cls.bias[target] = 1.0;
  const Evaluation ev = evaluate(st.params, f.data, f.data.eval);
  std::size_t hits = 0, rel_hits = 0, rel = 0;
  for (std::size_t i : f.data.eval) {
    const bool hit = f.ds.records[f.data.examples[i].record].questions[f.data.examples[i].question].answer ==
                     f.ds.answer_vocab[target];
    hits += hit;
    if (f.data.examples[i].depends_on_relations) {
      ++rel;
      rel_hits += hit;
    }
  }
  EXPECT_DOUBLE_EQ(*ev.metrics.overall.accuracy(), 100.0 * hits / f.data.eval.size());
  EXPECT_DOUBLE_EQ(*ev.metrics.relation.accuracy(), 100.0 * rel_hits / rel);
}

TEST(Evaluate, DumpRecountsToSameMetrics) {
  Fixture f;
  const TrainState st = train_model(f.cfg, f.data);
  const Evaluation ev = evaluate(st.params, f.data, f.data.eval);
  EXPECT_EQ(ev.predictions.size(), f.data.eval.size());
  EXPECT_EQ(metrics_json(metrics_from_predictions(ev.predictions, f.data)), metrics_json(ev.metrics));
}

TEST(Metrics, EmptyCategoryIsNotApplicable) {
  Metrics m;
  Example ex;
  ex.qtype = QuestionType::Binary;
  m.add(ex, true);
  const auto j = metrics_json(m);
  EXPECT_EQ(j["relation"]["accuracy"], "n/a");
  EXPECT_EQ(j["open"]["accuracy"], "n/a");
  EXPECT_EQ(j["binary"]["accuracy"], 100.0);
  EXPECT_EQ(format_accuracy(std::nullopt), "n/a");
  EXPECT_NE(metrics_table(m).find("n/a"), std::string::npos);
}

TEST(Checkpoint, RoundTripPreservesModel) {
  Fixture f;
  Checkpoint ck{f.cfg, f.ds.answer_vocab, train_model(f.cfg, f.data), std::nullopt};
  const std::string bytes = serialize_checkpoint(ck);
  Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(snapshot(back.state.params), snapshot(ck.state.params));
  EXPECT_EQ(back.state.optimizer.step, ck.state.optimizer.step);
  EXPECT_EQ(back.answer_vocab, ck.answer_vocab);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  const auto dir = scratch_dir("ckpt");
  save_checkpoint((dir / "m.ckpt").string(), ck);
  EXPECT_EQ(read_file((dir / "m.ckpt").string()), bytes);
}

TEST(Checkpoint, FlippedByteIsDetected) {
  Fixture f(10);
  Checkpoint ck{f.cfg, f.ds.answer_vocab, init_training(f.cfg, f.data.answers), std::nullopt};
  std::string bytes = serialize_checkpoint(ck);
  bytes[bytes.size() / 2] ^= 0x01;
  try {
    deserialize_checkpoint(bytes);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, OlderVersionNamesMigration) {
  Fixture f(10);
  Checkpoint ck{f.cfg, f.ds.answer_vocab, init_training(f.cfg, f.data.answers), std::nullopt};
  std::string bytes = serialize_checkpoint(ck);
  const std::string tag = std::string(kCheckpointMagic) + " 1 ";
  ASSERT_EQ(bytes.rfind(tag, 0), 0u);
  bytes.replace(0, tag.size(), std::string(kCheckpointMagic) + " 0 ");
  try {
    deserialize_checkpoint(bytes);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("migration"), std::string::npos) << e.what();
  }
  EXPECT_THROW(deserialize_checkpoint("not a checkpoint"), CheckpointError);
}

TEST(Matrix, HasTwelveUniqueCells) {
  const auto cells = matrix_cells();
  ASSERT_EQ(cells.size(), 12u);
  std::set<std::string> names;
  for (const auto& c : cells) names.insert(c.name);
  EXPECT_EQ(names.size(), 12u);
}

TEST(Matrix, CellEqualsStandaloneTraining) {
  Fixture f(20);
  const CellSpec cell{"v+r+q/msa", InputSet::VRQ, AttentionMode::Msa, RelationSource::ParsedSemantic};
  const auto results = run_matrix(f.cfg, f.ds, f.cache, {5}, {cell});
  ASSERT_EQ(results.size(), 1u);
  ASSERT_TRUE(results[0].runs[0].metrics) << results[0].runs[0].error;
  const Metrics standalone = train_and_evaluate(cell_config(f.cfg, cell, 5), f.data);
  EXPECT_EQ(metrics_json(*results[0].runs[0].metrics), metrics_json(standalone));
  EXPECT_EQ(results[0].median_of(&Metrics::overall), standalone.overall.accuracy());
}

TEST(Matrix, MedianOfSeeds) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0}), 2.5);
  EXPECT_EQ(median({}), std::nullopt);
}

TEST(Visualize, UniformWeightsGiveEqualIntensity) {
  const std::vector<Box> boxes = {Box{0, 0, 0.25, 0.25}, Box{0.5, 0.5, 1.0, 1.0}};
  const std::string pgm = render_attention_pgm(boxes, {0.5, 0.5}, 20, 20);
  const std::string header = "P5\n20 20\n255\n";
  ASSERT_EQ(pgm.size(), header.size() + 400);
  auto px = [&](std::size_t x, std::size_t y) { return static_cast<unsigned char>(pgm[header.size() + y * 20 + x]); };
  EXPECT_EQ(px(1, 1), 255);
  EXPECT_EQ(px(15, 15), 255);
  EXPECT_EQ(px(15, 1), 0);
  const std::string half = render_attention_pgm(boxes, {0.2, 0.4}, 20, 20);
  EXPECT_EQ(static_cast<unsigned char>(half[header.size() + 21]), 128);
}

TEST(Visualize, TopKBreaksTiesByIndex) {
  EXPECT_EQ(top_k({0.1, 0.4, 0.4, 0.1}, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(top_k({0.3}, 2), (std::vector<std::size_t>{0}));
}

TEST(Visualize, WritesDeterministicFiles) {
  Fixture f(10);
  Checkpoint ck{f.cfg, f.ds.answer_vocab, train_model(f.cfg, f.data), std::nullopt};
  const auto a = scratch_dir("vis_a"), b = scratch_dir("vis_b");
  const auto fa = visualize_example(ck, f.ds, 3, a.string());
  const auto fb = visualize_example(ck, f.ds, 3, b.string());
  ASSERT_EQ(fa.written.size(), 4u);
  for (std::size_t i = 0; i < fa.written.size(); ++i) EXPECT_EQ(read_file(fa.written[i]), read_file(fb.written[i]));
  const auto report = nlohmann::json::parse(read_file((a / "example_3_triplets.json").string()));
  EXPECT_EQ(report["score_kind"], "self_attention");
  EXPECT_LE(report["top2"].size(), 2u);
  // The top-2 entries carry the two highest scores.
  double best = -1.0;
  for (const auto& t : report["triplets"]) best = std::max(best, t["score"].get<double>());
  if (!report["top2"].empty()) {
    EXPECT_EQ(report["triplets"][report["top2"][0].get<std::size_t>()]["score"], best);
  }
  EXPECT_THROW(visualize_example(ck, f.ds, f.ds.question_count(), a.string()), std::out_of_range);
}
