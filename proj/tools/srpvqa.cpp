#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "srpvqa/checkpoint.hpp"
#include "srpvqa/experiment.hpp"

using namespace srpvqa;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// Flags shared by every verb. Unset optionals leave the config file's value alone.
struct Common {
  std::string config_path;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;

  std::optional<double> alpha, beta, lr, sigma;
  std::optional<std::size_t> epochs, batch, n_scenes, layers, warmup;
  std::string inputs, attention, relation_source, detector;
};

void add_common(CLI::App* cmd, Common& c, bool model_flags) {
  cmd->add_option("--config", c.config_path, "JSON run configuration");
  cmd->add_option("--profile", c.profile, "named profile: desk | paper-scale");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--threads", c.threads, "worker threads for batch gradients");
  cmd->add_option("--alpha", c.alpha, "stage-1 threshold on p_subj * p_obj");
  cmd->add_option("--beta", c.beta, "stage-2 threshold on p_rel");
  cmd->add_option("--sigma", c.sigma, "simulated detection noise level");
  if (!model_flags) return;
  cmd->add_option("--lr", c.lr, "Adam learning rate");
  cmd->add_option("--warmup", c.warmup, "optimizer steps of linear lr warmup");
  cmd->add_option("--epochs", c.epochs, "training epochs");
  cmd->add_option("--batch", c.batch, "batch size");
  cmd->add_option("--layers", c.layers, "guided self-attention depth");
  cmd->add_option("--inputs", c.inputs, "r+q | v+q | v+r+q");
  cmd->add_option("--attention", c.attention, "mutual | self | msa");
  cmd->add_option("--relation-source", c.relation_source, "parsed-semantic | parsed-visual | oracle");
  cmd->add_option("--detector", c.detector, "simulated | learned");
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig::desk() : load_config(c.config_path);
  if (!c.profile.empty()) {
    if (!c.config_path.empty()) throw ConfigError("--profile and --config are mutually exclusive");
    cfg = RunConfig::named_profile(c.profile);
  }
  if (c.threads) cfg.threads = *c.threads;
  if (c.alpha) cfg.alpha = *c.alpha;
  if (c.beta) cfg.beta = *c.beta;
  if (c.sigma) cfg.detection.sigma = *c.sigma;
  if (c.lr) cfg.lr = *c.lr;
  if (c.warmup) cfg.warmup_steps = *c.warmup;
  if (c.epochs) cfg.epochs = *c.epochs;
  if (c.batch) cfg.batch = *c.batch;
  if (c.layers) cfg.layers = *c.layers;
  if (c.n_scenes) cfg.n_scenes = *c.n_scenes;
  if (!c.inputs.empty()) cfg.inputs = parse_input_set(c.inputs);
  if (!c.attention.empty()) cfg.attention = parse_attention_mode(c.attention);
  if (!c.relation_source.empty()) cfg.relation_source = parse_relation_source(c.relation_source);
  if (!c.detector.empty()) cfg.detector = parse_detector_mode(c.detector);
  return cfg;
}

// The dataset, not the run config, defines the scene generator settings.
Dataset load_for_config(const std::string& path, RunConfig& cfg) {
  Dataset ds = load_dataset(path);
  cfg.data = ds.config;
  cfg.validate();
  return ds;
}

int cmd_gen(const Common& c, std::size_t n_scenes_flag, bool n_scenes_set) {
  RunConfig cfg = resolve_config(c);
  if (c.seed) cfg.data_seed = *c.seed;
  if (n_scenes_set) cfg.n_scenes = n_scenes_flag;
  cfg.validate();
  if (c.out.empty()) throw ConfigError("gen: --out is required");
  const Dataset ds = generate_dataset(cfg.data, cfg.templates, cfg.n_scenes, cfg.data_seed);
  std::ostringstream os;
  write_dataset(os, ds);
  write_file_atomic(c.out, os.str());
  std::cout << "wrote " << ds.records.size() << " scenes, " << ds.question_count() << " questions, "
            << ds.answer_vocab.size() << " answers to " << c.out << "\n";
  return kExitOk;
}

int cmd_train(const Common& c, const std::string& dataset_path) {
  RunConfig cfg = resolve_config(c);
  if (c.seed) cfg.seed = *c.seed;
  if (c.out.empty()) throw ConfigError("train: --out is required");
  Dataset ds = load_for_config(dataset_path, cfg);
  const ToyTextEncoder encoder = make_encoder(cfg);
  EncodingCache cache(encoder);
  std::optional<DetectorParams> detector = maybe_train_detector(ds, cfg, cache);
  const PreparedData data = prepare_data(ds, cfg, cache, detector ? &*detector : nullptr);
  std::cout << "training " << input_set_name(cfg.inputs) << "/" << attention_mode_name(cfg.attention) << " ("
            << relation_source_name(cfg.relation_source) << ") on " << data.train.size() << " questions\n";
  std::ostringstream log;
  TrainState st = train_model(cfg, data, [&](const EpochLog& e) {
    const nlohmann::json j{{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy}};
    log << j.dump() << "\n";
    std::cout << "epoch " << e.epoch << "  loss " << e.loss << "  train_acc " << format_accuracy(e.train_accuracy)
              << std::endl;
  });
  Checkpoint ckpt{cfg, ds.answer_vocab, std::move(st), std::move(detector)};
  save_checkpoint(c.out, ckpt);
  write_file_atomic(c.out + ".log.jsonl", log.str());
  std::cout << "checkpoint written to " << c.out << "\n";
  return kExitOk;
}

std::vector<std::size_t> split_indices(const PreparedData& data, const std::string& split) {
  if (split == "eval") return data.eval;
  if (split == "train") return data.train;
  if (split == "all") {
    std::vector<std::size_t> all(data.examples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  throw ConfigError("unknown split '" + split + "' (expected eval, train or all)");
}

int cmd_eval(const Common& c, const std::string& checkpoint_path, const std::string& dataset_path,
             const std::string& split, const std::string& dump_path) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  RunConfig cfg = ckpt.config;
  Dataset ds = load_for_config(dataset_path, cfg);
  if (ds.answer_vocab != ckpt.answer_vocab) {
    throw SchemaError("answer vocabulary of the dataset does not match the checkpoint");
  }
  if (c.threads) cfg.threads = *c.threads;
  const ToyTextEncoder encoder = make_encoder(cfg);
  EncodingCache cache(encoder);
  const PreparedData data = prepare_data(ds, cfg, cache, ckpt.detector ? &*ckpt.detector : nullptr);
  const Evaluation ev = evaluate(ckpt.state.params, data, split_indices(data, split));
  std::cout << metrics_table(ev.metrics);
  nlohmann::json report = metrics_json(ev.metrics);
  report["split"] = split;
  if (!c.out.empty()) write_file_atomic(c.out, report.dump(2) + "\n");
  if (!dump_path.empty()) {
    std::ostringstream os;
    for (const Prediction& p : ev.predictions) {
      const Example& ex = data.examples[p.example];
      os << nlohmann::json{{"example", p.example},
                           {"record", p.record},
                           {"question", p.question},
                           {"qtype", ex.qtype == QuestionType::Binary ? "binary" : "open"},
                           {"depends_on_relations", ex.depends_on_relations},
                           {"predicted", ds.answer_vocab[p.predicted]},
                           {"answer", ds.answer_vocab[p.answer]}}
                .dump()
         << "\n";
    }
    write_file_atomic(dump_path, os.str());
  }
  return kExitOk;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("bad seed list '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

int cmd_matrix(const Common& c, const std::string& dataset_path, const std::string& seeds_text) {
  RunConfig cfg = resolve_config(c);
  Dataset ds = load_for_config(dataset_path, cfg);
  std::vector<std::uint64_t> seeds = parse_seeds(seeds_text);
  if (c.seed) {
    // --seed S expands to S, S+1, ... with the same count as --seeds
    for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = *c.seed + i;
  }
  const ToyTextEncoder encoder = make_encoder(cfg);
  EncodingCache cache(encoder);
  const auto cells = run_matrix(cfg, ds, cache, seeds, matrix_cells(), [](const CellSpec& cell, const CellRun& run) {
    std::cout << cell.name << " (" << relation_source_name(cell.source) << ") seed " << run.seed << ": "
              << (run.metrics ? format_accuracy(run.metrics->overall.accuracy()) : "failed: " + run.error)
              << std::endl;
  });
  std::cout << matrix_table(cells);
  if (!c.out.empty()) write_file_atomic(c.out, matrix_json(cells).dump(2) + "\n");
  return kExitOk;
}

int cmd_visualize(const Common& c, const std::string& checkpoint_path, const std::string& dataset_path,
                  std::size_t example) {
  if (c.out.empty()) throw ConfigError("visualize: --out directory is required");
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Dataset ds = load_dataset(dataset_path);
  const VisualizationFiles files = visualize_example(ckpt, ds, example, c.out);
  for (const std::string& f : files.written) std::cout << f << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic relationship parsing and mutual/self attention for synthetic VQA"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, matrix_c, vis_c;
  std::size_t n_scenes = 0;
  std::string dataset, checkpoint, split = "eval", dump, seeds = "1,2,3";
  std::size_t example = 0;

  auto* gen = app.add_subcommand("gen", "generate a synthetic scene/question dataset");
  add_common(gen, gen_c, false);
  auto* n_opt = gen->add_option("--n-scenes", n_scenes, "number of scenes");
  gen->add_option("--out", gen_c.out, "output dataset (JSON lines)")->required();

  auto* train = app.add_subcommand("train", "train one model configuration");
  add_common(train, train_c, true);
  train->add_option("--dataset", dataset, "dataset file")->required();
  train->add_option("--out", train_c.out, "output checkpoint")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_c, false);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--dataset", dataset, "dataset file")->required();
  eval->add_option("--split", split, "eval | train | all");
  eval->add_option("--dump", dump, "per-example predictions (JSON lines)");
  eval->add_option("--out", eval_c.out, "metrics JSON");

  auto* matrix = app.add_subcommand("matrix", "run the ablation and relation-source experiment matrix");
  add_common(matrix, matrix_c, true);
  matrix->add_option("--dataset", dataset, "dataset file")->required();
  matrix->add_option("--seeds", seeds, "comma-separated seeds");
  matrix->add_option("--out", matrix_c.out, "report JSON");

  auto* vis = app.add_subcommand("visualize", "render attention heatmaps and the triplet report for one example");
  add_common(vis, vis_c, false);
  vis->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  vis->add_option("--dataset", dataset, "dataset file")->required();
  vis->add_option("--example", example, "question index in dataset order")->required();
  vis->add_option("--out", vis_c.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen(gen_c, n_scenes, n_opt->count() > 0);
    if (*train) return cmd_train(train_c, dataset);
    if (*eval) return cmd_eval(eval_c, checkpoint, dataset, split, dump);
    if (*matrix) return cmd_matrix(matrix_c, dataset, seeds);
    if (*vis) return cmd_visualize(vis_c, checkpoint, dataset, example);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
