// Command-line front end: dataset generation, training, inference and
// evaluation. Every command exits 0 on success and prints a single
// machine-parsable "error:<category>: <message>" line on failure.

#include <iostream>

#include "CLI11.hpp"
#include "tseg/workflow.hpp"

namespace ts = tseg;
namespace fs = std::filesystem;

namespace {

struct CommandError : std::runtime_error {
  std::string category;
  int code;
  CommandError(std::string cat, const std::string& msg, int exit_code)
      : std::runtime_error(msg), category(std::move(cat)), code(exit_code) {}
};

[[noreturn]] void fail(const std::string& category, const std::string& msg, int code) {
  throw CommandError(category, msg, code);
}

ts::RunConfig load_run_config(const std::string& config_path, uint64_t seed_override,
                              bool has_seed, long threads_override, bool has_threads) {
  ts::RunConfig cfg;
  if (!config_path.empty()) {
    if (!fs::exists(config_path)) fail("path", "config file not found: " + config_path, 3);
    cfg = ts::RunConfig::from_kv(ts::KeyValueFile::parse_file(config_path));
  }
  if (has_seed) cfg.seed = seed_override;
  if (has_threads) cfg.threads = threads_override;
  return cfg;
}

ts::RunConfig load_out_dir_config(const std::string& out) {
  const std::string path = (fs::path(out) / "run_config.txt").string();
  if (!fs::exists(path)) fail("path", "missing run_config.txt under " + out + "; train first", 3);
  return ts::RunConfig::from_kv(ts::KeyValueFile::parse_file(path));
}

int cmd_generate(const std::string& config_path, const std::string& out, uint64_t seed,
                 bool has_seed, long videos, long classes) {
  ts::GeneratorConfig cfg;
  if (!config_path.empty()) {
    if (!fs::exists(config_path)) fail("path", "config file not found: " + config_path, 3);
    cfg = ts::generator_config_from(ts::KeyValueFile::parse_file(config_path));
  }
  if (has_seed) cfg.seed = seed;
  if (videos > 0) cfg.videos = videos;
  if (classes > 0) cfg.classes = classes;
  auto records = ts::generate_synthetic(cfg);
  const auto names = ts::class_names_for(cfg.classes);
  ts::write_dataset(out, records, names);
  ts::generator_config_to_kv(cfg).write_file((fs::path(out) / "generator_config.txt").string());
  std::cout << "generated " << records.size() << " videos with " << cfg.classes
            << " classes under " << out << "\n";
  return 0;
}

int cmd_train(const ts::RunConfig& cfg, const std::string& data, const std::string& out, long fold,
              const std::string& stage, bool resume) {
  ts::Dataset ds = ts::read_dataset(data);
  if (ds.videos.empty()) fail("data", "dataset has no videos: " + data, 4);
  ts::wf::write_manifest(cfg, out);
  auto folds = ts::make_folds(ts::wf::dataset_ids(ds), cfg.folds, cfg.seed);
  for (long k : ts::wf::fold_selection(cfg, fold)) {
    ts::wf::train_fold(cfg, ds, folds[static_cast<size_t>(k)], k, out, stage, resume, &std::cerr);
    std::cout << "fold " << k << " trained; checkpoint at "
              << ts::wf::fold_dir(out, k) + "/checkpoint.bin" << "\n";
  }
  return 0;
}

int cmd_infer(const ts::RunConfig& cfg, const std::string& data, const std::string& out, long fold,
              bool test_split, std::vector<std::string> ids) {
  ts::Dataset ds = ts::read_dataset(data);
  auto folds = ts::make_folds(ts::wf::dataset_ids(ds), cfg.folds, cfg.seed);
  for (long k : ts::wf::fold_selection(cfg, fold)) {
    std::vector<std::string> targets = ids;
    if (targets.empty() && test_split) targets = folds[static_cast<size_t>(k)].test_ids;
    for (auto& id : targets)
      if (!ds.find(id)) fail("data", "unknown video id: " + id, 4);
    auto preds = ts::wf::infer_fold(cfg, ds, k, out, targets);
    std::cout << "fold " << k << ": wrote predictions for " << preds.size() << " videos\n";
  }
  return 0;
}

int cmd_evaluate(const ts::RunConfig& cfg, const std::string& data, const std::string& out,
                 long fold) {
  ts::Dataset ds = ts::read_dataset(data);
  auto folds = ts::make_folds(ts::wf::dataset_ids(ds), cfg.folds, cfg.seed);
  long total_errors = 0;
  std::vector<std::pair<tseg::LabelSequence, tseg::LabelSequence>> all_pairs;
  std::vector<std::string> all_ids;
  for (long k : ts::wf::fold_selection(cfg, fold)) {
    auto outcome = ts::wf::evaluate_fold(ds, k, out, folds[static_cast<size_t>(k)].test_ids);
    ts::wf::write_fold_report(outcome, cfg, k, out);
    std::cout << "fold " << k << "\n" << ts::eval_report_table(outcome.calibrated);
    for (auto& e : outcome.errors) std::cerr << "error:data: " << e << "\n";
    total_errors += static_cast<long>(outcome.errors.size());
    for (auto& entry : outcome.calibrated.videos) {
      const ts::VideoRecord* v = ds.find(entry.id);
      auto pred = ts::read_label_file(
          (fs::path(ts::wf::fold_dir(out, k)) / "pred_calibrated" / (entry.id + ".txt")).string(),
          ds.class_names);
      all_pairs.push_back({std::move(pred), v->labels});
      all_ids.push_back(entry.id);
    }
  }
  if (!all_pairs.empty()) {
    auto aggregate = ts::evaluate_corpus(all_pairs, all_ids);
    std::ofstream js((fs::path(out) / "report_aggregate.json").string());
    js << "{\"seed\":" << cfg.seed << ",\"config_hash\":\""
       << ts::wf::hex64(cfg.config_hash()) << "\",\"calibrated\":" << ts::eval_report_json(aggregate)
       << "}\n";
    std::ofstream tb((fs::path(out) / "report_aggregate.txt").string());
    tb << ts::eval_report_table(aggregate);
    std::cout << "aggregate\n" << ts::eval_report_table(aggregate);
  }
  if (total_errors > 0) fail("data", std::to_string(total_errors) + " videos failed evaluation", 4);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal action segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, stage = "all";
  uint64_t seed = 0;
  long fold = -1, threads = 1, videos = 0, classes = 0;
  bool resume = false, test_split = false;
  std::vector<std::string> ids;

  auto* gen = app.add_subcommand("generate", "create a synthetic dataset");
  gen->add_option("--config", config_path, "generator key-value config file");
  gen->add_option("--out", out_dir, "dataset output directory")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "generator seed override");
  gen->add_option("--videos", videos, "number of videos override");
  gen->add_option("--classes", classes, "number of classes override");

  auto* train = app.add_subcommand("train", "train the pipeline with cross-validation folds");
  train->add_option("--config", config_path, "run key-value config file");
  train->add_option("--data", data_dir, "dataset root")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  auto* train_seed = train->add_option("--seed", seed, "seed override");
  train->add_option("--fold", fold, "train a single fold (default: all)");
  train->add_option("--stage", stage, "all | vfe | segment");
  train->add_flag("--resume", resume, "continue from the fold checkpoint");
  auto* train_threads = train->add_option("--device-threads", threads, "worker threads");

  auto* infer = app.add_subcommand("infer", "write raw and calibrated predictions");
  infer->add_option("--config", config_path, "run config override (default: <out>/run_config.txt)");
  infer->add_option("--data", data_dir, "dataset root")->required();
  infer->add_option("--out", out_dir, "training output directory")->required();
  infer->add_option("--fold", fold, "fold selection (default: all)");
  infer->add_flag("--test-split", test_split, "infer each fold's held-out videos");
  auto* infer_threads = infer->add_option("--device-threads", threads, "worker threads");
  infer->add_option("ids", ids, "explicit video ids (empty list: no-op unless --test-split)");

  auto* eval = app.add_subcommand("evaluate", "score predictions against ground truth");
  eval->add_option("--config", config_path, "run config override (default: <out>/run_config.txt)");
  eval->add_option("--data", data_dir, "dataset root")->required();
  eval->add_option("--out", out_dir, "training output directory")->required();
  eval->add_option("--fold", fold, "fold selection (default: all)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_generate(config_path, out_dir, seed, gen_seed->count() > 0, videos, classes);
    if (train->parsed()) {
      auto cfg = load_run_config(config_path, seed, train_seed->count() > 0, threads,
                                 train_threads->count() > 0);
      return cmd_train(cfg, data_dir, out_dir, fold, stage, resume);
    }
    if (infer->parsed()) {
      auto cfg = config_path.empty() ? load_out_dir_config(out_dir)
                                     : load_run_config(config_path, 0, false, 0, false);
      if (infer_threads->count() > 0) cfg.threads = threads;
      return cmd_infer(cfg, data_dir, out_dir, fold, test_split, ids);
    }
    if (eval->parsed()) {
      auto cfg = config_path.empty() ? load_out_dir_config(out_dir)
                                     : load_run_config(config_path, 0, false, 0, false);
      return cmd_evaluate(cfg, data_dir, out_dir, fold);
    }
  } catch (const CommandError& e) {
    std::cerr << "error:" << e.category << ": " << e.what() << "\n";
    return e.code;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error:contract: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    if (msg.find("non-finite loss") != std::string::npos) {
      std::cerr << "error:nan: " << msg << "\n";
      return 6;
    }
    if (msg.find("cannot open") != std::string::npos || msg.find("not found") != std::string::npos ||
        msg.find("cannot write") != std::string::npos || msg.find("missing") != std::string::npos) {
      std::cerr << "error:path: " << msg << "\n";
      return 3;
    }
    std::cerr << "error:internal: " << msg << "\n";
    return 1;
  }
  return 0;
}
