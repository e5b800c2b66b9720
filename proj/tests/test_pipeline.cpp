#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "tseg/workflow.hpp"

namespace ts = tseg;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
  const std::string path = (fs::temp_directory_path() / ("tseg_test_" + name)).string();
  fs::remove_all(path);
  fs::create_directories(path);
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

// Small-but-real corpus for pipeline smoke tests.
ts::GeneratorConfig small_gen(uint64_t seed = 3) {
  ts::GeneratorConfig g;
  g.videos = 12;
  g.mean_frames = 150;
  g.mean_instances = 6;
  g.classes = 6;
  g.feature_dim = 8;
  g.seed = seed;
  return g;
}

ts::RunConfig small_run() {
  ts::RunConfig cfg;
  cfg.use_vfe = false;  // raw features keep the smoke tests fast
  cfg.ase_width = 12;
  cfg.prc_width = 8;
  cfg.blocks_per_stage = 3;
  cfg.num_decoders = 1;
  cfg.epochs = 5;
  cfg.window_ds = {2};
  cfg.window_ol = {1};
  cfg.folds = 3;
  cfg.seed = 7;
  return cfg;
}

ts::Dataset make_small_dataset(const std::string& root) {
  auto g = small_gen();
  ts::write_dataset(root, ts::generate_synthetic(g), ts::class_names_for(g.classes));
  return ts::read_dataset(root);
}

}  // namespace

TEST(RunConfig, KvRoundTripAndHash) {
  ts::RunConfig cfg;
  cfg.ase_width = 24;
  cfg.window_ds = {2, 6};
  cfg.window_ol = {2, 1};
  cfg.vfe.epochs = 7;
  cfg.seed = 99;
  auto kv = cfg.to_kv();
  auto back = ts::RunConfig::from_kv(kv);
  EXPECT_EQ(back.ase_width, 24);
  EXPECT_EQ(back.window_ds, (std::vector<long>{2, 6}));
  EXPECT_EQ(back.vfe.epochs, 7);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.config_hash(), cfg.config_hash());
  ts::RunConfig other = cfg;
  other.epochs += 1;
  EXPECT_NE(other.config_hash(), cfg.config_hash());
}

TEST(Checkpoint, ModelsRoundTripExactly) {
  const std::string dir = tmp_dir("ckpt");
  ts::RunConfig cfg = small_run();
  auto names = ts::class_names_for(6);
  ts::Models m = ts::build_models(cfg, names, 8, 42);
  ts::TrainerState st = ts::make_trainer(cfg, m);
  st.epochs_done = 3;
  st.vfe_done = false;
  const std::string path = dir + "/ck.bin";
  ts::save_fold_checkpoint(path, m, st, cfg.seed, cfg.config_hash());

  ts::Models m2 = ts::build_models(cfg, names, 8, 43);  // different init
  ts::TrainerState st2 = ts::make_trainer(cfg, m2);
  ts::load_fold_checkpoint(path, m2, st2);
  EXPECT_EQ(st2.epochs_done, 3);
  auto& pa = m.ase->store().params();
  auto& pb = m2.ase->store().params();
  ASSERT_EQ(pa.size(), pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].name, pb[i].name);
    ASSERT_EQ(0, std::memcmp(pa[i].value.data(), pb[i].value.data(),
                             sizeof(float) * static_cast<size_t>(pa[i].value.numel())));
  }
  ts::Checkpoint ck = ts::read_checkpoint(path);
  EXPECT_EQ(ck.seed, cfg.seed);
  EXPECT_EQ(ck.config_hash, cfg.config_hash());
}

TEST(Workflow, LossDecreasesOverFiveEpochs) {
  const std::string data = tmp_dir("wf_data");
  const std::string out = tmp_dir("wf_out");
  auto ds = make_small_dataset(data);
  ts::RunConfig cfg = small_run();
  auto folds = ts::make_folds(ts::wf::dataset_ids(ds), cfg.folds, cfg.seed);
  auto outcome = ts::wf::train_fold(cfg, ds, folds[0], 0, out, "all", false);
  ASSERT_EQ(outcome.segment_epochs.size(), 5u);
  const double first = outcome.segment_epochs.front().total;
  const double last = outcome.segment_epochs.back().total;
  EXPECT_LT(last, first);
  for (size_t e = 1; e < outcome.segment_epochs.size(); ++e)
    EXPECT_LT(outcome.segment_epochs[e].total, outcome.segment_epochs[e - 1].total * 1.05)
        << "epoch " << e;
}

TEST(Workflow, DeterministicArtifactsAcrossRuns) {
  const std::string data = tmp_dir("det_data");
  auto ds = make_small_dataset(data);
  ts::RunConfig cfg = small_run();
  cfg.epochs = 2;
  auto folds = ts::make_folds(ts::wf::dataset_ids(ds), cfg.folds, cfg.seed);
  const std::string out_a = tmp_dir("det_a");
  const std::string out_b = tmp_dir("det_b");
  ts::wf::train_fold(cfg, ds, folds[0], 0, out_a, "all", false);
  ts::wf::train_fold(cfg, ds, folds[0], 0, out_b, "all", false);
  EXPECT_EQ(slurp(out_a + "/fold_0/checkpoint.bin"), slurp(out_b + "/fold_0/checkpoint.bin"));
  EXPECT_EQ(slurp(out_a + "/fold_0/train_log.jsonl"), slurp(out_b + "/fold_0/train_log.jsonl"));
}

TEST(Workflow, ResumeReproducesNextEpochLoss) {
  const std::string data = tmp_dir("res_data");
  auto ds = make_small_dataset(data);
  auto cfg = small_run();
  auto folds = ts::make_folds(ts::wf::dataset_ids(ds), cfg.folds, cfg.seed);

  const std::string full = tmp_dir("res_full");
  cfg.epochs = 3;
  ts::wf::train_fold(cfg, ds, folds[0], 0, full, "all", false);

  const std::string split = tmp_dir("res_split");
  cfg.epochs = 2;
  ts::wf::train_fold(cfg, ds, folds[0], 0, split, "all", false);
  cfg.epochs = 3;
  ts::wf::train_fold(cfg, ds, folds[0], 0, split, "all", true);  // resume for epoch 2

  auto full_lines = read_lines(full + "/fold_0/train_log.jsonl");
  auto split_lines = read_lines(split + "/fold_0/train_log.jsonl");
  auto epoch_line = [](const std::vector<std::string>& lines, const std::string& tag) {
    for (auto& l : lines)
      if (l.find("\"event\":\"epoch\"") != std::string::npos && l.find(tag) != std::string::npos)
        return l;
    return std::string();
  };
  const std::string want = epoch_line(full_lines, "\"epoch\":2");
  const std::string got = epoch_line(split_lines, "\"epoch\":2");
  ASSERT_FALSE(want.empty());
  EXPECT_EQ(want, got);
  // And the final checkpoints agree bit for bit.
  EXPECT_EQ(slurp(full + "/fold_0/checkpoint.bin"), slurp(split + "/fold_0/checkpoint.bin"));
}

TEST(Workflow, InferenceWritesConsistentPredictionFiles) {
  const std::string data = tmp_dir("inf_data");
  const std::string out = tmp_dir("inf_out");
  auto ds = make_small_dataset(data);
  ts::RunConfig cfg = small_run();
  cfg.epochs = 2;
  auto folds = ts::make_folds(ts::wf::dataset_ids(ds), cfg.folds, cfg.seed);
  ts::wf::train_fold(cfg, ds, folds[0], 0, out, "all", false);

  // Empty id list: no-op.
  auto none = ts::wf::infer_fold(cfg, ds, 0, out, {});
  EXPECT_TRUE(none.empty());

  auto preds = ts::wf::infer_fold(cfg, ds, 0, out, folds[0].test_ids);
  EXPECT_EQ(preds.size(), folds[0].test_ids.size());
  for (auto& id : folds[0].test_ids) {
    const ts::VideoRecord* v = ds.find(id);
    auto raw_lines = read_lines(out + "/fold_0/pred_raw/" + id + ".txt");
    auto cal_lines = read_lines(out + "/fold_0/pred_calibrated/" + id + ".txt");
    EXPECT_EQ(static_cast<long>(raw_lines.size()), v->frames);
    EXPECT_EQ(static_cast<long>(cal_lines.size()), v->frames);
    auto raw = ts::read_label_file(out + "/fold_0/pred_raw/" + id + ".txt", ds.class_names);
    auto cal = ts::read_label_file(out + "/fold_0/pred_calibrated/" + id + ".txt", ds.class_names);
    EXPECT_LE(ts::segments_from_labels(cal).size(), ts::segments_from_labels(raw).size() +
              std::count(preds[id].boundary_probs.begin(), preds[id].boundary_probs.end(), 2.0));
    // Calibrated output is piecewise constant between selected boundaries.
    auto b = ts::select_boundaries(preds[id].boundary_probs);
    EXPECT_EQ(ts::calibrate(raw, b), cal);
  }

  // Threaded fan-out produces identical predictions.
  ts::Models models = ts::wf::load_fold_models(cfg, ds, 0, out);
  auto features = ts::prepare_features(models, cfg, ds);
  auto seq = ts::predict_videos(models, ds, features, folds[0].test_ids, 1);
  auto par = ts::predict_videos(models, ds, features, folds[0].test_ids, 4);
  for (auto& id : folds[0].test_ids) {
    EXPECT_EQ(seq[id].raw, par[id].raw);
    EXPECT_EQ(seq[id].calibrated, par[id].calibrated);
  }
}

TEST(Workflow, EvaluateGroundTruthAgainstItselfIsPerfect) {
  const std::string data = tmp_dir("ev_data");
  const std::string out = tmp_dir("ev_out");
  auto ds = make_small_dataset(data);
  ts::RunConfig cfg = small_run();
  auto folds = ts::make_folds(ts::wf::dataset_ids(ds), cfg.folds, cfg.seed);
  // Plant ground truth as predictions.
  for (auto& id : folds[0].test_ids) {
    fs::create_directories(fs::path(out) / "fold_0" / "pred_raw");
    fs::create_directories(fs::path(out) / "fold_0" / "pred_calibrated");
    const ts::VideoRecord* v = ds.find(id);
    ts::write_label_file(out + "/fold_0/pred_raw/" + id + ".txt", v->labels, ds.class_names);
    ts::write_label_file(out + "/fold_0/pred_calibrated/" + id + ".txt", v->labels,
                         ds.class_names);
  }
  auto outcome = ts::wf::evaluate_fold(ds, 0, out, folds[0].test_ids);
  EXPECT_TRUE(outcome.errors.empty());
  EXPECT_DOUBLE_EQ(outcome.calibrated.corpus.acc, 100.0);
  EXPECT_DOUBLE_EQ(outcome.calibrated.corpus.edit, 100.0);
  for (int k : {10, 25, 50}) EXPECT_DOUBLE_EQ(outcome.calibrated.corpus.f1[k], 100.0);

  // A shuffled prediction lands near chance-level accuracy.
  ts::Rng rng(5);
  const std::string vid = folds[0].test_ids[0];
  auto shuffled = ds.find(vid)->labels;
  rng.shuffle(shuffled);
  ts::write_label_file(out + "/fold_0/pred_calibrated/" + vid + ".txt", shuffled, ds.class_names);
  auto chance = ts::wf::evaluate_fold(ds, 0, out, {vid});
  EXPECT_LT(chance.calibrated.corpus.acc, 45.0);  // 6 classes, uneven durations

  // Length mismatch surfaces as a per-video error entry.
  auto truncated = ds.find(vid)->labels;
  truncated.resize(truncated.size() / 2);
  ts::write_label_file(out + "/fold_0/pred_calibrated/" + vid + ".txt", truncated, ds.class_names);
  auto bad = ts::wf::evaluate_fold(ds, 0, out, {vid});
  ASSERT_EQ(bad.errors.size(), 1u);
  EXPECT_NE(bad.errors[0].find(vid), std::string::npos);
}

#ifdef TSEG_CLI_PATH
namespace {
int run_cli(const std::string& args, std::string* out_text = nullptr) {
  const std::string out_file = (fs::temp_directory_path() / "tseg_cli_out.txt").string();
  const std::string cmd = std::string(TSEG_CLI_PATH) + " " + args + " >" + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (out_text) *out_text = slurp(out_file);
  return WEXITSTATUS(status);
}
}  // namespace

TEST(Cli, GenerateIsDeterministicAndSupportsClassOverride) {
  const std::string a = tmp_dir("cli_gen_a");
  const std::string b = tmp_dir("cli_gen_b");
  EXPECT_EQ(run_cli("generate --out " + a + " --videos 5"), 0);
  EXPECT_EQ(run_cli("generate --out " + b + " --videos 5"), 0);
  EXPECT_EQ(slurp(a + "/mapping.txt"), slurp(b + "/mapping.txt"));
  EXPECT_EQ(slurp(a + "/features/video_000.bin"), slurp(b + "/features/video_000.bin"));
  EXPECT_EQ(slurp(a + "/groundTruth/video_000.txt"), slurp(b + "/groundTruth/video_000.txt"));

  const std::string c = tmp_dir("cli_gen_c");
  EXPECT_EQ(run_cli("generate --out " + c + " --videos 4 --classes 11"), 0);
  EXPECT_EQ(read_lines(c + "/mapping.txt").size(), 11u);
}

TEST(Cli, DefaultGenerationProducesNinetyNineVideos) {
  const std::string dir = tmp_dir("cli_gen_99");
  std::string text;
  EXPECT_EQ(run_cli("generate --out " + dir, &text), 0);
  EXPECT_NE(text.find("generated 99 videos"), std::string::npos) << text;
  EXPECT_EQ(ts::list_video_ids(dir).size(), 99u);
}

TEST(Cli, ErrorsAreSingleLineAndCategorised) {
  std::string text;
  const int code = run_cli("train --data /nonexistent_dataset --out /tmp/tseg_nowhere", &text);
  EXPECT_NE(code, 0);
  EXPECT_NE(text.find("error:"), std::string::npos) << text;
}
#endif
