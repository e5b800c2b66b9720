#pragma once

// Disk-level workflow shared by the CLI and the acceptance suite: fold
// training with checkpoints and JSON-lines logs, inference to prediction
// files, and report generation. Every artifact records the seed and the
// config hash; nothing time-dependent is written, so identical inputs
// reproduce identical bytes.

#include <iostream>

#include "tseg/pipeline.hpp"

namespace tseg {

namespace wf {

inline std::string fold_dir(const std::string& out, long fold) {
  return (fs::path(out) / ("fold_" + std::to_string(fold))).string();
}

inline std::string hex64(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void write_manifest(const RunConfig& cfg, const std::string& out) {
  fs::create_directories(out);
  KeyValueFile manifest;
  manifest.set_u64("seed", cfg.seed);
  manifest.set("config_hash", hex64(cfg.config_hash()));
  manifest.set_long("folds", cfg.folds);
  manifest.write_file((fs::path(out) / "manifest.txt").string());
  cfg.to_kv().write_file((fs::path(out) / "run_config.txt").string());
}

inline std::vector<long> fold_selection(const RunConfig& cfg, long fold) {
  if (fold >= cfg.folds)
    contract_fail("fold " + std::to_string(fold) + " out of range for " +
                  std::to_string(cfg.folds) + " folds");
  std::vector<long> out;
  if (fold >= 0) {
    out.push_back(fold);
  } else {
    for (long k = 0; k < cfg.folds; ++k) out.push_back(k);
  }
  return out;
}

inline std::vector<std::string> dataset_ids(const Dataset& ds) {
  std::vector<std::string> ids;
  for (auto& v : ds.videos) ids.push_back(v.id);
  return ids;
}

struct TrainOutcome {
  std::vector<double> vfe_epoch_losses;
  std::vector<LossReport> segment_epochs;
};

// Trains one fold and leaves checkpoint, extracted features and the
// JSON-lines log under <out>/fold_<k>/. stage: "all", "vfe" or "segment".
inline TrainOutcome train_fold(const RunConfig& cfg, const Dataset& ds, const Fold& fold,
                               long fold_index, const std::string& out, const std::string& stage,
                               bool resume, std::ostream* progress = nullptr) {
  if (stage != "all" && stage != "vfe" && stage != "segment")
    contract_fail("train stage must be all, vfe or segment, got: " + stage);
  const std::string fdir = fold_dir(out, fold_index);
  fs::create_directories(fdir);
  const std::string ckpt_path = (fs::path(fdir) / "checkpoint.bin").string();
  const std::string log_path = (fs::path(fdir) / "train_log.jsonl").string();
  const uint64_t fold_seed = derive_seed(cfg.seed, "fold_" + std::to_string(fold_index));

  Models models = build_models(cfg, ds.class_names, ds.videos.at(0).feature_dim, fold_seed);
  TrainerState state = make_trainer(cfg, models);
  if (resume) {
    if (!fs::exists(ckpt_path)) throw std::runtime_error("cannot open checkpoint: " + ckpt_path);
    load_fold_checkpoint(ckpt_path, models, state);
  }

  std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write training log: " + log_path);
  log << "{\"event\":\"config\",\"fold\":" << fold_index << ",\"seed\":" << cfg.seed
      << ",\"config_hash\":\"" << hex64(cfg.config_hash()) << "\"}\n";

  TrainOutcome outcome;
  const bool want_vfe = cfg.use_vfe && (stage == "all" || stage == "vfe");
  if (want_vfe && !state.vfe_done) {
    outcome.vfe_epoch_losses = train_vfe_phase(models, cfg, ds, fold.train_ids, fold_seed);
    state.vfe_done = true;
    for (size_t e = 0; e < outcome.vfe_epoch_losses.size(); ++e) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "%.17g", outcome.vfe_epoch_losses[e]);
      log << "{\"event\":\"vfe_epoch\",\"fold\":" << fold_index << ",\"epoch\":" << e
          << ",\"loss\":" << buf << "}\n";
      if (progress)
        *progress << "fold " << fold_index << " vfe epoch " << e << " loss " << buf << "\n";
    }
  }
  if (stage == "vfe") {
    save_fold_checkpoint(ckpt_path, models, state, cfg.seed, cfg.config_hash());
    return outcome;
  }

  FeatureMap features = prepare_features(models, cfg, ds);
  if (models.vfe) {
    const std::string feat_dir = (fs::path(fdir) / "features").string();
    fs::create_directories(feat_dir);
    for (auto& v : ds.videos)
      write_features((fs::path(feat_dir) / (v.id + ".bin")).string(), v.frames,
                     models.vfe->feature_dim(), features.at(v.id));
  }

  EpochCallback cb;
  cb.on_epoch = [&](long epoch, const LossReport& mean) {
    std::string body = mean.to_json();
    body.erase(0, 1);  // merge into the event object
    log << "{\"event\":\"epoch\",\"fold\":" << fold_index << ",\"epoch\":" << epoch << ","
        << body << "\n";
    log.flush();
    if (progress)
      *progress << "fold " << fold_index << " epoch " << epoch << " total " << mean.total << "\n";
  };
  outcome.segment_epochs = train_segment_phase(models, state, cfg, ds, fold.train_ids, features,
                                               fold_seed, cfg.epochs, cb);
  save_fold_checkpoint(ckpt_path, models, state, cfg.seed, cfg.config_hash());
  return outcome;
}

// Rebuilds the models of a trained fold from its checkpoint.
inline Models load_fold_models(const RunConfig& cfg, const Dataset& ds, long fold_index,
                               const std::string& out) {
  const uint64_t fold_seed = derive_seed(cfg.seed, "fold_" + std::to_string(fold_index));
  Models models = build_models(cfg, ds.class_names, ds.videos.at(0).feature_dim, fold_seed);
  TrainerState state = make_trainer(cfg, models);
  const std::string ckpt_path = (fs::path(fold_dir(out, fold_index)) / "checkpoint.bin").string();
  if (!fs::exists(ckpt_path)) throw std::runtime_error("cannot open checkpoint: " + ckpt_path);
  load_fold_checkpoint(ckpt_path, models, state);
  return models;
}

// Writes raw and calibrated prediction files for the given ids. An empty id
// list is a no-op.
inline std::map<std::string, VideoPrediction> infer_fold(const RunConfig& cfg, const Dataset& ds,
                                                         long fold_index, const std::string& out,
                                                         const std::vector<std::string>& ids) {
  if (ids.empty()) return {};
  Models models = load_fold_models(cfg, ds, fold_index, out);
  FeatureMap features = prepare_features(models, cfg, ds);
  auto preds = predict_videos(models, ds, features, ids, cfg.threads);
  const std::string fdir = fold_dir(out, fold_index);
  fs::create_directories(fs::path(fdir) / "pred_raw");
  fs::create_directories(fs::path(fdir) / "pred_calibrated");
  for (auto& [id, p] : preds) {
    write_label_file((fs::path(fdir) / "pred_raw" / (id + ".txt")).string(), p.raw,
                     ds.class_names);
    write_label_file((fs::path(fdir) / "pred_calibrated" / (id + ".txt")).string(), p.calibrated,
                     ds.class_names);
  }
  return preds;
}

struct EvaluateOutcome {
  EvalReport calibrated;
  EvalReport raw;
  std::vector<std::string> errors;  // per-video error entries
};

// Evaluates the prediction files of one fold against ground truth.
inline EvaluateOutcome evaluate_fold(const Dataset& ds, long fold_index, const std::string& out,
                                     const std::vector<std::string>& ids) {
  EvaluateOutcome outcome;
  std::vector<std::pair<LabelSequence, LabelSequence>> cal_pairs, raw_pairs;
  std::vector<std::string> ok_ids;
  const std::string fdir = fold_dir(out, fold_index);
  for (auto& id : ids) {
    const VideoRecord* v = ds.find(id);
    if (!v) {
      outcome.errors.push_back(id + ": unknown video id");
      continue;
    }
    try {
      auto cal = read_label_file((fs::path(fdir) / "pred_calibrated" / (id + ".txt")).string(),
                                 ds.class_names);
      auto raw =
          read_label_file((fs::path(fdir) / "pred_raw" / (id + ".txt")).string(), ds.class_names);
      if (cal.size() != v->labels.size() || raw.size() != v->labels.size()) {
        outcome.errors.push_back(id + ": prediction length " + std::to_string(cal.size()) +
                                 " does not match ground truth " +
                                 std::to_string(v->labels.size()));
        continue;
      }
      cal_pairs.push_back({std::move(cal), v->labels});
      raw_pairs.push_back({std::move(raw), v->labels});
      ok_ids.push_back(id);
    } catch (const std::exception& e) {
      outcome.errors.push_back(id + ": " + e.what());
    }
  }
  if (!cal_pairs.empty()) {
    outcome.calibrated = evaluate_corpus(cal_pairs, ok_ids);
    outcome.raw = evaluate_corpus(raw_pairs, ok_ids);
  }
  return outcome;
}

inline void write_fold_report(const EvaluateOutcome& outcome, const RunConfig& cfg,
                              long fold_index, const std::string& out) {
  const std::string fdir = fold_dir(out, fold_index);
  fs::create_directories(fdir);
  std::ofstream js((fs::path(fdir) / "report.json").string());
  js << "{\"seed\":" << cfg.seed << ",\"config_hash\":\"" << hex64(cfg.config_hash())
     << "\",\"fold\":" << fold_index << ",\"calibrated\":" << eval_report_json(outcome.calibrated)
     << ",\"raw\":" << eval_report_json(outcome.raw) << ",\"errors\":[";
  for (size_t i = 0; i < outcome.errors.size(); ++i) {
    if (i) js << ",";
    js << "\"" << outcome.errors[i] << "\"";
  }
  js << "]}\n";
  std::ofstream tb((fs::path(fdir) / "report.txt").string());
  tb << eval_report_table(outcome.calibrated);
}

}  // namespace wf

}  // namespace tseg
