#pragma once

// End-to-end orchestration: per-fold feature-extractor pretraining, joint
// segmenter + boundary training, inference with calibration, and report
// writing. The CLI and the acceptance suite both drive these functions.
// Training runs in 32-bit; the op-level test suites exercise the same
// templates at 64-bit.

#include <cctype>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <memory>
#include <thread>

#include "tseg/boundary.hpp"
#include "tseg/dataset_io.hpp"
#include "tseg/losses.hpp"
#include "tseg/metrics.hpp"
#include "tseg/segmenter.hpp"
#include "tseg/vfe.hpp"

namespace tseg {

using PReal = float;  // pipeline scalar type

struct RunConfig {
  // Sampling streams (multi-rate sliding windows).
  std::vector<long> window_ds = {4, 8, 12};
  std::vector<long> window_ol = {2, 1, 1};

  VfeConfig vfe;
  bool use_vfe = true;  // false: feed raw dataset features to the segmenter
  VfeLossFlags vfe_loss;

  long ase_width = 64;
  long prc_width = 64;
  long num_decoders = 3;
  long blocks_per_stage = 9;

  double lr = 5e-4;
  double weight_decay = 1e-5;
  long epochs = 8;
  LossConfig loss;

  long folds = 4;
  long threads = 1;
  uint64_t seed = 1;

  std::vector<WindowSpec> window_specs() const {
    if (window_ds.size() != window_ol.size() || window_ds.empty())
      contract_fail("run config: window_ds and window_ol must be non-empty, equal-length lists");
    std::vector<WindowSpec> specs;
    for (size_t i = 0; i < window_ds.size(); ++i) {
      WindowSpec s{vfe.window_len, window_ds[i], window_ol[i]};
      s.validate();
      specs.push_back(s);
    }
    return specs;
  }

  static std::vector<long> parse_list(const std::string& text) {
    std::vector<long> out;
    std::string cur;
    for (char c : text + ",") {
      if (c == ',') {
        if (!cur.empty()) out.push_back(std::stol(cur));
        cur.clear();
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        cur += c;
      }
    }
    return out;
  }

  static std::string format_list(const std::vector<long>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(v[i]);
    }
    return s;
  }

  static RunConfig from_kv(const KeyValueFile& kv) {
    RunConfig c;
    if (kv.has("window_ds")) c.window_ds = parse_list(kv.get("window_ds", ""));
    if (kv.has("window_ol")) c.window_ol = parse_list(kv.get("window_ol", ""));
    c.vfe.embed_dim = kv.get_long("vfe_dim", c.vfe.embed_dim);
    c.vfe.ordinal_slots = kv.get_long("vfe_slots", c.vfe.ordinal_slots);
    c.vfe.vision_blocks = kv.get_long("vfe_vision_blocks", c.vfe.vision_blocks);
    c.vfe.text_blocks = kv.get_long("vfe_text_blocks", c.vfe.text_blocks);
    c.vfe.max_tokens = kv.get_long("vfe_max_tokens", c.vfe.max_tokens);
    c.vfe.temperature = kv.get_double("vfe_temperature", c.vfe.temperature);
    c.vfe.lr = kv.get_double("vfe_lr", c.vfe.lr);
    c.vfe.weight_decay = kv.get_double("vfe_weight_decay", c.vfe.weight_decay);
    c.vfe.batch_size = kv.get_long("vfe_batch", c.vfe.batch_size);
    c.vfe.epochs = kv.get_long("vfe_epochs", c.vfe.epochs);
    c.use_vfe = kv.get_long("use_vfe", c.use_vfe ? 1 : 0) != 0;
    c.vfe_loss.semantic = kv.get_long("vfe_loss_semantic", 1) != 0;
    c.vfe_loss.integrated = kv.get_long("vfe_loss_integrated", 1) != 0;
    c.vfe_loss.statistical = kv.get_long("vfe_loss_statistical", 1) != 0;
    c.ase_width = kv.get_long("ase_width", c.ase_width);
    c.prc_width = kv.get_long("prc_width", c.prc_width);
    c.num_decoders = kv.get_long("num_decoders", c.num_decoders);
    c.blocks_per_stage = kv.get_long("blocks_per_stage", c.blocks_per_stage);
    c.lr = kv.get_double("lr", c.lr);
    c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
    c.epochs = kv.get_long("epochs", c.epochs);
    c.loss.lambda_smooth = kv.get_double("lambda_smooth", c.loss.lambda_smooth);
    c.loss.mu_boundary = kv.get_double("mu_boundary", c.loss.mu_boundary);
    c.loss.gs_sigma = kv.get_double("gs_sigma", c.loss.gs_sigma);
    c.loss.gs_tau = kv.get_double("gs_tau", c.loss.gs_tau);
    c.loss.boundary_widen = kv.get_long("boundary_widen", c.loss.boundary_widen);
    c.folds = kv.get_long("folds", c.folds);
    c.threads = kv.get_long("threads", c.threads);
    c.seed = kv.get_u64("seed", c.seed);
    return c;
  }

  KeyValueFile to_kv() const {
    KeyValueFile kv;
    kv.set("window_ds", format_list(window_ds));
    kv.set("window_ol", format_list(window_ol));
    kv.set_long("vfe_dim", vfe.embed_dim);
    kv.set_long("vfe_slots", vfe.ordinal_slots);
    kv.set_long("vfe_vision_blocks", vfe.vision_blocks);
    kv.set_long("vfe_text_blocks", vfe.text_blocks);
    kv.set_long("vfe_max_tokens", vfe.max_tokens);
    kv.set_double("vfe_temperature", vfe.temperature);
    kv.set_double("vfe_lr", vfe.lr);
    kv.set_double("vfe_weight_decay", vfe.weight_decay);
    kv.set_long("vfe_batch", vfe.batch_size);
    kv.set_long("vfe_epochs", vfe.epochs);
    kv.set_long("use_vfe", use_vfe ? 1 : 0);
    kv.set_long("vfe_loss_semantic", vfe_loss.semantic ? 1 : 0);
    kv.set_long("vfe_loss_integrated", vfe_loss.integrated ? 1 : 0);
    kv.set_long("vfe_loss_statistical", vfe_loss.statistical ? 1 : 0);
    kv.set_long("ase_width", ase_width);
    kv.set_long("prc_width", prc_width);
    kv.set_long("num_decoders", num_decoders);
    kv.set_long("blocks_per_stage", blocks_per_stage);
    kv.set_double("lr", lr);
    kv.set_double("weight_decay", weight_decay);
    kv.set_long("epochs", epochs);
    kv.set_double("lambda_smooth", loss.lambda_smooth);
    kv.set_double("mu_boundary", loss.mu_boundary);
    kv.set_double("gs_sigma", loss.gs_sigma);
    kv.set_double("gs_tau", loss.gs_tau);
    kv.set_long("boundary_widen", loss.boundary_widen);
    kv.set_long("folds", folds);
    kv.set_long("threads", threads);
    kv.set_u64("seed", seed);
    return kv;
  }

  uint64_t config_hash() const { return to_kv().hash(); }
};

// ---------------------------------------------------------------------------
// Model bundle
// ---------------------------------------------------------------------------

struct Models {
  std::unique_ptr<Vfe<PReal>> vfe;  // absent on the raw-feature route
  std::unique_ptr<Segmenter<PReal>> ase;
  std::unique_ptr<BoundaryRegressor<PReal>> prc;
  long segment_input_dim = 0;
};

inline Models build_models(const RunConfig& cfg, const std::vector<std::string>& class_names,
                           long dataset_dim, uint64_t fold_seed) {
  Models m;
  if (cfg.use_vfe)
    m.vfe = std::make_unique<Vfe<PReal>>(cfg.vfe, class_names, dataset_dim,
                                         derive_seed(fold_seed, "vfe"));
  m.segment_input_dim = cfg.use_vfe ? cfg.vfe.embed_dim : dataset_dim;
  StackConfig ase_cfg;
  ase_cfg.num_decoders = cfg.num_decoders;
  ase_cfg.blocks_per_stage = cfg.blocks_per_stage;
  ase_cfg.width = cfg.ase_width;
  ase_cfg.out_channels = static_cast<long>(class_names.size());
  m.ase = std::make_unique<Segmenter<PReal>>(ase_cfg, m.segment_input_dim,
                                             derive_seed(fold_seed, "ase"));
  StackConfig prc_cfg = ase_cfg;
  prc_cfg.width = cfg.prc_width;
  m.prc = std::make_unique<BoundaryRegressor<PReal>>(prc_cfg, m.segment_input_dim,
                                                     derive_seed(fold_seed, "prc"));
  return m;
}

// ---------------------------------------------------------------------------
// Feature preparation
// ---------------------------------------------------------------------------

using FeatureMap = std::map<std::string, std::vector<PReal>>;

inline Tensor<PReal> feature_tensor(const std::vector<PReal>& rowmajor, long t, long d) {
  std::vector<PReal> copy = rowmajor;
  return Tensor<PReal>::from({t, d}, std::move(copy));
}

inline std::vector<PReal> raw_features(const VideoRecord& v) {
  std::vector<PReal> out(v.features.size());
  for (size_t i = 0; i < v.features.size(); ++i) out[i] = static_cast<PReal>(v.features[i]);
  return out;
}

// Frame-wise features for every video: the trained extractor when present,
// otherwise the raw dataset features.
inline FeatureMap prepare_features(const Models& m, const RunConfig& cfg, const Dataset& ds) {
  FeatureMap features;
  const auto specs = cfg.window_specs();
  for (auto& v : ds.videos)
    features[v.id] = m.vfe ? m.vfe->extract_features(v, specs) : raw_features(v);
  return features;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

struct TrainerState {
  std::unique_ptr<AdamW<PReal>> ase_opt;
  std::unique_ptr<AdamW<PReal>> prc_opt;
  long epochs_done = 0;
  bool vfe_done = false;
};

inline void save_fold_checkpoint(const std::string& path, const Models& m, const TrainerState& st,
                                 uint64_t seed, uint64_t config_hash) {
  Checkpoint ck;
  ck.seed = seed;
  ck.config_hash = config_hash;
  if (m.vfe) append_model_entries(ck, "vfe.", m.vfe->store());
  append_model_entries(ck, "ase.", m.ase->store(), st.ase_opt.get());
  append_model_entries(ck, "prc.", m.prc->store(), st.prc_opt.get());
  ck.entries.push_back({"meta.epochs_done", {1}, {static_cast<float>(st.epochs_done)}});
  ck.entries.push_back({"meta.vfe_done", {1}, {st.vfe_done ? 1.f : 0.f}});
  write_checkpoint(path, ck);
}

inline void load_fold_checkpoint(const std::string& path, Models& m, TrainerState& st) {
  Checkpoint ck = read_checkpoint(path);
  if (m.vfe) restore_model_entries(ck, "vfe.", m.vfe->store());
  restore_model_entries(ck, "ase.", m.ase->store(), st.ase_opt.get());
  restore_model_entries(ck, "prc.", m.prc->store(), st.prc_opt.get());
  if (const CheckpointEntry* e = ck.find("meta.epochs_done"))
    st.epochs_done = static_cast<long>(e->data.at(0));
  if (const CheckpointEntry* e = ck.find("meta.vfe_done")) st.vfe_done = e->data.at(0) != 0.f;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochCallback {
  // Called once per segment-training epoch with the mean per-video report.
  std::function<void(long epoch, const LossReport&)> on_epoch;
};

inline TrainerState make_trainer(const RunConfig& cfg, Models& m) {
  TrainerState st;
  typename AdamW<PReal>::Config ocfg;
  ocfg.lr = static_cast<PReal>(cfg.lr);
  ocfg.weight_decay = static_cast<PReal>(cfg.weight_decay);
  st.ase_opt = std::make_unique<AdamW<PReal>>(m.ase->store(), ocfg);
  st.prc_opt = std::make_unique<AdamW<PReal>>(m.prc->store(), ocfg);
  return st;
}

inline std::vector<const VideoRecord*> select_videos(const Dataset& ds,
                                                     const std::vector<std::string>& ids) {
  std::vector<const VideoRecord*> out;
  for (auto& id : ids) {
    const VideoRecord* v = ds.find(id);
    if (!v) throw std::runtime_error("unknown video id: " + id);
    out.push_back(v);
  }
  return out;
}

inline std::vector<double> train_vfe_phase(Models& m, const RunConfig& cfg, const Dataset& ds,
                                           const std::vector<std::string>& train_ids,
                                           uint64_t fold_seed) {
  if (!m.vfe) return {};
  auto report = m.vfe->train(select_videos(ds, train_ids), cfg.window_specs(),
                             derive_seed(fold_seed, "vfe_train"), cfg.vfe_loss);
  return report.epoch_losses;
}

// One pass of joint segment + boundary training, one video per step.
inline std::vector<LossReport> train_segment_phase(Models& m, TrainerState& st,
                                                   const RunConfig& cfg, const Dataset& ds,
                                                   const std::vector<std::string>& train_ids,
                                                   const FeatureMap& features, uint64_t fold_seed,
                                                   long epochs_target,
                                                   const EpochCallback& cb = {}) {
  const long num_classes = static_cast<long>(ds.class_names.size());
  std::vector<const LabelSequence*> train_labels;
  long total_frames = 0, positive_frames = 0;
  for (auto* v : select_videos(ds, train_ids)) {
    train_labels.push_back(&v->labels);
    total_frames += v->frames;
    positive_frames += static_cast<long>(segments_from_labels(v->labels).size());
  }
  const auto class_weights = median_frequency_weights<PReal>(train_labels, num_classes);
  const double w_p =
      positive_frames > 0 ? static_cast<double>(total_frames) / positive_frames : 1.0;

  std::vector<LossReport> epoch_reports;
  std::vector<std::string> order = train_ids;
  for (long epoch = st.epochs_done; epoch < epochs_target; ++epoch) {
    Rng rng(derive_seed(fold_seed, "segment_epoch_" + std::to_string(epoch)));
    rng.shuffle(order);
    LossReport mean;
    long steps = 0;
    for (auto& id : order) {
      const VideoRecord* v = ds.find(id);
      const auto& feat = features.at(id);
      const long d = static_cast<long>(feat.size()) / v->frames;
      Tape<PReal> tape;
      auto x = feature_tensor(feat, v->frames, d);
      auto seg_stages = m.ase->forward(x);
      std::vector<Tensor<PReal>> prc_probs;
      for (auto& logits : m.prc->forward_logits(x)) prc_probs.push_back(sigmoid(logits));
      const auto bgt = boundary_ground_truth(v->labels, cfg.loss.boundary_widen);
      LossReport report;
      auto loss = total_loss(seg_stages, prc_probs, v->labels, class_weights, x, bgt, w_p,
                             cfg.loss, &report);
      if (!std::isfinite(report.total))
        throw std::runtime_error("training produced a non-finite loss at epoch " +
                                 std::to_string(epoch) + ", video " + id);
      tape.backward(loss);
      st.ase_opt->step();
      st.prc_opt->step();
      mean.total += report.total;
      mean.action_segmentation += report.action_segmentation;
      mean.boundary += report.boundary;
      if (mean.stage_classification.empty()) {
        mean.stage_classification = report.stage_classification;
        mean.stage_smoothing = report.stage_smoothing;
        mean.stage_boundary = report.stage_boundary;
      } else {
        for (size_t i = 0; i < report.stage_classification.size(); ++i) {
          mean.stage_classification[i] += report.stage_classification[i];
          mean.stage_smoothing[i] += report.stage_smoothing[i];
        }
        for (size_t i = 0; i < report.stage_boundary.size(); ++i)
          mean.stage_boundary[i] += report.stage_boundary[i];
      }
      ++steps;
    }
    if (steps > 0) {
      mean.total /= steps;
      mean.action_segmentation /= steps;
      mean.boundary /= steps;
      for (auto& v2 : mean.stage_classification) v2 /= steps;
      for (auto& v2 : mean.stage_smoothing) v2 /= steps;
      for (auto& v2 : mean.stage_boundary) v2 /= steps;
    }
    st.epochs_done = epoch + 1;
    if (cb.on_epoch) cb.on_epoch(epoch, mean);
    epoch_reports.push_back(std::move(mean));
  }
  return epoch_reports;
}

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

struct VideoPrediction {
  LabelSequence raw;         // argmax of the segmenter's final stage
  LabelSequence calibrated;  // boundary-refined prediction
  std::vector<double> boundary_probs;
};

inline VideoPrediction predict_video(const Models& m, const std::vector<PReal>& feat, long frames) {
  const long d = static_cast<long>(feat.size()) / frames;
  auto x = feature_tensor(feat, frames, d);
  VideoPrediction out;
  out.raw = m.ase->predict(x);
  out.boundary_probs = m.prc->probabilities(x);
  out.calibrated = calibrate(out.raw, select_boundaries(out.boundary_probs));
  return out;
}

// Deterministic fan-out over videos: results land in input order regardless
// of the number of worker threads.
inline std::map<std::string, VideoPrediction> predict_videos(const Models& m, const Dataset& ds,
                                                             const FeatureMap& features,
                                                             const std::vector<std::string>& ids,
                                                             long threads) {
  std::vector<VideoPrediction> results(ids.size());
  auto worker = [&](size_t begin, size_t step) {
    for (size_t i = begin; i < ids.size(); i += step) {
      const VideoRecord* v = ds.find(ids[i]);
      if (!v) throw std::runtime_error("unknown video id: " + ids[i]);
      results[i] = predict_video(m, features.at(ids[i]), v->frames);
    }
  };
  const long n = std::max<long>(1, std::min<long>(threads, static_cast<long>(ids.size())));
  if (n == 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (long w = 0; w < n; ++w) pool.emplace_back(worker, static_cast<size_t>(w), static_cast<size_t>(n));
    for (auto& t : pool) t.join();
  }
  std::map<std::string, VideoPrediction> out;
  for (size_t i = 0; i < ids.size(); ++i) out[ids[i]] = std::move(results[i]);
  return out;
}

inline EvalReport evaluate_predictions(const Dataset& ds,
                                       const std::map<std::string, LabelSequence>& preds) {
  std::vector<std::pair<LabelSequence, LabelSequence>> pairs;
  std::vector<std::string> ids;
  for (auto& [id, pred] : preds) {
    const VideoRecord* v = ds.find(id);
    if (!v) throw std::runtime_error("unknown video id: " + id);
    pairs.push_back({pred, v->labels});
    ids.push_back(id);
  }
  return evaluate_corpus(pairs, ids);
}

}  // namespace tseg
