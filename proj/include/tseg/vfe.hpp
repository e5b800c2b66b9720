#pragma once

// Prompt-supervised feature extractor: a small vision transformer over clip
// frame tokens plus ordinal-slot and count tokens, a word-level text
// transformer, and the contrastive objective tying them together. Trained
// first, then frozen to emit frame-wise features for the segmenter.

#include <map>
#include <string>
#include <vector>

#include "tseg/data.hpp"
#include "tseg/nn.hpp"
#include "tseg/prompts.hpp"

namespace tseg {

struct VfeConfig {
  long embed_dim = 32;     // D, also the extracted feature width
  long ordinal_slots = 4;  // K, upper bound of per-clip ordinal positions
  long vision_blocks = 2;
  long text_blocks = 2;
  long max_tokens = 256;
  double temperature = 0.07;
  long window_len = 16;
  double lr = 5e-4;
  double weight_decay = 1e-5;
  long batch_size = 16;
  long epochs = 3;
};

struct VfeLossFlags {
  bool semantic = true;
  bool integrated = true;
  bool statistical = true;
};

// ---------------------------------------------------------------------------
// Similarity and the contrastive loss
// ---------------------------------------------------------------------------

// Plain cosine similarity; contract error on zero vectors.
template <class Real>
double cosine(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.numel() != b.numel())
    contract_fail("cosine: dimension mismatch " + shape_str(a.shape()) + " vs " +
                  shape_str(b.shape()));
  double dot = 0, na = 0, nb = 0;
  for (long i = 0; i < a.numel(); ++i) {
    dot += static_cast<double>(a.data()[i]) * b.data()[i];
    na += static_cast<double>(a.data()[i]) * a.data()[i];
    nb += static_cast<double>(b.data()[i]) * b.data()[i];
  }
  if (na == 0 || nb == 0) contract_fail("cosine: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Pairwise cosine matrix: entry (i,j) = cos(zc_i, zt_j). Differentiable.
template <class Real>
Tensor<Real> batch_similarity(const Tensor<Real>& zc, const Tensor<Real>& zt) {
  if (zc.rank() != 2 || zt.rank() != 2 || zc.rows() != zt.rows() || zc.cols() != zt.cols())
    contract_fail("batch_similarity: batch mismatch " + shape_str(zc.shape()) + " vs " +
                  shape_str(zt.shape()));
  for (long i = 0; i < zc.rows(); ++i) {
    double na = 0, nb = 0;
    for (long j = 0; j < zc.cols(); ++j) {
      na += static_cast<double>(zc.at(i, j)) * zc.at(i, j);
      nb += static_cast<double>(zt.at(i, j)) * zt.at(i, j);
    }
    if (na == 0 || nb == 0) contract_fail("batch_similarity: zero row " + std::to_string(i));
  }
  auto row_normalize = [](const Tensor<Real>& z) {
    auto norms = sqrt_op(sum_axis1(mul(z, z)));
    return mul_colvec(z, reciprocal(norms));
  };
  return matmul(row_normalize(zc), transpose(row_normalize(zt)));
}

namespace detail {

// One direction of the loss: mean over rows of KL(normalized GT row ||
// temperature-softmaxed similarity row), with the 0*log(0) = 0 convention.
template <class Real>
Tensor<Real> kl_direction(const Tensor<Real>& sim, const std::vector<Real>& gt, double temperature) {
  const long b = sim.rows();
  std::vector<Real> what(static_cast<size_t>(b * b));
  double entropy = 0;  // sum of ghat * log ghat
  for (long i = 0; i < b; ++i) {
    double rowsum = 0;
    for (long j = 0; j < b; ++j) rowsum += static_cast<double>(gt[static_cast<size_t>(i * b + j)]);
    if (rowsum <= 0)
      contract_fail("kl_contrastive_loss: GT row " + std::to_string(i) + " is all zero");
    for (long j = 0; j < b; ++j) {
      const double g = static_cast<double>(gt[static_cast<size_t>(i * b + j)]) / rowsum;
      what[static_cast<size_t>(i * b + j)] = static_cast<Real>(g);
      if (g > 0) entropy += g * std::log(g);
    }
  }
  auto weights = Tensor<Real>::from({b, b}, std::move(what));
  auto logp = log_softmax_rows(mul_scalar(sim, static_cast<Real>(1.0 / temperature)));
  auto cross = mul_scalar(sum_all(mul(weights, logp)), static_cast<Real>(-1.0 / b));
  return add_scalar(cross, static_cast<Real>(entropy / b));
}

}  // namespace detail

// 0.5 * [D(S_C || GT) + D(S_T || GT)] where each D normalizes similarity
// rows with a temperature-scaled exponential map and GT rows by their sums,
// then takes the row-mean KL in the finite direction KL(GT-row || sim-row).
// Non-negative; zero iff the normalized rows coincide.
template <class Real>
Tensor<Real> kl_contrastive_loss(const Tensor<Real>& s_c, const Tensor<Real>& s_t,
                                 const std::vector<Real>& gt, double temperature = 0.07) {
  if (s_c.rank() != 2 || s_c.rows() != s_c.cols())
    contract_fail("kl_contrastive_loss: similarity must be square, got " + shape_str(s_c.shape()));
  if (s_t.shape() != s_c.shape())
    contract_fail("kl_contrastive_loss: direction shapes differ: " + shape_str(s_c.shape()) +
                  " vs " + shape_str(s_t.shape()));
  if (static_cast<long>(gt.size()) != s_c.numel())
    contract_fail("kl_contrastive_loss: GT size mismatch");
  auto d_c = detail::kl_direction(s_c, gt, temperature);
  auto d_t = detail::kl_direction(s_t, gt, temperature);
  return mul_scalar(add(d_c, d_t), Real(0.5));
}

// ---------------------------------------------------------------------------
// Encoders
// ---------------------------------------------------------------------------

template <class Real>
struct TransformerBlock {
  LayerNorm<Real> ln1, ln2;
  Linear<Real> wq, wk, wv, wo, mlp_in, mlp_out;

  TransformerBlock() = default;
  TransformerBlock(ParamStore<Real>& ps, const std::string& name, long d)
      : ln1(ps, name + ".ln1", d),
        ln2(ps, name + ".ln2", d),
        wq(ps, name + ".wq", d, d),
        wk(ps, name + ".wk", d, d),
        wv(ps, name + ".wv", d, d),
        wo(ps, name + ".wo", d, d),
        mlp_in(ps, name + ".mlp_in", d, 2 * d),
        mlp_out(ps, name + ".mlp_out", 2 * d, d) {}

  Tensor<Real> forward(const Tensor<Real>& x) const {
    auto h = ln1.forward(x);
    auto att = windowed_attention(wq.forward(h), wk.forward(h), wv.forward(h), x.rows());
    auto y = add(x, wo.forward(att));
    auto m = mlp_out.forward(relu(mlp_in.forward(ln2.forward(y))));
    return add(y, m);
  }
};

template <class Real>
struct VisionOutput {
  Tensor<Real> frames;    // window_len x D
  Tensor<Real> ordinals;  // K x D, ordinal slot embeddings
  Tensor<Real> count;     // 1 x D, count-token embedding
};

template <class Real>
class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(ParamStore<Real>& ps, const VfeConfig& cfg, long input_dim)
      : cfg_(cfg),
        in_proj_(ps, "vision.in_proj", input_dim, cfg.embed_dim),
        ordinal_tokens_(ps.uniform_init("vision.ordinal_tokens", {cfg.ordinal_slots, cfg.embed_dim},
                                        cfg.embed_dim)),
        count_token_(ps.uniform_init("vision.count_token", {1, cfg.embed_dim}, cfg.embed_dim)),
        pos_(ps.uniform_init("vision.pos",
                             {cfg.window_len + cfg.ordinal_slots + 1, cfg.embed_dim},
                             cfg.embed_dim)),
        ln_out_(ps, "vision.ln_out", cfg.embed_dim) {
    for (long b = 0; b < cfg.vision_blocks; ++b)
      blocks_.emplace_back(ps, "vision.block" + std::to_string(b), cfg.embed_dim);
  }

  // clip_features: window_len x input_dim. ordinal_inject, when defined, is a
  // K x D matrix added to the ordinal query tokens (text-side fusion).
  VisionOutput<Real> forward(const Tensor<Real>& clip_features,
                             const Tensor<Real>& ordinal_inject = {}) const {
    if (clip_features.rows() != cfg_.window_len)
      contract_fail("vision encoder: expected " + std::to_string(cfg_.window_len) +
                    " frames, got " + shape_str(clip_features.shape()));
    auto ord = ordinal_inject.defined() ? add(ordinal_tokens_, ordinal_inject) : ordinal_tokens_;
    auto tokens = concat_rows(
        std::vector<Tensor<Real>>{in_proj_.forward(clip_features), ord, count_token_});
    auto x = add(tokens, pos_);
    for (auto& b : blocks_) x = b.forward(x);
    x = ln_out_.forward(x);
    VisionOutput<Real> out;
    out.frames = slice_rows(x, 0, cfg_.window_len);
    out.ordinals = slice_rows(x, cfg_.window_len, cfg_.window_len + cfg_.ordinal_slots);
    out.count = slice_rows(x, cfg_.window_len + cfg_.ordinal_slots,
                           cfg_.window_len + cfg_.ordinal_slots + 1);
    return out;
  }

  // The input-layer projection alone, used as the fallback embedding for
  // frames not covered by any window.
  Tensor<Real> project_input(const Tensor<Real>& rows) const { return in_proj_.forward(rows); }

 private:
  VfeConfig cfg_;
  Linear<Real> in_proj_;
  Tensor<Real> ordinal_tokens_, count_token_, pos_;
  std::vector<TransformerBlock<Real>> blocks_;
  LayerNorm<Real> ln_out_;
};

template <class Real>
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParamStore<Real>& ps, const VfeConfig& cfg, long vocab)
      : cfg_(cfg),
        table_(ps.uniform_init("text.embedding", {vocab, cfg.embed_dim}, cfg.embed_dim)),
        pos_(ps.uniform_init("text.pos", {cfg.max_tokens, cfg.embed_dim}, cfg.embed_dim)),
        ln_out_(ps, "text.ln_out", cfg.embed_dim) {
    for (long b = 0; b < cfg.text_blocks; ++b)
      blocks_.emplace_back(ps, "text.block" + std::to_string(b), cfg.embed_dim);
  }

  // Mean-pooled embedding of a token sequence: 1 x D.
  Tensor<Real> forward(const std::vector<long>& ids) const {
    if (ids.empty()) contract_fail("text encoder: empty token sequence");
    std::vector<long> clipped = ids;
    if (static_cast<long>(clipped.size()) > cfg_.max_tokens)
      clipped.resize(static_cast<size_t>(cfg_.max_tokens));
    auto x = embedding(table_, clipped);
    x = add(x, slice_rows(pos_, 0, static_cast<long>(clipped.size())));
    for (auto& b : blocks_) x = b.forward(x);
    x = ln_out_.forward(x);
    return reshape(mean_axis0(x), {1, cfg_.embed_dim});
  }

 private:
  VfeConfig cfg_;
  Tensor<Real> table_, pos_;
  std::vector<TransformerBlock<Real>> blocks_;
  LayerNorm<Real> ln_out_;
};

// ---------------------------------------------------------------------------
// Batch loss
// ---------------------------------------------------------------------------

template <class Real>
struct ClipBatchItem {
  Tensor<Real> ordinal_outputs;             // K x D
  Tensor<Real> count_output;                // 1 x D
  long action_count = 0;
  std::vector<Tensor<Real>> semantic_text;  // one 1 x D entry per engaged position
  Tensor<Real> integrated_text;             // 1 x D
  Tensor<Real> statistical_text;            // 1 x D
};

// Sum over ordinal positions of the semantic contrastive loss, plus the
// integrated and statistical terms. Each term pairs the batch of visual
// embeddings with the matching prompt embeddings under an identity GT.
template <class Real>
Tensor<Real> vfe_total_loss(const std::vector<ClipBatchItem<Real>>& batch, double temperature,
                            const VfeLossFlags& flags = {}) {
  if (batch.empty()) contract_fail("vfe_total_loss: empty batch");
  const long k = batch[0].ordinal_outputs.rows();
  for (auto& item : batch) {
    if (item.action_count < 1) contract_fail("vfe_total_loss: clip without actions");
    const long engaged = std::min<long>(item.action_count, k);
    if (static_cast<long>(item.semantic_text.size()) < engaged)
      contract_fail("vfe_total_loss: missing semantic prompt embeddings");
    if (!item.integrated_text.defined())
      contract_fail("vfe_total_loss: missing integrated prompt embedding");
    if (!item.statistical_text.defined())
      contract_fail("vfe_total_loss: missing statistical prompt embedding");
  }
  auto pair_loss = [&](const Tensor<Real>& zc, const Tensor<Real>& zt) {
    const long b = zc.rows();
    std::vector<Real> gt(static_cast<size_t>(b * b), Real(0));
    for (long i = 0; i < b; ++i) gt[static_cast<size_t>(i * b + i)] = Real(1);
    auto s_c = batch_similarity(zc, zt);
    auto s_t = batch_similarity(zt, zc);
    return kl_contrastive_loss(s_c, s_t, gt, temperature);
  };
  Tensor<Real> total = Tensor<Real>::scalar(Real(0));
  if (flags.semantic) {
    for (long pos = 0; pos < k; ++pos) {
      std::vector<Tensor<Real>> zc_rows, zt_rows;
      for (auto& item : batch) {
        if (std::min<long>(item.action_count, k) <= pos) continue;
        zc_rows.push_back(slice_rows(item.ordinal_outputs, pos, pos + 1));
        zt_rows.push_back(item.semantic_text[static_cast<size_t>(pos)]);
      }
      if (zc_rows.empty()) continue;
      total = add(total, pair_loss(concat_rows(zc_rows), concat_rows(zt_rows)));
    }
  }
  if (flags.integrated) {
    std::vector<Tensor<Real>> zc_rows, zt_rows;
    for (auto& item : batch) {
      const long engaged = std::min<long>(item.action_count, k);
      zc_rows.push_back(reshape(mean_axis0(slice_rows(item.ordinal_outputs, 0, engaged)),
                                {1, item.ordinal_outputs.cols()}));
      zt_rows.push_back(item.integrated_text);
    }
    total = add(total, pair_loss(concat_rows(zc_rows), concat_rows(zt_rows)));
  }
  if (flags.statistical) {
    std::vector<Tensor<Real>> zc_rows, zt_rows;
    for (auto& item : batch) {
      zc_rows.push_back(item.count_output);
      zt_rows.push_back(item.statistical_text);
    }
    total = add(total, pair_loss(concat_rows(zc_rows), concat_rows(zt_rows)));
  }
  return total;
}

// ---------------------------------------------------------------------------
// The module: encoders + training + frame-wise feature extraction
// ---------------------------------------------------------------------------

template <class Real>
class Vfe {
 public:
  Vfe(const VfeConfig& cfg, const std::vector<std::string>& class_names, long input_dim,
      uint64_t seed)
      : cfg_(cfg),
        class_names_(class_names),
        input_dim_(input_dim),
        tokenizer_(class_names, cfg.window_len),
        store_(derive_seed(seed, "vfe_params")),
        vision_(store_, cfg, input_dim),
        text_(store_, cfg, tokenizer_.vocab_size()) {}

  const VfeConfig& config() const { return cfg_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  ParamStore<Real>& store() { return store_; }
  const ParamStore<Real>& store() const { return store_; }
  long feature_dim() const { return cfg_.embed_dim; }

  Tensor<Real> encode_text(const std::string& text) const {
    return text_.forward(tokenizer_.encode(text));
  }

  // K x D matrix of ordinal prompt embeddings, added to the ordinal query
  // tokens inside the vision encoder.
  Tensor<Real> ordinal_injection() const {
    std::vector<Tensor<Real>> rows;
    for (long i = 0; i < cfg_.ordinal_slots; ++i)
      rows.push_back(encode_text(render_ordinal_prompt(i + 1)));
    return concat_rows(rows);
  }

  VisionOutput<Real> encode_clip(const Tensor<Real>& clip_features,
                                 const Tensor<Real>& ordinal_inject) const {
    return vision_.forward(clip_features, ordinal_inject);
  }

  Tensor<Real> clip_feature_matrix(const VideoRecord& video, const Clip& clip) const {
    std::vector<Real> data;
    data.reserve(static_cast<size_t>(cfg_.window_len * input_dim_));
    for (long idx : clip.frame_indices)
      for (long d = 0; d < input_dim_; ++d)
        data.push_back(static_cast<Real>(video.features[static_cast<size_t>(idx * input_dim_ + d)]));
    return Tensor<Real>::from({cfg_.window_len, input_dim_}, std::move(data));
  }

  struct TrainReport {
    std::vector<double> epoch_losses;
    long clips = 0;
  };

  TrainReport train(const std::vector<const VideoRecord*>& videos,
                    const std::vector<WindowSpec>& specs, uint64_t seed,
                    const VfeLossFlags& flags = {}) {
    struct Example {
      const VideoRecord* video;
      Clip clip;
    };
    std::vector<Example> examples;
    for (auto* v : videos)
      for (auto& spec : specs)
        for (auto& clip : sample_windows(*v, spec).clips) examples.push_back({v, clip});
    if (examples.empty()) contract_fail("vfe train: no clips sampled");
    typename AdamW<Real>::Config ocfg;
    ocfg.lr = static_cast<Real>(cfg_.lr);
    ocfg.weight_decay = static_cast<Real>(cfg_.weight_decay);
    AdamW<Real> opt(store_, ocfg);
    TrainReport report;
    report.clips = static_cast<long>(examples.size());
    std::vector<size_t> order(examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (long epoch = 0; epoch < cfg_.epochs; ++epoch) {
      Rng shuffle_rng(derive_seed(seed, "vfe_epoch_" + std::to_string(epoch)));
      shuffle_rng.shuffle(order);
      double epoch_loss = 0;
      long steps = 0;
      for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg_.batch_size)) {
        const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg_.batch_size));
        Tape<Real> tape;
        // Encode each distinct prompt once per step.
        std::map<std::string, Tensor<Real>> text_cache;
        auto cached_text = [&](const std::string& text) {
          auto it = text_cache.find(text);
          if (it != text_cache.end()) return it->second;
          auto emb = encode_text(text);
          text_cache.emplace(text, emb);
          return emb;
        };
        auto inject = ordinal_injection();
        std::vector<ClipBatchItem<Real>> batch;
        for (size_t bi = begin; bi < end; ++bi) {
          auto& ex = examples[order[bi]];
          auto vis = encode_clip(clip_feature_matrix(*ex.video, ex.clip), inject);
          ClipBatchItem<Real> item;
          item.ordinal_outputs = vis.ordinals;
          item.count_output = vis.count;
          item.action_count = ex.clip.action_count;
          const long engaged = std::min<long>(ex.clip.action_count, cfg_.ordinal_slots);
          long sem_seen = 0;
          for (auto& p : render_prompts(ex.clip, class_names_)) {
            if (p.kind == PromptKind::semantic && sem_seen < engaged) {
              item.semantic_text.push_back(cached_text(p.text));
              ++sem_seen;
            } else if (p.kind == PromptKind::integrated) {
              item.integrated_text = cached_text(p.text);
            } else if (p.kind == PromptKind::statistical) {
              item.statistical_text = cached_text(p.text);
            }
          }
          batch.push_back(std::move(item));
        }
        auto loss = vfe_total_loss(batch, cfg_.temperature, flags);
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv)) throw std::runtime_error("vfe training produced a non-finite loss");
        epoch_loss += lv;
        ++steps;
        tape.backward(loss);
        opt.step();
      }
      report.epoch_losses.push_back(epoch_loss / std::max<long>(1, steps));
    }
    return report;
  }

  // Frame-wise features: mean of the frame-token outputs over every window
  // whose span covers the frame (each covered frame reads the token of its
  // downsampling slot); frames outside all windows fall back to the raw row
  // through the input projection. Returns frames x D, row-major.
  std::vector<Real> extract_features(const VideoRecord& video,
                                     const std::vector<WindowSpec>& specs) const {
    if (specs.empty()) contract_fail("extract_features: need at least one window spec");
    const long t = video.frames, d = cfg_.embed_dim;
    std::vector<double> acc(static_cast<size_t>(t * d), 0.0);
    std::vector<long> hits(static_cast<size_t>(t), 0);
    auto inject = ordinal_injection();
    for (auto& spec : specs) {
      for (auto& clip : sample_windows(video, spec).clips) {
        auto vis = encode_clip(clip_feature_matrix(video, clip), inject);
        const long start = clip.frame_indices.front();
        const long span = spec.span();
        for (long off = 0; off < span && start + off < t; ++off) {
          const long slot = std::min<long>(off / spec.ds, cfg_.window_len - 1);
          const Real* row = vis.frames.data() + slot * d;
          double* arow = acc.data() + (start + off) * d;
          for (long j = 0; j < d; ++j) arow[j] += static_cast<double>(row[j]);
          ++hits[static_cast<size_t>(start + off)];
        }
      }
    }
    std::vector<Real> out(static_cast<size_t>(t * d));
    std::vector<long> uncovered;
    for (long i = 0; i < t; ++i) {
      if (hits[static_cast<size_t>(i)] > 0) {
        for (long j = 0; j < d; ++j)
          out[static_cast<size_t>(i * d + j)] =
              static_cast<Real>(acc[static_cast<size_t>(i * d + j)] / hits[static_cast<size_t>(i)]);
      } else {
        uncovered.push_back(i);
      }
    }
    if (!uncovered.empty()) {
      std::vector<Real> rows;
      rows.reserve(uncovered.size() * static_cast<size_t>(input_dim_));
      for (long i : uncovered)
        for (long j = 0; j < input_dim_; ++j)
          rows.push_back(static_cast<Real>(video.features[static_cast<size_t>(i * input_dim_ + j)]));
      auto proj = vision_.project_input(
          Tensor<Real>::from({static_cast<long>(uncovered.size()), input_dim_}, std::move(rows)));
      for (size_t u = 0; u < uncovered.size(); ++u)
        for (long j = 0; j < d; ++j)
          out[static_cast<size_t>(uncovered[u] * d + j)] = proj.at(static_cast<long>(u), j);
    }
    return out;
  }

 private:
  VfeConfig cfg_;
  std::vector<std::string> class_names_;
  long input_dim_;
  Tokenizer tokenizer_;
  ParamStore<Real> store_;
  VisionEncoder<Real> vision_;
  TextEncoder<Real> text_;
};

}  // namespace tseg
