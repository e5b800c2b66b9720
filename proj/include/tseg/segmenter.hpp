#pragma once

// Hierarchical encoder-decoder over frame sequences: one encoder plus
// `num_decoders` identical refinement decoders, each built from
// `blocks_per_stage` blocks combining a dilated temporal convolution with
// windowed single-head attention. Window and dilation at block i are
// window_base^i, clamped to the sequence length at forward time.
//
// The same stack serves two heads: the action segmenter (C output channels,
// stages coupled through softmax) and the boundary regressor (one output
// channel, stages coupled through sigmoid).

#include <string>
#include <vector>

#include "tseg/data.hpp"
#include "tseg/nn.hpp"

namespace tseg {

enum class StageCoupling { softmax, sigmoid };

struct StackConfig {
  long num_decoders = 3;
  long blocks_per_stage = 9;
  long width = 64;
  long out_channels = 15;  // C for the segmenter, 1 for the boundary branch
  long window_base = 2;
  StageCoupling coupling = StageCoupling::softmax;
  int residual_mode = 0;  // experiment knob: 0 inner, 1 input, 2 inner+outer

  long stages() const { return 1 + num_decoders; }  // G

  void validate() const {
    if (blocks_per_stage < 1) contract_fail("stack: blocks_per_stage must be >= 1");
    if (num_decoders < 0) contract_fail("stack: num_decoders must be >= 0");
    if (width < 1 || out_channels < 1) contract_fail("stack: width/out_channels must be >= 1");
    if (window_base < 2) contract_fail("stack: window_base must be >= 2");
  }
};

namespace detail {
inline long clamped_scale(long base, long block_index, long frames) {
  long v = 1;
  for (long i = 0; i < block_index; ++i) {
    v *= base;
    if (v >= frames) return frames;
  }
  return std::min(v, frames);
}
}  // namespace detail

// One block: dilated conv -> ReLU -> instance norm -> windowed attention ->
// residual add -> 1x1 conv. Decoder blocks differ only in the attention
// inputs: Q and K come from the concatenation of the running features with
// the encoder output, V from the running features alone.
template <class Real>
struct StackBlock {
  Tensor<Real> conv_w, conv_b;
  InstanceNorm<Real> norm;
  Linear<Real> wq, wk, wv;
  Linear<Real> out_1x1;
  long nominal = 2;  // window and dilation before clamping
  bool cross = false;
  int residual_mode = 0;

  StackBlock() = default;
  StackBlock(ParamStore<Real>& ps, const std::string& name, long width, long nominal_scale,
             bool cross_attention, int res_mode = 0)
      : conv_w(ps.uniform_init(name + ".conv.w", {3, width, width}, 3 * width)),
        conv_b(ps.uniform_init(name + ".conv.b", {width}, 3 * width)),
        norm(ps, name + ".norm", width),
        wq(ps, name + ".wq", cross_attention ? 2 * width : width, width),
        wk(ps, name + ".wk", cross_attention ? 2 * width : width, width),
        wv(ps, name + ".wv", width, width),
        out_1x1(ps, name + ".out", width, width),
        nominal(nominal_scale),
        cross(cross_attention),
        residual_mode(res_mode) {}

  Tensor<Real> forward(const Tensor<Real>& x, const Tensor<Real>& encoder_features) const {
    const long t = x.rows();
    const long dilation = std::min(nominal, t);
    const long window = std::min(nominal, t);
    auto f = norm.forward(relu(conv1d(x, conv_w, conv_b, dilation)));
    Tensor<Real> qk_input = f;
    if (cross) {
      if (!encoder_features.defined() || encoder_features.rows() != t)
        contract_fail("decoder block: encoder features must share the sequence length");
      qk_input = concat_cols(std::vector<Tensor<Real>>{f, encoder_features});
    }
    auto att = windowed_attention(wq.forward(qk_input), wk.forward(qk_input), wv.forward(f), window);
    if (residual_mode == 1) return out_1x1.forward(add(att, x));
    if (residual_mode == 2) return add(x, out_1x1.forward(add(att, f)));
    return out_1x1.forward(add(att, f));
  }
};

template <class Real>
struct StageOutput {
  Tensor<Real> features;  // T x width, pre-head block output
  Tensor<Real> logits;    // T x out_channels
};

template <class Real>
class HierarchicalStack {
 public:
  HierarchicalStack(const StackConfig& cfg, long input_dim, ParamStore<Real>& ps,
                    const std::string& prefix)
      : cfg_(cfg) {
    cfg.validate();
    enc_in_ = Linear<Real>(ps, prefix + ".enc.in", input_dim, cfg.width);
    for (long i = 1; i <= cfg.blocks_per_stage; ++i)
      enc_blocks_.emplace_back(ps, prefix + ".enc.block" + std::to_string(i), cfg.width,
                               nominal_for(i), false, cfg.residual_mode);
    enc_head_ = Linear<Real>(ps, prefix + ".enc.head", cfg.width, cfg.out_channels);
    for (long d = 0; d < cfg.num_decoders; ++d) {
      Decoder dec;
      const std::string dname = prefix + ".dec" + std::to_string(d);
      dec.in = Linear<Real>(ps, dname + ".in", cfg.out_channels, cfg.width);
      for (long i = 1; i <= cfg.blocks_per_stage; ++i)
        dec.blocks.emplace_back(ps, dname + ".block" + std::to_string(i), cfg.width,
                                nominal_for(i), true, cfg.residual_mode);
      dec.head = Linear<Real>(ps, dname + ".head", cfg.width, cfg.out_channels);
      decoders_.push_back(std::move(dec));
    }
  }

  const StackConfig& config() const { return cfg_; }

  long nominal_for(long block_index) const {
    long v = 1;
    for (long i = 0; i < block_index; ++i) {
      v *= cfg_.window_base;
      if (v > (1L << 20)) return 1L << 20;
    }
    return v;
  }

  // All G stage logits, each T x out_channels. Each decoder consumes the
  // previous stage's coupled probabilities and cross-attends to the encoder
  // feature map.
  std::vector<Tensor<Real>> forward(const Tensor<Real>& features) const {
    if (!features.defined() || features.rows() < 1)
      contract_fail("stack forward: empty input features");
    auto h = enc_in_.forward(features);
    for (auto& b : enc_blocks_) h = b.forward(h, {});
    auto enc_logits = enc_head_.forward(h);
    std::vector<Tensor<Real>> stages = {enc_logits};
    auto prev = enc_logits;
    for (auto& dec : decoders_) {
      auto coupled = cfg_.coupling == StageCoupling::softmax ? softmax_rows(prev) : sigmoid(prev);
      auto x = dec.in.forward(coupled);
      for (auto& b : dec.blocks) x = b.forward(x, h);
      prev = dec.head.forward(x);
      stages.push_back(prev);
    }
    return stages;
  }

 private:
  struct Decoder {
    Linear<Real> in;
    std::vector<StackBlock<Real>> blocks;
    Linear<Real> head;
  };

  StackConfig cfg_;
  Linear<Real> enc_in_;
  std::vector<StackBlock<Real>> enc_blocks_;
  Linear<Real> enc_head_;
  std::vector<Decoder> decoders_;
};

// The action segmentation executor: per-stage frame-wise class logits.
template <class Real>
class Segmenter {
 public:
  Segmenter(StackConfig cfg, long input_dim, uint64_t seed)
      : store_(derive_seed(seed, "segmenter_params")),
        stack_(with_softmax(cfg), input_dim, store_, "ase") {}

  ParamStore<Real>& store() { return store_; }
  const StackConfig& config() const { return stack_.config(); }

  std::vector<Tensor<Real>> forward(const Tensor<Real>& features) const {
    return stack_.forward(features);
  }

  // Frame-wise prediction: argmax of the final stage.
  LabelSequence predict(const Tensor<Real>& features) const {
    auto stages = forward(features);
    const auto& last = stages.back();
    LabelSequence out;
    for (long t = 0; t < last.rows(); ++t) {
      int arg = 0;
      for (long c = 1; c < last.cols(); ++c)
        if (last.at(t, c) > last.at(t, arg)) arg = static_cast<int>(c);
      out.push_back(arg);
    }
    return out;
  }

 private:
  static StackConfig with_softmax(StackConfig cfg) {
    cfg.coupling = StageCoupling::softmax;
    return cfg;
  }

  ParamStore<Real> store_;
  HierarchicalStack<Real> stack_;
};

}  // namespace tseg
