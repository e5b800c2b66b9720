#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tseg/segmenter.hpp"

namespace ts = tseg;
using Tensor = ts::Tensor<double>;

namespace {
Tensor random_features(ts::Rng& rng, long t, long d, double scale = 1.0) {
  auto x = Tensor::zeros({t, d});
  for (long i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform(-scale, scale);
  return x;
}

ts::StackConfig tiny_stack(long blocks = 2, long decoders = 1, long width = 4, long classes = 3) {
  ts::StackConfig cfg;
  cfg.blocks_per_stage = blocks;
  cfg.num_decoders = decoders;
  cfg.width = width;
  cfg.out_channels = classes;
  return cfg;
}
}  // namespace

TEST(StackBlock, EncoderBlockPreservesShapeForEveryIndex) {
  ts::Rng rng(91);
  ts::ParamStore<double> ps(1);
  const long width = 4, t = 11;
  auto x = random_features(rng, t, width);
  for (long i = 1; i <= 9; ++i) {
    ts::StackBlock<double> block(ps, "b" + std::to_string(i), width, 1L << i, false);
    auto y = block.forward(x, {});
    EXPECT_EQ(y.shape(), x.shape()) << "block " << i;
  }
}

TEST(StackBlock, EncoderBlockGradientsMatchFiniteDifferences) {
  ts::Rng rng(93);
  ts::ParamStore<double> ps(2);
  const long width = 3, t = 7;
  ts::StackBlock<double> block(ps, "b", width, 2, false);
  auto x = random_features(rng, t, width);
  x.set_requires_grad(true);
  auto coef = random_features(rng, t, width);
  auto build = [&] { return ts::sum_all(ts::mul(block.forward(x, {}), coef)); };
  std::vector<Tensor> params = {x, block.conv_w, block.wq.w, block.wv.w, block.norm.gamma,
                                block.out_1x1.w};
  auto res = oracles::check_gradients(params, build);
  EXPECT_TRUE(res.ok()) << res.max_rel_err;
}

TEST(StackBlock, DecoderBlockGradientsMatchFiniteDifferences) {
  ts::Rng rng(95);
  ts::ParamStore<double> ps(3);
  const long width = 3, t = 6;
  ts::StackBlock<double> block(ps, "d", width, 2, true);
  auto x = random_features(rng, t, width);
  auto enc = random_features(rng, t, width);
  x.set_requires_grad(true);
  enc.set_requires_grad(true);
  auto coef = random_features(rng, t, width);
  auto build = [&] { return ts::sum_all(ts::mul(block.forward(x, enc), coef)); };
  auto res = oracles::check_gradients({x, enc, block.wq.w, block.wk.w, block.wv.w}, build);
  EXPECT_TRUE(res.ok()) << res.max_rel_err;
}

TEST(StackBlock, DecoderShapePreservedAndLengthMismatchRejected) {
  ts::Rng rng(97);
  ts::ParamStore<double> ps(4);
  const long width = 4, t = 9;
  for (long i = 1; i <= 9; ++i) {
    ts::StackBlock<double> block(ps, "d" + std::to_string(i), width, 1L << i, true);
    auto x = random_features(rng, t, width);
    auto enc = random_features(rng, t, width);
    EXPECT_EQ(block.forward(x, enc).shape(), x.shape());
    auto enc_bad = random_features(rng, t + 1, width);
    EXPECT_THROW(block.forward(x, enc_bad), std::invalid_argument);
  }
}

TEST(StackBlock, WindowOneMakesValuePathIndependentOfEncoder) {
  // With a one-frame window the attention output equals its V input, which
  // derives from the running features only; the encoder stream feeds Q and K
  // but cannot change the result.
  ts::Rng rng(99);
  ts::ParamStore<double> ps(5);
  const long width = 4, t = 8;
  ts::StackBlock<double> narrow(ps, "n", width, 1, true);
  auto x = random_features(rng, t, width);
  auto enc_a = random_features(rng, t, width);
  auto enc_zero = Tensor::zeros({t, width});
  auto ya = narrow.forward(x, enc_a);
  auto yz = narrow.forward(x, enc_zero);
  for (long i = 0; i < ya.numel(); ++i) EXPECT_DOUBLE_EQ(ya.data()[i], yz.data()[i]);
  // A wider window lets the encoder stream steer the attention weights.
  ts::StackBlock<double> wide(ps, "w", width, 4, true);
  auto wa = wide.forward(x, enc_a);
  auto wz = wide.forward(x, enc_zero);
  double diff = 0;
  for (long i = 0; i < wa.numel(); ++i) diff = std::max(diff, std::abs(wa.data()[i] - wz.data()[i]));
  EXPECT_GT(diff, 1e-9);
}

TEST(Stack, WindowDoublesPerBlockAndClampsToSequenceLength) {
  ts::ParamStore<double> ps(6);
  ts::StackConfig cfg = tiny_stack(9, 0, 3, 2);
  ts::HierarchicalStack<double> stack(cfg, 3, ps, "s");
  for (long i = 1; i <= 9; ++i) EXPECT_EQ(stack.nominal_for(i), 1L << i);
  // Forward on a sequence far shorter than 2^9 still works (clamped).
  ts::Rng rng(101);
  auto x = random_features(rng, 20, 3);
  auto stages = stack.forward(x);
  ASSERT_EQ(stages.size(), 1u);
  EXPECT_EQ(stages[0].rows(), 20);
}

TEST(Segmenter, FourStagesOfExpectedShape) {
  ts::Rng rng(103);
  ts::StackConfig cfg = tiny_stack(3, 3, 6, 5);
  ts::Segmenter<double> model(cfg, 8, 7);
  auto x = random_features(rng, 32, 8);
  auto stages = model.forward(x);
  ASSERT_EQ(stages.size(), 4u);  // encoder + 3 decoders
  for (auto& s : stages) {
    EXPECT_EQ(s.rows(), 32);
    EXPECT_EQ(s.cols(), 5);
  }
}

TEST(Segmenter, DeterministicUnderSeed) {
  ts::Rng rng(107);
  auto x = random_features(rng, 16, 4);
  ts::StackConfig cfg = tiny_stack(2, 2, 4, 3);
  ts::Segmenter<double> a(cfg, 4, 11);
  ts::Segmenter<double> b(cfg, 4, 11);
  auto sa = a.forward(x);
  auto sb = b.forward(x);
  for (size_t g = 0; g < sa.size(); ++g)
    EXPECT_EQ(0, std::memcmp(sa[g].data(), sb[g].data(), sizeof(double) * sa[g].numel()));
  EXPECT_EQ(a.predict(x), b.predict(x));
}

TEST(Segmenter, FiniteOutputsForLargeScaleInputs) {
  ts::Rng rng(109);
  ts::StackConfig cfg = tiny_stack(9, 2, 4, 4);
  ts::Segmenter<double> model(cfg, 6, 13);
  for (double scale : {1.0, 100.0, 1000.0}) {
    auto x = random_features(rng, 24, 6, scale);
    for (auto& s : model.forward(x))
      for (long i = 0; i < s.numel(); ++i)
        ASSERT_TRUE(std::isfinite(s.data()[i])) << "scale " << scale;
  }
}

TEST(Segmenter, AttentionLocalityHoldsAtEveryBlockScale) {
  // The blocks delegate to windowed_attention with w = min(2^i, T); verify
  // the mask property at exactly those window sizes.
  ts::Rng rng(113);
  const long t = 20, d = 4;
  for (long i = 1; i <= 9; ++i) {
    const long w = std::min(1L << i, t);
    auto q = random_features(rng, t, d);
    auto k = random_features(rng, t, d);
    auto v = random_features(rng, t, d);
    std::vector<double> weights;
    ts::windowed_attention(q, k, v, w, &weights);
    for (long a = 0; a < t; ++a)
      for (long b = 0; b < t; ++b)
        if (std::labs(a - b) > w - 1) ASSERT_EQ(weights[a * t + b], 0.0) << "i=" << i;
  }
}

TEST(Segmenter, EmptyInputRejected) {
  ts::StackConfig cfg = tiny_stack();
  ts::Segmenter<double> model(cfg, 4, 3);
  EXPECT_THROW(model.forward(Tensor()), std::invalid_argument);
}

TEST(Segmenter, GradientsThroughFullModelMatchFiniteDifferences) {
  ts::Rng rng(127);
  ts::StackConfig cfg = tiny_stack(2, 1, 3, 3);
  ts::Segmenter<double> model(cfg, 4, 17);
  auto x = random_features(rng, 6, 4);
  auto coef0 = random_features(rng, 6, 3);
  auto coef1 = random_features(rng, 6, 3);
  auto build = [&] {
    auto stages = model.forward(x);
    return ts::add(ts::sum_all(ts::mul(stages[0], coef0)), ts::sum_all(ts::mul(stages[1], coef1)));
  };
  std::vector<Tensor> subset = {
      model.store().find("ase.enc.in.w"),      model.store().find("ase.enc.block1.conv.w"),
      model.store().find("ase.enc.block2.wq.w"), model.store().find("ase.dec0.in.w"),
      model.store().find("ase.dec0.block1.wk.w"), model.store().find("ase.dec0.head.b"),
  };
  auto res = oracles::check_gradients(subset, build);
  EXPECT_TRUE(res.ok()) << res.max_rel_err;
}
