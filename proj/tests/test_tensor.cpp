#include <gtest/gtest.h>

#include "grad_cases.hpp"
#include "oracles.hpp"
#include "tseg/nn.hpp"
#include "tseg/tensor.hpp"

using tseg::Tensor;
namespace ts = tseg;

TEST(Matmul, IdentityTimesIdentity) {
  auto i2 = Tensor<double>::identity(2);
  auto r = ts::matmul(i2, i2);
  for (long i = 0; i < 2; ++i)
    for (long j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(r.at(i, j), i == j ? 1.0 : 0.0);
}

TEST(Matmul, HandExpanded) {
  auto a = Tensor<double>::row_matrix({{1, 2}, {3, 4}});
  auto b = Tensor<double>::row_matrix({{1}, {1}});
  auto r = ts::matmul(a, b);
  EXPECT_DOUBLE_EQ(r.at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(r.at(1, 0), 7.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 5});
  try {
    ts::matmul(a, b);
    FAIL() << "expected dimension error";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradOfSumIsColumnSumBroadcast) {
  ts::Rng rng(7);
  auto a = gradcases::random_tensor(rng, {3, 4}, -1, 1);
  auto b = gradcases::random_tensor(rng, {4, 2}, -1, 1, false);
  {
    ts::Tape<double> tape;
    auto loss = ts::sum_all(ts::matmul(a, b));
    tape.backward(loss);
  }
  // d sum(A*B) / dA[i,k] = sum_j B[k,j], independent of the row i.
  for (long i = 0; i < 3; ++i)
    for (long k = 0; k < 4; ++k) {
      double colsum = 0;
      for (long j = 0; j < 2; ++j) colsum += b.at(k, j);
      EXPECT_NEAR(a.grad()[i * 4 + k], colsum, 1e-12);
    }
  // And against the finite-difference oracle.
  auto res = oracles::check_gradients({a}, [&] { return ts::sum_all(ts::matmul(a, b)); });
  EXPECT_TRUE(res.ok()) << res.max_rel_err;
}

TEST(Matmul, AssociativityWithIdentity) {
  ts::Rng rng(3);
  auto a = gradcases::random_tensor(rng, {4, 4}, -1, 1, false);
  auto i4 = Tensor<double>::identity(4);
  auto left = ts::matmul(ts::matmul(a, i4), i4);
  auto right = ts::matmul(a, ts::matmul(i4, i4));
  for (long i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(left.data()[i], right.data()[i]);
}

TEST(Softmax, Symmetry) {
  auto x = Tensor<double>::from({2}, {0.0, 0.0});
  auto y = ts::softmax_rows(x);
  EXPECT_DOUBLE_EQ(y.at(0), 0.5);
  EXPECT_DOUBLE_EQ(y.at(1), 0.5);
}

TEST(Softmax, StabilizedAgainstOverflow) {
  auto x = Tensor<double>::from({2}, {1000.0, 1000.0});
  auto y = ts::softmax_rows(x);
  EXPECT_DOUBLE_EQ(y.at(0), 0.5);
  EXPECT_DOUBLE_EQ(y.at(1), 0.5);
}

TEST(Softmax, MatchesDirectEvaluation) {
  ts::Rng rng(11);
  auto x = gradcases::random_tensor(rng, {5}, -3, 3, false);
  auto y = ts::softmax_rows(x);
  double z = 0;
  for (long i = 0; i < 5; ++i) z += std::exp(x.at(i));
  for (long i = 0; i < 5; ++i) EXPECT_NEAR(y.at(i), std::exp(x.at(i)) / z, 1e-12);
}

TEST(Softmax, RowsSumToOne) {
  ts::Rng rng(13);
  auto x = gradcases::random_tensor(rng, {6, 9}, -5, 5, false);
  auto y = ts::softmax_rows(x);
  for (long i = 0; i < 6; ++i) {
    double s = 0;
    for (long j = 0; j < 9; ++j) s += y.at(i, j);
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Backward, SumGivesOnes) {
  auto x = Tensor<double>::from({2, 2}, {1, 2, 3, 4}, true);
  ts::Tape<double> tape;
  auto loss = ts::sum_all(x);
  tape.backward(loss);
  for (long i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 1.0);
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  auto x = Tensor<double>::from({3}, {1.5, -2.0, 0.25}, true);
  ts::Tape<double> tape;
  auto loss = ts::sum_all(ts::mul(x, x));
  tape.backward(loss);
  for (long i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.at(i));
}

TEST(Backward, NonScalarLossIsContractError) {
  auto x = Tensor<double>::from({2}, {1, 2}, true);
  ts::Tape<double> tape;
  auto y = ts::mul(x, x);
  EXPECT_THROW(tape.backward(y), std::invalid_argument);
}

TEST(Backward, UnreachableNodeKeepsNoGradient) {
  auto x = Tensor<double>::from({2}, {1, 2}, true);
  auto y = Tensor<double>::from({2}, {3, 4}, true);
  ts::Tape<double> tape;
  auto used = ts::sum_all(ts::mul(x, x));
  auto unused = ts::sum_all(ts::mul(y, y));
  (void)unused;
  tape.backward(used);
  EXPECT_TRUE(x.has_grad());
  if (y.has_grad())
    for (double g : y.grad()) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(Backward, CompositeGraphMatchesFiniteDifferences) {
  ts::Rng rng(21);
  auto x = gradcases::random_tensor(rng, {4, 3}, -1, 1);
  auto w = gradcases::random_tensor(rng, {3, 3}, -1, 1);
  auto build = [&] {
    auto h = ts::relu(ts::matmul(x, w));
    auto s = ts::softmax_rows(h);
    return ts::mean_all(ts::mul(s, s));
  };
  auto res = oracles::check_gradients({x, w}, build);
  EXPECT_TRUE(res.ok()) << "max rel err " << res.max_rel_err;
}

TEST(GradCheck, EveryPrimitiveAtTenRandomInstances) {
  for (int inst = 0; inst < 10; ++inst) {
    for (auto& c : gradcases::primitive_cases(1000 + inst * 37)) {
      auto res = oracles::check_gradients(c.params, c.build);
      EXPECT_TRUE(res.ok()) << c.name << " instance " << inst << " rel err " << res.max_rel_err;
    }
  }
}

TEST(Conv1d, KernelOneIsIdentity) {
  ts::Rng rng(4);
  auto x = gradcases::random_tensor(rng, {10, 3}, -1, 1, false);
  auto w = Tensor<double>::zeros({1, 3, 3});
  for (long c = 0; c < 3; ++c) w.data()[c * 3 + c] = 1.0;
  auto b = Tensor<double>::zeros({3});
  auto y = ts::conv1d(x, w, b, 1);
  for (long i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(Attention, FullWindowEqualsUnmaskedAttention) {
  ts::Rng rng(5);
  auto q = gradcases::random_tensor(rng, {6, 4}, -1, 1, false);
  auto k = gradcases::random_tensor(rng, {6, 4}, -1, 1, false);
  auto v = gradcases::random_tensor(rng, {6, 4}, -1, 1, false);
  auto wide = ts::windowed_attention(q, k, v, 6);    // w == T
  auto wider = ts::windowed_attention(q, k, v, 999); // w >> T
  for (long i = 0; i < wide.numel(); ++i) EXPECT_NEAR(wide.data()[i], wider.data()[i], 1e-12);
  // Reference dense computation.
  auto scores = ts::mul_scalar(ts::matmul(q, ts::transpose(k)), 1.0 / std::sqrt(4.0));
  auto probs = ts::softmax_rows(scores);
  auto ref = ts::matmul(probs, v);
  for (long i = 0; i < ref.numel(); ++i) EXPECT_NEAR(wide.data()[i], ref.data()[i], 1e-12);
}

TEST(Attention, WindowOneAttendsToSelfOnly) {
  ts::Rng rng(6);
  auto q = gradcases::random_tensor(rng, {5, 3}, -1, 1, false);
  auto k = gradcases::random_tensor(rng, {5, 3}, -1, 1, false);
  auto v = gradcases::random_tensor(rng, {5, 3}, -1, 1, false);
  auto y = ts::windowed_attention(q, k, v, 1);
  // With a one-frame window the value passes through untouched.
  for (long i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], v.data()[i]);
}

TEST(Attention, MaskLocalityOnRandomInputs) {
  ts::Rng rng(8);
  for (long w : {1L, 2L, 3L, 5L}) {
    auto q = gradcases::random_tensor(rng, {9, 3}, -1, 1, false);
    auto k = gradcases::random_tensor(rng, {9, 3}, -1, 1, false);
    auto v = gradcases::random_tensor(rng, {9, 3}, -1, 1, false);
    std::vector<double> weights;
    ts::windowed_attention(q, k, v, w, &weights);
    for (long i = 0; i < 9; ++i) {
      double rowsum = 0;
      for (long j = 0; j < 9; ++j) {
        if (std::labs(i - j) > w - 1)
          EXPECT_DOUBLE_EQ(weights[i * 9 + j], 0.0) << "w=" << w << " i=" << i << " j=" << j;
        rowsum += weights[i * 9 + j];
      }
      EXPECT_NEAR(rowsum, 1.0, 1e-9);
    }
  }
}

TEST(Determinism, SameSeedSameOpSequenceBitIdentical) {
  auto run = [] {
    ts::ParamStore<double> ps(ts::derive_seed(42, "det"));
    auto w1 = ps.uniform_init("w1", {8, 8}, 8);
    auto w2 = ps.uniform_init("w2", {8, 4}, 8);
    auto x = Tensor<double>::filled({3, 8}, 0.25);
    auto h = ts::relu(ts::matmul(x, w1));
    auto y = ts::softmax_rows(ts::matmul(h, w2));
    return y;
  };
  auto a = run();
  auto b = run();
  ASSERT_EQ(a.numel(), b.numel());
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * a.numel()));
}

TEST(ParamStore, InitializationBoundFollowsFanIn) {
  ts::ParamStore<double> ps(1);
  auto w = ps.uniform_init("w", {100, 4}, 100);
  const double bound = 1.0 / std::sqrt(100.0);
  for (long i = 0; i < w.numel(); ++i) {
    EXPECT_LE(std::abs(w.data()[i]), bound);
  }
}

TEST(AdamW, StepReducesSimpleQuadratic) {
  ts::ParamStore<double> ps(3);
  auto w = ps.uniform_init("w", {4}, 1);
  typename ts::AdamW<double>::Config cfg;
  cfg.lr = 0.05;
  ts::AdamW<double> opt(ps, cfg);
  auto loss_value = [&] {
    double s = 0;
    for (long i = 0; i < 4; ++i) s += w.at(i) * w.at(i);
    return s;
  };
  const double before = loss_value();
  for (int it = 0; it < 50; ++it) {
    ts::Tape<double> tape;
    auto loss = ts::sum_all(ts::mul(w, w));
    tape.backward(loss);
    opt.step();
  }
  EXPECT_LT(loss_value(), before * 0.1);
}
