#pragma once

// Boundary branch and calibration: a duplicate of the segmentation stack
// with a single sigmoid output regresses per-frame boundary probabilities;
// selected peaks split the prediction into segments that are re-labelled by
// majority vote.

#include <map>
#include <vector>

#include "tseg/segmenter.hpp"

namespace tseg {

using BoundarySet = std::vector<uint8_t>;  // one 0/1 flag per frame

template <class Real>
class BoundaryRegressor {
 public:
  BoundaryRegressor(StackConfig cfg, long input_dim, uint64_t seed)
      : store_(derive_seed(seed, "boundary_params")),
        stack_(with_sigmoid(cfg), input_dim, store_, "prc") {}

  ParamStore<Real>& store() { return store_; }
  const StackConfig& config() const { return stack_.config(); }

  // Per-stage T x 1 logits (pre-sigmoid), for training.
  std::vector<Tensor<Real>> forward_logits(const Tensor<Real>& features) const {
    return stack_.forward(features);
  }

  // Per-stage probabilities in (0, 1).
  std::vector<std::vector<double>> forward_probabilities(const Tensor<Real>& features) const {
    std::vector<std::vector<double>> out;
    for (auto& logits : stack_.forward(features)) {
      auto p = sigmoid(logits);
      std::vector<double> stage(static_cast<size_t>(p.rows()));
      for (long t = 0; t < p.rows(); ++t) stage[static_cast<size_t>(t)] = static_cast<double>(p.at(t, 0));
      out.push_back(std::move(stage));
    }
    return out;
  }

  // Final-stage probabilities; stages 1..G-1 only supervise training.
  std::vector<double> probabilities(const Tensor<Real>& features) const {
    return forward_probabilities(features).back();
  }

 private:
  static StackConfig with_sigmoid(StackConfig cfg) {
    cfg.out_channels = 1;
    cfg.coupling = StageCoupling::sigmoid;
    return cfg;
  }

  ParamStore<Real> store_;
  HierarchicalStack<Real> stack_;
};

// B_s = 1 iff P_s > 0.5 and P_s >= both existing neighbors; within a maximal
// plateau of equal values only the leftmost qualifying frame wins.
inline BoundarySet select_boundaries(const std::vector<double>& p) {
  const long t = static_cast<long>(p.size());
  if (t < 1) contract_fail("select_boundaries: empty probability vector");
  BoundarySet b(static_cast<size_t>(t), 0);
  auto qualifies = [&](long s) {
    if (!(p[static_cast<size_t>(s)] > 0.5)) return false;
    if (s > 0 && p[static_cast<size_t>(s)] < p[static_cast<size_t>(s - 1)]) return false;
    if (s + 1 < t && p[static_cast<size_t>(s)] < p[static_cast<size_t>(s + 1)]) return false;
    return true;
  };
  long s = 0;
  while (s < t) {
    long e = s;
    while (e + 1 < t && p[static_cast<size_t>(e + 1)] == p[static_cast<size_t>(s)]) ++e;
    for (long i = s; i <= e; ++i) {
      if (qualifies(i)) {
        b[static_cast<size_t>(i)] = 1;  // leftmost qualifying frame of the plateau
        break;
      }
    }
    s = e + 1;
  }
  return b;
}

// Ground-truth boundary labels: frame 0 and every label transition, so the
// positive count equals the number of segments. `widen` marks a radius of
// neighbouring frames as positive too (default 0).
inline std::vector<uint8_t> boundary_ground_truth(const LabelSequence& labels, long widen = 0) {
  if (labels.empty()) contract_fail("boundary_ground_truth: empty labels");
  const long t = static_cast<long>(labels.size());
  std::vector<uint8_t> y(static_cast<size_t>(t), 0);
  y[0] = 1;
  for (long s = 1; s < t; ++s)
    if (labels[static_cast<size_t>(s)] != labels[static_cast<size_t>(s - 1)]) y[static_cast<size_t>(s)] = 1;
  if (widen > 0) {
    std::vector<uint8_t> wide = y;
    for (long s = 0; s < t; ++s)
      if (y[static_cast<size_t>(s)])
        for (long r = std::max<long>(0, s - widen); r <= std::min(t - 1, s + widen); ++r)
          wide[static_cast<size_t>(r)] = 1;
    y = std::move(wide);
  }
  return y;
}

// Splits [0, T) at the boundary frames (a flag at frame 0 is a no-op cut)
// and reassigns each piece the majority label of the prediction within it.
// Ties break toward the label of the longest maximal run inside the piece,
// then toward the smallest class id.
inline LabelSequence calibrate(const LabelSequence& pred, const BoundarySet& boundaries) {
  if (pred.size() != boundaries.size())
    contract_fail("calibrate: length mismatch " + std::to_string(pred.size()) + " vs " +
                  std::to_string(boundaries.size()));
  if (pred.empty()) contract_fail("calibrate: empty prediction");
  const long t = static_cast<long>(pred.size());
  std::vector<long> cuts = {0};
  for (long s = 1; s < t; ++s)
    if (boundaries[static_cast<size_t>(s)]) cuts.push_back(s);
  cuts.push_back(t);
  LabelSequence out(pred.size());
  for (size_t c = 0; c + 1 < cuts.size(); ++c) {
    const long a = cuts[c], b = cuts[c + 1];
    std::map<int, long> count;
    for (long s = a; s < b; ++s) ++count[pred[static_cast<size_t>(s)]];
    long best_count = 0;
    for (auto& [cls, n] : count) best_count = std::max(best_count, n);
    std::map<int, long> longest_run;
    long run_start = a;
    for (long s = a; s <= b; ++s) {
      if (s == b || pred[static_cast<size_t>(s)] != pred[static_cast<size_t>(run_start)]) {
        auto& len = longest_run[pred[static_cast<size_t>(run_start)]];
        len = std::max(len, s - run_start);
        run_start = s;
      }
    }
    int winner = -1;
    long winner_run = -1;
    for (auto& [cls, n] : count) {  // std::map iterates in ascending class id
      if (n != best_count) continue;
      if (longest_run[cls] > winner_run) {
        winner = cls;
        winner_run = longest_run[cls];
      }
    }
    for (long s = a; s < b; ++s) out[static_cast<size_t>(s)] = winner;
  }
  return out;
}

}  // namespace tseg
