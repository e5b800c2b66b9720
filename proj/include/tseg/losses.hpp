#pragma once

// Training objectives: median-frequency-weighted classification, the
// Gaussian similarity-weighted truncated MSE smoothing term, the weighted
// logistic boundary regression loss, and their combination.

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "tseg/data.hpp"
#include "tseg/tensor.hpp"

namespace tseg {

struct LossConfig {
  double lambda_smooth = 0.15;  // smoothing weight inside the per-stage sum
  double mu_boundary = 1.0;     // weight of the boundary branch
  double gs_sigma = 1.0;
  double gs_tau = 4.0;
  long boundary_widen = 0;  // radius of the positive band around transitions
};

// weight_c = median(frequency of present classes) / frequency_c; classes
// absent from the training labels get weight 1.
template <class Real>
std::vector<Real> median_frequency_weights(const std::vector<const LabelSequence*>& train_labels,
                                           long num_classes) {
  if (train_labels.empty()) contract_fail("median_frequency_weights: empty training set");
  std::vector<long> freq(static_cast<size_t>(num_classes), 0);
  long total = 0;
  for (auto* labels : train_labels) {
    if (!labels || labels->empty()) contract_fail("median_frequency_weights: empty label sequence");
    for (int l : *labels) {
      if (l < 0 || l >= num_classes)
        contract_fail("median_frequency_weights: label " + std::to_string(l) + " out of range");
      ++freq[static_cast<size_t>(l)];
      ++total;
    }
  }
  if (total == 0) contract_fail("median_frequency_weights: empty training set");
  std::vector<double> present;
  for (long f : freq)
    if (f > 0) present.push_back(static_cast<double>(f));
  std::sort(present.begin(), present.end());
  const size_t n = present.size();
  const double median =
      n % 2 == 1 ? present[n / 2] : 0.5 * (present[n / 2 - 1] + present[n / 2]);
  std::vector<Real> weights(static_cast<size_t>(num_classes), Real(1));
  for (long c = 0; c < num_classes; ++c)
    if (freq[static_cast<size_t>(c)] > 0)
      weights[static_cast<size_t>(c)] =
          static_cast<Real>(median / static_cast<double>(freq[static_cast<size_t>(c)]));
  return weights;
}

// Gaussian kernel over adjacent-frame feature distance; constant w.r.t. the
// model parameters.
template <class Real>
std::vector<Real> gaussian_similarity_weights(const Tensor<Real>& features, double sigma) {
  const long t = features.rows(), d = features.cols();
  std::vector<Real> g(static_cast<size_t>(std::max<long>(0, t - 1)));
  for (long s = 1; s < t; ++s) {
    double dist2 = 0;
    for (long j = 0; j < d; ++j) {
      const double diff =
          static_cast<double>(features.at(s, j)) - static_cast<double>(features.at(s - 1, j));
      dist2 += diff * diff;
    }
    g[static_cast<size_t>(s - 1)] = static_cast<Real>(std::exp(-dist2 / (2.0 * sigma * sigma)));
  }
  return g;
}

// (1/SC) * sum_{s,c} exp(-||x_s - x_{s-1}||^2 / 2 sigma^2) * delta_{s,c}^2
// with delta = min(|log p_{s,c} - log p_{s-1,c}|, tau) on log-softmax
// probabilities. Bounded by tau^2.
template <class Real>
Tensor<Real> gs_tmse(const Tensor<Real>& logits, const Tensor<Real>& features, double sigma = 1.0,
                     double tau = 4.0) {
  const long t = logits.rows(), c = logits.cols();
  if (t < 2) contract_fail("gs_tmse: need at least two frames, got " + shape_str(logits.shape()));
  if (features.rows() != t)
    contract_fail("gs_tmse: features/logits length mismatch " + shape_str(features.shape()) +
                  " vs " + shape_str(logits.shape()));
  auto lp = log_softmax_rows(logits);
  auto delta = clamp_max(abs_op(sub(slice_rows(lp, 1, t), slice_rows(lp, 0, t - 1))),
                         static_cast<Real>(tau));
  auto weights = Tensor<Real>::from({t - 1}, gaussian_similarity_weights(features, sigma));
  auto weighted = mul_colvec(mul(delta, delta), weights);
  return mul_scalar(sum_all(weighted), static_cast<Real>(1.0 / (t * c)));
}

// Mean over frames of median-frequency-weighted cross entropy.
template <class Real>
Tensor<Real> classification_loss(const Tensor<Real>& logits, const LabelSequence& labels,
                                 const std::vector<Real>& class_weights) {
  if (static_cast<long>(labels.size()) != logits.rows())
    contract_fail("classification_loss: label length " + std::to_string(labels.size()) +
                  " does not match logits " + shape_str(logits.shape()));
  std::vector<Real> frame_weights(labels.size());
  for (size_t s = 0; s < labels.size(); ++s)
    frame_weights[s] = class_weights.at(static_cast<size_t>(labels[s]));
  return weighted_nll(log_softmax_rows(logits), labels, frame_weights);
}

// Mean over stages of weighted cross entropy plus lambda * GS-TMSE.
template <class Real>
Tensor<Real> action_segmentation_loss(const std::vector<Tensor<Real>>& stages,
                                      const LabelSequence& labels,
                                      const std::vector<Real>& class_weights,
                                      const Tensor<Real>& features, const LossConfig& cfg = {},
                                      std::vector<double>* stage_cls = nullptr,
                                      std::vector<double>* stage_smooth = nullptr) {
  if (stages.empty()) contract_fail("action_segmentation_loss: no stages");
  Tensor<Real> total = Tensor<Real>::scalar(Real(0));
  for (auto& logits : stages) {
    auto cls = classification_loss(logits, labels, class_weights);
    auto smo = gs_tmse(logits, features, cfg.gs_sigma, cfg.gs_tau);
    if (stage_cls) stage_cls->push_back(static_cast<double>(cls.item()));
    if (stage_smooth) stage_smooth->push_back(static_cast<double>(smo.item()));
    total = add(total, add(cls, mul_scalar(smo, static_cast<Real>(cfg.lambda_smooth))));
  }
  return mul_scalar(total, static_cast<Real>(1.0 / stages.size()));
}

// Negated weighted logistic likelihood, averaged over frames and stages;
// probabilities are clamped to [1e-7, 1 - 1e-7]. w_p is the reciprocal
// ratio of positive frames over the training corpus.
template <class Real>
Tensor<Real> boundary_regression_loss(const std::vector<Tensor<Real>>& stage_probs,
                                      const std::vector<uint8_t>& gt, double positive_weight,
                                      std::vector<double>* stage_values = nullptr) {
  if (stage_probs.empty()) contract_fail("boundary_regression_loss: no stages");
  const long t = static_cast<long>(gt.size());
  std::vector<Real> y_pos(static_cast<size_t>(t)), y_neg(static_cast<size_t>(t));
  for (long s = 0; s < t; ++s) {
    y_pos[static_cast<size_t>(s)] = gt[static_cast<size_t>(s)] ? static_cast<Real>(positive_weight) : Real(0);
    y_neg[static_cast<size_t>(s)] = gt[static_cast<size_t>(s)] ? Real(0) : Real(1);
  }
  auto wpos = Tensor<Real>::from({t, 1}, std::move(y_pos));
  auto wneg = Tensor<Real>::from({t, 1}, std::move(y_neg));
  Tensor<Real> total = Tensor<Real>::scalar(Real(0));
  for (auto& p : stage_probs) {
    if (p.rows() != t)
      contract_fail("boundary_regression_loss: length mismatch " + shape_str(p.shape()) + " vs " +
                    std::to_string(t));
    auto pc = clamp(p, static_cast<Real>(1e-7), static_cast<Real>(1.0 - 1e-7));
    auto ll = add(mul(wpos, log_op(pc)), mul(wneg, log_op(sub_from_scalar(Real(1), pc))));
    auto stage = mul_scalar(sum_all(ll), static_cast<Real>(-1.0 / t));
    if (stage_values) stage_values->push_back(static_cast<double>(stage.item()));
    total = add(total, stage);
  }
  return mul_scalar(total, static_cast<Real>(1.0 / stage_probs.size()));
}

// Itemized per-step loss record, serialized as one JSON line per epoch in
// the training log.
struct LossReport {
  double total = 0;
  double action_segmentation = 0;
  double boundary = 0;
  std::vector<double> stage_classification;
  std::vector<double> stage_smoothing;
  std::vector<double> stage_boundary;

  std::string to_json() const {
    auto num = [](double v) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    auto arr = [&num](const std::vector<double>& v) {
      std::string s = "[";
      for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += num(v[i]);
      }
      return s + "]";
    };
    std::ostringstream os;
    os << "{\"total\":" << num(total) << ",\"as\":" << num(action_segmentation)
       << ",\"br\":" << num(boundary) << ",\"stage_cls\":" << arr(stage_classification)
       << ",\"stage_smo\":" << arr(stage_smoothing) << ",\"stage_br\":" << arr(stage_boundary)
       << "}";
    return os.str();
  }
};

// L_as + mu * L_br with an itemized report.
template <class Real>
Tensor<Real> total_loss(const std::vector<Tensor<Real>>& seg_stages,
                        const std::vector<Tensor<Real>>& boundary_stage_probs,
                        const LabelSequence& labels, const std::vector<Real>& class_weights,
                        const Tensor<Real>& features, const std::vector<uint8_t>& boundary_gt,
                        double positive_weight, const LossConfig& cfg, LossReport* report) {
  LossReport local;
  auto as = action_segmentation_loss(seg_stages, labels, class_weights, features, cfg,
                                     &local.stage_classification, &local.stage_smoothing);
  Tensor<Real> out = as;
  local.action_segmentation = static_cast<double>(as.item());
  if (!boundary_stage_probs.empty() && cfg.mu_boundary != 0.0) {
    auto br = boundary_regression_loss(boundary_stage_probs, boundary_gt, positive_weight,
                                       &local.stage_boundary);
    local.boundary = static_cast<double>(br.item());
    out = add(as, mul_scalar(br, static_cast<Real>(cfg.mu_boundary)));
  }
  local.total = static_cast<double>(out.item());
  if (report) *report = std::move(local);
  return out;
}

}  // namespace tseg
