#pragma once

// Seeded generator for a CPR-like corpus: mostly-ordinal Markov labels over
// 15 workflow steps, and per-frame features built from class centroids plus
// temporally correlated noise. Fully deterministic per seed.

#include <cmath>
#include <string>
#include <vector>

#include "tseg/data.hpp"

namespace tseg {

inline const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names = {
      "checking environment safety",
      "confirming personal protection",
      "checking responsiveness",
      "checking breathing",
      "checking carotid pulse",
      "declaring someone is sick",
      "calling for emergency services",
      "stating the location",
      "asking for a defibrillator",
      "requesting professional assistance",
      "positioning the hands",
      "performing chest compressions",
      "opening the airway",
      "performing rescue breathing",
      "checking recovery signs",
  };
  return names;
}

inline std::vector<std::string> class_names_for(long classes) {
  const auto& base = default_class_names();
  std::vector<std::string> out;
  for (long c = 0; c < classes; ++c) {
    if (c < static_cast<long>(base.size()))
      out.push_back(base[static_cast<size_t>(c)]);
    else
      out.push_back("extra action step " + std::to_string(c));
  }
  return out;
}

struct GeneratorConfig {
  long classes = 15;
  long videos = 99;
  long feature_dim = 32;
  double mean_frames = 500.0;      // expected video length
  double mean_instances = 17.0;    // expected action instances per video
  double noise_scale = 1.4;       // stationary std-dev of the feature noise
  double noise_rho = 0.9;          // AR(1) coefficient of the noise
  double p_advance = 0.86;         // move to the next workflow step
  double p_skip = 0.06;            // jump over one step
  double p_back = 0.08;            // redo the previous step
  uint64_t seed = 1;

  double mean_duration() const { return mean_frames / mean_instances; }
  // Within-segment self-transition probability implied by the geometric
  // duration model.
  double self_transition() const { return 1.0 - 1.0 / mean_duration(); }

  void validate() const {
    if (classes < 2) contract_fail("generator: need at least 2 classes");
    if (mean_frames < 2) contract_fail("generator: mean_frames must be >= 2");
    if (videos < 1) contract_fail("generator: need at least 1 video");
    if (feature_dim < 1) contract_fail("generator: feature_dim must be >= 1");
    if (mean_instances < 1) contract_fail("generator: mean_instances must be >= 1");
    if (mean_duration() < 1.5) contract_fail("generator: mean segment duration too small");
    if (p_advance <= 0 || p_skip < 0 || p_back < 0)
      contract_fail("generator: transition probabilities invalid");
    if (noise_scale < 0 || noise_rho < 0 || noise_rho >= 1)
      contract_fail("generator: noise settings invalid");
  }
};

namespace detail {

inline long geometric_duration(Rng& rng, double q) {
  // P(d = n) = (1-q) q^(n-1), mean 1/(1-q).
  const double u = rng.uniform();
  if (q <= 0.0) return 1;
  const long d = 1 + static_cast<long>(std::floor(std::log(1.0 - u) / std::log(q)));
  const long cap = static_cast<long>(8.0 / (1.0 - q)) + 1;
  return std::min(std::max<long>(1, d), cap);
}

inline LabelSequence markov_labels(const GeneratorConfig& cfg, Rng& rng) {
  const double q = cfg.self_transition();
  const double psum = cfg.p_advance + cfg.p_skip + cfg.p_back;
  LabelSequence labels;
  long c = 0;
  const long max_instances = static_cast<long>(cfg.mean_instances * 6) + 8;
  for (long inst = 0; inst < max_instances; ++inst) {
    const long dur = geometric_duration(rng, q);
    labels.insert(labels.end(), static_cast<size_t>(dur), static_cast<int>(c));
    double r = rng.uniform() * psum;
    long next;
    if (r < cfg.p_back && c > 0)
      next = c - 1;
    else if (r < cfg.p_back + cfg.p_skip)
      next = c + 2;
    else
      next = c + 1;
    if (next >= cfg.classes) break;  // workflow finished
    c = next;
  }
  return labels;
}

}  // namespace detail

inline std::vector<std::vector<double>> class_centroids(const GeneratorConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "centroids"));
  std::vector<std::vector<double>> mu(static_cast<size_t>(cfg.classes));
  for (auto& row : mu) {
    row.resize(static_cast<size_t>(cfg.feature_dim));
    for (auto& v : row) v = rng.normal();
  }
  return mu;
}

inline std::vector<VideoRecord> generate_synthetic(const GeneratorConfig& cfg) {
  cfg.validate();
  const auto mu = class_centroids(cfg);
  std::vector<VideoRecord> out;
  out.reserve(static_cast<size_t>(cfg.videos));
  for (long vi = 0; vi < cfg.videos; ++vi) {
    Rng rng(derive_seed(cfg.seed, "video_" + std::to_string(vi)));
    VideoRecord v;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "video_%03ld", vi);
    v.id = buf;
    v.labels = detail::markov_labels(cfg, rng);
    v.frames = static_cast<long>(v.labels.size());
    v.feature_dim = cfg.feature_dim;
    v.features.resize(static_cast<size_t>(v.frames * cfg.feature_dim));
    std::vector<double> noise(static_cast<size_t>(cfg.feature_dim), 0.0);
    const double rho = cfg.noise_rho;
    const double innov = cfg.noise_scale * std::sqrt(1.0 - rho * rho);
    for (long d = 0; d < cfg.feature_dim; ++d)
      noise[static_cast<size_t>(d)] = cfg.noise_scale * rng.normal();
    for (long t = 0; t < v.frames; ++t) {
      const auto& centroid = mu[static_cast<size_t>(v.labels[static_cast<size_t>(t)])];
      for (long d = 0; d < cfg.feature_dim; ++d) {
        if (t > 0) noise[static_cast<size_t>(d)] = rho * noise[static_cast<size_t>(d)] + innov * rng.normal();
        v.features[static_cast<size_t>(t * cfg.feature_dim + d)] =
            static_cast<float>(centroid[static_cast<size_t>(d)] + noise[static_cast<size_t>(d)]);
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace tseg
