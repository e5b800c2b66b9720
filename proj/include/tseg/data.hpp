#pragma once

// Dataset types: frame-wise label sequences, their run-length segment view,
// the multi-rate sliding-window sampler, and cross-validation folds.

#include <algorithm>
#include <string>
#include <vector>

#include "tseg/common.hpp"

namespace tseg {

using LabelSequence = std::vector<int>;

struct Segment {
  int cls = 0;
  long start = 0;  // inclusive
  long end = 0;    // exclusive
  bool operator==(const Segment&) const = default;
};

using SegmentList = std::vector<Segment>;

struct VideoRecord {
  std::string id;
  long frames = 0;
  long feature_dim = 0;
  std::vector<float> features;  // frames x feature_dim, row-major
  LabelSequence labels;
  double fps = 15.0;
};

// Fixed 16-frame windows sampled at stride `ds` within the window; `ol`
// controls reuse between consecutive windows: the start offset advances by
// span/ol raw frames, so ol=1 gives abutting windows and ol=2 a 50% overlap.
struct WindowSpec {
  long window_len = 16;
  long ds = 1;
  long ol = 1;

  long span() const { return window_len * ds; }
  long stride() const { return span() / ol; }

  void validate() const {
    if (window_len < 1 || ds < 1 || ol < 1)
      contract_fail("window spec: window_len, ds and ol must be >= 1");
    if (span() % ol != 0)
      contract_fail("window spec: overlap rate " + std::to_string(ol) +
                    " must divide the window span " + std::to_string(span()));
  }
};

struct Clip {
  std::string video_id;
  std::vector<long> frame_indices;   // strictly increasing, step ds
  LabelSequence frame_labels;        // one per sampled frame
  std::vector<int> ordinal_actions;  // run classes in order of appearance
  long action_count = 0;
};

inline SegmentList segments_from_labels(const LabelSequence& labels) {
  if (labels.empty()) contract_fail("segments_from_labels: empty label sequence");
  SegmentList out;
  long start = 0;
  for (long i = 1; i <= static_cast<long>(labels.size()); ++i) {
    if (i == static_cast<long>(labels.size()) || labels[i] != labels[start]) {
      out.push_back({labels[start], start, i});
      start = i;
    }
  }
  return out;
}

inline LabelSequence expand_segments(const SegmentList& segments) {
  LabelSequence out;
  for (auto& s : segments) {
    if (s.end <= s.start) contract_fail("expand_segments: empty segment");
    out.insert(out.end(), static_cast<size_t>(s.end - s.start), s.cls);
  }
  return out;
}

struct SampleResult {
  std::vector<Clip> clips;
  bool too_short = false;  // warning: video shorter than one window span
};

inline SampleResult sample_windows(const VideoRecord& video, const WindowSpec& spec) {
  spec.validate();
  SampleResult res;
  const long t = video.frames;
  if (t < spec.span()) {
    res.too_short = true;
    return res;
  }
  for (long start = 0; start + spec.span() <= t; start += spec.stride()) {
    Clip clip;
    clip.video_id = video.id;
    clip.frame_indices.reserve(static_cast<size_t>(spec.window_len));
    for (long k = 0; k < spec.window_len; ++k) {
      const long idx = start + k * spec.ds;
      clip.frame_indices.push_back(idx);
      clip.frame_labels.push_back(video.labels[static_cast<size_t>(idx)]);
    }
    for (auto& seg : segments_from_labels(clip.frame_labels))
      clip.ordinal_actions.push_back(seg.cls);
    clip.action_count = static_cast<long>(clip.ordinal_actions.size());
    res.clips.push_back(std::move(clip));
  }
  return res;
}

struct Fold {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

// Disjoint, exhaustive, size-balanced (within 1) test partitions.
inline std::vector<Fold> make_folds(const std::vector<std::string>& video_ids, long k,
                                    uint64_t seed) {
  if (k < 1 || k > static_cast<long>(video_ids.size()))
    contract_fail("make_folds: k=" + std::to_string(k) + " out of range for " +
                  std::to_string(video_ids.size()) + " videos");
  std::vector<std::string> ids = video_ids;
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, "folds"));
  rng.shuffle(ids);
  std::vector<Fold> folds(static_cast<size_t>(k));
  for (size_t i = 0; i < ids.size(); ++i)
    folds[i % static_cast<size_t>(k)].test_ids.push_back(ids[i]);
  for (auto& f : folds) {
    std::sort(f.test_ids.begin(), f.test_ids.end());
    for (auto& id : ids)
      if (!std::binary_search(f.test_ids.begin(), f.test_ids.end(), id))
        f.train_ids.push_back(id);
    std::sort(f.train_ids.begin(), f.train_ids.end());
  }
  return folds;
}

}  // namespace tseg
