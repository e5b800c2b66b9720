#pragma once

// Frame-wise accuracy, segmental edit score, and segmental F1@k, plus the
// corpus aggregation used for reporting: accuracy pooled over frames, edit
// and F1 computed per video and averaged.

#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tseg/data.hpp"

namespace tseg {

inline double frame_accuracy(const LabelSequence& pred, const LabelSequence& gt) {
  if (pred.size() != gt.size())
    contract_fail("frame_accuracy: length mismatch " + std::to_string(pred.size()) + " vs " +
                  std::to_string(gt.size()));
  if (gt.empty()) contract_fail("frame_accuracy: empty sequences");
  long correct = 0;
  for (size_t i = 0; i < gt.size(); ++i) correct += pred[i] == gt[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(gt.size());
}

namespace detail {

inline std::vector<int> segment_classes(const LabelSequence& labels) {
  std::vector<int> out;
  for (size_t i = 0; i < labels.size(); ++i)
    if (i == 0 || labels[i] != labels[i - 1]) out.push_back(labels[i]);
  return out;
}

inline long levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<long> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<long>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<long>(i);
    for (size_t j = 1; j <= m; ++j) {
      const long sub = prev[j - 1] + (a[i - 1] != b[j - 1]);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline double interval_iou(const Segment& a, const Segment& b) {
  const long inter = std::max<long>(0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const long uni = (a.end - a.start) + (b.end - b.start) - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace detail

// Duration-blind ordering score: 100 * (1 - Levenshtein / max length) over
// the segment-class sequences.
inline double edit_score(const LabelSequence& pred, const LabelSequence& gt) {
  if (gt.empty()) contract_fail("edit_score: empty ground truth");
  const auto sp = detail::segment_classes(pred);
  const auto sg = detail::segment_classes(gt);
  const long d = detail::levenshtein(sp, sg);
  const double denom = static_cast<double>(std::max(sp.size(), sg.size()));
  return 100.0 * (1.0 - static_cast<double>(d) / denom);
}

struct F1Counts {
  long tp = 0, fp = 0, fn = 0;

  double precision() const { return tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0; }
  double recall() const { return tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 100.0 * 2.0 * p * r / (p + r) : 0.0;
  }
};

// Greedy one-to-one matching in temporal order: a predicted segment is a
// true positive when its best-IoU same-class unmatched ground-truth segment
// strictly exceeds k/100.
inline F1Counts f1_counts_at_k(const SegmentList& pred, const SegmentList& gt, int k) {
  const double threshold = static_cast<double>(k) / 100.0;
  F1Counts c;
  std::vector<bool> used(gt.size(), false);
  for (auto& p : pred) {
    double best = -1.0;
    long best_j = -1;
    for (size_t j = 0; j < gt.size(); ++j) {
      if (used[j] || gt[j].cls != p.cls) continue;
      const double iou = detail::interval_iou(p, gt[j]);
      if (iou > best) {
        best = iou;
        best_j = static_cast<long>(j);
      }
    }
    if (best_j >= 0 && best > threshold) {
      ++c.tp;
      used[static_cast<size_t>(best_j)] = true;
    } else {
      ++c.fp;
    }
  }
  for (size_t j = 0; j < gt.size(); ++j)
    if (!used[j]) ++c.fn;
  return c;
}

inline double f1_at_k(const LabelSequence& pred, const LabelSequence& gt, int k) {
  const SegmentList sp = pred.empty() ? SegmentList{} : segments_from_labels(pred);
  const SegmentList sg = gt.empty() ? SegmentList{} : segments_from_labels(gt);
  if (sp.empty() && sg.empty()) return 100.0;
  return f1_counts_at_k(sp, sg, k).f1();
}

inline const std::vector<int>& default_f1_thresholds() {
  static const std::vector<int> ks = {10, 25, 50};
  return ks;
}

struct EvalReport {
  struct Entry {
    std::string id;
    double acc = 0, edit = 0;
    std::map<int, double> f1;
  };
  Entry corpus;            // corpus.id == "corpus"
  std::vector<Entry> videos;
};

inline EvalReport evaluate_corpus(const std::vector<std::pair<LabelSequence, LabelSequence>>& pairs,
                                  const std::vector<std::string>& ids = {},
                                  const std::vector<int>& ks = default_f1_thresholds()) {
  if (pairs.empty()) contract_fail("evaluate_corpus: need at least one (pred, gt) pair");
  EvalReport report;
  report.corpus.id = "corpus";
  long correct = 0, total = 0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto& [pred, gt] = pairs[i];
    EvalReport::Entry e;
    e.id = i < ids.size() ? ids[i] : "pair_" + std::to_string(i);
    e.acc = frame_accuracy(pred, gt);
    e.edit = edit_score(pred, gt);
    for (int k : ks) e.f1[k] = f1_at_k(pred, gt, k);
    for (size_t t = 0; t < gt.size(); ++t) correct += pred[t] == gt[t];
    total += static_cast<long>(gt.size());
    report.videos.push_back(std::move(e));
  }
  report.corpus.acc = 100.0 * static_cast<double>(correct) / static_cast<double>(total);
  for (int k : ks) report.corpus.f1[k] = 0;
  for (auto& v : report.videos) {
    report.corpus.edit += v.edit;
    for (int k : ks) report.corpus.f1[k] += v.f1[k];
  }
  report.corpus.edit /= static_cast<double>(report.videos.size());
  for (int k : ks) report.corpus.f1[k] /= static_cast<double>(report.videos.size());
  return report;
}

// ---------------------------------------------------------------------------
// Rendering. Column order follows the reporting convention F1@{10,25,50},
// Edit, Acc.
// ---------------------------------------------------------------------------

namespace detail {
inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}
}  // namespace detail

inline std::string eval_report_table(const EvalReport& r) {
  std::ostringstream os;
  auto row = [&os](const EvalReport::Entry& e) {
    os << e.id;
    for (size_t i = e.id.size(); i < 14; ++i) os << ' ';
    for (auto& [k, v] : e.f1) {
      std::string s = detail::fmt2(v);
      for (size_t i = s.size(); i < 8; ++i) os << ' ';
      os << s;
    }
    std::string se = detail::fmt2(e.edit), sa = detail::fmt2(e.acc);
    for (size_t i = se.size(); i < 8; ++i) os << ' ';
    os << se;
    for (size_t i = sa.size(); i < 8; ++i) os << ' ';
    os << sa << "\n";
  };
  os << "video         ";
  for (auto& [k, v] : r.corpus.f1) {
    std::string h = "F1@" + std::to_string(k);
    for (size_t i = h.size(); i < 8; ++i) os << ' ';
    os << h;
  }
  os << "    Edit     Acc\n";
  row(r.corpus);
  for (auto& e : r.videos) row(e);
  return os.str();
}

inline std::string eval_entry_json(const EvalReport::Entry& e) {
  char buf[64];
  std::ostringstream os;
  os << "{\"id\":\"" << e.id << "\"";
  for (auto& [k, v] : e.f1) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    os << ",\"f1@" << k << "\":" << buf;
  }
  std::snprintf(buf, sizeof(buf), "%.10g", e.edit);
  os << ",\"edit\":" << buf;
  std::snprintf(buf, sizeof(buf), "%.10g", e.acc);
  os << ",\"acc\":" << buf << "}";
  return os.str();
}

inline std::string eval_report_json(const EvalReport& r) {
  std::ostringstream os;
  os << "{\"corpus\":" << eval_entry_json(r.corpus) << ",\"videos\":[";
  for (size_t i = 0; i < r.videos.size(); ++i) {
    if (i) os << ",";
    os << eval_entry_json(r.videos[i]);
  }
  os << "]}";
  return os.str();
}

}  // namespace tseg
