#pragma once

// Evaluation metrics on binary masks and probability maps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualswin/errors.hpp"

namespace dualswin {

/// Pixel-level confusion counts.
struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts confusion_counts(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred) {
  if (truth.size() != pred.size()) throw ShapeError("confusion: mask sizes differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] != 0, p = pred[i] != 0;
    if (t && p) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// |A∩B| / |A∪B|; two empty masks score 1.
inline double jaccard(const ConfusionCounts& c) {
  const auto uni = c.tp + c.fp + c.fn;
  return uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
}

/// 2|A∩B| / (|A| + |B|); two empty masks score 1.
inline double dice_coeff(const ConfusionCounts& c) {
  const auto sizes = 2 * c.tp + c.fp + c.fn;
  return sizes == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(sizes);
}

inline double jaccard(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  return jaccard(confusion_counts(a, b));
}
inline double dice_coeff(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  return dice_coeff(confusion_counts(a, b));
}

/// Confusion rates of one image, normalised by |truth ∪ prediction| so that
/// tp + fp + fn = 1. Raw counts are kept alongside.
struct ConfusionRates {
  double tp = 0, fp = 0, fn = 0, f1 = 0;
  ConfusionCounts counts;
};

inline ConfusionRates confusion(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred) {
  ConfusionRates r;
  r.counts = confusion_counts(truth, pred);
  const auto& c = r.counts;
  const auto uni = c.tp + c.fp + c.fn;
  if (uni == 0) {
    r.tp = 1.0;
    r.f1 = 1.0;
    return r;
  }
  r.tp = static_cast<double>(c.tp) / uni;
  r.fp = static_cast<double>(c.fp) / uni;
  r.fn = static_cast<double>(c.fn) / uni;
  r.f1 = 2.0 * c.tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
  return r;
}

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (∞, 0, 0) to the lowest score at (1, 1)
  double auc = 0;
};

/// ROC over pooled scores: one point per distinct score (ties grouped),
/// trapezoidal area. Throws std::domain_error for single-class labels.
template <class Score>
RocCurve roc_auc(std::span<const Score> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_auc: scores and labels differ in length");
  std::uint64_t pos = 0;
  for (auto l : labels) pos += l != 0;
  const std::uint64_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw std::domain_error("roc_auc: AUC is undefined for single-class labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::uint64_t tp = 0, fp = 0;
  double area = 0;
  for (std::size_t i = 0; i < order.size();) {
    const Score s = scores[order[i]];
    const std::uint64_t tp0 = tp, fp0 = fp;
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
    // trapezoid in count space, normalised once at the end
    area += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0) / 2.0;
    curve.points.push_back({static_cast<double>(s), static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
  }
  curve.auc = area / (static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

/// Aggregate metrics of one decoder over a test set.
struct MetricsReport {
  std::string label;
  double jaccard = 0, dice = 0;
  double tp = 0, fp = 0, fn = 0, f1 = 0;
  double auc = std::numeric_limits<double>::quiet_NaN();
  double latency_mean_s = std::numeric_limits<double>::quiet_NaN();
  double latency_std_s = std::numeric_limits<double>::quiet_NaN();
  ConfusionCounts counts;  // summed raw pixel counts
  std::size_t images = 0;
};

/// Per-image accumulation (means of per-image scores) plus pooled pixel scores
/// for the dataset-level ROC curve.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(std::string label, bool pool_scores = true)
      : label_(std::move(label)), pool_(pool_scores) {}

  struct ImageResult {
    double jaccard, dice;
    ConfusionRates rates;
  };

  ImageResult add(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred,
                  std::span<const float> prob = {}) {
    ImageResult r{0, 0, confusion(truth, pred)};
    r.jaccard = jaccard(r.rates.counts);
    r.dice = dice_coeff(r.rates.counts);
    sum_jaccard_ += r.jaccard;
    sum_dice_ += r.dice;
    sum_tp_ += r.rates.tp;
    sum_fp_ += r.rates.fp;
    sum_fn_ += r.rates.fn;
    sum_f1_ += r.rates.f1;
    counts_ += r.rates.counts;
    ++images_;
    if (pool_ && !prob.empty()) {
      if (prob.size() != truth.size()) throw ShapeError("metrics: probability map size mismatch");
      scores_.insert(scores_.end(), prob.begin(), prob.end());
      labels_.insert(labels_.end(), truth.begin(), truth.end());
    }
    return r;
  }

  std::size_t images() const { return images_; }

  RocCurve roc() const { return roc_auc<float>(scores_, labels_); }

  MetricsReport report() const {
    if (images_ == 0) throw std::logic_error("metrics: no images accumulated");
    MetricsReport m;
    m.label = label_;
    const double n = static_cast<double>(images_);
    m.jaccard = sum_jaccard_ / n;
    m.dice = sum_dice_ / n;
    m.tp = sum_tp_ / n;
    m.fp = sum_fp_ / n;
    m.fn = sum_fn_ / n;
    m.f1 = sum_f1_ / n;
    m.counts = counts_;
    m.images = images_;
    if (!scores_.empty()) {
      try {
        m.auc = roc().auc;
      } catch (const std::domain_error&) {
        // single-class pixels: AUC stays NaN
      }
    }
    return m;
  }

 private:
  std::string label_;
  bool pool_;
  double sum_jaccard_ = 0, sum_dice_ = 0, sum_tp_ = 0, sum_fp_ = 0, sum_fn_ = 0, sum_f1_ = 0;
  ConfusionCounts counts_;
  std::size_t images_ = 0;
  std::vector<float> scores_;
  std::vector<std::uint8_t> labels_;
};

inline void write_metrics_header(std::ostream& os) {
  os << "variant,jaccard,dice,tp,fp,fn,f1,auc,latency_mean_s,latency_std_s\n";
}

inline void write_metrics_row(std::ostream& os, const MetricsReport& m) {
  os << m.label << ',' << m.jaccard << ',' << m.dice << ',' << m.tp << ',' << m.fp << ',' << m.fn << ','
     << m.f1 << ',' << m.auc << ',' << m.latency_mean_s << ',' << m.latency_std_s << '\n';
}

inline void write_roc_csv(std::ostream& os, const RocCurve& curve) {
  os << "threshold,fpr,tpr\n";
  for (const auto& p : curve.points) os << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
}

}  // namespace dualswin
