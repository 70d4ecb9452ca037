#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "orchard/errors.hpp"

namespace orchard::metrics {

// C x C counts; entry [i][j] = samples of true class i predicted as class j.
class ConfusionMatrix {
 public:
  ConfusionMatrix(std::size_t num_classes, std::vector<std::string> class_names = {})
      : num_classes_(num_classes), counts_(num_classes * num_classes, 0),
        class_names_(std::move(class_names)) {
    if (num_classes == 0) throw contract_error("confusion_matrix: needs at least one class");
    if (class_names_.empty()) {
      for (std::size_t c = 0; c < num_classes; ++c) class_names_.push_back("class" + std::to_string(c));
    }
    if (class_names_.size() != num_classes_) {
      throw contract_error("confusion_matrix: class-name count mismatch");
    }
  }

  std::size_t num_classes() const { return num_classes_; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  std::size_t at(std::size_t true_class, std::size_t pred_class) const {
    check_class(true_class);
    check_class(pred_class);
    return counts_[true_class * num_classes_ + pred_class];
  }

  void add(std::size_t true_class, std::size_t pred_class) {
    check_class(true_class);
    check_class(pred_class);
    ++counts_[true_class * num_classes_ + pred_class];
  }

  std::size_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

  std::size_t trace() const {
    std::size_t t = 0;
    for (std::size_t c = 0; c < num_classes_; ++c) t += counts_[c * num_classes_ + c];
    return t;
  }

  double accuracy() const {
    const std::size_t n = total();
    if (n == 0) throw contract_error("confusion_matrix: accuracy of empty matrix");
    return static_cast<double>(trace()) / static_cast<double>(n);
  }

  std::size_t row_sum(std::size_t c) const {
    check_class(c);
    std::size_t s = 0;
    for (std::size_t j = 0; j < num_classes_; ++j) s += counts_[c * num_classes_ + j];
    return s;
  }

  std::size_t col_sum(std::size_t c) const {
    check_class(c);
    std::size_t s = 0;
    for (std::size_t i = 0; i < num_classes_; ++i) s += counts_[i * num_classes_ + c];
    return s;
  }

 private:
  void check_class(std::size_t c) const {
    if (c >= num_classes_) {
      throw index_error("confusion_matrix: class id " + std::to_string(c) + " out of range");
    }
  }

  std::size_t num_classes_;
  std::vector<std::size_t> counts_;
  std::vector<std::string> class_names_;
};

inline ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& pred_class_ids,
                                        const std::vector<std::size_t>& true_class_ids,
                                        std::size_t num_classes,
                                        std::vector<std::string> class_names = {}) {
  if (pred_class_ids.size() != true_class_ids.size()) {
    throw contract_error("confusion_matrix: prediction/truth length mismatch");
  }
  if (pred_class_ids.empty()) throw contract_error("confusion_matrix: empty input");
  ConfusionMatrix cm(num_classes, std::move(class_names));
  for (std::size_t i = 0; i < pred_class_ids.size(); ++i) {
    cm.add(true_class_ids[i], pred_class_ids[i]);
  }
  return cm;
}

// One-vs-rest rates for a class. A zero denominator yields the defined value
// 0 and raises the matching flag instead of producing NaN.
struct RatePair {
  double tpr = 0.0;
  double fpr = 0.0;
  bool tpr_degenerate = false;  // TP + FN == 0
  bool fpr_degenerate = false;  // FP + TN == 0
};

inline RatePair tpr_fpr(const ConfusionMatrix& cm, std::size_t class_id) {
  const std::size_t tp = cm.at(class_id, class_id);
  const std::size_t fn = cm.row_sum(class_id) - tp;
  const std::size_t fp = cm.col_sum(class_id) - tp;
  const std::size_t tn = cm.total() - tp - fn - fp;
  RatePair r;
  if (tp + fn == 0) {
    r.tpr_degenerate = true;
  } else {
    r.tpr = static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  if (fp + tn == 0) {
    r.fpr_degenerate = true;
  } else {
    r.fpr = static_cast<double>(fp) / static_cast<double>(fp + tn);
  }
  return r;
}

struct RocPoint {
  double threshold;  // +inf / -inf sentinels at the ends
  double fpr;
  double tpr;
};

struct RocCurve {
  std::size_t class_id = 0;
  std::vector<RocPoint> points;
};

// Threshold sweep over the distinct score values, descending; positive iff
// score >= threshold. Sentinels pin the endpoints (0,0) and (1,1).
inline RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& truth,
                          std::size_t class_id = 0) {
  if (scores.size() != truth.size()) throw contract_error("roc_curve: score/truth length mismatch");
  std::size_t pos = 0, neg = 0;
  for (int t : truth) {
    if (t == 1) ++pos;
    else ++neg;
  }
  if (pos == 0 || neg == 0) {
    throw contract_error("roc_curve: degenerate single-class truth (pos=" + std::to_string(pos) +
                         " neg=" + std::to_string(neg) + ")");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  RocCurve curve;
  curve.class_id = class_id;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      if (truth[order[i]] == 1) ++tp;
      else ++fp;
      ++i;
    }
    curve.points.push_back({t, static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos)});
  }
  curve.points.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0});
  return curve;
}

// Trapezoidal integral of TPR over FPR.
inline double auc(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i - 1];
    const RocPoint& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  return area;
}

struct ClassAuc {
  std::size_t class_id = 0;
  std::string class_name;
  double auc = 0.0;
  // False when the class is absent from the truth (or has no negatives), in
  // which case it is excluded from the macro average.
  bool included = true;
};

struct MetricsReport {
  double accuracy = 0.0;
  ConfusionMatrix confusion{1};
  std::vector<ClassAuc> per_class_auc;
  double macro_auc = 0.0;
  std::size_t macro_class_count = 0;
  std::vector<RocCurve> curves;  // only for included classes
};

// Builds the full evaluation bundle from an N x C score matrix (rows are
// probability vectors) and integer truth labels. Predictions are argmax with
// ties broken toward the lowest class index.
inline MetricsReport report(const std::vector<double>& scores, const std::vector<std::size_t>& truth,
                            std::size_t num_classes, std::vector<std::string> class_names = {}) {
  const std::size_t n = truth.size();
  if (n == 0) throw contract_error("metrics report: empty evaluation");
  if (scores.size() != n * num_classes) {
    throw contract_error("metrics report: score matrix is not N x C");
  }
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0;
    for (std::size_t c = 0; c < num_classes; ++c) row += scores[i * num_classes + c];
    if (std::abs(row - 1.0) > 1e-5) {
      throw contract_error("metrics report: score row " + std::to_string(i) +
                           " sums to " + std::to_string(row) + ", expected 1");
    }
  }

  std::vector<std::size_t> preds(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < num_classes; ++c) {
      if (scores[i * num_classes + c] > scores[i * num_classes + best]) best = c;
    }
    preds[i] = best;
  }

  MetricsReport rep;
  rep.confusion = confusion_matrix(preds, truth, num_classes, std::move(class_names));
  rep.accuracy = rep.confusion.accuracy();

  double auc_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    ClassAuc entry;
    entry.class_id = c;
    entry.class_name = rep.confusion.class_names()[c];
    std::vector<double> class_scores(n);
    std::vector<int> class_truth(n);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      class_scores[i] = scores[i * num_classes + c];
      class_truth[i] = truth[i] == c ? 1 : 0;
      pos += class_truth[i];
    }
    if (pos == 0 || pos == n) {
      entry.included = false;  // absent from truth, or no negatives to rank against
    } else {
      RocCurve curve = roc_curve(class_scores, class_truth, c);
      entry.auc = auc(curve);
      auc_sum += entry.auc;
      ++rep.macro_class_count;
      rep.curves.push_back(std::move(curve));
    }
    rep.per_class_auc.push_back(std::move(entry));
  }
  rep.macro_auc = rep.macro_class_count ? auc_sum / static_cast<double>(rep.macro_class_count) : 0.0;
  return rep;
}

// --- exports -----------------------------------------------------------------

inline std::string format_threshold(double t) {
  if (t == std::numeric_limits<double>::infinity()) return "inf";
  if (t == -std::numeric_limits<double>::infinity()) return "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", t);
  return buf;
}

inline std::string roc_to_csv(const RocCurve& curve) {
  std::ostringstream os;
  os << "threshold,fpr,tpr\n";
  char buf[96];
  for (const RocPoint& p : curve.points) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g\n", format_threshold(p.threshold).c_str(), p.fpr,
                  p.tpr);
    os << buf;
  }
  return os.str();
}

inline std::string report_to_text(const MetricsReport& rep) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "accuracy %.6f\n", rep.accuracy);
  os << buf;
  os << "confusion matrix (rows = truth, cols = prediction):\n";
  const auto& cm = rep.confusion;
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    os << "  " << cm.class_names()[i] << ":";
    for (std::size_t j = 0; j < cm.num_classes(); ++j) os << ' ' << cm.at(i, j);
    os << '\n';
  }
  for (const ClassAuc& e : rep.per_class_auc) {
    if (e.included) {
      std::snprintf(buf, sizeof(buf), "auc[%s] %.6f\n", e.class_name.c_str(), e.auc);
      os << buf;
    } else {
      std::snprintf(buf, sizeof(buf), "auc[%s] n/a (class not rankable in truth)\n",
                    e.class_name.c_str());
      os << buf;
    }
  }
  std::snprintf(buf, sizeof(buf), "macro_auc %.6f (over %zu classes)\n", rep.macro_auc,
                rep.macro_class_count);
  os << buf;
  return os.str();
}

inline std::string report_to_csv(const MetricsReport& rep) {
  std::ostringstream os;
  char buf[128];
  os << "metric,class,value\n";
  std::snprintf(buf, sizeof(buf), "accuracy,,%.9g\n", rep.accuracy);
  os << buf;
  const auto& cm = rep.confusion;
  for (std::size_t i = 0; i < cm.num_classes(); ++i)
    for (std::size_t j = 0; j < cm.num_classes(); ++j) {
      os << "confusion," << cm.class_names()[i] << ">" << cm.class_names()[j] << "," << cm.at(i, j)
         << "\n";
    }
  for (const ClassAuc& e : rep.per_class_auc) {
    if (e.included) {
      std::snprintf(buf, sizeof(buf), "auc,%s,%.9g\n", e.class_name.c_str(), e.auc);
      os << buf;
    } else {
      std::snprintf(buf, sizeof(buf), "auc,%s,excluded\n", e.class_name.c_str());
      os << buf;
    }
  }
  std::snprintf(buf, sizeof(buf), "macro_auc,,%.9g\n", rep.macro_auc);
  os << buf;
  return os.str();
}

}  // namespace orchard::metrics
