#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scolio {

/// K x K counts, rows = ground truth, columns = prediction, levels 1-based.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int levels = 0);

  int levels() const { return k_; }
  std::int64_t at(int truth, int pred) const;  // 1-based
  void add(int truth, int pred);
  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(int truth) const;
  std::int64_t col_sum(int pred) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_ = 0;
  std::vector<std::int64_t> counts_;
};

ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred, int levels);

double accuracy(const ConfusionMatrix& cm);
double mae(std::span<const int> y_true, std::span<const int> y_pred);
/// Mean |truth - pred| computed from the matrix.
double mae(const ConfusionMatrix& cm);

struct Counts {
  std::int64_t tp = 0, fn = 0, fp = 0, tn = 0;
};

/// Rates with a zero denominator are left empty.
struct Rates {
  std::optional<double> re, sp, pr, npv;
};

Rates rates(const Counts& c);
Counts one_vs_rest_counts(const ConfusionMatrix& cm, int level);
Rates one_vs_rest(const ConfusionMatrix& cm, int level);
/// Pooled TP/FN/FP/TN over every level, then recall and specificity.
Rates micro_average(const ConfusionMatrix& cm);

double kappa(const ConfusionMatrix& cm);

struct RocPoint {
  double fpr = 0.0, tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;
};

/// Threshold sweep (score >= t is positive) at +inf, the midpoints between
/// consecutive distinct scores, and -inf. Equal scores move together, so
/// ties contribute half a concordant pair to the area.
RocCurve roc_auc(std::span<const double> scores, std::span<const bool> labels);

struct MetricsReport {
  int levels = 0;
  double acc = 0.0, mae = 0.0, kappa = 0.0;
  std::vector<Rates> per_level;
  Rates micro;
  std::vector<std::optional<RocCurve>> roc;  // empty where a level lacks positives or negatives
  ConfusionMatrix cm;
  std::int64_t samples = 0;
};

/// scores[i] holds one score per level for sample i (may be empty to skip ROC).
MetricsReport evaluate(std::span<const int> y_true, std::span<const int> y_pred, int levels,
                       const std::vector<std::vector<double>>& scores = {});

/// Mean of acc/mae/kappa and of each defined per-level rate across reports.
MetricsReport average_reports(const std::vector<MetricsReport>& reports);

/// JSON object text for one report (keys acc, mae, kappa, levels, micro, roc, confusion).
std::string report_json(const MetricsReport& r, int indent = 2);
void write_confusion_csv(const std::filesystem::path& file, const ConfusionMatrix& cm);
/// Rows `level,fpr,tpr`, one block per level.
void write_roc_csv(const std::filesystem::path& file, const MetricsReport& r);

}  // namespace scolio
