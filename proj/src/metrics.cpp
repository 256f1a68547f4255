#include "scolio/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace scolio {

using Json = nlohmann::ordered_json;

ConfusionMatrix::ConfusionMatrix(int levels) : k_(levels) {
  if (levels < 0) throw std::invalid_argument("confusion matrix needs K >= 0");
  counts_.assign(static_cast<std::size_t>(levels) * levels, 0);
}

std::int64_t ConfusionMatrix::at(int truth, int pred) const {
  if (truth < 1 || truth > k_ || pred < 1 || pred > k_) {
    throw std::out_of_range("confusion index outside [1, " + std::to_string(k_) + "]");
  }
  return counts_[static_cast<std::size_t>(truth - 1) * k_ + (pred - 1)];
}

void ConfusionMatrix::add(int truth, int pred) {
  if (truth < 1 || truth > k_ || pred < 1 || pred > k_) {
    throw std::out_of_range("label outside [1, " + std::to_string(k_) + "]: truth " +
                            std::to_string(truth) + ", prediction " + std::to_string(pred));
  }
  ++counts_[static_cast<std::size_t>(truth - 1) * k_ + (pred - 1)];
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t t = 0;
  for (int j = 1; j <= k_; ++j) t += at(j, j);
  return t;
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int p = 1; p <= k_; ++p) s += at(truth, p);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int pred) const {
  std::int64_t s = 0;
  for (int t = 1; t <= k_; ++t) s += at(t, pred);
  return s;
}

ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred, int levels) {
  if (y_true.size() != y_pred.size()) {
    throw std::invalid_argument("confusion: " + std::to_string(y_true.size()) + " labels vs " +
                                std::to_string(y_pred.size()) + " predictions");
  }
  ConfusionMatrix cm(levels);
  for (std::size_t i = 0; i < y_true.size(); ++i) cm.add(y_true[i], y_pred[i]);
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) throw std::invalid_argument("accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(n);
}

double mae(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) throw std::invalid_argument("mae: length mismatch");
  if (y_true.empty()) throw std::invalid_argument("mae of empty input");
  std::int64_t s = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) s += std::abs(y_true[i] - y_pred[i]);
  return static_cast<double>(s) / static_cast<double>(y_true.size());
}

double mae(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) throw std::invalid_argument("mae of an empty confusion matrix");
  std::int64_t s = 0;
  for (int t = 1; t <= cm.levels(); ++t) {
    for (int p = 1; p <= cm.levels(); ++p) s += cm.at(t, p) * std::abs(t - p);
  }
  return static_cast<double>(s) / static_cast<double>(n);
}

Rates rates(const Counts& c) {
  auto ratio = [](std::int64_t num, std::int64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  return {ratio(c.tp, c.tp + c.fn), ratio(c.tn, c.tn + c.fp), ratio(c.tp, c.tp + c.fp),
          ratio(c.tn, c.tn + c.fn)};
}

Counts one_vs_rest_counts(const ConfusionMatrix& cm, int level) {
  Counts c;
  c.tp = cm.at(level, level);
  c.fn = cm.row_sum(level) - c.tp;
  c.fp = cm.col_sum(level) - c.tp;
  c.tn = cm.total() - c.tp - c.fn - c.fp;
  return c;
}

Rates one_vs_rest(const ConfusionMatrix& cm, int level) {
  return rates(one_vs_rest_counts(cm, level));
}

Rates micro_average(const ConfusionMatrix& cm) {
  Counts pooled;
  for (int j = 1; j <= cm.levels(); ++j) {
    const Counts c = one_vs_rest_counts(cm, j);
    pooled.tp += c.tp;
    pooled.fn += c.fn;
    pooled.fp += c.fp;
    pooled.tn += c.tn;
  }
  Rates r = rates(pooled);
  return {r.re, r.sp, std::nullopt, std::nullopt};
}

double kappa(const ConfusionMatrix& cm) {
  const double n = static_cast<double>(cm.total());
  if (n == 0) throw std::invalid_argument("kappa of an empty confusion matrix");
  const double po = static_cast<double>(cm.trace()) / n;
  double pe = 0.0;
  for (int j = 1; j <= cm.levels(); ++j) {
    pe += static_cast<double>(cm.row_sum(j)) * static_cast<double>(cm.col_sum(j));
  }
  pe /= n * n;
  if (pe == 1.0) return 1.0;
  return (po - pe) / (1.0 - pe);
}

RocCurve roc_auc(std::span<const double> scores, std::span<const bool> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc: length mismatch");
  std::int64_t pos = 0;
  for (bool l : labels) pos += l ? 1 : 0;
  const std::int64_t neg = static_cast<std::int64_t>(labels.size()) - pos;
  if (pos == 0 || neg == 0) {
    throw std::invalid_argument("roc needs at least one positive and one negative sample");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (double s : scores) {
    if (std::isnan(s)) throw std::invalid_argument("roc: NaN score");
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos)});
  }
  // trapezoids in integer units keep the area exact before the final division
  double area2 = 0.0;  // twice the area times pos * neg
  std::int64_t prev_tp = 0, prev_fp = 0;
  tp = fp = 0;
  i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
    area2 += static_cast<double>((fp - prev_fp) * (tp + prev_tp));
    prev_tp = tp;
    prev_fp = fp;
  }
  curve.auc = area2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

MetricsReport evaluate(std::span<const int> y_true, std::span<const int> y_pred, int levels,
                       const std::vector<std::vector<double>>& scores) {
  MetricsReport r;
  r.levels = levels;
  r.cm = confusion(y_true, y_pred, levels);
  r.samples = r.cm.total();
  r.acc = accuracy(r.cm);
  r.mae = mae(y_true, y_pred);
  r.kappa = kappa(r.cm);
  for (int j = 1; j <= levels; ++j) r.per_level.push_back(one_vs_rest(r.cm, j));
  r.micro = micro_average(r.cm);
  if (!scores.empty()) {
    if (scores.size() != y_true.size()) throw std::invalid_argument("evaluate: score count");
    for (int j = 1; j <= levels; ++j) {
      std::vector<double> s(scores.size());
      auto lab = std::make_unique<bool[]>(scores.size());
      bool any_pos = false, any_neg = false;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i].size() != static_cast<std::size_t>(levels)) {
          throw std::invalid_argument("evaluate: expected one score per level");
        }
        s[i] = scores[i][static_cast<std::size_t>(j - 1)];
        lab[i] = y_true[i] == j;
        (lab[i] ? any_pos : any_neg) = true;
      }
      if (any_pos && any_neg) {
        r.roc.push_back(roc_auc(s, std::span<const bool>(lab.get(), scores.size())));
      } else {
        r.roc.push_back(std::nullopt);
      }
    }
  }
  return r;
}

MetricsReport average_reports(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("no reports to average");
  MetricsReport avg;
  avg.levels = reports.front().levels;
  avg.cm = ConfusionMatrix(avg.levels);
  const double n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    if (r.levels != avg.levels) throw std::invalid_argument("averaging reports of different K");
    avg.acc += r.acc / n;
    avg.mae += r.mae / n;
    avg.kappa += r.kappa / n;
    avg.samples += r.samples;
    for (int t = 1; t <= avg.levels; ++t) {
      for (int p = 1; p <= avg.levels; ++p) {
        for (std::int64_t c = r.cm.at(t, p); c > 0; --c) avg.cm.add(t, p);
      }
    }
  }
  auto mean_of = [&](auto member, int level) -> std::optional<double> {
    double s = 0.0;
    int m = 0;
    for (const auto& r : reports) {
      const auto v = r.per_level[static_cast<std::size_t>(level)].*member;
      if (v) s += *v, ++m;
    }
    if (m == 0) return std::nullopt;
    return s / m;
  };
  for (int j = 0; j < avg.levels; ++j) {
    avg.per_level.push_back({mean_of(&Rates::re, j), mean_of(&Rates::sp, j),
                             mean_of(&Rates::pr, j), mean_of(&Rates::npv, j)});
  }
  avg.micro = micro_average(avg.cm);
  const bool have_roc = std::all_of(reports.begin(), reports.end(),
                                    [&](const auto& r) { return !r.roc.empty(); });
  if (have_roc) {
    for (int j = 0; j < avg.levels; ++j) {
      double s = 0.0;
      int m = 0;
      for (const auto& r : reports) {
        if (const auto& c = r.roc[static_cast<std::size_t>(j)]) s += c->auc, ++m;
      }
      if (m == 0) {
        avg.roc.push_back(std::nullopt);
      } else {
        avg.roc.push_back(RocCurve{{}, s / m});
      }
    }
  }
  return avg;
}

namespace {

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json to_json(const MetricsReport& r) {
  Json j;
  j["samples"] = r.samples;
  j["acc"] = r.acc;
  j["mae"] = r.mae;
  j["kappa"] = r.kappa;
  Json levels = Json::array();
  for (std::size_t i = 0; i < r.per_level.size(); ++i) {
    const auto& p = r.per_level[i];
    levels.push_back({{"level", i + 1},
                      {"re", opt(p.re)},
                      {"sp", opt(p.sp)},
                      {"pr", opt(p.pr)},
                      {"npv", opt(p.npv)}});
  }
  j["levels"] = levels;
  j["micro"] = {{"re", opt(r.micro.re)}, {"sp", opt(r.micro.sp)}};
  Json roc = Json::array();
  for (std::size_t i = 0; i < r.roc.size(); ++i) {
    if (!r.roc[i]) {
      roc.push_back({{"level", i + 1}, {"auc", nullptr}, {"points", Json::array()}});
      continue;
    }
    Json pts = Json::array();
    for (const auto& p : r.roc[i]->points) pts.push_back({p.fpr, p.tpr});
    roc.push_back({{"level", i + 1}, {"auc", r.roc[i]->auc}, {"points", pts}});
  }
  j["roc"] = roc;
  Json cm = Json::array();
  for (int t = 1; t <= r.cm.levels(); ++t) {
    Json row = Json::array();
    for (int p = 1; p <= r.cm.levels(); ++p) row.push_back(r.cm.at(t, p));
    cm.push_back(row);
  }
  j["confusion"] = cm;
  return j;
}

}  // namespace

std::string report_json(const MetricsReport& r, int indent) { return to_json(r).dump(indent); }

void write_confusion_csv(const std::filesystem::path& file, const ConfusionMatrix& cm) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error(file.string() + ": cannot open for writing");
  out << "truth";
  for (int p = 1; p <= cm.levels(); ++p) out << ",pred_" << p;
  out << '\n';
  for (int t = 1; t <= cm.levels(); ++t) {
    out << t;
    for (int p = 1; p <= cm.levels(); ++p) out << ',' << cm.at(t, p);
    out << '\n';
  }
  if (!out) throw std::runtime_error(file.string() + ": write failed");
}

void write_roc_csv(const std::filesystem::path& file, const MetricsReport& r) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error(file.string() + ": cannot open for writing");
  out << "level,fpr,tpr\n";
  char buf[96];
  for (std::size_t i = 0; i < r.roc.size(); ++i) {
    if (!r.roc[i]) continue;
    for (const auto& p : r.roc[i]->points) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i + 1, p.fpr, p.tpr);
      out << buf;
    }
  }
  if (!out) throw std::runtime_error(file.string() + ": write failed");
}

}  // namespace scolio
