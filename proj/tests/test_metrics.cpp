#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>

#include "scolio/metrics.hpp"
#include "scolio/rng.hpp"
#include "support.hpp"

using namespace scolio;

namespace {

ConfusionMatrix from_counts(const std::vector<std::vector<int>>& m) {
  ConfusionMatrix cm(static_cast<int>(m.size()));
  for (std::size_t t = 0; t < m.size(); ++t)
    for (std::size_t p = 0; p < m.size(); ++p)
      for (int i = 0; i < m[t][p]; ++i) cm.add(static_cast<int>(t + 1), static_cast<int>(p + 1));
  return cm;
}

ConfusionMatrix random_cm(Rng& rng, int k) {
  ConfusionMatrix cm(k);
  const int n = 1 + static_cast<int>(rng.below(300));
  for (int i = 0; i < n; ++i) {
    cm.add(1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(k))),
           1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(k))));
  }
  return cm;
}

// Normalized Mann-Whitney U over every positive/negative pair.
double mann_whitney(const std::vector<double>& s, const std::vector<bool>& y) {
  double u = 0.0;
  std::int64_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    ++pos;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      u += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  for (bool b : y) neg += b ? 0 : 1;
  return u / static_cast<double>(pos * neg);
}

RocCurve roc(const std::vector<double>& s, const std::vector<bool>& y) {
  const std::unique_ptr<bool[]> labels(new bool[y.size()]);
  std::copy(y.begin(), y.end(), labels.get());
  return roc_auc(s, std::span<const bool>(labels.get(), y.size()));
}

}  // namespace

TEST_CASE("confusion examples") {
  const std::vector<int> t{1, 2, 3, 4}, p{1, 2, 3, 4};
  const auto cm = confusion(t, p, 4);
  for (int i = 1; i <= 4; ++i)
    for (int j = 1; j <= 4; ++j) CHECK(cm.at(i, j) == (i == j ? 1 : 0));
  const std::vector<int> t2{1, 2}, p2{2, 1};
  const auto anti = confusion(t2, p2, 2);
  CHECK(anti == from_counts({{0, 1}, {1, 0}}));
  const std::vector<int> bad{1, 5};
  CHECK_THROWS_AS(confusion(t2, bad, 4), std::out_of_range);
  CHECK_THROWS_AS(confusion(t2, std::vector<int>{1}, 4), std::invalid_argument);
}

TEST_CASE("confusion matches naive counting on 200 random labels") {
  Rng rng(0);
  std::vector<int> t(200), p(200);
  for (std::size_t i = 0; i < 200; ++i) {
    t[i] = 1 + static_cast<int>(rng.below(10));
    p[i] = 1 + static_cast<int>(rng.below(10));
  }
  const auto cm = confusion(t, p, 10);
  for (int a = 1; a <= 10; ++a)
    for (int b = 1; b <= 10; ++b) {
      std::int64_t n = 0;
      for (std::size_t i = 0; i < 200; ++i) n += (t[i] == a && p[i] == b) ? 1 : 0;
      CHECK(cm.at(a, b) == n);
    }
  CHECK(cm.total() == 200);
}

TEST_CASE("accuracy and mae examples") {
  const std::vector<int> t{1, 1, 4}, p{1, 2, 1};
  CHECK(accuracy(confusion(t, p, 4)) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(mae(t, p) == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
  CHECK(mae(confusion(t, p, 4)) == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
  CHECK(accuracy(confusion(t, t, 4)) == 1.0);
  CHECK(mae(t, t) == 0.0);
  CHECK(mae(p, t) == mae(t, p));
  const std::vector<int> none;
  CHECK_THROWS_AS(mae(none, none), std::invalid_argument);
  CHECK_THROWS_AS(accuracy(ConfusionMatrix(4)), std::invalid_argument);
}

TEST_CASE("one-vs-rest examples") {
  const auto diag = from_counts({{3, 0, 0}, {0, 2, 0}, {0, 0, 5}});
  for (int j = 1; j <= 3; ++j) {
    const Rates r = one_vs_rest(diag, j);
    CHECK(*r.re == 1.0);
    CHECK(*r.sp == 1.0);
    CHECK(*r.pr == 1.0);
    CHECK(*r.npv == 1.0);
  }
  const auto even = from_counts({{1, 1}, {1, 1}});
  const Counts c = one_vs_rest_counts(even, 1);
  CHECK(c.tp == 1);
  CHECK(c.fn == 1);
  CHECK(c.fp == 1);
  CHECK(c.tn == 1);
  const Rates r = one_vs_rest(even, 1);
  CHECK(*r.re == 0.5);
  CHECK(*r.sp == 0.5);
  CHECK(*r.pr == 0.5);
  CHECK(*r.npv == 0.5);
}

TEST_CASE("zero denominators are undefined, not zero") {
  const auto cm = from_counts({{2, 0, 0}, {1, 0, 0}, {0, 0, 3}});
  const Rates r2 = one_vs_rest(cm, 2);
  CHECK_FALSE(r2.pr.has_value());  // level 2 never predicted
  CHECK(*r2.re == 0.0);
  const Rates only = rates(Counts{0, 0, 0, 4});
  CHECK_FALSE(only.re.has_value());
  CHECK(*only.sp == 1.0);
}

TEST_CASE("micro recall equals accuracy on 100 random matrices") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto cm = random_cm(rng, 2 + static_cast<int>(rng.below(9)));
    const Rates m = micro_average(cm);
    CHECK(*m.re == accuracy(cm));
    Counts pooled;
    for (int j = 1; j <= cm.levels(); ++j) {
      const Counts c = one_vs_rest_counts(cm, j);
      pooled.tp += c.tp;
      pooled.fn += c.fn;
      pooled.fp += c.fp;
      pooled.tn += c.tn;
    }
    CHECK(*m.sp == static_cast<double>(pooled.tn) / static_cast<double>(pooled.tn + pooled.fp));
  }
  const auto diag = from_counts({{1, 0}, {0, 1}});
  CHECK(*micro_average(diag).re == 1.0);
  CHECK(*micro_average(diag).sp == 1.0);
}

TEST_CASE("kappa fixtures") {
  CHECK(kappa(from_counts({{5, 0}, {0, 5}})) == 1.0);
  CHECK(kappa(from_counts({{1, 1}, {1, 1}})) == 0.0);
  CHECK(kappa(from_counts({{4, 0}, {0, 0}})) == 1.0);
  // p_o = 0.7, p_e = (0.5*0.6 + 0.5*0.4) = 0.5
  CHECK(kappa(from_counts({{4, 1}, {2, 3}})) == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("kappa is invariant under a joint row and column permutation") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 4;
    const auto cm = random_cm(rng, k);
    std::vector<int> perm{1, 2, 3, 4};
    rng.shuffle(perm.begin(), perm.end());
    ConfusionMatrix permuted(k);
    for (int a = 1; a <= k; ++a)
      for (int b = 1; b <= k; ++b)
        for (std::int64_t n = 0; n < cm.at(a, b); ++n)
          permuted.add(perm[static_cast<std::size_t>(a - 1)], perm[static_cast<std::size_t>(b - 1)]);
    CHECK(kappa(permuted) == doctest::Approx(kappa(cm)).epsilon(1e-12));
  }
}

TEST_CASE("roc examples") {
  const RocCurve perfect = roc({0.9, 0.1}, {true, false});
  CHECK(perfect.auc == 1.0);
  CHECK(perfect.points.front().fpr == 0.0);
  CHECK(perfect.points.back().tpr == 1.0);
  CHECK(roc({0.3, 0.3, 0.3, 0.3}, {true, false, true, false}).auc == 0.5);
  CHECK_THROWS_AS(roc({0.1, 0.2}, {true, true}), std::invalid_argument);
}

TEST_CASE("auc equals the Mann-Whitney statistic on 100 random score sets") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> s(n);
    std::vector<bool> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.uniform() * 10.0) / 10.0;  // coarse grid forces ties
      y[i] = rng.bernoulli(0.4);
    }
    y[0] = true;
    y[1] = false;
    const RocCurve c = roc(s, y);
    CHECK(std::abs(c.auc - mann_whitney(s, y)) <= 1e-12);
    for (std::size_t i = 1; i < c.points.size(); ++i) {
      CHECK(c.points[i].fpr >= c.points[i - 1].fpr);
      CHECK(c.points[i].tpr >= c.points[i - 1].tpr);
    }
  }
}

TEST_CASE("evaluate and its serializations") {
  const std::vector<int> t{1, 2, 3, 4, 4, 2}, p{1, 2, 4, 4, 3, 2};
  std::vector<std::vector<double>> scores;
  for (int level : p) {
    std::vector<double> s(4, 0.1);
    s[static_cast<std::size_t>(level - 1)] = 0.7;
    scores.push_back(s);
  }
  const MetricsReport r = evaluate(t, p, 4, scores);
  CHECK(r.samples == 6);
  CHECK(r.acc == doctest::Approx(4.0 / 6.0));
  CHECK(r.mae == doctest::Approx(2.0 / 6.0));
  CHECK(r.per_level.size() == 4);
  REQUIRE(r.roc.size() == 4);
  CHECK(r.roc[0].has_value());

  const auto j = nlohmann::json::parse(report_json(r));
  for (const char* key : {"acc", "mae", "kappa", "levels", "micro", "roc", "confusion"})
    CHECK(j.contains(key));
  CHECK(j["levels"].size() == 4);
  CHECK(j["levels"][0].contains("npv"));
  CHECK(j["roc"][1].contains("auc"));

  const auto dir = scolio::test::scratch_dir("metrics");
  write_confusion_csv(dir / "cm.csv", r.cm);
  write_roc_csv(dir / "roc.csv", r);
  std::ifstream cm_in(dir / "cm.csv");
  std::string line;
  std::getline(cm_in, line);
  CHECK(line == "truth,pred_1,pred_2,pred_3,pred_4");
  int rows = 0;
  while (std::getline(cm_in, line)) ++rows;
  CHECK(rows == 4);
  std::ifstream roc_in(dir / "roc.csv");
  std::getline(roc_in, line);
  CHECK(line == "level,fpr,tpr");
  std::set<std::string> levels;
  while (std::getline(roc_in, line)) levels.insert(line.substr(0, line.find(',')));
  CHECK(levels == std::set<std::string>{"1", "2", "3", "4"});
}

TEST_CASE("average of reports") {
  const std::vector<int> t1{1, 2}, p1{1, 2}, t2{1, 2}, p2{2, 2};
  const auto a = evaluate(t1, p1, 2);
  const auto b = evaluate(t2, p2, 2);
  const auto avg = average_reports({a, b});
  CHECK(avg.acc == doctest::Approx((a.acc + b.acc) / 2.0));
  CHECK(avg.mae == doctest::Approx((a.mae + b.mae) / 2.0));
  CHECK(avg.cm.total() == 4);
}
