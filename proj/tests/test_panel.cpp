#include <doctest.h>

#include "armington/panel.hpp"
#include "armington/stats.hpp"

#include <cmath>
#include <random>
#include <set>

using namespace armington;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Unbalanced panel: entity e is observed at every time in [0, J) except those
// listed in `gaps`. Times are spaced by `step` to exercise real lag distances.
FeData random_panel(int n_entities, int periods, int instruments, std::mt19937_64& rng,
                    std::set<std::pair<int, int>> gaps = {}, int step = 1) {
  std::normal_distribution<double> nd;
  FeData d;
  std::vector<double> y, x;
  std::vector<std::vector<double>> z;
  for (int e = 0; e < n_entities; ++e) {
    const double fe = nd(rng);
    for (int t = 0; t < periods; ++t) {
      if (gaps.count({e, t})) continue;
      d.index.entity.push_back(e);
      d.index.time.push_back(t * step);
      std::vector<double> zr;
      double xv = fe + nd(rng);
      for (int k = 0; k < instruments; ++k) {
        zr.push_back(nd(rng) + 0.3 * fe);
        xv += 0.7 * zr.back();
      }
      const double u = nd(rng);
      xv += 0.5 * u;
      x.push_back(xv);
      y.push_back(2.0 * fe + 0.1 * t - 1.5 * xv + u);
      z.push_back(zr);
    }
  }
  const Index n = static_cast<Index>(y.size());
  d.y = Eigen::Map<VectorXd>(y.data(), n);
  d.x = Eigen::Map<VectorXd>(x.data(), n);
  d.z.resize(n, instruments);
  for (Index r = 0; r < n; ++r)
    for (int k = 0; k < instruments; ++k) d.z(r, k) = z[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)];
  for (int k = 0; k < instruments; ++k) d.z_names.push_back("z" + std::to_string(k));
  return d;
}

std::vector<int> distinct_times(const PanelIndex& idx) {
  std::set<int> s(idx.time.begin(), idx.time.end());
  return {s.begin(), s.end()};
}

// [non-base time dummies | entity dummies]
MatrixXd dummy_block(const PanelIndex& idx) {
  const auto times = distinct_times(idx);
  const int m = static_cast<int>(times.size()) - 1;
  const int ne = idx.entity.back() + 1;
  MatrixXd out = MatrixXd::Zero(idx.rows(), m + ne);
  for (Index r = 0; r < idx.rows(); ++r) {
    const auto c = std::lower_bound(times.begin(), times.end(), idx.time[static_cast<std::size_t>(r)]) - times.begin();
    if (c < m) out(r, c) = 1;
    out(r, m + idx.entity[static_cast<std::size_t>(r)]) = 1;
  }
  return out;
}

// Direct double sum over same-entity pairs.
MatrixXd oracle_meat(const MatrixXd& g, const PanelIndex& idx, int bw) {
  MatrixXd s = MatrixXd::Zero(g.cols(), g.cols());
  for (Index r = 0; r < g.rows(); ++r)
    for (Index q = 0; q < g.rows(); ++q) {
      if (idx.entity[static_cast<std::size_t>(r)] != idx.entity[static_cast<std::size_t>(q)]) continue;
      const int lag = std::abs(idx.time[static_cast<std::size_t>(r)] - idx.time[static_cast<std::size_t>(q)]);
      if (lag >= bw) continue;
      s += (1.0 - static_cast<double>(lag) / bw) * g.row(r).transpose() * g.row(q);
    }
  return s;
}

struct DenseFit {
  VectorXd coef;  // [gamma, time dummies, entity dummies]
  MatrixXd vcov;
};

// Textbook 2SLS on the full dummy design with a dense HAC sandwich.
DenseFit dense_2sls(const FeData& d, const MatrixXd& excluded, int bw) {
  const MatrixXd dummies = dummy_block(d.index);
  MatrixXd x(d.x.size(), 1 + dummies.cols());
  x << d.x, dummies;
  MatrixXd z(d.x.size(), excluded.cols() + dummies.cols());
  z << excluded, dummies;
  const MatrixXd zz_inv = (z.transpose() * z).inverse();
  const MatrixXd a = x.transpose() * z * zz_inv * z.transpose() * x;
  const MatrixXd bread = a.inverse() * x.transpose() * z * zz_inv;
  DenseFit f;
  f.coef = bread * z.transpose() * d.y;
  const VectorXd u = d.y - x * f.coef;
  const MatrixXd g = z.array().colwise() * u.array();
  const double n = static_cast<double>(d.y.size());
  const double absorbed = static_cast<double>(dummies.cols());
  f.vcov = n / (n - absorbed) * bread * oracle_meat(g, d.index, bw) * bread.transpose();
  return f;
}

}  // namespace

TEST_CASE("within LS matches LSDV on a small random panel") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    FeData d = random_panel(3, 4, 0, rng, {{1, 0}});
    const FeEstimate fit = within_fe_ls(d, 1);
    const DenseFit oracle = dense_2sls(d, d.x, 1);
    CHECK(fit.gamma == doctest::Approx(oracle.coef(0)).epsilon(1e-8));
    const Index m = static_cast<Index>(fit.times.size()) - 1;
    for (Index t = 0; t < m; ++t) CHECK(fit.time_effects(t) == doctest::Approx(oracle.coef(1 + t)).epsilon(1e-8));
    CHECK(fit.time_effects(m) == 0.0);
    // Entity dummies of the LSDV fit are the fixed effects.
    for (Index i = 0; i < 3; ++i)
      CHECK(fit.fixed_effects(i) == doctest::Approx(oracle.coef(1 + m + i)).epsilon(1e-8));
  }
}

TEST_CASE("structured HAC covariance equals the dense sandwich") {
  std::mt19937_64 rng(5);
  for (int bw : {1, 2, 3, 5}) {
    FeData d = random_panel(4, 9, 2, rng, {{0, 2}, {2, 5}, {3, 0}, {3, 1}});
    SUBCASE("IV") {
      const FeEstimate fit = within_fe_2sls(d, bw);
      const DenseFit oracle = dense_2sls(d, d.z, bw);
      const Index k = fit.vcov.rows();
      CHECK(fit.gamma == doctest::Approx(oracle.coef(0)).epsilon(1e-9));
      CHECK((fit.vcov - oracle.vcov.topLeftCorner(k, k)).cwiseAbs().maxCoeff() < 1e-9 * oracle.vcov.cwiseAbs().maxCoeff());
    }
    SUBCASE("LS") {
      const FeEstimate fit = within_fe_ls(d, bw);
      const DenseFit oracle = dense_2sls(d, d.x, bw);
      const Index k = fit.vcov.rows();
      CHECK((fit.vcov - oracle.vcov.topLeftCorner(k, k)).cwiseAbs().maxCoeff() < 1e-9 * oracle.vcov.cwiseAbs().maxCoeff());
    }
  }
}

TEST_CASE("HAC lags use time distance, not row distance") {
  std::mt19937_64 rng(8);
  FeData d = random_panel(3, 8, 1, rng, {{0, 3}, {1, 4}, {1, 5}}, 2);
  const FeEstimate fit = within_fe_2sls(d, 5);
  const DenseFit oracle = dense_2sls(d, d.z, 5);
  const Index k = fit.vcov.rows();
  CHECK((fit.vcov - oracle.vcov.topLeftCorner(k, k)).cwiseAbs().maxCoeff() < 1e-9 * oracle.vcov.cwiseAbs().maxCoeff());
}

TEST_CASE("noiseless panel identifies gamma exactly") {
  FeData d;
  const double gamma = -3.0;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::vector<double> y, x;
  for (int e = 0; e < 4; ++e)
    for (int t = 0; t < 6; ++t) {
      d.index.entity.push_back(e);
      d.index.time.push_back(t);
      x.push_back(nd(rng));
      y.push_back(0.3 * e + 0.2 * t * t + gamma * x.back());
    }
  d.y = Eigen::Map<VectorXd>(y.data(), 24);
  d.x = Eigen::Map<VectorXd>(x.data(), 24);
  CHECK(within_fe_ls(d, 1).gamma == doctest::Approx(gamma).epsilon(1e-12));
}

TEST_CASE("single entity reduces to time-series LS with an intercept") {
  std::mt19937_64 rng(21);
  FeData d = random_panel(1, 30, 0, rng);
  d.time_effects = false;
  const FeEstimate fit = within_fe_ls(d, 1);
  MatrixXd x(30, 2);
  x << VectorXd::Ones(30), d.x;
  const VectorXd b = x.colPivHouseholderQr().solve(d.y);
  CHECK(fit.gamma == doctest::Approx(b(1)).epsilon(1e-10));
  CHECK(fit.fixed_effects(0) == doctest::Approx(b(0)).epsilon(1e-10));
}

TEST_CASE("instrumenting the regressor by itself reproduces LS") {
  std::mt19937_64 rng(2);
  FeData d = random_panel(5, 12, 0, rng);
  d.z = d.x;
  const FeEstimate ls = within_fe_ls(d, 3);
  const FeEstimate iv = within_fe_2sls(d, 3);
  CHECK(std::abs(iv.gamma - ls.gamma) < 1e-10);
  CHECK((iv.vcov - ls.vcov).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((iv.time_effects - ls.time_effects).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("just-identified IV equals the demeaned ratio (z'x)^-1 z'y") {
  std::mt19937_64 rng(4);
  FeData d = random_panel(4, 10, 1, rng);
  d.time_effects = false;
  const FeEstimate fit = within_fe_2sls(d, 1);
  VectorXd zd = d.z.col(0), xd = d.x, yd = d.y;
  for (auto [b, e] : d.index.spans()) {
    zd.segment(b, e - b).array() -= zd.segment(b, e - b).mean();
    xd.segment(b, e - b).array() -= xd.segment(b, e - b).mean();
    yd.segment(b, e - b).array() -= yd.segment(b, e - b).mean();
  }
  CHECK(fit.gamma == doctest::Approx(zd.dot(yd) / zd.dot(xd)).epsilon(1e-12));
}

TEST_CASE("rank deficiency names the offending columns") {
  std::mt19937_64 rng(6);
  SUBCASE("regressor constant within entity") {
    FeData d = random_panel(3, 5, 0, rng);
    for (Index r = 0; r < d.x.size(); ++r) d.x(r) = d.index.entity[static_cast<std::size_t>(r)];
    try {
      within_fe_ls(d, 1);
      FAIL("expected RankDeficientError");
    } catch (const RankDeficientError& e) {
      REQUIRE(e.columns().size() == 1);
      CHECK(e.columns()[0] == "P");
    }
  }
  SUBCASE("time effects spanned by an entity") {
    // Entity 0 alone covers times 0 and 1, so D0 + D1 equals its dummy.
    FeData d = random_panel(2, 4, 0, rng, {{0, 2}, {0, 3}, {1, 0}, {1, 1}});
    CHECK_THROWS_AS(within_fe_ls(d, 1), RankDeficientError);
  }
  SUBCASE("instrument constant within entity") {
    FeData d = random_panel(3, 5, 1, rng);
    for (Index r = 0; r < d.x.size(); ++r) d.z(r, 0) = 2.0 * d.index.entity[static_cast<std::size_t>(r)];
    try {
      within_fe_2sls(d, 1);
      FAIL("expected RankDeficientError");
    } catch (const RankDeficientError& e) {
      CHECK(e.columns() == std::vector<std::string>{"z0"});
    }
  }
}

TEST_CASE("orthogonal instrument is rejected as weak") {
  FeData d;
  d.index = PanelIndex::single_series(4);
  d.time_effects = false;
  d.x = VectorXd{{1, -1, 1, -1}};
  d.y = VectorXd{{0.5, 0.1, -0.3, 0.2}};
  d.z = MatrixXd{{1}, {1}, {-1}, {-1}};
  CHECK_THROWS_AS(within_fe_2sls(d, 1), WeakInstrumentError);
}

TEST_CASE("entities with fewer than two rows are rejected") {
  FeData d;
  d.index.entity = {0, 0, 1};
  d.index.time = {0, 1, 0};
  d.y = VectorXd::Ones(3);
  d.x = VectorXd{{1, 2, 3}};
  CHECK_THROWS_AS(within_fe_ls(d, 1), std::invalid_argument);
}

TEST_CASE("hansen J is zero and not applicable when exactly identified") {
  std::mt19937_64 rng(9);
  FeData d = random_panel(4, 20, 1, rng);
  const IvDiagnostics diag = iv_diagnostics(d, 5);
  CHECK(diag.hansen_j.statistic == 0.0);
  CHECK_FALSE(diag.hansen_j.p.has_value());
  CHECK(diag.kp_lm.statistic >= 0);
  CHECK(diag.kp_wald_f >= 0);
  CHECK(*diag.kp_lm.p >= 0);
  CHECK(*diag.kp_lm.p <= 1);
  CHECK(*diag.endogeneity.p >= 0);
  CHECK(*diag.endogeneity.p <= 1);
}

TEST_CASE("overidentified diagnostics are well formed") {
  std::mt19937_64 rng(10);
  FeData d = random_panel(5, 40, 2, rng);
  const IvDiagnostics diag = iv_diagnostics(d, 5);
  CHECK(diag.hansen_j.df == 1);
  REQUIRE(diag.hansen_j.p.has_value());
  CHECK(*diag.hansen_j.p >= 0);
  CHECK(*diag.hansen_j.p <= 1);
  CHECK(diag.kp_lm.df == 2);
}

TEST_CASE("robust weak-identification F tracks the classical first-stage F") {
  // Homoskedastic single-instrument design, n = 5000.
  std::mt19937_64 rng(77);
  std::normal_distribution<double> nd;
  const Index n = 5000;
  FeData d;
  d.index = PanelIndex::single_series(n);
  d.time_effects = false;
  d.x.resize(n);
  d.y.resize(n);
  d.z.resize(n, 1);
  for (Index r = 0; r < n; ++r) {
    d.z(r, 0) = nd(rng);
    d.x(r) = 0.05 * d.z(r, 0) + nd(rng);
    d.y(r) = d.x(r) + nd(rng);
  }
  const IvDiagnostics diag = iv_diagnostics(d, 1);

  const VectorXd z = d.z.col(0).array() - d.z.col(0).mean();
  const VectorXd x = d.x.array() - d.x.mean();
  const double pi = z.dot(x) / z.squaredNorm();
  const double rss = (x - pi * z).squaredNorm();
  const double classical_f = (x.squaredNorm() - rss) / (rss / static_cast<double>(n - 2));
  CHECK(classical_f > 5);
  CHECK(std::abs(diag.kp_wald_f / classical_f - 1.0) < 0.05);
}

TEST_CASE("endogeneity test has close to nominal size for an exogenous regressor") {
  std::mt19937_64 rng(2024);
  int rejections = 0;
  const int reps = 1000;
  for (int rep = 0; rep < reps; ++rep) {
    FeData d = random_panel(5, 40, 0, rng);
    std::normal_distribution<double> nd;
    d.z.resize(d.x.size(), 1);
    for (Index r = 0; r < d.x.size(); ++r) {
      d.z(r, 0) = nd(rng);
      d.x(r) = d.z(r, 0) + nd(rng);
      d.y(r) = -1.5 * d.x(r) + nd(rng);
    }
    const IvDiagnostics diag = iv_diagnostics(d, 1);
    rejections += *diag.endogeneity.p < 0.05;
  }
  const double rate = static_cast<double>(rejections) / reps;
  // Binomial sd at 5% with 1000 draws is about 0.007.
  CHECK(rate > 0.03);
  CHECK(rate < 0.07);
}

TEST_CASE("delta transform of gamma into sigma") {
  auto s = delta_sigma(-3.354, 0.831);
  CHECK(s.sigma == doctest::Approx(4.354).epsilon(1e-12));
  CHECK(s.se == 0.831);
  s = delta_sigma(-3.011, 0.749);
  CHECK(s.sigma == doctest::Approx(4.011).epsilon(1e-12));
  CHECK(s.se == 0.749);
  CHECK(delta_sigma(0.0, 0.1).sigma == 1.0);
}

namespace {
FeEstimate two_period_fit(double gamma, double mu0, double mu1) {
  FeEstimate f;
  f.gamma = gamma;
  f.times = {YearMonth{2000, 1}.index(), YearMonth{2000, 2}.index()};
  f.time_effects = VectorXd{{mu0, mu1}};
  f.vcov = MatrixXd{{0.04, 0.01}, {0.01, 0.09}};
  return f;
}
}  // namespace

TEST_CASE("aggregate recovery arithmetic") {
  AggregateSeries q = recover_aggregates(two_period_fit(-3.0, 3.0, 0.0));
  CHECK(q.q(0) == doctest::Approx(std::exp(1.0)).epsilon(1e-14));
  CHECK(q.q(1) == 1.0);
  CHECK(q.se(1) == 0.0);
  CHECK(q.periods[1] == YearMonth{2000, 2});

  q = recover_aggregates(two_period_fit(-3.0, 0.0, 0.0));
  CHECK(q.q(0) == 1.0);

  // Only differences to the base period enter.
  const AggregateSeries a = recover_aggregates(two_period_fit(-2.0, 1.3, 0.0));
  const AggregateSeries b = recover_aggregates(two_period_fit(-2.0, 1.3 + 5.0, 5.0));
  CHECK(a.q(0) == doctest::Approx(b.q(0)).epsilon(1e-12));

  CHECK_THROWS_AS(recover_aggregates(two_period_fit(0.0, 1.0, 0.0)), UndefinedAggregateError);
}

TEST_CASE("delta-method se of q agrees with a parametric bootstrap") {
  const FeEstimate f = two_period_fit(-3.0, 1.2, 0.0);
  const AggregateSeries q = recover_aggregates(f);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  const Eigen::LLT<MatrixXd> llt(f.vcov);
  const MatrixXd l = llt.matrixL();
  const int draws = 10000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < draws; ++i) {
    const Eigen::Vector2d e(nd(rng), nd(rng));
    const Eigen::Vector2d th = Eigen::Vector2d(f.gamma, f.time_effects(0)) + l * e;
    const double v = std::exp(-th(1) / th(0));
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / draws;
  const double sd = std::sqrt(sum2 / draws - mean * mean);
  CHECK(std::abs(q.se(0) / sd - 1.0) < 0.10);
}

TEST_CASE("HAC with bandwidth 1 is the White meat") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  MatrixXd g(50, 2);
  for (Index r = 0; r < 50; ++r) g.row(r) << nd(rng), nd(rng);
  const PanelIndex idx = PanelIndex::single_series(50);
  CHECK((hac_vcov(g, idx, 1) - g.transpose() * g).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("Bartlett weights decrease strictly with the lag") {
  for (int j = 1; j < 5; ++j) CHECK(bartlett_weight(j, 5) < bartlett_weight(j - 1, 5));
  CHECK(bartlett_weight(0, 5) == 1.0);
  CHECK(bartlett_weight(5, 5) == 0.0);
}

TEST_CASE("HAC is invariant to relabelling entities") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  PanelIndex a, b;
  MatrixXd g(12, 2), g2(12, 2);
  for (int e = 0; e < 3; ++e)
    for (int t = 0; t < 4; ++t) {
      a.entity.push_back(e);
      a.time.push_back(t);
      g.row(e * 4 + t) << nd(rng), nd(rng);
    }
  // Same blocks in reverse order with different labels.
  for (int e = 2; e >= 0; --e)
    for (int t = 0; t < 4; ++t) {
      b.entity.push_back(10 + e);
      b.time.push_back(t);
      g2.row((2 - e) * 4 + t) = g.row(e * 4 + t);
    }
  CHECK((hac_vcov(g, a, 3) - hac_vcov(g2, b, 3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((hac_vcov(g, a, 3) - oracle_meat(g, a, 3)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("HAC warns when the bandwidth exceeds the series") {
  MatrixXd g = MatrixXd::Ones(3, 1);
  std::vector<std::string> warnings;
  hac_vcov(g, PanelIndex::single_series(3), 5, &warnings);
  CHECK(warnings.size() == 1);
  CHECK_THROWS_AS(hac_vcov(g, PanelIndex::single_series(3), 0), std::invalid_argument);
}

TEST_CASE("HAC tracks robust covariance for iid errors and exceeds it under AR(1)") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> nd;
  const int reps = 400;
  const Index n = 200;
  double iid_ratio = 0, ar_hac = 0, ar_naive = 0;
  for (int rep = 0; rep < reps; ++rep) {
    VectorXd e(n), a(n);
    double prev = 0;
    for (Index t = 0; t < n; ++t) {
      e(t) = nd(rng);
      prev = 0.6 * prev + nd(rng);
      a(t) = prev;
    }
    const PanelIndex idx = PanelIndex::single_series(n);
    iid_ratio += hac_vcov(e, idx, 5)(0, 0) / hac_vcov(e, idx, 1)(0, 0);
    ar_hac += hac_vcov(a, idx, 5)(0, 0);
    ar_naive += hac_vcov(a, idx, 1)(0, 0);
  }
  CHECK(std::abs(iid_ratio / reps - 1.0) < 0.05);
  CHECK(ar_hac > ar_naive);
}

TEST_CASE("non-PSD input is floored") {
  bool repaired = false;
  const MatrixXd m = MatrixXd{{1, 2}, {2, 1}};
  const MatrixXd out = floor_eigenvalues(m, &repaired);
  CHECK(repaired);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(out);
  CHECK(eig.eigenvalues().minCoeff() > -1e-12);
}

TEST_CASE("cumulated exchange rates") {
  ExchangeRates fx;
  fx[{"A", {2000, 2}}] = 10;
  fx[{"A", {2000, 3}}] = 20;
  fx[{"A", {2000, 4}}] = 30;
  fx[{"A", {2000, 5}}] = 50;
  const ExchangeRates mean = cumulate_fx(fx, Cumulation::jfy_mean);
  CHECK(mean.at({"A", {2000, 3}}) == 15.0);
  CHECK(mean.at({"A", {2000, 4}}) == 30.0);  // new fiscal year
  CHECK(mean.at({"A", {2000, 5}}) == 40.0);
  const ExchangeRates sum = cumulate_fx(fx, Cumulation::ytd_sum);
  CHECK(sum.at({"A", {2000, 5}}) == 80.0);
  const ExchangeRates roll = cumulate_fx(fx, Cumulation::rolling12);
  CHECK(roll.at({"A", {2000, 5}}) == 27.5);
}

TEST_CASE("first-stage design drops rows without instruments") {
  std::vector<PanelObservation> rows;
  for (const char* c : {"A", "B"})
    for (int m = 1; m <= 4; ++m) {
      PanelObservation o;
      o.country = c;
      o.period = {2001, m};
      o.S = -1.0 - m;
      o.P = 5.0 + 0.1 * m;
      if (!(std::string(c) == "B" && m == 2)) o.E = std::log(100.0 + m);
      rows.push_back(o);
    }
  const PanelDataset panel("t", rows);
  std::size_t dropped = 0;
  const FeData d = first_stage_design(panel, {InstrumentKind::lnfx, InstrumentKind::lncumfx}, {},
                                      Cumulation::jfy_mean, &dropped);
  CHECK(dropped == 1);
  CHECK(d.y.size() == 7);
  CHECK(d.entity_names == std::vector<std::string>{"A", "B"});
  CHECK(d.z(0, 0) == doctest::Approx(std::log(101.0)));
  CHECK(d.z(1, 1) == doctest::Approx(std::log(101.5)));  // Jan-Feb mean
  CHECK(d.z(3, 1) == doctest::Approx(std::log(104.0)));  // April restarts
  CHECK(parse_instrument("lncumfx") == InstrumentKind::lncumfx);
  CHECK_THROWS(parse_cumulation("weekly"));
}
