#include <doctest.h>

#include "armington/stats.hpp"
#include "armington/timeseries.hpp"

#include <cmath>
#include <random>

using namespace armington;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd random_walk(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  VectorXd y(n);
  double level = 0;
  for (Index t = 0; t < n; ++t) y(t) = level += nd(rng);
  return y;
}

VectorXd white_noise(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  VectorXd y(n);
  for (Index t = 0; t < n; ++t) y(t) = nd(rng);
  return y;
}

AggregateSeries monthly(int year0, int years, double value) {
  AggregateSeries a;
  for (int y = year0; y < year0 + years; ++y)
    for (int m = 1; m <= 12; ++m) a.periods.push_back({y, m});
  a.q = VectorXd::Constant(static_cast<Index>(a.periods.size()), value);
  a.se = VectorXd::Zero(a.q.size());
  return a;
}

}  // namespace

TEST_CASE("harmonic mean of monthly aggregates") {
  CHECK(harmonic_mean(VectorXd{{1.0, 3.0}}, VectorXd{{1.0, 1.0}}) == 1.5);
  CHECK(harmonic_mean(VectorXd::Constant(12, 2.0), VectorXd::LinSpaced(12, 1, 40)) == doctest::Approx(2.0).epsilon(1e-15));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  for (int rep = 0; rep < 100; ++rep) {
    VectorXd q(12), w(12);
    for (Index i = 0; i < 12; ++i) {
      q(i) = u(rng);
      w(i) = u(rng);
    }
    const double h = harmonic_mean(q, w);
    CHECK(h >= q.minCoeff());
    CHECK(h <= q.maxCoeff());
  }
}

TEST_CASE("annualize computes h_k and skips partial calendar years") {
  AggregateSeries a = monthly(2000, 2, 2.0);
  a.periods.push_back({2002, 1});
  a.q.conservativeResize(25);
  a.q(24) = 1.0;
  std::map<YearMonth, double> w;
  for (const auto& t : a.periods) w[t] = 400.0 / 12.0;
  const std::vector<DomesticYear> dom{{2000, 10.0, 10.0}, {2001, 20.0, 5.0}, {2002, 1.0, 1.0}};
  const AnnualSeries s = annualize(a, w, dom);
  REQUIRE(s.years == std::vector<int>{2000, 2001});
  CHECK(s.import_value(0) == doctest::Approx(400.0));
  CHECK(s.H(0) == doctest::Approx(std::log(0.25)).epsilon(1e-14));
  CHECK(s.q(1) == doctest::Approx(2.0));
  CHECK(s.Q(1) == doctest::Approx(std::log(2.0)));
  CHECK(s.R(1) == doctest::Approx(std::log(20.0)));
}

TEST_CASE("annualize lists missing months") {
  AggregateSeries a = monthly(2000, 2, 1.0);
  std::map<YearMonth, double> w;
  for (const auto& t : a.periods) w[t] = 1.0;
  w.erase({2001, 7});
  // Drop March 2000 from q.
  a.periods.erase(a.periods.begin() + 2);
  a.q = VectorXd::Ones(23);
  const std::vector<DomesticYear> dom{{2000, 1, 1}, {2001, 1, 1}};
  try {
    annualize(a, w, dom);
    FAIL("expected MissingMonthsError");
  } catch (const MissingMonthsError& e) {
    CHECK(e.months() == std::vector<YearMonth>{{2000, 3}, {2001, 7}});
  }
}

TEST_CASE("critical values match the published response surfaces") {
  const CriticalValues c = mackinnon_critical(1, Deterministic::constant, 200);
  CHECK(c.p1 == doctest::Approx(-3.4635).epsilon(1e-4));
  CHECK(c.p5 == doctest::Approx(-2.8761).epsilon(1e-4));
  CHECK(c.p10 == doctest::Approx(-2.5745).epsilon(1e-4));
  const CriticalValues eg = mackinnon_critical(2, Deterministic::constant, 25);
  CHECK(eg.p1 == doctest::Approx(-4.3882).epsilon(1e-4));
  CHECK(eg.p5 == doctest::Approx(-3.5915).epsilon(1e-4));
  CHECK(eg.p10 == doctest::Approx(-3.2185).epsilon(1e-4));
  CHECK_THROWS(mackinnon_critical(2, Deterministic::none, 25));
  CHECK_THROWS(c.at(0.2));
}

TEST_CASE("ADF size and power at n = 200") {
  std::mt19937_64 rng(1234);
  const int reps = 500;
  int rw_correct = 0, noise_correct = 0;
  for (int rep = 0; rep < reps; ++rep) {
    rw_correct += !adf_test(random_walk(200, rng)).reject;
    noise_correct += adf_test(white_noise(200, rng)).reject;
  }
  CHECK(rw_correct >= 0.9 * reps);
  CHECK(noise_correct >= 0.9 * reps);
}

TEST_CASE("ADF with a trend rejects for a trend-stationary series") {
  std::mt19937_64 rng(3);
  VectorXd y = VectorXd::LinSpaced(200, 0.0, 20.0) + 0.5 * white_noise(200, rng);
  AdfOptions opt;
  opt.deterministic = Deterministic::trend;
  CHECK(adf_test(y, opt).reject);
}

TEST_CASE("ADF regression matches a hand-built Dickey-Fuller fit") {
  std::mt19937_64 rng(17);
  const VectorXd y = random_walk(60, rng);
  AdfOptions opt;
  opt.lags = 2;
  const AdfResult r = adf_test(y, opt);
  // dy_t on y_{t-1}, 1, dy_{t-1}, dy_{t-2} for t = 3..59.
  const Index rows = 57;
  MatrixXd x(rows, 4);
  VectorXd target(rows);
  for (Index i = 0; i < rows; ++i) {
    const Index t = i + 3;
    target(i) = y(t) - y(t - 1);
    x.row(i) << y(t - 1), 1.0, y(t - 1) - y(t - 2), y(t - 2) - y(t - 3);
  }
  const VectorXd b = (x.transpose() * x).inverse() * x.transpose() * target;
  const double s2 = (target - x * b).squaredNorm() / (rows - 4);
  const double se = std::sqrt(s2 * (x.transpose() * x).inverse()(0, 0));
  CHECK(r.statistic == doctest::Approx(b(0) / se).epsilon(1e-10));
  CHECK(r.nobs == rows);
}

TEST_CASE("ADF rejects too-short series") {
  CHECK_THROWS_AS(adf_test(VectorXd::LinSpaced(12, 0, 1)), std::invalid_argument);
}

TEST_CASE("Engle-Granger decisions at n = 200") {
  std::mt19937_64 rng(99);
  const int reps = 500;
  int coint = 0, independent = 0;
  for (int rep = 0; rep < reps; ++rep) {
    const VectorXd x = random_walk(200, rng);
    const VectorXd y = 2.0 * x + white_noise(200, rng);
    coint += engle_granger(y, x).cointegrated;
    independent += !engle_granger(random_walk(200, rng), random_walk(200, rng)).cointegrated;
  }
  CHECK(coint >= 0.9 * reps);
  CHECK(independent >= 0.9 * reps);
}

TEST_CASE("identical series are maximally cointegrated") {
  std::mt19937_64 rng(5);
  const VectorXd x = random_walk(30, rng);
  const EngleGrangerResult r = engle_granger(x, x);
  CHECK(std::isinf(r.statistic));
  CHECK(r.statistic < 0);
  CHECK(r.cointegrated);
}

namespace {
Pretests pattern(bool h_level, bool x_level, bool h_diff, bool x_diff, bool coint) {
  Pretests p;
  p.h_level.reject = h_level;
  p.x_level.reject = x_level;
  p.h_diff.reject = h_diff;
  p.x_diff.reject = x_diff;
  p.eg.cointegrated = coint;
  return p;
}
}  // namespace

TEST_CASE("specification choice from pretest patterns") {
  // I(1) without cointegration, as for beef.
  CHECK(select_spec(pattern(false, false, true, true, false)).spec == SecondSpec::differences);
  // I(1) and cointegrated, as for chicken.
  CHECK(select_spec(pattern(false, false, true, true, true)).spec == SecondSpec::levels);
  CHECK(select_spec(pattern(true, true, true, true, false)).spec == SecondSpec::levels);
  const SpecChoice mixed = select_spec(pattern(true, false, true, true, false));
  CHECK(mixed.spec == SecondSpec::differences);
  CHECK(mixed.warnings.size() == 1);
}

TEST_CASE("first differences telescope") {
  const VectorXd x{{1.0, 4.0, 2.5, 7.0, -1.0}};
  const VectorXd d = first_difference(x);
  CHECK(d.size() == 4);
  CHECK(d.sum() == doctest::Approx(x(4) - x(0)));
}

TEST_CASE("linear IV matches the textbook HC0 sandwich") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  const Index n = 40;
  MatrixXd x(n, 2), z(n, 3);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    const double z1 = nd(rng), z2 = nd(rng), u = nd(rng);
    const double xi = z1 + 0.5 * z2 + 0.5 * u;
    x.row(i) << 1.0, xi;
    z.row(i) << 1.0, z1, z2;
    y(i) = 0.3 + 0.8 * xi + u * (1.0 + std::abs(z1));
  }
  const LinearFit f = linear_iv(y, x, z);
  const MatrixXd pz = z * (z.transpose() * z).inverse() * z.transpose();
  const MatrixXd bread = (x.transpose() * pz * x).inverse() * x.transpose() * pz;
  const VectorXd b = bread * y;
  const VectorXd u = y - x * b;
  const MatrixXd v = bread * u.array().square().matrix().asDiagonal() * bread.transpose();
  CHECK((f.coef - b).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((f.vcov - v).cwiseAbs().maxCoeff() < 1e-12);

  const LinearFit ls = linear_iv(y, x, x, Covariance::classical);
  const VectorXd bls = (x.transpose() * x).inverse() * x.transpose() * y;
  const double s2 = (y - x * bls).squaredNorm() / (n - 2);
  CHECK((ls.coef - bls).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(ls.vcov(1, 1) == doctest::Approx(s2 * (x.transpose() * x).inverse()(1, 1)).epsilon(1e-12));
}

TEST_CASE("second stage recovers rho and beta from noiseless data") {
  const double rho = 1.4, beta = 0.35;
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  AnnualSeries a;
  const Index n = 20;
  a.H.resize(n);
  a.R.resize(n);
  a.Q.resize(n);
  a.q.resize(n);
  for (Index k = 0; k < n; ++k) {
    a.years.push_back(1990 + static_cast<int>(k));
    a.R(k) = 7.0 + 0.2 * nd(rng);
    a.Q(k) = 0.3 * nd(rng);
    a.q(k) = std::exp(a.Q(k));
    a.H(k) = std::log(beta / (1 - beta)) + (1 - rho) * (a.R(k) - a.Q(k));
  }
  for (SecondSpec spec : {SecondSpec::levels, SecondSpec::differences}) {
    const SecondStageResult r = estimate_second(a, spec);
    REQUIRE(r.iv.has_value());
    for (const SecondStageFit& f : {r.ls, *r.iv}) {
      const MacroElasticity m = macro_delta(f);
      CHECK(m.rho == doctest::Approx(rho).epsilon(1e-10));
      if (spec == SecondSpec::levels) {
        REQUIRE(m.beta.has_value());
        CHECK(*m.beta == doctest::Approx(beta).epsilon(1e-10));
      } else {
        CHECK_FALSE(m.beta.has_value());
      }
    }
  }
}

TEST_CASE("second stage needs ten observations") {
  AnnualSeries a;
  for (int k = 0; k < 10; ++k) a.years.push_back(2000 + k);
  a.H = a.R = a.Q = a.q = VectorXd::LinSpaced(10, 0.1, 1.0);
  CHECK_THROWS_AS(estimate_second(a, SecondSpec::differences), std::invalid_argument);
}

TEST_CASE("macroelasticity transforms of reported coefficients") {
  SecondStageFit f;
  f.eta = -0.141;
  f.se_eta = 0.378;
  MacroElasticity m = macro_delta(f);
  CHECK(m.rho == doctest::Approx(1.141).epsilon(1e-12));
  CHECK(m.se_rho == 0.378);

  f.eta = 0.504;
  f.se_eta = 0.217;
  CHECK(macro_delta(f).rho == doctest::Approx(0.496).epsilon(1e-12));

  f.phi = 0.367;
  f.se_phi = 0.034;
  m = macro_delta(f);
  CHECK(std::round(*m.beta * 1000) / 1000 == doctest::Approx(0.591));
  CHECK(std::round(*m.se_beta * 1000) / 1000 == doctest::Approx(0.008));
  CHECK(*m.se_beta == doctest::Approx(*m.beta * (1 - *m.beta) * 0.034).epsilon(1e-14));
}

TEST_CASE("beta is a monotone map into (0, 1) and rho is affine in eta") {
  SecondStageFit f;
  double prev = 0;
  for (double phi = -30; phi <= 30; phi += 0.5) {
    f.phi = phi;
    f.se_phi = 0.1;
    const double b = *macro_delta(f).beta;
    CHECK(b > 0);
    CHECK(b < 1);
    CHECK(b >= prev);
    prev = b;
  }
  f.eta = 0.2;
  const double r0 = macro_delta(f).rho;
  f.eta = 0.2 + 0.7;
  CHECK(macro_delta(f).rho == doctest::Approx(r0 - 0.7));
}

TEST_CASE("channel test p-values follow the t distribution") {
  CHECK(std::round(stats::t_two_sided(1.012 / 0.527, 22) * 1000) / 1000 == doctest::Approx(0.068));
  CHECK(std::round(stats::t_two_sided(0.456 / 0.450, 72) * 1000) / 1000 == doctest::Approx(0.314));
}

TEST_CASE("channel test on identical series finds a channel") {
  std::mt19937_64 rng(1);
  const VectorXd x = white_noise(24, rng);
  const ChannelResult r = channel_test(x, x, PanelIndex::single_series(24), ChannelMode::first_differences);
  CHECK(r.slope == doctest::Approx(1.0));
  CHECK(r.p < 1e-12);
  CHECK(r.present);
  CHECK(r.df == 22);
}

TEST_CASE("FE channel test matches an LSDV regression with classical errors") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  PanelIndex idx;
  const Index n = 30;
  VectorXd y(n), x(n);
  MatrixXd design = MatrixXd::Zero(n, 4);
  for (Index r = 0; r < n; ++r) {
    const int e = static_cast<int>(r / 10);
    idx.entity.push_back(e);
    idx.time.push_back(static_cast<int>(r % 10));
    x(r) = nd(rng) + e;
    y(r) = 0.4 * x(r) + 2.0 * e + nd(rng);
    design(r, 0) = x(r);
    design(r, 1 + e) = 1.0;
  }
  const ChannelResult c = channel_test(y, x, idx, ChannelMode::fe_panel);
  const VectorXd b = (design.transpose() * design).inverse() * design.transpose() * y;
  const double s2 = (y - design * b).squaredNorm() / (n - 4);
  CHECK(c.slope == doctest::Approx(b(0)).epsilon(1e-12));
  CHECK(c.se == doctest::Approx(std::sqrt(s2 * (design.transpose() * design).inverse()(0, 0))).epsilon(1e-12));
  CHECK(c.df == n - 4);
}
