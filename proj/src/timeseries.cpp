#include "armington/timeseries.hpp"

#include "armington/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace armington {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Ols {
  VectorXd coef;
  VectorXd se;
  double rss = 0;
  Index nobs = 0;
};

Ols ols_classical(const VectorXd& y, const MatrixXd& x) {
  Ols out;
  out.nobs = y.size();
  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  if (qr.rank() < x.cols()) throw std::invalid_argument("regression design is rank deficient");
  out.coef = qr.solve(y);
  out.rss = (y - x * out.coef).squaredNorm();
  const double s2 = out.rss / static_cast<double>(x.rows() - x.cols());
  const MatrixXd xtx_inv = (x.transpose() * x).ldlt().solve(MatrixXd::Identity(x.cols(), x.cols()));
  out.se = (s2 * xtx_inv.diagonal()).cwiseSqrt();
  return out;
}

// Dickey-Fuller regression of dy_t on y_{t-1}, deterministic terms and p
// lagged differences, using dy rows start..end. Column 0 is y_{t-1}.
MatrixXd df_design(const VectorXd& y, const VectorXd& dy, Deterministic det, int p, Index start) {
  const Index rows = dy.size() - start;
  const Index k = 1 + (det == Deterministic::none ? 0 : det == Deterministic::constant ? 1 : 2) + p;
  MatrixXd x(rows, k);
  for (Index r = 0; r < rows; ++r) {
    const Index t = start + r;  // dy(t) = y(t+1) - y(t)
    Index c = 0;
    x(r, c++) = y(t);
    if (det != Deterministic::none) x(r, c++) = 1.0;
    if (det == Deterministic::trend) x(r, c++) = static_cast<double>(t + 1);
    for (int j = 1; j <= p; ++j) x(r, c++) = dy(t - j);
  }
  return x;
}

struct DfFit {
  double statistic = 0;
  int lags = 0;
  Index nobs = 0;
};

DfFit dickey_fuller(const Eigen::Ref<const VectorXd>& y, const AdfOptions& opt) {
  if (opt.lags && *opt.lags < 0) throw std::invalid_argument("ADF lag order must be >= 0");
  if (opt.max_lags < 0) throw std::invalid_argument("ADF max_lags must be >= 0");
  const int pmax = opt.lags ? *opt.lags : opt.max_lags;
  if (y.size() < pmax + 10)
    throw std::invalid_argument("ADF needs at least " + std::to_string(pmax + 10) + " observations, got " +
                                std::to_string(y.size()));
  const VectorXd level = y;
  const VectorXd dy = level.tail(level.size() - 1) - level.head(level.size() - 1);

  int p = pmax;
  if (!opt.lags) {
    // AIC over a common sample.
    double best = std::numeric_limits<double>::infinity();
    const VectorXd target = dy.tail(dy.size() - pmax);
    for (int q = 0; q <= pmax; ++q) {
      const MatrixXd x = df_design(level, dy, opt.deterministic, q, pmax);
      Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
      const double rss = (target - x * qr.solve(target)).squaredNorm();
      const double n = static_cast<double>(target.size());
      const double aic = n * std::log(std::max(rss, std::numeric_limits<double>::min()) / n) + 2.0 * x.cols();
      if (aic < best) {
        best = aic;
        p = q;
      }
    }
  }
  const VectorXd target = dy.tail(dy.size() - p);
  const MatrixXd x = df_design(level, dy, opt.deterministic, p, p);
  DfFit out;
  out.lags = p;
  out.nobs = target.size();
  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  const VectorXd b = qr.solve(target);
  const double rss = (target - x * b).squaredNorm();
  if (rss <= 1e-24 * std::max(1.0, target.squaredNorm())) {
    out.statistic = b(0) < 0 ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    return out;
  }
  const Ols fit = ols_classical(target, x);
  out.statistic = fit.coef(0) / fit.se(0);
  return out;
}

// Coefficients b0..b3 of cv = b0 + b1/T + b2/T^2 + b3/T^3 for the 1%, 5% and 10% levels.
using Surface = std::array<std::array<double, 4>, 3>;

const Surface& surface(int n_vars, Deterministic det) {
  static const Surface n1_none{{{-2.56574, -2.2358, -3.627, 0.0},
                                {-1.941, -0.2686, -3.365, 31.223},
                                {-1.61682, 0.2656, -2.714, 25.364}}};
  static const Surface n1_const{{{-3.43035, -6.5393, -16.786, -79.433},
                                 {-2.86154, -2.8903, -4.234, -40.04},
                                 {-2.56677, -1.5384, -2.809, 0.0}}};
  static const Surface n1_trend{{{-3.95877, -9.0531, -28.428, -134.155},
                                 {-3.41049, -4.3904, -9.036, -45.374},
                                 {-3.12705, -2.5856, -3.925, -22.38}}};
  static const Surface n2_const{{{-3.89644, -10.9519, -33.527, 0.0},
                                 {-3.33613, -6.1101, -6.823, 0.0},
                                 {-3.04445, -4.2412, -2.72, 0.0}}};
  static const Surface n2_trend{{{-4.32762, -15.4387, -35.679, 0.0},
                                 {-3.78057, -9.5106, -12.074, 0.0},
                                 {-3.49631, -7.0815, -7.538, 21.892}}};
  if (n_vars == 1) {
    switch (det) {
      case Deterministic::none: return n1_none;
      case Deterministic::constant: return n1_const;
      case Deterministic::trend: return n1_trend;
    }
  }
  if (n_vars == 2) {
    if (det == Deterministic::constant) return n2_const;
    if (det == Deterministic::trend) return n2_trend;
  }
  throw std::invalid_argument("no critical values tabulated for this case");
}

}  // namespace

double CriticalValues::at(double level) const {
  if (std::abs(level - 0.01) < 1e-12) return p1;
  if (std::abs(level - 0.05) < 1e-12) return p5;
  if (std::abs(level - 0.10) < 1e-12) return p10;
  throw std::invalid_argument("significance must be 0.01, 0.05 or 0.10");
}

CriticalValues mackinnon_critical(int n_vars, Deterministic det, double nobs) {
  const Surface& s = surface(n_vars, det);
  auto eval = [nobs](const std::array<double, 4>& b) {
    return b[0] + b[1] / nobs + b[2] / (nobs * nobs) + b[3] / (nobs * nobs * nobs);
  };
  return {eval(s[0]), eval(s[1]), eval(s[2])};
}

AdfResult adf_test(const Eigen::Ref<const VectorXd>& y, const AdfOptions& options) {
  const DfFit f = dickey_fuller(y, options);
  AdfResult out;
  out.statistic = f.statistic;
  out.lags = f.lags;
  out.nobs = f.nobs;
  out.critical = mackinnon_critical(1, options.deterministic, static_cast<double>(f.nobs));
  out.reject = out.statistic < out.critical.at(options.significance);
  return out;
}

EngleGrangerResult engle_granger(const Eigen::Ref<const VectorXd>& y, const Eigen::Ref<const VectorXd>& x,
                                 const AdfOptions& options) {
  if (y.size() != x.size()) throw std::invalid_argument("engle_granger: series differ in length");
  const Index n = y.size();
  const bool trend = options.deterministic == Deterministic::trend;
  MatrixXd design(n, trend ? 3 : 2);
  design.col(0).setOnes();
  design.col(1) = x;
  if (trend) design.col(2) = VectorXd::LinSpaced(n, 1.0, static_cast<double>(n));
  Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
  if (qr.rank() < design.cols()) throw std::invalid_argument("engle_granger: x is constant or collinear with the trend");
  const VectorXd b = qr.solve(y);
  const VectorXd resid = y - design * b;

  EngleGrangerResult out;
  out.intercept = b(0);
  out.slope = b(1);
  out.critical = mackinnon_critical(2, trend ? Deterministic::trend : Deterministic::constant,
                                    static_cast<double>(n - 1));
  if (resid.squaredNorm() <= 1e-24 * std::max(1.0, y.squaredNorm())) {
    out.statistic = -std::numeric_limits<double>::infinity();
    out.nobs = n - 1;
    out.cointegrated = true;
    return out;
  }
  AdfOptions on_resid = options;
  on_resid.deterministic = Deterministic::none;
  const DfFit f = dickey_fuller(resid, on_resid);
  out.statistic = f.statistic;
  out.lags = f.lags;
  out.nobs = f.nobs;
  out.cointegrated = out.statistic < out.critical.at(options.significance);
  return out;
}

std::string to_string(SecondSpec s) { return s == SecondSpec::levels ? "levels" : "first-differences"; }

VectorXd first_difference(const Eigen::Ref<const VectorXd>& x) {
  if (x.size() < 2) return VectorXd();
  return x.tail(x.size() - 1) - x.head(x.size() - 1);
}

Pretests run_pretests(const AnnualSeries& annual, const AdfOptions& options) {
  const VectorXd x = annual.R - annual.Q;
  Pretests p;
  p.h_level = adf_test(annual.H, options);
  p.x_level = adf_test(x, options);
  p.h_diff = adf_test(first_difference(annual.H), options);
  p.x_diff = adf_test(first_difference(x), options);
  p.eg = engle_granger(annual.H, x, options);
  return p;
}

SpecChoice select_spec(const Pretests& p) {
  SpecChoice out;
  const bool h0 = p.h_level.reject, x0 = p.x_level.reject;
  const bool h1 = !h0 && p.h_diff.reject, x1 = !x0 && p.x_diff.reject;
  if (h0 && x0) {
    out.spec = SecondSpec::levels;
    out.reason = "both series stationary in levels";
  } else if (h1 && x1 && p.eg.cointegrated) {
    out.spec = SecondSpec::levels;
    out.reason = "both series I(1) and cointegrated";
  } else if (h1 && x1) {
    out.spec = SecondSpec::differences;
    out.reason = "both series I(1) without cointegration";
  } else {
    out.spec = SecondSpec::differences;
    out.reason = "pretests inconclusive";
    out.warnings.push_back("pretests give conflicting integration orders (H " +
                           std::string(h0 ? "I(0)" : h1 ? "I(1)" : "not I(0)/I(1)") + ", R-Q " +
                           std::string(x0 ? "I(0)" : x1 ? "I(1)" : "not I(0)/I(1)") +
                           "); using first differences");
  }
  return out;
}

double harmonic_mean(const Eigen::Ref<const VectorXd>& q, const Eigen::Ref<const VectorXd>& w) {
  if (q.size() != w.size() || q.size() == 0) throw std::invalid_argument("harmonic_mean: bad lengths");
  if ((q.array() <= 0).any()) throw std::invalid_argument("harmonic_mean: q must be positive");
  return w.sum() / (w.array() / q.array()).sum();
}

AnnualSeries annualize(const AggregateSeries& agg, const std::map<YearMonth, double>& weights,
                       std::span<const DomesticYear> domestic) {
  if (agg.periods.empty()) throw std::invalid_argument("annualize: empty aggregate series");
  std::map<YearMonth, double> q;
  for (std::size_t i = 0; i < agg.periods.size(); ++i) q[agg.periods[i]] = agg.q(static_cast<Index>(i));
  const YearMonth first = agg.periods.front(), last = agg.periods.back();
  const int y0 = first.month == 1 ? first.year : first.year + 1;
  const int y1 = last.month == 12 ? last.year : last.year - 1;

  std::vector<DomesticYear> years;
  for (const auto& d : domestic)
    if (d.year >= y0 && d.year <= y1) years.push_back(d);
  std::sort(years.begin(), years.end(), [](auto& a, auto& b) { return a.year < b.year; });
  if (years.empty())
    throw std::invalid_argument("annualize: no domestic year overlaps the full calendar years " +
                                std::to_string(y0) + "-" + std::to_string(y1));
  for (std::size_t i = 1; i < years.size(); ++i)
    if (years[i].year != years[i - 1].year + 1)
      throw std::invalid_argument("annualize: domestic years are not contiguous (" +
                                  std::to_string(years[i - 1].year) + " -> " + std::to_string(years[i].year) + ")");

  std::vector<YearMonth> missing;
  for (const auto& d : years)
    for (int m = 1; m <= 12; ++m) {
      const YearMonth t{d.year, m};
      auto w = weights.find(t);
      if (!q.count(t) || w == weights.end() || !(w->second > 0)) missing.push_back(t);
    }
  if (!missing.empty()) {
    std::string msg = "annualize: missing months";
    for (const auto& t : missing) msg += " " + t.str();
    throw MissingMonthsError(msg, missing);
  }

  AnnualSeries out;
  const Index n = static_cast<Index>(years.size());
  out.H.resize(n);
  out.R.resize(n);
  out.Q.resize(n);
  out.q.resize(n);
  out.import_value.resize(n);
  out.domestic_value.resize(n);
  for (Index k = 0; k < n; ++k) {
    const DomesticYear& d = years[static_cast<std::size_t>(k)];
    if (!(d.price > 0) || !(d.quantity > 0))
      throw std::invalid_argument("annualize: non-positive domestic data in " + std::to_string(d.year));
    Eigen::Matrix<double, 12, 1> qm, wm;
    for (int m = 1; m <= 12; ++m) {
      qm(m - 1) = q.at({d.year, m});
      wm(m - 1) = weights.at({d.year, m});
    }
    out.years.push_back(d.year);
    out.q(k) = harmonic_mean(qm, wm);
    out.import_value(k) = wm.sum();
    out.domestic_value(k) = d.price * d.quantity;
    out.H(k) = std::log(out.domestic_value(k) / out.import_value(k));
    out.R(k) = std::log(d.price);
    out.Q(k) = std::log(out.q(k));
  }
  return out;
}

LinearFit linear_iv(const Eigen::Ref<const VectorXd>& y, const Eigen::Ref<const MatrixXd>& x,
                    const Eigen::Ref<const MatrixXd>& z, Covariance cov) {
  const Index n = y.size(), k = x.cols();
  if (x.rows() != n || z.rows() != n) throw std::invalid_argument("linear_iv: row mismatch");
  if (z.cols() < k) throw std::invalid_argument("linear_iv: fewer instruments than regressors");
  if (n <= k) throw std::invalid_argument("linear_iv: not enough observations");
  auto check_rank = [](const MatrixXd& m, const char* prefix) {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(m);
    if (qr.rank() == m.cols()) return;
    std::vector<std::string> cols;
    for (Index i = qr.rank(); i < m.cols(); ++i) cols.push_back(prefix + std::to_string(qr.colsPermutation().indices()(i)));
    std::string msg = "collinear columns:";
    for (const auto& c : cols) msg += " " + c;
    throw RankDeficientError(msg, cols);
  };
  check_rank(x, "x");
  check_rank(z, "z");
  const MatrixXd xhat = z * (z.transpose() * z).ldlt().solve(z.transpose() * x);
  const MatrixXd a = xhat.transpose() * x;
  Eigen::ColPivHouseholderQR<MatrixXd> aqr(a);
  if (aqr.rank() < k) throw WeakInstrumentError("instruments do not identify every regressor");
  const MatrixXd a_inv = aqr.inverse();

  LinearFit out;
  out.nobs = n;
  out.df_resid = n - k;
  out.coef = a_inv * (xhat.transpose() * y);
  out.residuals = y - x * out.coef;
  if (cov == Covariance::hc0) {
    const MatrixXd g = xhat.array().colwise() * out.residuals.array();
    out.vcov = a_inv * (g.transpose() * g) * a_inv.transpose();
  } else {
    const double s2 = out.residuals.squaredNorm() / static_cast<double>(out.df_resid);
    out.vcov = s2 * a_inv * (xhat.transpose() * xhat) * a_inv.transpose();
  }
  out.vcov = 0.5 * (out.vcov + out.vcov.transpose());
  return out;
}

SecondStageResult estimate_second(const AnnualSeries& annual, SecondSpec spec,
                                  const std::vector<SecondInstrument>& instruments) {
  if (instruments.empty()) throw std::invalid_argument("estimate_second: no instruments");
  const bool levels = spec == SecondSpec::levels;
  VectorXd y = annual.H, x = annual.R - annual.Q;
  MatrixXd zx(annual.size(), static_cast<Index>(instruments.size()));
  for (std::size_t j = 0; j < instruments.size(); ++j)
    zx.col(static_cast<Index>(j)) = instruments[j] == SecondInstrument::log_aggregate ? annual.Q : annual.q;
  std::vector<int> years = annual.years;
  if (!levels) {
    y = first_difference(y);
    x = first_difference(x);
    MatrixXd d(std::max<Index>(zx.rows() - 1, 0), zx.cols());
    for (Index j = 0; j < zx.cols(); ++j) d.col(j) = first_difference(zx.col(j));
    zx = d;
    if (!years.empty()) years.erase(years.begin());
  }
  const Index n = y.size();
  if (n < 10)
    throw std::invalid_argument("estimate_second needs at least 10 observations, got " + std::to_string(n));

  MatrixXd design(n, levels ? 2 : 1);
  MatrixXd inst(n, zx.cols() + (levels ? 1 : 0));
  if (levels) {
    design << VectorXd::Ones(n), x;
    inst << VectorXd::Ones(n), zx;
  } else {
    design << x;
    inst << zx;
  }
  const Index slope = levels ? 1 : 0;
  auto pack = [&](const LinearFit& f, Estimator e) {
    SecondStageFit s;
    s.estimator = e;
    s.eta = f.coef(slope);
    s.se_eta = f.se(slope);
    s.nobs = f.nobs;
    if (levels) {
      s.phi = f.coef(0);
      s.se_phi = f.se(0);
    }
    return s;
  };

  SecondStageResult out;
  out.spec = spec;
  out.ls = pack(linear_iv(y, design, design), Estimator::LS);
  try {
    out.iv = pack(linear_iv(y, design, inst), Estimator::IV);
    FeData d;
    d.index.entity.assign(static_cast<std::size_t>(n), 0);
    d.index.time = years;
    d.y = y;
    d.x = x;
    d.z = zx;
    d.time_effects = false;
    d.entity_effects = levels;
    d.x_name = levels ? "R-Q" : "d.(R-Q)";
    for (auto k : instruments)
      d.z_names.push_back(std::string(levels ? "" : "d.") + (k == SecondInstrument::log_aggregate ? "Q" : "q"));
    out.diagnostics = iv_diagnostics(d, 1);
  } catch (const WeakInstrumentError& e) {
    out.iv.reset();
    out.warnings.push_back(std::string("IV not estimable: ") + e.what());
  } catch (const RankDeficientError& e) {
    out.iv.reset();
    out.warnings.push_back(std::string("IV not estimable: ") + e.what());
  }
  return out;
}

MacroElasticity macro_delta(const SecondStageFit& fit) {
  MacroElasticity m;
  m.rho = 1.0 - fit.eta;
  m.se_rho = fit.se_eta;
  if (fit.phi) {
    const double b = 1.0 / (1.0 + std::exp(-*fit.phi));
    m.beta = b;
    m.se_beta = b * (1.0 - b) * fit.se_phi.value_or(0.0);
  }
  return m;
}

std::string to_string(ChannelMode m) {
  switch (m) {
    case ChannelMode::fe_panel: return "FE";
    case ChannelMode::first_differences: return "first-differences";
    case ChannelMode::levels: return "levels";
  }
  return "?";
}

ChannelResult channel_test(const Eigen::Ref<const VectorXd>& dependent, const Eigen::Ref<const VectorXd>& regressor,
                           const PanelIndex& index, ChannelMode mode, double significance) {
  const Index n = dependent.size();
  if (regressor.size() != n) throw std::invalid_argument("channel_test: length mismatch");
  std::vector<std::pair<Index, Index>> spans{{0, n}};
  if (mode == ChannelMode::fe_panel) {
    if (index.rows() != n) throw std::invalid_argument("channel_test: index does not match the data");
    index.validate();
    spans = index.spans();
  }
  VectorXd yd = dependent, xd = regressor;
  for (auto [b, e] : spans) {
    yd.segment(b, e - b).array() -= yd.segment(b, e - b).mean();
    xd.segment(b, e - b).array() -= xd.segment(b, e - b).mean();
  }
  ChannelResult out;
  out.mode = mode;
  out.nobs = n;
  out.df = n - static_cast<Index>(spans.size()) - 1;
  if (out.df < 1) throw std::invalid_argument("channel_test: not enough observations");
  const double sxx = xd.squaredNorm();
  if (!(sxx > 0)) throw RankDeficientError("channel_test: regressor has no within variation", {"regressor"});
  out.slope = xd.dot(yd) / sxx;
  const double s2 = (yd - out.slope * xd).squaredNorm() / static_cast<double>(out.df);
  out.se = std::sqrt(s2 / sxx);
  const double xbar = regressor.mean();
  out.intercept = dependent.mean() - out.slope * xbar;
  out.se_intercept = std::sqrt(s2 * (1.0 / static_cast<double>(n) + xbar * xbar / sxx));
  auto p_of = [&](double coef, double se) {
    if (se == 0) return coef == 0 ? 1.0 : 0.0;
    return stats::t_two_sided(coef / se, static_cast<double>(out.df));
  };
  out.p = p_of(out.slope, out.se);
  out.p_intercept = p_of(out.intercept, out.se_intercept);
  out.present = out.p < significance;
  return out;
}

}  // namespace armington
