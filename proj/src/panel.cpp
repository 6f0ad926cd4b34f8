#include "armington/panel.hpp"

#include "armington/stats.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace armington {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string time_label(int t) {
  // Month indices are year*12 + m; anything smaller is a plain counter.
  return t > 1000 * 12 ? YearMonth::from_index(t).str() : std::to_string(t);
}

// Pseudo-inverse of a small symmetric PSD matrix.
MatrixXd psd_pinv(const MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (s + s.transpose()));
  const VectorXd& v = eig.eigenvalues();
  const double tol = 1e-12 * std::max(1.0, v.cwiseAbs().maxCoeff());
  VectorXd inv = v.unaryExpr([tol](double x) { return x > tol ? 1.0 / x : 0.0; });
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

// Entity demeaning plus partialling out of the (demeaned) time dummies. The
// dummy block is never materialised: D~'D~ is accumulated per entity and
// D~'v is a per-period sum for entity-demeaned v.
class Within {
 public:
  Within(const PanelIndex& index, bool time_effects, bool entity_effects = true)
      : index_(index), spans_(index.spans()), entity_effects_(entity_effects) {
    if (time_effects) {
      times_ = index.time;
      std::sort(times_.begin(), times_.end());
      times_.erase(std::unique(times_.begin(), times_.end()), times_.end());
    }
    m_ = times_.empty() ? 0 : static_cast<Index>(times_.size()) - 1;
    col_.assign(index.time.size(), -1);
    if (m_ > 0) {
      for (std::size_t r = 0; r < index.time.size(); ++r) {
        auto it = std::lower_bound(times_.begin(), times_.end(), index.time[r]);
        const Index c = it - times_.begin();
        col_[r] = c < m_ ? static_cast<int>(c) : -1;
      }
    }
    gdd_ = MatrixXd::Zero(m_, m_);
    for (auto [b, e] : spans_) {
      const double inv_t = 1.0 / static_cast<double>(e - b);
      for (Index r = b; r < e; ++r) {
        const int a = col_[static_cast<std::size_t>(r)];
        if (a < 0) continue;
        gdd_(a, a) += 1.0;
        for (Index s = b; s < e; ++s) {
          const int c = col_[static_cast<std::size_t>(s)];
          if (c >= 0) gdd_(a, c) -= inv_t;
        }
      }
    }
    if (m_ > 0) {
      Eigen::LDLT<MatrixXd> ldlt(gdd_);
      const VectorXd d = ldlt.vectorD();
      const double scale = d.cwiseAbs().maxCoeff();
      if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-10 * std::max(1.0, scale))
        report_collinear_dummies();
      ginv_ = ldlt.solve(MatrixXd::Identity(m_, m_));
    }
  }

  const std::vector<std::pair<Index, Index>>& spans() const { return spans_; }
  const std::vector<int>& times() const { return times_; }
  Index m() const { return m_; }
  Index absorbed() const { return (entity_effects_ ? static_cast<Index>(spans_.size()) : 0) + m_; }
  bool entity_effects() const { return entity_effects_; }
  // Inflates a meat for the degrees of freedom used by the absorbed effects.
  double dof_scale() const {
    const Index n = index_.rows();
    if (n - absorbed() < 2)
      throw std::invalid_argument("too few observations for the entity and time effects (" + std::to_string(n) +
                                  " rows, " + std::to_string(absorbed()) + " effects)");
    return static_cast<double>(n) / static_cast<double>(n - absorbed());
  }
  int col(Index r) const { return col_[static_cast<std::size_t>(r)]; }
  const MatrixXd& ginv() const { return ginv_; }

  MatrixXd demean(const MatrixXd& v) const {
    MatrixXd out = v;
    if (!entity_effects_) return out;
    for (auto [b, e] : spans_) {
      const Eigen::RowVectorXd mean = v.middleRows(b, e - b).colwise().mean();
      out.middleRows(b, e - b).rowwise() -= mean;
    }
    return out;
  }

  // D~' v for entity-demeaned v.
  MatrixXd dt(const MatrixXd& v) const {
    MatrixXd out = MatrixXd::Zero(m_, v.cols());
    for (Index r = 0; r < v.rows(); ++r)
      if (col(r) >= 0) out.row(col(r)) += v.row(r);
    return out;
  }

  // D~ delta.
  MatrixXd d_times(const MatrixXd& delta) const {
    MatrixXd out = MatrixXd::Zero(index_.rows(), delta.cols());
    for (auto [b, e] : spans_) {
      Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(delta.cols());
      for (Index r = b; r < e; ++r)
        if (col(r) >= 0) mean += delta.row(col(r));
      mean /= static_cast<double>(e - b);
      for (Index r = b; r < e; ++r) {
        out.row(r) = -mean;
        if (col(r) >= 0) out.row(r) += delta.row(col(r));
      }
    }
    return out;
  }

  MatrixXd partial(const MatrixXd& demeaned) const {
    if (m_ == 0) return demeaned;
    return demeaned - d_times(ginv_ * dt(demeaned));
  }

  // Kernel-weighted score covariance for scores [z u, d~ u], returned as
  // blocks (zz, zd, dd).
  struct Meat {
    MatrixXd zz, zd, dd;
  };
  Meat meat(const MatrixXd& z, const VectorXd& u, int bandwidth) const {
    const Index l = z.cols();
    Meat s{MatrixXd::Zero(l, l), MatrixXd::Zero(l, m_), MatrixXd::Zero(m_, m_)};
    for (auto [b, e] : spans_) {
      const Index t = e - b;
      MatrixXd a = MatrixXd::Zero(t, t);
      for (Index r = 0; r < t; ++r) {
        for (Index q = r; q < t; ++q) {
          const int lag = index_.time[static_cast<std::size_t>(b + q)] - index_.time[static_cast<std::size_t>(b + r)];
          if (lag >= bandwidth) break;
          a(r, q) = a(q, r) = bartlett_weight(lag, bandwidth) * u(b + r) * u(b + q);
        }
      }
      const auto zi = z.middleRows(b, t);
      const MatrixXd az = a * zi;  // row q: sum_r a_qr z_r
      s.zz.noalias() += zi.transpose() * az;
      if (m_ == 0) continue;
      const VectorXd rho = a.rowwise().sum();
      const double kappa = rho.sum();
      const double inv_t = 1.0 / static_cast<double>(t);
      const VectorXd zr = zi.transpose() * rho;
      std::vector<Index> rows;
      for (Index r = 0; r < t; ++r)
        if (col(b + r) >= 0) rows.push_back(r);
      for (Index r : rows) {
        const int cr = col(b + r);
        s.zd.col(cr) += az.row(r).transpose() - inv_t * zr;
        for (Index q : rows) {
          const int cq = col(b + q);
          s.dd(cr, cq) += a(r, q) - inv_t * (rho(r) + rho(q)) + kappa * inv_t * inv_t;
        }
      }
    }
    return s;
  }

  std::string name(Index c) const { return "D[" + time_label(times_[static_cast<std::size_t>(c)]) + "]"; }

 private:
  void report_collinear_dummies() const {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(gdd_);
    qr.setThreshold(1e-10);
    std::vector<std::string> cols;
    for (Index i = qr.rank(); i < m_; ++i) cols.push_back(name(qr.colsPermutation().indices()(i)));
    std::string msg = "time effects collinear with entity effects:";
    for (const auto& c : cols) msg += " " + c;
    throw RankDeficientError(msg, cols);
  }

  const PanelIndex& index_;
  std::vector<std::pair<Index, Index>> spans_;
  bool entity_effects_ = true;
  std::vector<int> times_;
  std::vector<int> col_;
  Index m_ = 0;
  MatrixXd gdd_;
  MatrixXd ginv_;
};

void check_x(const VectorXd& x_demeaned, const VectorXd& x_partialled, const std::string& name) {
  const double before = x_demeaned.squaredNorm();
  if (before == 0 || x_partialled.squaredNorm() <= 1e-12 * before)
    throw RankDeficientError(name + " is collinear with the entity and time effects", {name});
}

void check_instruments(const MatrixXd& zz, const std::vector<std::string>& names) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(zz);
  qr.setThreshold(1e-10);
  if (qr.rank() == zz.cols()) return;
  std::vector<std::string> cols;
  for (Index i = qr.rank(); i < zz.cols(); ++i) {
    const Index c = qr.colsPermutation().indices()(i);
    cols.push_back(c < static_cast<Index>(names.size()) ? names[static_cast<std::size_t>(c)]
                                                        : "z" + std::to_string(c));
  }
  std::string msg = "instruments collinear after the within transformation:";
  for (const auto& c : cols) msg += " " + c;
  throw RankDeficientError(msg, cols);
}

struct Prepared {
  VectorXd y_dm, x_dm;  // entity-demeaned
  VectorXd y, x;        // fully partialled
  MatrixXd z;           // partialled instruments
};

Prepared prepare(const FeData& data, const Within& w) {
  Prepared p;
  p.y_dm = w.demean(data.y);
  p.x_dm = w.demean(data.x);
  p.y = w.partial(p.y_dm);
  p.x = w.partial(p.x_dm);
  check_x(p.x_dm, p.x, data.x_name);
  if (data.z.cols() > 0) p.z = w.partial(w.demean(data.z));
  return p;
}

// Fills everything but gamma's influence vector h, which differs between LS and IV.
FeEstimate finish(const FeData& data, const Within& w, const Prepared& p, Estimator tag, double gamma,
                  const MatrixXd& scores_z, const VectorXd& h, int bandwidth) {
  FeEstimate fit;
  fit.estimator = tag;
  fit.gamma = gamma;
  fit.bandwidth = bandwidth;
  fit.nobs = data.index.rows();
  fit.entities = static_cast<int>(w.spans().size());
  fit.times = w.times();
  fit.residuals = p.y - gamma * p.x;

  const Index m = w.m();
  VectorXd delta = VectorXd::Zero(m);
  VectorXd b = VectorXd::Zero(m);
  if (m > 0) {
    delta = w.ginv() * w.dt(p.y_dm - gamma * p.x_dm);
    b = w.ginv() * w.dt(p.x_dm);
  }
  fit.time_effects = VectorXd::Zero(static_cast<Index>(fit.times.size()));
  fit.time_effects.head(m) = delta;

  // Fixed effects from the untransformed data.
  fit.fixed_effects = VectorXd::Zero(fit.entities);
  if (w.entity_effects()) {
    for (std::size_t i = 0; i < w.spans().size(); ++i) {
      auto [s0, s1] = w.spans()[i];
      double sum = 0;
      for (Index r = s0; r < s1; ++r) {
        sum += data.y(r) - gamma * data.x(r);
        if (w.col(r) >= 0) sum -= delta(w.col(r));
      }
      fit.fixed_effects(static_cast<Index>(i)) = sum / static_cast<double>(s1 - s0);
    }
    const double top = fit.fixed_effects.maxCoeff();
    fit.intercept = top + std::log((fit.fixed_effects.array() - top).exp().sum());
  }

  // V = T S T' with T = [[h', 0], [-b h', G^-1]].
  Within::Meat s = w.meat(scores_z, fit.residuals, bandwidth);
  const double scale = w.dof_scale();
  s.zz *= scale;
  s.zd *= scale;
  s.dd *= scale;
  fit.absorbed = w.absorbed();
  MatrixXd v(1 + m, 1 + m);
  const double vgg = h.dot(s.zz * h);
  v(0, 0) = vgg;
  if (m > 0) {
    const Eigen::RowVectorXd hs = h.transpose() * s.zd * w.ginv();
    const Eigen::RowVectorXd vgd = hs - vgg * b.transpose();
    v.block(0, 1, 1, m) = vgd;
    v.block(1, 0, m, 1) = vgd.transpose();
    v.block(1, 1, m, m) = w.ginv() * s.dd * w.ginv() - b * hs - hs.transpose() * b.transpose() +
                          vgg * b * b.transpose();
  }
  bool repaired = false;
  fit.vcov = floor_eigenvalues(v, &repaired);
  if (repaired) fit.warnings.push_back("HAC covariance was not PSD; eigenvalues floored at 0");

  int longest = 0;
  for (auto [s0, s1] : w.spans())
    longest = std::max(longest, data.index.time[static_cast<std::size_t>(s1 - 1)] -
                                    data.index.time[static_cast<std::size_t>(s0)] + 1);
  if (bandwidth > longest)
    fit.warnings.push_back("HAC bandwidth " + std::to_string(bandwidth) +
                           " exceeds the longest entity series (" + std::to_string(longest) +
                           "); lags truncated");
  return fit;
}

struct GmmFit {
  double gamma = 0;
  double j = 0;
};

// Efficient GMM with a single regressor: minimises g' W g, g = zy - gamma zx.
GmmFit gmm(const VectorXd& zy, const VectorXd& zx, const MatrixXd& weight) {
  GmmFit out;
  out.gamma = zx.dot(weight * zy) / zx.dot(weight * zx);
  const VectorXd g = zy - out.gamma * zx;
  out.j = std::max(0.0, g.dot(weight * g));
  return out;
}

}  // namespace

void FeData::validate() const {
  index.validate();
  const Index n = index.rows();
  if (y.size() != n || x.size() != n || (z.cols() > 0 && z.rows() != n))
    throw std::invalid_argument("FeData: column lengths differ from the index");
  if (!y.allFinite() || !x.allFinite() || !z.allFinite())
    throw std::invalid_argument("FeData: non-finite values");
  if (time_effects && !entity_effects)
    throw std::invalid_argument("FeData: time effects require entity effects");
  for (auto [b, e] : index.spans())
    if (entity_effects && e - b < 2)
      throw std::invalid_argument("FeData: every entity needs at least 2 observations (entity " +
                                  std::to_string(index.entity[static_cast<std::size_t>(b)]) + ")");
}

std::string to_string(Estimator e) { return e == Estimator::LS ? "LS" : "IV"; }

FeEstimate within_fe_ls(const FeData& data, int bandwidth) {
  data.validate();
  if (bandwidth < 1) throw std::invalid_argument("HAC bandwidth must be >= 1");
  const Within w(data.index, data.time_effects, data.entity_effects);
  const Prepared p = prepare(data, w);
  const double xx = p.x.squaredNorm();
  const double gamma = p.x.dot(p.y) / xx;
  VectorXd h(1);
  h(0) = 1.0 / xx;
  return finish(data, w, p, Estimator::LS, gamma, p.x, h, bandwidth);
}

FeEstimate within_fe_2sls(const FeData& data, int bandwidth) {
  data.validate();
  if (bandwidth < 1) throw std::invalid_argument("HAC bandwidth must be >= 1");
  if (data.z.cols() < 1) throw std::invalid_argument("2SLS needs at least one instrument");
  const Within w(data.index, data.time_effects, data.entity_effects);
  const Prepared p = prepare(data, w);
  const MatrixXd zz = p.z.transpose() * p.z;
  check_instruments(zz, data.z_names);
  const VectorXd zx = p.z.transpose() * p.x;
  const VectorXd pi = zz.ldlt().solve(zx);
  const double fitted = pi.dot(zx);  // xhat' x = xhat' xhat
  if (!(fitted > 1e-12 * p.x.squaredNorm()))
    throw WeakInstrumentError("instruments have no first-stage power for " + data.x_name);
  const double gamma = pi.dot(p.z.transpose() * p.y) / fitted;
  return finish(data, w, p, Estimator::IV, gamma, p.z, pi / fitted, bandwidth);
}

IvDiagnostics iv_diagnostics(const FeData& data, int bandwidth) {
  data.validate();
  if (data.z.cols() < 1) throw std::invalid_argument("diagnostics need at least one instrument");
  const Within w(data.index, data.time_effects, data.entity_effects);
  const Prepared p = prepare(data, w);
  const double scale = w.dof_scale();
  const Index l = p.z.cols();
  const MatrixXd zz = p.z.transpose() * p.z;
  check_instruments(zz, data.z_names);
  const VectorXd zx = p.z.transpose() * p.x;
  const VectorXd zy = p.z.transpose() * p.y;
  const MatrixXd zz_inv = zz.ldlt().solve(MatrixXd::Identity(l, l));
  const VectorXd pi = zz_inv * zx;
  const double fitted = pi.dot(zx);
  if (!(fitted > 1e-12 * p.x.squaredNorm()))
    throw WeakInstrumentError("instruments have no first-stage power for " + data.x_name);

  IvDiagnostics out;

  // Weak identification: robust Wald test of pi = 0, divided by L.
  const VectorXd v = p.x - p.z * pi;
  const MatrixXd s_v = scale * hac_vcov(p.z.array().colwise() * v.array(), data.index, bandwidth);
  const MatrixXd v_pi = zz_inv * s_v * zz_inv;
  out.kp_wald_f = std::max(0.0, pi.dot(psd_pinv(v_pi) * pi)) / static_cast<double>(l);

  // Underidentification: score test of pi = 0.
  const MatrixXd s_0 = scale * hac_vcov(p.z.array().colwise() * p.x.array(), data.index, bandwidth);
  out.kp_lm.statistic = std::max(0.0, zx.dot(psd_pinv(s_0) * zx));
  out.kp_lm.df = static_cast<int>(l);
  out.kp_lm.p = stats::chi2_sf(out.kp_lm.statistic, out.kp_lm.df);

  // Overidentification from 2SLS residuals.
  const double gamma_iv = pi.dot(zy) / fitted;
  const VectorXd u_iv = p.y - gamma_iv * p.x;
  out.hansen_j.df = static_cast<int>(l - 1);
  if (l > 1) {
    const MatrixXd s = scale * hac_vcov(p.z.array().colwise() * u_iv.array(), data.index, bandwidth);
    out.hansen_j.statistic = gmm(zy, zx, psd_pinv(s)).j;
    out.hansen_j.p = stats::chi2_sf(out.hansen_j.statistic, out.hansen_j.df);
  }

  // Endogeneity: J with x added to the instruments minus J without, both
  // weighted by the covariance from the LS residuals.
  const double gamma_ls = p.x.dot(p.y) / p.x.squaredNorm();
  const VectorXd u_ls = p.y - gamma_ls * p.x;
  MatrixXd zf(p.z.rows(), l + 1);
  zf << p.z, p.x;
  const MatrixXd s_f = scale * hac_vcov(zf.array().colwise() * u_ls.array(), data.index, bandwidth);
  const VectorXd zfx = zf.transpose() * p.x;
  const VectorXd zfy = zf.transpose() * p.y;
  const double j_f = gmm(zfy, zfx, psd_pinv(s_f)).j;
  const double j_u = l > 1 ? gmm(zy, zx, psd_pinv(s_f.topLeftCorner(l, l))).j : 0.0;
  out.endogeneity.statistic = std::max(0.0, j_f - j_u);
  out.endogeneity.df = 1;
  out.endogeneity.p = stats::chi2_sf(out.endogeneity.statistic, 1);
  return out;
}

AggregateSeries recover_aggregates(const FeEstimate& fit) {
  if (fit.times.empty()) throw UndefinedAggregateError("no time effects to recover aggregates from");
  if (fit.gamma == 0) throw UndefinedAggregateError("gamma is zero; q_t is undefined");
  const Index n = static_cast<Index>(fit.times.size());
  const Index m = n - 1;
  AggregateSeries out;
  out.q.resize(n);
  out.se.resize(n);
  const double g = fit.gamma;
  for (Index t = 0; t < n; ++t) {
    out.periods.push_back(YearMonth::from_index(fit.times[static_cast<std::size_t>(t)]));
    const double mu = fit.time_effects(t) - fit.time_effects(m);
    const double q = std::exp(-mu / g);
    out.q(t) = t == m ? 1.0 : q;
    if (t == m) {
      out.se(t) = 0;
      continue;
    }
    // Gradient with respect to (gamma, mu_t).
    const double d_gamma = q * mu / (g * g);
    const double d_mu = -q / g;
    const double var = d_gamma * d_gamma * fit.vcov(0, 0) + 2 * d_gamma * d_mu * fit.vcov(0, 1 + t) +
                       d_mu * d_mu * fit.vcov(1 + t, 1 + t);
    out.se(t) = std::sqrt(std::max(0.0, var));
  }
  return out;
}

std::string to_string(InstrumentKind k) {
  switch (k) {
    case InstrumentKind::lnfx: return "lnfx";
    case InstrumentKind::fx: return "fx";
    case InstrumentKind::lncumfx: return "lncumfx";
    case InstrumentKind::cumfx: return "cumfx";
  }
  return "?";
}

std::string to_string(Cumulation c) {
  switch (c) {
    case Cumulation::jfy_mean: return "jfy_mean";
    case Cumulation::ytd_sum: return "ytd_sum";
    case Cumulation::rolling12: return "rolling12";
  }
  return "?";
}

InstrumentKind parse_instrument(std::string_view text) {
  for (auto k : {InstrumentKind::lnfx, InstrumentKind::fx, InstrumentKind::lncumfx, InstrumentKind::cumfx})
    if (text == to_string(k)) return k;
  throw std::invalid_argument("unknown instrument '" + std::string(text) + "' (lnfx, fx, lncumfx, cumfx)");
}

Cumulation parse_cumulation(std::string_view text) {
  for (auto c : {Cumulation::jfy_mean, Cumulation::ytd_sum, Cumulation::rolling12})
    if (text == to_string(c)) return c;
  throw std::invalid_argument("unknown cumulation '" + std::string(text) + "' (jfy_mean, ytd_sum, rolling12)");
}

ExchangeRates cumulate_fx(const ExchangeRates& fx, Cumulation mode) {
  ExchangeRates out;
  std::map<std::string, std::vector<std::pair<YearMonth, double>>> by_country;
  for (const auto& [key, rate] : fx) by_country[key.country].emplace_back(key.period, rate);
  for (const auto& [country, series] : by_country) {
    for (std::size_t i = 0; i < series.size(); ++i) {
      const YearMonth t = series[i].first;
      double sum = 0;
      int count = 0;
      for (std::size_t j = i + 1; j-- > 0;) {
        const YearMonth s = series[j].first;
        const bool inside = mode == Cumulation::rolling12 ? months_between(s, t) < 12 : s.jfy() == t.jfy();
        if (!inside) break;
        sum += series[j].second;
        ++count;
      }
      out[{country, t}] = mode == Cumulation::ytd_sum ? sum : sum / count;
    }
  }
  return out;
}

FeData first_stage_design(const PanelDataset& panel, const std::vector<InstrumentKind>& instruments,
                          const ExchangeRates& fx, Cumulation mode, std::size_t* dropped) {
  ExchangeRates monthly = fx;
  if (monthly.empty())
    for (const auto& o : panel.rows())
      if (o.has_fx()) monthly[{o.country, o.period}] = std::exp(o.E);
  bool need_cum = false;
  for (auto k : instruments) need_cum |= k == InstrumentKind::lncumfx || k == InstrumentKind::cumfx;
  const ExchangeRates cum = need_cum ? cumulate_fx(monthly, mode) : ExchangeRates{};

  const Index l = static_cast<Index>(instruments.size());
  std::vector<const PanelObservation*> kept;
  std::vector<VectorXd> zrows;
  std::size_t skipped = 0;
  for (const auto& o : panel.rows()) {
    VectorXd z(l);
    bool ok = true;
    for (Index k = 0; k < l && ok; ++k) {
      switch (instruments[static_cast<std::size_t>(k)]) {
        case InstrumentKind::lnfx: ok = o.has_fx(); z(k) = o.E; break;
        case InstrumentKind::fx: ok = o.has_fx(); z(k) = std::exp(o.E); break;
        case InstrumentKind::lncumfx:
        case InstrumentKind::cumfx: {
          auto it = cum.find({o.country, o.period});
          ok = it != cum.end() && it->second > 0;
          if (ok)
            z(k) = instruments[static_cast<std::size_t>(k)] == InstrumentKind::cumfx ? it->second
                                                                                      : std::log(it->second);
          break;
        }
      }
    }
    if (!ok) {
      ++skipped;
      continue;
    }
    kept.push_back(&o);
    zrows.push_back(std::move(z));
  }

  // Drop entities left with fewer than two rows.
  std::map<std::string, int> counts;
  for (auto* o : kept) ++counts[o->country];

  FeData d;
  for (auto k : instruments) d.z_names.push_back(to_string(k));
  std::vector<Index> rows;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (counts[kept[i]->country] < 2) {
      ++skipped;
      continue;
    }
    rows.push_back(static_cast<Index>(i));
  }
  const Index n = static_cast<Index>(rows.size());
  d.y.resize(n);
  d.x.resize(n);
  d.z.resize(n, l);
  for (Index r = 0; r < n; ++r) {
    const PanelObservation& o = *kept[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
    if (d.entity_names.empty() || d.entity_names.back() != o.country) d.entity_names.push_back(o.country);
    d.index.entity.push_back(static_cast<int>(d.entity_names.size()) - 1);
    d.index.time.push_back(o.period.index());
    d.y(r) = o.S;
    d.x(r) = o.P;
    if (l > 0) d.z.row(r) = zrows[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])].transpose();
  }
  if (dropped) *dropped = skipped;
  return d;
}

}  // namespace armington
