#pragma once

#include "armington/hac.hpp"
#include "armington/panel.hpp"
#include "armington/period.hpp"
#include "armington/trade_data.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace armington {

// -- annual aggregation -----------------------------------------------------

/// Calendar-year series for the outer share equation H = phi + eta (R - Q) + nu.
struct AnnualSeries {
  std::vector<int> years;
  Eigen::VectorXd H;               ///< ln(r z / sum_i w_ik)
  Eigen::VectorXd R;               ///< ln r
  Eigen::VectorXd Q;               ///< ln q_k
  Eigen::VectorXd q;               ///< q_k
  Eigen::VectorXd import_value;    ///< sum_i w_ik
  Eigen::VectorXd domestic_value;  ///< r z

  Eigen::Index size() const { return static_cast<Eigen::Index>(years.size()); }
};

class MissingMonthsError : public std::runtime_error {
 public:
  MissingMonthsError(const std::string& what, std::vector<YearMonth> months)
      : std::runtime_error(what), months_(std::move(months)) {}
  const std::vector<YearMonth>& months() const { return months_; }

 private:
  std::vector<YearMonth> months_;
};

/// sum w / sum (w / q).
double harmonic_mean(const Eigen::Ref<const Eigen::VectorXd>& q, const Eigen::Ref<const Eigen::VectorXd>& w);

/// Annualises monthly aggregates over the domestic years that fall inside the
/// calendar years spanned by `q` (a partial first or last year is skipped).
/// Any month missing from `q` or `weights` inside that range throws
/// MissingMonthsError listing every gap.
AnnualSeries annualize(const AggregateSeries& q, const std::map<YearMonth, double>& weights,
                       std::span<const DomesticYear> domestic);

// -- unit root and cointegration pretests ------------------------------------

enum class Deterministic { none, constant, trend };

struct CriticalValues {
  double p1 = 0, p5 = 0, p10 = 0;
  /// Throws std::invalid_argument unless level is 0.01, 0.05 or 0.10.
  double at(double level) const;
};

/// Response-surface critical values for the Dickey-Fuller t statistic with
/// `n_vars` integrated variables (1 for ADF, 2 for a bivariate Engle-Granger test).
CriticalValues mackinnon_critical(int n_vars, Deterministic det, double nobs);

struct AdfOptions {
  Deterministic deterministic = Deterministic::constant;
  std::optional<int> lags;  ///< fixed lag order; empty selects by AIC over 0..max_lags
  int max_lags = 4;
  double significance = 0.05;
};

struct AdfResult {
  double statistic = 0;
  int lags = 0;
  Eigen::Index nobs = 0;
  CriticalValues critical;
  bool reject = false;  ///< unit root rejected
};

/// Throws std::invalid_argument when the series has fewer than lags + 10 points.
AdfResult adf_test(const Eigen::Ref<const Eigen::VectorXd>& y, const AdfOptions& options = {});

struct EngleGrangerResult {
  double statistic = 0;
  int lags = 0;
  Eigen::Index nobs = 0;
  CriticalValues critical;
  bool cointegrated = false;
  double intercept = 0, slope = 0;
};

/// ADF without deterministic terms on the residuals of y = a + b x (+ c t) + e;
/// a trend is included when options.deterministic is `trend`.
EngleGrangerResult engle_granger(const Eigen::Ref<const Eigen::VectorXd>& y,
                                 const Eigen::Ref<const Eigen::VectorXd>& x, const AdfOptions& options = {});

enum class SecondSpec { levels, differences };
std::string to_string(SecondSpec s);

struct Pretests {
  AdfResult h_level, x_level, h_diff, x_diff;
  EngleGrangerResult eg;
};

/// Pretests on H and R - Q.
Pretests run_pretests(const AnnualSeries& annual, const AdfOptions& options = {});

struct SpecChoice {
  SecondSpec spec = SecondSpec::differences;
  std::string reason;
  std::vector<std::string> warnings;
};

/// Stationary in levels or cointegrated: levels. Both I(1) and not
/// cointegrated: differences. Anything else warns and uses differences.
SpecChoice select_spec(const Pretests& p);

/// x_t - x_{t-1}.
Eigen::VectorXd first_difference(const Eigen::Ref<const Eigen::VectorXd>& x);

// -- cross-section regression -----------------------------------------------

enum class Covariance { hc0, classical };

struct LinearFit {
  Eigen::VectorXd coef;
  Eigen::MatrixXd vcov;
  Eigen::VectorXd residuals;
  Eigen::Index nobs = 0;
  Eigen::Index df_resid = 0;

  double se(Eigen::Index i) const { return std::sqrt(vcov(i, i)); }
};

/// 2SLS of y on X with instruments Z (Z = X gives LS). Throws
/// RankDeficientError when X or Z is collinear and WeakInstrumentError when
/// the projected regressors are.
LinearFit linear_iv(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& x,
                    const Eigen::Ref<const Eigen::MatrixXd>& z, Covariance cov = Covariance::hc0);

// -- second stage -----------------------------------------------------------

enum class SecondInstrument { log_aggregate, aggregate };

struct SecondStageFit {
  Estimator estimator = Estimator::LS;
  double eta = 0, se_eta = 0;
  std::optional<double> phi, se_phi;  ///< levels only
  Eigen::Index nobs = 0;
};

struct SecondStageResult {
  SecondSpec spec = SecondSpec::levels;
  SecondStageFit ls;
  std::optional<SecondStageFit> iv;
  std::optional<IvDiagnostics> diagnostics;
  std::vector<std::string> warnings;
};

/// LS and IV fits of H on (R - Q), instrumented by Q and/or q (differenced
/// in the difference spec, which has no constant). Needs at least 10 rows
/// after differencing. A rank-deficient first stage leaves `iv` empty with a warning.
SecondStageResult estimate_second(const AnnualSeries& annual, SecondSpec spec,
                                  const std::vector<SecondInstrument>& instruments = {
                                      SecondInstrument::log_aggregate, SecondInstrument::aggregate});

struct MacroElasticity {
  double rho = 0, se_rho = 0;
  std::optional<double> beta, se_beta;
};

/// rho = 1 - eta; beta = logistic(phi) with se beta (1 - beta) se(phi).
MacroElasticity macro_delta(const SecondStageFit& fit);

// -- channel test -----------------------------------------------------------

enum class ChannelMode { fe_panel, first_differences, levels };
std::string to_string(ChannelMode m);

/// Classical-se regression of `dependent` on `regressor` with entity effects
/// (fe_panel) or a constant (first_differences on already differenced data,
/// or levels).
struct ChannelResult {
  ChannelMode mode = ChannelMode::first_differences;
  double slope = 0, se = 0, p = 1;
  double intercept = 0, se_intercept = 0, p_intercept = 1;
  Eigen::Index nobs = 0;
  Eigen::Index df = 0;
  bool present = false;  ///< zero slope rejected
};

ChannelResult channel_test(const Eigen::Ref<const Eigen::VectorXd>& dependent,
                           const Eigen::Ref<const Eigen::VectorXd>& regressor, const PanelIndex& index,
                           ChannelMode mode, double significance = 0.05);

}  // namespace armington
