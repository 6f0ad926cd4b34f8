#pragma once

#include "armington/hac.hpp"
#include "armington/period.hpp"
#include "armington/trade_data.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace armington {

/// Raised when regressors are collinear after the within transformation.
class RankDeficientError : public std::runtime_error {
 public:
  RankDeficientError(const std::string& what, std::vector<std::string> columns)
      : std::runtime_error(what), columns_(std::move(columns)) {}
  const std::vector<std::string>& columns() const { return columns_; }

 private:
  std::vector<std::string> columns_;
};

/// Raised when the instruments carry no information about the endogenous regressor.
class WeakInstrumentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One-regressor fixed-effects design: y = time effects + gamma x + a_i + e.
/// Time effects are one dummy per observed `index.time` value, with the last
/// observed value as the base.
struct FeData {
  PanelIndex index;
  Eigen::VectorXd y;
  Eigen::VectorXd x;
  Eigen::MatrixXd z;  ///< excluded instruments, one column each (may be empty for LS)
  bool time_effects = true;
  bool entity_effects = true;  ///< false fits through the origin; requires time_effects = false
  std::string x_name = "P";
  std::vector<std::string> z_names;
  std::vector<std::string> entity_names;

  void validate() const;
};

enum class Estimator { LS, IV };
std::string to_string(Estimator e);

struct FeEstimate {
  Estimator estimator = Estimator::LS;
  double gamma = 0;
  /// mu_t - mu_J for every observed time value, ascending; the last entry is the base and is 0.
  Eigen::VectorXd time_effects;
  std::vector<int> times;
  /// Joint covariance of (gamma, non-base time effects), in that order.
  Eigen::MatrixXd vcov;
  Eigen::VectorXd residuals;
  Eigen::VectorXd fixed_effects;  ///< a_i = mu_J + ln alpha_i, one per entity
  double intercept = 0;           ///< mu_J = ln sum_i exp(a_i), so that sum alpha_i = 1
  Eigen::Index nobs = 0;
  int entities = 0;
  /// Entity plus non-base time effects; the HAC meat is scaled by nobs / (nobs - absorbed).
  Eigen::Index absorbed = 0;
  int bandwidth = 1;
  std::vector<std::string> warnings;

  double se_gamma() const { return std::sqrt(vcov(0, 0)); }
  /// ln alpha_i implied by the normalisation of `intercept`.
  Eigen::VectorXd log_alpha() const { return fixed_effects.array() - intercept; }
};

/// Within LS. Throws RankDeficientError naming collinear columns.
FeEstimate within_fe_ls(const FeData& data, int bandwidth);

/// Within 2SLS of x on z. Throws WeakInstrumentError if z has no first-stage
/// power and RankDeficientError if z is collinear.
FeEstimate within_fe_2sls(const FeData& data, int bandwidth);

struct TestStat {
  double statistic = 0;
  std::optional<double> p;  ///< empty when not applicable
  int df = 0;
};

struct IvDiagnostics {
  TestStat kp_lm;        ///< underidentification, chi2(L)
  double kp_wald_f = 0;  ///< weak identification, no p-value
  TestStat hansen_j;     ///< overidentification, chi2(L - 1)
  TestStat endogeneity;  ///< C statistic, chi2(1)
};

/// Robust identification and specification tests for a within 2SLS fit,
/// all computed after partialling out entity and time effects and with the
/// same degrees-of-freedom scaling as the coefficient covariance.
IvDiagnostics iv_diagnostics(const FeData& data, int bandwidth);

struct SigmaEstimate {
  double sigma = 0;
  double se = 0;
};

/// sigma = 1 - gamma with an unchanged standard error.
inline SigmaEstimate delta_sigma(double gamma, double se) { return {1.0 - gamma, se}; }
inline SigmaEstimate delta_sigma(const FeEstimate& fit) { return delta_sigma(fit.gamma, fit.se_gamma()); }

/// Raised when q_t cannot be recovered (gamma = 0 or no time effects).
class UndefinedAggregateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// q_t = exp(-(mu_t - mu_J) / gamma), with the last observed period as 1.
struct AggregateSeries {
  std::vector<YearMonth> periods;
  Eigen::VectorXd q;
  Eigen::VectorXd se;
};

/// Delta-method standard errors use the joint (gamma, time effect) covariance.
/// `times` must be month indices (YearMonth::index()).
AggregateSeries recover_aggregates(const FeEstimate& fit);

// -- instruments ------------------------------------------------------------

enum class InstrumentKind { lnfx, fx, lncumfx, cumfx };
enum class Cumulation { jfy_mean, ytd_sum, rolling12 };

std::string to_string(InstrumentKind k);
std::string to_string(Cumulation c);
InstrumentKind parse_instrument(std::string_view text);
Cumulation parse_cumulation(std::string_view text);

/// Cumulated exchange rate per (country, month): the running mean since April
/// (jfy_mean), the April-to-date sum (ytd_sum) or the mean over the trailing
/// 12 months (rolling12). Months missing from `fx` are skipped.
ExchangeRates cumulate_fx(const ExchangeRates& fx, Cumulation mode);

/// Builds the within design for S on P from `panel`. Rows lacking any
/// requested instrument are dropped; `fx` supplies monthly rates for the
/// cumulated instruments and falls back to the panel's own E when empty.
/// The count of dropped rows is returned in `dropped`.
FeData first_stage_design(const PanelDataset& panel, const std::vector<InstrumentKind>& instruments,
                          const ExchangeRates& fx, Cumulation mode, std::size_t* dropped = nullptr);

}  // namespace armington
