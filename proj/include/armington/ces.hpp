#pragma once

#include "armington/period.hpp"
#include "armington/tariff.hpp"
#include "armington/trade_data.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace armington::ces {

/// Microelasticity and country weights of the import aggregator.
struct FirstStageParams {
  double sigma = 4.0;
  Eigen::VectorXd alpha;

  /// sigma > 0, sigma != 1, alpha >= 0 summing to one (1e-12).
  void validate() const;
};

/// Macroelasticity and domestic weight of the outer aggregator.
struct SecondStageParams {
  double rho = 1.5;
  double beta = 0.5;

  void validate() const;
};

/// q = (sum_i alpha_i p_i^(1-sigma))^(1/(1-sigma)).
template <typename Derived>
double price_index(const Eigen::MatrixBase<Derived>& prices, const FirstStageParams& params) {
  params.validate();
  if (prices.size() != params.alpha.size())
    throw std::invalid_argument("price_index: prices and alpha differ in length");
  if ((prices.array() <= 0).any()) throw std::invalid_argument("price_index: prices must be positive");
  const double e = 1.0 - params.sigma;
  // Work relative to the largest price to keep p^(1-sigma) in range.
  const double scale = prices.maxCoeff();
  const double sum = (params.alpha.array() * (prices.array() / scale).pow(e)).sum();
  return scale * std::pow(sum, 1.0 / e);
}

/// Cost shares s_i = alpha_i (p_i / q)^(1-sigma).
template <typename Derived>
Eigen::VectorXd shares(const Eigen::MatrixBase<Derived>& prices, const FirstStageParams& params) {
  const double q = price_index(prices, params);
  return (params.alpha.array() * (prices.array() / q).pow(1.0 - params.sigma)).matrix();
}

/// v = (beta r^(1-rho) + (1-beta) q^(1-rho))^(1/(1-rho)).
double outer_price_index(double r, double q, const SecondStageParams& params);

/// y = (sum_i alpha_i^(1/sigma) x_i^((sigma-1)/sigma))^(sigma/(sigma-1)).
double import_aggregate(const Eigen::Ref<const Eigen::VectorXd>& x, const FirstStageParams& params);

/// u = (beta^(1/rho) z^((rho-1)/rho) + (1-beta)^(1/rho) y^((rho-1)/rho))^(rho/(rho-1)).
double utility(double z, double y, const SecondStageParams& params);

/// Utility-maximising quantities for total spending `budget`.
struct Demand {
  Eigen::VectorXd imports;  ///< x_i
  double domestic = 0;      ///< z
};
Demand demand(const Eigen::Ref<const Eigen::VectorXd>& prices, double domestic_price, double budget,
              const FirstStageParams& first, const SecondStageParams& second);

/// Relative residuals of q*y = sum p_i x_i and v*u = r*z + q*y.
struct DualityResidual {
  double imports = 0;
  double total = 0;
};
DualityResidual duality_check(const Eigen::Ref<const Eigen::VectorXd>& imports, double domestic,
                              const Eigen::Ref<const Eigen::VectorXd>& prices, double domestic_price,
                              const FirstStageParams& first, const SecondStageParams& second);

enum class SimTariff { exempt, ad_valorem, gps };

/// Synthetic economy settings. Foreign supply is log-linear,
/// ln x = ln x_ref + e_s (F - F_ref) + xi, so demand shocks feed back into
/// FOB prices whenever e_s is finite.
struct SimConfig {
  int countries = 10;
  YearMonth start{1996, 1};
  int months = 300;
  Meat meat = Meat::beef;

  double demand_shock_sd = 0.5;   ///< epsilon_it
  double supply_shock_sd = 0.5;   ///< xi_it
  double supply_elasticity = 2.0; ///< e_s; +inf gives exogenous FOB prices
  double fob_log_mean = 6.2;      ///< mean log FOB in JPY-equivalent units
  double fob_log_sd = 0.3;        ///< cross-country dispersion of reference FOB
  double fx_ar = 0.95;            ///< AR(1) coefficient of log exchange rates
  double fx_innovation_sd = 0.05;
  double cif_gap_mean = 0.05;     ///< Delta
  double cif_gap_sd = 0.02;
  double expenditure_log_mean = 20.0;  ///< ln of monthly import spending
  double expenditure_log_sd = 0.1;

  SimTariff tariff = SimTariff::ad_valorem;
  double ad_valorem_rate = 0.385;
  GpsBoundary gps = baseline_pork_gps();

  double domestic_price_log_mean = 7.0;
  double domestic_price_log_sd = 0.15;
  double domestic_shock_sd = 0.05;  ///< nu_k in the outer share equation

  int max_retries = 20;

  void validate() const;
};

/// Everything the simulator drew, for oracle comparisons.
struct GroundTruth {
  FirstStageParams first;
  SecondStageParams second;
  std::uint64_t seed = 0;
  std::vector<std::string> countries;
  std::vector<YearMonth> periods;
  Eigen::VectorXd q_index;       ///< shock-inclusive price index, normalised at the last month
  Eigen::MatrixXd demand_shocks; ///< countries x months
  Eigen::VectorXd domestic_shocks;
  int retries = 0;
};

struct SimResult {
  PanelDataset panel;
  std::vector<TransactionRecord> records;
  ExchangeRates fx;
  std::vector<DomesticYear> domestic;
  RateKind tariff;
  GroundTruth truth;
};

/// Draws one synthetic economy. Non-finite draws are redrawn up to
/// `max_retries` times per month before throwing std::runtime_error.
SimResult simulate_panel(const SimConfig& cfg, const FirstStageParams& first,
                         const SecondStageParams& second, std::uint64_t seed);

/// Equal weights over `n` countries.
FirstStageParams equal_weights(int n, double sigma);

void write_truth_json(const std::filesystem::path& path, const GroundTruth& truth);

}  // namespace armington::ces
