#pragma once

#include "armington/period.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <compare>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace armington {

enum class Meat { beef, pork, chicken };

std::string to_string(Meat meat);
Meat parse_meat(std::string_view text);

/// One monthly import incident as published by customs.
struct TransactionRecord {
  YearMonth period;
  std::string country;
  int item = 0;             ///< 1..78, keyed to HS codes
  double value_jpy = 0;
  double quantity_kg = 0;
};

/// Item IDs making up one meat type.
struct MeatGroup {
  Meat meat = Meat::beef;
  std::set<int> items;

  bool contains(int item) const { return items.count(item) != 0; }

  /// beef = 1..16, pork = 28..48, chicken = 68..74.
  static MeatGroup standard(Meat meat);
};

/// Throws std::invalid_argument if any item belongs to two groups.
void check_disjoint(std::span<const MeatGroup> groups);

/// Raised for data that violates record invariants (e.g. value without quantity).
class MalformedRecord : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CountryMonth {
  std::string country;
  YearMonth period;
  friend auto operator<=>(const CountryMonth&, const CountryMonth&) = default;
};

struct ItemLine {
  int item = 0;
  double value = 0;
  double quantity = 0;
};

/// Summed value, quantity and unit CIF price of one (country, month).
struct ItemAggregate {
  double value = 0;     ///< v, JPY
  double quantity = 0;  ///< x, kg
  double cif = 0;       ///< c = v / x, JPY/kg
  std::vector<ItemLine> lines;  ///< per-item breakdown, ascending item id
};

/// Sums the group's items per (country, month) and forms c = v/x.
/// Records with zero value and zero quantity are skipped; zero quantity with
/// positive value throws MalformedRecord naming the (country, month).
std::map<CountryMonth, ItemAggregate> aggregate_items(std::span<const TransactionRecord> records,
                                                      const MeatGroup& group);

/// Value shares s_i = w_i / sum_j w_j. Throws on an empty period or
/// non-positive values.
Eigen::VectorXd compute_shares(const Eigen::Ref<const Eigen::VectorXd>& values);

struct PanelObservation {
  std::string country;
  YearMonth period;
  double S = 0;  ///< log value share
  double P = 0;  ///< log post-tariff price, JPY/kg
  double C = 0;  ///< log CIF price
  double T = 0;  ///< log tariff factor
  double E = std::numeric_limits<double>::quiet_NaN();  ///< log JPY per LCU; NaN if missing
  double x = 0;  ///< kg
  double w = 0;  ///< post-tariff value, JPY
  double c = 0;  ///< CIF price level, JPY/kg (exp(C), kept unrounded)

  double cif() const { return c; }
  bool has_fx() const { return !std::isnan(E); }
};

/// Observations keyed (country, month) for one meat panel. Rows are kept
/// sorted by country then period.
class PanelDataset {
 public:
  PanelDataset() = default;
  PanelDataset(std::string label, std::vector<PanelObservation> rows);

  const std::string& label() const { return label_; }
  const std::vector<PanelObservation>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  std::vector<std::string> countries() const;
  std::size_t count(const std::string& country) const;
  YearMonth first_period() const;
  YearMonth last_period() const;
  /// Months spanned, inclusive.
  int months() const;

  /// Total post-tariff value per month across all rows.
  std::map<YearMonth, double> monthly_value() const;

 private:
  std::string label_;
  std::vector<PanelObservation> rows_;
};

/// Input to build_panel: one aggregated (country, month) with its tariff.
struct PricedCell {
  std::string country;
  YearMonth period;
  double cif = 0;       ///< JPY/kg
  double T = 0;         ///< log tariff factor
  double quantity = 0;  ///< kg
};

using ExchangeRates = std::map<CountryMonth, double>;  ///< JPY per LCU

/// Builds S, P = C + T, E per observation. Shares use every cell of the
/// period (before any sparse filtering).
PanelDataset build_panel(std::string label, std::span<const PricedCell> cells,
                         const ExchangeRates& fx);

/// Keeps countries with more than `min_obs` observations. Shares are not
/// recomputed. Throws std::runtime_error if nothing is left.
PanelDataset filter_sparse(const PanelDataset& panel, std::size_t min_obs);

struct PorkSplit {
  PanelDataset regular;  ///< c < threshold
  PanelDataset prime;    ///< c >= threshold
};

/// Partitions by CIF price; `threshold_kjpy` in thousand JPY per kg.
PorkSplit split_pork(const PanelDataset& panel, double threshold_kjpy = 0.8);

// -- file formats ---------------------------------------------------------

/// `period,country,item_id,value_jpy,quantity_kg`. Records outside the
/// optional window throw InputError.
std::vector<TransactionRecord> read_transactions(
    const std::filesystem::path& path,
    std::optional<std::pair<YearMonth, YearMonth>> window = std::nullopt);
void write_transactions(const std::filesystem::path& path,
                        std::span<const TransactionRecord> records);

/// `period,country,jpy_per_lcu`.
ExchangeRates read_exchange_rates(const std::filesystem::path& path);
void write_exchange_rates(const std::filesystem::path& path, const ExchangeRates& fx);

struct DomesticYear {
  int year = 0;
  double price = 0;     ///< JPY/kg
  double quantity = 0;  ///< kg
};

/// `year,price_jpy_per_kg,quantity_kg`.
std::vector<DomesticYear> read_domestic(const std::filesystem::path& path);
void write_domestic(const std::filesystem::path& path, std::span<const DomesticYear> rows);

void write_panel_csv(const std::filesystem::path& path, const PanelDataset& panel);

}  // namespace armington
