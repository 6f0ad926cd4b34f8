#pragma once

#include "armington/ces.hpp"
#include "armington/panel.hpp"
#include "armington/tariff.hpp"
#include "armington/timeseries.hpp"
#include "armington/trade_data.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace armington::pipeline {

/// Flat `key = value` run configuration. Relative paths resolve against the
/// directory of the config file.
struct RunConfig {
  std::filesystem::path transactions, exchange_rates, schedule, quotas, domestic;
  std::filesystem::path output_dir = "out";
  Meat meat = Meat::beef;
  double pork_threshold = 0.8;  ///< KJPY/kg
  std::size_t min_obs = 9;
  int hac_bandwidth = 5;
  std::vector<InstrumentKind> instruments{InstrumentKind::lnfx, InstrumentKind::lncumfx};
  Cumulation cumulation = Cumulation::jfy_mean;
  std::vector<SecondInstrument> second_instruments{SecondInstrument::log_aggregate,
                                                   SecondInstrument::aggregate};
  double significance = 0.05;
  double weak_f_floor = 10.0;
  std::uint64_t seed = 1;
  std::optional<std::pair<YearMonth, YearMonth>> window;

  ces::SimConfig sim;
  double sim_sigma = 4.0;
  double sim_rho = 1.5;
  double sim_beta = 0.5;

  /// Throws InputError with the offending line on unknown keys or bad values.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(std::istream& in, const std::filesystem::path& base_dir,
                         const std::string& source = "config");

  /// Thresholds positive, bandwidth >= 1, significance in (0, 1).
  void validate() const;

  /// Checks that the inputs needed by the estimation commands exist.
  void require_inputs(bool domestic_needed) const;

  /// Writes every key, with paths relative to the directory of `path`.
  void write(const std::filesystem::path& path) const;
};

struct Choice {
  Estimator estimator = Estimator::LS;
  std::string reason;
  bool iv_suppressed = false;  ///< weak instruments and no endogeneity channel
};

/// Weak instruments (no diagnostics, or KP Wald F below `weak_floor`) defer
/// to the channel test: no channel gives LS, a channel gives IV. Otherwise the
/// endogeneity test decides at `significance`.
Choice select_estimator(const std::optional<IvDiagnostics>& diagnostics,
                        const std::optional<ChannelResult>& channel, double weak_floor, double significance);

struct FirstStage {
  std::string label;
  FeEstimate ls;
  std::optional<FeEstimate> iv;
  std::optional<IvDiagnostics> diagnostics;
  std::optional<ChannelResult> channel;
  Choice choice;
  SigmaEstimate sigma;
  std::optional<AggregateSeries> aggregates;
  std::map<YearMonth, double> weights;  ///< w_t, total post-tariff value per month
  std::vector<std::string> instrument_names;
  std::size_t iv_dropped = 0;
  double significance = 0.05;
  std::vector<std::string> warnings;
};

struct SecondStage {
  std::string label;
  AnnualSeries annual;
  Pretests pretests;
  SpecChoice spec;
  SecondStageResult fit;
  std::optional<ChannelResult> channel;
  Choice choice;
  MacroElasticity macro;
  std::vector<std::string> instrument_names;
  double significance = 0.05;
  std::vector<std::string> warnings;
};

/// Item aggregation, tariffs, shares and sparse filtering for the configured
/// meat. Pork returns the regular and prime panels, other meats one panel.
struct PanelBuild {
  std::vector<TransactionRecord> records;
  std::vector<TariffCell> tariffs;
  ExchangeRates fx;
  std::vector<PanelDataset> panels;
  std::vector<std::string> dropped_countries;
};
PanelBuild build_panels(const RunConfig& cfg);

/// `fx` feeds the cumulated instruments; empty uses the panel's own rates.
FirstStage estimate_first(const PanelDataset& panel, const ExchangeRates& fx, const RunConfig& cfg);

/// Uses the first stage's aggregates; throws std::runtime_error if they are missing.
SecondStage estimate_second_stage(const FirstStage& first, std::span<const DomesticYear> domestic,
                                  const RunConfig& cfg);

std::string render_first(const FirstStage& fs);
std::string render_aggregates(const FirstStage& fs);
std::string render_second(const SecondStage& ss);

void write_first_csv(const std::filesystem::path& path, std::span<const FirstStage> stages);
void write_aggregates_csv(const std::filesystem::path& path, const FirstStage& fs);
void write_second_csv(const std::filesystem::path& path, const SecondStage& ss);

// -- commands -----------------------------------------------------------------

void cmd_ingest(const RunConfig& cfg, std::ostream& out);
void cmd_tariff(const RunConfig& cfg, std::ostream& out);
void cmd_simulate(const RunConfig& cfg, std::ostream& out);
void cmd_estimate_first(const RunConfig& cfg, std::ostream& out);
void cmd_estimate_second(const RunConfig& cfg, std::ostream& out);
/// Full report: panel summary, first stage(s), aggregates and second stage.
void cmd_report(const RunConfig& cfg, std::ostream& out);

}  // namespace armington::pipeline
