#pragma once

#include "armington/period.hpp"
#include "armington/trade_data.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace armington {

/// Gate-price-system levy parameters, JPY/kg except `rate`.
///
/// Below the threshold B a specific duty D applies; between B and the gate
/// price G the levy lifts the post-tariff price to the floor F = D + B; at or
/// above G the larger of the ad valorem duty r*c and F - c applies.
struct GpsBoundary {
  double gate = 0;       ///< G
  double threshold = 0;  ///< B
  double floor = 0;      ///< F
  double specific = 0;   ///< D
  double rate = 0;       ///< r
  bool carcass_scaled = false;

  /// Builds from (G, D, F, r) with B = F - D, then validates.
  static GpsBoundary from_gate(double gate, double specific, double floor, double rate);

  /// Throws std::invalid_argument unless F = D + B (1e-9), 0 < B < G, 0 <= r < 1.
  void validate() const;
};

/// Baseline non-carcass pork boundary in force since JFY2000.
inline GpsBoundary baseline_pork_gps() { return GpsBoundary::from_gate(524.0, 482.0, 546.35, 0.043); }

/// Levy per kg at pre-tariff price `c` (> 0).
double gps_duty(double c, const GpsBoundary& b);

/// Scales G, B, F, D by 3/4 for carcass items. Throws std::logic_error if the
/// boundary has already been scaled.
GpsBoundary scale_for_carcass(const GpsBoundary& b);

struct Exempt {};
struct AdValorem {
  double rate = 0;
};
struct SpecificDuty {
  double duty = 0;  ///< JPY/kg
};

using RateKind = std::variant<Exempt, AdValorem, SpecificDuty, GpsBoundary>;

/// Duty per kg of `kind` at pre-tariff price c.
double duty_per_kg(const RateKind& kind, double c);

/// Log tariff factor T = ln((c + duty)/c). Throws std::invalid_argument if c <= 0.
double effective_T(double c, const RateKind& kind);

std::string describe(const RateKind& kind);

/// `*`, `A;B;C`, or `!A;B` (everything except). Items accept ranges `28-48`.
class CountrySelector {
 public:
  static CountrySelector parse(std::string_view text);
  bool matches(const std::string& country) const;

 private:
  bool all_ = false;
  bool negate_ = false;
  std::set<std::string> names_;
};

class ItemSelector {
 public:
  static ItemSelector parse(std::string_view text);
  static ItemSelector of(std::set<int> items);
  bool matches(int item) const;

 private:
  bool all_ = false;
  bool negate_ = false;
  std::set<int> items_;
};

/// One row of a rate schedule. Higher `priority` wins; entries flagged
/// `in_quota_only` apply only while the partner's quota is open for the item.
struct RateSchedule {
  std::string label;
  CountrySelector countries;
  ItemSelector items;
  YearMonth from;
  YearMonth to;
  RateKind kind;
  int priority = 0;
  bool in_quota_only = false;

  bool covers(const std::string& country, int item, YearMonth month) const {
    return countries.matches(country) && items.matches(item) && !(month < from) && !(to < month);
  }
};

/// Raised when no schedule entry, or more than one at the top priority,
/// matches a (country, item, month).
class TariffLookupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ScheduleTable {
 public:
  ScheduleTable() = default;
  explicit ScheduleTable(std::vector<RateSchedule> entries) : entries_(std::move(entries)) {}

  /// Parses `country_selector,item_selector,from,to,kind,params,priority`
  /// (optional trailing `label`). `from`/`to` accept YYYY-MM, JFYk or `*`.
  static ScheduleTable read(const std::filesystem::path& path);

  const std::vector<RateSchedule>& entries() const { return entries_; }

  const RateSchedule& resolve(const std::string& country, int item, YearMonth month,
                              bool quota_open) const;

 private:
  std::vector<RateSchedule> entries_;
};

/// Annual quota of one partner for one meat tag (B, P or C).
struct QuotaSchedule {
  std::string partner;
  int jfy = 0;
  double limit_kg = 0;
  char tag = 'P';
  ItemSelector items;
};

/// Items carrying quota tag `tag` for `partner` (MEX, CHL, PER, PHL, AUS)
/// in the 78-item target table. Empty for unknown partners.
std::set<int> quota_table_items(const std::string& partner, char tag);

/// `country,jfy,limit_kg,item_tags`; item_tags is `B`, `P`, `C` (table lookup)
/// or `P:30-36;39-48` (explicit items).
std::vector<QuotaSchedule> read_quotas(const std::filesystem::path& path);

enum class QuotaStatus { in_quota, out_quota };

struct TrqOutcome {
  QuotaStatus status = QuotaStatus::out_quota;
  double cumulative_before = 0;
  double cumulative_after = 0;
};

/// Raised when months are fed out of order for a (partner, tag).
class QuotaSequenceError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Cumulative registered volume per (partner, tag, JFY). Resets each April.
class QuotaLedger {
 public:
  struct State {
    int jfy = 0;
    double cumulative = 0;
    YearMonth last;
    std::optional<YearMonth> crossing;  ///< first out-quota month of the JFY
  };

  const State* state(const std::string& partner, char tag) const;

 private:
  friend TrqOutcome trq_resolve(QuotaLedger&, const QuotaSchedule&, YearMonth, double);
  std::map<std::pair<std::string, char>, State> states_;
};

/// Decides the whole month from the cumulative volume before it: in-quota
/// while cumulative < limit. Adds `month_volume` to the ledger afterwards.
TrqOutcome trq_resolve(QuotaLedger& ledger, const QuotaSchedule& schedule, YearMonth month,
                       double month_volume);

char quota_tag(Meat meat);

/// One evaluated (country, month) of a meat panel.
struct TariffCell {
  CountryMonth key;
  double cif = 0;
  double quantity = 0;
  double T = 0;
  std::string audit;
};

/// Applies schedules and quotas to item-level trade.
///
/// Duties are evaluated per item at the aggregated monthly CIF price of the
/// (country, month); T is the log ratio of the quantity-weighted post-tariff
/// price to the CIF price. GPS boundaries are scaled for carcass items.
class TariffEngine {
 public:
  TariffEngine(ScheduleTable schedules, std::vector<QuotaSchedule> quotas,
               std::set<int> carcass_items = {28, 29, 37, 38});

  /// Quota volume is accumulated over every record of the tagged items, not
  /// only those in `group`. Throws TariffLookupError on unmatched coordinates.
  std::vector<TariffCell> evaluate(std::span<const TransactionRecord> records,
                                   const MeatGroup& group) const;

  const ScheduleTable& schedules() const { return schedules_; }

 private:
  ScheduleTable schedules_;
  std::vector<QuotaSchedule> quotas_;
  std::set<int> carcass_;
};

void write_tariff_table(const std::filesystem::path& path, std::span<const TariffCell> cells);

}  // namespace armington
