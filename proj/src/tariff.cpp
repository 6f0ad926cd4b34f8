#include "armington/tariff.hpp"

#include "armington/csv.hpp"
#include "armington/format.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

namespace armington {

// -- GPS ------------------------------------------------------------------

GpsBoundary GpsBoundary::from_gate(double gate, double specific, double floor, double rate) {
  GpsBoundary b{gate, floor - specific, floor, specific, rate, false};
  b.validate();
  return b;
}

void GpsBoundary::validate() const {
  if (std::abs(floor - (specific + threshold)) > 1e-9)
    throw std::invalid_argument("GPS boundary: F must equal D + B");
  if (!(threshold > 0) || !(threshold < gate))
    throw std::invalid_argument("GPS boundary: need 0 < B < G");
  if (!(rate >= 0) || !(rate < 1)) throw std::invalid_argument("GPS boundary: need 0 <= r < 1");
}

double gps_duty(double c, const GpsBoundary& b) {
  if (c < b.threshold) return b.specific;
  if (c < b.gate) return b.floor - c;
  return std::max(b.rate * c, b.floor - c);
}

GpsBoundary scale_for_carcass(const GpsBoundary& b) {
  if (b.carcass_scaled) throw std::logic_error("GPS boundary already scaled for carcass");
  constexpr double k = 0.75;
  GpsBoundary s = b;
  s.gate *= k;
  s.threshold *= k;
  s.floor *= k;
  s.specific *= k;
  s.carcass_scaled = true;
  return s;
}

double duty_per_kg(const RateKind& kind, double c) {
  struct Visitor {
    double c;
    double operator()(const Exempt&) const { return 0.0; }
    double operator()(const AdValorem& a) const { return a.rate * c; }
    double operator()(const SpecificDuty& s) const { return s.duty; }
    double operator()(const GpsBoundary& g) const { return gps_duty(c, g); }
  };
  return std::visit(Visitor{c}, kind);
}

double effective_T(double c, const RateKind& kind) {
  if (!(c > 0)) throw std::invalid_argument("effective_T: CIF price must be positive");
  if (const auto* a = std::get_if<AdValorem>(&kind)) return std::log1p(a->rate);
  if (std::holds_alternative<Exempt>(kind)) return 0.0;
  return std::log((c + duty_per_kg(kind, c)) / c);
}

std::string describe(const RateKind& kind) {
  struct Visitor {
    std::string operator()(const Exempt&) const { return "exempt"; }
    std::string operator()(const AdValorem& a) const { return "ad_valorem(r=" + exact(a.rate) + ")"; }
    std::string operator()(const SpecificDuty& s) const { return "specific(d=" + exact(s.duty) + ")"; }
    std::string operator()(const GpsBoundary& g) const {
      return std::string(g.carcass_scaled ? "gps-carcass" : "gps") + "(G=" + exact(g.gate) +
             ",F=" + exact(g.floor) + ",D=" + exact(g.specific) + ",r=" + exact(g.rate) + ")";
    }
  };
  return std::visit(Visitor{}, kind);
}

// -- selectors ------------------------------------------------------------

namespace {

int parse_int(std::string_view text, std::string_view what) {
  text = trim(text);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw std::invalid_argument(std::string(what) + ": not an integer: '" + std::string(text) + "'");
  return v;
}

std::set<int> parse_item_list(std::string_view text) {
  std::set<int> out;
  for (const auto& part : split(text, ';')) {
    if (part.empty()) continue;
    const auto dash = part.find('-', 1);
    if (dash == std::string::npos) {
      out.insert(parse_int(part, "item"));
    } else {
      const int lo = parse_int(std::string_view(part).substr(0, dash), "item");
      const int hi = parse_int(std::string_view(part).substr(dash + 1), "item");
      if (hi < lo) throw std::invalid_argument("item range reversed: " + part);
      for (int i = lo; i <= hi; ++i) out.insert(i);
    }
  }
  return out;
}

YearMonth parse_bound(std::string_view text, bool upper) {
  text = trim(text);
  if (text == "*") return upper ? YearMonth{9999, 12} : YearMonth{0, 1};
  if (text.size() > 3 && text.substr(0, 3) == "JFY") {
    const int k = parse_int(text.substr(3), "JFY");
    return upper ? jfy_end(k) : jfy_begin(k);
  }
  return YearMonth::parse(text);
}

double param(const std::map<std::string, double>& params, const std::string& key) {
  auto it = params.find(key);
  if (it == params.end()) throw std::invalid_argument("missing rate parameter '" + key + "'");
  return it->second;
}

RateKind parse_kind(std::string_view kind, std::string_view text) {
  std::map<std::string, double> params;
  for (const auto& part : split(text, ';')) {
    if (part.empty() || part == "-") continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("rate parameter needs key=value: " + part);
    char* end = nullptr;
    const std::string value(trim(std::string_view(part).substr(eq + 1)));
    const double v = std::strtod(value.c_str(), &end);
    if (value.empty() || end != value.c_str() + value.size())
      throw std::invalid_argument("rate parameter not numeric: " + part);
    params[std::string(trim(std::string_view(part).substr(0, eq)))] = v;
  }
  if (kind == "exempt") return Exempt{};
  if (kind == "ad_valorem") {
    const double r = param(params, "r");
    if (!(r >= 0)) throw std::invalid_argument("ad valorem rate must be >= 0");
    return AdValorem{r};
  }
  if (kind == "specific") return SpecificDuty{param(params, "d")};
  if (kind == "gps") {
    auto b = GpsBoundary::from_gate(param(params, "G"), param(params, "D"), param(params, "F"),
                                    param(params, "r"));
    if (auto it = params.find("B"); it != params.end() && std::abs(it->second - b.threshold) > 1e-9)
      throw std::invalid_argument("GPS boundary: F must equal D + B");
    return b;
  }
  throw std::invalid_argument("unknown rate kind '" + std::string(kind) + "'");
}

}  // namespace

CountrySelector CountrySelector::parse(std::string_view text) {
  text = trim(text);
  CountrySelector s;
  if (text.empty()) throw std::invalid_argument("empty country selector");
  if (text == "*") {
    s.all_ = true;
    return s;
  }
  if (text.front() == '!') {
    s.negate_ = true;
    text.remove_prefix(1);
  }
  for (auto& name : split(text, ';'))
    if (!name.empty()) s.names_.insert(name);
  return s;
}

bool CountrySelector::matches(const std::string& country) const {
  if (all_) return true;
  return (names_.count(country) != 0) != negate_;
}

ItemSelector ItemSelector::parse(std::string_view text) {
  text = trim(text);
  ItemSelector s;
  if (text.empty()) throw std::invalid_argument("empty item selector");
  if (text == "*") {
    s.all_ = true;
    return s;
  }
  if (text.front() == '!') {
    s.negate_ = true;
    text.remove_prefix(1);
  }
  s.items_ = parse_item_list(text);
  return s;
}

ItemSelector ItemSelector::of(std::set<int> items) {
  ItemSelector s;
  s.items_ = std::move(items);
  return s;
}

bool ItemSelector::matches(int item) const {
  if (all_) return true;
  return (items_.count(item) != 0) != negate_;
}

// -- schedule table -------------------------------------------------------

ScheduleTable ScheduleTable::read(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto c_country = table.column("country_selector");
  const auto c_item = table.column("item_selector");
  const auto c_from = table.column("from");
  const auto c_to = table.column("to");
  const auto c_kind = table.column("kind");
  const auto c_params = table.column("params");
  const auto c_prio = table.column("priority");
  const bool has_label = table.has_column("label");
  std::vector<RateSchedule> entries;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    try {
      RateSchedule e;
      e.countries = CountrySelector::parse(table.at(r, c_country));
      e.items = ItemSelector::parse(table.at(r, c_item));
      e.from = parse_bound(table.at(r, c_from), false);
      e.to = parse_bound(table.at(r, c_to), true);
      if (e.to < e.from) throw std::invalid_argument("validity window reversed");
      std::string_view kind = table.at(r, c_kind);
      if (kind.substr(0, 8) == "inquota:") {
        e.in_quota_only = true;
        kind.remove_prefix(8);
      }
      e.kind = parse_kind(kind, table.at(r, c_params));
      e.priority = static_cast<int>(table.integer(r, c_prio));
      e.label = has_label ? table.at(r, table.column("label")) : std::string();
      if (e.label.empty()) e.label = "row" + std::to_string(r + 1);
      entries.push_back(std::move(e));
    } catch (const InputError&) {
      throw;
    } catch (const std::exception& ex) {
      throw InputError(table.where(r) + ": " + ex.what());
    }
  }
  return ScheduleTable(std::move(entries));
}

const RateSchedule& ScheduleTable::resolve(const std::string& country, int item, YearMonth month,
                                           bool quota_open) const {
  const RateSchedule* best = nullptr;
  bool tie = false;
  for (const auto& e : entries_) {
    if (!e.covers(country, item, month)) continue;
    if (e.in_quota_only && !quota_open) continue;
    if (!best || e.priority > best->priority) {
      best = &e;
      tie = false;
    } else if (e.priority == best->priority) {
      tie = true;
    }
  }
  const auto where = country + ", item " + std::to_string(item) + ", " + month.str();
  if (!best) throw TariffLookupError("no tariff schedule entry for " + where);
  if (tie)
    throw TariffLookupError("ambiguous tariff schedule at priority " +
                            std::to_string(best->priority) + " for " + where);
  return *best;
}

// -- quotas ---------------------------------------------------------------

std::set<int> quota_table_items(const std::string& partner, char tag) {
  auto range = [](std::initializer_list<std::pair<int, int>> spans) {
    std::set<int> out;
    for (auto [lo, hi] : spans)
      for (int i = lo; i <= hi; ++i) out.insert(i);
    return out;
  };
  switch (tag) {
    case 'B':
      if (partner == "MEX") return range({{2, 2}, {5, 8}, {10, 10}, {13, 27}});
      if (partner == "CHL") return range({{10, 10}, {13, 16}});
      break;
    case 'P':
      if (partner == "MEX")
        return range({{30, 36}, {39, 48}, {50, 60}, {62, 63}, {65, 66}});
      if (partner == "CHL") return range({{33, 36}, {39, 48}, {50, 52}, {59, 67}});
      if (partner == "PER") return range({{39, 48}});
      if (partner == "AUS") return range({{28, 49}, {59, 67}});
      break;
    case 'C':
      if (partner == "MEX") return range({{68, 71}, {73, 78}});
      if (partner == "CHL") return range({{74, 74}});
      if (partner == "PER") return range({{68, 70}, {73, 78}});
      if (partner == "PHL") return range({{68, 69}, {71, 71}, {74, 74}});
      if (partner == "AUS") return range({{68, 71}, {73, 78}});
      break;
    default: break;
  }
  return {};
}

std::vector<QuotaSchedule> read_quotas(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto c_country = table.column("country");
  const auto c_jfy = table.column("jfy");
  const auto c_limit = table.column("limit_kg");
  const auto c_tags = table.column("item_tags");
  std::vector<QuotaSchedule> out;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    QuotaSchedule q;
    q.partner = table.at(r, c_country);
    q.jfy = static_cast<int>(table.integer(r, c_jfy));
    q.limit_kg = table.number(r, c_limit);
    if (!(q.limit_kg >= 0)) throw InputError(table.where(r) + ": quota limit must be >= 0");
    const auto& tags = table.at(r, c_tags);
    if (tags.empty() || std::string_view("BPC").find(tags[0]) == std::string_view::npos)
      throw InputError(table.where(r) + ": item_tags must start with B, P or C");
    q.tag = tags[0];
    std::set<int> items;
    if (tags.size() == 1) {
      items = quota_table_items(q.partner, q.tag);
      if (items.empty())
        throw InputError(table.where(r) + ": no built-in " + std::string(1, q.tag) +
                         " items for partner " + q.partner + "; list them as TAG:items");
    } else {
      if (tags[1] != ':') throw InputError(table.where(r) + ": item_tags must be TAG or TAG:items");
      try {
        items = parse_item_list(std::string_view(tags).substr(2));
      } catch (const std::exception& e) {
        throw InputError(table.where(r) + ": " + e.what());
      }
    }
    for (int item : items)
      if (item < 1 || item > 78) throw InputError(table.where(r) + ": unknown item " + std::to_string(item));
    q.items = ItemSelector::of(std::move(items));
    out.push_back(std::move(q));
  }
  return out;
}

const QuotaLedger::State* QuotaLedger::state(const std::string& partner, char tag) const {
  auto it = states_.find({partner, tag});
  return it == states_.end() ? nullptr : &it->second;
}

TrqOutcome trq_resolve(QuotaLedger& ledger, const QuotaSchedule& schedule, YearMonth month,
                       double month_volume) {
  if (month.jfy() != schedule.jfy)
    throw std::invalid_argument("quota schedule for JFY" + std::to_string(schedule.jfy) +
                                " applied to " + month.str());
  if (month_volume < 0) throw std::invalid_argument("negative month volume");
  auto [it, fresh] = ledger.states_.try_emplace({schedule.partner, schedule.tag});
  auto& st = it->second;
  if (!fresh) {
    if (!(st.last < month))
      throw QuotaSequenceError("quota ledger for " + schedule.partner + " fed " + month.str() +
                               " after " + st.last.str());
  }
  if (fresh || st.jfy != month.jfy()) {
    st.jfy = month.jfy();
    st.cumulative = 0;
    st.crossing.reset();
  }
  st.last = month;
  TrqOutcome out;
  out.cumulative_before = st.cumulative;
  out.status = st.cumulative < schedule.limit_kg ? QuotaStatus::in_quota : QuotaStatus::out_quota;
  if (out.status == QuotaStatus::out_quota && !st.crossing) st.crossing = month;
  st.cumulative += month_volume;
  out.cumulative_after = st.cumulative;
  return out;
}

char quota_tag(Meat meat) {
  switch (meat) {
    case Meat::beef: return 'B';
    case Meat::pork: return 'P';
    case Meat::chicken: return 'C';
  }
  return '?';
}

// -- engine ---------------------------------------------------------------

TariffEngine::TariffEngine(ScheduleTable schedules, std::vector<QuotaSchedule> quotas,
                           std::set<int> carcass_items)
    : schedules_(std::move(schedules)), quotas_(std::move(quotas)), carcass_(std::move(carcass_items)) {}

std::vector<TariffCell> TariffEngine::evaluate(std::span<const TransactionRecord> records,
                                               const MeatGroup& group) const {
  const char tag = quota_tag(group.meat);
  const auto aggregates = aggregate_items(records, group);

  // Monthly tagged volume per quota line, over all records.
  std::map<std::pair<std::size_t, YearMonth>, double> volume;
  std::vector<std::size_t> active;
  for (std::size_t q = 0; q < quotas_.size(); ++q)
    if (quotas_[q].tag == tag) active.push_back(q);
  for (const auto& r : records)
    for (std::size_t q : active) {
      const auto& quota = quotas_[q];
      if (quota.partner == r.country && quota.jfy == r.period.jfy() && quota.items.matches(r.item))
        volume[{q, r.period}] += r.quantity_kg;
    }

  // Walk months chronologically so the ledger sees an ordered feed.
  std::vector<const std::pair<const CountryMonth, ItemAggregate>*> order;
  for (const auto& kv : aggregates) order.push_back(&kv);
  std::stable_sort(order.begin(), order.end(),
                   [](auto* a, auto* b) { return a->first.period < b->first.period; });

  // Quota months with tagged trade but no aggregate cell still count.
  std::map<std::size_t, std::set<YearMonth>> quota_months;
  for (const auto& [key, v] : volume) quota_months[key.first].insert(key.second);

  QuotaLedger ledger;
  std::map<std::pair<std::size_t, YearMonth>, TrqOutcome> decided;
  auto decide = [&](std::size_t q, YearMonth month) -> const TrqOutcome& {
    auto it = decided.find({q, month});
    if (it != decided.end()) return it->second;
    // Feed earlier months of this quota first.
    for (YearMonth m : quota_months[q]) {
      if (month < m) break;
      if (!decided.count({q, m})) decided[{q, m}] = trq_resolve(ledger, quotas_[q], m, volume[{q, m}]);
    }
    if (!decided.count({q, month})) decided[{q, month}] = trq_resolve(ledger, quotas_[q], month, 0.0);
    return decided[{q, month}];
  };

  std::vector<TariffCell> cells;
  cells.reserve(order.size());
  for (const auto* kv : order) {
    const auto& [key, agg] = *kv;
    const double c = agg.cif;
    double duty_value = 0;  // sum_g x_g d_g
    std::vector<std::string> audit;
    for (const auto& line : agg.lines) {
      bool open = false;
      std::string quota_note;
      for (std::size_t q : active) {
        const auto& quota = quotas_[q];
        if (quota.partner != key.country || quota.jfy != key.period.jfy() || !quota.items.matches(line.item))
          continue;
        const auto& outcome = decide(q, key.period);
        open = open || outcome.status == QuotaStatus::in_quota;
        quota_note = outcome.status == QuotaStatus::in_quota ? "[in-quota]" : "[out-quota]";
      }
      const auto& entry = schedules_.resolve(key.country, line.item, key.period, open);
      RateKind kind = entry.kind;
      if (auto* g = std::get_if<GpsBoundary>(&kind); g && carcass_.count(line.item))
        kind = scale_for_carcass(*g);
      duty_value += line.quantity * duty_per_kg(kind, c);
      auto note = entry.label + quota_note;
      if (std::find(audit.begin(), audit.end(), note) == audit.end()) audit.push_back(note);
    }
    TariffCell cell;
    cell.key = key;
    cell.cif = c;
    cell.quantity = agg.quantity;
    cell.T = std::log1p(duty_value / (c * agg.quantity));
    for (std::size_t i = 0; i < audit.size(); ++i) cell.audit += (i ? "|" : "") + audit[i];
    cells.push_back(std::move(cell));
  }
  std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  return cells;
}

void write_tariff_table(const std::filesystem::path& path, std::span<const TariffCell> cells) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "period,country,cif_jpy_per_kg,quantity_kg,T,audit\n";
  for (const auto& c : cells)
    out << c.key.period.str() << ',' << c.key.country << ',' << exact(c.cif) << ','
        << exact(c.quantity) << ',' << exact(c.T) << ',' << c.audit << '\n';
}

}  // namespace armington
