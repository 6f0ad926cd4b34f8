#include "armington/trade_data.hpp"

#include "armington/csv.hpp"
#include "armington/format.hpp"

#include <algorithm>
#include <fstream>

namespace armington {

std::string to_string(Meat meat) {
  switch (meat) {
    case Meat::beef: return "beef";
    case Meat::pork: return "pork";
    case Meat::chicken: return "chicken";
  }
  return "?";
}

Meat parse_meat(std::string_view text) {
  if (text == "beef") return Meat::beef;
  if (text == "pork") return Meat::pork;
  if (text == "chicken") return Meat::chicken;
  throw std::invalid_argument("unknown meat '" + std::string(text) + "' (beef|pork|chicken)");
}

MeatGroup MeatGroup::standard(Meat meat) {
  MeatGroup g{meat, {}};
  auto fill = [&](int lo, int hi) {
    for (int i = lo; i <= hi; ++i) g.items.insert(i);
  };
  switch (meat) {
    case Meat::beef: fill(1, 16); break;
    case Meat::pork: fill(28, 48); break;
    case Meat::chicken: fill(68, 74); break;
  }
  return g;
}

void check_disjoint(std::span<const MeatGroup> groups) {
  std::set<int> seen;
  for (const auto& g : groups)
    for (int item : g.items)
      if (!seen.insert(item).second)
        throw std::invalid_argument("item " + std::to_string(item) + " belongs to two meat groups");
}

std::map<CountryMonth, ItemAggregate> aggregate_items(std::span<const TransactionRecord> records,
                                                      const MeatGroup& group) {
  std::map<CountryMonth, std::map<int, ItemLine>> lines;
  for (const auto& r : records) {
    if (!group.contains(r.item)) continue;
    if (r.value_jpy < 0 || r.quantity_kg < 0)
      throw MalformedRecord("negative value or quantity for " + r.country + " " + r.period.str());
    if (r.quantity_kg == 0) {
      if (r.value_jpy == 0) continue;
      throw MalformedRecord("positive value with zero quantity for " + r.country + " " +
                            r.period.str() + " (item " + std::to_string(r.item) + ")");
    }
    auto& line = lines[{r.country, r.period}][r.item];
    line.item = r.item;
    line.value += r.value_jpy;
    line.quantity += r.quantity_kg;
  }

  std::map<CountryMonth, ItemAggregate> out;
  for (auto& [key, items] : lines) {
    ItemAggregate agg;
    for (auto& [id, line] : items) {
      agg.value += line.value;
      agg.quantity += line.quantity;
      agg.lines.push_back(line);
    }
    if (agg.quantity <= 0) continue;
    agg.cif = agg.value / agg.quantity;
    out.emplace(key, std::move(agg));
  }
  return out;
}

Eigen::VectorXd compute_shares(const Eigen::Ref<const Eigen::VectorXd>& values) {
  if (values.size() == 0) throw std::invalid_argument("compute_shares: empty period");
  if ((values.array() <= 0).any() || !values.allFinite())
    throw std::invalid_argument("compute_shares: values must be positive and finite");
  return values / values.sum();
}

// -- PanelDataset ---------------------------------------------------------

PanelDataset::PanelDataset(std::string label, std::vector<PanelObservation> rows)
    : label_(std::move(label)), rows_(std::move(rows)) {
  std::sort(rows_.begin(), rows_.end(), [](const auto& a, const auto& b) {
    return std::tie(a.country, a.period) < std::tie(b.country, b.period);
  });
  for (std::size_t i = 1; i < rows_.size(); ++i)
    if (rows_[i].country == rows_[i - 1].country && rows_[i].period == rows_[i - 1].period)
      throw std::invalid_argument("duplicate observation for " + rows_[i].country + " " +
                                  rows_[i].period.str());
}

std::vector<std::string> PanelDataset::countries() const {
  std::vector<std::string> out;
  for (const auto& r : rows_)
    if (out.empty() || out.back() != r.country) out.push_back(r.country);
  return out;
}

std::size_t PanelDataset::count(const std::string& country) const {
  return static_cast<std::size_t>(std::count_if(
      rows_.begin(), rows_.end(), [&](const auto& r) { return r.country == country; }));
}

YearMonth PanelDataset::first_period() const {
  if (rows_.empty()) throw std::logic_error("empty panel");
  return std::min_element(rows_.begin(), rows_.end(),
                          [](const auto& a, const auto& b) { return a.period < b.period; })
      ->period;
}

YearMonth PanelDataset::last_period() const {
  if (rows_.empty()) throw std::logic_error("empty panel");
  return std::max_element(rows_.begin(), rows_.end(),
                          [](const auto& a, const auto& b) { return a.period < b.period; })
      ->period;
}

int PanelDataset::months() const { return months_between(first_period(), last_period()) + 1; }

std::map<YearMonth, double> PanelDataset::monthly_value() const {
  std::map<YearMonth, double> out;
  for (const auto& r : rows_) out[r.period] += r.w;
  return out;
}

PanelDataset build_panel(std::string label, std::span<const PricedCell> cells,
                         const ExchangeRates& fx) {
  std::map<YearMonth, std::vector<std::size_t>> by_period;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto& c = cells[k];
    if (!(c.cif > 0) || !(c.quantity > 0) || !std::isfinite(c.T))
      throw std::invalid_argument("build_panel: invalid cell for " + c.country + " " +
                                  c.period.str());
    by_period[c.period].push_back(k);
  }

  std::vector<PanelObservation> rows;
  rows.reserve(cells.size());
  for (const auto& [period, idx] : by_period) {
    Eigen::VectorXd w(static_cast<Eigen::Index>(idx.size()));
    std::vector<double> P(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto& c = cells[idx[j]];
      P[j] = std::log(c.cif) + c.T;
      w[static_cast<Eigen::Index>(j)] = std::exp(P[j]) * c.quantity;
    }
    const Eigen::VectorXd s = compute_shares(w);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto& c = cells[idx[j]];
      PanelObservation obs;
      obs.country = c.country;
      obs.period = period;
      obs.c = c.cif;
      obs.C = std::log(c.cif);
      obs.T = c.T;
      obs.P = obs.C + obs.T;
      obs.S = std::log(s[static_cast<Eigen::Index>(j)]);
      obs.x = c.quantity;
      obs.w = w[static_cast<Eigen::Index>(j)];
      if (auto it = fx.find({c.country, period}); it != fx.end() && it->second > 0)
        obs.E = std::log(it->second);
      rows.push_back(std::move(obs));
    }
  }
  return PanelDataset(std::move(label), std::move(rows));
}

PanelDataset filter_sparse(const PanelDataset& panel, std::size_t min_obs) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : panel.rows()) ++counts[r.country];
  std::vector<PanelObservation> kept;
  for (const auto& r : panel.rows())
    if (counts[r.country] > min_obs) kept.push_back(r);
  if (kept.empty())
    throw std::runtime_error("filter_sparse: every country of '" + panel.label() +
                             "' has <= " + std::to_string(min_obs) + " observations");
  return PanelDataset(panel.label(), std::move(kept));
}

PorkSplit split_pork(const PanelDataset& panel, double threshold_kjpy) {
  const double threshold = threshold_kjpy * 1000.0;
  std::vector<PanelObservation> regular, prime;
  for (const auto& r : panel.rows()) (r.cif() < threshold ? regular : prime).push_back(r);
  return {PanelDataset(panel.label() + " (regular)", std::move(regular)),
          PanelDataset(panel.label() + " (prime)", std::move(prime))};
}

// -- files ----------------------------------------------------------------

std::vector<TransactionRecord> read_transactions(
    const std::filesystem::path& path, std::optional<std::pair<YearMonth, YearMonth>> window) {
  const auto table = CsvTable::read(path);
  const auto c_period = table.column("period");
  const auto c_country = table.column("country");
  const auto c_item = table.column("item_id");
  const auto c_value = table.column("value_jpy");
  const auto c_qty = table.column("quantity_kg");
  std::vector<TransactionRecord> out;
  out.reserve(table.rows());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    TransactionRecord rec;
    try {
      rec.period = YearMonth::parse(table.at(r, c_period));
    } catch (const std::invalid_argument& e) {
      throw InputError(table.where(r) + ": " + e.what());
    }
    rec.country = table.at(r, c_country);
    rec.item = static_cast<int>(table.integer(r, c_item));
    rec.value_jpy = table.number(r, c_value);
    rec.quantity_kg = table.number(r, c_qty);
    if (rec.value_jpy < 0 || rec.quantity_kg < 0)
      throw InputError(table.where(r) + ": negative value or quantity");
    if (window && (rec.period < window->first || window->second < rec.period))
      throw InputError(table.where(r) + ": period " + rec.period.str() + " outside window");
    out.push_back(std::move(rec));
  }
  return out;
}

void write_transactions(const std::filesystem::path& path,
                        std::span<const TransactionRecord> records) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "period,country,item_id,value_jpy,quantity_kg\n";
  for (const auto& r : records)
    out << r.period.str() << ',' << r.country << ',' << r.item << ',' << exact(r.value_jpy) << ','
        << exact(r.quantity_kg) << '\n';
}

ExchangeRates read_exchange_rates(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto c_period = table.column("period");
  const auto c_country = table.column("country");
  const auto c_rate = table.column("jpy_per_lcu");
  ExchangeRates fx;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    YearMonth period;
    try {
      period = YearMonth::parse(table.at(r, c_period));
    } catch (const std::invalid_argument& e) {
      throw InputError(table.where(r) + ": " + e.what());
    }
    const double rate = table.number(r, c_rate);
    if (!(rate > 0)) throw InputError(table.where(r) + ": exchange rate must be positive");
    if (!fx.emplace(CountryMonth{table.at(r, c_country), period}, rate).second)
      throw InputError(table.where(r) + ": duplicate exchange rate");
  }
  return fx;
}

void write_exchange_rates(const std::filesystem::path& path, const ExchangeRates& fx) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "period,country,jpy_per_lcu\n";
  for (const auto& [key, rate] : fx)
    out << key.period.str() << ',' << key.country << ',' << exact(rate) << '\n';
}

std::vector<DomesticYear> read_domestic(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto c_year = table.column("year");
  const auto c_price = table.column("price_jpy_per_kg");
  const auto c_qty = table.column("quantity_kg");
  std::vector<DomesticYear> out;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    DomesticYear d{static_cast<int>(table.integer(r, c_year)), table.number(r, c_price),
                   table.number(r, c_qty)};
    if (!(d.price > 0) || !(d.quantity > 0))
      throw InputError(table.where(r) + ": domestic price and quantity must be positive");
    out.push_back(d);
  }
  std::sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.year < b.year; });
  return out;
}

void write_domestic(const std::filesystem::path& path, std::span<const DomesticYear> rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "year,price_jpy_per_kg,quantity_kg\n";
  for (const auto& d : rows) out << d.year << ',' << exact(d.price) << ',' << exact(d.quantity) << '\n';
}

void write_panel_csv(const std::filesystem::path& path, const PanelDataset& panel) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "period,country,S,P,C,T,E,x,w\n";
  for (const auto& r : panel.rows()) {
    out << r.period.str() << ',' << r.country << ',' << exact(r.S) << ',' << exact(r.P) << ','
        << exact(r.C) << ',' << exact(r.T) << ',' << (r.has_fx() ? exact(r.E) : std::string("NA"))
        << ',' << exact(r.x) << ',' << exact(r.w) << '\n';
  }
}

}  // namespace armington
