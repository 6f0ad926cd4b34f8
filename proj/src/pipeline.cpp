#include "armington/pipeline.hpp"

#include "armington/csv.hpp"
#include "armington/format.hpp"

#include <algorithm>
#include <cstdarg>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

namespace armington::pipeline {

namespace fs = std::filesystem;
using Eigen::Index;
using Eigen::VectorXd;

namespace {

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  va_list args;
  va_start(args, f);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

std::string p_paren(const std::optional<double>& p) { return p ? "(" + fixed(*p) + ")" : ""; }

std::string slug(const std::string& label) {
  std::string out;
  for (char c : label) {
    if (std::isalnum(static_cast<unsigned char>(c))) out += c;
    else if (!out.empty() && out.back() != '_') out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

void add_unique(std::vector<std::string>& to, const std::vector<std::string>& from) {
  for (const auto& w : from)
    if (std::find(to.begin(), to.end(), w) == to.end()) to.push_back(w);
}

double parse_double(const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw std::invalid_argument("not a number: '" + v + "'");
  return d;
}

long long parse_integer(const std::string& v) {
  std::size_t used = 0;
  const long long n = std::stoll(v, &used);
  if (used != v.size()) throw std::invalid_argument("not an integer: '" + v + "'");
  return n;
}

std::string to_string(ces::SimTariff t) {
  switch (t) {
    case ces::SimTariff::exempt: return "exempt";
    case ces::SimTariff::ad_valorem: return "ad_valorem";
    case ces::SimTariff::gps: return "gps";
  }
  return "?";
}

ces::SimTariff parse_sim_tariff(const std::string& v) {
  if (v == "exempt") return ces::SimTariff::exempt;
  if (v == "ad_valorem") return ces::SimTariff::ad_valorem;
  if (v == "gps") return ces::SimTariff::gps;
  throw std::invalid_argument("unknown tariff '" + v + "' (exempt|ad_valorem|gps)");
}

std::string to_string(SecondInstrument s) { return s == SecondInstrument::log_aggregate ? "Q" : "q"; }

SecondInstrument parse_second_instrument(const std::string& v) {
  if (v == "Q") return SecondInstrument::log_aggregate;
  if (v == "q") return SecondInstrument::aggregate;
  throw std::invalid_argument("unknown second-stage instrument '" + v + "' (Q|q)");
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& name, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + name(items[i]);
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

}  // namespace

// -- configuration ----------------------------------------------------------------

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  return parse(in, path.parent_path(), path.string());
}

RunConfig RunConfig::parse(std::istream& in, const fs::path& base_dir, const std::string& source) {
  RunConfig cfg;
  auto path_of = [&](const std::string& v) { return v.empty() ? fs::path() : (base_dir / v).lexically_normal(); };
  std::optional<YearMonth> from, to;
  const std::map<std::string, std::function<void(const std::string&)>> keys{
      {"transactions", [&](auto& v) { cfg.transactions = path_of(v); }},
      {"exchange_rates", [&](auto& v) { cfg.exchange_rates = path_of(v); }},
      {"schedule", [&](auto& v) { cfg.schedule = path_of(v); }},
      {"quotas", [&](auto& v) { cfg.quotas = path_of(v); }},
      {"domestic", [&](auto& v) { cfg.domestic = path_of(v); }},
      {"output_dir", [&](auto& v) { cfg.output_dir = path_of(v); }},
      {"meat", [&](auto& v) { cfg.meat = parse_meat(v); }},
      {"pork_threshold", [&](auto& v) { cfg.pork_threshold = parse_double(v); }},
      {"min_obs", [&](auto& v) {
         const auto n = parse_integer(v);
         if (n < 0) throw std::invalid_argument("min_obs must be >= 0");
         cfg.min_obs = static_cast<std::size_t>(n);
       }},
      {"hac_bandwidth", [&](auto& v) { cfg.hac_bandwidth = static_cast<int>(parse_integer(v)); }},
      {"instruments", [&](auto& v) {
         cfg.instruments.clear();
         for (auto& s : split(v, ',')) cfg.instruments.push_back(parse_instrument(trim(s)));
       }},
      {"cumulation", [&](auto& v) { cfg.cumulation = parse_cumulation(v); }},
      {"second_instruments", [&](auto& v) {
         cfg.second_instruments.clear();
         for (auto& s : split(v, ',')) cfg.second_instruments.push_back(parse_second_instrument(std::string(trim(s))));
       }},
      {"significance", [&](auto& v) { cfg.significance = parse_double(v); }},
      {"weak_f_floor", [&](auto& v) { cfg.weak_f_floor = parse_double(v); }},
      {"seed", [&](auto& v) { cfg.seed = static_cast<std::uint64_t>(parse_integer(v)); }},
      {"window_from", [&](auto& v) { from = YearMonth::parse(v); }},
      {"window_to", [&](auto& v) { to = YearMonth::parse(v); }},
      {"sim_countries", [&](auto& v) { cfg.sim.countries = static_cast<int>(parse_integer(v)); }},
      {"sim_months", [&](auto& v) { cfg.sim.months = static_cast<int>(parse_integer(v)); }},
      {"sim_start", [&](auto& v) { cfg.sim.start = YearMonth::parse(v); }},
      {"sim_sigma", [&](auto& v) { cfg.sim_sigma = parse_double(v); }},
      {"sim_rho", [&](auto& v) { cfg.sim_rho = parse_double(v); }},
      {"sim_beta", [&](auto& v) { cfg.sim_beta = parse_double(v); }},
      {"sim_supply_elasticity", [&](auto& v) { cfg.sim.supply_elasticity = parse_double(v); }},
      {"sim_demand_sd", [&](auto& v) { cfg.sim.demand_shock_sd = parse_double(v); }},
      {"sim_supply_sd", [&](auto& v) { cfg.sim.supply_shock_sd = parse_double(v); }},
      {"sim_fob_log_mean", [&](auto& v) { cfg.sim.fob_log_mean = parse_double(v); }},
      {"sim_fob_sd", [&](auto& v) { cfg.sim.fob_log_sd = parse_double(v); }},
      {"sim_fx_ar", [&](auto& v) { cfg.sim.fx_ar = parse_double(v); }},
      {"sim_fx_sd", [&](auto& v) { cfg.sim.fx_innovation_sd = parse_double(v); }},
      {"sim_cif_gap_sd", [&](auto& v) { cfg.sim.cif_gap_sd = parse_double(v); }},
      {"sim_expenditure_sd", [&](auto& v) { cfg.sim.expenditure_log_sd = parse_double(v); }},
      {"sim_tariff", [&](auto& v) { cfg.sim.tariff = parse_sim_tariff(v); }},
      {"sim_ad_valorem_rate", [&](auto& v) { cfg.sim.ad_valorem_rate = parse_double(v); }},
      {"sim_domestic_price_sd", [&](auto& v) { cfg.sim.domestic_price_log_sd = parse_double(v); }},
      {"sim_domestic_sd", [&](auto& v) { cfg.sim.domestic_shock_sd = parse_double(v); }},
  };

  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto where = source + ":" + std::to_string(lineno);
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw InputError(where + ": expected key = value");
    const std::string key(trim(body.substr(0, eq)));
    const std::string value(trim(body.substr(eq + 1)));
    auto it = keys.find(key);
    if (it == keys.end()) throw InputError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw InputError(where + ": duplicate key '" + key + "'");
    try {
      it->second(value);
    } catch (const std::exception& e) {
      throw InputError(where + ": " + key + ": " + e.what());
    }
  }
  if (from || to) cfg.window = std::pair{from.value_or(YearMonth{0, 1}), to.value_or(YearMonth{9999, 12})};
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw InputError(source + ": " + e.what());
  }
  return cfg;
}

void RunConfig::validate() const {
  if (!(pork_threshold > 0)) throw std::invalid_argument("pork_threshold must be positive");
  if (hac_bandwidth < 1) throw std::invalid_argument("hac_bandwidth must be >= 1");
  if (!(significance > 0 && significance < 1)) throw std::invalid_argument("significance must lie in (0, 1)");
  if (!(weak_f_floor > 0)) throw std::invalid_argument("weak_f_floor must be positive");
  if (instruments.empty()) throw std::invalid_argument("instruments must not be empty");
  if (second_instruments.empty()) throw std::invalid_argument("second_instruments must not be empty");
  if (window && window->second < window->first) throw std::invalid_argument("window_to precedes window_from");
  sim.validate();
  ces::SecondStageParams{sim_rho, sim_beta}.validate();
  if (!(sim_sigma > 0) || sim_sigma == 1) throw std::invalid_argument("sim_sigma must be positive and != 1");
}

void RunConfig::require_inputs(bool domestic_needed) const {
  auto need = [](const fs::path& p, const char* key) {
    if (p.empty()) throw InputError(std::string("config key '") + key + "' is required");
    if (!fs::exists(p)) throw InputError(std::string(key) + ": no such file " + p.string());
  };
  need(transactions, "transactions");
  need(schedule, "schedule");
  if (!exchange_rates.empty()) need(exchange_rates, "exchange_rates");
  if (!quotas.empty()) need(quotas, "quotas");
  if (domestic_needed) need(domestic, "domestic");
}

void RunConfig::write(const fs::path& path) const {
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const fs::path& p) {
    if (p.empty()) return std::string();
    const auto r = fs::absolute(p).lexically_normal().lexically_relative(base);
    return (r.empty() ? p : r).generic_string();
  };
  std::ostringstream o;
  o << "transactions = " << rel(transactions) << '\n'
    << "exchange_rates = " << rel(exchange_rates) << '\n'
    << "schedule = " << rel(schedule) << '\n'
    << "quotas = " << rel(quotas) << '\n'
    << "domestic = " << rel(domestic) << '\n'
    << "output_dir = " << rel(output_dir) << '\n'
    << "meat = " << armington::to_string(meat) << '\n'
    << "pork_threshold = " << exact(pork_threshold) << '\n'
    << "min_obs = " << min_obs << '\n'
    << "hac_bandwidth = " << hac_bandwidth << '\n'
    << "instruments = " << join(instruments, [](auto k) { return armington::to_string(k); }) << '\n'
    << "cumulation = " << armington::to_string(cumulation) << '\n'
    << "second_instruments = " << join(second_instruments, [](auto k) { return to_string(k); }) << '\n'
    << "significance = " << exact(significance) << '\n'
    << "weak_f_floor = " << exact(weak_f_floor) << '\n'
    << "seed = " << seed << '\n';
  if (window) o << "window_from = " << window->first.str() << "\nwindow_to = " << window->second.str() << '\n';
  o << "sim_countries = " << sim.countries << '\n'
    << "sim_months = " << sim.months << '\n'
    << "sim_start = " << sim.start.str() << '\n'
    << "sim_sigma = " << exact(sim_sigma) << '\n'
    << "sim_rho = " << exact(sim_rho) << '\n'
    << "sim_beta = " << exact(sim_beta) << '\n'
    << "sim_supply_elasticity = " << exact(sim.supply_elasticity) << '\n'
    << "sim_demand_sd = " << exact(sim.demand_shock_sd) << '\n'
    << "sim_supply_sd = " << exact(sim.supply_shock_sd) << '\n'
    << "sim_fob_log_mean = " << exact(sim.fob_log_mean) << '\n'
    << "sim_fob_sd = " << exact(sim.fob_log_sd) << '\n'
    << "sim_fx_ar = " << exact(sim.fx_ar) << '\n'
    << "sim_fx_sd = " << exact(sim.fx_innovation_sd) << '\n'
    << "sim_cif_gap_sd = " << exact(sim.cif_gap_sd) << '\n'
    << "sim_expenditure_sd = " << exact(sim.expenditure_log_sd) << '\n'
    << "sim_tariff = " << to_string(sim.tariff) << '\n'
    << "sim_ad_valorem_rate = " << exact(sim.ad_valorem_rate) << '\n'
    << "sim_domestic_price_sd = " << exact(sim.domestic_price_log_sd) << '\n'
    << "sim_domestic_sd = " << exact(sim.domestic_shock_sd) << '\n';
  write_text(path, o.str());
}

// -- estimation -------------------------------------------------------------------

Choice select_estimator(const std::optional<IvDiagnostics>& diagnostics,
                        const std::optional<ChannelResult>& channel, double weak_floor, double significance) {
  Choice c;
  const bool weak = !diagnostics || diagnostics->kp_wald_f < weak_floor;
  if (weak) {
    const std::string why = diagnostics ? "KP Wald F " + fixed(diagnostics->kp_wald_f) + " < " + fixed(weak_floor, 1)
                                        : "IV not estimable";
    if (!channel) {
      c.reason = why + "; channel test unavailable";
      c.iv_suppressed = true;
      return c;
    }
    if (channel->present) {
      c.estimator = Estimator::IV;
      c.reason = why + "; channel test p " + fixed(channel->p) + " < " + fixed(significance, 2) +
                 " (endogeneity channel present)";
      return c;
    }
    c.reason = why + "; channel test p " + fixed(channel->p) + " >= " + fixed(significance, 2) +
               " (no endogeneity channel)";
    c.iv_suppressed = true;
    return c;
  }
  const auto& e = diagnostics->endogeneity;
  const double p = e.p.value_or(1.0);
  c.estimator = p < significance ? Estimator::IV : Estimator::LS;
  c.reason = "endogeneity test p " + fixed(p) + (p < significance ? " < " : " >= ") + fixed(significance, 2);
  return c;
}

PanelBuild build_panels(const RunConfig& cfg) {
  PanelBuild b;
  b.records = read_transactions(cfg.transactions, cfg.window);
  std::vector<QuotaSchedule> quotas;
  if (!cfg.quotas.empty()) quotas = read_quotas(cfg.quotas);
  const TariffEngine engine(ScheduleTable::read(cfg.schedule), std::move(quotas));
  b.tariffs = engine.evaluate(b.records, MeatGroup::standard(cfg.meat));
  if (!cfg.exchange_rates.empty()) b.fx = read_exchange_rates(cfg.exchange_rates);
  if (b.tariffs.empty()) throw std::runtime_error("no " + to_string(cfg.meat) + " records in " + cfg.transactions.string());

  std::vector<PricedCell> cells;
  cells.reserve(b.tariffs.size());
  for (const auto& t : b.tariffs) cells.push_back({t.key.country, t.key.period, t.cif, t.T, t.quantity});
  const auto full = build_panel(to_string(cfg.meat), cells, b.fx);
  auto kept = filter_sparse(full, cfg.min_obs);
  const auto before = full.countries(), after = kept.countries();
  std::set_difference(before.begin(), before.end(), after.begin(), after.end(),
                      std::back_inserter(b.dropped_countries));
  if (cfg.meat == Meat::pork) {
    auto split = split_pork(kept, cfg.pork_threshold);
    b.panels.push_back(std::move(split.regular));
    if (!split.prime.empty()) b.panels.push_back(std::move(split.prime));
  } else {
    b.panels.push_back(std::move(kept));
  }
  if (b.panels.front().empty()) throw std::runtime_error(b.panels.front().label() + ": no observations");
  return b;
}

namespace {

/// FE regression of C - E on E over rows with an exchange rate.
std::optional<ChannelResult> first_stage_channel(const PanelDataset& panel, double significance,
                                                 std::vector<std::string>& warnings) {
  std::map<std::string, int> count;
  for (const auto& o : panel.rows())
    if (o.has_fx()) ++count[o.country];
  std::vector<double> dep, reg;
  PanelIndex index;
  int entity = -1;
  std::string last;
  for (const auto& o : panel.rows()) {
    if (!o.has_fx() || count[o.country] < 2) continue;
    if (o.country != last) {
      ++entity;
      last = o.country;
    }
    dep.push_back(o.C - o.E);
    reg.push_back(o.E);
    index.entity.push_back(entity);
    index.time.push_back(o.period.index());
  }
  try {
    return channel_test(Eigen::Map<VectorXd>(dep.data(), static_cast<Index>(dep.size())),
                        Eigen::Map<VectorXd>(reg.data(), static_cast<Index>(reg.size())), index,
                        ChannelMode::fe_panel, significance);
  } catch (const std::exception& e) {
    warnings.push_back(std::string("channel test not estimable: ") + e.what());
    return std::nullopt;
  }
}

}  // namespace

FirstStage estimate_first(const PanelDataset& panel, const ExchangeRates& fx, const RunConfig& cfg) {
  FirstStage fs;
  fs.label = panel.label();
  fs.significance = cfg.significance;
  fs.weights = panel.monthly_value();
  const int bw = cfg.hac_bandwidth;
  for (auto k : cfg.instruments) fs.instrument_names.push_back(to_string(k));

  fs.ls = within_fe_ls(first_stage_design(panel, {}, fx, cfg.cumulation), bw);
  add_unique(fs.warnings, fs.ls.warnings);

  const FeData iv_data = first_stage_design(panel, cfg.instruments, fx, cfg.cumulation, &fs.iv_dropped);
  if (iv_data.y.size() == 0) {
    fs.warnings.push_back("IV not estimable: no rows with exchange-rate instruments");
  } else {
    try {
      fs.iv = within_fe_2sls(iv_data, bw);
      fs.diagnostics = iv_diagnostics(iv_data, bw);
      add_unique(fs.warnings, fs.iv->warnings);
    } catch (const WeakInstrumentError& e) {
      fs.iv.reset();
      fs.warnings.push_back(std::string("IV not estimable: ") + e.what());
    } catch (const RankDeficientError& e) {
      fs.iv.reset();
      fs.warnings.push_back(std::string("IV not estimable: ") + e.what());
    }
  }
  if (!fs.diagnostics || fs.diagnostics->kp_wald_f < cfg.weak_f_floor)
    fs.channel = first_stage_channel(panel, cfg.significance, fs.warnings);

  fs.choice = select_estimator(fs.diagnostics, fs.channel, cfg.weak_f_floor, cfg.significance);
  if (fs.choice.estimator == Estimator::IV && fs.channel)
    fs.warnings.push_back("IV used with weak instruments because the channel test finds an endogeneity channel");
  if (fs.choice.estimator == Estimator::IV && !fs.iv) {
    fs.choice.estimator = Estimator::LS;
    fs.warnings.push_back("IV required but not estimable; falling back to LS");
  }
  if (fs.choice.iv_suppressed) fs.iv.reset();

  const FeEstimate& chosen = fs.choice.estimator == Estimator::IV ? *fs.iv : fs.ls;
  fs.sigma = delta_sigma(chosen);
  try {
    fs.aggregates = recover_aggregates(chosen);
  } catch (const std::exception& e) {
    fs.warnings.push_back(std::string("aggregates not retrievable: ") + e.what());
  }
  return fs;
}

SecondStage estimate_second_stage(const FirstStage& first, std::span<const DomesticYear> domestic,
                                  const RunConfig& cfg) {
  if (!first.aggregates) throw std::runtime_error(first.label + ": no first-stage aggregates for the second stage");
  SecondStage ss;
  ss.label = first.label;
  ss.significance = cfg.significance;
  ss.annual = annualize(*first.aggregates, first.weights, domestic);
  AdfOptions opts;
  opts.significance = cfg.significance;
  ss.pretests = run_pretests(ss.annual, opts);
  ss.spec = select_spec(ss.pretests);
  for (auto k : cfg.second_instruments)
    ss.instrument_names.push_back((ss.spec.spec == SecondSpec::levels ? "" : "d.") + to_string(k));
  add_unique(ss.warnings, ss.spec.warnings);
  ss.fit = estimate_second(ss.annual, ss.spec.spec, cfg.second_instruments);
  add_unique(ss.warnings, ss.fit.warnings);

  if (!ss.fit.diagnostics || ss.fit.diagnostics->kp_wald_f < cfg.weak_f_floor) {
    const bool levels = ss.spec.spec == SecondSpec::levels;
    const VectorXd dep = levels ? ss.annual.R : first_difference(ss.annual.R);
    const VectorXd reg = levels ? ss.annual.Q : first_difference(ss.annual.Q);
    try {
      ss.channel = channel_test(dep, reg, PanelIndex::single_series(dep.size()),
                                levels ? ChannelMode::levels : ChannelMode::first_differences, cfg.significance);
    } catch (const std::exception& e) {
      ss.warnings.push_back(std::string("channel test not estimable: ") + e.what());
    }
  }
  ss.choice = select_estimator(ss.fit.diagnostics, ss.channel, cfg.weak_f_floor, cfg.significance);
  if (ss.choice.estimator == Estimator::IV && ss.channel)
    ss.warnings.push_back("IV used with weak instruments because the channel test finds an endogeneity channel");
  if (ss.choice.estimator == Estimator::IV && !ss.fit.iv) {
    ss.choice.estimator = Estimator::LS;
    ss.warnings.push_back("IV required but not estimable; falling back to LS");
  }
  if (ss.choice.iv_suppressed) ss.fit.iv.reset();
  ss.macro = macro_delta(ss.choice.estimator == Estimator::IV ? *ss.fit.iv : ss.fit.ls);
  return ss;
}

// -- rendering --------------------------------------------------------------------

namespace {

std::string coef_cells(double coef, double se) { return fmt("%10s%10s", fixed(coef).c_str(), fixed(se).c_str()); }
const std::string blank_cells(20, ' ');

void tests_block(std::ostringstream& o, const IvDiagnostics& d, const std::string& instruments) {
  o << "--- Tests for IV estimation --- instruments: " << instruments << '\n';
  o << fmt("  %-30s%-40s%10s  %s\n", "Underidentification", "Kleibergen-Paap rk LM statistic",
           fixed(d.kp_lm.statistic).c_str(), p_paren(d.kp_lm.p).c_str());
  o << fmt("  %-30s%-40s%10s\n", "Weak identification", "Kleibergen-Paap rk Wald F statistic",
           fixed(d.kp_wald_f).c_str());
  o << fmt("  %-30s%-40s%10s  %s\n", "Overidentifying restriction", "Hansen J statistic",
           fixed(d.hansen_j.statistic).c_str(), p_paren(d.hansen_j.p).c_str());
  o << fmt("  %-30s%-40s%10s  %s\n", "Endogeneity", "C statistic", fixed(d.endogeneity.statistic).c_str(),
           p_paren(d.endogeneity.p).c_str());
}

void channel_block(std::ostringstream& o, const ChannelResult& c, const char* dependent, const char* regressor,
                   double significance) {
  o << "--- Test regression (" << to_string(c.mode) << ") --- dependent variable: " << dependent << '\n';
  o << fmt("  %-12s%10s%10s\n", "", "coef.", "s.e.");
  o << fmt("  %-12s%s  %s\n", regressor, coef_cells(c.slope, c.se).c_str(), p_paren(c.p).c_str());
  o << fmt("  %-12s%s  %s\n", "cons", coef_cells(c.intercept, c.se_intercept).c_str(),
           p_paren(c.p_intercept).c_str());
  o << "  obs. " << c.nobs << ", df " << c.df << "; zero slope "
    << (c.present ? "rejected" : "not rejected") << " at " << fixed(significance, 2) << '\n';
}

std::string rstrip_lines(const std::string& text) {
  std::string out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    line.erase(line.find_last_not_of(' ') + 1);
    out += line + '\n';
  }
  return out;
}

// Every calendar month from the first to the last period; unobserved months get no index.
template <class F>
void for_each_month(const AggregateSeries& a, F&& visit) {
  if (a.periods.empty()) return;
  std::size_t t = 0;
  for (YearMonth m = a.periods.front(); !(a.periods.back() < m); m = m.next()) {
    if (t < a.periods.size() && a.periods[t] == m)
      visit(m, std::optional<Index>(static_cast<Index>(t++)));
    else
      visit(m, std::optional<Index>());
  }
}

void warnings_block(std::ostringstream& o, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) o << "Warning: " << w << '\n';
}

}  // namespace

std::string render_first(const FirstStage& fs) {
  std::ostringstream o;
  o << "== First-stage estimation: " << fs.label << " ==\n";
  o << fmt("%-12s%-20s%-20s%s\n", "", "       FE (LS)", "       FE (IV)", "              Delta method");
  o << fmt("%-12s%10s%10s%10s%10s%10s%10s%10s\n", "", "coef.", "s.e.", "coef.", "s.e.", "", "estim.", "s.e.");
  o << fmt("%-12s%s%s%10s%s\n", "P", coef_cells(fs.ls.gamma, fs.ls.se_gamma()).c_str(),
           fs.iv ? coef_cells(fs.iv->gamma, fs.iv->se_gamma()).c_str() : blank_cells.c_str(), "sigma",
           coef_cells(fs.sigma.sigma, fs.sigma.se).c_str());
  o << fmt("%-12s%20s%20s\n", "obs.", std::to_string(fs.ls.nobs).c_str(),
           fs.iv ? std::to_string(fs.iv->nobs).c_str() : "");
  o << fmt("%-12s%20s%20s\n", "countries", std::to_string(fs.ls.entities).c_str(),
           fs.iv ? std::to_string(fs.iv->entities).c_str() : "");
  if (fs.iv && fs.diagnostics) tests_block(o, *fs.diagnostics, join(fs.instrument_names, [](auto& s) { return s; }, " "));
  if (fs.channel) channel_block(o, *fs.channel, "C-E", "E", fs.significance);
  if (fs.choice.iv_suppressed && fs.diagnostics)
    o << "IV suppressed: KP Wald F " << fixed(fs.diagnostics->kp_wald_f) << '\n';
  o << "Delta method based on FE (" << to_string(fs.choice.estimator) << "): " << fs.choice.reason << '\n';
  o << "Standard errors: HAC, Bartlett kernel, bandwidth " << fs.ls.bandwidth << "; test regression classical\n";
  if (fs.iv_dropped) o << "IV sample excludes " << fs.iv_dropped << " rows without instruments\n";
  warnings_block(o, fs.warnings);
  return rstrip_lines(o.str());
}

std::string render_aggregates(const FirstStage& fs) {
  std::ostringstream o;
  o << "--- First-stage aggregates: " << fs.label << " (last period = 1) ---\n";
  if (!fs.aggregates) {
    o << "not retrievable\n";
    return o.str();
  }
  o << fmt("%-10s%12s%12s\n", "period", "q_hat", "s.e.");
  const auto& a = *fs.aggregates;
  for_each_month(a, [&](YearMonth m, std::optional<Index> i) {
    if (i)
      o << fmt("%-10s%12s%12s\n", m.str().c_str(), fixed(a.q(*i), 6).c_str(), fixed(a.se(*i), 6).c_str());
    else
      o << fmt("%-10s%24s\n", m.str().c_str(), "no observations");
  });
  return o.str();
}

std::string render_second(const SecondStage& ss) {
  std::ostringstream o;
  const bool levels = ss.spec.spec == SecondSpec::levels;
  const auto& years = ss.annual.years;
  o << "== Second-stage estimation: " << ss.label << " ==\n";
  o << "Annual observations: " << years.size() << " (" << years.front() << "-" << years.back() << ")\n";
  o << "--- Pretests (ADF with constant, AIC lag choice; Engle-Granger) ---\n";
  o << fmt("  %-22s%10s%6s%10s  %s\n", "series", "stat.", "lags", "5% c.v.", "decision");
  auto adf_row = [&](const char* name, const AdfResult& r) {
    o << fmt("  %-22s%10s%6d%10s  %s\n", name, fixed(r.statistic).c_str(), r.lags, fixed(r.critical.p5).c_str(),
             r.reject ? "stationary" : "unit root");
  };
  adf_row("H", ss.pretests.h_level);
  adf_row("R-Q", ss.pretests.x_level);
  adf_row("d.H", ss.pretests.h_diff);
  adf_row("d.(R-Q)", ss.pretests.x_diff);
  const auto& eg = ss.pretests.eg;
  o << fmt("  %-22s%10s%6d%10s  %s\n", "Engle-Granger H, R-Q", fixed(eg.statistic).c_str(), eg.lags,
           fixed(eg.critical.p5).c_str(), eg.cointegrated ? "cointegrated" : "not cointegrated");
  o << "Specification: " << to_string(ss.spec.spec) << " (" << ss.spec.reason << ")\n";

  const auto& ls = ss.fit.ls;
  const auto* iv = ss.fit.iv ? &*ss.fit.iv : nullptr;
  o << fmt("%-12s%-20s%-20s%s\n", "", "          LS", "          IV", "              Delta method");
  o << fmt("%-12s%10s%10s%10s%10s%10s%10s%10s\n", "", "coef.", "s.e.", "coef.", "s.e.", "", "estim.", "s.e.");
  o << fmt("%-12s%s%s%10s%s\n", levels ? "R-Q" : "d.(R-Q)", coef_cells(ls.eta, ls.se_eta).c_str(),
           iv ? coef_cells(iv->eta, iv->se_eta).c_str() : blank_cells.c_str(), "rho",
           coef_cells(ss.macro.rho, ss.macro.se_rho).c_str());
  if (levels && ls.phi) {
    const bool have_beta = ss.macro.beta.has_value();
    o << fmt("%-12s%s%s%10s%s\n", "const.", coef_cells(*ls.phi, *ls.se_phi).c_str(),
             iv && iv->phi ? coef_cells(*iv->phi, *iv->se_phi).c_str() : blank_cells.c_str(), have_beta ? "beta" : "",
             have_beta ? coef_cells(*ss.macro.beta, *ss.macro.se_beta).c_str() : "");
  }
  o << fmt("%-12s%20s%20s\n", "obs.", std::to_string(ls.nobs).c_str(), iv ? std::to_string(iv->nobs).c_str() : "");
  const std::string prefix = levels ? "" : "d.";
  if (iv && ss.fit.diagnostics)
    tests_block(o, *ss.fit.diagnostics, join(ss.instrument_names, [](auto& n) { return n; }, " "));
  if (ss.channel)
    channel_block(o, *ss.channel, (prefix + "R").c_str(), (prefix + "Q").c_str(), ss.significance);
  if (ss.choice.iv_suppressed && ss.fit.diagnostics)
    o << "IV suppressed: KP Wald F " << fixed(ss.fit.diagnostics->kp_wald_f) << '\n';
  o << "Delta method based on " << to_string(ss.choice.estimator) << ": " << ss.choice.reason << '\n';
  o << "Standard errors: heteroskedasticity robust (HC0); test regression classical\n";
  warnings_block(o, ss.warnings);
  return rstrip_lines(o.str());
}

// -- machine-readable output ----------------------------------------------------------

namespace {

std::string opt_exact(const std::optional<double>& v) { return v ? exact(*v) : ""; }

}  // namespace

void write_first_csv(const fs::path& path, std::span<const FirstStage> stages) {
  std::ostringstream o;
  o << "panel,block,term,estimate,se,p,nobs\n";
  for (const auto& s : stages) {
    auto row = [&](const char* block, const std::string& term, double est, const std::string& se,
                   const std::string& p, const std::string& n) {
      o << s.label << ',' << block << ',' << term << ',' << exact(est) << ',' << se << ',' << p << ',' << n << '\n';
    };
    row("FE (LS)", "P", s.ls.gamma, exact(s.ls.se_gamma()), "", std::to_string(s.ls.nobs));
    if (s.iv) row("FE (IV)", "P", s.iv->gamma, exact(s.iv->se_gamma()), "", std::to_string(s.iv->nobs));
    row(s.choice.estimator == Estimator::IV ? "delta (IV)" : "delta (LS)", "sigma", s.sigma.sigma, exact(s.sigma.se),
        "", "");
    if (s.iv && s.diagnostics) {
      const auto& d = *s.diagnostics;
      row("tests", "kp_lm", d.kp_lm.statistic, "", opt_exact(d.kp_lm.p), "");
      row("tests", "kp_wald_f", d.kp_wald_f, "", "", "");
      row("tests", "hansen_j", d.hansen_j.statistic, "", opt_exact(d.hansen_j.p), "");
      row("tests", "endogeneity", d.endogeneity.statistic, "", opt_exact(d.endogeneity.p), "");
    }
    if (s.channel) {
      const auto& c = *s.channel;
      row("channel", "E", c.slope, exact(c.se), exact(c.p), std::to_string(c.nobs));
      row("channel", "cons", c.intercept, exact(c.se_intercept), exact(c.p_intercept), std::to_string(c.nobs));
    }
  }
  write_text(path, o.str());
}

void write_aggregates_csv(const fs::path& path, const FirstStage& fs) {
  if (!fs.aggregates) throw std::runtime_error(fs.label + ": no aggregates to write");
  std::ostringstream o;
  o << "period,q_hat,se,w_t\n";
  const auto& a = *fs.aggregates;
  for_each_month(a, [&](YearMonth m, std::optional<Index> i) {
    o << m.str() << ',';
    if (i) {
      const auto it = fs.weights.find(m);
      o << exact(a.q(*i)) << ',' << exact(a.se(*i)) << ','
        << (it == fs.weights.end() ? std::string() : exact(it->second));
    } else {
      o << ",,";
    }
    o << '\n';
  });
  write_text(path, o.str());
}

void write_second_csv(const fs::path& path, const SecondStage& ss) {
  std::ostringstream o;
  o << "panel,block,term,estimate,se,p,nobs\n";
  const std::string x = ss.spec.spec == SecondSpec::levels ? "R-Q" : "d.(R-Q)";
  auto row = [&](const char* block, const std::string& term, double est, const std::string& se, const std::string& p,
                 const std::string& n) {
    o << ss.label << ',' << block << ',' << term << ',' << exact(est) << ',' << se << ',' << p << ',' << n << '\n';
  };
  auto fit_rows = [&](const char* block, const SecondStageFit& f) {
    row(block, x, f.eta, exact(f.se_eta), "", std::to_string(f.nobs));
    if (f.phi) row(block, "const", *f.phi, exact(*f.se_phi), "", std::to_string(f.nobs));
  };
  fit_rows("LS", ss.fit.ls);
  if (ss.fit.iv) fit_rows("IV", *ss.fit.iv);
  const char* delta = ss.choice.estimator == Estimator::IV ? "delta (IV)" : "delta (LS)";
  row(delta, "rho", ss.macro.rho, exact(ss.macro.se_rho), "", "");
  if (ss.macro.beta) row(delta, "beta", *ss.macro.beta, exact(*ss.macro.se_beta), "", "");
  if (ss.fit.iv && ss.fit.diagnostics) {
    const auto& d = *ss.fit.diagnostics;
    row("tests", "kp_lm", d.kp_lm.statistic, "", opt_exact(d.kp_lm.p), "");
    row("tests", "kp_wald_f", d.kp_wald_f, "", "", "");
    row("tests", "hansen_j", d.hansen_j.statistic, "", opt_exact(d.hansen_j.p), "");
    row("tests", "endogeneity", d.endogeneity.statistic, "", opt_exact(d.endogeneity.p), "");
  }
  if (ss.channel) {
    const auto& c = *ss.channel;
    row("channel", "Q", c.slope, exact(c.se), exact(c.p), std::to_string(c.nobs));
    row("channel", "cons", c.intercept, exact(c.se_intercept), exact(c.p_intercept), std::to_string(c.nobs));
  }
  o << "\nyear,H,R,Q,q,import_value,domestic_value\n";
  const auto& a = ss.annual;
  for (Index k = 0; k < a.size(); ++k)
    o << a.years[static_cast<std::size_t>(k)] << ',' << exact(a.H(k)) << ',' << exact(a.R(k)) << ',' << exact(a.Q(k))
      << ',' << exact(a.q(k)) << ',' << exact(a.import_value(k)) << ',' << exact(a.domestic_value(k)) << '\n';
  write_text(path, o.str());
}

// -- commands ---------------------------------------------------------------------

namespace {

std::string panel_summary(const PanelBuild& b) {
  std::ostringstream o;
  for (const auto& p : b.panels) {
    const auto countries = p.countries();
    std::size_t with_fx = 0;
    for (const auto& r : p.rows()) with_fx += r.has_fx();
    o << "Panel " << p.label() << ": " << p.size() << " observations, " << countries.size() << " countries, "
      << p.first_period().str() << " to " << p.last_period().str() << ", " << with_fx << " with exchange rates\n";
  }
  if (!b.dropped_countries.empty())
    o << "Dropped as sparse: " << join(b.dropped_countries, [](auto& s) { return s; }, " ") << '\n';
  return o.str();
}

struct FirstRun {
  PanelBuild build;
  std::vector<FirstStage> stages;
  std::vector<std::string> skipped;  ///< secondary panels that could not be estimated
};

FirstRun run_first(const RunConfig& cfg) {
  FirstRun run;
  run.build = build_panels(cfg);
  for (std::size_t k = 0; k < run.build.panels.size(); ++k) {
    const auto& panel = run.build.panels[k];
    if (k == 0) {
      run.stages.push_back(estimate_first(panel, run.build.fx, cfg));
      continue;
    }
    try {
      run.stages.push_back(estimate_first(panel, run.build.fx, cfg));
    } catch (const std::exception& e) {
      run.skipped.push_back(panel.label() + ": not estimated: " + e.what());
    }
  }
  return run;
}

std::string first_text(const FirstRun& run) {
  std::string text;
  for (const auto& s : run.stages) text += render_first(s) + "\n";
  for (const auto& s : run.skipped) text += s + "\n\n";
  return text;
}

void write_first_outputs(const RunConfig& cfg, const FirstRun& run, const std::string& text) {
  ensure_dir(cfg.output_dir);
  const auto meat = to_string(cfg.meat);
  write_text(cfg.output_dir / (meat + "_first_stage.txt"), text);
  write_first_csv(cfg.output_dir / (meat + "_first_stage.csv"), run.stages);
  for (const auto& s : run.stages)
    if (s.aggregates) write_aggregates_csv(cfg.output_dir / (slug(s.label) + "_qhat.csv"), s);
}

SecondStage run_second(const RunConfig& cfg, const FirstRun& run) {
  const auto domestic = read_domestic(cfg.domestic);
  return estimate_second_stage(run.stages.front(), domestic, cfg);
}

}  // namespace

void cmd_ingest(const RunConfig& cfg, std::ostream& out) {
  if (cfg.transactions.empty()) throw InputError("config key 'transactions' is required");
  const auto records = read_transactions(cfg.transactions, cfg.window);
  const auto group = MeatGroup::standard(cfg.meat);
  const auto agg = aggregate_items(records, group);
  ExchangeRates fx;
  if (!cfg.exchange_rates.empty()) fx = read_exchange_rates(cfg.exchange_rates);

  ensure_dir(cfg.output_dir);
  const auto path = cfg.output_dir / (to_string(cfg.meat) + "_cif.csv");
  std::ostringstream o;
  o << "period,country,value_jpy,quantity_kg,cif_jpy_per_kg,items\n";
  std::set<std::string> countries;
  std::size_t with_fx = 0;
  for (const auto& [key, a] : agg) {
    o << key.period.str() << ',' << key.country << ',' << exact(a.value) << ',' << exact(a.quantity) << ','
      << exact(a.cif) << ',' << a.lines.size() << '\n';
    countries.insert(key.country);
    with_fx += fx.count(key) != 0;
  }
  write_text(path, o.str());
  out << "Read " << records.size() << " transaction records\n";
  out << to_string(cfg.meat) << ": " << agg.size() << " country-months, " << countries.size() << " countries, "
      << with_fx << " with exchange rates\n";
  if (!agg.empty()) {
    YearMonth lo = agg.begin()->first.period, hi = lo;
    for (const auto& kv : agg) {
      lo = std::min(lo, kv.first.period);
      hi = std::max(hi, kv.first.period);
    }
    out << "Periods " << lo.str() << " to " << hi.str() << '\n';
  }
  out << "Wrote " << path.filename().string() << '\n';
}

void cmd_tariff(const RunConfig& cfg, std::ostream& out) {
  cfg.require_inputs(false);
  const auto records = read_transactions(cfg.transactions, cfg.window);
  std::vector<QuotaSchedule> quotas;
  if (!cfg.quotas.empty()) quotas = read_quotas(cfg.quotas);
  const TariffEngine engine(ScheduleTable::read(cfg.schedule), std::move(quotas));
  const auto cells = engine.evaluate(records, MeatGroup::standard(cfg.meat));
  ensure_dir(cfg.output_dir);
  const auto path = cfg.output_dir / (to_string(cfg.meat) + "_tariff.csv");
  write_tariff_table(path, cells);
  std::map<std::string, std::size_t> by_audit;
  for (const auto& c : cells) ++by_audit[c.audit];
  out << to_string(cfg.meat) << ": " << cells.size() << " country-months with effective tariffs\n";
  for (const auto& [audit, n] : by_audit) out << fmt("  %-40s%8zu\n", audit.c_str(), n);
  out << "Wrote " << path.filename().string() << '\n';
}

void cmd_simulate(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  ces::SimConfig sim = cfg.sim;
  sim.meat = cfg.meat;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::gamma_distribution<double> g(4.0, 1.0);
  VectorXd alpha(sim.countries);
  for (auto& a : alpha) a = g(rng);
  alpha /= alpha.sum();
  const ces::FirstStageParams first{cfg.sim_sigma, alpha};
  const ces::SecondStageParams second{cfg.sim_rho, cfg.sim_beta};
  const auto result = ces::simulate_panel(sim, first, second, cfg.seed);

  const auto& dir = cfg.output_dir;
  ensure_dir(dir);
  write_transactions(dir / "transactions.csv", result.records);
  write_exchange_rates(dir / "fx.csv", result.fx);
  write_domestic(dir / "domestic.csv", result.domestic);
  std::string kind = "exempt", params = "-";
  if (const auto* a = std::get_if<AdValorem>(&result.tariff)) {
    kind = "ad_valorem";
    params = "r=" + exact(a->rate);
  } else if (const auto* b = std::get_if<GpsBoundary>(&result.tariff)) {
    kind = "gps";
    params = "G=" + exact(b->gate) + ";D=" + exact(b->specific) + ";F=" + exact(b->floor) + ";r=" + exact(b->rate);
  }
  write_text(dir / "schedule.csv", "country_selector,item_selector,from,to,kind,params,priority,label\n*,*,*,*," +
                                       kind + "," + params + ",0,simulated\n");
  write_text(dir / "quota.csv", "country,jfy,limit_kg,item_tags\n");
  ces::write_truth_json(dir / "truth.json", result.truth);

  RunConfig next = cfg;
  next.transactions = dir / "transactions.csv";
  next.exchange_rates = dir / "fx.csv";
  next.domestic = dir / "domestic.csv";
  next.schedule = dir / "schedule.csv";
  next.quotas = dir / "quota.csv";
  next.output_dir = dir;
  next.window.reset();
  next.write(dir / "config.txt");

  out << "Simulated " << to_string(sim.meat) << ": " << sim.countries << " countries, " << sim.months
      << " months from " << sim.start.str() << ", seed " << cfg.seed << '\n';
  out << "sigma " << exact(cfg.sim_sigma) << ", rho " << exact(cfg.sim_rho) << ", beta " << exact(cfg.sim_beta)
      << ", tariff " << describe(result.tariff) << ", redraws " << result.truth.retries << '\n';
  out << "Wrote transactions.csv fx.csv domestic.csv schedule.csv quota.csv truth.json config.txt\n";
}

void cmd_estimate_first(const RunConfig& cfg, std::ostream& out) {
  cfg.require_inputs(false);
  const auto run = run_first(cfg);
  const auto text = panel_summary(run.build) + "\n" + first_text(run);
  write_first_outputs(cfg, run, text);
  out << text;
}

void cmd_estimate_second(const RunConfig& cfg, std::ostream& out) {
  cfg.require_inputs(true);
  const auto run = run_first(cfg);
  const auto ss = run_second(cfg, run);
  const auto text = render_second(ss);
  ensure_dir(cfg.output_dir);
  const auto meat = to_string(cfg.meat);
  write_text(cfg.output_dir / (meat + "_second_stage.txt"), text);
  write_second_csv(cfg.output_dir / (meat + "_second_stage.csv"), ss);
  out << text;
}

void cmd_report(const RunConfig& cfg, std::ostream& out) {
  cfg.require_inputs(true);
  const auto run = run_first(cfg);
  const auto first = first_text(run);
  write_first_outputs(cfg, run, panel_summary(run.build) + "\n" + first);
  const auto ss = run_second(cfg, run);
  const auto meat = to_string(cfg.meat);
  write_second_csv(cfg.output_dir / (meat + "_second_stage.csv"), ss);

  std::string text = "Armington elasticity report: " + meat + "\n\n" + panel_summary(run.build) + "\n" + first;
  for (const auto& s : run.stages) text += render_aggregates(s) + "\n";
  text += render_second(ss);
  write_text(cfg.output_dir / (meat + "_report.txt"), text);
  out << text;
}

}  // namespace armington::pipeline
