#include "armington/ces.hpp"

#include "armington/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>

namespace armington::ces {

void FirstStageParams::validate() const {
  if (!(sigma > 0) || sigma == 1.0)
    throw std::invalid_argument("sigma must be positive and != 1 (Cobb-Douglas limit unsupported)");
  if (alpha.size() == 0) throw std::invalid_argument("alpha is empty");
  if ((alpha.array() < 0).any()) throw std::invalid_argument("alpha must be non-negative");
  if (std::abs(alpha.sum() - 1.0) > 1e-12) throw std::invalid_argument("alpha must sum to one");
}

void SecondStageParams::validate() const {
  if (!(rho > 0) || rho == 1.0) throw std::invalid_argument("rho must be positive and != 1");
  if (!(beta >= 0) || !(beta <= 1)) throw std::invalid_argument("beta must lie in [0, 1]");
}

double outer_price_index(double r, double q, const SecondStageParams& params) {
  params.validate();
  const double e = 1.0 - params.rho;
  return std::pow(params.beta * std::pow(r, e) + (1.0 - params.beta) * std::pow(q, e), 1.0 / e);
}

double import_aggregate(const Eigen::Ref<const Eigen::VectorXd>& x, const FirstStageParams& params) {
  params.validate();
  const double s = params.sigma;
  double sum = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (params.alpha[i] == 0) continue;
    sum += std::pow(params.alpha[i], 1.0 / s) * std::pow(x[i], (s - 1.0) / s);
  }
  return std::pow(sum, s / (s - 1.0));
}

double utility(double z, double y, const SecondStageParams& params) {
  params.validate();
  const double r = params.rho;
  const double e = (r - 1.0) / r;
  double sum = 0;
  if (params.beta > 0) sum += std::pow(params.beta, 1.0 / r) * std::pow(z, e);
  if (params.beta < 1) sum += std::pow(1.0 - params.beta, 1.0 / r) * std::pow(y, e);
  return std::pow(sum, 1.0 / e);
}

Demand demand(const Eigen::Ref<const Eigen::VectorXd>& prices, double domestic_price, double budget,
              const FirstStageParams& first, const SecondStageParams& second) {
  const double q = price_index(prices, first);
  const double v = outer_price_index(domestic_price, q, second);
  const double e = 1.0 - second.rho;
  const double import_spend = budget * (1.0 - second.beta) * std::pow(q / v, e);
  Demand d;
  d.imports = (shares(prices, first).array() * import_spend / prices.array()).matrix();
  d.domestic = budget * second.beta * std::pow(domestic_price / v, e) / domestic_price;
  return d;
}

DualityResidual duality_check(const Eigen::Ref<const Eigen::VectorXd>& imports, double domestic,
                              const Eigen::Ref<const Eigen::VectorXd>& prices, double domestic_price,
                              const FirstStageParams& first, const SecondStageParams& second) {
  const double q = price_index(prices, first);
  const double y = import_aggregate(imports, first);
  const double spend = prices.dot(imports);
  const double v = outer_price_index(domestic_price, q, second);
  const double u = utility(domestic, y, second);
  const double total = domestic_price * domestic + q * y;
  return {std::abs(q * y - spend) / spend, std::abs(v * u - total) / total};
}

void SimConfig::validate() const {
  if (countries < 2) throw std::invalid_argument("simulation needs at least 2 countries");
  if (months < 2) throw std::invalid_argument("simulation needs at least 2 months");
  for (double sd : {demand_shock_sd, supply_shock_sd, fob_log_sd, fx_innovation_sd, cif_gap_sd,
                    expenditure_log_sd, domestic_price_log_sd, domestic_shock_sd})
    if (!(sd >= 0)) throw std::invalid_argument("simulation standard deviations must be >= 0");
  if (!(supply_elasticity > 0)) throw std::invalid_argument("supply elasticity must be positive");
  if (!(std::abs(fx_ar) < 1)) throw std::invalid_argument("fx AR coefficient must lie in (-1, 1)");
  if (tariff == SimTariff::gps) gps.validate();
  if (max_retries < 0) throw std::invalid_argument("max_retries must be >= 0");
}

FirstStageParams equal_weights(int n, double sigma) {
  return {sigma, Eigen::VectorXd::Constant(n, 1.0 / n)};
}

namespace {

std::vector<int> sim_items(Meat meat) {
  switch (meat) {
    case Meat::beef: return {5, 6, 13};
    case Meat::pork: return {33, 34, 44};
    case Meat::chicken: return {68, 70, 74};
  }
  return {};
}

double log_sum_exp(const Eigen::ArrayXd& a) {
  const double m = a.maxCoeff();
  return m + std::log((a - m).exp().sum());
}

/// Monotone root of f on [lo, hi], expanding the bracket if needed.
template <typename F>
double bisect(F&& f, double lo, double hi) {
  for (int k = 0; k < 60 && f(lo) > 0; ++k) lo -= (hi - lo);
  for (int k = 0; k < 60 && f(hi) < 0; ++k) hi += (hi - lo);
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

SimResult simulate_panel(const SimConfig& cfg, const FirstStageParams& first,
                         const SecondStageParams& second, std::uint64_t seed) {
  cfg.validate();
  first.validate();
  second.validate();
  if (first.alpha.size() != cfg.countries)
    throw std::invalid_argument("alpha length must equal the number of countries");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  const int N = cfg.countries;
  const int J = cfg.months;
  const double sigma = first.sigma;
  const bool elastic = std::isinf(cfg.supply_elasticity);
  const double es = cfg.supply_elasticity;

  RateKind tariff = Exempt{};
  if (cfg.tariff == SimTariff::ad_valorem) tariff = AdValorem{cfg.ad_valorem_rate};
  if (cfg.tariff == SimTariff::gps) tariff = cfg.gps;

  SimResult out;
  out.tariff = tariff;
  auto& truth = out.truth;
  truth.first = first;
  truth.second = second;
  truth.seed = seed;
  truth.demand_shocks = Eigen::MatrixXd::Zero(N, J);

  // Country fundamentals.
  Eigen::VectorXd fx_mean(N), fob_ref(N), gap_mean(N), x_ref(N), fx_dev(N);
  for (int i = 0; i < N; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "X%02d", i + 1);
    truth.countries.emplace_back(name);
    fx_mean[i] = std::log(0.5) + uniform(rng) * (std::log(150.0) - std::log(0.5));
    fob_ref[i] = cfg.fob_log_mean - fx_mean[i] + cfg.fob_log_sd * normal(rng);
    gap_mean[i] = cfg.cif_gap_mean;
    const double t0 = effective_T(std::exp(cfg.fob_log_mean + cfg.cif_gap_mean), tariff);
    x_ref[i] = std::log(std::max(first.alpha[i], 1e-12)) + cfg.expenditure_log_mean -
               (cfg.fob_log_mean + cfg.cif_gap_mean + t0);
    fx_dev[i] = cfg.fx_innovation_sd / std::sqrt(1.0 - cfg.fx_ar * cfg.fx_ar) * normal(rng);
  }
  const Eigen::ArrayXd log_alpha = first.alpha.array().max(1e-300).log();
  const auto items = sim_items(cfg.meat);

  std::vector<PricedCell> cells;
  cells.reserve(static_cast<std::size_t>(N) * J);
  Eigen::VectorXd log_q(J), monthly_value(J);

  YearMonth period = cfg.start;
  for (int t = 0; t < J; ++t, period = period.next()) {
    truth.periods.push_back(period);
    Eigen::ArrayXd E(N), gap(N), eps(N), xi(N), F(N), P(N), T(N);
    double lnW = 0;
    bool ok = false;
    Eigen::ArrayXd next_dev(N);
    for (int attempt = 0; attempt <= cfg.max_retries && !ok; ++attempt) {
      if (attempt > 0) ++truth.retries;
      lnW = cfg.expenditure_log_mean + cfg.expenditure_log_sd * normal(rng);
      for (int i = 0; i < N; ++i) {
        next_dev[i] = cfg.fx_ar * fx_dev[i] + cfg.fx_innovation_sd * normal(rng);
        E[i] = fx_mean[i] + next_dev[i];
        gap[i] = gap_mean[i] + cfg.cif_gap_sd * normal(rng);
        eps[i] = cfg.demand_shock_sd * normal(rng);
        xi[i] = cfg.supply_shock_sd * normal(rng);
      }
      const Eigen::ArrayXd pref = log_alpha + eps;

      auto post_price = [&](int i, double f) {
        const double c = std::exp(f + E[i] + gap[i]);
        return std::log(c + duty_per_kg(tariff, c));
      };
      auto index_of = [&](const Eigen::ArrayXd& logp) {
        return log_sum_exp(pref + (1.0 - sigma) * logp) / (1.0 - sigma);
      };

      if (elastic) {
        for (int i = 0; i < N; ++i) {
          F[i] = fob_ref[i] + xi[i];
          P[i] = post_price(i, F[i]);
        }
      } else {
        // Market clearing: es*F + sigma*P(F) = base_i + (sigma-1)*L, with L = ln q.
        Eigen::ArrayXd base(N);
        for (int i = 0; i < N; ++i)
          base[i] = pref[i] - xi[i] + lnW - x_ref[i] + es * fob_ref[i];
        auto solve_F = [&](double L) {
          Eigen::ArrayXd f(N);
          for (int i = 0; i < N; ++i) {
            const double rhs = base[i] + (sigma - 1.0) * L;
            if (cfg.tariff != SimTariff::gps) {
              const double k = E[i] + gap[i] + effective_T(1.0, tariff);
              f[i] = (rhs - sigma * k) / (es + sigma);
            } else {
              const double guess = (rhs - sigma * (E[i] + gap[i])) / (es + sigma);
              f[i] = bisect([&](double v) { return es * v + sigma * post_price(i, v) - rhs; },
                            guess - 5.0, guess + 5.0);
            }
          }
          return f;
        };
        double L;
        if (cfg.tariff != SimTariff::gps) {
          // ln q is linear in L with slope kappa: closed form.
          const double kappa = (sigma - 1.0) / (es + sigma);
          Eigen::ArrayXd f0 = solve_F(0.0), p0(N);
          for (int i = 0; i < N; ++i) p0[i] = post_price(i, f0[i]);
          L = index_of(p0) / (1.0 - kappa);
        } else {
          auto g = [&](double L_) {
            const Eigen::ArrayXd f = solve_F(L_);
            Eigen::ArrayXd p(N);
            for (int i = 0; i < N; ++i) p[i] = post_price(i, f[i]);
            return L_ - index_of(p);
          };
          L = bisect(g, cfg.fob_log_mean - 5.0, cfg.fob_log_mean + 5.0);
        }
        F = solve_F(L);
        for (int i = 0; i < N; ++i) P[i] = post_price(i, F[i]);
      }
      for (int i = 0; i < N; ++i) T[i] = P[i] - (F[i] + E[i] + gap[i]);
      ok = P.allFinite() && F.allFinite() && std::isfinite(lnW);
      if (ok) {
        const double lq = index_of(P);
        log_q[t] = lq;
        // Shares and quantities from the demand side.
        const Eigen::ArrayXd logs = pref + (1.0 - sigma) * (P - lq);
        Eigen::ArrayXd x = (logs + lnW - P).exp();
        ok = x.allFinite() && (x > 0).all();
        if (ok) {
          fx_dev = next_dev.matrix();
          truth.demand_shocks.col(t) = eps.matrix();
          double total = 0;
          for (int i = 0; i < N; ++i) {
            const double c = std::exp(F[i] + E[i] + gap[i]);
            cells.push_back({truth.countries[i], period, c, T[i], x[i]});
            out.fx[{truth.countries[i], period}] = std::exp(E[i]);
            total += std::exp(P[i]) * x[i];
            // Split the cell across items at a common price.
            Eigen::ArrayXd wts(static_cast<Eigen::Index>(items.size()));
            for (auto& w : wts) w = 0.2 + uniform(rng);
            wts /= wts.sum();
            for (std::size_t g = 0; g < items.size(); ++g) {
              const double qty = x[i] * wts[static_cast<Eigen::Index>(g)];
              out.records.push_back({period, truth.countries[i], items[g], c * qty, qty});
            }
          }
          monthly_value[t] = total;
        }
      }
    }
    if (!ok)
      throw std::runtime_error("simulate_panel: no finite draw for " + period.str() + " after " +
                               std::to_string(cfg.max_retries) + " retries");
  }

  truth.q_index = (log_q.array() - log_q[J - 1]).exp().matrix();
  out.panel = build_panel(to_string(cfg.meat) + " (simulated)", cells, out.fx);

  // Outer share equation on complete calendar years.
  std::vector<int> years;
  for (int t = 0; t < J; ++t)
    if (truth.periods[t].month == 1 && t + 11 < J) years.push_back(t);
  truth.domestic_shocks = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(years.size()));
  const double eta = 1.0 - second.rho;
  const double phi = std::log(second.beta / (1.0 - second.beta));
  for (std::size_t k = 0; k < years.size(); ++k) {
    const int t0 = years[k];
    double num = 0, den = 0;
    for (int t = t0; t < t0 + 12; ++t) {
      num += monthly_value[t];
      den += monthly_value[t] / truth.q_index[t];
    }
    const double Q = std::log(num / den);
    const double R = cfg.domestic_price_log_mean + cfg.domestic_price_log_sd * normal(rng);
    const double nu = cfg.domestic_shock_sd * normal(rng);
    truth.domestic_shocks[static_cast<Eigen::Index>(k)] = nu;
    const double H = phi + eta * (R - Q) + nu;
    const double r = std::exp(R);
    out.domestic.push_back({truth.periods[t0].year, r, std::exp(H) * num / r});
  }
  return out;
}

void write_truth_json(const std::filesystem::path& path, const GroundTruth& truth) {
  nlohmann::ordered_json j;
  j["sigma"] = truth.first.sigma;
  j["rho"] = truth.second.rho;
  j["beta"] = truth.second.beta;
  j["beta_note"] = "beta refers to the first-stage index normalised at the last month";
  j["seed"] = truth.seed;
  j["countries"] = truth.countries;
  j["alpha"] = std::vector<double>(truth.first.alpha.data(),
                                   truth.first.alpha.data() + truth.first.alpha.size());
  std::vector<std::string> periods;
  for (auto p : truth.periods) periods.push_back(p.str());
  j["periods"] = periods;
  j["q_index"] = std::vector<double>(truth.q_index.data(), truth.q_index.data() + truth.q_index.size());
  j["domestic_shocks"] = std::vector<double>(truth.domestic_shocks.data(),
                                             truth.domestic_shocks.data() + truth.domestic_shocks.size());
  std::vector<std::vector<double>> eps;
  for (Eigen::Index i = 0; i < truth.demand_shocks.rows(); ++i) {
    Eigen::VectorXd row = truth.demand_shocks.row(i);
    eps.emplace_back(row.data(), row.data() + row.size());
  }
  j["demand_shocks"] = eps;
  j["retries"] = truth.retries;
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

}  // namespace armington::ces
