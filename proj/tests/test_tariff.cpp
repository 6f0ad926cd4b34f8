#include <doctest.h>

#include "armington/csv.hpp"
#include "armington/tariff.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace armington;

namespace {

std::filesystem::path write_file(const char* name, const std::string& text) {
  auto dir = std::filesystem::temp_directory_path() / "armington_tests";
  std::filesystem::create_directories(dir);
  auto path = dir / name;
  std::ofstream(path) << text;
  return path;
}

RateSchedule entry(const char* countries, const char* items, RateKind kind, int priority = 0,
                   bool in_quota = false, const char* label = "e") {
  RateSchedule e;
  e.label = label;
  e.countries = CountrySelector::parse(countries);
  e.items = ItemSelector::parse(items);
  e.from = {1990, 1};
  e.to = {2030, 12};
  e.kind = kind;
  e.priority = priority;
  e.in_quota_only = in_quota;
  return e;
}

QuotaSchedule quota(const char* partner, int jfy, double limit, char tag = 'P') {
  return {partner, jfy, limit, tag, ItemSelector::parse("28-48")};
}

}  // namespace

TEST_CASE("gps_duty arms at the baseline pork boundary") {
  const auto b = baseline_pork_gps();
  CHECK(b.threshold == doctest::Approx(64.35));
  CHECK(gps_duty(400, b) == doctest::Approx(146.35));
  CHECK(400 + gps_duty(400, b) == doctest::Approx(546.35));
  CHECK(gps_duty(60, b) == doctest::Approx(482));
  CHECK(60 + gps_duty(60, b) == doctest::Approx(542));
  CHECK(gps_duty(600, b) == doctest::Approx(std::max(0.043 * 600, 546.35 - 600)));
  CHECK(gps_duty(600, b) == doctest::Approx(25.8));
}

TEST_CASE("GPS boundary invariants") {
  CHECK_THROWS_AS(GpsBoundary::from_gate(524, 482, 546.35, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(GpsBoundary::from_gate(50, 482, 546.35, 0.043), std::invalid_argument);
  CHECK_THROWS_AS(GpsBoundary::from_gate(524, 600, 546.35, 0.043), std::invalid_argument);
  GpsBoundary off = baseline_pork_gps();
  off.floor += 1;
  CHECK_THROWS_AS(off.validate(), std::invalid_argument);
}

TEST_CASE("carcass scaling") {
  const auto s = scale_for_carcass(baseline_pork_gps());
  CHECK(s.gate == doctest::Approx(393));
  CHECK(s.floor == doctest::Approx(409.7625));
  CHECK(s.specific == doctest::Approx(361.5));
  CHECK(s.threshold == doctest::Approx(48.2625));
  CHECK(std::abs(s.floor - (s.specific + s.threshold)) < 1e-9);
  CHECK(s.rate == 0.043);
  CHECK_NOTHROW(s.validate());
  CHECK_THROWS_AS(scale_for_carcass(s), std::logic_error);
}

TEST_CASE("gps post-tariff price is continuous and at least F between B and G") {
  const auto b = baseline_pork_gps();
  const double eps = 1e-9;
  CHECK(b.threshold + gps_duty(b.threshold - eps, b) == doctest::Approx(b.floor));
  CHECK(b.threshold + gps_duty(b.threshold, b) == doctest::Approx(b.floor));
  CHECK(b.gate - eps + gps_duty(b.gate - eps, b) == doctest::Approx(b.floor));

  // With (1 + r) G = F the ad valorem arm meets the floor at G.
  const double r = 0.05, F = 546.35;
  const auto k = GpsBoundary::from_gate(F / (1 + r), 482, F, r);
  CHECK(k.gate - eps + gps_duty(k.gate - eps, k) == doctest::Approx(k.gate + gps_duty(k.gate, k)));

  double prev = 0;
  for (double c = 1; c < 1000; c += 0.5) {
    const double post = c + gps_duty(c, b);
    if (c >= b.threshold && c < b.gate) CHECK(post >= b.floor - 1e-9);
    if (c < b.threshold) CHECK(post == doctest::Approx(c + b.specific));
    if (c > b.threshold) CHECK(post >= prev - 1e-9);
    prev = post;
  }
}

TEST_CASE("effective_T") {
  CHECK(effective_T(100, AdValorem{0.043}) == doctest::Approx(std::log(1.043)));
  CHECK(effective_T(100, AdValorem{0.043}) == doctest::Approx(0.042096).epsilon(1e-5));
  CHECK(effective_T(1e5, AdValorem{0.043}) == effective_T(3.0, AdValorem{0.043}));
  CHECK(effective_T(100, Exempt{}) == 0.0);
  CHECK(effective_T(400, baseline_pork_gps()) == doctest::Approx(std::log(546.35 / 400)));
  CHECK(effective_T(200, SpecificDuty{50}) == doctest::Approx(std::log(1.25)));
  CHECK_THROWS_AS(effective_T(0, Exempt{}), std::invalid_argument);
  CHECK_THROWS_AS(effective_T(-1, AdValorem{0.1}), std::invalid_argument);
}

TEST_CASE("trq_resolve decides each month from the volume before it") {
  QuotaLedger ledger;
  const auto q = quota("MEX", 2005, 10000);
  const YearMonth m[]{{2005, 4}, {2005, 5}, {2005, 6}, {2005, 7}};
  std::vector<QuotaStatus> got;
  for (auto t : m) got.push_back(trq_resolve(ledger, q, t, 4000).status);
  CHECK(got == std::vector<QuotaStatus>{QuotaStatus::in_quota, QuotaStatus::in_quota,
                                        QuotaStatus::in_quota, QuotaStatus::out_quota});
  const auto* st = ledger.state("MEX", 'P');
  REQUIRE(st);
  CHECK(st->cumulative == 16000);
  CHECK(st->crossing == YearMonth{2005, 7});

  // April opens a new fiscal year.
  const auto next = quota("MEX", 2006, 10000);
  const auto reset = trq_resolve(ledger, next, {2006, 4}, 4000);
  CHECK(reset.status == QuotaStatus::in_quota);
  CHECK(reset.cumulative_before == 0);
  CHECK_FALSE(ledger.state("MEX", 'P')->crossing);
}

TEST_CASE("trq_resolve with a zero limit and out-of-order feeds") {
  QuotaLedger ledger;
  const auto zero = quota("CHL", 2010, 0);
  for (YearMonth t{2010, 4}; t < YearMonth{2011, 4}; t = t.next())
    CHECK(trq_resolve(ledger, zero, t, 100).status == QuotaStatus::out_quota);

  QuotaLedger seq;
  const auto q = quota("PER", 2012, 500);
  trq_resolve(seq, q, {2012, 8}, 10);
  CHECK_THROWS_AS(trq_resolve(seq, q, {2012, 8}, 10), QuotaSequenceError);
  CHECK_THROWS_AS(trq_resolve(seq, q, {2012, 6}, 10), QuotaSequenceError);
  CHECK_THROWS_AS(trq_resolve(seq, q, {2013, 4}, 10), std::invalid_argument);
}

TEST_CASE("in-quota overshoot never exceeds the largest month") {
  std::mt19937_64 rng(17);
  std::exponential_distribution<double> vol(1.0 / 3000);
  std::uniform_real_distribution<double> lim(0, 40000);
  for (int path = 0; path < 1000; ++path) {
    QuotaLedger ledger;
    const auto q = quota("AUS", 2015, lim(rng));
    double charged = 0, largest = 0;
    for (YearMonth t{2015, 4}; t < YearMonth{2016, 4}; t = t.next()) {
      const double v = vol(rng);
      largest = std::max(largest, v);
      if (trq_resolve(ledger, q, t, v).status == QuotaStatus::in_quota) charged += v;
    }
    CHECK(charged <= q.limit_kg + largest + 1e-9);
  }
}

TEST_CASE("selectors") {
  CHECK(CountrySelector::parse("*").matches("ANY"));
  const auto list = CountrySelector::parse("AUS;MEX");
  CHECK(list.matches("MEX"));
  CHECK_FALSE(list.matches("USA"));
  const auto neg = CountrySelector::parse("!AUS;MEX");
  CHECK(neg.matches("USA"));
  CHECK_FALSE(neg.matches("AUS"));

  const auto items = ItemSelector::parse("28-30;44");
  CHECK(items.matches(29));
  CHECK(items.matches(44));
  CHECK_FALSE(items.matches(31));
  CHECK(ItemSelector::parse("!1-16").matches(30));
  CHECK_FALSE(ItemSelector::parse("!1-16").matches(16));
  CHECK_THROWS(ItemSelector::parse("30-28"));
  CHECK_THROWS(ItemSelector::parse("a"));
}

TEST_CASE("schedule resolution by priority") {
  const ScheduleTable table({entry("*", "*", AdValorem{0.385}, 0, false, "mfn"),
                             entry("AUS", "1-16", AdValorem{0.3}, 1, false, "epa"),
                             entry("MEX", "28-48", Exempt{}, 2, true, "inquota")});
  CHECK(table.resolve("USA", 3, {2001, 1}, false).label == "mfn");
  CHECK(table.resolve("AUS", 3, {2001, 1}, false).label == "epa");
  CHECK(table.resolve("AUS", 30, {2001, 1}, false).label == "mfn");
  CHECK(table.resolve("MEX", 30, {2001, 1}, true).label == "inquota");
  CHECK(table.resolve("MEX", 30, {2001, 1}, false).label == "mfn");

  const ScheduleTable tie({entry("*", "*", Exempt{}), entry("AUS", "*", AdValorem{0.1})});
  CHECK_THROWS_AS(tie.resolve("AUS", 1, {2001, 1}, false), TariffLookupError);
  const ScheduleTable none({entry("AUS", "*", Exempt{})});
  CHECK_THROWS_AS(none.resolve("USA", 1, {2001, 1}, false), TariffLookupError);
}

TEST_CASE("schedule file parsing") {
  const auto path = write_file("schedule.csv",
                               "country_selector,item_selector,from,to,kind,params,priority,label\n"
                               "*,28-48,JFY2000,*,gps,G=524;D=482;F=546.35;r=0.043,0,pork-gps\n"
                               "*,1-16,*,*,ad_valorem,r=0.385,0,beef\n"
                               "MEX,28-48,2005-04,*,inquota:ad_valorem,r=0.02,5,\n");
  const auto table = ScheduleTable::read(path);
  REQUIRE(table.entries().size() == 3);
  const auto& gps = table.entries()[0];
  CHECK(gps.from == YearMonth{2000, 4});
  CHECK(gps.to == YearMonth{9999, 12});
  CHECK(std::get<GpsBoundary>(gps.kind).threshold == doctest::Approx(64.35));
  CHECK(table.entries()[2].in_quota_only);
  CHECK(table.entries()[2].label == "row3");
  CHECK_THROWS_AS(table.resolve("USA", 30, {2000, 3}, false), TariffLookupError);

  const auto bad = write_file("bad_schedule.csv",
                              "country_selector,item_selector,from,to,kind,params,priority\n"
                              "*,28-48,*,*,gps,G=524;D=482;F=540;r=0.043;B=64.35,0\n");
  CHECK_THROWS_AS(ScheduleTable::read(bad), InputError);
}

TEST_CASE("quota table and quota files") {
  CHECK(quota_table_items("PER", 'P') == std::set<int>{39, 40, 41, 42, 43, 44, 45, 46, 47, 48});
  CHECK(quota_table_items("CHL", 'C') == std::set<int>{74});
  CHECK(quota_table_items("USA", 'B').empty());

  const auto path = write_file("quota.csv",
                               "country,jfy,limit_kg,item_tags\n"
                               "MEX,2005,38000000,P\n"
                               "AUS,2015,1000,P:30-36;39\n");
  const auto q = read_quotas(path);
  REQUIRE(q.size() == 2);
  CHECK(q[0].tag == 'P');
  CHECK(q[0].items.matches(45));
  CHECK_FALSE(q[0].items.matches(37));
  CHECK(q[1].items.matches(39));
  CHECK_FALSE(q[1].items.matches(40));

  CHECK_THROWS_AS(read_quotas(write_file("q1.csv", "country,jfy,limit_kg,item_tags\nUSA,2005,1,P\n")),
                  InputError);
  CHECK_THROWS_AS(read_quotas(write_file("q2.csv", "country,jfy,limit_kg,item_tags\nMEX,2005,-1,P\n")),
                  InputError);
}

TEST_CASE("engine evaluates per item at the aggregated price") {
  const auto gps = baseline_pork_gps();
  const ScheduleTable table({entry("*", "28-48", gps, 0, false, "gps"),
                             entry("MEX", "28-48", AdValorem{0.02}, 5, true, "epa")});
  const TariffEngine engine(table, {quota("MEX", 2005, 5000)});
  const auto group = MeatGroup::standard(Meat::pork);
  std::vector<TransactionRecord> rec{
      {{2005, 4}, "USA", 30, 400.0 * 60, 60},  // non-carcass
      {{2005, 4}, "USA", 28, 400.0 * 40, 40},  // carcass
      {{2005, 4}, "MEX", 33, 400.0 * 4000, 4000},
      {{2005, 5}, "MEX", 33, 400.0 * 4000, 4000},
      {{2005, 6}, "MEX", 33, 400.0 * 4000, 4000},
  };
  const auto cells = engine.evaluate(rec, group);
  REQUIRE(cells.size() == 4);

  const auto carcass = scale_for_carcass(gps);
  const double post = 60 * (400 + gps_duty(400, gps)) + 40 * (400 + gps_duty(400, carcass));
  const auto& usa = cells[3];
  CHECK(usa.key.country == "USA");
  CHECK(usa.cif == doctest::Approx(400));
  CHECK(usa.T == doctest::Approx(std::log(post / (400 * 100))));
  CHECK(usa.audit == "gps");

  // Months 4 and 5 start below the 5000 kg limit, month 6 does not.
  CHECK(cells[0].key.period == YearMonth{2005, 4});
  CHECK(cells[0].T == doctest::Approx(std::log(1.02)));
  CHECK(cells[0].audit == "epa[in-quota]");
  CHECK(cells[1].key.period == YearMonth{2005, 5});
  CHECK(cells[1].audit == "epa[in-quota]");
  CHECK(cells[2].key.period == YearMonth{2005, 6});
  CHECK(cells[2].T == doctest::Approx(std::log(546.35 / 400)));
  CHECK(cells[2].audit == "gps[out-quota]");

  rec.push_back({{2005, 4}, "BRA", 70, 100, 1});
  CHECK_THROWS_AS(engine.evaluate(rec, MeatGroup::standard(Meat::chicken)), TariffLookupError);
}

TEST_CASE("quota volume counts tagged items outside the meat group") {
  const ScheduleTable table({entry("*", "*", AdValorem{0.1}, 0, false, "mfn"),
                             entry("MEX", "*", Exempt{}, 5, true, "epa")});
  QuotaSchedule q{"MEX", 2005, 5000, 'P', ItemSelector::parse("28-60")};
  const TariffEngine engine(table, {q});
  const std::vector<TransactionRecord> rec{
      {{2005, 4}, "MEX", 55, 1000, 6000},  // tagged but not in the pork group
      {{2005, 5}, "MEX", 33, 1000, 10},
  };
  const auto cells = engine.evaluate(rec, MeatGroup::standard(Meat::pork));
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].audit == "mfn[out-quota]");
  CHECK(cells[0].T == doctest::Approx(std::log(1.1)));
}
