#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "dgpricer/model.hpp"
#include "dgpricer/powerflow.hpp"

using namespace dgp;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool same_scenario(const model::Scenario& a, const model::Scenario& b) {
  if (a.label != b.label) return false;
  if (a.network.buses.size() != b.network.buses.size()) return false;
  if (a.network.lines.size() != b.network.lines.size()) return false;
  if (a.network.base_mva != b.network.base_mva) return false;
  if (a.network.z_scale != b.network.z_scale) return false;
  for (size_t i = 0; i < a.network.buses.size(); ++i) {
    const auto &x = a.network.buses[i], &y = b.network.buses[i];
    if (x.id != y.id || x.v_min != y.v_min || x.v_max != y.v_max || x.v_pin != y.v_pin)
      return false;
  }
  for (size_t i = 0; i < a.network.lines.size(); ++i) {
    const auto &x = a.network.lines[i], &y = b.network.lines[i];
    if (x.from != y.from || x.to != y.to || x.z != y.z || x.p_max != y.p_max) return false;
  }
  const auto &sa = a.network.substation, &sb = b.network.substation;
  if (sa.bus != sb.bus || sa.p_min != sb.p_min || sa.p_max != sb.p_max) return false;
  if (a.dgs.size() != b.dgs.size() || a.periods.size() != b.periods.size()) return false;
  for (size_t i = 0; i < a.dgs.size(); ++i) {
    const auto &x = a.dgs[i], &y = b.dgs[i];
    if (x.id != y.id || x.bus != y.bus || x.p_min != y.p_min || x.p_max != y.p_max ||
        x.cost != y.cost)
      return false;
  }
  for (size_t i = 0; i < a.periods.size(); ++i) {
    const auto &x = a.periods[i], &y = b.periods[i];
    if (x.hours != y.hours || x.market_price != y.market_price || x.demand != y.demand)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("bundled 3-bus parses and matches the builder") {
  auto parsed = model::parse_scenario(model::bundled_3bus_text(), "<3bus>");
  auto built = model::build_3bus();
  CHECK(same_scenario(parsed, built));

  CHECK(built.network.buses.size() == 3);
  CHECK(built.network.lines.size() == 2);
  CHECK(built.network.lines[0].z == doctest::Approx(1.236));
  CHECK(built.network.lines[1].z == doctest::Approx(1.144));
  CHECK(built.network.lines[0].p_max == doctest::Approx(1.0));
  CHECK(built.periods.size() == 1);
  CHECK(built.periods[0].hours == doctest::Approx(8760.0));
  CHECK(built.periods[0].market_price == doctest::Approx(60.0));
  double total = 0;
  for (double d : built.periods[0].demand) total += d;
  CHECK(total == doctest::Approx(0.6));  // 6 MW on the 10 MVA base
  CHECK(built.dgs.size() == 2);
  CHECK(built.dgs[0].bus == "2");
  CHECK(built.dgs[1].bus == "3");
  CHECK(built.dgs[0].cost == doctest::Approx(60.0));
}

TEST_CASE("bundled 34-bus file") {
  auto s = model::parse_scenario(model::bundled_34bus_text(), "<34bus>");
  CHECK(s.network.buses.size() == 34);
  CHECK(s.network.lines.size() == 33);
  CHECK(s.periods.size() == 5);
  CHECK(s.network.substation.p_max == doctest::Approx(10.0));
  CHECK(s.dgs[0].cost == doctest::Approx(60.0));
  // peak per-node demand at the loaded buses
  CHECK(s.periods[0].demand[2] == doctest::Approx(0.03125));
  double hours = 0;
  for (auto& p : s.periods) hours += p.hours;
  CHECK(hours == doctest::Approx(8760.0));

  // shipped data files carry the same text as the embedded constants
  CHECK(read_file(std::string(DGPRICER_DATA_DIR) + "/34bus.txt") == model::bundled_34bus_text());
  CHECK(read_file(std::string(DGPRICER_DATA_DIR) + "/3bus.txt") == model::bundled_3bus_text());
}

TEST_CASE("serialize round trip") {
  for (const auto& name : model::bundled_scenario_names()) {
    auto s = model::bundled_scenario(name);
    auto back = model::parse_scenario(model::serialize(s), "<roundtrip:" + name + ">");
    CHECK(same_scenario(s, back));
  }
}

TEST_CASE("validation failures name the invariant") {
  auto s = model::build_3bus();
  s.network.lines[0].z = 0.0;
  CHECK_THROWS_WITH_AS(model::validate(s), doctest::Contains("impedance must be positive"),
                       model::ValidationError);

  s = model::build_3bus();
  s.network.buses[1].v_min = 1.2;
  CHECK_THROWS_WITH_AS(model::validate(s), doctest::Contains("v_min < v_max"),
                       model::ValidationError);

  s = model::build_3bus();
  s.dgs[0].bus = "99";
  CHECK_THROWS_WITH_AS(model::validate(s), doctest::Contains("unknown bus"),
                       model::ValidationError);

  s = model::build_3bus();
  s.periods.clear();
  CHECK_THROWS_AS(model::validate(s), model::ValidationError);

  s = model::build_3bus();
  s.periods[0].demand = {0.2, 0.2};
  CHECK_THROWS_AS(model::validate(s), model::ValidationError);
}

TEST_CASE("parse errors carry file and line") {
  std::string text = "[bus]\n1 0.9 banana\n";
  try {
    model::parse_scenario(text, "f.txt");
    FAIL("expected ParseError");
  } catch (const model::ParseError& e) {
    CHECK(std::string(e.what()).find("f.txt:2") != std::string::npos);
  }
  CHECK_THROWS_AS(model::parse_scenario("x 1 2\n", "f.txt"), model::ParseError);
  CHECK_THROWS_AS(model::parse_scenario("[frobnicate]\n", "f.txt"), model::ParseError);
}

TEST_CASE("bundled lookup rejects unknown names") {
  CHECK_THROWS_AS(model::bundled_scenario("5bus"), model::ValidationError);
}

TEST_CASE("demand level reconstruction") {
  auto net = model::parse_scenario(model::bundled_34bus_text(), "<34bus>").network;
  const double hours = 1752.0;

  // zero payment -> zero demand
  auto zero = model::reconstruct_demand_levels({0.0}, {41.0}, net, hours);
  CHECK(zero[0] == doctest::Approx(0.0));

  // bisection oracle: returned demand plus model loss equals the implied supply
  std::vector<double> pay = {432028.0, 1545991.0};
  std::vector<double> price = {41.0, 80.0};
  auto lv = model::reconstruct_demand_levels(pay, price, net, hours);
  const int K = static_cast<int>(net.buses.size());
  const int sb = net.substation_index();
  for (size_t t = 0; t < lv.size(); ++t) {
    double implied_supply = pay[t] / (price[t] * hours);  // MW
    Eigen::VectorXd load = Eigen::VectorXd::Zero(K);
    for (int k = 0; k < K; ++k)
      if (k != sb) load[k] = lv[t] / net.base_mva / (K - 1);
    auto sol = pf::solve_network(net, load, net.buses[sb].v_max);
    REQUIRE(sol.converged);
    CHECK(sol.p_sb * net.base_mva == doctest::Approx(implied_supply).epsilon(1e-8));
    CHECK(lv[t] == doctest::Approx(implied_supply - sol.loss * net.base_mva).epsilon(1e-8));
  }
  // supply level 432028/(41*1752) ~ 6.015 MW
  CHECK(pay[0] / (price[0] * hours) == doctest::Approx(6.015).epsilon(1e-3));
  // peak: supply ~ 11.03 MW, demand ~ 10 MW when loss ~ 1 MW
  CHECK(pay[1] / (price[1] * hours) == doctest::Approx(11.03).epsilon(1e-3));
  CHECK(lv[1] == doctest::Approx(10.0).epsilon(0.02));

  // infeasible: implied supply above the substation limit
  CHECK_THROWS_AS(
      model::reconstruct_demand_levels({80.0 * hours * 150.0}, {80.0}, net, hours),
      model::ValidationError);
}
