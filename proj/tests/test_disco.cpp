#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "dgpricer/disco.hpp"

using namespace dgp;
using Eigen::VectorXd;

namespace {

model::Scenario single_dg_3bus(double alpha_cost = 60.0) {
  auto s = model::build_3bus();
  s.dgs = {{"DG", "3", 0.0, 1.0, alpha_cost}};
  return s;
}

// Exhaustive dispatch oracle: cost of serving the 3-bus system when the single
// unit at bus 3 produces exactly p_mw, voltages optimized by the network solve
// at the upper voltage bound.
double oracle_cost(const model::Scenario& s, double alpha, double p_mw) {
  const auto& net = s.network;
  Eigen::VectorXd load(3);
  for (int k = 0; k < 3; ++k) load[k] = s.periods[0].demand[k];
  load[2] -= p_mw / net.base_mva;
  auto sol = pf::solve_network(net, load, 1.05);
  REQUIRE(sol.converged);
  double hours = s.periods[0].hours;
  return hours * (s.periods[0].market_price * sol.p_sb * net.base_mva + alpha * p_mw);
}

}  // namespace

TEST_CASE("build_opf: problem shape for the 3-bus system") {
  auto s = model::build_3bus();
  disco::ContractOffer offer{{60.0, 60.0}};
  auto p = disco::build_opf(s, offer);
  CHECK(p.n == 6);       // 3 V + 2 Pdg + Psb
  CHECK(p.m_eq == 3);    // one balance row per bus
  CHECK(p.m_in == 16);   // 2*2 line + 2*3 voltage + 2*2 DG + 2 substation

  disco::LowerLevelOptions no_lines;
  no_lines.include_line_limits = false;
  auto p2 = disco::build_opf(s, offer, no_lines);
  CHECK(p2.m_in == 12);
}

TEST_CASE("build_opf: periods are block diagonal") {
  auto s = model::bundled_scenario("6bus");
  disco::ContractOffer offer{{60.0, 60.0}};
  auto lay = disco::make_layout(s);
  auto p = disco::build_opf(s, offer);
  for (auto [r, c] : p.jac_eq_pattern) CHECK(r / lay.n_eq == c / lay.n_w);
  for (auto [r, c] : p.jac_in_pattern) CHECK(r / lay.m_in == c / lay.n_w);
}

TEST_CASE("stationarity rows equal finite differences of the Lagrangian") {
  auto s = model::bundled_scenario("6bus");
  auto lay = disco::make_layout(s);
  const int t = 1;
  const double rho = s.periods[t].hours / s.total_hours();
  std::vector<double> alpha = {63.0, 58.5};

  disco::PeriodVars pv;
  int n = lay.n_w + lay.n_eq + lay.m_in;
  for (int q = 0; q < lay.n_w; ++q) pv.w.push_back(q);
  for (int r = 0; r < lay.n_eq; ++r) pv.lam.push_back(lay.n_w + r);
  for (int j = 0; j < lay.m_in; ++j) pv.mu.push_back(lay.n_w + lay.n_eq + j);

  auto aref = disco::AlphaRef::fixed(alpha);
  auto stat = disco::stationarity_rows(s, lay, t, pv, aref, rho);
  auto eqs = disco::equality_rows(s, lay, t, pv);
  auto gs = disco::inequality_rows(s, lay, t, pv);
  auto obj = disco::objective_term(s, lay, t, pv, aref, rho);

  std::mt19937 rng(5);
  std::uniform_real_distribution<double> uw(0.95, 1.05), ud(-2.0, 2.0);
  VectorXd x(n);
  for (int k = 0; k < lay.K; ++k) x[k] = uw(rng);
  for (int i = 0; i < lay.I; ++i) x[lay.pdg_of(i)] = 0.3 + 0.1 * i;
  x[lay.psb_of()] = 0.7;
  for (int r = lay.n_w; r < n; ++r) x[r] = ud(rng);

  auto lagrangian = [&](const VectorXd& xx) {
    double L = obj.value(xx);
    for (size_t r = 0; r < eqs.size(); ++r) L -= xx[pv.lam[r]] * eqs[r].value(xx);
    for (size_t j = 0; j < gs.size(); ++j) L -= xx[pv.mu[j]] * gs[j].value(xx);
    return L;
  };
  const double h = 1e-5;
  for (int q = 0; q < lay.n_w; ++q) {
    VectorXd xp = x, xm = x;
    xp[q] += h;
    xm[q] -= h;
    double fd = (lagrangian(xp) - lagrangian(xm)) / (2 * h);
    CHECK(stat[q].value(x) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("zero demand gives zero dispatch and zero cost") {
  auto s = model::build_3bus();
  for (auto& d : s.periods[0].demand) d = 0.0;
  auto sol = disco::solve_disco(s, {{60.0, 60.0}});
  REQUIRE(sol.status == nlp::Status::kSolved);
  CHECK(sol.dispatch.p_dg.cwiseAbs().maxCoeff() < 1e-7);
  CHECK(std::abs(sol.dispatch.p_sb[0]) < 1e-6);
  CHECK(std::abs(sol.objective_eur) < 1.0);
}

TEST_CASE("no-DG baseline reproduces the published cost identity") {
  auto s = model::build_3bus();
  s.dgs.clear();
  auto sol = disco::solve_disco(s, {{}});
  REQUIRE(sol.status == nlp::Status::kSolved);
  double supply_mw = sol.dispatch.p_sb[0];
  // cost identity: 60 EUR/MWh * supply * 8760 h
  CHECK(sol.objective_eur == doctest::Approx(60.0 * supply_mw * 8760.0).epsilon(1e-10));
  // supply = 6 MW demand + ~0.057 MW loss
  CHECK(supply_mw == doctest::Approx(6.057).epsilon(2e-3));
  CHECK(sol.objective_eur == doctest::Approx(3183559.2).epsilon(2e-3));
  // conservation: supply - demand = loss
  double loss_mw = sol.annual_loss_mwh / 8760.0;
  CHECK(supply_mw - 6.0 == doctest::Approx(loss_mw).epsilon(1e-6));
}

TEST_CASE("dispatch matches the exhaustive grid oracle") {
  // marginal loss saving at bus 3 makes a premium price worth paying up to a
  // threshold; the grid oracle and the solver must agree on both sides of it
  for (double alpha : {61.0, 62.5}) {
    auto s = single_dg_3bus();
    auto sol = disco::solve_disco(s, {{alpha}});
    REQUIRE(sol.status == nlp::Status::kSolved);

    double best_p = 0.0, best_cost = 1e300;
    for (int g = 0; g <= 10; ++g) {
      double p = 0.1 * g;
      double c = oracle_cost(s, alpha, p);
      if (c < best_cost) {
        best_cost = c;
        best_p = p;
      }
    }
    CHECK(sol.dispatch.p_dg(0, 0) == doctest::Approx(best_p).epsilon(1e-4));
    CHECK(sol.objective_eur <= best_cost + 1.0);
    if (alpha == 61.0) CHECK(sol.dispatch.p_dg(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
    if (alpha == 62.5) CHECK(std::abs(sol.dispatch.p_dg(0, 0)) < 1e-6);
  }
}

TEST_CASE("kkt_check: families vanish at the solution, perturbation is localized") {
  auto s = model::build_3bus();
  disco::ContractOffer offer{{60.0, 60.0}};
  auto sol = disco::solve_disco(s, offer);
  REQUIRE(sol.status == nlp::Status::kSolved);
  auto fam = disco::kkt_check(s, offer, sol);
  CHECK(fam.max() < 5e-8);

  auto bumped = sol;
  bumped.duals.lambda(0, 0) += 0.1;
  auto fam2 = disco::kkt_check(s, offer, bumped);
  CHECK(fam2.stationarity_v > 1e-3);  // lambda enters the voltage rows
  CHECK(fam2.balance == doctest::Approx(fam.balance));
  CHECK(fam2.complementarity == doctest::Approx(fam.complementarity));
}

TEST_CASE("period separability: monolithic equals per-period") {
  auto s = model::bundled_scenario("6bus");
  disco::ContractOffer offer{{58.0, 60.0}};
  disco::DiscoOptions per, mono;
  per.per_period = true;
  mono.per_period = false;
  auto a = disco::solve_disco(s, offer, per);
  auto b = disco::solve_disco(s, offer, mono);
  REQUIRE(a.status == nlp::Status::kSolved);
  REQUIRE(b.status == nlp::Status::kSolved);
  CHECK((a.dispatch.p_dg - b.dispatch.p_dg).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((a.dispatch.p_sb - b.dispatch.p_sb).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("per-period conservation and dual signs") {
  auto s = model::bundled_scenario("6bus");
  disco::ContractOffer offer{{56.0, 57.0}};
  auto sol = disco::solve_disco(s, offer);
  REQUIRE(sol.status == nlp::Status::kSolved);
  for (int t = 0; t < 2; ++t) {
    double demand_mw = 0.0;
    for (double d : s.periods[t].demand) demand_mw += d * s.network.base_mva;
    double gen = sol.dispatch.p_sb[t] + sol.dispatch.p_dg.col(t).sum();
    double loss_mw = sol.loss_mwh[t] / s.periods[t].hours;
    CHECK(gen - demand_mw == doctest::Approx(loss_mw).epsilon(1e-6));
  }
  CHECK(sol.duals.mu.minCoeff() > -1e-10);
}

TEST_CASE("raising one price never increases that unit's energy") {
  auto s = model::build_3bus();
  double prev_energy = 1e30;
  for (double a1 : {60.0, 60.4, 60.8, 61.2, 61.6, 62.0}) {
    auto sol = disco::solve_disco(s, {{a1, 60.5}});
    REQUIRE(sol.status == nlp::Status::kSolved);
    CHECK(sol.dg_energy_mwh[0] <= prev_energy + 1e-6);
    prev_energy = sol.dg_energy_mwh[0];
  }
}

TEST_CASE("payment report identities") {
  auto s = model::build_3bus();
  disco::ContractOffer offer{{60.0, 60.0}};
  auto sol = disco::solve_disco(s, offer);
  auto rep = disco::payment_report(s, sol);
  double sum = 0.0;
  for (auto& r : rep.rows) sum += r.payment_eur;
  CHECK(sum == doctest::Approx(sol.objective_eur).epsilon(1e-12));
  double msum = 0.0;
  for (auto& r : rep.market_rows) msum += r.payment_eur;
  CHECK(msum == doctest::Approx(sol.market_payment_eur).epsilon(1e-12));
}

TEST_CASE("infeasible period names the period") {
  auto s = model::build_3bus();
  s.periods[0].demand = {2.0, 2.0, 2.0};  // 60 MW against a 40 MW import limit
  try {
    disco::solve_disco(s, {{60.0, 60.0}});
    FAIL("expected SolveError");
  } catch (const disco::SolveError& e) {
    CHECK(std::string(e.what()).find("period 0") != std::string::npos);
  }
}

TEST_CASE("pinned voltage is honored") {
  auto s = model::build_3bus();
  auto free_sol = disco::solve_disco(s, {{60.0, 60.0}});
  s.network.buses[0].v_pin = 1.0;
  auto pinned = disco::solve_disco(s, {{60.0, 60.0}});
  REQUIRE(pinned.status == nlp::Status::kSolved);
  CHECK(pinned.dispatch.v.v(0, 0) == doctest::Approx(1.0).epsilon(1e-8));
  // pinning below the upper bound can only increase loss
  CHECK(pinned.annual_loss_mwh >= free_sol.annual_loss_mwh - 1e-9);
}
