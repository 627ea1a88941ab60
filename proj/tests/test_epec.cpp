#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "dgpricer/epec.hpp"

using namespace dgp;
using Eigen::VectorXd;

namespace {

model::Scenario symmetric_star() {
  // two identical units at electrically symmetric buses
  model::Scenario s;
  s.label = "symmetric star";
  s.network.base_mva = 10.0;
  s.network.buses = {{"1", 0.9, 1.05, {}}, {"2", 0.9, 1.05, {}}, {"3", 0.9, 1.05, {}}};
  s.network.lines = {{"1", "2", 0.03, 2.0}, {"1", "3", 0.03, 2.0}};
  s.network.substation = {"1", 0.0, 4.0};
  s.dgs = {{"DG1", "2", 0.0, 1.0, 60.0}, {"DG2", "3", 0.0, 1.0, 60.0}};
  model::Period p;
  p.index = 0;
  p.hours = 8760.0;
  p.market_price = 60.0;
  p.demand = {0.1, 0.25, 0.25};
  s.periods = {p};
  model::validate(s);
  return s;
}

}  // namespace

TEST_CASE("mpec shape: slack partition and variable count") {
  auto s = model::build_3bus();
  epec::EpecOptions opts;
  opts.lower.include_line_limits = false;  // the worked simplification
  auto sys = epec::build_mpec(s, 0, {{0.0, 61.0}}, opts);
  // 12 slack entries: 3+3 voltage, 2+2 unit, 1+1 substation
  CHECK(sys.comp_pairs.size() == 12);
  CHECK(sys.layout.m_in == 12);
  // variables: lower-level primal + duals + slacks + 1 price
  int expect = sys.layout.n_w + sys.layout.n_eq + 2 * sys.layout.m_in + 1;
  CHECK(sys.model.num_vars() == expect);
  CHECK(sys.model.num_vars() == 34);
  // with line rows included
  auto sys2 = epec::build_mpec(s, 0, {{0.0, 61.0}});
  CHECK(sys2.layout.m_in == 16);
}

TEST_CASE("mpec equalities vanish at a follower optimum") {
  auto s = model::build_3bus();
  disco::ContractOffer offer{{60.3, 60.5}};
  auto dsol = disco::solve_disco(s, offer);
  REQUIRE(dsol.status == nlp::Status::kSolved);

  auto sys = epec::build_mpec(s, 0, offer);
  VectorXd x = VectorXd::Zero(sys.model.num_vars());
  x[sys.alpha_ids[0]] = offer.alpha[0];
  const auto& lay = sys.layout;
  for (int t = 0; t < lay.T; ++t) {
    for (int k = 0; k < lay.K; ++k) x[sys.w_ids[t][lay.v_of(k)]] = dsol.dispatch.v.v(k, t);
    for (int i = 0; i < lay.I; ++i) x[sys.w_ids[t][lay.pdg_of(i)]] = dsol.dispatch.p_dg(i, t);
    x[sys.w_ids[t][lay.psb_of()]] = dsol.dispatch.p_sb[t] / s.network.base_mva;
    for (int r = 0; r < lay.n_eq; ++r) x[sys.lam_ids[t][r]] = dsol.duals.lambda(r, t);
    for (int j = 0; j < lay.m_in; ++j) x[sys.mu_ids[t][j]] = dsol.duals.mu(j, t);
  }
  // slacks from the inequality values -> every h_e and g-s row is satisfied
  auto he_gs = sys.model.eval_eq(x);
  int he_rows = sys.he_rows;
  for (int r = 0; r < he_rows; ++r) CHECK(std::abs(he_gs[r]) < 5e-7);
  for (int t = 0; t < lay.T; ++t) {
    disco::PeriodVars pv;
    pv.w = sys.w_ids[t];
    auto gs = disco::inequality_rows(s, lay, t, pv);
    for (int j = 0; j < lay.m_in; ++j) x[sys.s_ids[t][j]] = std::max(gs[j].value(x), 0.0);
  }
  he_gs = sys.model.eval_eq(x);
  for (int r = 0; r < he_gs.size(); ++r) CHECK(std::abs(he_gs[r]) < 5e-7);
  // componentwise complementarity holds at the follower optimum
  for (auto [sv, mv] : sys.comp_pairs) CHECK(std::abs(x[sv] * x[mv]) < 1e-6);
}

TEST_CASE("epec nlp: documented size of the worked simplification") {
  auto s = model::build_3bus();
  epec::EpecOptions opts;
  opts.lower.include_line_limits = false;
  auto en = epec::build_epec_nlp(s, opts);
  // alpha 2 + w 6 + lam 3 + mu 12 + s 12 + 2 players * (9 + 12*3 + 1)
  CHECK(en.model.num_vars() == 127);
  // h_e 9 + (g-s) 12 + 2 players * (1 + 12 + 9 + 12)
  CHECK(en.model.num_eq() == 89);
  CHECK(en.model.num_ineq() == 0);  // sign conditions are variable bounds
}

TEST_CASE("penalty objective and gradient") {
  auto s = model::build_3bus();
  auto en = epec::build_epec_nlp(s);
  auto p = en.model.build();

  // objective is zero whenever all complementarity pairs vanish
  VectorXd x = VectorXd::Zero(p.n);
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < p.n; ++i) x[i] = u(rng);
  const auto& ix = en.index;
  for (int t = 0; t < ix.layout.T; ++t)
    for (int j = 0; j < ix.layout.m_in; ++j) x[ix.s[t][j]] = 0.0;  // s = 0 kills every product
  for (size_t pl = 0; pl < ix.owners.size(); ++pl)
    for (int t = 0; t < ix.layout.T; ++t)
      for (int j = 0; j < ix.layout.m_in; ++j) x[ix.psi[pl][t * ix.layout.m_in + j]] = 0.0;
  CHECK(p.objective(x) == doctest::Approx(0.0));

  // gradient of the penalty matches finite differences at a random point
  for (int i = 0; i < p.n; ++i) x[i] = u(rng);
  VectorXd g(p.n);
  p.gradient(x, g);
  const double h = 1e-6;
  std::uniform_int_distribution<int> pick(0, p.n - 1);
  for (int trial = 0; trial < 80; ++trial) {
    int i = pick(rng);
    VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    CHECK(g[i] == doctest::Approx((p.objective(xp) - p.objective(xm)) / (2 * h)).epsilon(1e-5));
  }

  // stationarity blocks match finite differences too
  VectorXd c0(p.m_eq), cp(p.m_eq), cm(p.m_eq);
  p.eval_eq(x, c0);
  VectorXd jv(static_cast<Eigen::Index>(p.jac_eq_pattern.size()));
  p.jac_eq_values(x, jv);
  std::uniform_int_distribution<int> pick_entry(0, static_cast<int>(p.jac_eq_pattern.size()) - 1);
  for (int trial = 0; trial < 120; ++trial) {
    int e = pick_entry(rng);
    auto [r, c] = p.jac_eq_pattern[e];
    VectorXd xp = x, xm = x;
    xp[c] += h;
    xm[c] -= h;
    p.eval_eq(xp, cp);
    p.eval_eq(xm, cm);
    double fd = (cp[r] - cm[r]) / (2 * h);
    // entries sharing (r, c) accumulate; sum duplicates
    double val = 0.0;
    for (size_t k = 0; k < p.jac_eq_pattern.size(); ++k)
      if (p.jac_eq_pattern[k] == p.jac_eq_pattern[e]) val += jv[k];
    CHECK(val == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("3-bus equilibrium: prices, dispatch, and acceptance") {
  auto s = model::build_3bus();
  epec::EpecOptions opts;
  opts.multistart = 4;
  auto e = epec::solve_epec(s, opts);
  REQUIRE(e.accepted);
  CHECK(e.c_pen <= 1e-6);
  CHECK(e.max_product <= 1e-8);

  // both units fully contracted all year
  CHECK(e.dispatch.p_dg(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(e.dispatch.p_dg(1, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(e.energy_mwh[0] == doctest::Approx(8760.0).epsilon(1e-6));

  // ordering and the published targets under the documented impedance scale
  CHECK(e.alpha.alpha[0] >= 60.0);
  CHECK(e.alpha.alpha[0] < e.alpha.alpha[1]);
  CHECK(e.alpha.alpha[0] == doctest::Approx(60.68).epsilon(0.5 / 60.68));
  CHECK(e.alpha.alpha[1] == doctest::Approx(61.01).epsilon(0.5 / 61.01));

  // company pays less than the no-unit baseline
  auto emb = epec::embedded_disco(s, e);
  auto no_dg = s;
  no_dg.dgs.clear();
  auto base = disco::solve_disco(no_dg, {{}});
  CHECK(emb.objective_eur < base.objective_eur);

  // embedded block passes the dispatch optimality check at the equilibrium
  auto fam = disco::kkt_check(s, e.alpha, emb);
  CHECK(fam.max() < 1e-6);
}

TEST_CASE("degenerate fleet: zero-capacity unit earns nothing") {
  auto s = model::build_3bus();
  s.dgs = {{"DG0", "3", 0.0, 0.0, 60.0}};
  epec::EpecOptions opts;
  opts.multistart = 2;
  auto e = epec::solve_epec(s, opts);
  REQUIRE(e.accepted);
  CHECK(std::abs(e.dispatch.p_dg(0, 0)) < 1e-8);
  CHECK(std::abs(e.profit_eur[0]) < 1e-4);
}

TEST_CASE("symmetric units obtain equal prices") {
  auto s = symmetric_star();
  epec::EpecOptions opts;
  opts.multistart = 4;
  auto e = epec::solve_epec(s, opts);
  REQUIRE(e.accepted);
  CHECK(std::abs(e.alpha.alpha[0] - e.alpha.alpha[1]) < 1e-4);
}

TEST_CASE("hour scaling leaves prices fixed and scales profits") {
  auto s = model::bundled_scenario("6bus");
  epec::EpecOptions opts;
  opts.multistart = 3;
  auto e1 = epec::solve_epec(s, opts);
  REQUIRE(e1.accepted);
  auto s2 = s;
  for (auto& p : s2.periods) p.hours *= 2.0;
  auto e2 = epec::solve_epec(s2, opts);
  REQUIRE(e2.accepted);
  for (int i = 0; i < 2; ++i) {
    CHECK(e1.alpha.alpha[i] == doctest::Approx(e2.alpha.alpha[i]).epsilon(1e-6));
    CHECK(2.0 * e1.profit_eur[i] == doctest::Approx(e2.profit_eur[i]).epsilon(1e-5));
  }
}

TEST_CASE("profit arithmetic") {
  auto s = model::bundled_scenario("34bus-case1");
  disco::Dispatch d;
  d.p_dg.setZero(2, 5);
  d.p_dg(0, 0) = d.p_dg(0, 1) = 1.0;  // dispatched in the two dear periods
  d.p_sb.setZero(5);
  auto pr = epec::profit(s, {{79.53, 80.85}}, d);
  CHECK(pr[0] == doctest::Approx((79.53 - 60.0) * 3504.0).epsilon(1e-12));
  CHECK(pr[1] == doctest::Approx(0.0));
}

TEST_CASE("single unit: game and single owner coincide") {
  auto s = model::build_3bus();
  s.dgs = {{"DG", "3", 0.0, 1.0, 60.0}};
  epec::EpecOptions opts;
  opts.multistart = 3;
  auto game = epec::solve_epec(s, opts);
  auto owner = epec::solve_single_owner(s, opts);
  REQUIRE(game.accepted);
  REQUIRE(owner.accepted);
  CHECK(game.alpha.alpha[0] == doctest::Approx(owner.alpha.alpha[0]).epsilon(2e-3));
  CHECK(game.profit_eur[0] == doctest::Approx(owner.profit_eur[0]).epsilon(5e-3));
}

TEST_CASE("single owner beats competition on total profit and company payment") {
  auto s = symmetric_star();
  epec::EpecOptions opts;
  opts.multistart = 4;
  auto game = epec::solve_epec(s, opts);
  auto owner = epec::solve_single_owner(s, opts);
  REQUIRE(game.accepted);
  REQUIRE(owner.accepted);
  double game_total = game.profit_eur[0] + game.profit_eur[1];
  double owner_total = owner.profit_eur[0] + owner.profit_eur[1];
  CHECK(owner_total >= game_total - 1e-3 * std::abs(game_total));
  auto pay_game = epec::embedded_disco(s, game).objective_eur;
  auto pay_owner = epec::embedded_disco(s, owner).objective_eur;
  CHECK(pay_owner >= pay_game - 1e-6 * pay_game);
}
