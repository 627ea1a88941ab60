#include "dgpricer/epec.hpp"
#include <cstdlib>
#include <cstdio>

#include <algorithm>
#include <cmath>
#include <random>

#include "parallel.hpp"

namespace dgp::epec {

using disco::AlphaRef;
using disco::Layout;
using disco::PeriodVars;
using Eigen::VectorXd;

namespace {

double cap_for(const model::Scenario& s, const EpecOptions& opts) {
  if (opts.alpha_cap > 0) return opts.alpha_cap;
  double beta_max = 0.0;
  for (const auto& p : s.periods) beta_max = std::max(beta_max, p.market_price);
  return opts.alpha_cap_factor * std::max(beta_max, 1.0);
}

std::vector<double> weights(const model::Scenario& s) {
  std::vector<double> rho;
  const double H = s.total_hours();
  for (const auto& p : s.periods) rho.push_back(p.hours / H);
  return rho;
}

// Shared follower block: per-period primal, equality duals, inequality duals
// and slacks, plus the h_e and g - s rows. Both leaders' systems build on it.
struct FollowerBlock {
  std::vector<int> alpha_ids;  // one per DG; fixed rivals get id -1
  AlphaRef alpha;
  std::vector<std::vector<int>> w, lam, mu, s;
  std::vector<quad::QuadExpr> he_rows;  // T * n_he, emission order
  std::vector<quad::QuadExpr> g_rows;   // T * m, canonical order (without -s)
  int row_he = 0, row_gs = 0;
};

FollowerBlock add_follower(quad::QuadModel& m, const model::Scenario& s, const Layout& lay,
                           const std::vector<int>& free_dgs, const std::vector<double>& fixed,
                           double alpha_cap) {
  FollowerBlock fb;
  fb.alpha_ids.assign(lay.I, -1);
  std::vector<double> values = fixed;
  values.resize(lay.I, 0.0);
  for (int i : free_dgs) fb.alpha_ids[i] = m.add_var("alpha[" + std::to_string(i) + "]", 0.0, alpha_cap);
  AlphaRef ar;
  ar.ids = fb.alpha_ids;
  ar.values = values;
  fb.alpha = ar;

  auto rho = weights(s);
  for (int t = 0; t < lay.T; ++t) {
    std::string suf = "(" + std::to_string(t) + ")";
    std::vector<int> w, lam, mu, sl;
    for (int q = 0; q < lay.n_w; ++q)
      w.push_back(m.add_var(lay.w_name(q) + suf, -nlp::kInf, nlp::kInf));
    for (int r = 0; r < lay.n_eq; ++r)
      lam.push_back(m.add_var("lam[" + std::to_string(r) + "]" + suf, -nlp::kInf, nlp::kInf));
    for (int j = 0; j < lay.m_in; ++j)
      mu.push_back(m.add_var("mu[" + lay.ineq_name(j) + "]" + suf, 0.0, nlp::kInf));
    for (int j = 0; j < lay.m_in; ++j)
      sl.push_back(m.add_var("s[" + lay.ineq_name(j) + "]" + suf, 0.0, nlp::kInf));
    fb.w.push_back(w);
    fb.lam.push_back(lam);
    fb.mu.push_back(mu);
    fb.s.push_back(sl);
  }
  for (int t = 0; t < lay.T; ++t) {
    PeriodVars pv{fb.w[t], fb.lam[t], fb.mu[t]};
    auto stat = disco::stationarity_rows(s, lay, t, pv, fb.alpha, rho[t]);
    auto eqs = disco::equality_rows(s, lay, t, pv);
    for (auto& r : stat) fb.he_rows.push_back(std::move(r));
    for (auto& r : eqs) fb.he_rows.push_back(std::move(r));
    auto gs = disco::inequality_rows(s, lay, t, pv);
    for (auto& r : gs) fb.g_rows.push_back(std::move(r));
  }
  return fb;
}

void add_follower_rows(quad::QuadModel& m, const Layout& lay, FollowerBlock& fb) {
  fb.row_he = m.num_eq();
  for (size_t r = 0; r < fb.he_rows.size(); ++r)
    m.add_eq(fb.he_rows[r], "he[" + std::to_string(r) + "]");
  fb.row_gs = m.num_eq();
  for (int t = 0; t < lay.T; ++t)
    for (int j = 0; j < lay.m_in; ++j) {
      quad::QuadExpr row = fb.g_rows[t * lay.m_in + j];
      row.add_linear(fb.s[t][j], -1.0);
      m.add_eq(std::move(row), "gs[" + lay.ineq_name(j) + "(" + std::to_string(t) + ")]");
    }
}

// Scaled profit of a set of units: sum_t rho_t (alpha_i - c_i) Pdg_i.
quad::QuadExpr owners_profit(const model::Scenario& s, const Layout& lay,
                             const FollowerBlock& fb, const std::vector<int>& owners) {
  quad::QuadExpr f;
  auto rho = weights(s);
  for (int t = 0; t < lay.T; ++t) {
    PeriodVars pv{fb.w[t], {}, {}};
    for (int i : owners)
      f.add_scaled(disco::profit_term(s, lay, t, pv, fb.alpha, i, rho[t]), 1.0);
  }
  return f;
}

MpecSystem build_mpec_impl(const model::Scenario& s, const std::vector<int>& owners,
                           const std::vector<double>& rivals, const EpecOptions& opts) {
  model::validate(s);
  MpecSystem sys;
  sys.layout = disco::make_layout(s, opts.lower);
  sys.owners = owners;
  sys.rival_alpha = rivals;
  sys.weight_scale = s.total_hours();
  sys.alpha_cap = cap_for(s, opts);

  auto fb = add_follower(sys.model, s, sys.layout, owners, rivals, sys.alpha_cap);
  add_follower_rows(sys.model, sys.layout, fb);
  for (int i : owners) sys.alpha_ids.push_back(fb.alpha_ids[i]);
  sys.w_ids = fb.w;
  sys.lam_ids = fb.lam;
  sys.mu_ids = fb.mu;
  sys.s_ids = fb.s;
  for (int t = 0; t < sys.layout.T; ++t)
    for (int j = 0; j < sys.layout.m_in; ++j)
      sys.comp_pairs.push_back({fb.s[t][j], fb.mu[t][j]});
  sys.he_rows = static_cast<int>(fb.he_rows.size());
  sys.hin_rows = static_cast<int>(fb.g_rows.size());

  quad::QuadExpr obj;
  obj.add_scaled(owners_profit(s, sys.layout, fb, owners), -1.0);
  sys.model.set_objective(obj);
  return sys;
}

}  // namespace

MpecSystem build_mpec(const model::Scenario& s, int dg, const disco::ContractOffer& rivals,
                      const EpecOptions& opts) {
  std::vector<double> riv = rivals.alpha;
  riv.resize(s.dgs.size(), 0.0);
  return build_mpec_impl(s, {dg}, riv, opts);
}

MpecSystem build_single_owner_mpec(const model::Scenario& s, const EpecOptions& opts) {
  std::vector<int> owners(s.dgs.size());
  for (size_t i = 0; i < s.dgs.size(); ++i) owners[i] = static_cast<int>(i);
  return build_mpec_impl(s, owners, std::vector<double>(s.dgs.size(), 0.0), opts);
}

namespace {

// Fills the follower part of a start vector from a dispatch solve.
void fill_follower_start(VectorXd& x, const model::Scenario& s, const Layout& lay,
                         const std::vector<std::vector<int>>& w_ids,
                         const std::vector<std::vector<int>>& lam_ids,
                         const std::vector<std::vector<int>>& mu_ids,
                         const std::vector<std::vector<int>>& s_ids,
                         const disco::DiscoSolution& dsol) {
  for (int t = 0; t < lay.T; ++t) {
    for (int k = 0; k < lay.K; ++k) x[w_ids[t][lay.v_of(k)]] = dsol.dispatch.v.v(k, t);
    for (int i = 0; i < lay.I; ++i) x[w_ids[t][lay.pdg_of(i)]] = dsol.dispatch.p_dg(i, t);
    x[w_ids[t][lay.psb_of()]] = dsol.dispatch.p_sb[t] / s.network.base_mva;
    for (int r = 0; r < lay.n_eq; ++r) x[lam_ids[t][r]] = dsol.duals.lambda(r, t);
    for (int j = 0; j < lay.m_in; ++j) x[mu_ids[t][j]] = std::max(0.0, dsol.duals.mu(j, t));
  }
  // slacks at the inequality values
  for (int t = 0; t < lay.T; ++t) {
    PeriodVars pv;
    pv.w = w_ids[t];
    // evaluate g at the filled point: reuse the emitters on the big vector
    auto gs = disco::inequality_rows(s, lay, t, pv);
    for (int j = 0; j < lay.m_in; ++j) x[s_ids[t][j]] = std::max(gs[j].value(x), 0.0);
  }
}

}  // namespace

MpecSolveResult solve_mpec_direct(const model::Scenario& s, const MpecSystem& sys,
                                  const disco::ContractOffer& warm_offer,
                                  const EpecOptions& opts) {
  MpecSolveResult out;
  disco::DiscoOptions dopt;
  dopt.lower = opts.lower;
  disco::DiscoSolution dsol;
  try {
    dsol = disco::solve_disco(s, warm_offer, dopt);
  } catch (const disco::SolveError&) {
    return out;
  }

  VectorXd x = VectorXd::Zero(sys.model.num_vars());
  for (size_t k = 0; k < sys.owners.size(); ++k)
    x[sys.alpha_ids[k]] = warm_offer.alpha[sys.owners[k]];
  fill_follower_start(x, s, sys.layout, sys.w_ids, sys.lam_ids, sys.mu_ids, sys.s_ids, dsol);

  // Relaxation multipliers grow as the complementarity cap shrinks, so each
  // rung is solved to a tolerance proportional to its cap; usable max_iter
  // iterates still warm-start the next rung. Success is judged at the bottom
  // on feasibility, the residual complementarity, and dual-scaled
  // stationarity.
  nlp::Options no = opts.nlp;
  no.polish = false;
  no.max_iter = std::min(no.max_iter, 400);
  double eps = 1e-2;
  bool first = true;
  nlp::Solution sol;
  for (; eps >= 0.99e-10; eps *= 0.1) {
    quad::QuadModel m = sys.model;
    quad::QuadExpr relax(eps);
    for (auto [sv, mv] : sys.comp_pairs) relax.add_quad(sv, mv, -1.0);
    m.add_ineq(std::move(relax), "comp_relax");
    auto p = m.build();
    no.mu0 = first ? 0.1 : std::max(1e-6, eps);
    no.bound_push = first ? 1e-2 : 1e-6;
    no.tol = std::max(opts.nlp.tol, std::min(1e-2 * eps, 1e-6));
    sol = nlp::solve(p, no, x);
    bool usable = sol.status == nlp::Status::kSolved ||
                  (sol.status == nlp::Status::kMaxIter && sol.kkt.feasibility <= 1e-6);
    if (!usable && first) {
      nlp::Options retry = no;
      retry.mu0 = 0.1;
      retry.bound_push = 1e-2;
      sol = nlp::solve(p, retry, x);
      usable = sol.status == nlp::Status::kSolved;
    }
    if (!usable) {
      out.last = sol;
      out.final_epsilon = eps;
      return out;
    }
    x = sol.x;
    first = false;
  }
  out.final_epsilon = eps * 10.0;
  out.last = sol;

  // Piece polish: freeze the complementarity pattern the ladder identified and
  // re-solve that smooth branch to full tolerance. Pinning goes through
  // equality rows (not zero-width bounds) so the barrier stays well defined.
  {
    quad::QuadModel pm = sys.model;
    VectorXd xp = sol.x;
    for (auto [sv, mv] : sys.comp_pairs) {
      int pin = (sol.x[sv] <= sol.x[mv]) ? sv : mv;
      pm.set_bounds(pin, -nlp::kInf, nlp::kInf);
      quad::QuadExpr row;
      row.add_linear(pin, 1.0);
      pm.add_eq(std::move(row), "pin[" + std::to_string(pin) + "]");
      xp[pin] = 0.0;
    }
    nlp::Options po = opts.nlp;
    po.polish = false;
    po.max_iter = 300;
    po.mu0 = 1e-4;
    po.bound_push = 1e-8;
    auto piece = nlp::solve(pm.build(), po, xp);
    if (std::getenv("DGP_EPEC_DEBUG"))
      fprintf(stderr, "piece: status=%s iters=%d obj=%.9e vs ladder %.9e stat=%.2e feas=%.2e\n",
              nlp::status_name(piece.status), piece.iters, piece.objective, sol.objective,
              piece.kkt.stationarity, piece.kkt.feasibility);
    if (piece.status == nlp::Status::kSolved) {
      // Keep the branch solution unless it loses real profit. The relaxed
      // ladder point enjoys an O(dual * eps) objective advantage over every
      // exactly-complementary point, so allow that much slack.
      if (piece.objective <= sol.objective + std::max(1e-6, 1e-5 * std::abs(sol.objective))) {
        out.ok = true;
        out.last = piece;
        for (int a : sys.alpha_ids) out.alpha.push_back(piece.x[a]);
        out.profit_eur = -piece.objective * sys.weight_scale;
        return out;
      }
    }
  }

  double dual_scale =
      1.0 + std::max(sol.lambda_eq.size() ? sol.lambda_eq.lpNorm<Eigen::Infinity>() : 0.0,
                     sol.mu_ineq.size() ? sol.mu_ineq.lpNorm<Eigen::Infinity>() : 0.0);
  double resid_comp = 0.0;
  for (auto [sv, mv] : sys.comp_pairs)
    resid_comp = std::max(resid_comp, std::abs(sol.x[sv] * sol.x[mv]));
  out.ok = sol.kkt.feasibility <= 1e-6 && resid_comp <= 1e-8 &&
           sol.kkt.stationarity / dual_scale <= 1e-4;
  for (int a : sys.alpha_ids) out.alpha.push_back(sol.x[a]);
  out.profit_eur = -sol.objective * sys.weight_scale;
  return out;
}

// ---------------------------------------------------------------------------
// penalty program

namespace {

EpecNlp build_penalty(const model::Scenario& s, const EpecOptions& opts,
                      const std::vector<std::vector<int>>& owners) {
  model::validate(s);
  EpecNlp nlp_out;
  auto& m = nlp_out.model;
  auto& ix = nlp_out.index;
  ix.layout = disco::make_layout(s, opts.lower);
  const Layout& lay = ix.layout;
  ix.owners = owners;
  nlp_out.alpha_cap = cap_for(s, opts);
  const int P = static_cast<int>(owners.size());

  std::vector<int> all_dgs;
  for (const auto& set : owners) all_dgs.insert(all_dgs.end(), set.begin(), set.end());
  auto fb = add_follower(m, s, lay, all_dgs, std::vector<double>(lay.I, 0.0), nlp_out.alpha_cap);
  ix.alpha = fb.alpha_ids;
  ix.w = fb.w;
  ix.lam = fb.lam;
  ix.mu = fb.mu;
  ix.s = fb.s;

  for (int p = 0; p < P; ++p) {
    std::vector<int> mb, mun, sg, ps;
    for (int t = 0; t < lay.T; ++t) {
      std::string suf = "[" + std::to_string(p) + "](" + std::to_string(t) + ")";
      for (int r = 0; r < lay.n_he; ++r)
        mb.push_back(m.add_var("mu_bar" + suf + std::to_string(r), -nlp::kInf, nlp::kInf));
      for (int j = 0; j < lay.m_in; ++j)
        mun.push_back(m.add_var("mu_under" + suf + std::to_string(j), -nlp::kInf, nlp::kInf));
      for (int j = 0; j < lay.m_in; ++j)
        sg.push_back(m.add_var("sigma" + suf + std::to_string(j), 0.0, nlp::kInf));
      for (int j = 0; j < lay.m_in; ++j)
        ps.push_back(m.add_var("psi" + suf + std::to_string(j), 0.0, nlp::kInf));
    }
    std::vector<int> ph;
    for (int t = 0; t < lay.T; ++t)
      for (int j = 0; j < lay.m_in; ++j)
        ph.push_back(m.add_var("phi[" + std::to_string(p) + "](" + std::to_string(t) + ")" +
                                   std::to_string(j),
                               0.0, nlp::kInf));
    ix.mu_bar.push_back(mb);
    ix.mu_under.push_back(mun);
    ix.sigma.push_back(sg);
    ix.psi.push_back(ps);
    ix.phi.push_back(ph);
  }

  add_follower_rows(m, lay, fb);
  ix.row_he = fb.row_he;
  ix.row_gs = fb.row_gs;

  const int n_total = m.num_vars();
  for (int p = 0; p < P; ++p) {
    quad::QuadExpr fp = owners_profit(s, lay, fb, owners[p]);

    std::vector<quad::QuadExpr> acc(n_total);
    quad::accumulate_jtv(fb.he_rows, ix.mu_bar[p], -1.0, acc);
    std::vector<quad::QuadExpr> acc_in(n_total);
    quad::accumulate_jtv(fb.g_rows, ix.mu_under[p], -1.0, acc_in);

    // price stationarity, one row per owned unit
    ix.row_a.push_back(m.num_eq());
    for (int i : owners[p]) {
      quad::QuadExpr row = acc[fb.alpha_ids[i]];
      row.add_scaled(fp.derivative(fb.alpha_ids[i]), -1.0);
      m.add_eq(std::move(row), "stat_alpha[" + std::to_string(i) + "]");
    }
    // multiplier stationarity wrt mu
    ix.row_b.push_back(m.num_eq());
    for (int t = 0; t < lay.T; ++t)
      for (int j = 0; j < lay.m_in; ++j) {
        quad::QuadExpr row = acc[fb.mu[t][j]];
        row.add_quad(ix.phi[p][t * lay.m_in + j], fb.s[t][j], 1.0);
        row.add_linear(ix.psi[p][t * lay.m_in + j], -1.0);
        m.add_eq(std::move(row), "stat_mu[" + std::to_string(p) + "]");
      }
    // follower primal/dual stationarity wrt y1 = (w, lam)
    ix.row_c.push_back(m.num_eq());
    for (int t = 0; t < lay.T; ++t) {
      for (int q = 0; q < lay.n_w; ++q) {
        quad::QuadExpr row = acc[fb.w[t][q]];
        row.add_scaled(acc_in[fb.w[t][q]], 1.0);
        row.add_scaled(fp.derivative(fb.w[t][q]), -1.0);
        m.add_eq(std::move(row), "stat_w[" + std::to_string(p) + "]");
      }
      for (int r = 0; r < lay.n_eq; ++r) {
        quad::QuadExpr row = acc[fb.lam[t][r]];
        m.add_eq(std::move(row), "stat_lam[" + std::to_string(p) + "]");
      }
    }
    // slack stationarity
    ix.row_d.push_back(m.num_eq());
    for (int t = 0; t < lay.T; ++t)
      for (int j = 0; j < lay.m_in; ++j) {
        quad::QuadExpr row;
        row.add_linear(ix.mu_under[p][t * lay.m_in + j], 1.0);
        row.add_quad(ix.phi[p][t * lay.m_in + j], fb.mu[t][j], 1.0);
        row.add_linear(ix.sigma[p][t * lay.m_in + j], -1.0);
        m.add_eq(std::move(row), "stat_s[" + std::to_string(p) + "]");
      }
  }

  // penalty objective: all complementarity products
  quad::QuadExpr cpen;
  for (int p = 0; p < P; ++p)
    for (int t = 0; t < lay.T; ++t)
      for (int j = 0; j < lay.m_in; ++j) {
        cpen.add_quad(ix.sigma[p][t * lay.m_in + j], fb.s[t][j], 1.0);
        cpen.add_quad(ix.psi[p][t * lay.m_in + j], fb.mu[t][j], 1.0);
      }
  for (int t = 0; t < lay.T; ++t)
    for (int j = 0; j < lay.m_in; ++j) cpen.add_quad(fb.mu[t][j], fb.s[t][j], 1.0);
  nlp_out.cpen = cpen;
  quad::QuadExpr obj = cpen;
  if (opts.multiplier_reg > 0) {
    const double r = 0.5 * opts.multiplier_reg;
    for (int p = 0; p < P; ++p) {
      for (int v : ix.mu_bar[p]) obj.add_quad(v, v, r);
      for (int v : ix.mu_under[p]) obj.add_quad(v, v, r);
      for (int v : ix.sigma[p]) obj.add_quad(v, v, r);
      for (int v : ix.psi[p]) obj.add_quad(v, v, r);
      for (int v : ix.phi[p]) obj.add_quad(v, v, r);
    }
  }
  m.set_objective(obj);
  return nlp_out;
}

double max_complementarity_product(const EpecNlp& en, const VectorXd& x) {
  const auto& ix = en.index;
  const Layout& lay = ix.layout;
  double mp = 0.0;
  for (int t = 0; t < lay.T; ++t)
    for (int j = 0; j < lay.m_in; ++j) {
      mp = std::max(mp, std::abs(x[ix.mu[t][j]] * x[ix.s[t][j]]));
      for (size_t p = 0; p < ix.owners.size(); ++p) {
        mp = std::max(mp, std::abs(x[ix.sigma[p][t * lay.m_in + j]] * x[ix.s[t][j]]));
        mp = std::max(mp, std::abs(x[ix.psi[p][t * lay.m_in + j]] * x[ix.mu[t][j]]));
      }
    }
  return mp;
}

}  // namespace

// Per-period square solve (d h_e / d y1)' mu_bar = -grad_y1 f seeds each
// player's multipliers; psi and sigma come from their stationarity rows.
bool follower_start(const model::Scenario& s, const EpecNlp& en,
                    const std::vector<double>& alpha0, Eigen::VectorXd& x) {
  const auto& ix = en.index;
  const Layout& lay = ix.layout;
  x = VectorXd::Zero(en.model.num_vars());
  for (int i = 0; i < lay.I; ++i) x[ix.alpha[i]] = alpha0[i];

  disco::DiscoOptions dopt;
  disco::DiscoSolution dsol;
  try {
    dsol = disco::solve_disco(s, {alpha0}, dopt);
  } catch (const disco::SolveError&) {
    return false;
  }
  if (dsol.status != nlp::Status::kSolved) return false;
  fill_follower_start(x, s, lay, ix.w, ix.lam, ix.mu, ix.s, dsol);

  // Multiplier reconstruction per player. With the active set A of the
  // dispatch solution (mu_j > s_j), zero complementarity products force
  //   psi_j = 0 (j in A),  sigma_j = 0 and mu_under_j = 0 (j not in A),
  // so (mu_bar, mu_under_A) solve the linear system of the y1-rows, the
  // alpha-rows, and the active mu-rows. The componentwise phi_j then lifts
  // every remaining sign requirement: phi_j scales with |psi or sigma
  // requirement| / (s_j or mu_j).
  const double H = s.total_hours();
  const int n_y1 = lay.n_w + lay.n_eq;
  for (size_t p = 0; p < ix.owners.size(); ++p) {
    std::vector<std::pair<int, int>> act;  // (t, j)
    for (int t = 0; t < lay.T; ++t)
      for (int j = 0; j < lay.m_in; ++j)
        if (x[ix.mu[t][j]] > x[ix.s[t][j]]) act.push_back({t, j});

    const int n_unk = lay.T * lay.n_he + static_cast<int>(act.size());
    const int n_row = lay.T * n_y1 + static_cast<int>(ix.owners[p].size()) +
                      static_cast<int>(act.size());
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n_row, n_unk);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_row);
    auto mub_col = [&](int t, int r) { return t * lay.n_he + r; };
    auto act_col = [&](int a) { return lay.T * lay.n_he + a; };

    std::vector<std::vector<quad::QuadExpr>> he_t(lay.T), g_t(lay.T);
    AlphaRef ar;
    ar.ids = ix.alpha;
    ar.values.assign(lay.I, 0.0);
    for (int t = 0; t < lay.T; ++t) {
      PeriodVars pv{ix.w[t], ix.lam[t], ix.mu[t]};
      he_t[t] = disco::stationarity_rows(s, lay, t, pv, ar, s.periods[t].hours / H);
      auto eqs = disco::equality_rows(s, lay, t, pv);
      for (auto& r : eqs) he_t[t].push_back(std::move(r));
      g_t[t] = disco::inequality_rows(s, lay, t, pv);
    }

    int row = 0;
    for (int t = 0; t < lay.T; ++t) {  // y1 stationarity rows
      std::vector<int> y1_ids = ix.w[t];
      y1_ids.insert(y1_ids.end(), ix.lam[t].begin(), ix.lam[t].end());
      const double rho = s.periods[t].hours / H;
      for (int q = 0; q < n_y1; ++q, ++row) {
        for (int r = 0; r < lay.n_he; ++r)
          M(row, mub_col(t, r)) = he_t[t][r].derivative(y1_ids[q]).value(x);
        for (size_t a = 0; a < act.size(); ++a)
          if (act[a].first == t)
            M(row, act_col(static_cast<int>(a))) =
                g_t[t][act[a].second].derivative(y1_ids[q]).value(x);
        double df = 0.0;
        for (int i : ix.owners[p])
          if (q == lay.pdg_of(i)) df = rho * (alpha0[i] - s.dgs[i].cost);
        rhs[row] = -df;
      }
    }
    for (int i : ix.owners[p]) {  // alpha stationarity rows
      for (int t = 0; t < lay.T; ++t) {
        const double rho = s.periods[t].hours / H;
        M(row, mub_col(t, lay.pdg_of(i))) = rho;
        rhs[row] -= rho * x[ix.w[t][lay.pdg_of(i)]];
      }
      ++row;
    }
    for (size_t a = 0; a < act.size(); ++a, ++row) {  // active mu-rows
      auto [t, j] = act[a];
      for (int r = 0; r < lay.n_he; ++r)
        M(row, mub_col(t, r)) = -he_t[t][r].derivative(ix.mu[t][j]).value(x);
    }

    Eigen::VectorXd ls = M.colPivHouseholderQr().solve(rhs);
    if (!ls.allFinite()) ls.setZero();
    for (int t = 0; t < lay.T; ++t)
      for (int r = 0; r < lay.n_he; ++r)
        x[ix.mu_bar[p][t * lay.n_he + r]] = ls[mub_col(t, r)];
    for (size_t a = 0; a < act.size(); ++a) {
      auto [t, j] = act[a];
      x[ix.mu_under[p][t * lay.m_in + j]] = ls[act_col(static_cast<int>(a))];
    }

    // phi lifts the one live sign requirement of each row; the complementary
    // multiplier stays at the margin so its product is negligible
    for (int t = 0; t < lay.T; ++t)
      for (int j = 0; j < lay.m_in; ++j) {
        const int off = t * lay.m_in + j;
        double bval = en.model.eq_row(ix.row_b[p] + off).value(x);  // phi, psi still zero
        double mu_j = x[ix.mu[t][j]];
        double s_j = x[ix.s[t][j]];
        double mu_under_j = x[ix.mu_under[p][off]];
        double phi_j;
        if (s_j > mu_j) {
          // inactive row: psi may be positive, sigma must stay near zero
          phi_j = (std::max(0.0, -bval) + 1e-6) / std::max(s_j, 1e-9);
        } else {
          // active row: sigma may be positive, psi must stay near zero
          phi_j = (std::max(0.0, -mu_under_j) + 1e-6) / std::max(mu_j, 1e-9);
        }
        phi_j = std::min(1e10, std::max(1e-6, phi_j));
        x[ix.phi[p][off]] = phi_j;
        x[ix.psi[p][off]] = std::max(bval + phi_j * s_j, 0.0) + 1e-9;
        x[ix.sigma[p][off]] = std::max(mu_under_j + phi_j * mu_j, 0.0) + 1e-9;
      }
  }
  return true;
}

namespace {

// One or two best-response sweeps from modest prices; cheap compared to the
// combined program and lands the price vector near the equilibrium manifold.
std::vector<double> best_response_seed(const model::Scenario& s, const EpecOptions& opts,
                                       const std::vector<std::vector<int>>& owners,
                                       std::vector<double> alpha, int sweeps) {
  for (int sweep = 0; sweep < sweeps; ++sweep)
    for (const auto& own : owners) {
      MpecSystem sys = build_mpec_impl(s, own, alpha, opts);
      disco::ContractOffer warm;
      warm.alpha = alpha;
      auto r = solve_mpec_direct(s, sys, warm, opts);
      if (!r.ok) return alpha;
      for (size_t k = 0; k < own.size(); ++k) alpha[own[k]] = r.alpha[k];
    }
  return alpha;
}

std::vector<std::vector<double>> make_starts(const model::Scenario& s, const EpecOptions& opts,
                                             double cap,
                                             const std::vector<std::vector<int>>& owners) {
  const int I = static_cast<int>(s.dgs.size());
  double beta_mean = 0.0, beta_max = 0.0;
  for (const auto& p : s.periods) {
    beta_mean += p.market_price;
    beta_max = std::max(beta_max, p.market_price);
  }
  beta_mean /= static_cast<double>(s.periods.size());

  std::vector<std::vector<double>> starts;
  auto clip = [&](double v) { return std::min(std::max(v, 0.0), cap - 1.0); };
  auto push = [&](auto f) {
    std::vector<double> a(I);
    for (int i = 0; i < I; ++i) a[i] = clip(f(i));
    starts.push_back(a);
  };
  const int n = std::max(1, opts.multistart);
  {
    std::vector<double> a0(I);
    for (int i = 0; i < I; ++i) a0[i] = clip(s.dgs[i].cost + 0.5);
    auto seeded = best_response_seed(s, opts, owners, a0, 2);
    for (double& v : seeded) v = clip(v);
    starts.push_back(seeded);
  }
  if (static_cast<int>(starts.size()) < n) push([&](int i) { return s.dgs[i].cost + 0.5; });
  if (static_cast<int>(starts.size()) < n) push([&](int) { return beta_mean; });
  if (static_cast<int>(starts.size()) < n) push([&](int i) { return 1.05 * s.dgs[i].cost; });
  if (static_cast<int>(starts.size()) < n) push([&](int) { return beta_max; });
  std::mt19937_64 rng(opts.seed + 17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (static_cast<int>(starts.size()) < n)
    push([&](int i) {
      double hi = std::max(beta_max, s.dgs[i].cost + 1.0);
      return s.dgs[i].cost + u(rng) * (hi - s.dgs[i].cost);
    });
  starts.resize(n);
  return starts;
}

EpecSolution run_penalty(const model::Scenario& s, const EpecOptions& opts,
                         const std::vector<std::vector<int>>& owners, bool pick_max_profit) {
  EpecNlp en = build_penalty(s, opts, owners);
  const auto& ix = en.index;
  const Layout& lay = ix.layout;
  auto problem = en.model.build();

  auto starts = make_starts(s, opts, en.alpha_cap, owners);
  const int n = static_cast<int>(starts.size());
  std::vector<AttemptInfo> attempts(n);
  std::vector<nlp::Solution> sols(n);

  // Pattern-pinned attempt: freeze the complementarity pattern seen at the
  // follower-consistent start (zero sides pinned through equality rows) and
  // solve the resulting program. On the pinned set every product has a hard
  // zero side, so any feasible point is an exact equilibrium candidate and
  // the barrier centers the leftover multiplier freedom. Falls back to the
  // unpinned penalty program when the pattern guess does not pan out.
  // Pattern classification from a fresh polished dispatch solve: active rows
  // carry exact zero slacks there, so activity and kinks (active rows whose
  // multiplier vanishes) separate sharply. Kinks pin both primal sides and
  // leave the players' psi/sigma free, which matches the stationarity
  // structure at a transition price.
  auto pinned_attempt = [&](const VectorXd& x0, nlp::Solution& out_sol) {
    std::vector<double> a_now(lay.I);
    for (int i = 0; i < lay.I; ++i) a_now[i] = x0[ix.alpha[i]];
    disco::DiscoOptions dopt;
    dopt.lower = opts.lower;
    disco::DiscoSolution dsol;
    try {
      dsol = disco::solve_disco(s, {a_now}, dopt);
    } catch (const disco::SolveError&) {
      return false;
    }
    if (dsol.status != nlp::Status::kSolved) return false;

    quad::QuadModel pm = en.model;
    pm.set_objective(en.cpen);
    VectorXd xp = x0;
    auto pin = [&](int v) {
      pm.set_bounds(v, -nlp::kInf, nlp::kInf);
      quad::QuadExpr row;
      row.add_linear(v, 1.0);
      pm.add_eq(std::move(row), "pin");
      xp[v] = 0.0;
    };
    for (int t = 0; t < lay.T; ++t) {
      PeriodVars pv;
      for (int q = 0; q < lay.n_w; ++q) pv.w.push_back(q);
      Eigen::VectorXd wv(lay.n_w);
      for (int k = 0; k < lay.K; ++k) wv[lay.v_of(k)] = dsol.dispatch.v.v(k, t);
      for (int i = 0; i < lay.I; ++i) wv[lay.pdg_of(i)] = dsol.dispatch.p_dg(i, t);
      wv[lay.psb_of()] = dsol.dispatch.p_sb[t] / s.network.base_mva;
      auto gs = disco::inequality_rows(s, lay, t, pv);
      for (int j = 0; j < lay.m_in; ++j) {
        const int off = t * lay.m_in + j;
        const double gval = gs[j].value(wv);
        const double muval = dsol.duals.mu(j, t);
        const bool active = gval <= 1e-7;
        if (active && muval <= 1e-6) {  // kink
          pin(ix.s[t][j]);
          pin(ix.mu[t][j]);
        } else if (active) {
          pin(ix.s[t][j]);
          for (size_t p = 0; p < owners.size(); ++p) pin(ix.psi[p][off]);
        } else {
          pin(ix.mu[t][j]);
          for (size_t p = 0; p < owners.size(); ++p) pin(ix.sigma[p][off]);
        }
      }
    }
    nlp::Options no = opts.nlp;
    no.bound_push = 1e-10;
    no.mu0 = 1e-6;
    out_sol = nlp::solve(pm.build(), no, xp);
    return out_sol.status == nlp::Status::kSolved;
  };

  detail::parallel_for(n, [&](int k) {
    AttemptInfo& at = attempts[k];
    at.start_id = k;
    at.alpha = starts[k];
    VectorXd x0;
    if (!follower_start(s, en, starts[k], x0)) {
      at.status = nlp::Status::kNumericalFailure;
      return;
    }
    nlp::Options no = opts.nlp;
    // a start near the stationarity manifold must not be pushed back into
    // the interior or recentered on a fat barrier
    double start_err = std::max(en.model.eval_eq(x0).lpNorm<Eigen::Infinity>(),
                                en.model.objective().value(x0));
    if (start_err < 1e-3) {
      no.bound_push = 1e-10;
      no.mu0 = 1e-6;
    } else if (start_err < 1.0) {
      no.bound_push = 1e-6;
      no.mu0 = 1e-3;
    }
    sols[k] = nlp::solve(problem, no, x0);
    // Finisher: once the pattern is identified, the pinned program turns the
    // degenerate endgame into a clean Newton landing.
    if (sols[k].kkt.feasibility <= 1e-6 && en.cpen.value(sols[k].x) <= 1e-2) {
      nlp::Solution psol;
      bool fin_ok = pinned_attempt(sols[k].x, psol);
      if (std::getenv("DGP_EPEC_DEBUG"))
        fprintf(stderr, "finisher[%d]: %s cpen %.3e -> %.3e stat=%.2e feas=%.2e\n", k,
                fin_ok ? "solved" : nlp::status_name(psol.status), en.cpen.value(sols[k].x),
                psol.x.size() ? en.cpen.value(psol.x) : -1.0, psol.kkt.stationarity,
                psol.kkt.feasibility);
      if (fin_ok && en.cpen.value(psol.x) <= en.cpen.value(sols[k].x) + 1e-9) {
        psol.iters += sols[k].iters;
        sols[k] = psol;
      }
    }
    at.status = sols[k].status;
    at.c_pen = en.cpen.value(sols[k].x);
    at.max_product = max_complementarity_product(en, sols[k].x);
    at.iters = sols[k].iters;
    at.wall_seconds = sols[k].wall_seconds;
    at.accepted = (at.status == nlp::Status::kSolved) && (at.c_pen <= opts.epsilon_comp);
    for (int i = 0; i < lay.I; ++i) at.alpha[i] = sols[k].x[ix.alpha[i]];
  });

  // deterministic selection: lowest penalty among accepted (or best profit for
  // the joint-owner mode), ties by start id; otherwise best penalty overall
  int best = -1;
  auto total_profit = [&](int k) {
    double tp = 0.0;
    for (int t = 0; t < lay.T; ++t)
      for (int i = 0; i < lay.I; ++i)
        tp += s.periods[t].hours * (sols[k].x[ix.alpha[i]] - s.dgs[i].cost) *
              sols[k].x[ix.w[t][lay.pdg_of(i)]];
    return tp;
  };
  for (int k = 0; k < n; ++k) {
    if (!attempts[k].accepted) continue;
    if (best < 0) {
      best = k;
      continue;
    }
    if (pick_max_profit) {
      if (total_profit(k) > total_profit(best) + 1e-9) best = k;
    } else if (attempts[k].c_pen < attempts[best].c_pen - 1e-18) {
      best = k;
    }
  }
  bool accepted = best >= 0;
  if (best < 0)
    for (int k = 0; k < n; ++k) {
      if (attempts[k].status == nlp::Status::kNumericalFailure && sols[k].x.size() == 0) continue;
      if (best < 0 || attempts[k].c_pen < attempts[best].c_pen) best = k;
    }

  EpecSolution out;
  out.attempts = attempts;
  out.owners = owners;
  out.layout = lay;
  out.n_vars = problem.n;
  out.n_rows = problem.m_eq + problem.m_in;
  for (const auto& at : attempts) out.wall_seconds += at.wall_seconds;
  if (best < 0) return out;

  const auto& sol = sols[best];
  out.accepted = accepted;
  out.start_id = best;
  out.c_pen = attempts[best].c_pen;
  out.max_product = attempts[best].max_product;
  out.kkt = sol.kkt;
  out.iters = sol.iters;

  out.alpha.alpha.resize(lay.I);
  for (int i = 0; i < lay.I; ++i) out.alpha.alpha[i] = sol.x[ix.alpha[i]];
  out.dispatch.p_dg.setZero(lay.I, lay.T);
  out.dispatch.p_sb.setZero(lay.T);
  out.dispatch.v.v.setZero(lay.K, lay.T);
  out.duals.lambda.setZero(lay.n_eq, lay.T);
  out.duals.mu.setZero(lay.m_in, lay.T);
  out.slack.setZero(lay.m_in, lay.T);
  for (int t = 0; t < lay.T; ++t) {
    for (int k = 0; k < lay.K; ++k) out.dispatch.v.v(k, t) = sol.x[ix.w[t][lay.v_of(k)]];
    for (int i = 0; i < lay.I; ++i) out.dispatch.p_dg(i, t) = sol.x[ix.w[t][lay.pdg_of(i)]];
    out.dispatch.p_sb[t] = sol.x[ix.w[t][lay.psb_of()]] * s.network.base_mva;
    for (int r = 0; r < lay.n_eq; ++r) out.duals.lambda(r, t) = sol.x[ix.lam[t][r]];
    for (int j = 0; j < lay.m_in; ++j) {
      out.duals.mu(j, t) = sol.x[ix.mu[t][j]];
      out.slack(j, t) = sol.x[ix.s[t][j]];
    }
  }
  for (size_t p = 0; p < owners.size(); ++p) {
    PlayerMultipliers pm;
    pm.mu_bar.setZero(lay.n_he, lay.T);
    pm.mu_under.setZero(lay.m_in, lay.T);
    pm.sigma.setZero(lay.m_in, lay.T);
    pm.psi.setZero(lay.m_in, lay.T);
    pm.phi.setZero(lay.m_in, lay.T);
    for (int t = 0; t < lay.T; ++t) {
      for (int r = 0; r < lay.n_he; ++r) pm.mu_bar(r, t) = sol.x[ix.mu_bar[p][t * lay.n_he + r]];
      for (int j = 0; j < lay.m_in; ++j) {
        pm.mu_under(j, t) = sol.x[ix.mu_under[p][t * lay.m_in + j]];
        pm.sigma(j, t) = sol.x[ix.sigma[p][t * lay.m_in + j]];
        pm.psi(j, t) = sol.x[ix.psi[p][t * lay.m_in + j]];
        pm.phi(j, t) = sol.x[ix.phi[p][t * lay.m_in + j]];
      }
    }
    out.multipliers.push_back(std::move(pm));
  }

  out.profit_eur = profit(s, out.alpha, out.dispatch);
  out.energy_mwh.assign(lay.I, 0.0);
  out.payment_eur.assign(lay.I, 0.0);
  for (int i = 0; i < lay.I; ++i)
    for (int t = 0; t < lay.T; ++t) {
      out.energy_mwh[i] += s.periods[t].hours * out.dispatch.p_dg(i, t);
      out.payment_eur[i] += s.periods[t].hours * out.alpha.alpha[i] * out.dispatch.p_dg(i, t);
    }
  return out;
}

}  // namespace

EpecNlp build_epec_nlp(const model::Scenario& s, const EpecOptions& opts) {
  if (s.dgs.empty()) throw disco::SolveError("epec: scenario has no units");
  std::vector<std::vector<int>> owners;
  for (size_t i = 0; i < s.dgs.size(); ++i) owners.push_back({static_cast<int>(i)});
  return build_penalty(s, opts, owners);
}

EpecNlp build_joint_owner_nlp(const model::Scenario& s, const EpecOptions& opts) {
  if (s.dgs.empty()) throw disco::SolveError("epec: scenario has no units");
  std::vector<int> all;
  for (size_t i = 0; i < s.dgs.size(); ++i) all.push_back(static_cast<int>(i));
  return build_penalty(s, opts, {all});
}

EpecSolution solve_epec(const model::Scenario& s, const EpecOptions& opts) {
  if (s.dgs.empty()) throw disco::SolveError("epec: scenario has no units");
  std::vector<std::vector<int>> owners;
  for (size_t i = 0; i < s.dgs.size(); ++i) owners.push_back({static_cast<int>(i)});
  return run_penalty(s, opts, owners, false);
}

EpecSolution solve_single_owner(const model::Scenario& s, const EpecOptions& opts) {
  if (s.dgs.empty()) throw disco::SolveError("epec: scenario has no units");
  std::vector<int> all;
  for (size_t i = 0; i < s.dgs.size(); ++i) all.push_back(static_cast<int>(i));
  return run_penalty(s, opts, {all}, true);
}

std::vector<double> profit(const model::Scenario& s, const disco::ContractOffer& alpha,
                           const disco::Dispatch& dispatch) {
  std::vector<double> out(s.dgs.size(), 0.0);
  for (size_t i = 0; i < s.dgs.size(); ++i)
    for (size_t t = 0; t < s.periods.size(); ++t)
      out[i] += s.periods[t].hours * (alpha.alpha[i] - s.dgs[i].cost) *
                dispatch.p_dg(static_cast<int>(i), static_cast<int>(t));
  return out;
}

disco::DiscoSolution embedded_disco(const model::Scenario& s, const EpecSolution& e) {
  disco::DiscoSolution d;
  d.layout = e.layout;
  d.dispatch = e.dispatch;
  d.duals = e.duals;
  d.status = e.accepted ? nlp::Status::kSolved : nlp::Status::kNumericalFailure;
  d.loss_mwh.setZero(e.layout.T);
  d.dg_payment_eur.assign(e.layout.I, 0.0);
  d.dg_energy_mwh.assign(e.layout.I, 0.0);
  for (int t = 0; t < e.layout.T; ++t) {
    const double hours = s.periods[t].hours;
    d.loss_mwh[t] =
        pf::total_loss_single(s.network, e.dispatch.v.v.col(t)) * s.network.base_mva * hours;
    d.market_payment_eur += hours * s.periods[t].market_price * e.dispatch.p_sb[t];
    d.market_energy_mwh += hours * e.dispatch.p_sb[t];
    for (int i = 0; i < e.layout.I; ++i) {
      d.dg_energy_mwh[i] += hours * e.dispatch.p_dg(i, t);
      d.dg_payment_eur[i] += hours * e.alpha.alpha[i] * e.dispatch.p_dg(i, t);
    }
  }
  d.annual_loss_mwh = d.loss_mwh.sum();
  d.objective_eur = d.market_payment_eur;
  for (double p : d.dg_payment_eur) d.objective_eur += p;
  return d;
}

}  // namespace dgp::epec
