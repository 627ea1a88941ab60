#include "dgpricer/disco.hpp"

#include <cmath>
#include <mutex>

#include "parallel.hpp"

namespace dgp::disco {

double KktFamilies::max() const {
  double m = stationarity_v;
  for (double v : {stationarity_pdg, stationarity_psb, balance, primal_ineq, complementarity,
                   dual_sign})
    m = std::max(m, v);
  return m;
}

namespace {

// Builds the dispatch program for a subset of periods at given weights.
// Variables per listed period: [V(K), Pdg(I), Psb], no box bounds; every
// limit of the formulation is an inequality row with its own dual.
quad::QuadModel build_weighted(const model::Scenario& s, const ContractOffer& offer,
                               const Layout& lay, const std::vector<int>& periods,
                               const std::vector<double>& weights) {
  if (static_cast<int>(offer.alpha.size()) != lay.I)
    throw SolveError("disco: offer must carry one price per unit");
  quad::QuadModel m;
  AlphaRef alpha = AlphaRef::fixed(offer.alpha);
  quad::QuadExpr obj;
  for (size_t pi = 0; pi < periods.size(); ++pi) {
    int t = periods[pi];
    PeriodVars pv;
    std::string suf = "(" + std::to_string(t) + ")";
    for (int q = 0; q < lay.n_w; ++q)
      pv.w.push_back(m.add_var(lay.w_name(q) + suf, -nlp::kInf, nlp::kInf));
    obj.add_scaled(objective_term(s, lay, t, pv, alpha, weights[pi]), 1.0);
    auto eqs = equality_rows(s, lay, t, pv);
    for (size_t r = 0; r < eqs.size(); ++r) {
      std::string nm = r < static_cast<size_t>(lay.K)
                           ? "balance[" + s.network.buses[r].id + "]" + suf
                           : "pin" + suf;
      m.add_eq(std::move(eqs[r]), nm);
    }
    auto gs = inequality_rows(s, lay, t, pv);
    for (size_t r = 0; r < gs.size(); ++r)
      m.add_ineq(std::move(gs[r]), lay.ineq_name(static_cast<int>(r)) + suf);
  }
  m.set_objective(obj);
  return m;
}

Eigen::VectorXd opf_start(const model::Scenario& s, const Layout& lay, int n_periods) {
  Eigen::VectorXd x(lay.n_w * n_periods);
  for (int p = 0; p < n_periods; ++p) {
    int off = p * lay.n_w;
    for (int k = 0; k < lay.K; ++k) x[off + lay.v_of(k)] = 1.0;
    for (int i = 0; i < lay.I; ++i)
      x[off + lay.pdg_of(i)] = 0.5 * (s.dgs[i].p_min + s.dgs[i].p_max);
    x[off + lay.psb_of()] =
        0.5 * (s.network.substation.p_min + s.network.substation.p_max);
  }
  return x;
}

}  // namespace

quad::QuadModel build_opf_model(const model::Scenario& s, const ContractOffer& offer,
                                const LowerLevelOptions& opts) {
  if (s.periods.empty()) throw SolveError("disco: scenario has no periods");
  Layout lay = make_layout(s, opts);
  std::vector<int> periods;
  std::vector<double> weights;
  const double H = s.total_hours();
  for (int t = 0; t < lay.T; ++t) {
    periods.push_back(t);
    weights.push_back(s.periods[t].hours / H);
  }
  return build_weighted(s, offer, lay, periods, weights);
}

nlp::Problem build_opf(const model::Scenario& s, const ContractOffer& offer,
                       const LowerLevelOptions& opts) {
  return build_opf_model(s, offer, opts).build();
}

DiscoSolution solve_disco(const model::Scenario& s, const ContractOffer& offer,
                          const DiscoOptions& opts) {
  const Layout lay = make_layout(s, opts.lower);
  const double H = s.total_hours();

  DiscoSolution out;
  out.layout = lay;
  out.dispatch.p_dg.setZero(lay.I, lay.T);
  out.dispatch.p_sb.setZero(lay.T);
  out.dispatch.v.v.setZero(lay.K, lay.T);
  out.duals.lambda.setZero(lay.n_eq, lay.T);
  out.duals.mu.setZero(lay.m_in, lay.T);
  out.loss_mwh.setZero(lay.T);
  out.dg_payment_eur.assign(lay.I, 0.0);
  out.dg_energy_mwh.assign(lay.I, 0.0);

  std::vector<nlp::Solution> sols(lay.T);
  std::vector<double> rho(lay.T);
  for (int t = 0; t < lay.T; ++t) rho[t] = s.periods[t].hours / H;

  if (opts.per_period) {
    // periods couple only through the fixed prices; solve them independently
    std::exception_ptr first_error;
    std::mutex err_mu;
    detail::parallel_for(lay.T, [&](int t) {
      try {
        auto m = build_weighted(s, offer, lay, {t}, {1.0});
        auto p = m.build();
        sols[t] = nlp::solve(p, opts.nlp, opf_start(s, lay, 1));
      } catch (...) {
        std::lock_guard<std::mutex> g(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
    if (first_error) std::rethrow_exception(first_error);
    // standalone duals correspond to weight 1; rescale to the weighted system
    for (int t = 0; t < lay.T; ++t) {
      sols[t].lambda_eq *= rho[t];
      sols[t].mu_ineq *= rho[t];
    }
  } else {
    auto p = build_opf_model(s, offer, opts.lower).build();
    auto sol = nlp::solve(p, opts.nlp, opf_start(s, lay, lay.T));
    for (int t = 0; t < lay.T; ++t) {
      sols[t] = sol;
      sols[t].x = sol.x.segment(t * lay.n_w, lay.n_w);
      sols[t].lambda_eq = sol.lambda_eq.segment(t * lay.n_eq, lay.n_eq);
      sols[t].mu_ineq = sol.mu_ineq.segment(t * lay.m_in, lay.m_in);
    }
  }

  out.kkt = {};
  out.status = nlp::Status::kSolved;
  for (int t = 0; t < lay.T; ++t) {
    const auto& ps = sols[t];
    if (ps.status != nlp::Status::kSolved) {
      if (ps.status == nlp::Status::kInfeasible)
        throw SolveError("disco: period " + std::to_string(t) +
                         " is infeasible (demand exceeds deliverable power)");
      out.status = ps.status;
    }
    out.iters += ps.iters;
    out.wall_seconds = std::max(out.wall_seconds, ps.wall_seconds);
    out.kkt.stationarity = std::max(out.kkt.stationarity, ps.kkt.stationarity);
    out.kkt.feasibility = std::max(out.kkt.feasibility, ps.kkt.feasibility);
    out.kkt.complementarity = std::max(out.kkt.complementarity, ps.kkt.complementarity);

    for (int k = 0; k < lay.K; ++k) out.dispatch.v.v(k, t) = ps.x[lay.v_of(k)];
    for (int i = 0; i < lay.I; ++i) out.dispatch.p_dg(i, t) = ps.x[lay.pdg_of(i)];
    out.dispatch.p_sb[t] = ps.x[lay.psb_of()] * s.network.base_mva;
    out.duals.lambda.col(t) = ps.lambda_eq;
    out.duals.mu.col(t) = ps.mu_ineq;

    const double hours = s.periods[t].hours;
    out.loss_mwh[t] =
        pf::total_loss_single(s.network, out.dispatch.v.v.col(t)) * s.network.base_mva * hours;
    out.market_payment_eur += hours * s.periods[t].market_price * out.dispatch.p_sb[t];
    out.market_energy_mwh += hours * out.dispatch.p_sb[t];
    for (int i = 0; i < lay.I; ++i) {
      out.dg_energy_mwh[i] += hours * out.dispatch.p_dg(i, t);
      out.dg_payment_eur[i] += hours * offer.alpha[i] * out.dispatch.p_dg(i, t);
    }
  }
  out.annual_loss_mwh = out.loss_mwh.sum();
  out.objective_eur = out.market_payment_eur;
  for (double p : out.dg_payment_eur) out.objective_eur += p;
  return out;
}

KktFamilies kkt_check(const model::Scenario& s, const ContractOffer& offer,
                      const DiscoSolution& sol, const LowerLevelOptions& opts) {
  Layout lay = make_layout(s, opts);
  const double H = s.total_hours();
  KktFamilies fam;

  for (int t = 0; t < lay.T; ++t) {
    // flat variable vector [w, lam, mu] for this period
    int n = lay.n_w + lay.n_eq + lay.m_in;
    Eigen::VectorXd x(n);
    PeriodVars pv;
    for (int q = 0; q < lay.n_w; ++q) pv.w.push_back(q);
    for (int r = 0; r < lay.n_eq; ++r) pv.lam.push_back(lay.n_w + r);
    for (int j = 0; j < lay.m_in; ++j) pv.mu.push_back(lay.n_w + lay.n_eq + j);
    for (int k = 0; k < lay.K; ++k) x[lay.v_of(k)] = sol.dispatch.v.v(k, t);
    for (int i = 0; i < lay.I; ++i) x[lay.pdg_of(i)] = sol.dispatch.p_dg(i, t);
    x[lay.psb_of()] = sol.dispatch.p_sb[t] / s.network.base_mva;
    x.segment(lay.n_w, lay.n_eq) = sol.duals.lambda.col(t);
    x.segment(lay.n_w + lay.n_eq, lay.m_in) = sol.duals.mu.col(t);

    const double rho = s.periods[t].hours / H;
    auto stat = stationarity_rows(s, lay, t, pv, AlphaRef::fixed(offer.alpha), rho);
    for (int k = 0; k < lay.K; ++k)
      fam.stationarity_v = std::max(fam.stationarity_v, std::abs(stat[lay.v_of(k)].value(x)));
    for (int i = 0; i < lay.I; ++i)
      fam.stationarity_pdg =
          std::max(fam.stationarity_pdg, std::abs(stat[lay.pdg_of(i)].value(x)));
    fam.stationarity_psb = std::max(fam.stationarity_psb, std::abs(stat[lay.psb_of()].value(x)));

    for (auto& row : equality_rows(s, lay, t, pv))
      fam.balance = std::max(fam.balance, std::abs(row.value(x)));
    auto gs = inequality_rows(s, lay, t, pv);
    for (int j = 0; j < lay.m_in; ++j) {
      double g = gs[j].value(x);
      double mu = x[pv.mu[j]];
      fam.primal_ineq = std::max(fam.primal_ineq, -std::min(0.0, g));
      fam.complementarity = std::max(fam.complementarity, std::abs(mu * g));
      fam.dual_sign = std::max(fam.dual_sign, -std::min(0.0, mu));
    }
  }
  return fam;
}

PaymentReport payment_report(const model::Scenario& s, const DiscoSolution& sol) {
  PaymentReport rep;
  PaymentRow market{"market", sol.market_energy_mwh, sol.market_payment_eur, 0.0};
  rep.rows.push_back(market);
  for (size_t i = 0; i < s.dgs.size(); ++i) {
    PaymentRow r;
    r.supplier = s.dgs[i].id;
    r.energy_mwh = sol.dg_energy_mwh[i];
    r.payment_eur = sol.dg_payment_eur[i];
    r.price_eur_mwh = sol.dg_energy_mwh[i] > 0 ? sol.dg_payment_eur[i] / sol.dg_energy_mwh[i] : 0.0;
    rep.rows.push_back(r);
  }
  for (size_t t = 0; t < s.periods.size(); ++t) {
    PaymentRow r;
    r.supplier = "market@" + std::to_string(s.periods[t].market_price);
    r.energy_mwh = s.periods[t].hours * sol.dispatch.p_sb[static_cast<int>(t)];
    r.payment_eur = r.energy_mwh * s.periods[t].market_price;
    r.price_eur_mwh = s.periods[t].market_price;
    rep.market_rows.push_back(r);
  }
  rep.total_payment_eur = sol.objective_eur;
  rep.loss_mwh = sol.loss_mwh;
  rep.annual_loss_mwh = sol.annual_loss_mwh;
  return rep;
}

}  // namespace dgp::disco
