#include "dgpricer/lower_level.hpp"

#include <cassert>

namespace dgp::disco {

std::string Layout::w_name(int q) const {
  if (q < K) return "V[" + std::to_string(q) + "]";
  if (q < K + I) return "Pdg[" + std::to_string(q - K) + "]";
  return "Psb";
}

std::string Layout::ineq_name(int j) const {
  if (lines && j < L) return "line_hi[" + std::to_string(j) + "]";
  if (lines && j < 2 * L) return "line_lo[" + std::to_string(j - L) + "]";
  int base = lines ? 2 * L : 0;
  if (j < base + K) return "v_hi[" + std::to_string(j - base) + "]";
  if (j < base + 2 * K) return "v_lo[" + std::to_string(j - base - K) + "]";
  if (j < base + 2 * K + I) return "dg_hi[" + std::to_string(j - base - 2 * K) + "]";
  if (j < base + 2 * K + 2 * I) return "dg_lo[" + std::to_string(j - base - 2 * K - I) + "]";
  return j == base + 2 * K + 2 * I ? "sb_lo" : "sb_hi";
}

Layout make_layout(const model::Scenario& s, const LowerLevelOptions& opts) {
  Layout lay;
  lay.K = static_cast<int>(s.network.buses.size());
  lay.L = static_cast<int>(s.network.lines.size());
  lay.I = static_cast<int>(s.dgs.size());
  lay.T = static_cast<int>(s.periods.size());
  lay.sb = s.network.substation_index();
  for (const auto& dg : s.dgs) lay.dg_bus.push_back(s.network.bus_index(dg.bus));
  for (int k = 0; k < lay.K; ++k)
    if (s.network.buses[k].v_pin) lay.pinned_buses.push_back(k);
  lay.lines = opts.include_line_limits;
  lay.n_w = lay.K + lay.I + 1;
  lay.n_eq = lay.K + static_cast<int>(lay.pinned_buses.size());
  lay.m_in = (lay.lines ? 2 * lay.L : 0) + 2 * lay.K + 2 * lay.I + 2;
  lay.n_he = lay.n_w + lay.n_eq;
  return lay;
}

AlphaRef AlphaRef::fixed(const std::vector<double>& a) {
  AlphaRef r;
  r.ids.assign(a.size(), -1);
  r.values = a;
  return r;
}

AlphaRef AlphaRef::variables(const std::vector<int>& ids) {
  AlphaRef r;
  r.ids = ids;
  r.values.assign(ids.size(), 0.0);
  return r;
}

namespace {

// adds coef * alpha_i to the expression, as a variable or a constant
void add_alpha(quad::QuadExpr& e, const AlphaRef& alpha, int i, double coef) {
  if (alpha.ids[i] >= 0)
    e.add_linear(alpha.ids[i], coef);
  else
    e.add_const(coef * alpha.values[i]);
}

// flow seen from bus `from`: (V_f^2 - V_f V_o) / z
void add_flow(quad::QuadExpr& e, int vf, int vo, double z, double sign) {
  e.add_quad(vf, vf, sign / z);
  e.add_quad(vf, vo, -sign / z);
}

}  // namespace

std::vector<quad::QuadExpr> equality_rows(const model::Scenario& s, const Layout& lay, int t,
                                          const PeriodVars& pv) {
  const auto& net = s.network;
  auto adj = net.adjacency();
  std::vector<quad::QuadExpr> rows;
  rows.reserve(lay.n_eq);
  for (int k = 0; k < lay.K; ++k) {
    quad::QuadExpr r(s.periods[t].demand[k]);
    if (k == lay.sb) r.add_linear(pv.w[lay.psb_of()], -1.0);
    for (int i = 0; i < lay.I; ++i)
      if (lay.dg_bus[i] == k) r.add_linear(pv.w[lay.pdg_of(i)], -1.0 / net.base_mva);
    for (auto [nb, line] : adj[k])
      add_flow(r, pv.w[lay.v_of(k)], pv.w[lay.v_of(nb)], net.line_z(line), 1.0);
    rows.push_back(std::move(r));
  }
  for (int k : lay.pinned_buses) {
    quad::QuadExpr r(-*net.buses[k].v_pin);
    r.add_linear(pv.w[lay.v_of(k)], 1.0);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<quad::QuadExpr> inequality_rows(const model::Scenario& s, const Layout& lay, int t,
                                            const PeriodVars& pv) {
  (void)t;
  const auto& net = s.network;
  std::vector<quad::QuadExpr> rows(lay.m_in);
  if (lay.lines) {
    for (int l = 0; l < lay.L; ++l) {
      int f = net.bus_index(net.lines[l].from);
      int o = net.bus_index(net.lines[l].to);
      double z = net.line_z(l);
      quad::QuadExpr hi(net.lines[l].p_max);
      add_flow(hi, pv.w[lay.v_of(f)], pv.w[lay.v_of(o)], z, -1.0);
      rows[lay.row_line_hi(l)] = std::move(hi);
      quad::QuadExpr lo(net.lines[l].p_max);
      add_flow(lo, pv.w[lay.v_of(f)], pv.w[lay.v_of(o)], z, 1.0);
      rows[lay.row_line_lo(l)] = std::move(lo);
    }
  }
  for (int k = 0; k < lay.K; ++k) {
    quad::QuadExpr hi(net.buses[k].v_max);
    hi.add_linear(pv.w[lay.v_of(k)], -1.0);
    rows[lay.row_v_hi(k)] = std::move(hi);
    quad::QuadExpr lo(-net.buses[k].v_min);
    lo.add_linear(pv.w[lay.v_of(k)], 1.0);
    rows[lay.row_v_lo(k)] = std::move(lo);
  }
  for (int i = 0; i < lay.I; ++i) {
    quad::QuadExpr hi(s.dgs[i].p_max);
    hi.add_linear(pv.w[lay.pdg_of(i)], -1.0);
    rows[lay.row_dg_hi(i)] = std::move(hi);
    quad::QuadExpr lo(-s.dgs[i].p_min);
    lo.add_linear(pv.w[lay.pdg_of(i)], 1.0);
    rows[lay.row_dg_lo(i)] = std::move(lo);
  }
  {
    quad::QuadExpr lo(-net.substation.p_min);
    lo.add_linear(pv.w[lay.psb_of()], 1.0);
    rows[lay.row_sb_lo()] = std::move(lo);
    quad::QuadExpr hi(net.substation.p_max);
    hi.add_linear(pv.w[lay.psb_of()], -1.0);
    rows[lay.row_sb_hi()] = std::move(hi);
  }
  return rows;
}

std::vector<quad::QuadExpr> stationarity_rows(const model::Scenario& s, const Layout& lay, int t,
                                              const PeriodVars& pv, const AlphaRef& alpha,
                                              double weight) {
  assert(!pv.lam.empty() && !pv.mu.empty());
  const auto& net = s.network;
  auto adj = net.adjacency();
  std::vector<quad::QuadExpr> rows(lay.n_w);

  // d/dV_k: the balance rows of k and of its neighbors carry V_k, the line
  // rows of incident lines carry it, and the two voltage-bound rows are
  // linear in it. All multiplier contributions enter with a minus sign.
  for (int k = 0; k < lay.K; ++k) {
    quad::QuadExpr& r = rows[lay.v_of(k)];
    for (auto [nb, line] : adj[k]) {
      double z = net.line_z(line);
      // own balance row: d flow(V_k, V_nb) / dV_k = (2 V_k - V_nb)/z
      r.add_quad(pv.lam[k], pv.w[lay.v_of(k)], -2.0 / z);
      r.add_quad(pv.lam[k], pv.w[lay.v_of(nb)], 1.0 / z);
      // neighbor balance row: d flow(V_nb, V_k) / dV_k = -V_nb/z
      r.add_quad(pv.lam[nb], pv.w[lay.v_of(nb)], 1.0 / z);
    }
    r.add_linear(pv.mu[lay.row_v_hi(k)], 1.0);
    r.add_linear(pv.mu[lay.row_v_lo(k)], -1.0);
  }
  if (lay.lines) {
    for (int l = 0; l < lay.L; ++l) {
      int f = net.bus_index(net.lines[l].from);
      int o = net.bus_index(net.lines[l].to);
      double z = net.line_z(l);
      int mu_hi = pv.mu[lay.row_line_hi(l)];
      int mu_lo = pv.mu[lay.row_line_lo(l)];
      // d flow/dV_f = (2V_f - V_o)/z enters hi with -, lo with +
      rows[lay.v_of(f)].add_quad(mu_hi, pv.w[lay.v_of(f)], 2.0 / z);
      rows[lay.v_of(f)].add_quad(mu_hi, pv.w[lay.v_of(o)], -1.0 / z);
      rows[lay.v_of(f)].add_quad(mu_lo, pv.w[lay.v_of(f)], -2.0 / z);
      rows[lay.v_of(f)].add_quad(mu_lo, pv.w[lay.v_of(o)], 1.0 / z);
      // d flow/dV_o = -V_f/z
      rows[lay.v_of(o)].add_quad(mu_hi, pv.w[lay.v_of(f)], -1.0 / z);
      rows[lay.v_of(o)].add_quad(mu_lo, pv.w[lay.v_of(f)], 1.0 / z);
    }
  }
  // pinned-voltage equality rows
  for (size_t pidx = 0; pidx < lay.pinned_buses.size(); ++pidx) {
    int k = lay.pinned_buses[pidx];
    rows[lay.v_of(k)].add_linear(pv.lam[lay.K + static_cast<int>(pidx)], -1.0);
  }

  // d/dPdg_i: weight * alpha_i + lam_k / base + mu_hi - mu_lo
  for (int i = 0; i < lay.I; ++i) {
    quad::QuadExpr& r = rows[lay.pdg_of(i)];
    add_alpha(r, alpha, i, weight);
    r.add_linear(pv.lam[lay.dg_bus[i]], 1.0 / net.base_mva);
    r.add_linear(pv.mu[lay.row_dg_hi(i)], 1.0);
    r.add_linear(pv.mu[lay.row_dg_lo(i)], -1.0);
  }

  // d/dPsb: weight * beta_t * base + lam_sb + mu_hi - mu_lo
  {
    quad::QuadExpr& r = rows[lay.psb_of()];
    r.add_const(weight * s.periods[t].market_price * net.base_mva);
    r.add_linear(pv.lam[lay.sb], 1.0);
    r.add_linear(pv.mu[lay.row_sb_hi()], 1.0);
    r.add_linear(pv.mu[lay.row_sb_lo()], -1.0);
  }
  return rows;
}

quad::QuadExpr objective_term(const model::Scenario& s, const Layout& lay, int t,
                              const PeriodVars& pv, const AlphaRef& alpha, double weight) {
  quad::QuadExpr f;
  f.add_linear(pv.w[lay.psb_of()], weight * s.periods[t].market_price * s.network.base_mva);
  for (int i = 0; i < lay.I; ++i) {
    if (alpha.ids[i] >= 0)
      f.add_quad(alpha.ids[i], pv.w[lay.pdg_of(i)], weight);
    else
      f.add_linear(pv.w[lay.pdg_of(i)], weight * alpha.values[i]);
  }
  return f;
}

quad::QuadExpr profit_term(const model::Scenario& s, const Layout& lay, int t,
                           const PeriodVars& pv, const AlphaRef& alpha, int i, double weight) {
  quad::QuadExpr f;
  if (alpha.ids[i] >= 0)
    f.add_quad(alpha.ids[i], pv.w[lay.pdg_of(i)], weight);
  else
    f.add_linear(pv.w[lay.pdg_of(i)], weight * alpha.values[i]);
  f.add_linear(pv.w[lay.pdg_of(i)], -weight * s.dgs[i].cost);
  return f;
}

}  // namespace dgp::disco
