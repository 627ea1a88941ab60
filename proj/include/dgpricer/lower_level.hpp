#pragma once

#include <string>
#include <vector>

#include "dgpricer/model.hpp"
#include "dgpricer/quadratic.hpp"

namespace dgp::disco {

struct LowerLevelOptions {
  // The worked simplification of the study system drops the line-flow rows;
  // builders accept that variant for size comparisons and tests.
  bool include_line_limits = true;
};

// Canonical per-period shapes of the company dispatch problem. Primal order
// is [V_1..V_K, Pdg_1..Pdg_I, Psb]; equality order is [balance_1..balance_K,
// pinned-voltage rows]; the inequality order is
//   [line_hi, line_lo, v_hi, v_lo, dg_hi, dg_lo, sb_lo, sb_hi].
struct Layout {
  int K = 0, L = 0, I = 0, T = 0;
  int sb = 0;
  std::vector<int> dg_bus;
  std::vector<int> pinned_buses;
  bool lines = true;
  int n_w = 0;    // per-period primal count
  int n_eq = 0;   // per-period equality rows (K + pins)
  int m_in = 0;   // per-period inequality rows
  int n_he = 0;   // per-period strong-stationarity block: n_w + n_eq

  int v_of(int k) const { return k; }
  int pdg_of(int i) const { return K + i; }
  int psb_of() const { return K + I; }

  int row_line_hi(int l) const { return l; }
  int row_line_lo(int l) const { return L + l; }
  int row_v_hi(int k) const { return (lines ? 2 * L : 0) + k; }
  int row_v_lo(int k) const { return (lines ? 2 * L : 0) + K + k; }
  int row_dg_hi(int i) const { return (lines ? 2 * L : 0) + 2 * K + i; }
  int row_dg_lo(int i) const { return (lines ? 2 * L : 0) + 2 * K + I + i; }
  int row_sb_lo() const { return (lines ? 2 * L : 0) + 2 * K + 2 * I; }
  int row_sb_hi() const { return (lines ? 2 * L : 0) + 2 * K + 2 * I + 1; }

  std::string w_name(int q) const;
  std::string ineq_name(int j) const;
};

Layout make_layout(const model::Scenario& s, const LowerLevelOptions& opts = {});

// Variable ids of one period's lower-level symbols inside an enclosing model.
// `lam` and `mu` may be empty when the emitted rows do not need duals.
struct PeriodVars {
  std::vector<int> w;
  std::vector<int> lam;
  std::vector<int> mu;
};

// Contract prices, either as model variables (id >= 0) or fixed numbers.
struct AlphaRef {
  std::vector<int> ids;
  std::vector<double> values;
  static AlphaRef fixed(const std::vector<double>& a);
  static AlphaRef variables(const std::vector<int>& ids);
};

// Equality rows of one period: bus balances, then pinned-voltage rows.
std::vector<quad::QuadExpr> equality_rows(const model::Scenario& s, const Layout& lay, int t,
                                          const PeriodVars& pv);

// Inequality rows g(w) >= 0 of one period, canonical order.
std::vector<quad::QuadExpr> inequality_rows(const model::Scenario& s, const Layout& lay, int t,
                                            const PeriodVars& pv);

// Stationarity of the weighted dispatch Lagrangian
//   grad_w [ weight * (beta_t * base * Psb + sum_i alpha_i * Pdg_i)
//            - lam' Eq(w) - mu' Ineq(w) ]
// as n_w rows ordered like the primal block.
std::vector<quad::QuadExpr> stationarity_rows(const model::Scenario& s, const Layout& lay, int t,
                                              const PeriodVars& pv, const AlphaRef& alpha,
                                              double weight);

// Company objective contribution of one period at the given weight.
quad::QuadExpr objective_term(const model::Scenario& s, const Layout& lay, int t,
                              const PeriodVars& pv, const AlphaRef& alpha, double weight);

// Profit contribution of one unit in one period:  weight * (alpha_i - c_i) * Pdg_i.
quad::QuadExpr profit_term(const model::Scenario& s, const Layout& lay, int t,
                           const PeriodVars& pv, const AlphaRef& alpha, int i, double weight);

}  // namespace dgp::disco
