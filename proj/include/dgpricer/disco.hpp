#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dgpricer/lower_level.hpp"
#include "dgpricer/model.hpp"
#include "dgpricer/nlp.hpp"
#include "dgpricer/powerflow.hpp"

namespace dgp::disco {

struct SolveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ContractOffer {
  std::vector<double> alpha;  // EUR/MWh per unit, scenario order
};

struct Dispatch {
  Eigen::MatrixXd p_dg;  // I x T, MW
  Eigen::VectorXd p_sb;  // T, MW
  pf::VoltageProfile v;  // K x T, p.u.
};

// Duals of the hour-weighted dispatch problem (period weight h_t / H). The
// canonical inequality row order of Layout applies to `mu`.
struct DualSet {
  Eigen::MatrixXd lambda;  // n_eq x T
  Eigen::MatrixXd mu;      // m_in x T, >= 0

  double mu_line_hi(const Layout& l, int line, int t) const { return mu(l.row_line_hi(line), t); }
  double mu_line_lo(const Layout& l, int line, int t) const { return mu(l.row_line_lo(line), t); }
  double mu_v_hi(const Layout& l, int k, int t) const { return mu(l.row_v_hi(k), t); }
  double mu_v_lo(const Layout& l, int k, int t) const { return mu(l.row_v_lo(k), t); }
  double mu_dg_hi(const Layout& l, int i, int t) const { return mu(l.row_dg_hi(i), t); }
  double mu_dg_lo(const Layout& l, int i, int t) const { return mu(l.row_dg_lo(i), t); }
  double mu_sb_hi(const Layout& l, int t) const { return mu(l.row_sb_hi(), t); }
  double mu_sb_lo(const Layout& l, int t) const { return mu(l.row_sb_lo(), t); }
};

struct DiscoSolution {
  Dispatch dispatch;
  DualSet duals;
  Layout layout;
  double objective_eur = 0.0;
  double market_payment_eur = 0.0;
  double market_energy_mwh = 0.0;
  std::vector<double> dg_payment_eur;
  std::vector<double> dg_energy_mwh;
  Eigen::VectorXd loss_mwh;  // per period
  double annual_loss_mwh = 0.0;
  nlp::Status status = nlp::Status::kNumericalFailure;
  nlp::KktResidual kkt;
  int iters = 0;
  double wall_seconds = 0.0;
};

struct DiscoOptions {
  nlp::Options nlp;
  LowerLevelOptions lower;
  bool per_period = true;  // exploit period separability, solve concurrently
  DiscoOptions() {
    nlp.tol = 1e-9;
    nlp.max_iter = 200;
    nlp.polish = true;
  }
};

// Monolithic hour-weighted dispatch program over all periods (weights
// h_t / H). Variable order: per period [V, Pdg, Psb].
quad::QuadModel build_opf_model(const model::Scenario& s, const ContractOffer& offer,
                                const LowerLevelOptions& opts = {});
nlp::Problem build_opf(const model::Scenario& s, const ContractOffer& offer,
                       const LowerLevelOptions& opts = {});

DiscoSolution solve_disco(const model::Scenario& s, const ContractOffer& offer,
                          const DiscoOptions& opts = {});

// Residuals of the dispatch optimality system at a solution, one infinity
// norm per equation family.
struct KktFamilies {
  double stationarity_v = 0.0;
  double stationarity_pdg = 0.0;
  double stationarity_psb = 0.0;
  double balance = 0.0;
  double primal_ineq = 0.0;      // min(g, 0) violations
  double complementarity = 0.0;  // |mu_j g_j|
  double dual_sign = 0.0;        // negative parts of mu
  double max() const;
};
KktFamilies kkt_check(const model::Scenario& s, const ContractOffer& offer,
                      const DiscoSolution& sol, const LowerLevelOptions& opts = {});

struct PaymentRow {
  std::string supplier;
  double energy_mwh = 0.0;
  double payment_eur = 0.0;
  double price_eur_mwh = 0.0;  // contract price, or the period market price
};
struct PaymentReport {
  std::vector<PaymentRow> rows;           // market first, then units
  std::vector<PaymentRow> market_rows;    // per-period market purchases
  double total_payment_eur = 0.0;
  Eigen::VectorXd loss_mwh;
  double annual_loss_mwh = 0.0;
};
PaymentReport payment_report(const model::Scenario& s, const DiscoSolution& sol);

}  // namespace dgp::disco
