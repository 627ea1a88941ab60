#pragma once

#include <vector>

#include "dgpricer/disco.hpp"

namespace dgp::epec {

struct EpecOptions {
  nlp::Options nlp;
  disco::LowerLevelOptions lower;
  double epsilon_comp = 1e-6;      // acceptance threshold on the penalty value
  double alpha_cap = 0.0;          // 0 = use alpha_cap_factor * max market price
  double alpha_cap_factor = 10.0;
  // Optional Tikhonov weight on the auxiliary multiplier block (the bare
  // program's optima are nonisolated). The pattern-pinned solve below makes
  // this unnecessary in the default pipeline; the reported penalty value
  // never includes the term.
  double multiplier_reg = 0.0;
  int multistart = 8;
  unsigned seed = 0;
  EpecOptions() {
    nlp.tol = 1e-9;
    nlp.max_iter = 800;
    nlp.polish = true;
  }
};

// One leader problem with the follower optimality system embedded: variables
// are the owned contract prices plus the shared follower block (w, lambda,
// mu, s). Equalities carry the stationarity+balance system and g(w) - s = 0;
// complementarity lives in comp_pairs and is handled by the chosen solver.
struct MpecSystem {
  std::vector<int> owners;            // DG indices whose price is free
  std::vector<double> rival_alpha;    // full price vector; owner entries unused
  quad::QuadModel model;              // objective = -(scaled profit of owners)
  disco::Layout layout;
  double weight_scale = 1.0;          // EUR = weight_scale * internal profit
  std::vector<int> alpha_ids;         // per owner
  std::vector<std::vector<int>> w_ids, lam_ids, mu_ids, s_ids;  // per period
  std::vector<std::pair<int, int>> comp_pairs;  // (s var, mu var), bijection
  int he_rows = 0;
  int hin_rows = 0;
  double alpha_cap = 0.0;
};

MpecSystem build_mpec(const model::Scenario& s, int dg, const disco::ContractOffer& rivals,
                      const EpecOptions& opts = {});
MpecSystem build_single_owner_mpec(const model::Scenario& s, const EpecOptions& opts = {});

// Direct solve of an MpecSystem by driving the relaxation mu's < eps toward
// zero with warm restarts. Used by the best-response machinery.
struct MpecSolveResult {
  bool ok = false;
  std::vector<double> alpha;  // per owner
  double profit_eur = 0.0;
  nlp::Solution last;
  double final_epsilon = 0.0;
};
MpecSolveResult solve_mpec_direct(const model::Scenario& s, const MpecSystem& sys,
                                  const disco::ContractOffer& warm_offer,
                                  const EpecOptions& opts = {});

// The combined penalty program: all players' strong-stationarity systems over
// one shared follower block, objective sum of complementarity products.
struct EpecIndex {
  disco::Layout layout;
  std::vector<std::vector<int>> owners;                    // per player
  std::vector<int> alpha;                                  // per DG
  std::vector<std::vector<int>> w, lam, mu, s;             // [t] -> ids
  std::vector<std::vector<int>> mu_bar;                    // [p] -> T*n_he ids
  std::vector<std::vector<int>> mu_under, sigma, psi;      // [p] -> T*m ids
  std::vector<std::vector<int>> phi;                       // [p] -> T*m ids
  // first model row of each per-player block, for diagnostics and starts
  std::vector<int> row_a, row_b, row_c, row_d;
  int row_he = 0, row_gs = 0;
};

struct EpecNlp {
  quad::QuadModel model;  // objective = penalty + regularization
  EpecIndex index;
  quad::QuadExpr cpen;    // the pure complementarity penalty
  double alpha_cap = 0.0;
};

EpecNlp build_epec_nlp(const model::Scenario& s, const EpecOptions& opts = {});
EpecNlp build_joint_owner_nlp(const model::Scenario& s, const EpecOptions& opts = {});

// Follower-consistent start for the penalty program: dispatch solve at the
// candidate prices, multiplier blocks from per-period linear solves. Returns
// false when the dispatch solve fails at these prices.
bool follower_start(const model::Scenario& s, const EpecNlp& en,
                    const std::vector<double>& alpha0, Eigen::VectorXd& x);

struct PlayerMultipliers {
  Eigen::MatrixXd mu_bar;    // n_he x T
  Eigen::MatrixXd mu_under;  // m x T
  Eigen::MatrixXd sigma;     // m x T
  Eigen::MatrixXd psi;       // m x T
  Eigen::MatrixXd phi;       // m x T
};

struct AttemptInfo {
  int start_id = -1;
  nlp::Status status = nlp::Status::kNumericalFailure;
  double c_pen = 0.0;
  double max_product = 0.0;
  bool accepted = false;
  int iters = 0;
  double wall_seconds = 0.0;
  std::vector<double> alpha;
};

struct EpecSolution {
  bool accepted = false;
  disco::ContractOffer alpha;
  disco::Dispatch dispatch;  // embedded follower block
  disco::DualSet duals;
  Eigen::MatrixXd slack;  // m x T
  std::vector<PlayerMultipliers> multipliers;
  std::vector<std::vector<int>> owners;
  disco::Layout layout;
  double c_pen = 0.0;
  double max_product = 0.0;  // largest componentwise complementarity product
  nlp::KktResidual kkt;
  int iters = 0;
  double wall_seconds = 0.0;
  int start_id = -1;
  int n_vars = 0, n_rows = 0;
  std::vector<double> profit_eur, energy_mwh, payment_eur;  // per DG
  std::vector<AttemptInfo> attempts;
};

EpecSolution solve_epec(const model::Scenario& s, const EpecOptions& opts = {});
// Single-owner variant: one player owns every unit; among accepted stationary
// points the highest-total-profit one is returned.
EpecSolution solve_single_owner(const model::Scenario& s, const EpecOptions& opts = {});

// Annual profit per unit: sum_t hours_t * (alpha_i - c_i) * Pdg_i(t).
std::vector<double> profit(const model::Scenario& s, const disco::ContractOffer& alpha,
                           const disco::Dispatch& dispatch);

// Embedded follower block of an equilibrium, repackaged with payments and
// losses for reporting and the re-solve consistency check.
disco::DiscoSolution embedded_disco(const model::Scenario& s, const EpecSolution& e);

}  // namespace dgp::epec
