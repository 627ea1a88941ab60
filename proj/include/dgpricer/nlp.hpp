#pragma once

#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace dgp::nlp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Sparse smooth program
//   min f(x)  s.t.  c_eq(x) = 0,  c_in(x) >= 0,  lb <= x <= ub.
// Jacobian and Hessian sparsity patterns are fixed across evaluations; value
// callbacks fill vectors aligned with the published patterns. The Hessian
// callback evaluates the Lagrangian
//   sigma_f * f(x) - y_eq' c_eq(x) - y_in' c_in(x)
// (lower triangle, row >= col). If `hess` is absent the solver falls back to
// a quasi-Newton approximation.
struct Problem {
  int n = 0;
  Eigen::VectorXd lb, ub;
  std::vector<std::string> var_names;  // optional, diagnostics only

  int m_eq = 0;
  int m_in = 0;
  std::vector<std::string> eq_names, in_names;  // optional

  std::function<double(const Eigen::VectorXd&)> objective;
  std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> gradient;
  std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> eval_eq;
  std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> eval_in;

  std::vector<std::pair<int, int>> jac_eq_pattern;  // (row, col)
  std::vector<std::pair<int, int>> jac_in_pattern;
  std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> jac_eq_values;
  std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> jac_in_values;

  std::vector<std::pair<int, int>> hess_pattern;  // lower triangle
  std::function<void(const Eigen::VectorXd&, double, const Eigen::VectorXd&,
                     const Eigen::VectorXd&, Eigen::VectorXd&)>
      hess;
};

enum class HessianMode { kExact, kQuasiNewton };

struct Options {
  double tol = 1e-8;        // applies to all three KKT infinity norms
  int max_iter = 300;
  double mu0 = 0.1;         // initial barrier parameter
  int multistart = 1;
  unsigned seed = 0;
  HessianMode hessian_mode = HessianMode::kExact;
  double bound_push = 1e-2;     // relative interior push for the start point
  double bound_frac = 0.995;    // fraction-to-boundary
  double alpha_cap_big = 1e20;  // treated as +inf bound
  bool polish = false;          // active-set Newton polish after convergence
  std::string trace_path;       // per-iteration CSV when non-empty
};

enum class Status { kSolved, kMaxIter, kInfeasible, kNumericalFailure };
const char* status_name(Status s);

// Residual triple used for termination. Inside the solver, stationarity and
// complementarity are scaled by the average multiplier magnitude when it
// exceeds 100 (degenerate complementarity systems are only asymptotically
// stationary, with diverging multipliers); the standalone kkt_residual()
// helper reports unscaled norms.
struct KktResidual {
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;
  double max() const;
};

struct Solution {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda_eq;   // equality duals
  Eigen::VectorXd mu_ineq;     // inequality duals, >= 0
  Eigen::VectorXd z_lower;     // bound duals, >= 0
  Eigen::VectorXd z_upper;
  double objective = 0.0;
  Status status = Status::kNumericalFailure;
  KktResidual kkt;
  int iters = 0;
  double wall_seconds = 0.0;
  std::string failure_detail;  // offending constraint name on evaluator failure
};

Solution solve(const Problem& p, const Options& opts);
Solution solve(const Problem& p, const Options& opts, const Eigen::VectorXd& start);

// Infinity-norm KKT residuals at an arbitrary primal/dual point.
KktResidual kkt_residual(const Problem& p, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& lambda_eq, const Eigen::VectorXd& mu_ineq,
                         const Eigen::VectorXd& z_lower, const Eigen::VectorXd& z_upper);

struct MultistartResult {
  Solution best;
  int best_index = -1;
  std::vector<Solution> attempts;
};

// Runs `opts.multistart` solves from deterministic perturbations of `start`
// (or of the default start). Attempts run concurrently; selection is the
// solved attempt with the lowest objective, else the lowest KKT residual.
MultistartResult multistart_solve(const Problem& p, const Options& opts);
MultistartResult multistart_solve(const Problem& p, const Options& opts,
                                  const Eigen::VectorXd& start);

}  // namespace dgp::nlp
