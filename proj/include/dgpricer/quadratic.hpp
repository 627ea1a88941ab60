#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dgpricer/nlp.hpp"

namespace dgp::quad {

// Sparse polynomial of degree <= 2:  c0 + sum a_i x_i + sum q_ij x_i x_j.
// Quadratic keys are stored with i <= j; the coefficient multiplies the
// monomial x_i * x_j (so q on (i,i) contributes q * x_i^2).
class QuadExpr {
 public:
  QuadExpr() = default;
  explicit QuadExpr(double constant) : c0_(constant) {}

  QuadExpr& add_const(double c);
  QuadExpr& add_linear(int var, double coef);
  QuadExpr& add_quad(int var_a, int var_b, double coef);
  QuadExpr& add_scaled(const QuadExpr& other, double scale);

  double constant() const { return c0_; }
  const std::map<int, double>& linear() const { return lin_; }
  const std::map<std::pair<int, int>, double>& quadratic() const { return quad_; }

  double value(const Eigen::VectorXd& x) const;
  // d(expr)/d(var) as a degree-<=1 expression.
  QuadExpr derivative(int var) const;

 private:
  double c0_ = 0.0;
  std::map<int, double> lin_;
  std::map<std::pair<int, int>, double> quad_;
};

// A smooth program assembled from QuadExpr rows. Produces an nlp::Problem
// with exact Jacobians and an exact Lagrangian Hessian (all rows are at most
// quadratic, so the Hessian has constant sparsity and multiplier-linear values).
class QuadModel {
 public:
  int add_var(std::string name, double lb, double ub);
  int num_vars() const { return static_cast<int>(names_.size()); }
  const std::string& var_name(int v) const { return names_[v]; }

  void set_objective(QuadExpr f) { objective_ = std::move(f); }
  const QuadExpr& objective() const { return objective_; }
  int add_eq(QuadExpr row, std::string name);      // row == 0
  int add_ineq(QuadExpr row, std::string name);    // row >= 0
  int num_eq() const { return static_cast<int>(eq_.size()); }
  int num_ineq() const { return static_cast<int>(ineq_.size()); }
  const QuadExpr& eq_row(int r) const { return eq_[r]; }
  const QuadExpr& ineq_row(int r) const { return ineq_[r]; }

  double lb(int v) const { return lb_[v]; }
  double ub(int v) const { return ub_[v]; }
  void set_bounds(int v, double lb, double ub);

  Eigen::VectorXd eval_eq(const Eigen::VectorXd& x) const;
  Eigen::VectorXd eval_ineq(const Eigen::VectorXd& x) const;

  // Freezes the model into a generic solver problem. The returned problem
  // shares this model's data via shared_ptr; the model may be discarded.
  nlp::Problem build() const;

 private:
  std::vector<std::string> names_;
  std::vector<double> lb_, ub_;
  QuadExpr objective_;
  std::vector<QuadExpr> eq_, ineq_;
  std::vector<std::string> eq_names_, ineq_names_;
};

// out[col] += sign * sum_r duals[r] * d(rows[r])/d(x_col), symbolically.
// Used to assemble transposed-Jacobian-times-multiplier stationarity blocks.
// `dual_var(r)` names the model variable holding the multiplier of rows[r].
void accumulate_jtv(const std::vector<QuadExpr>& rows,
                    const std::vector<int>& dual_vars, double sign,
                    std::vector<QuadExpr>& out);

}  // namespace dgp::quad
