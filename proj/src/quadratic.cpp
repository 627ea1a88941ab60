#include "dgpricer/quadratic.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <set>

namespace dgp::quad {

QuadExpr& QuadExpr::add_const(double c) {
  c0_ += c;
  return *this;
}

QuadExpr& QuadExpr::add_linear(int var, double coef) {
  if (coef == 0.0) return *this;
  assert(var >= 0);
  lin_[var] += coef;
  return *this;
}

QuadExpr& QuadExpr::add_quad(int var_a, int var_b, double coef) {
  if (coef == 0.0) return *this;
  assert(var_a >= 0 && var_b >= 0);
  if (var_a > var_b) std::swap(var_a, var_b);
  quad_[{var_a, var_b}] += coef;
  return *this;
}

QuadExpr& QuadExpr::add_scaled(const QuadExpr& other, double scale) {
  c0_ += scale * other.c0_;
  for (auto& [v, c] : other.lin_) lin_[v] += scale * c;
  for (auto& [k, c] : other.quad_) quad_[k] += scale * c;
  return *this;
}

double QuadExpr::value(const Eigen::VectorXd& x) const {
  double v = c0_;
  for (auto& [i, c] : lin_) v += c * x[i];
  for (auto& [k, c] : quad_) v += c * x[k.first] * x[k.second];
  return v;
}

QuadExpr QuadExpr::derivative(int var) const {
  QuadExpr d;
  auto it = lin_.find(var);
  if (it != lin_.end()) d.add_const(it->second);
  for (auto& [k, c] : quad_) {
    if (k.first == var && k.second == var)
      d.add_linear(var, 2.0 * c);
    else if (k.first == var)
      d.add_linear(k.second, c);
    else if (k.second == var)
      d.add_linear(k.first, c);
  }
  return d;
}

int QuadModel::add_var(std::string name, double lb, double ub) {
  names_.push_back(std::move(name));
  lb_.push_back(lb);
  ub_.push_back(ub);
  return static_cast<int>(names_.size()) - 1;
}

void QuadModel::set_bounds(int v, double lb, double ub) {
  lb_[v] = lb;
  ub_[v] = ub;
}

int QuadModel::add_eq(QuadExpr row, std::string name) {
  eq_.push_back(std::move(row));
  eq_names_.push_back(std::move(name));
  return static_cast<int>(eq_.size()) - 1;
}

int QuadModel::add_ineq(QuadExpr row, std::string name) {
  ineq_.push_back(std::move(row));
  ineq_names_.push_back(std::move(name));
  return static_cast<int>(ineq_.size()) - 1;
}

Eigen::VectorXd QuadModel::eval_eq(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(num_eq());
  for (int r = 0; r < num_eq(); ++r) out[r] = eq_[r].value(x);
  return out;
}

Eigen::VectorXd QuadModel::eval_ineq(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(num_ineq());
  for (int r = 0; r < num_ineq(); ++r) out[r] = ineq_[r].value(x);
  return out;
}

namespace {

// Flattened evaluation data for one row set, shared by the closures handed to
// the solver.
struct Frozen {
  struct LinTerm {
    int row, col;
    double coef;
  };
  struct QuadTerm {
    int row, a, b;
    double coef;
  };
  int rows = 0;
  std::vector<double> constants;
  std::vector<LinTerm> lin;
  std::vector<QuadTerm> quad;

  // Jacobian: one entry per (row, col); values are refreshed from lin/quad.
  std::vector<std::pair<int, int>> jac_pattern;
  std::vector<std::pair<int, double>> jac_const;       // (entry, coef) from linear terms
  struct JacQuad {
    int entry, other;
    double coef;
  };
  std::vector<JacQuad> jac_quad;  // entry += coef * x[other]

  void eval(const Eigen::VectorXd& x, Eigen::VectorXd& out) const {
    out.resize(rows);
    for (int r = 0; r < rows; ++r) out[r] = constants[r];
    for (const auto& t : lin) out[t.row] += t.coef * x[t.col];
    for (const auto& t : quad) out[t.row] += t.coef * x[t.a] * x[t.b];
  }
  void jac_values(const Eigen::VectorXd& x, Eigen::VectorXd& vals) const {
    vals.setZero(static_cast<Eigen::Index>(jac_pattern.size()));
    for (const auto& [e, c] : jac_const) vals[e] += c;
    for (const auto& t : jac_quad) vals[t.entry] += t.coef * x[t.other];
  }
};

Frozen freeze(const std::vector<const QuadExpr*>& rows) {
  Frozen f;
  f.rows = static_cast<int>(rows.size());
  f.constants.resize(f.rows);
  std::map<std::pair<int, int>, int> entry_of;
  auto entry = [&](int r, int c) {
    auto it = entry_of.find({r, c});
    if (it != entry_of.end()) return it->second;
    int e = static_cast<int>(f.jac_pattern.size());
    f.jac_pattern.push_back({r, c});
    entry_of[{r, c}] = e;
    return e;
  };
  for (int r = 0; r < f.rows; ++r) {
    const QuadExpr& q = *rows[r];
    f.constants[r] = q.constant();
    for (auto& [col, c] : q.linear()) {
      f.lin.push_back({r, col, c});
      f.jac_const.push_back({entry(r, col), c});
    }
    for (auto& [k, c] : q.quadratic()) {
      f.quad.push_back({r, k.first, k.second, c});
      if (k.first == k.second) {
        f.jac_quad.push_back({entry(r, k.first), k.first, 2.0 * c});
      } else {
        f.jac_quad.push_back({entry(r, k.first), k.second, c});
        f.jac_quad.push_back({entry(r, k.second), k.first, c});
      }
    }
  }
  return f;
}

}  // namespace

nlp::Problem QuadModel::build() const {
  struct Data {
    Frozen eq, in, obj;
    // Hessian: entry list (lower triangle) and per-entry sources.
    std::vector<std::pair<int, int>> hess_pattern;
    struct Source {
      int entry;
      int kind;  // 0 objective, 1 equality row, 2 inequality row
      int row;
      double coef;
    };
    std::vector<Source> hess_sources;
  };
  auto data = std::make_shared<Data>();

  std::vector<const QuadExpr*> eq_ptr, in_ptr;
  for (const auto& r : eq_) eq_ptr.push_back(&r);
  for (const auto& r : ineq_) in_ptr.push_back(&r);
  data->eq = freeze(eq_ptr);
  data->in = freeze(in_ptr);
  data->obj = freeze({&objective_});

  // Hessian assembly: each quadratic monomial q * x_a x_b contributes q to
  // H(a,b) for a != b and 2q to H(a,a), weighted by sigma_f for the objective
  // and -multiplier for constraint rows.
  std::map<std::pair<int, int>, int> hentry;
  auto hess_entry = [&](int a, int b) {
    if (a < b) std::swap(a, b);  // lower triangle: row >= col
    auto it = hentry.find({a, b});
    if (it != hentry.end()) return it->second;
    int e = static_cast<int>(data->hess_pattern.size());
    data->hess_pattern.push_back({a, b});
    hentry[{a, b}] = e;
    return e;
  };
  auto add_sources = [&](const QuadExpr& q, int kind, int row) {
    for (auto& [k, c] : q.quadratic()) {
      double coef = (k.first == k.second) ? 2.0 * c : c;
      data->hess_sources.push_back({hess_entry(k.first, k.second), kind, row, coef});
    }
  };
  add_sources(objective_, 0, 0);
  for (int r = 0; r < num_eq(); ++r) add_sources(eq_[r], 1, r);
  for (int r = 0; r < num_ineq(); ++r) add_sources(ineq_[r], 2, r);

  nlp::Problem p;
  p.n = num_vars();
  p.lb = Eigen::Map<const Eigen::VectorXd>(lb_.data(), p.n);
  p.ub = Eigen::Map<const Eigen::VectorXd>(ub_.data(), p.n);
  p.var_names = names_;
  p.m_eq = num_eq();
  p.m_in = num_ineq();
  p.eq_names = eq_names_;
  p.in_names = ineq_names_;

  p.objective = [data](const Eigen::VectorXd& x) {
    Eigen::VectorXd v;
    data->obj.eval(x, v);
    return v[0];
  };
  p.gradient = [data, n = p.n](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g.setZero(n);
    Eigen::VectorXd vals;
    data->obj.jac_values(x, vals);
    for (size_t e = 0; e < data->obj.jac_pattern.size(); ++e)
      g[data->obj.jac_pattern[e].second] += vals[e];
  };
  p.eval_eq = [data](const Eigen::VectorXd& x, Eigen::VectorXd& out) { data->eq.eval(x, out); };
  p.eval_in = [data](const Eigen::VectorXd& x, Eigen::VectorXd& out) { data->in.eval(x, out); };
  p.jac_eq_pattern = data->eq.jac_pattern;
  p.jac_in_pattern = data->in.jac_pattern;
  p.jac_eq_values = [data](const Eigen::VectorXd& x, Eigen::VectorXd& vals) {
    data->eq.jac_values(x, vals);
  };
  p.jac_in_values = [data](const Eigen::VectorXd& x, Eigen::VectorXd& vals) {
    data->in.jac_values(x, vals);
  };
  p.hess_pattern = data->hess_pattern;
  p.hess = [data](const Eigen::VectorXd& /*x*/, double sigma_f, const Eigen::VectorXd& y_eq,
                  const Eigen::VectorXd& y_in, Eigen::VectorXd& vals) {
    vals.setZero(static_cast<Eigen::Index>(data->hess_pattern.size()));
    for (const auto& s : data->hess_sources) {
      double w = s.kind == 0 ? sigma_f : (s.kind == 1 ? -y_eq[s.row] : -y_in[s.row]);
      vals[s.entry] += w * s.coef;
    }
  };
  return p;
}

void accumulate_jtv(const std::vector<QuadExpr>& rows, const std::vector<int>& dual_vars,
                    double sign, std::vector<QuadExpr>& out) {
  assert(rows.size() == dual_vars.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    const int mu = dual_vars[r];
    for (auto& [col, c] : rows[r].linear()) out[col].add_linear(mu, sign * c);
    for (auto& [k, c] : rows[r].quadratic()) {
      if (k.first == k.second) {
        out[k.first].add_quad(k.first, mu, sign * 2.0 * c);
      } else {
        out[k.first].add_quad(k.second, mu, sign * c);
        out[k.second].add_quad(k.first, mu, sign * c);
      }
    }
  }
}

}  // namespace dgp::quad
