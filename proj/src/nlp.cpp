#include "dgpricer/nlp.hpp"

#include <cstdio>
#include <cstdlib>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

namespace dgp::nlp {

const char* status_name(Status s) {
  switch (s) {
    case Status::kSolved: return "solved";
    case Status::kMaxIter: return "max_iter";
    case Status::kInfeasible: return "infeasible";
    case Status::kNumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

double KktResidual::max() const {
  return std::max(stationarity, std::max(feasibility, complementarity));
}

namespace {

using Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

/* Primal-dual interior-point method with slack variables for the general
 * inequalities and log barriers on slacks and finite variable bounds.
 *
 * Step computation solves the symmetric quasi-definite system
 *
 *   [ W + Sigma_x + dw*I   J_e'            J_i'          ] [ dx  ]   [ bx ]
 *   [ J_e                  -dc*I           0             ] [ -dy ] = [ be ]
 *   [ J_i                  0               -(S/Y + dc*I) ] [ -dv ]   [ bi ]
 *
 * with bx = -grad f + J_e' y + J_i' v + mu/(x-lb) - mu/(ub-x),
 *      be = -c_e,  bi = -c_i + mu/v,
 * followed by recovery of the slack and bound-dual steps. The barrier update
 * and fraction-to-boundary rule follow Wächter & Biegler (2006); the
 * globalization is an exact-penalty merit line search, and wrong inertia is
 * handled by escalating dw as in Ipopt's IC heuristic. */
constexpr double kKappaMu = 0.2;
constexpr double kThetaMu = 1.5;
constexpr double kKappaEps = 10.0;    // barrier subproblem tolerance factor
constexpr double kKappaSigma = 1e10;  // dual-from-central-path deviation guard
constexpr double kArmijoEta = 1e-4;
constexpr int kMaxBacktrack = 30;

constexpr double kDeltaWMin = 1e-20;
constexpr double kDeltaWMax = 1e40;
constexpr double kDeltaW0 = 1e-4;
constexpr double kKappaWPlus = 8.0;
constexpr double kKappaWPlusBig = 100.0;
constexpr double kKappaWMinus = 1.0 / 3.0;
constexpr double kDeltaC = 1e-11;

bool finite_bound(double b) { return std::abs(b) < 1e20; }

std::string row_name(const std::vector<std::string>& names, int i, const char* prefix) {
  if (i < static_cast<int>(names.size()) && !names[i].empty()) return names[i];
  return std::string(prefix) + "[" + std::to_string(i) + "]";
}

// out[col] += vals[k] * y[row]
void add_jtv(const std::vector<std::pair<int, int>>& pat, const VectorXd& vals, const VectorXd& y,
             VectorXd& out) {
  for (size_t k = 0; k < pat.size(); ++k) out[pat[k].second] += vals[k] * y[pat[k].first];
}
// out[row] += vals[k] * v[col]
void add_jv(const std::vector<std::pair<int, int>>& pat, const VectorXd& vals, const VectorXd& v,
            VectorXd& out) {
  for (size_t k = 0; k < pat.size(); ++k) out[pat[k].first] += vals[k] * v[pat[k].second];
}

VectorXd default_start(const Problem& p) {
  VectorXd lb = p.lb.size() ? p.lb : VectorXd::Constant(p.n, -kInf);
  VectorXd ub = p.ub.size() ? p.ub : VectorXd::Constant(p.n, kInf);
  VectorXd x(p.n);
  for (int i = 0; i < p.n; ++i) {
    bool fl = finite_bound(lb[i]), fu = finite_bound(ub[i]);
    if (fl && fu)
      x[i] = 0.5 * (lb[i] + ub[i]);
    else if (fl)
      x[i] = lb[i] + 1.0;
    else if (fu)
      x[i] = ub[i] - 1.0;
    else
      x[i] = 0.0;
  }
  return x;
}

struct Eval {
  double f = 0.0;
  VectorXd grad, c_eq, c_in, jac_eq, jac_in;
  bool ok = true;
  std::string bad;
};

class IpmSolver {
 public:
  IpmSolver(const Problem& p, const Options& o) : p_(p), o_(o) {
    n_ = p.n;
    me_ = p.m_eq;
    mi_ = p.m_in;
    lb_ = p.lb.size() ? p.lb : VectorXd::Constant(n_, -kInf);
    ub_ = p.ub.size() ? p.ub : VectorXd::Constant(n_, kInf);
    has_lb_.resize(n_);
    has_ub_.resize(n_);
    for (int i = 0; i < n_; ++i) {
      has_lb_[i] = finite_bound(lb_[i]);
      has_ub_[i] = finite_bound(ub_[i]);
    }
  }

  Solution run(const VectorXd* start);

 private:
  const Problem& p_;
  const Options& o_;
  int n_ = 0, me_ = 0, mi_ = 0;
  VectorXd lb_, ub_;
  std::vector<char> has_lb_, has_ub_;

  VectorXd x_, s_, y_eq_, y_in_, z_lo_, z_hi_;
  double mu_ = 0.1;
  double nu_ = 10.0;
  double delta_w_last_ = 0.0;
  Eval ev_;
  std::ofstream trace_;

  Eigen::MatrixXd bfgs_;
  VectorXd qn_grad_prev_, qn_x_prev_;
  bool qn_have_prev_ = false;

  bool exact_hessian() const { return p_.hess && o_.hessian_mode == HessianMode::kExact; }
  bool evaluate(const VectorXd& x, Eval& ev, bool with_derivs);
  VectorXd grad_lagrangian(const Eval& ev) const;
  KktResidual public_residual(const Eval& ev) const;
  double barrier_error(const Eval& ev) const;
  double merit(double f, const VectorXd& c_eq, const VectorXd& c_in, const VectorXd& x,
               const VectorXd& s) const;
  bool assemble_and_solve(VectorXd& dx, VectorXd& dy_eq, VectorXd& dy_in, std::string* why);
  void update_bfgs();
  void try_polish();
};

bool IpmSolver::evaluate(const VectorXd& x, Eval& ev, bool with_derivs) {
  ev.ok = true;
  ev.bad.clear();
  ev.f = p_.objective(x);
  if (!std::isfinite(ev.f)) {
    ev.ok = false;
    ev.bad = "objective";
    return false;
  }
  ev.c_eq.setZero(me_);
  ev.c_in.setZero(mi_);
  if (me_) p_.eval_eq(x, ev.c_eq);
  if (mi_) p_.eval_in(x, ev.c_in);
  for (int i = 0; i < me_; ++i)
    if (!std::isfinite(ev.c_eq[i])) {
      ev.ok = false;
      ev.bad = row_name(p_.eq_names, i, "eq");
      return false;
    }
  for (int i = 0; i < mi_; ++i)
    if (!std::isfinite(ev.c_in[i])) {
      ev.ok = false;
      ev.bad = row_name(p_.in_names, i, "ineq");
      return false;
    }
  if (!with_derivs) return true;
  ev.grad.setZero(n_);
  p_.gradient(x, ev.grad);
  if (!ev.grad.allFinite()) {
    ev.ok = false;
    ev.bad = "gradient";
    return false;
  }
  ev.jac_eq.setZero(static_cast<Eigen::Index>(p_.jac_eq_pattern.size()));
  ev.jac_in.setZero(static_cast<Eigen::Index>(p_.jac_in_pattern.size()));
  if (me_) {
    p_.jac_eq_values(x, ev.jac_eq);
    if (ev.jac_eq.size() != static_cast<Eigen::Index>(p_.jac_eq_pattern.size()))
      throw std::invalid_argument(
          "nlp: equality Jacobian values do not match the published sparsity");
  }
  if (mi_) {
    p_.jac_in_values(x, ev.jac_in);
    if (ev.jac_in.size() != static_cast<Eigen::Index>(p_.jac_in_pattern.size()))
      throw std::invalid_argument(
          "nlp: inequality Jacobian values do not match the published sparsity");
  }
  if (!ev.jac_eq.allFinite() || !ev.jac_in.allFinite()) {
    ev.ok = false;
    ev.bad = "jacobian";
    return false;
  }
  return true;
}

VectorXd IpmSolver::grad_lagrangian(const Eval& ev) const {
  VectorXd g = ev.grad;
  add_jtv(p_.jac_eq_pattern, ev.jac_eq, -y_eq_, g);
  add_jtv(p_.jac_in_pattern, ev.jac_in, -y_in_, g);
  for (int i = 0; i < n_; ++i) {
    if (has_lb_[i]) g[i] -= z_lo_[i];
    if (has_ub_[i]) g[i] += z_hi_[i];
  }
  return g;
}

KktResidual IpmSolver::public_residual(const Eval& ev) const {
  // Stationarity and complementarity are scaled by the average multiplier
  // magnitude (the s_d/s_c device of Wächter & Biegler). Degenerate
  // complementarity systems are only asymptotically stationary with diverging
  // multipliers; the scaled test terminates where an unscaled one would grind
  // forever.
  KktResidual r;
  double dual_sum = 0.0;
  int dual_cnt = 0;
  for (int i = 0; i < me_; ++i) dual_sum += std::abs(y_eq_[i]);
  dual_cnt += me_;
  for (int i = 0; i < mi_; ++i) dual_sum += std::abs(y_in_[i]);
  dual_cnt += mi_;
  for (int i = 0; i < n_; ++i) {
    if (has_lb_[i]) {
      dual_sum += std::abs(z_lo_[i]);
      ++dual_cnt;
    }
    if (has_ub_[i]) {
      dual_sum += std::abs(z_hi_[i]);
      ++dual_cnt;
    }
  }
  const double s_max = 100.0;
  const double s_d = dual_cnt ? std::max(s_max, dual_sum / dual_cnt) / s_max : 1.0;

  r.stationarity = grad_lagrangian(ev).lpNorm<Eigen::Infinity>() / s_d;
  double feas = 0.0;
  for (int i = 0; i < me_; ++i) feas = std::max(feas, std::abs(ev.c_eq[i]));
  for (int i = 0; i < mi_; ++i) feas = std::max(feas, -std::min(0.0, ev.c_in[i]));
  for (int i = 0; i < n_; ++i) {
    if (has_lb_[i]) feas = std::max(feas, lb_[i] - x_[i]);
    if (has_ub_[i]) feas = std::max(feas, x_[i] - ub_[i]);
  }
  r.feasibility = feas;
  double comp = 0.0;
  for (int i = 0; i < mi_; ++i) comp = std::max(comp, std::abs(y_in_[i] * ev.c_in[i]));
  for (int i = 0; i < n_; ++i) {
    if (has_lb_[i]) comp = std::max(comp, std::abs(z_lo_[i] * (x_[i] - lb_[i])));
    if (has_ub_[i]) comp = std::max(comp, std::abs(z_hi_[i] * (ub_[i] - x_[i])));
  }
  r.complementarity = comp / s_d;
  return r;
}

double IpmSolver::barrier_error(const Eval& ev) const {
  double e = grad_lagrangian(ev).lpNorm<Eigen::Infinity>();
  for (int i = 0; i < me_; ++i) e = std::max(e, std::abs(ev.c_eq[i]));
  for (int i = 0; i < mi_; ++i) e = std::max(e, std::abs(ev.c_in[i] - s_[i]));
  for (int i = 0; i < mi_; ++i) e = std::max(e, std::abs(s_[i] * y_in_[i] - mu_));
  for (int i = 0; i < n_; ++i) {
    if (has_lb_[i]) e = std::max(e, std::abs(z_lo_[i] * (x_[i] - lb_[i]) - mu_));
    if (has_ub_[i]) e = std::max(e, std::abs(z_hi_[i] * (ub_[i] - x_[i]) - mu_));
  }
  return e;
}

double IpmSolver::merit(double f, const VectorXd& c_eq, const VectorXd& c_in, const VectorXd& x,
                        const VectorXd& s) const {
  double phi = f;
  for (int i = 0; i < mi_; ++i) {
    if (s[i] <= 0) return kInf;
    phi -= mu_ * std::log(s[i]);
  }
  for (int i = 0; i < n_; ++i) {
    if (has_lb_[i]) {
      if (x[i] - lb_[i] <= 0) return kInf;
      phi -= mu_ * std::log(x[i] - lb_[i]);
    }
    if (has_ub_[i]) {
      if (ub_[i] - x[i] <= 0) return kInf;
      phi -= mu_ * std::log(ub_[i] - x[i]);
    }
  }
  double theta = c_eq.lpNorm<1>();
  for (int i = 0; i < mi_; ++i) theta += std::abs(c_in[i] - s[i]);
  return phi + nu_ * theta;
}

void IpmSolver::update_bfgs() {
  VectorXd g = ev_.grad;
  add_jtv(p_.jac_eq_pattern, ev_.jac_eq, -y_eq_, g);
  add_jtv(p_.jac_in_pattern, ev_.jac_in, -y_in_, g);
  if (bfgs_.size() == 0) bfgs_ = Eigen::MatrixXd::Identity(n_, n_);
  if (qn_have_prev_) {
    VectorXd sk = x_ - qn_x_prev_;
    VectorXd yk = g - qn_grad_prev_;
    double sBs = sk.dot(bfgs_ * sk);
    double sy = sk.dot(yk);
    if (sBs > 1e-16) {
      double theta = 1.0;
      if (sy < 0.2 * sBs) theta = 0.8 * sBs / (sBs - sy);  // Powell damping
      VectorXd r = theta * yk + (1.0 - theta) * (bfgs_ * sk);
      double sr = sk.dot(r);
      if (sr > 1e-12 * sk.norm() * r.norm()) {
        VectorXd Bs = bfgs_ * sk;
        bfgs_ -= (Bs * Bs.transpose()) / sBs;
        bfgs_ += (r * r.transpose()) / sr;
      }
    }
  }
  qn_x_prev_ = x_;
  qn_grad_prev_ = g;
  qn_have_prev_ = true;
}

bool IpmSolver::assemble_and_solve(VectorXd& dx, VectorXd& dy_eq, VectorXd& dy_in,
                                   std::string* why) {
  const int N = n_ + me_ + mi_;

  VectorXd hvals;
  if (exact_hessian()) {
    hvals.setZero(static_cast<Eigen::Index>(p_.hess_pattern.size()));
    p_.hess(x_, 1.0, y_eq_, y_in_, hvals);
    if (!hvals.allFinite()) {
      *why = "hessian";
      return false;
    }
    if (hvals.size() != static_cast<Eigen::Index>(p_.hess_pattern.size()))
      throw std::invalid_argument("nlp: Hessian values do not match the published sparsity");
  } else if (n_ > 4000) {
    *why = "quasi-Newton mode limited to small problems";
    return false;
  }

  VectorXd sigma_x = VectorXd::Zero(n_);
  for (int i = 0; i < n_; ++i) {
    if (has_lb_[i]) sigma_x[i] += z_lo_[i] / (x_[i] - lb_[i]);
    if (has_ub_[i]) sigma_x[i] += z_hi_[i] / (ub_[i] - x_[i]);
  }

  VectorXd rhs(N);
  {
    VectorXd bx = -ev_.grad;
    add_jtv(p_.jac_eq_pattern, ev_.jac_eq, y_eq_, bx);
    add_jtv(p_.jac_in_pattern, ev_.jac_in, y_in_, bx);
    for (int i = 0; i < n_; ++i) {
      if (has_lb_[i]) bx[i] += mu_ / (x_[i] - lb_[i]);
      if (has_ub_[i]) bx[i] -= mu_ / (ub_[i] - x_[i]);
    }
    rhs.head(n_) = bx;
    if (me_) rhs.segment(n_, me_) = -ev_.c_eq;
    for (int i = 0; i < mi_; ++i) rhs[n_ + me_ + i] = -ev_.c_in[i] + mu_ / y_in_[i];
  }

  double delta_w = 0.0;
  bool first_bump = true;
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt;
  SpMat K(N, N);
  VectorXd sol;

  for (int attempt = 0; attempt < 60; ++attempt) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(p_.hess_pattern.size() + p_.jac_eq_pattern.size() + p_.jac_in_pattern.size() + N);
    VectorXd hdiag = sigma_x;
    hdiag.array() += delta_w;
    if (exact_hessian()) {
      for (size_t k = 0; k < p_.hess_pattern.size(); ++k) {
        auto [r, c] = p_.hess_pattern[k];
        if (r == c)
          hdiag[r] += hvals[k];
        else
          trip.emplace_back(std::max(r, c), std::min(r, c), hvals[k]);
      }
    } else {
      if (bfgs_.size() == 0) bfgs_ = Eigen::MatrixXd::Identity(n_, n_);
      for (int c = 0; c < n_; ++c) {
        hdiag[c] += bfgs_(c, c);
        for (int r = c + 1; r < n_; ++r)
          if (bfgs_(r, c) != 0.0) trip.emplace_back(r, c, bfgs_(r, c));
      }
    }
    for (int i = 0; i < n_; ++i) trip.emplace_back(i, i, hdiag[i]);
    for (size_t k = 0; k < p_.jac_eq_pattern.size(); ++k)
      trip.emplace_back(n_ + p_.jac_eq_pattern[k].first, p_.jac_eq_pattern[k].second,
                        ev_.jac_eq[k]);
    for (size_t k = 0; k < p_.jac_in_pattern.size(); ++k)
      trip.emplace_back(n_ + me_ + p_.jac_in_pattern[k].first, p_.jac_in_pattern[k].second,
                        ev_.jac_in[k]);
    for (int i = 0; i < me_; ++i) trip.emplace_back(n_ + i, n_ + i, -kDeltaC);
    for (int i = 0; i < mi_; ++i)
      trip.emplace_back(n_ + me_ + i, n_ + me_ + i, -(s_[i] / y_in_[i] + kDeltaC));

    K.setFromTriplets(trip.begin(), trip.end());
    ldlt.compute(K);

    bool ok = ldlt.info() == Eigen::Success;
    if (ok) {
      const auto& D = ldlt.vectorD();
      int n_pos = 0, n_neg = 0, n_zero = 0;
      if (!D.allFinite()) {
        ok = false;
      } else {
        for (int i = 0; i < D.size(); ++i) {
          if (D[i] > 1e-14)
            ++n_pos;
          else if (D[i] < -1e-14)
            ++n_neg;
          else
            ++n_zero;
        }
        ok = (n_pos == n_ && n_neg == me_ + mi_ && n_zero == 0);
      }
    }
    if (ok) {
      sol = ldlt.solve(rhs);
      ok = sol.allFinite();
      if (ok) {
        VectorXd resid = rhs - K.selfadjointView<Eigen::Lower>() * sol;
        double rn = resid.lpNorm<Eigen::Infinity>();
        double scale = std::max(1.0, rhs.lpNorm<Eigen::Infinity>());
        if (rn > 1e-10 * scale) {
          sol += ldlt.solve(resid);
          resid = rhs - K.selfadjointView<Eigen::Lower>() * sol;
          if (!sol.allFinite() || resid.lpNorm<Eigen::Infinity>() > 1e-6 * scale) ok = false;
        }
      }
    }
    if (ok) {
      delta_w_last_ = delta_w;
      dx = sol.head(n_);
      dy_eq = -sol.segment(n_, me_);
      dy_in = -sol.tail(mi_);
      return true;
    }
    if (first_bump) {
      delta_w =
          (delta_w_last_ == 0.0) ? kDeltaW0 : std::max(kDeltaWMin, kKappaWMinus * delta_w_last_);
      first_bump = false;
    } else {
      delta_w *= (delta_w_last_ == 0.0) ? kKappaWPlusBig : kKappaWPlus;
    }
    if (delta_w > kDeltaWMax) break;
  }
  *why = "kkt factorization failed";
  return false;
}

/* Clamp clearly-active inequalities and bounds to equalities and run Newton on
 * the resulting square KKT system. Machine-precision active-set solutions make
 * the complementarity products exact zeros; the result is kept only if every
 * public residual stays at least as good and the active duals keep their sign. */
void IpmSolver::try_polish() {
  const bool dbg = std::getenv("DGP_NLP_DEBUG") != nullptr;
  const double eps_act = 1e-6;
  std::vector<int> act_in, act_lo, act_hi;
  for (int i = 0; i < mi_; ++i)
    if (ev_.c_in[i] < eps_act && y_in_[i] > ev_.c_in[i]) act_in.push_back(i);
  for (int i = 0; i < n_; ++i) {
    if (has_lb_[i] && x_[i] - lb_[i] < eps_act && z_lo_[i] > x_[i] - lb_[i]) act_lo.push_back(i);
    if (has_ub_[i] && ub_[i] - x_[i] < eps_act && z_hi_[i] > ub_[i] - x_[i]) act_hi.push_back(i);
  }
  if (dbg)
    fprintf(stderr, "polish: act_in=%zu act_lo=%zu act_hi=%zu\n", act_in.size(), act_lo.size(),
            act_hi.size());
  if (act_in.empty() && act_lo.empty() && act_hi.empty()) return;
  if (!exact_hessian()) return;

  const int ma = static_cast<int>(act_in.size() + act_lo.size() + act_hi.size());
  const int N = n_ + me_ + ma;
  std::vector<int> in_row(mi_, -1);
  for (size_t k = 0; k < act_in.size(); ++k) in_row[act_in[k]] = static_cast<int>(k);

  VectorXd x = x_;
  VectorXd y_eq = y_eq_;
  VectorXd y_act(ma);
  {
    int k = 0;
    for (int j : act_in) y_act[k++] = y_in_[j];
    for (int i : act_lo) y_act[k++] = z_lo_[i];
    for (int i : act_hi) y_act[k++] = z_hi_[i];
  }

  Eval ev;
  for (int newton = 0; newton < 3; ++newton) {
    if (!evaluate(x, ev, true)) return;
    // Residual of the active-set stationarity system.
    VectorXd F1 = ev.grad;
    add_jtv(p_.jac_eq_pattern, ev.jac_eq, -y_eq, F1);
    {
      // full inequality dual vector with active entries replaced
      VectorXd y_full = y_in_;
      for (int j = 0; j < mi_; ++j)
        if (in_row[j] >= 0) y_full[j] = y_act[in_row[j]];
      add_jtv(p_.jac_in_pattern, ev.jac_in, -y_full, F1);
    }
    {
      int k = static_cast<int>(act_in.size());
      for (int i = 0; i < n_; ++i) {
        if (has_lb_[i]) F1[i] -= z_lo_[i];
        if (has_ub_[i]) F1[i] += z_hi_[i];
      }
      // replace the frozen contribution of active bound duals with unknowns
      for (int i : act_lo) {
        F1[i] += z_lo_[i];
        F1[i] -= y_act[k++];
      }
      for (int i : act_hi) {
        F1[i] -= z_hi_[i];
        F1[i] += y_act[k++];
      }
    }
    VectorXd rhs(N);
    rhs.head(n_) = -F1;
    for (int i = 0; i < me_; ++i) rhs[n_ + i] = -ev.c_eq[i];
    {
      int k = 0;
      for (int j : act_in) rhs[n_ + me_ + k++] = -ev.c_in[j];
      for (int i : act_lo) rhs[n_ + me_ + k++] = -(x[i] - lb_[i]);
      for (int i : act_hi) rhs[n_ + me_ + k++] = -(ub_[i] - x[i]);
    }
    if (rhs.lpNorm<Eigen::Infinity>() < 1e-15) break;

    VectorXd hvals(static_cast<Eigen::Index>(p_.hess_pattern.size()));
    {
      VectorXd y_full = y_in_;
      for (int j = 0; j < mi_; ++j)
        if (in_row[j] >= 0) y_full[j] = y_act[in_row[j]];
      p_.hess(x, 1.0, y_eq, y_full, hvals);
    }
    if (!hvals.allFinite()) return;

    std::vector<Eigen::Triplet<double>> trip;
    VectorXd hdiag = VectorXd::Constant(n_, 1e-12);
    for (size_t k = 0; k < p_.hess_pattern.size(); ++k) {
      auto [r, c] = p_.hess_pattern[k];
      if (r == c)
        hdiag[r] += hvals[k];
      else
        trip.emplace_back(std::max(r, c), std::min(r, c), hvals[k]);
    }
    for (int i = 0; i < n_; ++i) trip.emplace_back(i, i, hdiag[i]);
    for (size_t k = 0; k < p_.jac_eq_pattern.size(); ++k)
      trip.emplace_back(n_ + p_.jac_eq_pattern[k].first, p_.jac_eq_pattern[k].second,
                        ev.jac_eq[k]);
    for (size_t k = 0; k < p_.jac_in_pattern.size(); ++k) {
      int r = in_row[p_.jac_in_pattern[k].first];
      if (r >= 0) trip.emplace_back(n_ + me_ + r, p_.jac_in_pattern[k].second, ev.jac_in[k]);
    }
    {
      int k = static_cast<int>(act_in.size());
      for (int i : act_lo) trip.emplace_back(n_ + me_ + k++, i, 1.0);
      for (int i : act_hi) trip.emplace_back(n_ + me_ + k++, i, -1.0);
    }
    for (int i = 0; i < me_ + ma; ++i) trip.emplace_back(n_ + i, n_ + i, -1e-12);

    SpMat K(N, N);
    K.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt(K);
    if (ldlt.info() != Eigen::Success) {
      if (std::getenv("DGP_NLP_DEBUG")) fprintf(stderr, "polish: factorization failed\n");
      return;
    }
    VectorXd sol = ldlt.solve(rhs);
    if (!sol.allFinite()) return;
    VectorXd resid = rhs - K.selfadjointView<Eigen::Lower>() * sol;
    sol += ldlt.solve(resid);
    if (!sol.allFinite()) return;

    x += sol.head(n_);
    y_eq -= sol.segment(n_, me_);
    y_act -= sol.tail(ma);
  }

  // exact clamps
  for (int i : act_lo) x[i] = lb_[i];
  for (int i : act_hi) x[i] = ub_[i];

  // admissibility of the polished point
  for (int i = 0; i < n_; ++i) {
    if (has_lb_[i] && x[i] < lb_[i]) return;
    if (has_ub_[i] && x[i] > ub_[i]) return;
  }
  for (double v : y_act)
    if (v < -1e-9) return;
  if (!evaluate(x, ev, true)) return;
  for (int j = 0; j < mi_; ++j)
    if (in_row[j] < 0 && ev.c_in[j] < -o_.tol) return;

  // commit tentatively, roll back if the public residual got worse
  KktResidual prior = public_residual(ev_);
  VectorXd x_old = x_, yeq_old = y_eq_, yin_old = y_in_, zlo_old = z_lo_, zhi_old = z_hi_;
  Eval ev_old = ev_;
  x_ = x;
  y_eq_ = y_eq;
  {
    int k = 0;
    for (int j : act_in) y_in_[j] = std::max(0.0, y_act[k++]);
    for (int i : act_lo) z_lo_[i] = std::max(0.0, y_act[k++]);
    for (int i : act_hi) z_hi_[i] = std::max(0.0, y_act[k++]);
  }
  ev_ = ev;
  if (std::getenv("DGP_NLP_DEBUG"))
    fprintf(stderr, "polish: prior=%.2e after=%.2e\n", prior.max(), public_residual(ev_).max());
  if (public_residual(ev_).max() > std::max(prior.max(), o_.tol)) {
    x_ = x_old;
    y_eq_ = yeq_old;
    y_in_ = yin_old;
    z_lo_ = zlo_old;
    z_hi_ = zhi_old;
    ev_ = ev_old;
  }
}

Solution IpmSolver::run(const VectorXd* start) {
  auto t0 = std::chrono::steady_clock::now();
  Solution sol;
  sol.status = Status::kNumericalFailure;

  x_ = start ? *start : default_start(p_);
  if (x_.size() != n_) throw std::invalid_argument("nlp: start point has wrong dimension");
  for (int i = 0; i < n_; ++i) {
    if (has_lb_[i] && has_ub_[i] &&
        ub_[i] - lb_[i] < 2 * o_.bound_push * std::max(1.0, std::abs(lb_[i]))) {
      x_[i] = 0.5 * (lb_[i] + ub_[i]);
      continue;
    }
    if (has_lb_[i])
      x_[i] = std::max(x_[i], lb_[i] + o_.bound_push * std::max(1.0, std::abs(lb_[i])));
    if (has_ub_[i])
      x_[i] = std::min(x_[i], ub_[i] - o_.bound_push * std::max(1.0, std::abs(ub_[i])));
  }

  if (!evaluate(x_, ev_, true)) {
    sol.failure_detail = ev_.bad;
    sol.x = x_;
    return sol;
  }
  s_.resize(mi_);
  for (int i = 0; i < mi_; ++i) s_[i] = std::max(ev_.c_in[i], 1e-2);
  y_eq_ = VectorXd::Constant(me_, 1.0);
  y_in_ = VectorXd::Constant(mi_, 1.0);
  z_lo_ = VectorXd::Zero(n_);
  z_hi_ = VectorXd::Zero(n_);
  for (int i = 0; i < n_; ++i) {
    if (has_lb_[i]) z_lo_[i] = 1.0;
    if (has_ub_[i]) z_hi_[i] = 1.0;
  }
  mu_ = o_.mu0;
  nu_ = 10.0;
  delta_w_last_ = 0.0;
  qn_have_prev_ = false;
  bfgs_.resize(0, 0);

  if (!o_.trace_path.empty()) {
    trace_.open(o_.trace_path);
    trace_ << "iter,objective,barrier,stationarity,feasibility,complementarity,step\n";
  }

  const double mu_floor = o_.tol / 10.0;
  double theta_best = kInf, err_best = kInf, f_best = kInf;
  int stall = 0;
  double last_alpha = 0.0;

  int it = 0;
  bool done = false;
  for (; it < o_.max_iter && !done; ++it) {
    KktResidual res = public_residual(ev_);
    if (trace_.is_open())
      trace_ << it << "," << ev_.f << "," << mu_ << "," << res.stationarity << ","
             << res.feasibility << "," << res.complementarity << "," << last_alpha << "\n";
    if (res.stationarity <= o_.tol && res.feasibility <= o_.tol &&
        res.complementarity <= o_.tol) {
      sol.status = Status::kSolved;
      done = true;
      break;
    }

    double theta_now = 0.0;
    for (int i = 0; i < me_; ++i) theta_now = std::max(theta_now, std::abs(ev_.c_eq[i]));
    for (int i = 0; i < mi_; ++i) theta_now = std::max(theta_now, -std::min(0.0, ev_.c_in[i]));
    bool progressed = theta_now < theta_best * (1.0 - 1e-8) ||
                      res.max() < err_best * (1.0 - 1e-8) ||
                      ev_.f < f_best - 1e-10 * std::max(1.0, std::abs(f_best));
    if (progressed) {
      theta_best = std::min(theta_best, theta_now);
      err_best = std::min(err_best, res.max());
      f_best = std::min(f_best, ev_.f);
      stall = 0;
    } else if (++stall >= 30 && theta_now > 1e-4) {
      // violation parked well away from feasibility with nothing improving
      sol.status = Status::kInfeasible;
      done = true;
      break;
    }

    while (mu_ > mu_floor && barrier_error(ev_) <= kKappaEps * mu_)
      mu_ = std::max(mu_floor, std::min(kKappaMu * mu_, std::pow(mu_, kThetaMu)));

    VectorXd dx, dy_eq, dy_in;
    std::string why;
    if (!assemble_and_solve(dx, dy_eq, dy_in, &why)) {
      sol.failure_detail = why;
      sol.status = Status::kNumericalFailure;
      done = true;
      break;
    }
    VectorXd ds = VectorXd::Zero(mi_);
    add_jv(p_.jac_in_pattern, ev_.jac_in, dx, ds);
    for (int i = 0; i < mi_; ++i) ds[i] += ev_.c_in[i] - s_[i];

    VectorXd dz_lo = VectorXd::Zero(n_), dz_hi = VectorXd::Zero(n_);
    for (int i = 0; i < n_; ++i) {
      if (has_lb_[i])
        dz_lo[i] = mu_ / (x_[i] - lb_[i]) - z_lo_[i] - z_lo_[i] / (x_[i] - lb_[i]) * dx[i];
      if (has_ub_[i])
        dz_hi[i] = mu_ / (ub_[i] - x_[i]) - z_hi_[i] + z_hi_[i] / (ub_[i] - x_[i]) * dx[i];
    }

    const double tau = o_.bound_frac;
    double a_primal = 1.0, a_dual = 1.0;
    for (int i = 0; i < mi_; ++i) {
      if (ds[i] < 0) a_primal = std::min(a_primal, -tau * s_[i] / ds[i]);
      if (dy_in[i] < 0) a_dual = std::min(a_dual, -tau * y_in_[i] / dy_in[i]);
    }
    for (int i = 0; i < n_; ++i) {
      if (has_lb_[i]) {
        if (dx[i] < 0) a_primal = std::min(a_primal, -tau * (x_[i] - lb_[i]) / dx[i]);
        if (dz_lo[i] < 0) a_dual = std::min(a_dual, -tau * z_lo_[i] / dz_lo[i]);
      }
      if (has_ub_[i]) {
        if (dx[i] > 0) a_primal = std::min(a_primal, tau * (ub_[i] - x_[i]) / dx[i]);
        if (dz_hi[i] < 0) a_dual = std::min(a_dual, -tau * z_hi_[i] / dz_hi[i]);
      }
    }

    double dual_scale = 0.0;
    if (me_) dual_scale = std::max(dual_scale, (y_eq_ + dy_eq).lpNorm<Eigen::Infinity>());
    if (mi_) dual_scale = std::max(dual_scale, (y_in_ + dy_in).lpNorm<Eigen::Infinity>());
    if (dual_scale * 1.2 + 1.0 > nu_) nu_ = dual_scale * 1.2 + 1.0;

    double theta0 = ev_.c_eq.lpNorm<1>();
    for (int i = 0; i < mi_; ++i) theta0 += std::abs(ev_.c_in[i] - s_[i]);
    double dphi = ev_.grad.dot(dx) - nu_ * theta0;
    for (int i = 0; i < mi_; ++i) dphi -= mu_ * ds[i] / s_[i];
    for (int i = 0; i < n_; ++i) {
      if (has_lb_[i]) dphi -= mu_ * dx[i] / (x_[i] - lb_[i]);
      if (has_ub_[i]) dphi += mu_ * dx[i] / (ub_[i] - x_[i]);
    }

    double phi0 = merit(ev_.f, ev_.c_eq, ev_.c_in, x_, s_);
    double alpha = a_primal;
    bool accepted = false;
    Eval ev_try;
    for (int bt = 0; bt < kMaxBacktrack; ++bt) {
      VectorXd x_try = x_ + alpha * dx;
      VectorXd s_try = s_ + alpha * ds;
      if (evaluate(x_try, ev_try, false)) {
        double phi = merit(ev_try.f, ev_try.c_eq, ev_try.c_in, x_try, s_try);
        // round-off allowance keeps the endgame from stalling on noise
        if (phi <= phi0 + kArmijoEta * alpha * std::min(dphi, 0.0) +
                       1e-14 * (1.0 + std::abs(phi0))) {
          x_ = x_try;
          s_ = s_try;
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    double alpha_y = alpha;
    if (!accepted) {
      // The merit function is dual-independent: near a feasible point with a
      // negligible primal step, second-order feasibility noise can veto the
      // step forever (Maratos-style). Take the pure dual Newton correction,
      // which is what still carries the remaining stationarity error.
      if (theta_now <= 1e-6 &&
          dx.lpNorm<Eigen::Infinity>() <= 1e-6 * (1.0 + x_.lpNorm<Eigen::Infinity>())) {
        alpha = 0.0;
        alpha_y = a_dual;
      } else {
        alpha = std::min(1e-10, a_primal);
        alpha_y = alpha;
        x_ += alpha * dx;
        s_ += alpha * ds;
      }
    }
    last_alpha = alpha;

    y_eq_ += alpha_y * dy_eq;
    y_in_ += a_dual * dy_in;
    for (int i = 0; i < n_; ++i) {
      if (has_lb_[i]) z_lo_[i] += a_dual * dz_lo[i];
      if (has_ub_[i]) z_hi_[i] += a_dual * dz_hi[i];
    }
    for (int i = 0; i < mi_; ++i) {
      double c = mu_ / s_[i];
      y_in_[i] = std::min(std::max(y_in_[i], c / kKappaSigma), c * kKappaSigma);
    }
    for (int i = 0; i < n_; ++i) {
      if (has_lb_[i]) {
        double c = mu_ / (x_[i] - lb_[i]);
        z_lo_[i] = std::min(std::max(z_lo_[i], c / kKappaSigma), c * kKappaSigma);
      }
      if (has_ub_[i]) {
        double c = mu_ / (ub_[i] - x_[i]);
        z_hi_[i] = std::min(std::max(z_hi_[i], c / kKappaSigma), c * kKappaSigma);
      }
    }

    if (!evaluate(x_, ev_, true)) {
      sol.failure_detail = ev_.bad;
      sol.status = Status::kNumericalFailure;
      done = true;
      break;
    }
    if (!exact_hessian()) update_bfgs();
  }

  if (!done) {
    KktResidual res = public_residual(ev_);
    sol.status = (res.stationarity <= o_.tol && res.feasibility <= o_.tol &&
                  res.complementarity <= o_.tol)
                     ? Status::kSolved
                     : Status::kMaxIter;
  }

  // The active-set polish also rescues nearly-converged runs that ran out of
  // iterations grinding on a degenerate endgame.
  if (o_.polish && (sol.status == Status::kSolved ||
                    (sol.status == Status::kMaxIter &&
                     public_residual(ev_).feasibility <= 1e-6 &&
                     public_residual(ev_).complementarity <= 1e-3))) {
    try_polish();
    KktResidual res = public_residual(ev_);
    if (res.stationarity <= o_.tol && res.feasibility <= o_.tol &&
        res.complementarity <= o_.tol)
      sol.status = Status::kSolved;
  }

  sol.x = x_;
  sol.lambda_eq = y_eq_;
  sol.mu_ineq = y_in_;
  sol.z_lower = z_lo_;
  sol.z_upper = z_hi_;
  sol.objective = ev_.f;
  sol.kkt = public_residual(ev_);
  sol.iters = it;
  sol.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sol;
}

}  // namespace

Solution solve(const Problem& p, const Options& opts) {
  IpmSolver s(p, opts);
  return s.run(nullptr);
}

Solution solve(const Problem& p, const Options& opts, const Eigen::VectorXd& start) {
  IpmSolver s(p, opts);
  return s.run(&start);
}

KktResidual kkt_residual(const Problem& p, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& lambda_eq, const Eigen::VectorXd& mu_ineq,
                         const Eigen::VectorXd& z_lower, const Eigen::VectorXd& z_upper) {
  KktResidual r;
  VectorXd lb = p.lb.size() ? p.lb : VectorXd::Constant(p.n, -kInf);
  VectorXd ub = p.ub.size() ? p.ub : VectorXd::Constant(p.n, kInf);

  VectorXd g(p.n);
  p.gradient(x, g);
  VectorXd c_eq(p.m_eq), c_in(p.m_in);
  if (p.m_eq) p.eval_eq(x, c_eq);
  if (p.m_in) p.eval_in(x, c_in);
  VectorXd je(static_cast<Eigen::Index>(p.jac_eq_pattern.size()));
  VectorXd ji(static_cast<Eigen::Index>(p.jac_in_pattern.size()));
  if (p.m_eq) p.jac_eq_values(x, je);
  if (p.m_in) p.jac_in_values(x, ji);

  VectorXd stat = g;
  add_jtv(p.jac_eq_pattern, je, -lambda_eq, stat);
  add_jtv(p.jac_in_pattern, ji, -mu_ineq, stat);
  for (int i = 0; i < p.n; ++i) {
    if (finite_bound(lb[i]) && z_lower.size()) stat[i] -= z_lower[i];
    if (finite_bound(ub[i]) && z_upper.size()) stat[i] += z_upper[i];
  }
  r.stationarity = stat.lpNorm<Eigen::Infinity>();

  double feas = 0.0;
  for (int i = 0; i < p.m_eq; ++i) feas = std::max(feas, std::abs(c_eq[i]));
  for (int i = 0; i < p.m_in; ++i) feas = std::max(feas, -std::min(0.0, c_in[i]));
  for (int i = 0; i < p.n; ++i) {
    if (finite_bound(lb[i])) feas = std::max(feas, lb[i] - x[i]);
    if (finite_bound(ub[i])) feas = std::max(feas, x[i] - ub[i]);
  }
  r.feasibility = feas;

  double comp = 0.0;
  for (int i = 0; i < p.m_in; ++i) comp = std::max(comp, std::abs(mu_ineq[i] * c_in[i]));
  for (int i = 0; i < p.n; ++i) {
    if (finite_bound(lb[i]) && z_lower.size())
      comp = std::max(comp, std::abs(z_lower[i] * (x[i] - lb[i])));
    if (finite_bound(ub[i]) && z_upper.size())
      comp = std::max(comp, std::abs(z_upper[i] * (ub[i] - x[i])));
  }
  r.complementarity = comp;
  return r;
}

MultistartResult multistart_solve(const Problem& p, const Options& opts) {
  return multistart_solve(p, opts, default_start(p));
}

MultistartResult multistart_solve(const Problem& p, const Options& opts,
                                  const Eigen::VectorXd& start) {
  const int k = std::max(1, opts.multistart);
  VectorXd lb = p.lb.size() ? p.lb : VectorXd::Constant(p.n, -kInf);
  VectorXd ub = p.ub.size() ? p.ub : VectorXd::Constant(p.n, kInf);

  std::vector<VectorXd> starts(k);
  starts[0] = start;
  for (int a = 1; a < k; ++a) {
    std::mt19937_64 rng(opts.seed + 0x9e3779b97f4a7c15ULL * static_cast<unsigned long long>(a));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    VectorXd xs = start;
    for (int i = 0; i < p.n; ++i) {
      double scale;
      if (finite_bound(lb[i]) && finite_bound(ub[i]))
        scale = std::min(ub[i] - lb[i], std::max(1.0, std::abs(start[i])));
      else
        scale = std::max(1.0, std::abs(start[i]));
      xs[i] += 0.1 * scale * u(rng);
      if (finite_bound(lb[i])) xs[i] = std::max(xs[i], lb[i]);
      if (finite_bound(ub[i])) xs[i] = std::min(xs[i], ub[i]);
    }
    starts[a] = xs;
  }

  MultistartResult out;
  out.attempts.resize(k);
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::future<Solution>> futures(k);
  int launched = 0;
  auto launch = [&](int a) {
    Options o = opts;
    if (!opts.trace_path.empty() && k > 1)
      o.trace_path = opts.trace_path + "." + std::to_string(a);
    futures[a] = std::async(std::launch::async,
                            [&p, o, xs = starts[a]] { return solve(p, o, xs); });
  };
  // bounded concurrency, deterministic collection order
  int next_collect = 0;
  while (next_collect < k) {
    while (launched < k && launched - next_collect < static_cast<int>(hw)) launch(launched++);
    out.attempts[next_collect] = futures[next_collect].get();
    ++next_collect;
  }

  int best = -1;
  for (int a = 0; a < k; ++a) {
    const auto& s = out.attempts[a];
    if (s.status != Status::kSolved) continue;
    if (best < 0 || s.objective < out.attempts[best].objective - 1e-15) best = a;
  }
  if (best < 0) {
    for (int a = 0; a < k; ++a)
      if (best < 0 || out.attempts[a].kkt.max() < out.attempts[best].kkt.max()) best = a;
  }
  out.best_index = best;
  out.best = out.attempts[best];
  return out;
}

}  // namespace dgp::nlp
