#include "dgpricer/powerflow.hpp"

#include <cassert>
#include <cmath>

namespace dgp::pf {

double line_flow(double v_from, double v_to, double z) {
  assert(z > 0);
  return v_from * (v_from - v_to) / z;
}

FlowDerivatives flow_derivatives(double v_from, double v_to, double z) {
  assert(z > 0);
  return {(2.0 * v_from - v_to) / z, -v_from / z, 2.0 / z, -1.0 / z, 0.0};
}

Eigen::MatrixXd bus_mismatch(const model::Network& net, const VoltageProfile& v,
                             const InjectionProfile& inj) {
  const int K = static_cast<int>(net.buses.size());
  const int T = static_cast<int>(v.v.cols());
  assert(inj.p.rows() == K && inj.p.cols() == T && v.v.rows() == K);
  auto adj = net.adjacency();
  Eigen::MatrixXd r(K, T);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < K; ++k) {
      double acc = -inj.p(k, t);
      for (auto [l_bus, line] : adj[k])
        acc += line_flow(v.v(k, t), v.v(l_bus, t), net.line_z(line));
      r(k, t) = acc;
    }
  return r;
}

Eigen::MatrixXd mismatch_jacobian(const model::Network& net, const Eigen::VectorXd& v) {
  const int K = static_cast<int>(net.buses.size());
  auto adj = net.adjacency();
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(K, K);
  for (int k = 0; k < K; ++k)
    for (auto [l_bus, line] : adj[k]) {
      auto d = flow_derivatives(v[k], v[l_bus], net.line_z(line));
      J(k, k) += d.d_vfrom;
      J(k, l_bus) += d.d_vto;
    }
  return J;
}

double total_loss_single(const model::Network& net, const Eigen::VectorXd& v) {
  double loss = 0.0;
  for (size_t l = 0; l < net.lines.size(); ++l) {
    int a = net.bus_index(net.lines[l].from);
    int b = net.bus_index(net.lines[l].to);
    double dv = v[a] - v[b];
    loss += dv * dv / net.line_z(static_cast<int>(l));
  }
  return loss;
}

Eigen::VectorXd total_loss(const model::Network& net, const VoltageProfile& v) {
  Eigen::VectorXd out(v.v.cols());
  for (int t = 0; t < v.v.cols(); ++t) out[t] = total_loss_single(net, v.v.col(t));
  return out;
}

NetworkSolve solve_network(const model::Network& net, const Eigen::VectorXd& net_load,
                           double v_sub, double tol, int max_iter) {
  const int K = static_cast<int>(net.buses.size());
  const int sb = net.substation_index();
  auto adj = net.adjacency();

  NetworkSolve out;
  Eigen::VectorXd v = Eigen::VectorXd::Constant(K, v_sub);

  // Residuals of the non-substation balance rows; the substation row defines
  // the import once the voltages are known.
  auto residual = [&](const Eigen::VectorXd& vv) {
    Eigen::VectorXd r(K);
    for (int k = 0; k < K; ++k) {
      double acc = net_load[k];
      for (auto [l_bus, line] : adj[k]) acc += line_flow(vv[k], vv[l_bus], net.line_z(line));
      r[k] = acc;
    }
    return r;
  };

  Eigen::VectorXd r = residual(v);
  double rn = 0.0;
  for (int k = 0; k < K; ++k)
    if (k != sb) rn = std::max(rn, std::abs(r[k]));

  for (int it = 0; it < max_iter; ++it) {
    if (rn <= tol) {
      out.converged = true;
      out.iterations = it;
      break;
    }
    Eigen::MatrixXd J = mismatch_jacobian(net, v);
    // Reduce to non-substation rows/cols.
    Eigen::MatrixXd Jr(K - 1, K - 1);
    Eigen::VectorXd rr(K - 1);
    int ri = 0;
    for (int k = 0; k < K; ++k) {
      if (k == sb) continue;
      int ci = 0;
      for (int m = 0; m < K; ++m) {
        if (m == sb) continue;
        Jr(ri, ci++) = J(k, m);
      }
      rr[ri++] = r[k];
    }
    Eigen::VectorXd step = Jr.partialPivLu().solve(-rr);
    if (!step.allFinite()) break;

    // Damped update; keeps voltages positive.
    double alpha = 1.0;
    for (int ls = 0; ls < 50; ++ls) {
      Eigen::VectorXd v_try = v;
      int si = 0;
      for (int k = 0; k < K; ++k)
        if (k != sb) v_try[k] += alpha * step[si++];
      if (v_try.minCoeff() > 1e-3) {
        Eigen::VectorXd r_try = residual(v_try);
        double rn_try = 0.0;
        for (int k = 0; k < K; ++k)
          if (k != sb) rn_try = std::max(rn_try, std::abs(r_try[k]));
        if (rn_try < rn || alpha < 1e-8) {
          v = v_try;
          r = r_try;
          rn = rn_try;
          break;
        }
      }
      alpha *= 0.5;
      if (ls == 49) return out;  // no usable step
    }
  }
  if (!out.converged && rn <= tol) out.converged = true;

  out.v = v;
  // Substation row: net_load[sb] + sum flows - p_sb = 0.
  double acc = net_load[sb];
  for (auto [l_bus, line] : adj[sb]) acc += line_flow(v[sb], v[l_bus], net.line_z(line));
  out.p_sb = acc;
  out.loss = total_loss_single(net, v);
  return out;
}

}  // namespace dgp::pf
