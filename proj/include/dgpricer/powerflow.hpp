#pragma once

#include <Eigen/Dense>

#include "dgpricer/model.hpp"

namespace dgp::pf {

// Voltage magnitudes, one column per period, one row per bus.
struct VoltageProfile {
  Eigen::MatrixXd v;
};

// Net active injection per bus per period (p.u.): substation import plus DG
// generation minus demand.
struct InjectionProfile {
  Eigen::MatrixXd p;
};

// Approximate directed line flow seen from the `from` end:
//   P = v_from * (v_from - v_to) / z
double line_flow(double v_from, double v_to, double z);

struct FlowDerivatives {
  double d_vfrom;    // (2 v_from - v_to) / z
  double d_vto;      // -v_from / z
  double d2_vfrom2;  // 2 / z
  double d2_vfrom_vto;  // -1 / z
  double d2_vto2;    // 0
};
FlowDerivatives flow_derivatives(double v_from, double v_to, double z);

// Residual of the bus power balance, per bus per period:
//   r_k = -inj_k + sum_{l adjacent to k} line_flow(v_k, v_l, z_kl)
// where inj_k is the net injection (generation minus demand). Zero iff balanced.
Eigen::MatrixXd bus_mismatch(const model::Network& net, const VoltageProfile& v,
                             const InjectionProfile& inj);

// Jacobian of one period's mismatch w.r.t. that period's voltages (dense K x K).
Eigen::MatrixXd mismatch_jacobian(const model::Network& net, const Eigen::VectorXd& v);

// Model-consistent total loss per period: sum over lines of (v_k - v_l)^2 / z.
Eigen::VectorXd total_loss(const model::Network& net, const VoltageProfile& v);
double total_loss_single(const model::Network& net, const Eigen::VectorXd& v);

// Network solve with the substation voltage held at v_sub: Newton on the
// non-substation balance equations. `net_load` is demand minus local
// generation per bus (p.u.); the substation bus entry covers its local load.
// Returns the voltage vector, the substation import (p.u.) and the loss (p.u.).
struct NetworkSolve {
  Eigen::VectorXd v;
  double p_sb = 0.0;
  double loss = 0.0;
  bool converged = false;
  int iterations = 0;
};
NetworkSolve solve_network(const model::Network& net, const Eigen::VectorXd& net_load,
                           double v_sub, double tol = 1e-12, int max_iter = 60);

}  // namespace dgp::pf
