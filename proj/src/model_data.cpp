#include "dgpricer/model.hpp"

namespace dgp::model {

// Bundled dataset texts. data/3bus.txt and data/34bus.txt ship the same
// content; tests keep them in sync.

const std::string& bundled_3bus_text() {
  static const std::string text = R"(# 3-bus radial test system, yearly purchase contract.
# Line impedances are catalogue ohm values for a 20 kV feeder; on the
# 10 MVA system base that is z_pu = z_ohm * 10 / 20^2 = z_ohm * 0.025,
# carried here as z_scale so the raw column matches the catalogue.
[network]
label = 3-bus test system, yearly contract
base_mva = 10
z_scale = 0.025

[bus]
# id v_min v_max
1 0.9 1.05
2 0.9 1.05
3 0.9 1.05

[line]
# from to z p_max_pu
1 2 1.236 1
2 3 1.144 1

[substation]
# bus p_min_pu p_max_pu
1 0 4

[dg]
# id bus p_min_mw p_max_mw cost_eur_mwh
DG1 2 0 1 60
DG2 3 0 1 60

[period]
# hours price_eur_mwh demand_pu per bus (order of [bus])
8760 60 0.2 0.2 0.2
)";
  return text;
}

const std::string& bundled_34bus_text() {
  static const std::string text = R"(# 34-bus radial distribution feeder, five-period load duration curve.
#
# REPLACEABLE LINE DATA: the feeder impedances below are synthetic defaults.
# The published study cites its 34-bus line data to external references that
# do not print impedances, so this file ships a radial layout whose series
# impedances are calibrated to reproduce the published no-DG loss profile
# (about 1.03 MW loss at the 10 MW peak; 4,709 MWh per year without generation). Substitute measured feeder data
# here if you have it; every other section can stay as is.
#
# Topology: trunk 1-2-...-27, lateral 8-28-29-30, lateral 16-31-32-33-34.
# Bus 1 is the subtransmission substation, bus 2 is an unloaded junction;
# the remaining 32 buses carry equal shares of the system demand.
#
# Period demand levels were reconstructed from published per-price-level
# market payments (peak pinned at 10 MW); they are stored explicitly so runs
# do not depend on re-deriving them.
[network]
label = 34-bus five-period system, base case units
base_mva = 10
z_scale = 1.0

[bus]
# id v_min v_max
1 0.9 1.05
2 0.9 1.05
3 0.9 1.05
4 0.9 1.05
5 0.9 1.05
6 0.9 1.05
7 0.9 1.05
8 0.9 1.05
9 0.9 1.05
10 0.9 1.05
11 0.9 1.05
12 0.9 1.05
13 0.9 1.05
14 0.9 1.05
15 0.9 1.05
16 0.9 1.05
17 0.9 1.05
18 0.9 1.05
19 0.9 1.05
20 0.9 1.05
21 0.9 1.05
22 0.9 1.05
23 0.9 1.05
24 0.9 1.05
25 0.9 1.05
26 0.9 1.05
27 0.9 1.05
28 0.9 1.05
29 0.9 1.05
30 0.9 1.05
31 0.9 1.05
32 0.9 1.05
33 0.9 1.05
34 0.9 1.05

[line]
# from to z p_max_pu     <- REPLACEABLE, see header note
1 2 0.009896 10
2 3 0.009896 10
3 4 0.009896 10
4 5 0.009896 10
5 6 0.009896 10
6 7 0.009896 10
7 8 0.009896 10
8 9 0.009896 10
9 10 0.009896 10
10 11 0.009896 10
11 12 0.009896 10
12 13 0.009896 10
13 14 0.009896 10
14 15 0.009896 10
15 16 0.009896 10
16 17 0.009896 10
17 18 0.009896 10
18 19 0.009896 10
19 20 0.009896 10
20 21 0.009896 10
21 22 0.009896 10
22 23 0.009896 10
23 24 0.009896 10
24 25 0.009896 10
25 26 0.009896 10
26 27 0.009896 10
8 28 0.009896 10
28 29 0.009896 10
29 30 0.009896 10
16 31 0.014844 10
31 32 0.014844 10
32 33 0.014844 10
33 34 0.014844 10

[substation]
1 0 10

[dg]
# base-case fleet; case variants adjust this section programmatically
DG1 17 0 1 60
DG2 24 0 1 60

[period]
# hours price demand_pu per bus: buses 1 and 2 carry no load,
# the other 32 buses share the period level equally.
1752 80 0 0 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125 0.03125
1752 70.8 0 0 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739 0.0249739
1752 62 0 0 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959 0.0202959
1752 50 0 0 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015 0.0187015
1752 41 0 0 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512 0.0178512
)";
  return text;
}

}  // namespace dgp::model
