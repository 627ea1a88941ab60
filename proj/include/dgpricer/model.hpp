#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgp::model {

// Raised when a dataset file cannot be tokenized/typed. Carries file:line context.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a parsed scenario violates a structural invariant. The message
// names the invariant that failed.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Bus {
  std::string id;
  double v_min = 0.9;   // p.u.
  double v_max = 1.05;  // p.u.
  // Optional operating-voltage pin (sensitivity studies). Adds an equality
  // V = v_pin to every problem built on this network.
  std::optional<double> v_pin;
};

struct Line {
  std::string from;
  std::string to;
  double z = 0.0;      // impedance magnitude, raw file value (see Network::z_scale)
  double p_max = 0.0;  // flow limit, p.u.
};

struct Substation {
  std::string bus;
  double p_min = 0.0;  // import bounds, p.u.
  double p_max = 0.0;
};

struct DgUnit {
  std::string id;
  std::string bus;
  double p_min = 0.0;  // MW
  double p_max = 0.0;  // MW
  double cost = 0.0;   // production cost, EUR/MWh
};

struct Period {
  int index = 0;
  double hours = 0.0;
  double market_price = 0.0;        // EUR/MWh at the substation
  std::vector<double> demand;       // p.u. per bus, in Network::buses order
};

struct Network {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  Substation substation;
  double base_mva = 10.0;
  // Multiplier applied to every raw line impedance before use. Kept explicit
  // because published datasets do not always state the voltage base; the
  // bundled files document their choice.
  double z_scale = 1.0;

  int bus_index(const std::string& id) const;  // -1 if unknown
  int substation_index() const;
  double line_z(int line) const { return lines[line].z * z_scale; }
  // Per-bus list of (neighbor bus, line index) pairs.
  std::vector<std::vector<std::pair<int, int>>> adjacency() const;
};

struct Scenario {
  Network network;
  std::vector<DgUnit> dgs;
  std::vector<Period> periods;
  std::string label;

  double total_hours() const;
};

// Throws ValidationError naming the violated invariant.
void validate(const Scenario& s);

Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const std::string& text, const std::string& origin);
std::string serialize(const Scenario& s);

// Built-in 3-bus study system (one yearly period, two 1 MW units).
Scenario build_3bus();

// Named bundled scenarios: "3bus", "6bus", "34bus-case1" .. "34bus-case4".
Scenario bundled_scenario(const std::string& name);
std::vector<std::string> bundled_scenario_names();

// Raw dataset text of the bundled files (same content as data/*.txt).
const std::string& bundled_3bus_text();
const std::string& bundled_34bus_text();

// Recovers per-period total demand levels (MW) from per-period market
// payments: finds d such that d plus the network's model loss at d equals
// payment / (price * hours). Bisection on a uniform per-node demand scale.
// Throws ValidationError if no feasible level exists within substation limits.
std::vector<double> reconstruct_demand_levels(const std::vector<double>& payments_eur,
                                              const std::vector<double>& prices_eur_mwh,
                                              const Network& network, double hours);

}  // namespace dgp::model
