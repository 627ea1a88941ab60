#include "dgpricer/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "dgpricer/powerflow.hpp"

namespace dgp::model {

int Network::bus_index(const std::string& id) const {
  for (size_t i = 0; i < buses.size(); ++i)
    if (buses[i].id == id) return static_cast<int>(i);
  return -1;
}

int Network::substation_index() const { return bus_index(substation.bus); }

std::vector<std::vector<std::pair<int, int>>> Network::adjacency() const {
  std::vector<std::vector<std::pair<int, int>>> adj(buses.size());
  for (size_t l = 0; l < lines.size(); ++l) {
    int a = bus_index(lines[l].from);
    int b = bus_index(lines[l].to);
    adj[a].push_back({b, static_cast<int>(l)});
    adj[b].push_back({a, static_cast<int>(l)});
  }
  return adj;
}

double Scenario::total_hours() const {
  double h = 0.0;
  for (const auto& p : periods) h += p.hours;
  return h;
}

namespace {

[[noreturn]] void fail(const std::string& what) { throw ValidationError(what); }

void validate_network(const Network& n) {
  if (n.buses.empty()) fail("network: at least one bus required");
  if (n.base_mva <= 0) fail("network: base_mva must be positive");
  if (n.z_scale <= 0) fail("network: z_scale must be positive");
  for (const auto& b : n.buses) {
    if (!(b.v_min > 0 && b.v_min < b.v_max))
      fail("bus " + b.id + ": requires 0 < v_min < v_max");
    if (b.v_pin && (*b.v_pin < b.v_min || *b.v_pin > b.v_max))
      fail("bus " + b.id + ": pinned voltage outside [v_min, v_max]");
    if (std::count_if(n.buses.begin(), n.buses.end(),
                      [&](const Bus& o) { return o.id == b.id; }) != 1)
      fail("bus " + b.id + ": duplicate id");
  }
  for (const auto& l : n.lines) {
    if (l.from == l.to) fail("line " + l.from + "-" + l.to + ": endpoints must differ");
    if (n.bus_index(l.from) < 0) fail("line " + l.from + "-" + l.to + ": unknown bus " + l.from);
    if (n.bus_index(l.to) < 0) fail("line " + l.from + "-" + l.to + ": unknown bus " + l.to);
    if (!(l.z > 0)) fail("line " + l.from + "-" + l.to + ": impedance must be positive");
    if (!(l.p_max > 0)) fail("line " + l.from + "-" + l.to + ": flow limit must be positive");
  }
  for (size_t i = 0; i < n.lines.size(); ++i)
    for (size_t j = i + 1; j < n.lines.size(); ++j) {
      const auto& a = n.lines[i];
      const auto& b = n.lines[j];
      if ((a.from == b.from && a.to == b.to) || (a.from == b.to && a.to == b.from))
        fail("line " + a.from + "-" + a.to + ": duplicate unordered pair");
    }
  if (n.substation_index() < 0) fail("substation: unknown bus " + n.substation.bus);
  if (!(n.substation.p_min >= 0 && n.substation.p_min <= n.substation.p_max))
    fail("substation: requires 0 <= p_min <= p_max");

  // connectivity
  std::vector<char> seen(n.buses.size(), 0);
  auto adj = n.adjacency();
  std::vector<int> stack = {0};
  seen[0] = 1;
  while (!stack.empty()) {
    int k = stack.back();
    stack.pop_back();
    for (auto [nb, l] : adj[k])
      if (!seen[nb]) {
        seen[nb] = 1;
        stack.push_back(nb);
      }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    fail("network: graph is not connected");
}

}  // namespace

void validate(const Scenario& s) {
  validate_network(s.network);
  for (const auto& dg : s.dgs) {
    if (s.network.bus_index(dg.bus) < 0) fail("dg " + dg.id + ": unknown bus " + dg.bus);
    if (!(dg.p_min >= 0 && dg.p_min <= dg.p_max))
      fail("dg " + dg.id + ": requires 0 <= p_min <= p_max");
    if (!(dg.cost >= 0)) fail("dg " + dg.id + ": cost must be nonnegative");
    if (std::count_if(s.dgs.begin(), s.dgs.end(),
                      [&](const DgUnit& o) { return o.id == dg.id; }) != 1)
      fail("dg " + dg.id + ": duplicate id");
  }
  if (s.periods.empty()) fail("scenario: at least one period required");
  for (const auto& p : s.periods) {
    if (!(p.hours > 0)) fail("period " + std::to_string(p.index) + ": hours must be positive");
    if (!(p.market_price >= 0))
      fail("period " + std::to_string(p.index) + ": market price must be nonnegative");
    if (p.demand.size() != s.network.buses.size())
      fail("period " + std::to_string(p.index) + ": demand must list one value per bus");
    for (double d : p.demand)
      if (!(d >= 0)) fail("period " + std::to_string(p.index) + ": demand must be nonnegative");
  }
}

// ---------------------------------------------------------------------------
// dataset parsing

namespace {

struct LineTokens {
  int lineno;
  std::vector<std::string> tok;
};

double to_num(const std::string& s, const std::string& origin, int lineno) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(origin + ":" + std::to_string(lineno) + ": expected a number, got '" + s +
                     "'");
  }
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& origin) {
  Scenario s;
  s.network.base_mva = 10.0;
  bool have_substation = false;
  std::string section;
  int period_counter = 0;

  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  auto err = [&](const std::string& what) {
    return ParseError(origin + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, raw)) {
    ++lineno;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    std::string t;
    while (ls >> t) tok.push_back(t);
    if (tok.empty()) continue;

    if (tok[0].front() == '[') {
      if (tok.size() != 1 || tok[0].back() != ']') throw err("malformed section header");
      section = tok[0].substr(1, tok[0].size() - 2);
      static const std::vector<std::string> known = {"network", "bus",       "line",
                                                     "substation", "dg", "period"};
      if (std::find(known.begin(), known.end(), section) == known.end())
        throw err("unknown section [" + section + "]");
      continue;
    }

    if (section == "network") {
      if (tok.size() < 3 || tok[1] != "=") throw err("expected 'key = value'");
      if (tok[0] == "base_mva")
        s.network.base_mva = to_num(tok[2], origin, lineno);
      else if (tok[0] == "z_scale")
        s.network.z_scale = to_num(tok[2], origin, lineno);
      else if (tok[0] == "label") {
        std::string label;
        for (size_t i = 2; i < tok.size(); ++i) label += (i > 2 ? " " : "") + tok[i];
        s.label = label;
      } else
        throw err("unknown network key '" + tok[0] + "'");
    } else if (section == "bus") {
      if (tok.size() < 3) throw err("bus row needs: id v_min v_max [pin=<v>]");
      Bus b;
      b.id = tok[0];
      b.v_min = to_num(tok[1], origin, lineno);
      b.v_max = to_num(tok[2], origin, lineno);
      if (tok.size() >= 4) {
        if (tok[3].rfind("pin=", 0) != 0) throw err("expected pin=<v>, got '" + tok[3] + "'");
        b.v_pin = to_num(tok[3].substr(4), origin, lineno);
      }
      s.network.buses.push_back(b);
    } else if (section == "line") {
      if (tok.size() != 4) throw err("line row needs: from to z_pu p_max_pu");
      Line l;
      l.from = tok[0];
      l.to = tok[1];
      l.z = to_num(tok[2], origin, lineno);
      l.p_max = to_num(tok[3], origin, lineno);
      s.network.lines.push_back(l);
    } else if (section == "substation") {
      if (tok.size() != 3) throw err("substation row needs: bus p_min_pu p_max_pu");
      if (have_substation) throw err("more than one substation row");
      s.network.substation.bus = tok[0];
      s.network.substation.p_min = to_num(tok[1], origin, lineno);
      s.network.substation.p_max = to_num(tok[2], origin, lineno);
      have_substation = true;
    } else if (section == "dg") {
      if (tok.size() != 5) throw err("dg row needs: id bus p_min_mw p_max_mw cost_eur_mwh");
      DgUnit d;
      d.id = tok[0];
      d.bus = tok[1];
      d.p_min = to_num(tok[2], origin, lineno);
      d.p_max = to_num(tok[3], origin, lineno);
      d.cost = to_num(tok[4], origin, lineno);
      s.dgs.push_back(d);
    } else if (section == "period") {
      if (tok.size() < 3) throw err("period row needs: hours price_eur_mwh demand_pu...");
      Period p;
      p.index = period_counter++;
      p.hours = to_num(tok[0], origin, lineno);
      p.market_price = to_num(tok[1], origin, lineno);
      for (size_t i = 2; i < tok.size(); ++i)
        p.demand.push_back(to_num(tok[i], origin, lineno));
      if (p.demand.size() != s.network.buses.size())
        throw err("period row lists " + std::to_string(p.demand.size()) + " demand values for " +
                  std::to_string(s.network.buses.size()) + " buses");
      s.periods.push_back(p);
    } else {
      throw err("data outside any section");
    }
  }
  if (!have_substation) throw ParseError(origin + ": missing [substation] section");
  validate(s);
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError(path + ": cannot open file");
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_scenario(buf.str(), path);
}

std::string serialize(const Scenario& s) {
  std::ostringstream out;
  out.precision(17);
  out << "[network]\n";
  if (!s.label.empty()) out << "label = " << s.label << "\n";
  out << "base_mva = " << s.network.base_mva << "\n";
  out << "z_scale = " << s.network.z_scale << "\n";
  out << "\n[bus]\n";
  for (const auto& b : s.network.buses) {
    out << b.id << " " << b.v_min << " " << b.v_max;
    if (b.v_pin) out << " pin=" << *b.v_pin;
    out << "\n";
  }
  out << "\n[line]\n";
  for (const auto& l : s.network.lines)
    out << l.from << " " << l.to << " " << l.z << " " << l.p_max << "\n";
  out << "\n[substation]\n"
      << s.network.substation.bus << " " << s.network.substation.p_min << " "
      << s.network.substation.p_max << "\n";
  out << "\n[dg]\n";
  for (const auto& d : s.dgs)
    out << d.id << " " << d.bus << " " << d.p_min << " " << d.p_max << " " << d.cost << "\n";
  out << "\n[period]\n";
  for (const auto& p : s.periods) {
    out << p.hours << " " << p.market_price;
    for (double d : p.demand) out << " " << d;
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// bundled systems

Scenario build_3bus() {
  Scenario s;
  s.label = "3-bus test system, yearly contract";
  s.network.base_mva = 10.0;
  // Published impedances are ohms on a 20 kV feeder: z_pu = z_ohm * 10 / 20^2.
  s.network.z_scale = 0.025;
  s.network.buses = {{"1", 0.9, 1.05, {}}, {"2", 0.9, 1.05, {}}, {"3", 0.9, 1.05, {}}};
  s.network.lines = {{"1", "2", 1.236, 1.0}, {"2", "3", 1.144, 1.0}};
  s.network.substation = {"1", 0.0, 4.0};
  s.dgs = {{"DG1", "2", 0.0, 1.0, 60.0}, {"DG2", "3", 0.0, 1.0, 60.0}};
  Period p;
  p.index = 0;
  p.hours = 8760.0;
  p.market_price = 60.0;
  p.demand = {0.2, 0.2, 0.2};
  s.periods = {p};
  validate(s);
  return s;
}

namespace {

Scenario build_6bus() {
  // Synthetic radial feeder used for cross-technique and competition studies.
  Scenario s;
  s.label = "6-bus synthetic feeder, two competing units";
  s.network.base_mva = 10.0;
  s.network.z_scale = 1.0;
  for (int k = 1; k <= 6; ++k)
    s.network.buses.push_back({std::to_string(k), 0.9, 1.05, {}});
  for (int k = 1; k <= 5; ++k)
    s.network.lines.push_back({std::to_string(k), std::to_string(k + 1), 0.02, 2.0});
  s.network.substation = {"1", 0.0, 5.0};
  s.dgs = {{"DG1", "4", 0.0, 1.0, 55.0}, {"DG2", "6", 0.0, 1.0, 55.0}};
  Period p1, p2;
  p1.index = 0;
  p1.hours = 4380.0;
  p1.market_price = 70.0;
  p1.demand = {0.0, 0.15, 0.15, 0.15, 0.15, 0.15};
  p2.index = 1;
  p2.hours = 4380.0;
  p2.market_price = 50.0;
  p2.demand = {0.0, 0.105, 0.105, 0.105, 0.105, 0.105};
  s.periods = {p1, p2};
  validate(s);
  return s;
}

Scenario build_34bus_case(int case_no) {
  Scenario s = parse_scenario(bundled_34bus_text(), "<bundled 34-bus>");
  // The bundled file carries the two base-case units (bus 17 and bus 24).
  if (case_no == 2) {
    s.dgs[0].cost = 70.0;
  } else if (case_no >= 3) {
    s.dgs.push_back({"DG3", "11", 0.0, 1.0, 60.0});
    if (case_no == 4) s.dgs.push_back({"DG4", "33", 0.0, 1.0, 60.0});
  }
  s.label = "34-bus case " + std::to_string(case_no);
  validate(s);
  return s;
}

}  // namespace

std::vector<std::string> bundled_scenario_names() {
  return {"3bus", "6bus", "34bus-case1", "34bus-case2", "34bus-case3", "34bus-case4"};
}

Scenario bundled_scenario(const std::string& name) {
  if (name == "3bus") return build_3bus();
  if (name == "6bus") return build_6bus();
  for (int c = 1; c <= 4; ++c)
    if (name == "34bus-case" + std::to_string(c)) return build_34bus_case(c);
  throw ValidationError("unknown bundled scenario '" + name + "'");
}

// ---------------------------------------------------------------------------
// demand-level reconstruction

std::vector<double> reconstruct_demand_levels(const std::vector<double>& payments_eur,
                                              const std::vector<double>& prices_eur_mwh,
                                              const Network& network, double hours) {
  if (payments_eur.size() != prices_eur_mwh.size())
    fail("reconstruct: payments and prices must have the same length");
  if (!(hours > 0)) fail("reconstruct: hours must be positive");
  validate_network(network);

  const int K = static_cast<int>(network.buses.size());
  const int sb = network.substation_index();
  const int load_buses = K - 1;
  if (load_buses == 0) fail("reconstruct: network has no load buses");
  const double v_sub = network.buses[sb].v_max;

  // Supply (p.u.) delivered when total demand D (p.u.) is spread uniformly
  // over the non-substation buses. NaN when the network solve fails.
  auto supply_at = [&](double d_total) {
    Eigen::VectorXd net_load = Eigen::VectorXd::Zero(K);
    for (int k = 0; k < K; ++k)
      if (k != sb) net_load[k] = d_total / load_buses;
    auto sol = pf::solve_network(network, net_load, v_sub);
    if (!sol.converged) return std::numeric_limits<double>::quiet_NaN();
    return sol.p_sb;
  };

  std::vector<double> levels;
  for (size_t t = 0; t < payments_eur.size(); ++t) {
    auto period_fail = [&](const std::string& why) {
      fail("reconstruct: period " + std::to_string(t) + ": " + why);
    };
    if (!(prices_eur_mwh[t] > 0)) period_fail("price must be positive");
    if (payments_eur[t] == 0.0) {
      levels.push_back(0.0);
      continue;
    }
    const double target = payments_eur[t] / (prices_eur_mwh[t] * hours) / network.base_mva;
    if (target < 0) period_fail("negative implied supply");
    if (target > network.substation.p_max + 1e-12)
      period_fail("implied supply exceeds the substation limit");

    // supply_at is strictly increasing in d; bracket then bisect.
    double lo = 0.0, hi = target;  // supply(d) >= d, so d* <= target
    double s_hi = supply_at(hi);
    if (std::isnan(s_hi) || s_hi < target) {
      // Loss makes supply(target) > target normally; NaN means the network
      // cannot carry this much uniform load at all.
      if (std::isnan(s_hi)) period_fail("no feasible demand level (network solve failed)");
    }
    for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, hi); ++it) {
      double mid = 0.5 * (lo + hi);
      double sm = supply_at(mid);
      if (std::isnan(sm)) period_fail("no feasible demand level (network solve failed)");
      (sm < target ? lo : hi) = mid;
    }
    levels.push_back(0.5 * (lo + hi) * network.base_mva);
  }
  return levels;
}

}  // namespace dgp::model
