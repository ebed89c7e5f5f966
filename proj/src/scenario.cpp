#include "rehom/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

#include "rehom/errors.hpp"
#include "rehom/flow.hpp"
#include "rehom/io_util.hpp"

namespace rehom::scenario {

namespace {

const std::vector<std::string> kStages{"validate", "cells", "tensor",
                                       "flow",     "sweep", "sigma"};

const std::set<std::string> kSections{"field",   "cells", "domain", "forcing",
                                      "sweep",   "sigma", "output", "run"};

// Keys accepted per section; [field] additionally accepts family parameters,
// which the coefficient factory validates.
const std::map<std::string, std::set<std::string>> kKeys{
    {"field", {"family"}},
    {"cells", {"n_y", "n_z", "tol"}},
    {"domain", {"Lx", "Ly", "nx", "ny", "dt", "t_final"}},
    {"forcing", {"name", "amplitude"}},
    {"sweep", {"epsilons", "points_per_fine_period", "snapshots", "viscous_tol"}},
    {"sigma", {"epsilons", "min_points_per_fine_period"}},
    {"output", {"directory"}},
    {"run", {"threads", "seed", "stages"}},
};

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double to_plain_double(const std::string& tok, const std::string& where) {
  const std::string t = trim(tok);
  if (t.empty()) throw ConfigError(where + ": empty numeric value");
  const char* begin = t.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end != begin + t.size())
    throw ConfigError(where + ": '" + t + "' is not a number");
  if (!std::isfinite(v)) throw ConfigError(where + ": '" + t + "' is not finite");
  return v;
}

// Numbers accept plain decimals and fraction syntax "p/q".
double to_double(const std::string& tok, const std::string& where) {
  const std::string t = trim(tok);
  std::size_t slash = t.find('/');
  if (slash == std::string::npos) return to_plain_double(t, where);
  double num = to_plain_double(t.substr(0, slash), where);
  double den = to_plain_double(t.substr(slash + 1), where);
  if (den == 0.0) throw ConfigError(where + ": division by zero in '" + t + "'");
  return num / den;
}

long to_long(const std::string& tok, const std::string& where) {
  const std::string t = trim(tok);
  if (t.empty()) throw ConfigError(where + ": empty integer value");
  const char* begin = t.c_str();
  char* end = nullptr;
  long v = std::strtol(begin, &end, 10);
  if (end != begin + t.size())
    throw ConfigError(where + ": '" + t + "' is not an integer");
  return v;
}

std::uint64_t to_u64(const std::string& tok, const std::string& where) {
  const std::string t = trim(tok);
  if (t.empty() || t[0] == '-')
    throw ConfigError(where + ": '" + t + "' is not an unsigned integer");
  const char* begin = t.c_str();
  char* end = nullptr;
  unsigned long long v = std::strtoull(begin, &end, 10);
  if (end != begin + t.size())
    throw ConfigError(where + ": '" + t + "' is not an unsigned integer");
  return static_cast<std::uint64_t>(v);
}

std::vector<double> to_double_list(const std::string& tok, const std::string& where) {
  std::vector<double> out;
  if (trim(tok).empty()) return out;
  for (const std::string& part : split(tok, ','))
    out.push_back(to_double(part, where));
  return out;
}

void check_eps_list(const std::vector<double>& eps, const std::string& where) {
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (!(eps[i] > 0.0) || !(eps[i] < 1.0))
      throw ConfigError(where + ": epsilons must lie in (0,1)");
    if (i && !(eps[i] < eps[i - 1]))
      throw ConfigError(where + ": epsilons must be strictly decreasing");
  }
}

int derived_grid(double L, const std::vector<double>& eps) {
  if (eps.empty()) return 64;
  const double need = 8.0 * L / (eps.back() * eps.back());
  return static_cast<int>(std::ceil(need - 1e-9));
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += io::fmt_double(v[i]);
  }
  return out;
}

}  // namespace

const std::vector<std::string>& stage_names() { return kStages; }

Scenario parse_scenario(const std::string& text) {
  // Pass 1: collect raw (section, key) -> value with strict structure checks.
  std::map<std::string, std::map<std::string, std::string>> raw;
  std::string section;
  int lineno = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const std::string at = "line " + std::to_string(lineno);
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError(at + ": malformed section header '" + t + "'");
      section = trim(t.substr(1, t.size() - 2));
      if (!kSections.count(section))
        throw ConfigError(at + ": unknown section [" + section + "]");
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(at + ": expected 'key = value', got '" + t + "'");
    if (section.empty())
      throw ConfigError(at + ": key outside any [section]");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError(at + ": empty key");
    const std::set<std::string>& known = kKeys.at(section);
    if (!known.count(key) && section != "field")
      throw ConfigError(at + ": unknown key '" + key + "' in [" + section + "]");
    if (raw[section].count(key))
      throw ConfigError(at + ": duplicate key '" + key + "' in [" + section + "]");
    raw[section][key] = value;
  }

  // Pass 2: convert with range rules. Every rule is named in its error.
  Scenario s;
  auto take = [&raw](const std::string& sec, const std::string& key,
                     std::string& out) {
    auto si = raw.find(sec);
    if (si == raw.end()) return false;
    auto ki = si->second.find(key);
    if (ki == si->second.end()) return false;
    out = ki->second;
    si->second.erase(ki);
    return true;
  };
  std::string v;

  if (take("field", "family", v)) s.family = v;
  if (raw.count("field"))
    for (const auto& [key, value] : raw.at("field"))
      s.field_params[key] = to_double(value, "[field] " + key);
  // Unknown family parameters are the factory's to reject.
  coeff::make_builtin(s.family, s.field_params);

  if (take("cells", "n_y", v)) s.n_y = static_cast<int>(to_long(v, "[cells] n_y"));
  if (take("cells", "n_z", v)) s.n_z = static_cast<int>(to_long(v, "[cells] n_z"));
  if (take("cells", "tol", v)) s.cell_tol = to_double(v, "[cells] tol");
  for (auto [n, k] : {std::pair<int, const char*>{s.n_y, "n_y"}, {s.n_z, "n_z"}})
    if (n < 4 || n % 2 != 0 || n > 512)
      throw ConfigError(std::string("[cells] ") + k +
                        " must be even and in [4, 512], got " + std::to_string(n));
  if (!(s.cell_tol > 0.0) || s.cell_tol > 1e-2)
    throw ConfigError("[cells] tol must lie in (0, 1e-2]");

  if (take("domain", "Lx", v)) s.Lx = to_double(v, "[domain] Lx");
  if (take("domain", "Ly", v)) s.Ly = to_double(v, "[domain] Ly");
  if (take("domain", "nx", v)) s.nx = static_cast<int>(to_long(v, "[domain] nx"));
  if (take("domain", "ny", v)) s.ny = static_cast<int>(to_long(v, "[domain] ny"));
  if (take("domain", "dt", v)) s.dt = to_double(v, "[domain] dt");
  if (take("domain", "t_final", v)) s.t_final = to_double(v, "[domain] t_final");
  if (!(s.Lx > 0.0) || !(s.Ly > 0.0))
    throw ConfigError("[domain] Lx and Ly must be positive");
  if (s.nx < 0 || s.ny < 0 || (s.nx > 0 && s.nx < 8) || (s.ny > 0 && s.ny < 8))
    throw ConfigError("[domain] nx and ny must be 0 (derived) or >= 8");
  if (s.nx > 8192 || s.ny > 8192)
    throw ConfigError("[domain] nx and ny are capped at 8192");
  if (s.dt < 0.0) throw ConfigError("[domain] dt must be >= 0 (0 derives it)");
  if (!(s.t_final > 0.0)) throw ConfigError("[domain] t_final must be positive");

  if (take("forcing", "name", v)) s.forcing = v;
  if (take("forcing", "amplitude", v))
    s.forcing_amplitude = to_double(v, "[forcing] amplitude");
  flow::make_forcing(s.forcing, s.forcing_amplitude);  // catalog check

  if (take("sweep", "epsilons", v)) s.epsilons = to_double_list(v, "[sweep] epsilons");
  if (take("sweep", "points_per_fine_period", v))
    s.points_per_fine_period =
        static_cast<int>(to_long(v, "[sweep] points_per_fine_period"));
  if (take("sweep", "snapshots", v))
    s.snapshots = static_cast<int>(to_long(v, "[sweep] snapshots"));
  if (take("sweep", "viscous_tol", v))
    s.viscous_tol = to_double(v, "[sweep] viscous_tol");
  check_eps_list(s.epsilons, "[sweep] epsilons");
  if (s.points_per_fine_period < 2 || s.points_per_fine_period > 256)
    throw ConfigError("[sweep] points_per_fine_period must lie in [2, 256]");
  if (s.snapshots < 2 || s.snapshots > 1000)
    throw ConfigError("[sweep] snapshots must lie in [2, 1000]");
  if (!(s.viscous_tol > 0.0) || s.viscous_tol > 1e-2)
    throw ConfigError("[sweep] viscous_tol must lie in (0, 1e-2]");

  if (take("sigma", "epsilons", v))
    s.sigma_epsilons = to_double_list(v, "[sigma] epsilons");
  if (take("sigma", "min_points_per_fine_period", v))
    s.sigma_min_points =
        static_cast<int>(to_long(v, "[sigma] min_points_per_fine_period"));
  check_eps_list(s.sigma_epsilons, "[sigma] epsilons");
  if (s.sigma_min_points < 2 || s.sigma_min_points > 256)
    throw ConfigError("[sigma] min_points_per_fine_period must lie in [2, 256]");

  if (take("output", "directory", v)) s.out_dir = v;
  if (s.out_dir.empty()) throw ConfigError("[output] directory must be nonempty");

  if (take("run", "threads", v)) s.threads = static_cast<int>(to_long(v, "[run] threads"));
  if (take("run", "seed", v)) s.seed = to_u64(v, "[run] seed");
  if (take("run", "stages", v)) {
    std::set<std::string> picked;
    for (const std::string& part : split(v, ',')) {
      const std::string name = trim(part);
      if (std::find(kStages.begin(), kStages.end(), name) == kStages.end())
        throw ConfigError("[run] stages: unknown stage '" + name + "'");
      picked.insert(name);
    }
    s.stages.clear();
    for (const std::string& name : kStages)
      if (picked.count(name)) s.stages.push_back(name);
    if (s.stages.empty())
      throw ConfigError("[run] stages must select at least one stage");
  }
  if (s.threads < 1 || s.threads > 64)
    throw ConfigError("[run] threads must lie in [1, 64]");

  // Grids left at 0 are derived from the resolution rule nx >= 8 Lx / eps^2.
  if (s.nx == 0) s.nx = derived_grid(s.Lx, s.epsilons);
  if (s.ny == 0) s.ny = derived_grid(s.Ly, s.epsilons);
  return s;
}

Scenario parse_scenario_file(const std::string& path) {
  return parse_scenario(io::read_file(path));
}

std::string serialize_scenario(const Scenario& s) {
  std::string out;
  out += "[field]\nfamily = " + s.family + "\n";
  for (const auto& [key, value] : s.field_params)
    out += key + " = " + io::fmt_double(value) + "\n";
  out += "\n[cells]\n";
  out += "n_y = " + std::to_string(s.n_y) + "\n";
  out += "n_z = " + std::to_string(s.n_z) + "\n";
  out += "tol = " + io::fmt_double(s.cell_tol) + "\n";
  out += "\n[domain]\n";
  out += "Lx = " + io::fmt_double(s.Lx) + "\n";
  out += "Ly = " + io::fmt_double(s.Ly) + "\n";
  out += "nx = " + std::to_string(s.nx) + "\n";
  out += "ny = " + std::to_string(s.ny) + "\n";
  out += "dt = " + io::fmt_double(s.dt) + "\n";
  out += "t_final = " + io::fmt_double(s.t_final) + "\n";
  out += "\n[forcing]\n";
  out += "name = " + s.forcing + "\n";
  out += "amplitude = " + io::fmt_double(s.forcing_amplitude) + "\n";
  out += "\n[sweep]\n";
  out += "epsilons = " + join_doubles(s.epsilons) + "\n";
  out += "points_per_fine_period = " + std::to_string(s.points_per_fine_period) + "\n";
  out += "snapshots = " + std::to_string(s.snapshots) + "\n";
  out += "viscous_tol = " + io::fmt_double(s.viscous_tol) + "\n";
  out += "\n[sigma]\n";
  out += "epsilons = " + join_doubles(s.sigma_epsilons) + "\n";
  out += "min_points_per_fine_period = " + std::to_string(s.sigma_min_points) + "\n";
  out += "\n[output]\n";
  out += "directory = " + s.out_dir + "\n";
  out += "\n[run]\n";
  out += "threads = " + std::to_string(s.threads) + "\n";
  out += "seed = " + std::to_string(s.seed) + "\n";
  out += "stages = ";
  for (std::size_t i = 0; i < s.stages.size(); ++i)
    out += (i ? ", " : "") + s.stages[i];
  out += "\n";
  return out;
}

std::string scenario_hash(const Scenario& s) {
  return io::hex64(io::fnv1a64_str(serialize_scenario(s)));
}

void validate_scenario(const Scenario& s, bool override_resolution) {
  if (override_resolution || s.epsilons.empty()) return;
  const double eps = s.epsilons.back();
  for (auto [n, L, axis] :
       {std::tuple<int, double, const char*>{s.nx, s.Lx, "nx"}, {s.ny, s.Ly, "ny"}}) {
    const double need = 8.0 * L / (eps * eps);
    if (n + 1e-9 < need)
      throw ConfigError(std::string("resolution rule ") + axis +
                        " >= 8*L/eps^2 violated: " + axis + " = " +
                        std::to_string(n) + " but eps = " + io::fmt_double(eps) +
                        " needs at least " + io::fmt_double(need) +
                        " (pass --override-resolution to accept)");
  }
}

}  // namespace rehom::scenario
