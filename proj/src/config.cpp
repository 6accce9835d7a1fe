#include "hystfem/config.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "hystfem/errors.hpp"

namespace hystfem {

namespace {

namespace pt = boost::property_tree;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string where(const std::string& section, const std::string& key) { return section + "." + key; }

double to_double(const std::string& text, const std::string& ctx) {
  const std::string s = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError(fmt::format("{}: expected a finite number, got '{}'", ctx, s));
  }
  return v;
}

int to_int(const std::string& text, const std::string& ctx) {
  const std::string s = trim(text);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(fmt::format("{}: expected an integer, got '{}'", ctx, s));
  }
  return v;
}

bool to_bool(const std::string& text, const std::string& ctx) {
  std::string s = trim(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", ctx, s));
}

std::vector<double> to_list(const std::string& text, const std::string& ctx) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(item, ctx));
  return out;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += fmt::format("{}{}", i ? ", " : "", v[i]);
  return s;
}

// Cell rows are named cell1, cell2, ... and hold "A_s, J_s, chi".
int cell_number(const std::string& key) {
  if (key.size() < 5 || key.compare(0, 4, "cell") != 0) return 0;
  int n = 0;
  const auto [ptr, ec] = std::from_chars(key.data() + 4, key.data() + key.size(), n);
  if (ec != std::errc() || ptr != key.data() + key.size() || n < 1) return 0;
  return n;
}

void parse_mesh(const pt::ptree& s, RunConfig& cfg, const std::string& base_dir) {
  for (const auto& [key, node] : s) {
    const std::string v = node.data();
    const std::string ctx = where("mesh", key);
    if (key == "file") {
      cfg.mesh.file = trim(v);
      if (!cfg.mesh.file.empty() && !base_dir.empty() && std::filesystem::path(cfg.mesh.file).is_relative()) {
        cfg.mesh.file = (std::filesystem::path(base_dir) / cfg.mesh.file).string();
      }
    } else if (key == "outline_width") {
      cfg.mesh.tjoint.outline_width = to_double(v, ctx);
    } else if (key == "outline_height") {
      cfg.mesh.tjoint.outline_height = to_double(v, ctx);
    } else if (key == "limb_width") {
      cfg.mesh.tjoint.limb_width = to_double(v, ctx);
    } else if (key == "window_height") {
      cfg.mesh.tjoint.window_height = to_double(v, ctx);
    } else if (key == "mesh_size") {
      cfg.mesh.tjoint.mesh_size = to_double(v, ctx);
    } else if (key == "refine") {
      cfg.mesh.refine = to_int(v, ctx);
    } else {
      throw ConfigError(fmt::format("unknown key '{}'", ctx));
    }
  }
}

void parse_material(const pt::ptree& s, RunConfig& cfg) {
  std::optional<double> eps;
  std::optional<int> form;
  std::map<int, CellParams> rows;
  for (const auto& [key, node] : s) {
    const std::string ctx = where("material", key);
    if (key == "eps") {
      eps = to_double(node.data(), ctx);
    } else if (key == "form_coeff") {
      form = to_int(node.data(), ctx);
    } else if (const int n = cell_number(key); n > 0) {
      const auto row = to_list(node.data(), ctx);
      if (row.size() != 3) throw ConfigError(fmt::format("{}: expected 'A_s, J_s, chi', got {} values", ctx, row.size()));
      rows[n] = CellParams{row[0], row[1], row[2]};
    } else {
      throw ConfigError(fmt::format("unknown key '{}'", ctx));
    }
  }
  if (!rows.empty()) {
    std::vector<CellParams> cells;
    int expect = 1;
    for (const auto& [n, c] : rows) {
      if (n != expect) throw ConfigError(fmt::format("material: cell rows must be numbered 1..K, cell{} is missing", expect));
      cells.push_back(c);
      ++expect;
    }
    const double old_eps = cfg.material.cells.empty() ? 1e-10 : cfg.material.cells[0].eps;
    const int old_form = cfg.material.cells.empty() ? 2 : cfg.material.cells[0].form_coeff;
    for (auto& c : cells) {
      c.eps = old_eps;
      c.form_coeff = old_form;
    }
    cfg.material.cells = std::move(cells);
  }
  for (auto& c : cfg.material.cells) {
    if (eps) c.eps = *eps;
    if (form) c.form_coeff = *form;
  }
}

void parse_solver(const pt::ptree& s, RunConfig& cfg) {
  auto& nw = cfg.solver.newton;
  auto& bc = cfg.solver.bcd;
  for (const auto& [key, node] : s) {
    const std::string v = trim(node.data());
    const std::string ctx = where("solver", key);
    if (key == "solver") {
      if (v == "newton") {
        cfg.solver.kind = SolverKind::Newton;
      } else if (v == "bcd") {
        cfg.solver.kind = SolverKind::Bcd;
      } else {
        throw ConfigError(fmt::format("{}: expected newton or bcd, got '{}'", ctx, v));
      }
    } else if (key == "threads") {
      nw.threads = bc.threads = to_int(v, ctx);
    } else if (key == "linear") {
      if (v == "direct") {
        nw.linear = bc.linear = LinearSolverKind::Direct;
      } else if (v == "iterative") {
        nw.linear = bc.linear = LinearSolverKind::Iterative;
      } else {
        throw ConfigError(fmt::format("{}: expected direct or iterative, got '{}'", ctx, v));
      }
    } else if (key == "stop_reference") {
      if (v == "iterate") {
        nw.reference = bc.reference = StopReference::Iterate;
      } else if (v == "step_start") {
        nw.reference = bc.reference = StopReference::StepStart;
      } else {
        throw ConfigError(fmt::format("{}: expected iterate or step_start, got '{}'", ctx, v));
      }
    } else if (key == "harmonic_lifting") {
      cfg.solver.harmonic_lifting = to_bool(v, ctx);
    } else if (key == "sigma") {
      nw.sigma = to_double(v, ctx);
    } else if (key == "q") {
      nw.q = to_double(v, ctx);
    } else if (key == "rel_tol") {
      nw.rel_tol = bc.rel_tol = to_double(v, ctx);
    } else if (key == "residual_cap") {
      nw.residual_cap = to_double(v, ctx);
    } else if (key == "exact_polarization") {
      nw.exact_polarization = to_bool(v, ctx);
    } else if (key == "max_iter") {
      nw.max_iter = to_int(v, ctx);
    } else if (key == "max_backtracks") {
      nw.max_backtracks = to_int(v, ctx);
    } else if (key == "bcd_max_iter") {
      bc.max_iter = to_int(v, ctx);
    } else if (key == "bcd_residual_cap") {
      bc.residual_cap = to_double(v, ctx);
    } else if (key == "local_rel_tol") {
      nw.local.rel_tol = bc.local.rel_tol = to_double(v, ctx);
    } else if (key == "local_max_iter") {
      nw.local.max_iter = bc.local.max_iter = to_int(v, ctx);
    } else {
      throw ConfigError(fmt::format("unknown key '{}'", ctx));
    }
  }
}

void parse_cycle(const pt::ptree& s, RunConfig& cfg) {
  for (const auto& [key, node] : s) {
    const std::string v = node.data();
    const std::string ctx = where("cycle", key);
    if (key == "n_steps") {
      cfg.cycle.n_steps = to_int(v, ctx);
    } else if (key == "tau") {
      cfg.cycle.tau = to_double(v, ctx);
    } else if (key == "flux_amplitude") {
      cfg.cycle.flux_amplitude = to_double(v, ctx);
    } else if (key == "ramp") {
      cfg.cycle.ramp = to_double(v, ctx);
    } else if (key == "gate_scales") {
      cfg.cycle.gate_scales = to_list(v, ctx);
    } else if (key == "phases") {
      cfg.cycle.phases = to_list(v, ctx);
    } else if (key == "depth") {
      cfg.depth = to_double(v, ctx);
    } else {
      throw ConfigError(fmt::format("unknown key '{}'", ctx));
    }
  }
}

void parse_probes(const pt::ptree& s, RunConfig& cfg) {
  cfg.probes.points.clear();
  for (const auto& [key, node] : s) {
    const auto xy = to_list(node.data(), where("probes", key));
    if (xy.size() != 2) throw ConfigError(fmt::format("probes.{}: expected 'x, y'", key));
    cfg.probes.points.push_back({key, Vec2(xy[0], xy[1])});
  }
}

void parse_output(const pt::ptree& s, RunConfig& cfg) {
  for (const auto& [key, node] : s) {
    const std::string ctx = where("output", key);
    if (key == "directory") {
      cfg.output.directory = trim(node.data());
    } else if (key == "deterministic") {
      cfg.output.deterministic = to_bool(node.data(), ctx);
    } else {
      throw ConfigError(fmt::format("unknown key '{}'", ctx));
    }
  }
}

}  // namespace

RunConfig default_config() {
  RunConfig cfg;
  cfg.material = five_cell_material();
  cfg.cycle.flux_amplitude = 0.5;
  cfg.probes.points = {
      {"M1", {-0.6, 0.7}},         {"M2", {0.6, 0.7}},          {"M3", {0.0013, 0.25}},
      {"M4", {0.0013, 0.7}},       {"M5", {-0.1913, 0.5087}},   {"M6", {0.1913, 0.5087}},
  };
  return cfg;
}

void RunConfig::validate() const {
  if (mesh.file.empty()) {
    const auto& t = mesh.tjoint;
    if (!(t.outline_width > 0 && t.outline_height > 0 && t.limb_width > 0 && t.window_height > 0 && t.mesh_size > 0)) {
      throw ConfigError("mesh: T-joint dimensions and mesh_size must be positive");
    }
    if (!(t.limb_width < t.outline_width && t.window_height < t.outline_height)) {
      throw ConfigError("mesh: limb_width < outline_width and window_height < outline_height are required");
    }
  } else if (!std::filesystem::exists(mesh.file)) {
    throw ConfigError(fmt::format("mesh: file '{}' does not exist", mesh.file));
  }
  if (mesh.refine < 0 || mesh.refine > 6) throw ConfigError(fmt::format("mesh: refine must be in 0..6, got {}", mesh.refine));
  try {
    material.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (solver.kind == SolverKind::Newton) {
    for (const auto& c : material.cells) {
      if (c.pinning > 0.0 && !(c.eps > 0.0)) throw ConfigError("material: the newton solver needs eps > 0");
    }
  }
  solver.newton.validate();
  solver.bcd.validate();
  if (!(solver.newton.local.rel_tol > 0.0) || solver.newton.local.max_iter < 1) {
    throw ConfigError("solver: local_rel_tol must be positive and local_max_iter at least 1");
  }
  cycle.validate();
  if (!(depth > 0.0)) throw ConfigError(fmt::format("cycle: depth must be positive, got {}", depth));
  std::set<std::string> names;
  for (const auto& p : probes.points) {
    if (!names.insert(p.name).second) throw ConfigError(fmt::format("probes: duplicate name '{}'", p.name));
  }
  if (output.directory.empty()) throw ConfigError("output: directory must not be empty");
}

RunConfig parse_config(std::string_view text, const std::string& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("config line {}: {}", e.line(), e.message()));
  }
  RunConfig cfg = default_config();
  for (const auto& [name, section] : tree) {
    if (section.empty() && !section.data().empty()) {
      throw ConfigError(fmt::format("key '{}' appears outside of a section", name));
    }
    if (name == "mesh") {
      parse_mesh(section, cfg, base_dir);
    } else if (name == "material") {
      parse_material(section, cfg);
    } else if (name == "solver") {
      parse_solver(section, cfg);
    } else if (name == "cycle") {
      parse_cycle(section, cfg);
    } else if (name == "probes") {
      parse_probes(section, cfg);
    } else if (name == "output") {
      parse_output(section, cfg);
    } else {
      throw ConfigError(fmt::format("unknown section [{}]", name));
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  const auto dir = std::filesystem::path(path).parent_path().string();
  return parse_config(ss.str(), dir);
}

std::string format_config(const RunConfig& cfg) {
  std::string s;
  const auto& t = cfg.mesh.tjoint;
  s += "[mesh]\n";
  s += "; empty file selects the T-joint generator below\n";
  s += fmt::format("file = {}\n", cfg.mesh.file);
  s += fmt::format("outline_width = {}\noutline_height = {}\nlimb_width = {}\nwindow_height = {}\nmesh_size = {}\n",
                   t.outline_width, t.outline_height, t.limb_width, t.window_height, t.mesh_size);
  s += fmt::format("refine = {}\n\n", cfg.mesh.refine);

  s += "[material]\n";
  const auto& cells = cfg.material.cells;
  s += fmt::format("eps = {}\nform_coeff = {}\n", cells.empty() ? 1e-10 : cells[0].eps,
                   cells.empty() ? 2 : cells[0].form_coeff);
  s += "; A_s [A/m], J_s [T], chi [A/m]\n";
  for (std::size_t k = 0; k < cells.size(); ++k) {
    s += fmt::format("cell{} = {}, {}, {}\n", k + 1, cells[k].field_scale, cells[k].saturation, cells[k].pinning);
  }
  s += "\n";

  const auto& nw = cfg.solver.newton;
  const auto& bc = cfg.solver.bcd;
  s += "[solver]\n";
  s += fmt::format("solver = {}\n", solver_name(cfg.solver.kind));
  s += fmt::format("threads = {}\n", nw.threads);
  s += fmt::format("linear = {}\n", nw.linear == LinearSolverKind::Direct ? "direct" : "iterative");
  s += fmt::format("harmonic_lifting = {}\n", cfg.solver.harmonic_lifting);
  s += fmt::format("stop_reference = {}\n", nw.reference == StopReference::Iterate ? "iterate" : "step_start");
  s += fmt::format("sigma = {}\nq = {}\nrel_tol = {}\nresidual_cap = {}\nmax_iter = {}\nmax_backtracks = {}\n", nw.sigma,
                   nw.q, nw.rel_tol, nw.residual_cap, nw.max_iter, nw.max_backtracks);
  s += fmt::format("exact_polarization = {}\n", nw.exact_polarization);
  s += fmt::format("bcd_max_iter = {}\nbcd_residual_cap = {}\n", bc.max_iter, bc.residual_cap);
  s += fmt::format("local_rel_tol = {}\nlocal_max_iter = {}\n\n", nw.local.rel_tol, nw.local.max_iter);

  s += "[cycle]\n";
  s += fmt::format("n_steps = {}\ntau = {}\nflux_amplitude = {}\nramp = {}\n", cfg.cycle.n_steps, cfg.cycle.tau,
                   cfg.cycle.flux_amplitude, cfg.cycle.ramp);
  s += "; empty lists select three balanced phases\n";
  s += fmt::format("gate_scales = {}\nphases = {}\ndepth = {}\n\n", join(cfg.cycle.gate_scales),
                   join(cfg.cycle.phases), cfg.depth);

  s += "[probes]\n";
  for (const auto& p : cfg.probes.points) s += fmt::format("{} = {}, {}\n", p.name, p.point.x(), p.point.y());
  s += "\n";

  s += "[output]\n";
  s += fmt::format("directory = {}\ndeterministic = {}\n", cfg.output.directory, cfg.output.deterministic);
  return s;
}

Mesh build_mesh(const MeshSource& src) {
  Mesh mesh = src.file.empty() ? generate_tjoint(src.tjoint) : load_mesh_file(src.file);
  for (int i = 0; i < src.refine; ++i) mesh = refine_uniform(mesh);
  return mesh;
}

}  // namespace hystfem
