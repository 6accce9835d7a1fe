#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "hystfem/config.hpp"
#include "hystfem/driver.hpp"
#include "hystfem/errors.hpp"
#include "hystfem/verify.hpp"

using namespace hystfem;

namespace {

enum Exit { kOk = 0, kConfig = 2, kSolver = 3, kIo = 4, kVerify = 5 };

RunConfig load_or_default(const std::string& path) { return path.empty() ? default_config() : load_config(path); }

std::filesystem::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory '{}': {}", dir, ec.message()));
  return dir;
}

void scrub_timings(CycleResult& r) {
  r.wall_time = 0.0;
  for (auto& s : r.steps) s.report.wall_time = 0.0;
}

void print_row(const SummaryRow& row) {
  fmt::print("level {}: {} dof, {} avg iterations {:.2f}, time {:.2f} s, loss {:.4f} J (steady cycle {:.4f} J)\n",
             row.level, row.dof, row.solver, row.avg_iterations, row.total_time_s, row.total_loss_J, row.steady_loss_J);
}

SummaryRow run_once(const RunConfig& cfg, const std::filesystem::path& dir, bool write_series) {
  const FeSpace space(build_mesh(cfg.mesh));
  CycleResult result = run_cycle(space, cfg.material, cfg.cycle, cfg.probes, cfg.solver, cfg.depth);
  if (cfg.output.deterministic) scrub_timings(result);
  if (write_series) {
    write_losses_csv((dir / "losses.csv").string(), result);
    write_probes_csv((dir / "probes.csv").string(), result, cfg.probes);
  }
  return summarize(space, result, cfg.cycle, cfg.solver.kind, cfg.mesh.refine);
}

int cmd_run(const std::string& config, const std::string& solver, const std::string& output) {
  RunConfig cfg = load_or_default(config);
  if (solver == "newton") cfg.solver.kind = SolverKind::Newton;
  if (solver == "bcd") cfg.solver.kind = SolverKind::Bcd;
  if (!output.empty()) cfg.output.directory = output;
  const auto dir = prepare_dir(cfg.output.directory);
  const SummaryRow row = run_once(cfg, dir, true);
  write_summary_csv((dir / "summary.csv").string(), {row});
  print_row(row);
  return kOk;
}

int cmd_convergence(const std::string& config, const std::string& solver, const std::string& output, int levels) {
  RunConfig cfg = load_or_default(config);
  if (solver == "newton") cfg.solver.kind = SolverKind::Newton;
  if (solver == "bcd") cfg.solver.kind = SolverKind::Bcd;
  if (!output.empty()) cfg.output.directory = output;
  const auto dir = prepare_dir(cfg.output.directory);
  std::vector<SummaryRow> rows;
  const int base = cfg.mesh.refine;
  for (int l = 0; l < levels; ++l) {
    RunConfig c = cfg;
    c.mesh.refine = base + l;
    const auto sub = prepare_dir((dir / fmt::format("level{}", c.mesh.refine)).string());
    rows.push_back(run_once(c, sub, true));
    print_row(rows.back());
    write_summary_csv((dir / "summary.csv").string(), rows);
  }
  return kOk;
}

int cmd_bh_curve(const std::string& config, const std::string& mode, double amplitude, int periods, int steps,
                 const std::string& output) {
  const RunConfig cfg = load_or_default(config);
  const auto curve =
      bh_curve(cfg.material, mode == "H" ? DriveQuantity::H : DriveQuantity::B, amplitude, periods, steps);
  write_bh_csv(output, curve);
  return kOk;
}

int cmd_verify(const std::string& level, const std::string& fault) {
  VerifyOptions opts;
  opts.level = level == "full" ? VerifyLevel::Full : VerifyLevel::Quick;
  opts.corrupt_gradient = fault == "gradient";
  const auto report = run_verify(opts, [](const CheckResult& c) {
    fmt::print(stderr, "  {:<50} {}\n", c.name, c.passed ? "ok" : "FAIL");
  });
  fmt::print("{}", report.table());
  if (const auto* f = report.first_failure()) {
    fmt::print(stderr, "verify failed: {}\n", f->name);
    return kVerify;
  }
  fmt::print("all {} checks passed\n", report.checks.size());
  return kOk;
}

int cmd_mesh_info(const std::string& config, const std::string& mesh_file, int refine, const std::string& write) {
  MeshSource src = load_or_default(config).mesh;
  if (!mesh_file.empty()) src.file = mesh_file;
  if (refine >= 0) src.refine = refine;
  const FeSpace space(build_mesh(src));
  const Mesh& mesh = space.mesh();
  fmt::print("nodes      {}\n", mesh.num_nodes());
  fmt::print("triangles  {}\n", mesh.num_triangles());
  fmt::print("free dofs  {}\n", space.num_free());
  fmt::print("area       {:.6g} m^2\n", mesh.total_area());
  fmt::print("walls      {}\n", space.num_walls());
  fmt::print("gates      {}\n", space.num_gates());
  for (const auto& seg : mesh.boundary_loop()) {
    fmt::print("  {:<4} {} edges\n", seg.label.str(), seg.nodes.size() - 1);
  }
  if (!write.empty()) {
    std::ofstream out(write);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", write));
    out << write_mesh(mesh);
    out.flush();
    if (!out) throw IoError(fmt::format("write to '{}' failed", write));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2D magnetoquasistatic FEM with vector hysteresis"};
  app.require_subcommand(1);

  std::string config;
  std::string solver;
  std::string output;

  auto* run = app.add_subcommand("run", "march the load cycle and write losses.csv, probes.csv and summary.csv");
  run->add_option("-c,--config", config, "INI run configuration (defaults when omitted)");
  run->add_option("-s,--solver", solver, "override the configured solver")->check(CLI::IsMember({"newton", "bcd"}));
  run->add_option("-o,--output", output, "override the output directory");

  int levels = 3;
  auto* study = app.add_subcommand("convergence-study", "run the cycle on successive uniform refinements");
  study->add_option("-c,--config", config, "INI run configuration");
  study->add_option("-s,--solver", solver, "override the configured solver")->check(CLI::IsMember({"newton", "bcd"}));
  study->add_option("-o,--output", output, "override the output directory");
  study->add_option("-l,--levels", levels, "number of refinement levels")->check(CLI::Range(1, 6));

  std::string mode = "H";
  double amplitude = 100.0;
  int periods = 2;
  int steps = 200;
  std::string curve_out = "bh_curve.csv";
  auto* bh = app.add_subcommand("bh-curve", "drive one material point with a sinusoidal H or B");
  bh->add_option("-c,--config", config, "INI file providing the [material] section");
  bh->add_option("-m,--mode", mode, "drive H [A/m] or B [T]")->check(CLI::IsMember({"H", "B"}));
  bh->add_option("-a,--amplitude", amplitude, "peak of the drive");
  bh->add_option("-p,--periods", periods, "number of periods");
  bh->add_option("-n,--steps", steps, "steps per period");
  bh->add_option("-o,--output", curve_out, "CSV file");

  std::string level = "quick";
  std::string fault;
  auto* verify = app.add_subcommand("verify", "run the oracle suite");
  verify->add_option("-l,--level", level, "quick or full")->check(CLI::IsMember({"quick", "full"}));
  verify->add_option("--inject-fault", fault, "test hook: corrupt a quantity before it is checked")
      ->check(CLI::IsMember({"gradient"}));

  auto* print = app.add_subcommand("print-config", "print the default (or the given) configuration");
  print->add_option("-c,--config", config, "INI run configuration");

  std::string mesh_file;
  std::string write;
  int refine = -1;
  auto* info = app.add_subcommand("mesh-info", "summarize the configured mesh");
  info->add_option("-c,--config", config, "INI run configuration");
  info->add_option("--mesh", mesh_file, "mesh file instead of the configured source");
  info->add_option("-r,--refine", refine, "uniform refinements");
  info->add_option("-w,--write", write, "write the (refined) mesh to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run) return cmd_run(config, solver, output);
    if (*study) return cmd_convergence(config, solver, output, levels);
    if (*bh) return cmd_bh_curve(config, mode, amplitude, periods, steps, curve_out);
    if (*verify) return cmd_verify(level, fault);
    if (*print) {
      fmt::print("{}", format_config(load_or_default(config)));
      return kOk;
    }
    if (*info) return cmd_mesh_info(config, mesh_file, refine, write);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "configuration error: {}\n", e.what());
    return kConfig;
  } catch (const FluxBalanceError& e) {
    fmt::print(stderr, "configuration error: {}\n", e.what());
    return kConfig;
  } catch (const MeshError& e) {
    fmt::print(stderr, "mesh error: {}\n", e.what());
    return kConfig;
  } catch (const IoError& e) {
    fmt::print(stderr, "i/o error: {}\n", e.what());
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    fmt::print(stderr, "i/o error: {}\n", e.what());
    return kIo;
  } catch (const Error& e) {
    fmt::print(stderr, "solver failure: {}\n", e.what());
    return kSolver;
  }
  return kOk;
}
