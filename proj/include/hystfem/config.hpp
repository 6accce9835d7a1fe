#pragma once

#include <string>
#include <string_view>

#include "hystfem/driver.hpp"
#include "hystfem/mesh.hpp"

namespace hystfem {

struct MeshSource {
  std::string file;  // empty selects the T-joint generator
  TJointParams tjoint;
  int refine = 0;
};

struct OutputConfig {
  std::string directory = "out";
  /// Write timing columns as 0 so that repeated runs give identical files.
  bool deterministic = false;
};

/// Everything a benchmark run needs. INI text with the sections [mesh],
/// [material], [solver], [cycle], [probes] and [output]; see
/// format_config for the full key list.
struct RunConfig {
  MeshSource mesh;
  MaterialModel material;
  SolverChoice solver;
  LoadCycle cycle;
  double depth = 1.0;  // m
  ProbeSet probes;
  OutputConfig output;

  /// Throws ConfigError (or FluxBalanceError for unbalanced gate waveforms).
  void validate() const;
};

RunConfig default_config();

/// Missing keys keep their defaults; unknown sections or keys are errors.
/// Relative mesh paths are resolved against `base_dir`.
RunConfig parse_config(std::string_view text, const std::string& base_dir = "");
RunConfig load_config(const std::string& path);
std::string format_config(const RunConfig& cfg);

/// Loads or generates the mesh and applies the uniform refinements.
Mesh build_mesh(const MeshSource& src);

}  // namespace hystfem
