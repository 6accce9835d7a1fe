#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hystfem/fem.hpp"

namespace hystfem {

enum class VerifyLevel { Quick, Full };

struct VerifyOptions {
  VerifyLevel level = VerifyLevel::Quick;
  std::uint64_t seed = 20240611;
  /// Fault injection: perturb the analytic energy gradient seen by the
  /// derivative check so that the suite must fail.
  bool corrupt_gradient = false;
};

struct CheckResult {
  std::string name;
  double value = 0.0;      // worst observed error
  double tolerance = 0.0;
  bool passed = false;
  double seconds = 0.0;
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool passed() const;
  /// Nullptr when everything passed.
  const CheckResult* first_failure() const;
  std::string table() const;
};

VerifyReport run_verify(const VerifyOptions& opts, const std::function<void(const CheckResult&)>& progress = {});

/// Unit square split along the diagonal (0,0)-(1,1): bottom and left edges
/// form wall w1, right and top edges gate g1. Node (1,1) is the only free
/// coefficient.
Mesh unit_square_mesh();

/// Small excited problem on unit_square_mesh: element source currents and
/// a previous polarization state. `cells` selects the first 1 or 2 rows of
/// the five-cell material.
struct TinyProblem {
  MaterialModel material;
  std::vector<double> source;
  std::vector<Vec2> J_prev;
};
TinyProblem tiny_problem(int cells);

}  // namespace hystfem
