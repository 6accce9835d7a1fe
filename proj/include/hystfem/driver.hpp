#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hystfem/fem.hpp"
#include "hystfem/solvers.hpp"

namespace hystfem {

/// Three-phase gate flux excitation with a smooth start-up ramp:
///   Phi_l(t) = A a_l cos(2 pi t + phi_l) f(t),
///   f(t) = (1 - cos(pi t / ramp)) / 2 for t < ramp, 1 afterwards.
struct LoadCycle {
  int n_steps = 200;
  double tau = 0.01;            // s
  double flux_amplitude = 1.0;  // Wb per m depth
  double ramp = 0.25;           // s
  /// Per-gate amplitude factors a_l and phases phi_l. Empty selects the
  /// balanced default a_l = 1, phi_l = 2 pi l / 3.
  std::vector<double> gate_scales;
  std::vector<double> phases;

  double t_end() const { return n_steps * tau; }
  double time(int step) const { return step * tau; }
  int num_gates() const;
  /// Throws ConfigError for bad sizes and FluxBalanceError when the gate
  /// fluxes do not sum to zero at all times.
  void validate() const;
  std::vector<double> fluxes(double t) const;
};

/// Default balanced waveform of gate l (0-based), unit amplitude.
double flux_waveform(double t, int gate);

double ramp_factor(double t, double ramp = 0.25);

struct ProbePoint {
  std::string name;
  Vec2 point;
};

struct ProbeSet {
  std::vector<ProbePoint> points;

  /// Element index of every probe; throws MeshError for points outside.
  std::vector<std::size_t> locate(const Mesh& mesh) const;
};

struct ProbeValue {
  Vec2 B;
  Vec2 H;
};

ProbeValue probe(const FeSpace& space, const PotentialField& a, const PolarizationState& state,
                 const MaterialModel& m, const Vec2& point);

struct LossRecord {
  std::vector<double> step_energy;  // J per step
  std::vector<double> cumulative;   // J

  void push(double energy);
  double total() const { return cumulative.empty() ? 0.0 : cumulative.back(); }
};

/// Energy dissipated in one step: depth * sum_T area sum_k chi_k |J_k - J_p,k|.
double step_dissipation(const FeSpace& space, const PolarizationState& state, const MaterialModel& m,
                        double depth = 1.0);

/// Losses of a polarization history; `history[0]` is the initial state and
/// each further entry the element-major J after one step.
LossRecord iron_losses(const FeSpace& space, const std::vector<std::vector<Vec2>>& history,
                       const MaterialModel& m, double tau, double depth = 1.0);

enum class SolverKind { Newton, Bcd };

const char* solver_name(SolverKind kind);

struct SolverChoice {
  SolverKind kind = SolverKind::Newton;
  /// Move the free coefficients with the harmonic extension of the wall
  /// increments at every step (otherwise only the wall constants change).
  bool harmonic_lifting = true;
  NewtonConfig newton;
  BcdConfig bcd;
};

struct ProbeSample {
  int step;
  double t;
  std::size_t probe;
  ProbeValue value;
};

struct StepRecord {
  int step = 0;
  double t = 0.0;
  std::vector<double> fluxes;             // prescribed
  std::vector<double> recomputed_fluxes;  // boundary line integrals of the solution
  SolveReport report;
  double energy = 0.0;  // J
};

struct CycleResult {
  std::vector<StepRecord> steps;
  std::vector<ProbeSample> probes;
  LossRecord losses;
  PotentialField a;
  PolarizationState state;
  double wall_time = 0.0;  // s

  double average_iterations() const;
  /// Energy dissipated by the steps with t in (t0, t1].
  double loss_between(double t0, double t1) const;
};

/// Called after every converged step, before J_p is advanced.
using StepObserver =
    std::function<void(const StepRecord&, const PotentialField&, const PolarizationState&)>;

/// Marches the load cycle from the demagnetized state, warm-starting every
/// step from the previous solution. Solver failures are rethrown with the
/// step index.
CycleResult run_cycle(const FeSpace& space, const MaterialModel& m, const LoadCycle& cycle,
                      const ProbeSet& probes, const SolverChoice& solver, double depth = 1.0,
                      const StepObserver& observer = {});

enum class DriveQuantity { H, B };

struct BhSample {
  double t = 0.0;
  double H = 0.0;  // A/m
  double B = 0.0;  // T
  std::vector<double> J;  // per cell, T
  double loss = 0.0;      // cumulative sum_k chi_k |dJ_k| [J/m^3]
};

/// Single material point driven along x by amplitude * sin(2 pi t), t in
/// periods, starting demagnetized. H drive updates every cell
/// independently, B drive solves the joint local problem.
std::vector<BhSample> bh_curve(const MaterialModel& m, DriveQuantity drive, double amplitude, int periods,
                               int steps_per_period);

void write_bh_csv(const std::string& path, const std::vector<BhSample>& curve);

struct SummaryRow {
  std::size_t dof = 0;
  double avg_iterations = 0.0;
  double total_time_s = 0.0;
  double total_loss_J = 0.0;
  double steady_loss_J = 0.0;
  std::string solver;
  int level = 0;
};

SummaryRow summarize(const FeSpace& space, const CycleResult& result, const LoadCycle& cycle,
                     SolverKind kind, int level = 0);

void write_losses_csv(const std::string& path, const CycleResult& result);
void write_probes_csv(const std::string& path, const CycleResult& result, const ProbeSet& probes);
void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);

}  // namespace hystfem
