#pragma once

#include <cstdint>
#include <memory>

#include "hystfem/fem.hpp"

namespace hystfem {

enum class LinearSolverKind { Direct, Iterative };

/// Sparse SPD solver bound to one matrix. The direct variant is a sparse
/// Cholesky factorization (AMD ordering); the iterative variant is
/// Jacobi-preconditioned conjugate gradients. Every solve checks the
/// relative residual before returning.
class Factorization {
 public:
  explicit Factorization(LinearSolverKind kind = LinearSolverKind::Direct, double tol = -1.0);
  ~Factorization();
  Factorization(Factorization&&) noexcept;
  Factorization& operator=(Factorization&&) noexcept;

  /// Symbolic + numeric factorization. Throws LinearSolverError if the
  /// matrix is not SPD. Reuses the symbolic analysis when the sparsity
  /// pattern is unchanged.
  void factorize(const SparseMatrix& matrix);

  bool ready() const;
  /// Fingerprint of pattern and values of the factorized matrix.
  std::uint64_t fingerprint() const { return fingerprint_; }
  bool matches(const SparseMatrix& matrix) const;

  /// Solves with the factorized matrix; ||A x - b|| <= tol ||b|| is asserted.
  Vector solve(const Vector& rhs) const;
  /// Same, after verifying that `matrix` is the factorized one.
  Vector solve(const SparseMatrix& matrix, const Vector& rhs) const;

  double tolerance() const { return tol_; }
  double last_residual() const { return last_residual_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  LinearSolverKind kind_;
  double tol_;
  std::uint64_t fingerprint_ = 0;
  mutable double last_residual_ = 0.0;
};

std::uint64_t matrix_fingerprint(const SparseMatrix& matrix);

/// One-shot solve. tol < 0 selects the default (1e-12 direct, 1e-10 iterative).
Vector solve_spd(const SparseMatrix& matrix, const Vector& rhs, double tol = -1.0,
                 LinearSolverKind kind = LinearSolverKind::Direct);

}  // namespace hystfem
