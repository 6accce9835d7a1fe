#include "hystfem/linsolve.hpp"

#include <cstring>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <fmt/format.h>

#include "hystfem/errors.hpp"

namespace hystfem {

struct Factorization::Impl {
  SparseMatrix matrix;
  Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt;
  Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper> cg;
  Eigen::Index pattern_rows = -1;
  std::uint64_t pattern_hash = 0;
};

namespace {

// FNV-1a over raw bytes.
void mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

std::uint64_t pattern_fingerprint(const SparseMatrix& a) {
  std::uint64_t h = 1469598103934665603ull;
  const Eigen::Index rows = a.rows();
  mix(h, &rows, sizeof rows);
  mix(h, a.outerIndexPtr(), sizeof(int) * (a.outerSize() + 1));
  mix(h, a.innerIndexPtr(), sizeof(int) * a.nonZeros());
  return h;
}

}  // namespace

std::uint64_t matrix_fingerprint(const SparseMatrix& matrix) {
  SparseMatrix a = matrix;
  a.makeCompressed();
  std::uint64_t h = pattern_fingerprint(a);
  mix(h, a.valuePtr(), sizeof(double) * a.nonZeros());
  return h;
}

Factorization::Factorization(LinearSolverKind kind, double tol)
    : impl_(std::make_unique<Impl>()),
      kind_(kind),
      tol_(tol >= 0.0 ? tol : (kind == LinearSolverKind::Direct ? 1e-12 : 1e-10)) {}

Factorization::~Factorization() = default;
Factorization::Factorization(Factorization&&) noexcept = default;
Factorization& Factorization::operator=(Factorization&&) noexcept = default;

void Factorization::factorize(const SparseMatrix& matrix) {
  if (matrix.rows() != matrix.cols()) throw LinearSolverError("factorize: matrix is not square");
  impl_->matrix = matrix;
  impl_->matrix.makeCompressed();
  fingerprint_ = matrix_fingerprint(impl_->matrix);
  if (impl_->matrix.rows() == 0) return;

  if (kind_ == LinearSolverKind::Direct) {
    const std::uint64_t ph = pattern_fingerprint(impl_->matrix);
    if (ph != impl_->pattern_hash || impl_->pattern_rows != impl_->matrix.rows()) {
      impl_->llt.analyzePattern(impl_->matrix);
      impl_->pattern_hash = ph;
      impl_->pattern_rows = impl_->matrix.rows();
    }
    impl_->llt.factorize(impl_->matrix);
    if (impl_->llt.info() != Eigen::Success) {
      fingerprint_ = 0;
      throw LinearSolverError("factorize: matrix is not symmetric positive definite (Cholesky breakdown)");
    }
  } else {
    impl_->cg.setTolerance(tol_);
    impl_->cg.setMaxIterations(std::max<Eigen::Index>(1000, 10 * impl_->matrix.rows()));
    impl_->cg.compute(impl_->matrix);
    if (impl_->cg.info() != Eigen::Success) {
      fingerprint_ = 0;
      throw LinearSolverError("factorize: preconditioner setup failed");
    }
  }
}

bool Factorization::ready() const { return fingerprint_ != 0; }

bool Factorization::matches(const SparseMatrix& matrix) const {
  return ready() && matrix_fingerprint(matrix) == fingerprint_;
}

Vector Factorization::solve(const Vector& rhs) const {
  if (!ready()) throw LinearSolverError("solve: no factorization");
  const SparseMatrix& a = impl_->matrix;
  if (rhs.size() != a.rows()) {
    throw LinearSolverError(fmt::format("solve: rhs has {} entries, matrix has {} rows", rhs.size(), a.rows()));
  }
  if (a.rows() == 0) return Vector(0);
  Vector x = kind_ == LinearSolverKind::Direct ? Vector(impl_->llt.solve(rhs)) : Vector(impl_->cg.solve(rhs));
  const double bnorm = rhs.norm();
  const auto relative = [&](const Vector& r) { return bnorm > 0.0 ? r.norm() / bnorm : r.norm(); };
  Vector r = rhs - a * x;
  last_residual_ = relative(r);
  // Iterative refinement against the stored matrix for ill-conditioned tangents.
  for (int pass = 0; pass < 3 && kind_ == LinearSolverKind::Direct && last_residual_ > tol_; ++pass) {
    x += impl_->llt.solve(r);
    r = rhs - a * x;
    last_residual_ = relative(r);
  }
  if (kind_ == LinearSolverKind::Iterative && impl_->cg.info() != Eigen::Success) {
    throw ConvergenceError(fmt::format("conjugate gradients did not converge: relative residual {}", last_residual_),
                           last_residual_);
  }
  if (!(last_residual_ <= tol_)) {
    throw LinearSolverError(fmt::format("solve: relative residual {} exceeds tolerance {}", last_residual_, tol_));
  }
  return x;
}

Vector Factorization::solve(const SparseMatrix& matrix, const Vector& rhs) const {
  if (!matches(matrix)) throw LinearSolverError("solve: factorization belongs to a different matrix");
  return solve(rhs);
}

Vector solve_spd(const SparseMatrix& matrix, const Vector& rhs, double tol, LinearSolverKind kind) {
  Factorization f(kind, tol);
  f.factorize(matrix);
  return f.solve(rhs);
}

}  // namespace hystfem
