#pragma once

// Embedded conic engine.
//
// Every convex subproblem in the library (worst-case CVaR bounds, inner
// offsets, finite-horizon MPC, projections used for verification) is compiled
// to the form
//
//     minimize    c'x
//     subject to  A x  = b
//                 h - G x  in  K
//
// where K is a product of nonnegative orthants and second-order cones
// { (t, v) : ||v|| <= t }. The solver is a homogeneous self-dual interior point
// method with Nesterov-Todd scaling and Mehrotra predictor-corrector steps, so
// infeasibility and unboundedness come back as certificates rather than as
// iteration limits.

#include "drmpc/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace drmpc::conic {

enum class ConeKind { nonnegative, second_order };

struct ConeBlock {
  ConeKind kind = ConeKind::nonnegative;
  Index size = 0;
};

struct ConicProgram {
  Vector c;
  SparseMatrix A;  // p x n
  Vector b;
  SparseMatrix G;  // m x n
  Vector h;
  std::vector<ConeBlock> cones;  // partitions the m rows of G, in order
  double objective_offset = 0.0;

  Index num_variables() const { return c.size(); }
  Index num_equalities() const { return b.size(); }
  Index num_cone_rows() const { return h.size(); }

  /// Throws InputError when dimensions, cone partition, or finiteness fail.
  void validate() const;
};

enum class SolveStatus { optimal, infeasible, unbounded, max_iter, stalled };

std::string to_string(SolveStatus status);

struct Residuals {
  double primal = 0.0;  // relative equality + cone residual
  double dual = 0.0;    // relative stationarity residual
  double gap = 0.0;     // min(absolute, relative) duality gap
};

struct SolverSettings {
  double tol = 1e-8;
  int max_iter = 20000;
  double step_fraction = 0.99;
  int refinement_steps = 10;
  /// A breakdown after the best iterate reached this accuracy returns that
  /// iterate as optimal with reduced_accuracy set.
  double reduced_tol = 1e-7;
};

struct ConicSolution {
  SolveStatus status = SolveStatus::stalled;
  Vector x;  // primal
  Vector y;  // equality multipliers
  Vector z;  // cone multipliers
  Vector s;  // cone slacks h - G x
  double objective = 0.0;       // c'x + offset (primal)
  double dual_objective = 0.0;  // -b'y - h'z + offset
  Residuals residuals;
  int iterations = 0;
  bool reduced_accuracy = false;
  /// Deterministic effort proxy: estimated flops spent in KKT factorizations
  /// and solves.
  double work = 0.0;

  bool optimal() const { return status == SolveStatus::optimal; }
};

/// Solves prog. If status is infeasible, (y, z) hold a normalized Farkas
/// certificate (A'y + G'z ~ 0, b'y + h'z = -1, z in K). If unbounded, x holds a
/// normalized recession direction (Ax ~ 0, Gx + s ~ 0, c'x = -1).
ConicSolution solve(const ConicProgram& prog, const SolverSettings& settings = {});

/// Sparse affine expression sum_i coeff_i * x[index_i] + constant.
struct LinearExpr {
  std::vector<std::pair<Index, double>> terms;
  double constant = 0.0;

  LinearExpr() = default;
  explicit LinearExpr(double value) : constant(value) {}
  static LinearExpr variable(Index index, double coeff = 1.0);

  LinearExpr& add(Index index, double coeff);
  LinearExpr& operator+=(const LinearExpr& other);
  LinearExpr& operator-=(const LinearExpr& other);
  LinearExpr& operator*=(double factor);
  LinearExpr& operator+=(double value) {
    constant += value;
    return *this;
  }

  double evaluate(const Vector& x) const;
};

LinearExpr operator+(LinearExpr lhs, const LinearExpr& rhs);
LinearExpr operator-(LinearExpr lhs, const LinearExpr& rhs);
LinearExpr operator*(double factor, LinearExpr expr);

enum class Domain { free, nonnegative, second_order };

/// Incremental construction of a ConicProgram in terms of named variable
/// blocks and affine constraints.
class ProgramBuilder {
 public:
  /// Adds n variables; nonnegative adds x >= 0 rows, second_order constrains the
  /// whole block (x0 >= ||x1..||). Returns the index of the first variable.
  Index add_variables(Index n, Domain domain = Domain::free);
  Index add_variable(Domain domain = Domain::free) { return add_variables(1, domain); }

  void add_equality(const LinearExpr& expr);     // expr == 0
  void add_nonnegative(const LinearExpr& expr);  // expr >= 0
  /// parts[0] >= || parts[1..] ||
  void add_second_order_cone(std::span<const LinearExpr> parts);

  void set_objective(const LinearExpr& expr);  // minimized

  Index num_variables() const { return num_vars_; }

  ConicProgram build() const;

 private:
  struct Row {
    LinearExpr expr;
  };
  Index num_vars_ = 0;
  std::vector<Row> equalities_;
  std::vector<Row> cone_rows_;
  std::vector<ConeBlock> cones_;
  LinearExpr objective_;
};

/// Epigraph of a convex quadratic: returns the index of a new variable t with
/// t >= terms' * weight * terms, encoded as a rotated second-order cone.
/// weight must be symmetric positive semidefinite (InputError otherwise).
Index add_quadratic_epigraph(ProgramBuilder& builder, const Matrix& weight,
                             std::span<const LinearExpr> terms);

/// Plain-text sparse dump (row col value per line) of c, A, b, G, h and the
/// cone list, for offline inspection.
void write_triplets(std::ostream& os, const ConicProgram& prog);

}  // namespace drmpc::conic
