#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <Eigen/SparseCholesky>
#include <optional>
#include <vector>

namespace dflex::qp {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Triplet = Eigen::Triplet<double, int>;
using Eigen::VectorXd;

inline constexpr double kInfinity = 1e30;

/// minimize 0.5 x'Px + q'x  subject to  l <= Ax <= u.
/// P holds both triangles. Bounds with |value| >= kInfinity are treated as absent.
struct QuadraticProgram {
  SparseMatrix P;
  VectorXd q;
  SparseMatrix A;
  VectorXd l;
  VectorXd u;

  [[nodiscard]] int num_variables() const { return static_cast<int>(q.size()); }
  [[nodiscard]] int num_constraints() const { return static_cast<int>(l.size()); }
  [[nodiscard]] double objective(const VectorXd& x) const;
};

/// Dimension, bound-order, symmetry and sampled-curvature checks.
/// Throws DimensionMismatch, InvalidParams (l > u) or NonPsd.
void validate(const QuadraticProgram& qp);

struct SolverSettings {
  double eps_abs = 1e-4;
  double eps_rel = 1e-4;
  int max_iter = 400000;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha_relax = 1.6;
  bool adaptive_rho = true;
  int adaptive_rho_interval = 25;
  double adaptive_rho_tolerance = 5.0;
  int check_termination = 10;
  int scaling_iters = 10;
  bool polish = true;
  int polish_refine_iters = 3;
  double eps_prim_inf = 1e-6;
};

/// Throws InvalidParams if a tolerance is not positive or max_iter < 1.
void validate(const SolverSettings& settings);

enum class Status { Solved, MaxIter, PrimalInfeasible };

const char* to_string(Status status);

struct QpSolution {
  VectorXd x;
  VectorXd z_dual;
  Status status = Status::MaxIter;
  double objective = 0.0;
  double prim_res = 0.0;  // ||clip(Ax, l, u) - Ax||_inf
  double dual_res = 0.0;  // ||Px + q + A'z||_inf
  int iterations = 0;
  bool polished = false;
  double prim_inf_cert = 0.0;  // ||A' dy||_inf of the last infeasibility probe
};

struct WarmStart {
  VectorXd x;
  VectorXd z_dual;
};

struct KktResiduals {
  double prim = 0.0;
  double dual = 0.0;
};

/// Throws DimensionMismatch when x or z_dual do not fit the problem.
KktResiduals kkt_residuals(const QuadraticProgram& qp, const VectorXd& x, const VectorXd& z_dual);

/// Operator-splitting (ADMM) solver with Ruiz equilibration, over-relaxation,
/// adaptive rho and active-set polishing. The KKT matrix is factorized with a
/// sparse LDL' and refactorized only when rho changes.
///
/// The matrices are fixed after setup; q, l and u may be updated between solves.
class AdmmSolver {
 public:
  AdmmSolver() = default;
  AdmmSolver(const QuadraticProgram& qp, const SolverSettings& settings) { setup(qp, settings); }

  void setup(const QuadraticProgram& qp, const SolverSettings& settings);
  /// Replaces the vectors of the stored problem without refactorizing.
  void update_vectors(const VectorXd& q, const VectorXd& l, const VectorXd& u);
  void update_max_iter(int max_iter) { settings_.max_iter = max_iter; }

  QpSolution solve(const WarmStart* warm_start = nullptr);

  [[nodiscard]] const QuadraticProgram& problem() const { return qp_; }
  [[nodiscard]] const SolverSettings& settings() const { return settings_; }

 private:
  struct Iterate {
    VectorXd x, z, y;  // scaled
  };

  Status iterate(Iterate& it, double eps_abs, double eps_rel, int& iter, double& prim_inf_cert);
  void scale_problem();
  void set_rho_vector(double rho);
  void assemble_kkt();
  void factorize();
  bool polish(VectorXd& x, VectorXd& y, const VectorXd& z) const;

  QuadraticProgram qp_;  // unscaled
  SolverSettings settings_;

  // Scaled data.
  SparseMatrix p_;
  SparseMatrix a_;
  VectorXd q_, l_, u_;
  VectorXd d_, e_;  // variable and constraint scaling
  double cost_scale_ = 1.0;

  double rho_ = 0.1;
  VectorXd rho_vec_;
  std::vector<char> kind_;  // inequality, equality or free, per constraint
  SparseMatrix kkt_;
  std::vector<int> rho_diag_index_;  // positions of -1/rho entries in kkt_ values
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Upper, Eigen::AMDOrdering<int>> ldlt_;
  bool ready_ = false;
};

/// Convenience wrapper: validate, set up a fresh solver and solve.
QpSolution solve_qp(const QuadraticProgram& qp, const SolverSettings& settings,
                    const std::optional<WarmStart>& warm_start = std::nullopt);

/// Assemble a sparse matrix from triplets (duplicates are summed).
SparseMatrix from_triplets(int rows, int cols, const std::vector<Triplet>& triplets);

}  // namespace dflex::qp
