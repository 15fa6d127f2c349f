#include "dflex/qp.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>

#include "dflex/error.hpp"

namespace dflex::qp {

namespace {

constexpr double kMinScaling = 1e-4;
constexpr double kMaxScaling = 1e4;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kRhoEqFactor = 1e3;
constexpr double kPolishDelta = 1e-7;
constexpr int kPolishRetries = 2;
constexpr int kPolishActiveSetRounds = 6;

bool lower_absent(double v) { return v <= -kInfinity; }
bool upper_absent(double v) { return v >= kInfinity; }

double inf_norm(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

double limit_scaling(double v) {
  if (v < kMinScaling) return 1.0;
  return std::min(v, kMaxScaling);
}

VectorXd clip(const VectorXd& v, const VectorXd& lo, const VectorXd& hi) {
  return v.cwiseMax(lo).cwiseMin(hi);
}

VectorXd column_inf_norms(const SparseMatrix& m) {
  VectorXd out = VectorXd::Zero(m.cols());
  for (int j = 0; j < m.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(m, j); it; ++it) {
      out[j] = std::max(out[j], std::abs(it.value()));
    }
  }
  return out;
}

VectorXd row_inf_norms(const SparseMatrix& m) {
  VectorXd out = VectorXd::Zero(m.rows());
  for (int j = 0; j < m.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(m, j); it; ++it) {
      out[it.row()] = std::max(out[it.row()], std::abs(it.value()));
    }
  }
  return out;
}

void scale_rows_cols(SparseMatrix& m, const VectorXd& row_scale, const VectorXd& col_scale) {
  for (int j = 0; j < m.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(m, j); it; ++it) {
      it.valueRef() *= row_scale[it.row()] * col_scale[j];
    }
  }
}

constexpr char kInequality = 0;
constexpr char kEquality = 1;
constexpr char kFree = 2;

std::vector<char> classify(const VectorXd& l, const VectorXd& u) {
  std::vector<char> kind(l.size(), kInequality);
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    if (lower_absent(l[i]) && upper_absent(u[i])) {
      kind[i] = kFree;
    } else if (!lower_absent(l[i]) && u[i] - l[i] <= 1e-4 * std::max(1.0, std::abs(l[i]))) {
      kind[i] = kEquality;
    }
  }
  return kind;
}

bool all_finite(const SparseMatrix& m) {
  for (int j = 0; j < m.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(m, j); it; ++it) {
      if (!std::isfinite(it.value())) return false;
    }
  }
  return true;
}

}  // namespace

SparseMatrix from_triplets(int rows, int cols, const std::vector<Triplet>& triplets) {
  SparseMatrix m(rows, cols);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

double QuadraticProgram::objective(const VectorXd& x) const {
  return 0.5 * x.dot(P * x) + q.dot(x);
}

const char* to_string(Status status) {
  switch (status) {
    case Status::Solved: return "Solved";
    case Status::MaxIter: return "MaxIter";
    case Status::PrimalInfeasible: return "PrimalInfeasible";
  }
  return "Unknown";
}

void validate(const QuadraticProgram& qp) {
  const int n = qp.num_variables();
  const int m = qp.num_constraints();
  if (qp.P.rows() != n || qp.P.cols() != n) {
    fail(ErrorCode::DimensionMismatch, "P must be " + std::to_string(n) + "x" + std::to_string(n));
  }
  if (qp.A.rows() != m || qp.A.cols() != n || qp.u.size() != m) {
    fail(ErrorCode::DimensionMismatch, "A, l and u must describe " + std::to_string(m) +
                                           " constraints over " + std::to_string(n) + " variables");
  }
  if (!all_finite(qp.P) || !all_finite(qp.A) || !qp.q.allFinite()) {
    fail(ErrorCode::NonFiniteInput, "QP matrices and q must be finite");
  }
  for (int i = 0; i < m; ++i) {
    if (std::isnan(qp.l[i]) || std::isnan(qp.u[i])) {
      fail(ErrorCode::NonFiniteInput, "QP bounds must not be NaN");
    }
    if (qp.l[i] > qp.u[i]) {
      fail(ErrorCode::InvalidParams, "constraint " + std::to_string(i) + " has l > u");
    }
  }
  if (n == 0) return;

  const SparseMatrix asym = SparseMatrix(qp.P.transpose()) - qp.P;
  double p_norm = 0.0;
  for (int j = 0; j < qp.P.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(qp.P, j); it; ++it) {
      p_norm = std::max(p_norm, std::abs(it.value()));
    }
  }
  double asym_norm = 0.0;
  for (int j = 0; j < asym.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(asym, j); it; ++it) {
      asym_norm = std::max(asym_norm, std::abs(it.value()));
    }
  }
  const double tol = 1e-9 * std::max(1.0, p_norm);
  if (asym_norm > tol) fail(ErrorCode::NonPsd, "P is not symmetric");

  for (int j = 0; j < n; ++j) {
    if (qp.P.coeff(j, j) < -tol) fail(ErrorCode::NonPsd, "P has a negative diagonal entry");
  }

  if (n <= 64) {
    const Eigen::MatrixXd dense(qp.P);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(dense, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-8 * std::max(1.0, p_norm)) {
      fail(ErrorCode::NonPsd, "P has a negative eigenvalue");
    }
    return;
  }

  // Necessary condition: every 2x2 principal minor is nonnegative.
  const double curv_tol = 1e-8 * std::max(1.0, p_norm);
  for (int j = 0; j < qp.P.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(qp.P, j); it; ++it) {
      const int i = static_cast<int>(it.row());
      if (i == j) continue;
      if (qp.P.coeff(i, i) * qp.P.coeff(j, j) < it.value() * it.value() - curv_tol * curv_tol) {
        fail(ErrorCode::NonPsd, "P has a negative 2x2 principal minor");
      }
    }
  }

  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> normal;
  VectorXd v(n);
  for (int s = 0; s < 32; ++s) {
    for (int j = 0; j < n; ++j) v[j] = normal(rng);
    if (v.dot(qp.P * v) < -curv_tol * v.squaredNorm()) {
      fail(ErrorCode::NonPsd, "P has negative curvature along a sampled direction");
    }
  }

  // Power iteration on (lambda_max I - P) drives v toward the lowest-curvature direction.
  for (int j = 0; j < n; ++j) v[j] = normal(rng);
  v.normalize();
  double lambda_max = 0.0;
  for (int it = 0; it < 50; ++it) {
    VectorXd w = qp.P * v;
    lambda_max = w.norm();
    if (lambda_max == 0.0) return;
    v = w / lambda_max;
  }
  const double shift = 1.01 * lambda_max;
  for (int j = 0; j < n; ++j) v[j] = normal(rng);
  v.normalize();
  for (int it = 0; it < 200; ++it) {
    VectorXd w = shift * v - qp.P * v;
    const double norm = w.norm();
    if (norm == 0.0) break;
    v = w / norm;
    if (it % 20 == 19 && v.dot(qp.P * v) < -curv_tol) {
      fail(ErrorCode::NonPsd, "P has a negative eigenvalue");
    }
  }
  if (v.dot(qp.P * v) < -curv_tol) fail(ErrorCode::NonPsd, "P has a negative eigenvalue");
}

void validate(const SolverSettings& s) {
  if (!(s.eps_abs > 0.0) || !(s.eps_rel >= 0.0) || !(s.eps_prim_inf > 0.0)) {
    fail(ErrorCode::InvalidParams, "solver tolerances must be positive");
  }
  if (s.max_iter < 1 || s.check_termination < 1 || s.adaptive_rho_interval < 1) {
    fail(ErrorCode::InvalidParams, "solver iteration counts must be positive");
  }
  if (!(s.rho > 0.0) || !(s.sigma > 0.0) || !(s.alpha_relax > 0.0 && s.alpha_relax < 2.0)) {
    fail(ErrorCode::InvalidParams, "rho and sigma must be positive, alpha in (0, 2)");
  }
}

KktResiduals kkt_residuals(const QuadraticProgram& qp, const VectorXd& x, const VectorXd& z_dual) {
  if (x.size() != qp.num_variables() || z_dual.size() != qp.num_constraints()) {
    fail(ErrorCode::DimensionMismatch, "x or z_dual do not match the problem dimensions");
  }
  const VectorXd ax = qp.A * x;
  KktResiduals r;
  r.prim = inf_norm(clip(ax, qp.l, qp.u) - ax);
  r.dual = inf_norm(qp.P * x + qp.q + qp.A.transpose() * z_dual);
  return r;
}

void AdmmSolver::setup(const QuadraticProgram& qp, const SolverSettings& settings) {
  validate(settings);
  qp_ = qp;
  qp_.P.makeCompressed();
  qp_.A.makeCompressed();
  settings_ = settings;
  scale_problem();
  rho_ = settings_.rho;
  set_rho_vector(rho_);
  assemble_kkt();
  factorize();
  ready_ = true;
}

void AdmmSolver::scale_problem() {
  const int n = qp_.num_variables();
  const int m = qp_.num_constraints();
  p_ = qp_.P;
  a_ = qp_.A;
  q_ = qp_.q;
  d_ = VectorXd::Ones(n);
  e_ = VectorXd::Ones(m);
  cost_scale_ = 1.0;

  for (int it = 0; it < settings_.scaling_iters; ++it) {
    VectorXd d_step = column_inf_norms(p_).cwiseMax(column_inf_norms(a_));
    VectorXd e_step = row_inf_norms(a_);
    for (int j = 0; j < n; ++j) d_step[j] = 1.0 / std::sqrt(limit_scaling(d_step[j]));
    for (int i = 0; i < m; ++i) e_step[i] = 1.0 / std::sqrt(limit_scaling(e_step[i]));

    scale_rows_cols(p_, d_step, d_step);
    scale_rows_cols(a_, e_step, d_step);
    q_ = q_.cwiseProduct(d_step);
    d_ = d_.cwiseProduct(d_step);
    e_ = e_.cwiseProduct(e_step);

    const double p_mean = n > 0 ? column_inf_norms(p_).mean() : 0.0;
    const double c_step = 1.0 / limit_scaling(std::max(p_mean, inf_norm(q_)));
    p_ *= c_step;
    q_ *= c_step;
    cost_scale_ *= c_step;
  }

  l_.resize(m);
  u_.resize(m);
  for (int i = 0; i < m; ++i) {
    l_[i] = lower_absent(qp_.l[i]) ? -kInfinity : qp_.l[i] * e_[i];
    u_[i] = upper_absent(qp_.u[i]) ? kInfinity : qp_.u[i] * e_[i];
  }
  kind_ = classify(qp_.l, qp_.u);
}

void AdmmSolver::update_vectors(const VectorXd& q, const VectorXd& l, const VectorXd& u) {
  if (!ready_) fail(ErrorCode::InvariantViolation, "solver has not been set up");
  const int m = qp_.num_constraints();
  if (q.size() != qp_.num_variables() || l.size() != m || u.size() != m) {
    fail(ErrorCode::DimensionMismatch, "updated vectors do not match the problem dimensions");
  }
  if (!q.allFinite()) fail(ErrorCode::NonFiniteInput, "q must be finite");
  for (int i = 0; i < m; ++i) {
    if (std::isnan(l[i]) || std::isnan(u[i])) fail(ErrorCode::NonFiniteInput, "bounds must not be NaN");
    if (l[i] > u[i]) fail(ErrorCode::InvalidParams, "constraint " + std::to_string(i) + " has l > u");
  }
  qp_.q = q;
  qp_.l = l;
  qp_.u = u;
  q_ = cost_scale_ * q.cwiseProduct(d_);
  for (int i = 0; i < m; ++i) {
    l_[i] = lower_absent(l[i]) ? -kInfinity : l[i] * e_[i];
    u_[i] = upper_absent(u[i]) ? kInfinity : u[i] * e_[i];
  }
  std::vector<char> kind = classify(l, u);
  if (kind != kind_) {
    kind_ = std::move(kind);
    set_rho_vector(rho_);
    for (int i = 0; i < m; ++i) kkt_.valuePtr()[rho_diag_index_[i]] = -1.0 / rho_vec_[i];
    factorize();
  }
}

void AdmmSolver::set_rho_vector(double rho) {
  const int m = qp_.num_constraints();
  rho_vec_.resize(m);
  for (int i = 0; i < m; ++i) {
    if (kind_[i] == kFree) {
      rho_vec_[i] = kRhoMin;
    } else if (kind_[i] == kEquality) {
      rho_vec_[i] = kRhoEqFactor * rho;
    } else {
      rho_vec_[i] = rho;
    }
  }
}

void AdmmSolver::assemble_kkt() {
  const int n = qp_.num_variables();
  const int m = qp_.num_constraints();
  std::vector<Triplet> trips;
  trips.reserve(p_.nonZeros() + a_.nonZeros() + n + m);
  for (int j = 0; j < p_.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(p_, j); it; ++it) {
      if (it.row() <= j) trips.emplace_back(it.row(), j, it.value());
    }
  }
  for (int j = 0; j < n; ++j) trips.emplace_back(j, j, settings_.sigma);
  for (int j = 0; j < a_.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(a_, j); it; ++it) {
      trips.emplace_back(j, n + it.row(), it.value());
    }
  }
  for (int i = 0; i < m; ++i) trips.emplace_back(n + i, n + i, -1.0 / rho_vec_[i]);
  kkt_ = from_triplets(n + m, n + m, trips);

  // In an upper-triangular column the diagonal is the last stored entry.
  rho_diag_index_.resize(m);
  for (int i = 0; i < m; ++i) rho_diag_index_[i] = kkt_.outerIndexPtr()[n + i + 1] - 1;
  ldlt_.analyzePattern(kkt_);
}

void AdmmSolver::factorize() {
  ldlt_.factorize(kkt_);
  if (ldlt_.info() != Eigen::Success) {
    fail(ErrorCode::SolverFailed, "KKT factorization failed");
  }
}

bool AdmmSolver::polish(VectorXd& x, VectorXd& y, const VectorXd& z) const {
  const int n = qp_.num_variables();
  const int m = qp_.num_constraints();

  // side: -1 lower, +1 upper, 0 equality, 2 inactive.
  constexpr int kInactive = 2;
  std::vector<int> side(m, kInactive);
  for (int i = 0; i < m; ++i) {
    if (kind_[i] == kEquality) {
      side[i] = 0;
    } else if (!lower_absent(l_[i]) && z[i] - l_[i] < -y[i]) {
      side[i] = -1;
    } else if (!upper_absent(u_[i]) && u_[i] - z[i] < y[i]) {
      side[i] = 1;
    }
  }

  std::vector<Triplet> p_upper;
  p_upper.reserve(p_.nonZeros());
  for (int j = 0; j < p_.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(p_, j); it; ++it) {
      if (it.row() <= j) p_upper.emplace_back(it.row(), j, it.value());
    }
  }

  std::vector<int> slot(m);
  for (int round = 0; round < kPolishActiveSetRounds; ++round) {
    std::vector<int> active;
    for (int i = 0; i < m; ++i) {
      if (side[i] != kInactive) active.push_back(i);
    }
    const int na = static_cast<int>(active.size());
    std::fill(slot.begin(), slot.end(), -1);
    for (int k = 0; k < na; ++k) slot[active[k]] = k;

    std::vector<Triplet> trips = p_upper;
    for (int j = 0; j < a_.outerSize(); ++j) {
      for (SparseMatrix::InnerIterator it(a_, j); it; ++it) {
        if (slot[it.row()] >= 0) trips.emplace_back(j, n + slot[it.row()], it.value());
      }
    }
    // Exact reduced KKT and its regularized copy share one sparsity pattern.
    std::vector<Triplet> exact = trips;
    for (int j = 0; j < n; ++j) {
      trips.emplace_back(j, j, kPolishDelta);
      exact.emplace_back(j, j, 0.0);
    }
    for (int k = 0; k < na; ++k) {
      trips.emplace_back(n + k, n + k, -kPolishDelta);
      exact.emplace_back(n + k, n + k, 0.0);
    }
    const SparseMatrix kreg = from_triplets(n + na, n + na, trips);
    const SparseMatrix kexact = from_triplets(n + na, n + na, exact);

    Eigen::SimplicialLDLT<SparseMatrix, Eigen::Upper, Eigen::AMDOrdering<int>> solver(kreg);
    if (solver.info() != Eigen::Success) return false;

    VectorXd rhs(n + na);
    rhs.head(n) = -q_;
    for (int k = 0; k < na; ++k) rhs[n + k] = side[active[k]] > 0 ? u_[active[k]] : l_[active[k]];
    VectorXd sol = solver.solve(rhs);
    for (int r = 0; r < settings_.polish_refine_iters; ++r) {
      const VectorXd resid = rhs - kexact.selfadjointView<Eigen::Upper>() * sol;
      sol += solver.solve(resid);
    }
    if (!sol.allFinite()) return false;

    // Drop rows whose multiplier has the wrong sign; once signs are right,
    // add rows the point violates.
    const double sign_tol = 1e-9 * std::max(1.0, inf_norm(sol.tail(na)));
    bool changed = false;
    for (int k = 0; k < na; ++k) {
      const int i = active[k];
      if ((side[i] < 0 && sol[n + k] > sign_tol) || (side[i] == 1 && sol[n + k] < -sign_tol)) {
        side[i] = kInactive;
        changed = true;
      }
    }
    if (!changed) {
      const VectorXd ax = a_ * sol.head(n);
      for (int i = 0; i < m; ++i) {
        if (side[i] != kInactive) continue;
        const double tol = 1e-9 * std::max(1.0, std::abs(ax[i]));
        if (!lower_absent(l_[i]) && ax[i] < l_[i] - tol) {
          side[i] = -1;
          changed = true;
        } else if (!upper_absent(u_[i]) && ax[i] > u_[i] + tol) {
          side[i] = 1;
          changed = true;
        }
      }
    }
    if (changed) continue;

    x = sol.head(n);
    y.setZero(m);
    for (int k = 0; k < na; ++k) y[active[k]] = sol[n + k];
    return true;
  }
  return false;
}

Status AdmmSolver::iterate(Iterate& it, double eps_abs, double eps_rel, int& iter,
                           double& prim_inf_cert) {
  const int n = qp_.num_variables();
  const int m = qp_.num_constraints();
  const double alpha = settings_.alpha_relax;
  const double sigma = settings_.sigma;
  const VectorXd d_inv = d_.cwiseInverse();
  const VectorXd e_inv = e_.cwiseInverse();
  VectorXd& x = it.x;
  VectorXd& z = it.z;
  VectorXd& y = it.y;

  VectorXd rhs(n + m);
  VectorXd y_prev(m);
  VectorXd ax(m), px(n), aty(n);
  while (iter < settings_.max_iter) {
    ++iter;
    y_prev = y;
    rhs.head(n) = sigma * x - q_;
    rhs.tail(m) = z - y.cwiseQuotient(rho_vec_);
    const VectorXd sol = ldlt_.solve(rhs);
    const VectorXd z_tilde = z + (sol.tail(m) - y).cwiseQuotient(rho_vec_);

    x = alpha * sol.head(n) + (1.0 - alpha) * x;
    const VectorXd z_relax = alpha * z_tilde + (1.0 - alpha) * z;
    const VectorXd z_next = clip(z_relax + y.cwiseQuotient(rho_vec_), l_, u_);
    y += rho_vec_.cwiseProduct(z_relax - z_next);
    z = z_next;

    const bool check = iter % settings_.check_termination == 0 || iter == settings_.max_iter;
    const bool adapt = settings_.adaptive_rho && iter % settings_.adaptive_rho_interval == 0;
    if (!check && !adapt) continue;

    ax = a_ * x;
    px = p_ * x;
    aty = a_.transpose() * y;

    if (check) {
      const double prim = inf_norm(e_inv.cwiseProduct(ax - z));
      const double dual = inf_norm(d_inv.cwiseProduct(px + q_ + aty)) / cost_scale_;
      const double eps_prim = eps_abs + eps_rel * std::max(inf_norm(e_inv.cwiseProduct(ax)),
                                                           inf_norm(e_inv.cwiseProduct(z)));
      const double eps_dual =
          eps_abs + eps_rel / cost_scale_ *
                        std::max({inf_norm(d_inv.cwiseProduct(px)), inf_norm(d_inv.cwiseProduct(aty)),
                                  inf_norm(d_inv.cwiseProduct(q_))});
      if (prim <= eps_prim && dual <= eps_dual) return Status::Solved;

      // Infeasibility probe on the unscaled dual increment.
      VectorXd dy = e_.cwiseProduct(y - y_prev);
      const double dy_norm = inf_norm(dy);
      if (dy_norm > 1e-30 && m > 0) {
        dy /= dy_norm;
        double support = 0.0;
        bool bounded = true;
        for (int i = 0; i < m && bounded; ++i) {
          if (dy[i] > 0.0) {
            if (!upper_absent(qp_.u[i])) {
              support += qp_.u[i] * dy[i];
            } else if (dy[i] > settings_.eps_prim_inf) {
              bounded = false;
            }
          } else if (dy[i] < 0.0) {
            if (!lower_absent(qp_.l[i])) {
              support += qp_.l[i] * dy[i];
            } else if (-dy[i] > settings_.eps_prim_inf) {
              bounded = false;
            }
          }
        }
        if (bounded && support < -settings_.eps_prim_inf) {
          prim_inf_cert = inf_norm(d_inv.cwiseProduct(a_.transpose() * (y - y_prev))) / dy_norm;
          if (prim_inf_cert < settings_.eps_prim_inf) return Status::PrimalInfeasible;
        }
      }
    }

    if (adapt) {
      const double prim_s = inf_norm(ax - z) / std::max({inf_norm(ax), inf_norm(z), 1e-30});
      const double dual_s =
          inf_norm(px + q_ + aty) / std::max({inf_norm(px), inf_norm(aty), inf_norm(q_), 1e-30});
      if (dual_s > 0.0 && prim_s > 0.0) {
        const double rho_new = std::clamp(rho_ * std::sqrt(prim_s / dual_s), kRhoMin, kRhoMax);
        if (rho_new > settings_.adaptive_rho_tolerance * rho_ ||
            rho_new < rho_ / settings_.adaptive_rho_tolerance) {
          rho_ = rho_new;
          set_rho_vector(rho_);
          for (int i = 0; i < m; ++i) kkt_.valuePtr()[rho_diag_index_[i]] = -1.0 / rho_vec_[i];
          factorize();
        }
      }
    }
  }
  return Status::MaxIter;
}

QpSolution AdmmSolver::solve(const WarmStart* warm_start) {
  if (!ready_) fail(ErrorCode::InvariantViolation, "solver has not been set up");
  const int n = qp_.num_variables();
  const int m = qp_.num_constraints();

  Iterate it{VectorXd::Zero(n), VectorXd::Zero(m), VectorXd::Zero(m)};
  if (warm_start != nullptr) {
    if (warm_start->x.size() != n || warm_start->z_dual.size() != m) {
      fail(ErrorCode::DimensionMismatch, "warm start does not match the problem dimensions");
    }
    it.x = warm_start->x.cwiseQuotient(d_);
    it.y = cost_scale_ * warm_start->z_dual.cwiseQuotient(e_);
    it.z = clip(a_ * it.x, l_, u_);
  }

  QpSolution out;
  int iter = 0;
  double tighten = 1.0;
  for (int round = 0;; ++round) {
    out.status = iterate(it, settings_.eps_abs * tighten, settings_.eps_rel * tighten, iter,
                         out.prim_inf_cert);
    out.x = d_.cwiseProduct(it.x);
    out.z_dual = e_.cwiseProduct(it.y) / cost_scale_;
    if (out.status != Status::Solved || !settings_.polish) break;

    VectorXd xp = it.x;
    VectorXd yp = it.y;
    if (polish(xp, yp, it.z)) {
      const KktResiduals res = kkt_residuals(qp_, out.x, out.z_dual);
      const VectorXd x_pol = d_.cwiseProduct(xp);
      const VectorXd y_pol = e_.cwiseProduct(yp) / cost_scale_;
      const KktResiduals pres = kkt_residuals(qp_, x_pol, y_pol);
      if ((pres.prim <= res.prim || pres.prim < 1e-10) && (pres.dual <= res.dual || pres.dual < 1e-10)) {
        out.x = x_pol;
        out.z_dual = y_pol;
        out.polished = true;
        break;
      }
    }
    // A failed polish usually means a degenerate active-set guess; a more
    // accurate iterate separates weakly active rows.
    if (round == kPolishRetries) break;
    tighten *= 0.1;
  }
  out.iterations = iter;
  const KktResiduals res = kkt_residuals(qp_, out.x, out.z_dual);
  out.prim_res = res.prim;
  out.dual_res = res.dual;
  out.objective = qp_.objective(out.x);
  return out;
}

QpSolution solve_qp(const QuadraticProgram& qp, const SolverSettings& settings,
                    const std::optional<WarmStart>& warm_start) {
  validate(qp);
  AdmmSolver solver(qp, settings);
  return solver.solve(warm_start ? &*warm_start : nullptr);
}

}  // namespace dflex::qp
