#include "drmpc/conic.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace drmpc::conic {

namespace {

bool all_finite(const Vector& v) { return v.allFinite(); }

bool all_finite(const SparseMatrix& m) {
  for (Index k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it)
      if (!std::isfinite(it.value())) return false;
  return true;
}

struct Block {
  ConeKind kind;
  Index offset;
  Index size;
};

// Cone bookkeeping and Jordan-algebra operations on stacked m-vectors.
class Cones {
 public:
  explicit Cones(const std::vector<ConeBlock>& cones) {
    Index offset = 0;
    for (const auto& c : cones) {
      if (c.size == 0) continue;
      blocks_.push_back({c.kind, offset, c.size});
      offset += c.size;
      degree_ += c.kind == ConeKind::nonnegative ? c.size : 1;
    }
  }

  const std::vector<Block>& blocks() const { return blocks_; }
  Index degree() const { return degree_; }

  // Smallest "eigenvalue"; positive iff u is interior.
  double min_eig(const Vector& u) const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& b : blocks_) {
      if (b.kind == ConeKind::nonnegative) {
        m = std::min(m, u.segment(b.offset, b.size).minCoeff());
      } else {
        const double t = u(b.offset);
        const double r = u.segment(b.offset + 1, b.size - 1).norm();
        m = std::min(m, t - r);
      }
    }
    return m;
  }

  void add_identity(Vector& u, double alpha) const {
    for (const auto& b : blocks_) {
      if (b.kind == ConeKind::nonnegative)
        u.segment(b.offset, b.size).array() += alpha;
      else
        u(b.offset) += alpha;
    }
  }

  Vector product(const Vector& u, const Vector& v) const {
    Vector w(u.size());
    for (const auto& b : blocks_) {
      if (b.kind == ConeKind::nonnegative) {
        w.segment(b.offset, b.size) =
            u.segment(b.offset, b.size).cwiseProduct(v.segment(b.offset, b.size));
      } else {
        const Index n1 = b.size - 1;
        const auto u1 = u.segment(b.offset + 1, n1);
        const auto v1 = v.segment(b.offset + 1, n1);
        w(b.offset) = u.segment(b.offset, b.size).dot(v.segment(b.offset, b.size));
        w.segment(b.offset + 1, n1) = u(b.offset) * v1 + v(b.offset) * u1;
      }
    }
    return w;
  }

  // Solves lambda o x = r for x.
  Vector divide(const Vector& lambda, const Vector& r) const {
    Vector x(r.size());
    for (const auto& b : blocks_) {
      if (b.kind == ConeKind::nonnegative) {
        x.segment(b.offset, b.size) =
            r.segment(b.offset, b.size).cwiseQuotient(lambda.segment(b.offset, b.size));
      } else {
        const Index n1 = b.size - 1;
        const double l0 = lambda(b.offset);
        const auto l1 = lambda.segment(b.offset + 1, n1);
        const double r0 = r(b.offset);
        const auto r1 = r.segment(b.offset + 1, n1);
        const double det = l0 * l0 - l1.squaredNorm();
        const double x0 = (l0 * r0 - l1.dot(r1)) / det;
        x(b.offset) = x0;
        x.segment(b.offset + 1, n1) = (r1 - x0 * l1) / l0;
      }
    }
    return x;
  }

  // Largest alpha with u + alpha d in K, for interior u (may be +inf).
  double max_step(const Vector& u, const Vector& d) const {
    double alpha = std::numeric_limits<double>::infinity();
    for (const auto& b : blocks_) {
      if (b.kind == ConeKind::nonnegative) {
        for (Index i = b.offset; i < b.offset + b.size; ++i)
          if (d(i) < 0.0) alpha = std::min(alpha, -u(i) / d(i));
      } else {
        alpha = std::min(alpha, soc_step(u.segment(b.offset, b.size), d.segment(b.offset, b.size)));
      }
    }
    return alpha;
  }

 private:
  // Largest alpha >= 0 with (u + alpha d) in the SOC.
  static double soc_step(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& d) {
    const Index n1 = u.size() - 1;
    const auto u1 = u.tail(n1);
    const auto d1 = d.tail(n1);
    // q(alpha) = (u0 + a d0)^2 - ||u1 + a d1||^2 = qa a^2 + 2 qb a + qc
    const double qa = d(0) * d(0) - d1.squaredNorm();
    const double qb = u(0) * d(0) - u1.dot(d1);
    const double qc = std::max(0.0, u(0) * u(0) - u1.squaredNorm());
    double alpha = std::numeric_limits<double>::infinity();
    if (d(0) < 0.0) alpha = -u(0) / d(0);
    const double disc = qb * qb - qa * qc;
    if (qa < 0.0) {
      // one positive root
      const double root = disc > 0.0 ? std::sqrt(disc) : 0.0;
      const double a = qb >= 0.0 ? (qb + root) / (-qa) : qc / (root - qb);
      alpha = std::min(alpha, a);
    } else if (qa == 0.0) {
      if (qb < 0.0) alpha = std::min(alpha, qc / (-2.0 * qb));
    } else if (qb < 0.0 && disc >= 0.0) {
      // both roots positive, the smaller one exits the cone
      const double root = std::sqrt(disc);
      alpha = std::min(alpha, qc / (-qb + root));
    }
    return std::max(alpha, 0.0);
  }

  std::vector<Block> blocks_;
  Index degree_ = 0;
};

// Nesterov-Todd scaling W with W z = W^{-1} s = lambda.
class Scaling {
 public:
  explicit Scaling(const Cones& cones) : cones_(&cones) {}

  void set_identity(Index m) {
    lp_.setOnes(m);
    soc_.clear();
    soc_inv_.clear();
    for (const auto& b : cones_->blocks())
      if (b.kind == ConeKind::second_order) {
        soc_.push_back(Matrix::Identity(b.size, b.size));
        soc_inv_.push_back(Matrix::Identity(b.size, b.size));
      }
  }

  // Returns false when s or z is not strictly interior.
  bool compute(const Vector& s, const Vector& z) {
    lp_.setOnes(s.size());
    soc_.clear();
    soc_inv_.clear();
    for (const auto& b : cones_->blocks()) {
      if (b.kind == ConeKind::nonnegative) {
        const auto sb = s.segment(b.offset, b.size);
        const auto zb = z.segment(b.offset, b.size);
        if ((sb.array() <= 0.0).any() || (zb.array() <= 0.0).any()) return false;
        lp_.segment(b.offset, b.size) = (sb.array() / zb.array()).sqrt();
        continue;
      }
      const Index n1 = b.size - 1;
      const auto sb = s.segment(b.offset, b.size);
      const auto zb = z.segment(b.offset, b.size);
      const double sr = sb.tail(n1).norm();
      const double zr = zb.tail(n1).norm();
      const double snorm2 = (sb(0) - sr) * (sb(0) + sr);
      const double znorm2 = (zb(0) - zr) * (zb(0) + zr);
      if (!(sb(0) > sr) || !(zb(0) > zr) || !(snorm2 > 0.0) || !(znorm2 > 0.0)) return false;
      const Vector sbar = sb / std::sqrt(snorm2);
      const Vector zbar = zb / std::sqrt(znorm2);
      const double gamma = std::sqrt(0.5 * (1.0 + sbar.dot(zbar)));
      Vector wbar(b.size);
      wbar(0) = (sbar(0) + zbar(0)) / (2.0 * gamma);
      wbar.tail(n1) = (sbar.tail(n1) - zbar.tail(n1)) / (2.0 * gamma);
      const double eta = std::pow(snorm2 / znorm2, 0.25);
      Matrix w(b.size, b.size);
      w(0, 0) = wbar(0);
      w.block(0, 1, 1, n1) = wbar.tail(n1).transpose();
      w.block(1, 0, n1, 1) = wbar.tail(n1);
      w.block(1, 1, n1, n1) = Matrix::Identity(n1, n1) +
                              wbar.tail(n1) * wbar.tail(n1).transpose() / (1.0 + wbar(0));
      Matrix winv = w;
      winv.block(0, 1, 1, n1) *= -1.0;
      winv.block(1, 0, n1, 1) *= -1.0;
      soc_.push_back(eta * w);
      soc_inv_.push_back(winv / eta);
    }
    return true;
  }

  Vector apply(const Vector& v) const { return apply_impl(v, false); }
  Vector apply_inverse(const Vector& v) const { return apply_impl(v, true); }

  double lp(Index row) const { return lp_(row); }
  const std::vector<Matrix>& soc_blocks() const { return soc_; }

 private:
  Vector apply_impl(const Vector& v, bool inverse) const {
    Vector out(v.size());
    std::size_t k = 0;
    for (const auto& b : cones_->blocks()) {
      if (b.kind == ConeKind::nonnegative) {
        const auto w = lp_.segment(b.offset, b.size).array();
        if (inverse)
          out.segment(b.offset, b.size) = (v.segment(b.offset, b.size).array() / w).matrix();
        else
          out.segment(b.offset, b.size) = (v.segment(b.offset, b.size).array() * w).matrix();
      } else {
        const Matrix& w = inverse ? soc_inv_[k] : soc_[k];
        out.segment(b.offset, b.size) = w * v.segment(b.offset, b.size);
        ++k;
      }
    }
    return out;
  }

  const Cones* cones_;
  Vector lp_;
  std::vector<Matrix> soc_;
  std::vector<Matrix> soc_inv_;
};

// Regularized quasi-definite KKT system
//   [ 0  A'  G'  ]
//   [ A  0   0   ]
//   [ G  0  -W^2 ]
// with the sparsity pattern analyzed once and the W^2 block updated in place.
class Kkt {
 public:
  Kkt(const ConicProgram& prog, const Cones& cones, double delta)
      : prog_(prog), cones_(cones), delta_(delta) {
    n_ = prog.num_variables();
    p_ = prog.num_equalities();
    m_ = prog.num_cone_rows();
    const Index dim = n_ + p_ + m_;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(dim + prog.A.nonZeros() + prog.G.nonZeros()));
    for (Index j = 0; j < n_; ++j) trips.emplace_back(j, j, delta_);
    for (Index k = 0; k < prog.A.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(prog.A, k); it; ++it)
        trips.emplace_back(n_ + it.row(), it.col(), it.value());
    for (Index k = 0; k < prog.G.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(prog.G, k); it; ++it)
        trips.emplace_back(n_ + p_ + it.row(), it.col(), it.value());
    for (Index i = 0; i < p_; ++i) trips.emplace_back(n_ + i, n_ + i, -delta_);
    const Index z0 = n_ + p_;
    for (const auto& b : cones.blocks()) {
      if (b.kind == ConeKind::nonnegative) {
        for (Index i = 0; i < b.size; ++i) trips.emplace_back(z0 + b.offset + i, z0 + b.offset + i, -1.0);
      } else {
        for (Index c = 0; c < b.size; ++c)
          for (Index r = c; r < b.size; ++r)
            trips.emplace_back(z0 + b.offset + r, z0 + b.offset + c, r == c ? -1.0 : 1.0);
      }
    }
    K_.resize(dim, dim);
    K_.setFromTriplets(trips.begin(), trips.end());
    K_.makeCompressed();
    for (Index j = 0; j < z0; ++j) reg_slots_.push_back(&K_.coeffRef(j, j));
    for (const auto& b : cones.blocks()) {
      if (b.kind == ConeKind::nonnegative) {
        for (Index i = 0; i < b.size; ++i)
          lp_slots_.push_back(&K_.coeffRef(z0 + b.offset + i, z0 + b.offset + i));
      } else {
        std::vector<double*> slots;
        for (Index c = 0; c < b.size; ++c)
          for (Index r = c; r < b.size; ++r) slots.push_back(&K_.coeffRef(z0 + b.offset + r, z0 + b.offset + c));
        soc_slots_.push_back(std::move(slots));
      }
    }
    ldlt_.analyzePattern(K_);
  }

  // Returns false if the factorization breaks down.
  bool factor(const Scaling& w) {
    // Near the cone boundary W^2 spans many orders of magnitude and a pivot can
    // cancel to zero; retry with stronger regularization. Refinement in solve()
    // runs against the unregularized matrix.
    bool ok = false;
    double reg = delta_;
    for (int attempt = 0; attempt < 4 && !ok; ++attempt, reg *= 100.0) {
      fill(w, reg);
      ldlt_.factorize(K_);
      ok = ldlt_.info() == Eigen::Success;
      if (attempt > 0) work += factor_work_;
    }
    if (!ok) return false;
    if (factor_work_ == 0.0) {
      const SparseMatrix& L = ldlt_.matrixL();
      double flops = 0.0;
      for (Index k = 0; k < L.outerSize(); ++k) {
        const double cnt = static_cast<double>(L.outerIndexPtr()[k + 1] - L.outerIndexPtr()[k]);
        flops += cnt * cnt;
      }
      factor_work_ = flops + static_cast<double>(K_.nonZeros());
      solve_work_ = 4.0 * static_cast<double>(L.nonZeros()) + 2.0 * static_cast<double>(K_.rows());
    }
    work += factor_work_;
    scaling_ = &w;
    return true;
  }

  Vector solve(const Vector& rhs, int refinement) {
    Vector u = ldlt_.solve(rhs);
    work += solve_work_;
    const double scale = 1.0 + rhs.lpNorm<Eigen::Infinity>();
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 0; k < refinement; ++k) {
      const Vector e = rhs - multiply(u);
      const double err = e.lpNorm<Eigen::Infinity>();
      work += 2.0 * static_cast<double>(K_.nonZeros());
      // Stop at roundoff or once refinement no longer contracts.
      if (!(err > 1e-14 * scale) || !(err < 0.5 * prev)) break;
      prev = err;
      u += ldlt_.solve(e);
      work += solve_work_;
    }
    return u;
  }

  double work = 0.0;

 private:
  void fill(const Scaling& w, double reg) {
    for (Index j = 0; j < n_ + p_; ++j) *reg_slots_[static_cast<std::size_t>(j)] = j < n_ ? reg : -reg;
    std::size_t lp = 0;
    std::size_t soc = 0;
    for (const auto& b : cones_.blocks()) {
      if (b.kind == ConeKind::nonnegative) {
        for (Index i = 0; i < b.size; ++i) {
          const double wi = w.lp(b.offset + i);
          *lp_slots_[lp++] = -wi * wi - reg;
        }
      } else {
        const Matrix w2 = w.soc_blocks()[soc] * w.soc_blocks()[soc];
        std::size_t k = 0;
        for (Index c = 0; c < b.size; ++c)
          for (Index r = c; r < b.size; ++r) *soc_slots_[soc][k++] = -w2(r, c) - (r == c ? reg : 0.0);
        ++soc;
      }
    }
  }

  // Unregularized KKT product.
  Vector multiply(const Vector& u) const {
    const auto ux = u.head(n_);
    const auto uy = u.segment(n_, p_);
    const Vector uz = u.tail(m_);
    Vector out(u.size());
    out.head(n_) = prog_.A.transpose() * uy + prog_.G.transpose() * uz;
    out.segment(n_, p_) = prog_.A * ux;
    out.tail(m_) = prog_.G * ux - scaling_->apply(scaling_->apply(uz));
    return out;
  }

  const ConicProgram& prog_;
  const Cones& cones_;
  double delta_;
  Index n_ = 0, p_ = 0, m_ = 0;
  SparseMatrix K_;
  std::vector<double*> reg_slots_;
  std::vector<double*> lp_slots_;
  std::vector<std::vector<double*>> soc_slots_;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  const Scaling* scaling_ = nullptr;
  double factor_work_ = 0.0;
  double solve_work_ = 0.0;
};

struct Direction {
  Vector x, y, z, s;
  double tau = 0.0, kappa = 0.0;
};

}  // namespace

void ConicProgram::validate() const {
  const Index n = c.size();
  const Index p = b.size();
  const Index m = h.size();
  require(A.rows() == p && (A.cols() == n || p == 0), "conic: A has wrong dimensions");
  require(G.rows() == m && (G.cols() == n || m == 0), "conic: G has wrong dimensions");
  Index total = 0;
  for (const auto& cone : cones) {
    require(cone.size >= 0, "conic: negative cone size");
    require(cone.kind != ConeKind::second_order || cone.size >= 1, "conic: empty second-order cone");
    total += cone.size;
  }
  require(total == m, "conic: cone sizes do not partition the rows of G");
  require(all_finite(c) && all_finite(b) && all_finite(h) && all_finite(A) && all_finite(G),
          "conic: non-finite data");
  require(std::isfinite(objective_offset), "conic: non-finite objective offset");
}

std::string to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::unbounded: return "unbounded";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::stalled: return "stalled";
  }
  return "unknown";
}

ConicSolution solve(const ConicProgram& prog_in, const SolverSettings& settings) {
  prog_in.validate();
  require(settings.tol > 0.0 && settings.max_iter > 0, "conic: bad solver settings");
  require(settings.step_fraction > 0.0 && settings.step_fraction < 1.0, "conic: bad step fraction");

  // Work on a copy with well-shaped empty blocks.
  ConicProgram prog = prog_in;
  const Index n = prog.num_variables();
  const Index p = prog.num_equalities();
  const Index m = prog.num_cone_rows();
  if (prog.A.cols() != n) prog.A.resize(p, n);
  if (prog.G.cols() != n) prog.G.resize(m, n);

  const Cones cones(prog.cones);
  const double degree = static_cast<double>(cones.degree());
  Scaling scaling(cones);
  Kkt kkt(prog, cones, 1e-9);

  ConicSolution sol;
  const auto finish = [&](SolveStatus status) {
    sol.status = status;
    sol.work = kkt.work;
    return sol;
  };

  const auto split = [&](const Vector& u, Vector& ux, Vector& uy, Vector& uz) {
    ux = u.head(n);
    uy = u.segment(n, p);
    uz = u.tail(m);
  };

  // Initial point from two least-squares style solves with W = I.
  Vector x, y, z, s;
  scaling.set_identity(m);
  if (!kkt.factor(scaling)) return finish(SolveStatus::stalled);
  {
    Vector rhs(n + p + m);
    rhs << Vector::Zero(n), prog.b, prog.h;
    Vector ux, uy, uz;
    split(kkt.solve(rhs, settings.refinement_steps), ux, uy, uz);
    x = ux;
    s = -uz;
    rhs << -prog.c, Vector::Zero(p), Vector::Zero(m);
    split(kkt.solve(rhs, settings.refinement_steps), ux, uy, uz);
    y = uy;
    z = uz;
    if (m > 0) {
      const double ap = -cones.min_eig(s);
      if (ap >= 0.0) cones.add_identity(s, 1.0 + ap);
      const double ad = -cones.min_eig(z);
      if (ad >= 0.0) cones.add_identity(z, 1.0 + ad);
    }
  }
  double tau = 1.0;
  double kappa = 1.0;

  const double nc = std::max(1.0, prog.c.norm());
  const double nb = std::max(1.0, prog.b.norm());
  const double nh = std::max(1.0, prog.h.norm());
  const double tol = settings.tol;

  const auto store = [&](double scale_primal, double scale_dual) {
    sol.x = x / scale_primal;
    sol.s = s / scale_primal;
    sol.y = y / scale_dual;
    sol.z = z / scale_dual;
  };

  // Best iterate so far, returned when progress breaks down close to the
  // optimum.
  ConicSolution best;
  double best_merit = std::numeric_limits<double>::infinity();
  const auto breakdown = [&](SolveStatus status) {
    if (best_merit <= settings.reduced_tol) {
      const double work = kkt.work;
      sol = best;
      sol.reduced_accuracy = true;
      sol.work = work;
      return finish(SolveStatus::optimal);
    }
    return finish(status);
  };

  Vector ux1, uy1, uz1;
  for (int it = 0;; ++it) {
    sol.iterations = it;
    const Vector rx = prog.A.transpose() * y + prog.G.transpose() * z + prog.c * tau;
    const Vector ry = -(prog.A * x) + prog.b * tau;
    const Vector rz = -(prog.G * x) + prog.h * tau - s;
    const double cx = prog.c.dot(x);
    const double by_hz = prog.b.dot(y) + prog.h.dot(z);
    const double rtau = -cx - by_hz - kappa;

    const double pcost = cx / tau;
    const double dcost = -by_hz / tau;
    const double absgap = s.dot(z) / (tau * tau);
    double relgap = std::numeric_limits<double>::infinity();
    if (pcost < 0.0)
      relgap = absgap / -pcost;
    else if (dcost > 0.0)
      relgap = absgap / dcost;
    const double pres = std::max(p > 0 ? ry.norm() / nb : 0.0, m > 0 ? rz.norm() / nh : 0.0) / tau;
    const double dres = rx.norm() / nc / tau;
    sol.residuals = {pres, dres, std::min(absgap, relgap)};
    sol.objective = pcost + prog.objective_offset;
    sol.dual_objective = dcost + prog.objective_offset;

    if (!std::isfinite(pres) || !std::isfinite(dres) || !std::isfinite(absgap)) {
      store(tau, tau);
      return breakdown(SolveStatus::stalled);
    }
    if (pres < tol && dres < tol && (absgap < tol || relgap < tol)) {
      store(tau, tau);
      return finish(SolveStatus::optimal);
    }
    if (const double merit = std::max({pres, dres, std::min(absgap, relgap)}); merit < best_merit && kappa < tau) {
      best_merit = merit;
      store(tau, tau);
      best = sol;
    }
    if (by_hz < 0.0 && kappa > tau) {
      const double res = (prog.A.transpose() * y + prog.G.transpose() * z).norm() / -by_hz;
      if (res < tol) {
        store(tau, -by_hz);
        sol.x = x / -by_hz;
        sol.s = s / -by_hz;
        return finish(SolveStatus::infeasible);
      }
    }
    if (cx < 0.0 && kappa > tau) {
      const double ax = p > 0 ? (prog.A * x).norm() : 0.0;
      const double gxs = m > 0 ? (prog.G * x + s).norm() : 0.0;
      if (std::max(ax, gxs) / -cx < tol) {
        store(-cx, -cx);
        return finish(SolveStatus::unbounded);
      }
    }
    if (it >= settings.max_iter) {
      store(tau, tau);
      return breakdown(SolveStatus::max_iter);
    }

    if (!scaling.compute(s, z) || !kkt.factor(scaling)) {
      store(tau, tau);
      return breakdown(SolveStatus::stalled);
    }
    const Vector lambda = scaling.apply(z);

    Vector rhs1(n + p + m);
    rhs1 << -prog.c, prog.b, prog.h;
    split(kkt.solve(rhs1, settings.refinement_steps), ux1, uy1, uz1);
    const double l1 = -prog.c.dot(ux1) - prog.b.dot(uy1) - prog.h.dot(uz1);

    const auto direction = [&](double rho, const Vector& rc, double rtauc, Vector& scaled_ds) {
      Direction d;
      const Vector rlam = cones.divide(lambda, rc);
      const Vector wrlam = scaling.apply(rlam);
      Vector rhs(n + p + m);
      rhs << -rho * rx, rho * ry, rho * rz - wrlam;
      Vector ux2, uy2, uz2;
      split(kkt.solve(rhs, settings.refinement_steps), ux2, uy2, uz2);
      const double l2 = -prog.c.dot(ux2) - prog.b.dot(uy2) - prog.h.dot(uz2);
      const double d4 = -rho * rtau + rtauc / tau;
      d.tau = (d4 - l2) / (l1 + kappa / tau);
      d.x = ux2 + d.tau * ux1;
      d.y = uy2 + d.tau * uy1;
      d.z = uz2 + d.tau * uz1;
      const Vector wdz = scaling.apply(d.z);
      scaled_ds = rlam - wdz;
      d.s = scaling.apply(scaled_ds);
      d.kappa = (rtauc - kappa * d.tau) / tau;
      return std::make_pair(d, wdz);
    };

    const auto step_length = [&](const Direction& d, const Vector& scaled_ds, const Vector& scaled_dz) {
      double alpha = std::numeric_limits<double>::infinity();
      if (m > 0) {
        alpha = std::min(alpha, cones.max_step(lambda, scaled_ds));
        alpha = std::min(alpha, cones.max_step(lambda, scaled_dz));
      }
      if (d.tau < 0.0) alpha = std::min(alpha, -tau / d.tau);
      if (d.kappa < 0.0) alpha = std::min(alpha, -kappa / d.kappa);
      return alpha;
    };

    const double mu = (s.dot(z) + tau * kappa) / (degree + 1.0);

    // Predictor.
    Vector rc = -cones.product(lambda, lambda);
    Vector sds_a;
    auto [da, wdz_a] = direction(1.0, rc, -tau * kappa, sds_a);
    const double alpha_a = std::min(1.0, step_length(da, sds_a, wdz_a));
    const double sigma = std::clamp(std::pow(1.0 - alpha_a, 3), 0.0, 1.0);

    // Corrector.
    Vector e = Vector::Zero(m);
    cones.add_identity(e, 1.0);
    rc += sigma * mu * e - cones.product(sds_a, wdz_a);
    const double rtauc = -tau * kappa + sigma * mu - da.tau * da.kappa;
    Vector sds;
    auto [d, wdz] = direction(1.0 - sigma, rc, rtauc, sds);
    const double alpha = std::min(1.0, settings.step_fraction * step_length(d, sds, wdz));
    if (!(alpha > 1e-12) || !d.x.allFinite() || !d.z.allFinite() || !std::isfinite(d.tau)) {
      store(tau, tau);
      return breakdown(SolveStatus::stalled);
    }

    x += alpha * d.x;
    y += alpha * d.y;
    z += alpha * d.z;
    s += alpha * d.s;
    tau += alpha * d.tau;
    kappa += alpha * d.kappa;
  }
}

LinearExpr LinearExpr::variable(Index index, double coeff) {
  LinearExpr e;
  e.terms.emplace_back(index, coeff);
  return e;
}

LinearExpr& LinearExpr::add(Index index, double coeff) {
  if (coeff != 0.0) terms.emplace_back(index, coeff);
  return *this;
}

LinearExpr& LinearExpr::operator+=(const LinearExpr& other) {
  terms.insert(terms.end(), other.terms.begin(), other.terms.end());
  constant += other.constant;
  return *this;
}

LinearExpr& LinearExpr::operator-=(const LinearExpr& other) {
  for (const auto& [i, v] : other.terms) terms.emplace_back(i, -v);
  constant -= other.constant;
  return *this;
}

LinearExpr& LinearExpr::operator*=(double factor) {
  for (auto& t : terms) t.second *= factor;
  constant *= factor;
  return *this;
}

double LinearExpr::evaluate(const Vector& x) const {
  double v = constant;
  for (const auto& [i, c] : terms) v += c * x(i);
  return v;
}

LinearExpr operator+(LinearExpr lhs, const LinearExpr& rhs) { return lhs += rhs; }
LinearExpr operator-(LinearExpr lhs, const LinearExpr& rhs) { return lhs -= rhs; }
LinearExpr operator*(double factor, LinearExpr expr) { return expr *= factor; }

Index ProgramBuilder::add_variables(Index n, Domain domain) {
  require(n >= 0, "conic: negative variable count");
  const Index first = num_vars_;
  num_vars_ += n;
  if (domain == Domain::nonnegative) {
    for (Index i = 0; i < n; ++i) add_nonnegative(LinearExpr::variable(first + i));
  } else if (domain == Domain::second_order && n > 0) {
    std::vector<LinearExpr> parts;
    parts.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) parts.push_back(LinearExpr::variable(first + i));
    add_second_order_cone(parts);
  }
  return first;
}

void ProgramBuilder::add_equality(const LinearExpr& expr) { equalities_.push_back({expr}); }

void ProgramBuilder::add_nonnegative(const LinearExpr& expr) {
  cone_rows_.push_back({expr});
  if (!cones_.empty() && cones_.back().kind == ConeKind::nonnegative)
    ++cones_.back().size;
  else
    cones_.push_back({ConeKind::nonnegative, 1});
}

void ProgramBuilder::add_second_order_cone(std::span<const LinearExpr> parts) {
  require(!parts.empty(), "conic: empty second-order cone");
  for (const auto& part : parts) cone_rows_.push_back({part});
  cones_.push_back({ConeKind::second_order, static_cast<Index>(parts.size())});
}

void ProgramBuilder::set_objective(const LinearExpr& expr) { objective_ = expr; }

ConicProgram ProgramBuilder::build() const {
  ConicProgram prog;
  const Index n = num_vars_;
  prog.c = Vector::Zero(n);
  for (const auto& [i, v] : objective_.terms) {
    require(i >= 0 && i < n, "conic: objective references unknown variable");
    prog.c(i) += v;
  }
  prog.objective_offset = objective_.constant;

  const auto assemble = [n](const std::vector<Row>& rows, double sign, SparseMatrix& mat, Vector& rhs) {
    std::vector<Eigen::Triplet<double>> trips;
    rhs.resize(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (const auto& [i, v] : rows[r].expr.terms) {
        require(i >= 0 && i < n, "conic: constraint references unknown variable");
        trips.emplace_back(static_cast<Index>(r), i, sign * v);
      }
      rhs(static_cast<Index>(r)) = -sign * rows[r].expr.constant;
    }
    mat.resize(static_cast<Index>(rows.size()), n);
    mat.setFromTriplets(trips.begin(), trips.end());
    mat.prune(0.0);
    mat.makeCompressed();
  };
  // expr = a'x + c0 == 0  ->  a'x = -c0
  assemble(equalities_, 1.0, prog.A, prog.b);
  // expr = a'x + c0 in K  ->  h - Gx with G = -a, h = c0
  assemble(cone_rows_, -1.0, prog.G, prog.h);
  prog.cones = cones_;
  return prog;
}

Index add_quadratic_epigraph(ProgramBuilder& builder, const Matrix& weight,
                             std::span<const LinearExpr> terms) {
  const Index k = static_cast<Index>(terms.size());
  require(weight.rows() == k && weight.cols() == k, "conic: epigraph weight has wrong size");
  require(weight.allFinite(), "conic: non-finite epigraph weight");
  require((weight - weight.transpose()).cwiseAbs().maxCoeff() <=
              1e-10 * std::max(1.0, weight.cwiseAbs().maxCoeff()),
          "conic: epigraph weight is not symmetric");
  const Index t = builder.add_variable();
  std::vector<LinearExpr> parts;
  parts.push_back(LinearExpr::variable(t) + LinearExpr(1.0));
  parts.push_back(LinearExpr::variable(t) + LinearExpr(-1.0));
  if (k > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (weight + weight.transpose()));
    const Vector& ev = eig.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -1e-10 * scale) throw InputError("conic: epigraph weight is indefinite");
    for (Index i = 0; i < k; ++i) {
      if (ev(i) <= 1e-14 * scale) continue;
      LinearExpr f;
      const double root = 2.0 * std::sqrt(ev(i));
      for (Index j = 0; j < k; ++j) {
        const double coeff = root * eig.eigenvectors()(j, i);
        if (coeff != 0.0) f += coeff * terms[static_cast<std::size_t>(j)];
      }
      parts.push_back(std::move(f));
    }
  }
  builder.add_second_order_cone(parts);
  return t;
}

void write_triplets(std::ostream& os, const ConicProgram& prog) {
  os.precision(17);
  os << "# n " << prog.num_variables() << " p " << prog.num_equalities() << " m "
     << prog.num_cone_rows() << " offset " << prog.objective_offset << "\n";
  os << "# c\n";
  for (Index i = 0; i < prog.c.size(); ++i)
    if (prog.c(i) != 0.0) os << i << " 0 " << prog.c(i) << "\n";
  const auto dump = [&os](const char* name, const SparseMatrix& mat) {
    os << "# " << name << "\n";
    for (Index k = 0; k < mat.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(mat, k); it; ++it)
        os << it.row() << " " << it.col() << " " << it.value() << "\n";
  };
  dump("A", prog.A);
  os << "# b\n";
  for (Index i = 0; i < prog.b.size(); ++i) os << i << " 0 " << prog.b(i) << "\n";
  dump("G", prog.G);
  os << "# h\n";
  for (Index i = 0; i < prog.h.size(); ++i) os << i << " 0 " << prog.h(i) << "\n";
  os << "# cones\n";
  for (const auto& cone : prog.cones)
    os << (cone.kind == ConeKind::nonnegative ? "l " : "q ") << cone.size << "\n";
}

}  // namespace drmpc::conic
