#include "asem/oracle.hpp"

#include <cmath>

#include "asem/rng.hpp"

namespace asem {

// The operator maps the X1 probability space into the X2 one, both with
// unit mass, so its weighted norm cannot exceed 1; anything larger than
// rounding slack indicates a broken construction.
void check_operator(const DiscretizedOperator& op) {
  for (int j = 0; j < op.k2(); ++j) {
    const double row_sum = op.a_hat.row(j).sum();
    if (std::fabs(row_sum - 1.0) > 1e-12)
      fail_runtime("operator: row %d sums to %.17g, expected 1", j, row_sum);
  }
  const Eigen::VectorXd s1 = op.w1.array().sqrt();
  const Eigen::VectorXd s2 = op.w2.array().sqrt();
  const Eigen::MatrixXd sym =
      s2.asDiagonal() * op.a_hat * s1.cwiseInverse().asDiagonal();
  const double top = sym.jacobiSvd().singularValues()(0);
  if (top > 1.0 + 1e-10)
    fail_runtime("operator: weighted norm %.17g exceeds 1 + 1e-10", top);
}

namespace {

int match_grid_point(const std::vector<std::vector<double>>& grid,
                     std::span<const double> p, const char* what) {
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (grid[g].size() != p.size()) continue;
    double d = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) d += (grid[g][k] - p[k]) * (grid[g][k] - p[k]);
    if (d <= 1e-18) return static_cast<int>(g);
  }
  fail_runtime("operator: %s sample point does not lie on the design grid", what);
}

}  // namespace

DiscretizedOperator estimate_operator(const DiscreteDesign& design) {
  validate_design(design);
  const int k1 = static_cast<int>(design.joint_pmf.size());
  const int k2 = static_cast<int>(design.joint_pmf[0].size());
  DiscretizedOperator op;
  op.a_hat.resize(k2, k1);
  op.w1 = Eigen::VectorXd::Zero(k1);
  op.w2 = Eigen::VectorXd::Zero(k2);
  for (int i = 0; i < k1; ++i)
    for (int j = 0; j < k2; ++j) {
      op.w1(i) += design.joint_pmf[i][j];
      op.w2(j) += design.joint_pmf[i][j];
    }
  for (int j = 0; j < k2; ++j)
    for (int i = 0; i < k1; ++i) op.a_hat(j, i) = design.joint_pmf[i][j] / op.w2(j);
  op.x1_grid = design.x1_grid;
  op.x2_grid = design.x2_grid;
  check_operator(op);
  return op;
}

DiscretizedOperator estimate_operator(std::span<const Sample> samples,
                                      const DiscreteDesign& design) {
  validate_design(design);
  if (samples.empty()) fail_config("estimate_operator: no samples");
  const int k1 = static_cast<int>(design.x1_grid.size());
  const int k2 = static_cast<int>(design.x2_grid.size());
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(k2, k1);
  for (const Sample& s : samples) {
    if (s.eval_points.size() != 1)
      fail_config("estimate_operator: expected single-point samples");
    const int i = match_grid_point(design.x1_grid, s.eval_points[0].point, "x1");
    const int j = match_grid_point(design.x2_grid, s.instrument, "x2");
    counts(j, i) += 1.0;
  }
  DiscretizedOperator op;
  op.a_hat.resize(k2, k1);
  op.w1.resize(k1);
  op.w2.resize(k2);
  const double n = static_cast<double>(samples.size());
  for (int j = 0; j < k2; ++j) {
    const double nj = counts.row(j).sum();
    if (nj == 0.0) fail_runtime("estimate_operator: no observations for X2 state %d", j);
    op.a_hat.row(j) = counts.row(j) / nj;
    op.w2(j) = nj / n;
  }
  for (int i = 0; i < k1; ++i) {
    const double ni = counts.col(i).sum();
    if (ni == 0.0) fail_runtime("estimate_operator: no observations for X1 state %d", i);
    op.w1(i) = ni / n;
  }
  op.x1_grid = design.x1_grid;
  op.x2_grid = design.x2_grid;
  check_operator(op);
  return op;
}

Eigen::VectorXd apply(const DiscretizedOperator& op, const Eigen::VectorXd& f) {
  if (f.size() != op.k1()) fail_config("apply: f has size %ld, expected %d",
                                       static_cast<long>(f.size()), op.k1());
  return op.a_hat * f;
}

Eigen::VectorXd apply_adjoint(const DiscretizedOperator& op, const Eigen::VectorXd& u) {
  if (u.size() != op.k2()) fail_config("apply_adjoint: u has size %ld, expected %d",
                                       static_cast<long>(u.size()), op.k2());
  return op.w1.cwiseInverse().asDiagonal() * (op.a_hat.transpose() * (op.w2.asDiagonal() * u));
}

double weighted_sq_norm_x1(const DiscretizedOperator& op, const Eigen::VectorXd& f) {
  return f.dot(op.w1.asDiagonal() * f);
}

double weighted_sq_norm_x2(const DiscretizedOperator& op, const Eigen::VectorXd& u) {
  return u.dot(op.w2.asDiagonal() * u);
}

Eigen::VectorXd tikhonov_solve(const DiscretizedOperator& op, const Eigen::VectorXd& b,
                               double alpha) {
  if (!(alpha > 0.0)) fail_config("tikhonov_solve: alpha must be positive, got %g", alpha);
  if (b.size() != op.k2()) fail_config("tikhonov_solve: b has size %ld, expected %d",
                                       static_cast<long>(b.size()), op.k2());
  // Symmetrize with the weight square roots: with At = D2^(1/2) A D1^(-1/2)
  // the normal equation becomes (alpha I + At' At) ft = At' D2^(1/2) b and
  // the original solution is f = D1^(-1/2) ft.
  const Eigen::VectorXd s1 = op.w1.array().sqrt();
  const Eigen::VectorXd s2 = op.w2.array().sqrt();
  const Eigen::MatrixXd at = s2.asDiagonal() * op.a_hat * s1.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd lhs =
      alpha * Eigen::MatrixXd::Identity(op.k1(), op.k1()) + at.transpose() * at;
  const Eigen::VectorXd rhs = at.transpose() * (s2.asDiagonal() * b);
  const Eigen::VectorXd f = s1.cwiseInverse().asDiagonal() * lhs.ldlt().solve(rhs).eval();

  const Eigen::VectorXd residual =
      alpha * f + apply_adjoint(op, apply(op, f)) - apply_adjoint(op, b);
  const double rnorm = std::sqrt(weighted_sq_norm_x1(op, residual));
  const double scale = std::max(1.0, std::sqrt(weighted_sq_norm_x1(op, apply_adjoint(op, b))));
  if (rnorm > 1e-10 * scale)
    fail_runtime("tikhonov_solve: normal-equation residual %.3g too large", rnorm);
  return f;
}

Eigen::VectorXd solve_regularized(const DiscretizedOperator& op, const Eigen::VectorXd& b,
                                  double alpha) {
  if (alpha > 0.0) return tikhonov_solve(op, b, alpha);
  if (b.size() != op.k2())
    fail_config("solve_regularized: b has size %ld, expected %d",
                static_cast<long>(b.size()), op.k2());
  const SingularSystem sys = svd_system(op);
  const double cutoff = 1e-12 * sys.values(0);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(op.k1());
  for (Eigen::Index j = 0; j < sys.values.size(); ++j) {
    if (sys.values(j) <= cutoff) break;
    const double coef = sys.left.col(j).dot(op.w2.cwiseProduct(b)) / sys.values(j);
    f += coef * sys.right.col(j);
  }
  return f;
}

SingularSystem svd_system(const DiscretizedOperator& op) {
  const Eigen::VectorXd s1 = op.w1.array().sqrt();
  const Eigen::VectorXd s2 = op.w2.array().sqrt();
  const Eigen::MatrixXd at = s2.asDiagonal() * op.a_hat * s1.cwiseInverse().asDiagonal();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(at, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SingularSystem sys;
  sys.values = svd.singularValues();
  sys.left = s2.cwiseInverse().asDiagonal() * svd.matrixU();
  sys.right = s1.cwiseInverse().asDiagonal() * svd.matrixV();
  return sys;
}

Eigen::VectorXd make_beta_regular_truth(const SingularSystem& sys, double beta,
                                        double coeff_norm, std::uint64_t seed) {
  if (!(beta > 0.0)) fail_config("beta truth: beta must be positive, got %g", beta);
  if (!(coeff_norm >= 0.0)) fail_config("beta truth: coeff_norm must be >= 0");
  if (sys.values.size() == 0) fail_config("beta truth: empty singular system");
  const double cutoff = 1e-12 * sys.values(0);
  int r = 0;
  while (r < sys.values.size() && sys.values(r) > cutoff) ++r;
  if (r == 0) fail_config("beta truth: no retained singular components");

  CounterRng rng = CounterRng(seed).fork(0);
  Eigen::VectorXd g(r);
  for (int j = 0; j < r; ++j) g(j) = rng.gaussian();
  if (coeff_norm == 0.0) return Eigen::VectorXd::Zero(sys.right.rows());
  // Coefficients lambda^beta g_j make the regularity sum equal |g|^2, so a
  // single global rescale pins it to coeff_norm^2 exactly.
  const double scale = coeff_norm / g.norm();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(sys.right.rows());
  for (int j = 0; j < r; ++j)
    f += scale * std::pow(sys.values(j), beta) * g(j) * sys.right.col(j);
  return f;
}

double primal_loss(const DiscretizedOperator& op, const Eigen::VectorXd& f,
                   const Eigen::VectorXd& b, double alpha) {
  const Eigen::VectorXd r = apply(op, f) - b;
  return 0.5 * weighted_sq_norm_x2(op, r) + 0.5 * alpha * weighted_sq_norm_x1(op, f);
}

double suboptimality(const DiscretizedOperator& op, const Eigen::VectorXd& f,
                     const Eigen::VectorXd& b, double alpha,
                     const Eigen::VectorXd& f_alpha) {
  return primal_loss(op, f, b, alpha) - primal_loss(op, f_alpha, b, alpha);
}

double suboptimality(const DiscretizedOperator& op, const Eigen::VectorXd& f,
                     const Eigen::VectorXd& b, double alpha) {
  return suboptimality(op, f, b, alpha, tikhonov_solve(op, b, alpha));
}

double grid_payoff(const DiscretizedOperator& op, const Eigen::VectorXd& f,
                   const Eigen::VectorXd& u, const Eigen::VectorXd& b, double alpha) {
  if (u.size() != op.k2() || b.size() != op.k2() || f.size() != op.k1())
    fail_config("grid_payoff: mismatched grid function sizes");
  const Eigen::VectorXd af = apply(op, f);
  double s = 0.0;
  for (int j = 0; j < op.k2(); ++j)
    s += op.w2(j) * ((af(j) - b(j)) * u(j) - 0.5 * u(j) * u(j));
  return s + 0.5 * alpha * weighted_sq_norm_x1(op, f);
}

Eigen::VectorXd best_response(const DiscretizedOperator& op, const Eigen::VectorXd& f,
                              const Eigen::VectorXd& b) {
  if (b.size() != op.k2()) fail_config("best_response: b has size %ld, expected %d",
                                       static_cast<long>(b.size()), op.k2());
  return apply(op, f) - b;
}

Eigen::VectorXd tabulate_grid(const std::function<double(std::span<const double>)>& fn,
                              const std::vector<std::vector<double>>& grid) {
  if (!fn) fail_config("tabulate_grid: null function");
  Eigen::VectorXd out(static_cast<long>(grid.size()));
  for (std::size_t g = 0; g < grid.size(); ++g) out(static_cast<long>(g)) = fn(grid[g]);
  return out;
}

}  // namespace asem
