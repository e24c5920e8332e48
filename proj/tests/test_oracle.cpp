#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "asem/generators.hpp"
#include "asem/oracle.hpp"
#include "asem/rng.hpp"

using namespace asem;

namespace {

// Independent route to the regularized minimum: assemble the loss as a
// plain euclidean quadratic and invert its Hessian by eigendecomposition.
// No shared code with tikhonov_solve beyond the operator itself.
Eigen::VectorXd qp_oracle(const DiscretizedOperator& op, const Eigen::VectorXd& b,
                          double alpha) {
  const Eigen::MatrixXd hess = op.a_hat.transpose() * op.w2.asDiagonal() * op.a_hat +
                               alpha * Eigen::MatrixXd(op.w1.asDiagonal());
  const Eigen::VectorXd lin = op.a_hat.transpose() * (op.w2.asDiagonal() * b);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess);
  return es.eigenvectors() *
         es.eigenvalues().cwiseInverse().asDiagonal() *
         (es.eigenvectors().transpose() * lin);
}

DiscreteDesign make_random_design(int k1, int k2, std::uint64_t seed) {
  CounterRng rng(seed);
  DiscreteDesign d;
  d.joint_pmf.assign(k1, std::vector<double>(k2, 0.0));
  double total = 0.0;
  for (auto& row : d.joint_pmf)
    for (double& p : row) {
      p = rng.uniform(0.05, 1.0);
      total += p;
    }
  for (auto& row : d.joint_pmf)
    for (double& p : row) p /= total;
  for (int i = 0; i < k1; ++i) {
    const double a = 3.14159265358979323846 * (i + 0.5) / k1;
    d.x1_grid.push_back({std::cos(a), std::sin(a)});
  }
  for (int j = 0; j < k2; ++j) {
    const double a = 3.14159265358979323846 * (j + 0.5) / k2;
    d.x2_grid.push_back({std::cos(a), std::sin(a)});
  }
  d.f_true.assign(k1, 0.0);
  for (double& v : d.f_true) v = rng.uniform(-1.0, 1.0);
  return d;
}

Eigen::VectorXd random_vec(int n, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("operator from an exact pmf: conditioning on the second margin") {
  // P(X1=i, X2=j) chosen so P(.|X2=0) = (0.8, 0.2) and P(.|X2=1) = (0.4, 0.6).
  DiscreteDesign d;
  d.joint_pmf = {{0.4, 0.2}, {0.1, 0.3}};
  d.x1_grid = {{1.0, 0.0}, {0.0, 1.0}};
  d.x2_grid = {{1.0, 0.0}, {0.0, 1.0}};
  d.f_true = {0.0, 0.0};
  const DiscretizedOperator op = estimate_operator(d);
  CHECK(op.a_hat(0, 0) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(op.a_hat(0, 1) == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(op.a_hat(1, 0) == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(op.a_hat(1, 1) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(op.w1(0) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(op.w2(0) == doctest::Approx(0.5).epsilon(1e-14));

  // Independent pmf: every conditional row equals the X1 marginal.
  DiscreteDesign ind;
  ind.joint_pmf = {{0.2 * 0.3, 0.2 * 0.7}, {0.8 * 0.3, 0.8 * 0.7}};
  ind.x1_grid = d.x1_grid;
  ind.x2_grid = d.x2_grid;
  ind.f_true = {0.0, 0.0};
  const DiscretizedOperator iop = estimate_operator(ind);
  for (int j = 0; j < 2; ++j) {
    CHECK(iop.a_hat(j, 0) == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(iop.a_hat(j, 1) == doctest::Approx(0.8).epsilon(1e-14));
  }

  // Diagonal pmf: the operator is the identity.
  DiscreteDesign diag;
  diag.joint_pmf = {{0.5, 0.0}, {0.0, 0.5}};
  diag.x1_grid = d.x1_grid;
  diag.x2_grid = d.x2_grid;
  diag.f_true = {0.0, 0.0};
  const DiscretizedOperator dop = estimate_operator(diag);
  CHECK(dop.a_hat.isApprox(Eigen::MatrixXd::Identity(2, 2), 1e-15));
}

TEST_CASE("operator invariants: stochastic rows, ones to ones, norm bound") {
  const DiscreteDesign d = make_random_design(7, 9, 5);
  const DiscretizedOperator op = estimate_operator(d);
  for (int j = 0; j < op.k2(); ++j) CHECK(std::fabs(op.a_hat.row(j).sum() - 1.0) < 1e-12);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(op.k1());
  CHECK((apply(op, ones) - Eigen::VectorXd::Ones(op.k2())).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK(std::fabs(op.w1.sum() - 1.0) < 1e-12);
  CHECK(std::fabs(op.w2.sum() - 1.0) < 1e-12);
  // Norm bound holds with slack on a random instance.
  const SingularSystem sys = svd_system(op);
  CHECK(sys.values(0) <= 1.0 + 1e-10);
}

TEST_CASE("operator rejects degenerate pmfs") {
  DiscreteDesign d;
  d.joint_pmf = {{0.5, 0.5}, {0.0, 0.0}};  // X1 state 1 has zero mass
  d.x1_grid = {{1.0}, {0.0}};
  d.x2_grid = {{1.0}, {0.0}};
  d.f_true = {0.0, 0.0};
  CHECK_THROWS_AS(estimate_operator(d), ConfigError);
  d.joint_pmf = {{0.5, 0.5}, {0.3, 0.3}};  // sums to 1.6
  CHECK_THROWS_AS(estimate_operator(d), ConfigError);
}

TEST_CASE("empirical operator converges to the exact one") {
  const DiscreteDesign d = make_random_design(4, 3, 17);
  const DiscretizedOperator exact = estimate_operator(d);
  const std::vector<Sample> samples = gen_discrete(d, 40000, 99);
  const DiscretizedOperator emp = estimate_operator(samples, d);
  CHECK((emp.a_hat - exact.a_hat).lpNorm<Eigen::Infinity>() < 0.05);
  CHECK((emp.w1 - exact.w1).lpNorm<Eigen::Infinity>() < 0.02);
  CHECK((emp.w2 - exact.w2).lpNorm<Eigen::Infinity>() < 0.02);
}

TEST_CASE("empirical operator reports unobserved states") {
  DiscreteDesign d = make_random_design(3, 3, 21);
  // Starve one X2 state of mass; 40 draws will never see it.
  for (int i = 0; i < 3; ++i) d.joint_pmf[i][2] = 1e-12;
  double total = 0.0;
  for (auto& row : d.joint_pmf)
    for (double p : row) total += p;
  for (auto& row : d.joint_pmf)
    for (double& p : row) p /= total;
  const std::vector<Sample> samples = gen_discrete(d, 40, 7);
  CHECK_THROWS_AS(estimate_operator(samples, d), RuntimeError);
}

TEST_CASE("adjoint is the weighted transpose") {
  const DiscreteDesign d = make_random_design(6, 8, 31);
  const DiscretizedOperator op = estimate_operator(d);
  CounterRng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::VectorXd f = random_vec(op.k1(), rng);
    const Eigen::VectorXd u = random_vec(op.k2(), rng);
    const double lhs = apply(op, f).dot(op.w2.asDiagonal() * u);
    const double rhs = f.dot(op.w1.asDiagonal() * apply_adjoint(op, u));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
  }
}

TEST_CASE("tikhonov: identity operator shrinks by 1/(1+alpha)") {
  DiscreteDesign diag;
  const int k = 5;
  diag.joint_pmf.assign(k, std::vector<double>(k, 0.0));
  for (int i = 0; i < k; ++i) diag.joint_pmf[i][i] = 1.0 / k;
  for (int i = 0; i < k; ++i) {
    const double a = 3.14159265358979323846 * (i + 0.5) / k;
    diag.x1_grid.push_back({std::cos(a), std::sin(a)});
    diag.x2_grid.push_back({std::cos(a), std::sin(a)});
  }
  diag.f_true.assign(k, 0.0);
  const DiscretizedOperator op = estimate_operator(diag);
  CounterRng rng(8);
  const Eigen::VectorXd b = random_vec(k, rng);
  for (double alpha : {1e-3, 0.1, 1.0}) {
    const Eigen::VectorXd f = tikhonov_solve(op, b, alpha);
    CHECK((f - b / (1.0 + alpha)).lpNorm<Eigen::Infinity>() < 1e-12);
  }
  // Zero data: zero solution.
  const Eigen::VectorXd f0 = tikhonov_solve(op, Eigen::VectorXd::Zero(k), 0.5);
  CHECK(f0.lpNorm<Eigen::Infinity>() == 0.0);
  CHECK_THROWS_AS(tikhonov_solve(op, b, 0.0), ConfigError);
}

TEST_CASE("tikhonov agrees with the direct quadratic oracle") {
  CounterRng rng(12);
  for (int trial = 0; trial < 6; ++trial) {
    const DiscreteDesign d = make_random_design(8, 8, 100 + trial);
    const DiscretizedOperator op = estimate_operator(d);
    const Eigen::VectorXd b = random_vec(op.k2(), rng);
    for (double alpha : {1e-2, 0.3}) {
      const Eigen::VectorXd f = tikhonov_solve(op, b, alpha);
      const Eigen::VectorXd f_ref = qp_oracle(op, b, alpha);
      CHECK(std::sqrt(weighted_sq_norm_x1(op, f - f_ref)) < 1e-8);
      // Normal-equation residual, checked here independently as well.
      const Eigen::VectorXd res =
          alpha * f + apply_adjoint(op, apply(op, f)) - apply_adjoint(op, b);
      CHECK(std::sqrt(weighted_sq_norm_x1(op, res)) < 1e-10);
    }
  }
}

TEST_CASE("tikhonov: solution norm decreases in alpha") {
  const DiscreteDesign d = make_random_design(10, 10, 55);
  const DiscretizedOperator op = estimate_operator(d);
  CounterRng rng(3);
  const Eigen::VectorXd b = random_vec(op.k2(), rng);
  double prev = 1e300;
  for (double alpha : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    const double n = std::sqrt(weighted_sq_norm_x1(op, tikhonov_solve(op, b, alpha)));
    CHECK(n < prev);
    prev = n;
  }
}

TEST_CASE("tikhonov approaches the least-squares solution as alpha -> 0") {
  // Mixture of a diagonal and a product pmf: A = 0.6 I + 0.4/K 11', so the
  // spectrum lies in [0.6, 1] and the instance is well conditioned.
  const int k = 8;
  DiscreteDesign mix;
  mix.joint_pmf.assign(k, std::vector<double>(k, 0.4 / (k * k)));
  for (int i = 0; i < k; ++i) mix.joint_pmf[i][i] += 0.6 / k;
  for (int i = 0; i < k; ++i) {
    const double a = 3.14159265358979323846 * (i + 0.5) / k;
    mix.x1_grid.push_back({std::cos(a), std::sin(a)});
    mix.x2_grid.push_back({std::cos(a), std::sin(a)});
  }
  mix.f_true.assign(k, 0.0);
  const DiscretizedOperator op = estimate_operator(mix);
  const SingularSystem sys = svd_system(op);
  CHECK(sys.values(sys.values.size() - 1) > 0.5);
  CounterRng rng(9);
  const Eigen::VectorXd b = random_vec(op.k2(), rng);
  // Least squares through the singular system: f = sum <b,psi>_w2 / lambda phi.
  Eigen::VectorXd f_ls = Eigen::VectorXd::Zero(op.k1());
  for (int j = 0; j < sys.values.size(); ++j) {
    const double bj = b.dot(op.w2.asDiagonal() * sys.left.col(j));
    f_ls += bj / sys.values(j) * sys.right.col(j);
  }
  const Eigen::VectorXd f = tikhonov_solve(op, b, 1e-10);
  CHECK(std::sqrt(weighted_sq_norm_x1(op, f - f_ls)) < 1e-5);
}

TEST_CASE("singular system: orthonormality, mapping identities, reconstruction") {
  const DiscreteDesign d = make_random_design(9, 7, 71);
  const DiscretizedOperator op = estimate_operator(d);
  const SingularSystem sys = svd_system(op);
  const int r = static_cast<int>(sys.values.size());

  for (int j = 1; j < r; ++j) CHECK(sys.values(j) <= sys.values(j - 1) + 1e-15);
  CHECK(sys.values(0) == doctest::Approx(1.0).epsilon(1e-10));

  // Leading right singular vector is the constant function (up to sign).
  const Eigen::VectorXd phi0 = sys.right.col(0);
  for (int i = 1; i < op.k1(); ++i) CHECK(phi0(i) == doctest::Approx(phi0(0)).epsilon(1e-8));

  const Eigen::MatrixXd gram_right =
      sys.right.transpose() * op.w1.asDiagonal() * sys.right;
  CHECK((gram_right - Eigen::MatrixXd::Identity(r, r)).lpNorm<Eigen::Infinity>() < 1e-8);
  const Eigen::MatrixXd gram_left = sys.left.transpose() * op.w2.asDiagonal() * sys.left;
  CHECK((gram_left - Eigen::MatrixXd::Identity(r, r)).lpNorm<Eigen::Infinity>() < 1e-8);

  for (int j = 0; j < r; ++j) {
    const Eigen::VectorXd lhs = apply(op, sys.right.col(j)) - sys.values(j) * sys.left.col(j);
    CHECK(lhs.lpNorm<Eigen::Infinity>() < 1e-8);
    const Eigen::VectorXd rhs =
        apply_adjoint(op, sys.left.col(j)) - sys.values(j) * sys.right.col(j);
    CHECK(rhs.lpNorm<Eigen::Infinity>() < 1e-8);
  }

  // A = sum_j lambda_j psi_j (D1 phi_j)'.
  Eigen::MatrixXd recon = Eigen::MatrixXd::Zero(op.k2(), op.k1());
  for (int j = 0; j < r; ++j)
    recon += sys.values(j) * sys.left.col(j) *
             (op.w1.asDiagonal() * sys.right.col(j)).transpose();
  CHECK((recon - op.a_hat).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("beta-regular truth hits its regularity norm exactly") {
  // Verified by reprojection onto the singular basis, which is only
  // numerically faithful when lambda^(-2 beta) stays moderate; the mixture
  // instance keeps the spectrum inside [0.6, 1].
  const int k = 12;
  DiscreteDesign mix;
  mix.joint_pmf.assign(k, std::vector<double>(k, 0.4 / (k * k)));
  for (int i = 0; i < k; ++i) mix.joint_pmf[i][i] += 0.6 / k;
  for (int i = 0; i < k; ++i) {
    const double a = 3.14159265358979323846 * (i + 0.5) / k;
    mix.x1_grid.push_back({std::cos(a), std::sin(a)});
    mix.x2_grid.push_back({std::cos(a), std::sin(a)});
  }
  mix.f_true.assign(k, 0.0);
  const DiscretizedOperator op = estimate_operator(mix);
  const SingularSystem sys = svd_system(op);
  for (double beta : {0.5, 1.0, 2.0}) {
    const Eigen::VectorXd f = make_beta_regular_truth(sys, beta, 1.7, 2026);
    double reg = 0.0;
    for (int j = 0; j < sys.values.size(); ++j) {
      const double cj = f.dot(op.w1.asDiagonal() * sys.right.col(j));
      reg += cj * cj / std::pow(sys.values(j), 2.0 * beta);
    }
    CHECK(std::fabs(reg - 1.7 * 1.7) < 1e-10);
  }
  const Eigen::VectorXd z = make_beta_regular_truth(sys, 1.0, 0.0, 5);
  CHECK(z.lpNorm<Eigen::Infinity>() == 0.0);

  // All singular values equal (identity operator): the function norm itself
  // equals coeff_norm.
  DiscreteDesign diag;
  diag.joint_pmf = {{0.25, 0.0}, {0.0, 0.75}};
  diag.x1_grid = {{1.0, 0.0}, {0.0, 1.0}};
  diag.x2_grid = {{1.0, 0.0}, {0.0, 1.0}};
  diag.f_true = {0.0, 0.0};
  const DiscretizedOperator dop = estimate_operator(diag);
  const SingularSystem dsys = svd_system(dop);
  const Eigen::VectorXd f1 = make_beta_regular_truth(dsys, 2.0, 0.9, 77);
  CHECK(std::sqrt(weighted_sq_norm_x1(dop, f1)) == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("primal loss: zero function, exact solve, suboptimality floor") {
  const DiscreteDesign d = make_random_design(8, 6, 123);
  const DiscretizedOperator op = estimate_operator(d);
  CounterRng rng(14);
  const Eigen::VectorXd b = random_vec(op.k2(), rng);
  CHECK(primal_loss(op, Eigen::VectorXd::Zero(op.k1()), b, 0.7) ==
        doctest::Approx(0.5 * weighted_sq_norm_x2(op, b)).epsilon(1e-13));

  const Eigen::VectorXd f = random_vec(op.k1(), rng);
  const Eigen::VectorXd bf = apply(op, f);
  CHECK(primal_loss(op, f, bf, 0.0) == 0.0);  // residual cancels bitwise

  const double alpha = 0.2;
  const Eigen::VectorXd fa = tikhonov_solve(op, b, alpha);
  CHECK(std::fabs(suboptimality(op, fa, b, alpha)) < 1e-14);
  for (int trial = 0; trial < 8; ++trial) {
    const Eigen::VectorXd g = random_vec(op.k1(), rng);
    const double sub = suboptimality(op, g, b, alpha);
    CHECK(sub >= -1e-10);
    // Strong convexity: E(g) >= (alpha/2) |g - f_alpha|^2.
    CHECK(sub >= 0.5 * alpha * weighted_sq_norm_x1(op, g - fa) - 1e-10);
  }
}

TEST_CASE("best response maximizes the grid payoff and recovers the loss") {
  const DiscreteDesign d = make_random_design(6, 5, 321);
  const DiscretizedOperator op = estimate_operator(d);
  CounterRng rng(15);
  const Eigen::VectorXd b = random_vec(op.k2(), rng);
  const Eigen::VectorXd f = random_vec(op.k1(), rng);
  const Eigen::VectorXd ustar = best_response(op, f, b);
  const double alpha = 0.3;
  const double at_star = grid_payoff(op, f, ustar, b, alpha);
  CHECK(std::fabs(at_star - primal_loss(op, f, b, alpha)) < 1e-12);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd u = random_vec(op.k2(), rng);
    CHECK(grid_payoff(op, f, u, b, alpha) <= at_star + 1e-12);
  }
  // Solving f exactly leaves the adversary nothing.
  const Eigen::VectorXd bf = apply(op, f);
  CHECK(best_response(op, f, bf).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("smooth canned instance has a decaying positive spectrum") {
  const DiscreteDesign d = make_smooth_discrete_design(20, 20, 0.2, 1.2);
  const DiscretizedOperator op = estimate_operator(d);
  const SingularSystem sys = svd_system(op);
  CHECK(sys.values(0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(sys.values(sys.values.size() - 1) > 0.0);
  CHECK(sys.values(sys.values.size() - 1) < 1e-2);  // genuinely ill-posed tail
}
