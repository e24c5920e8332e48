#pragma once
// Exact solvers on finite-state instances.
//
// On a discrete design the conditional-expectation operator is a known
// row-stochastic matrix, so the regularized population problem
//
//   L(f) = 1/2 |Af - b|^2_{w2} + (alpha/2) |f|^2_{w1}
//
// can be minimized in closed form.  That gives ground truth for the
// neural estimators: suboptimality, distance to the regularized solution,
// and spectral quantities (singular system, source-condition truths) all
// come from here.  Inner products are probability weighted throughout:
// <f,g>_{w1} = sum_i w1_i f_i g_i on the X1 grid and likewise w2 on X2.

#include <Eigen/Dense>
#include <cstdint>

#include "asem/generators.hpp"

namespace asem {

struct DiscretizedOperator {
  Eigen::MatrixXd a_hat;  // K2 x K1; row j holds P(X1 = i | X2 = j)
  Eigen::VectorXd w1;     // X1 marginal, strictly positive
  Eigen::VectorXd w2;     // X2 marginal, strictly positive
  std::vector<std::vector<double>> x1_grid, x2_grid;  // embedded grid points

  int k1() const { return static_cast<int>(a_hat.cols()); }
  int k2() const { return static_cast<int>(a_hat.rows()); }
};

// Exact operator from the design pmf.
DiscretizedOperator estimate_operator(const DiscreteDesign& design);

// Validates row-stochasticity and the weighted norm bound; throws on breakage.
void check_operator(const DiscretizedOperator& op);

// Empirical operator from samples whose points lie on the design grids
// (conditional frequencies).  Fails if any grid state is never observed.
DiscretizedOperator estimate_operator(std::span<const Sample> samples,
                                      const DiscreteDesign& design);

Eigen::VectorXd apply(const DiscretizedOperator& op, const Eigen::VectorXd& f);
Eigen::VectorXd apply_adjoint(const DiscretizedOperator& op, const Eigen::VectorXd& u);

double weighted_sq_norm_x1(const DiscretizedOperator& op, const Eigen::VectorXd& f);
double weighted_sq_norm_x2(const DiscretizedOperator& op, const Eigen::VectorXd& u);

// Minimizer of L: solves (alpha I + A*A) f = A* b, alpha > 0.
Eigen::VectorXd tikhonov_solve(const DiscretizedOperator& op, const Eigen::VectorXd& b,
                               double alpha);

// tikhonov_solve, except alpha = 0 falls back to the minimum-norm
// least-squares solution through the weighted SVD (relative cutoff 1e-12).
Eigen::VectorXd solve_regularized(const DiscretizedOperator& op, const Eigen::VectorXd& b,
                                  double alpha);

// Weighted singular system: A phi_j = lambda_j psi_j, A* psi_j = lambda_j
// phi_j, with phi (columns of `right`) orthonormal under w1 and psi
// (columns of `left`) under w2.  Values are sorted descending.
struct SingularSystem {
  Eigen::VectorXd values;
  Eigen::MatrixXd left;   // K2 x r
  Eigen::MatrixXd right;  // K1 x r
};
SingularSystem svd_system(const DiscretizedOperator& op);

// Truth with prescribed spectral decay: coefficients lambda_j^beta g_j with
// g_j standard gaussian, rescaled so sum_j <f,phi_j>^2 / lambda_j^(2 beta)
// equals coeff_norm^2 exactly.  Components with lambda_j below a relative
// 1e-12 cutoff are dropped.
Eigen::VectorXd make_beta_regular_truth(const SingularSystem& sys, double beta,
                                        double coeff_norm, std::uint64_t seed);

double primal_loss(const DiscretizedOperator& op, const Eigen::VectorXd& f,
                   const Eigen::VectorXd& b, double alpha);

// L(f) - min_g L(g); nonnegative up to rounding.
double suboptimality(const DiscretizedOperator& op, const Eigen::VectorXd& f,
                     const Eigen::VectorXd& b, double alpha);
double suboptimality(const DiscretizedOperator& op, const Eigen::VectorXd& f,
                     const Eigen::VectorXd& b, double alpha,
                     const Eigen::VectorXd& f_alpha);  // precomputed solution

// Expected payoff of a grid strategy pair under the exact joint law,
//   sum_ij P_ij [ (f_i - b_j) u_j - u_j^2 / 2 ] + (alpha/2) |f|^2_{w1},
// and the adversary's exact best response u* = A f - b.  Evaluating the
// payoff at u* recovers primal_loss(f) identically.
double grid_payoff(const DiscretizedOperator& op, const Eigen::VectorXd& f,
                   const Eigen::VectorXd& u, const Eigen::VectorXd& b, double alpha);
Eigen::VectorXd best_response(const DiscretizedOperator& op, const Eigen::VectorXd& f,
                              const Eigen::VectorXd& b);

// Tabulates a predictor on an embedded grid.
Eigen::VectorXd tabulate_grid(const std::function<double(std::span<const double>)>& fn,
                              const std::vector<std::vector<double>>& grid);

}  // namespace asem
