#pragma once
// Experiment drivers and verification harnesses on top of the game loop and
// the discrete oracle: convergence and consistency sweeps, a regret-bound
// check for projected gradient steps with noisy biased gradients, the
// regret decomposition through the linearized networks, the quadratic-form
// GMM objective, and finite-difference gradient audits.
//
// Sweeps run their cells through parallel_for with per-cell seed streams;
// every row is a pure function of (spec, seed), and row order never depends
// on scheduling.  A failed cell records its message and leaves NaNs in the
// numeric columns; the sweep keeps going.

#include <cstdint>
#include <iosfwd>
#include <json.hpp>
#include <string>
#include <vector>

#include "asem/game.hpp"
#include "asem/oracle.hpp"
#include "asem/serialize.hpp"

namespace asem {

// Stepsize schedule eta(T) = coeff * T^power, constant within one run.
struct EtaRule {
  double coeff = 0.5;
  double power = -0.5;
};
double eta_for(const EtaRule& rule, long long iterations);

struct SweepSpec {
  DiscreteDesign instance;
  double radius = 5.0;                  // feasible ball for both players
  std::vector<int> m_values;            // widths, both players
  std::vector<long long> t_values;      // iteration budgets
  std::vector<double> alpha_values;
  std::vector<double> beta_values;      // consistency sweeps only
  EtaRule eta_rule;
  double target_noise = 0.1;            // truncated noise added to targets
  double coeff_norm = 1.0;              // regularity norm of generated truths
  long long snapshot_stride = 0;        // 0: auto
  std::vector<std::uint64_t> seeds;     // distinct, one row per seed
  int workers = 1;
};

struct ConvergenceRow {
  int m = 0;
  long long t = 0;
  double eta = 0.0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double suboptimality = 0.0;
  double l2_error_vs_oracle = 0.0;  // |f - f_alpha|^2 under w1
  double runtime_seconds = 0.0;
  std::string error;                // empty on success
};

struct ConvergenceSlope {
  int m = 0;
  double alpha = 0.0;
  double slope = 0.0;  // d log(median suboptimality) / d log T
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;
  std::vector<ConvergenceSlope> slopes;
};

// Trains on the instance with targets from its structural truth and scores
// each cell against the closed-form regularized solution.
ConvergenceReport convergence_experiment(const SweepSpec& spec);
void write_convergence_csv(const ConvergenceReport& report, std::ostream& os,
                           const CsvMeta& meta = {});
nlohmann::json convergence_to_json(const ConvergenceReport& report);

struct ConsistencyRow {
  double alpha = 0.0;
  double beta = 0.0;
  long long t = 0;
  int m = 0;
  std::uint64_t seed = 0;
  double l2_error_to_truth = 0.0;  // |f - f_true|^2 under w1
  std::string error;
};

struct ConsistencyArgmin {
  double beta = 0.0;
  double alpha = 0.0;         // alpha with the smallest median error
  double median_error = 0.0;
};

struct ConsistencyReport {
  std::vector<ConsistencyRow> rows;
  std::vector<ConsistencyArgmin> argmin;
};

// Replaces the instance truth with a spectrally regular draw per seed and
// sweeps the regularization strength.
ConsistencyReport consistency_experiment(const SweepSpec& spec);
void write_consistency_csv(const ConsistencyReport& report, std::ostream& os,
                           const CsvMeta& meta = {});
nlohmann::json consistency_to_json(const ConsistencyReport& report);

// Projected gradient descent on random strongly convex quadratics over a
// ball, fed gradients corrupted by bounded zero-mean noise plus a fixed
// bias vector.  Average regret against the exact best fixed point is
// compared with
//
//   eta K / 2 + M / (T eta) + 8 K sqrt(M ln(1/delta) / T)
//     + (2 sqrt(2 M) / T) sum_t |xi_t|
//
// where K bounds the squared gradient norm almost surely and M bounds half
// the squared distance from the start to any comparator.  Zeros for
// k_bound, m_bound or eta request the derived defaults.
struct RegretSpec {
  int dim = 8;
  double radius = 1.0;         // feasible ball
  double eig_lo = 0.5;         // quadratic curvature range
  double eig_hi = 1.5;
  double center_radius = 0.5;  // quadratic minimizers drawn in this ball
  double noise_scale = 0.5;    // noise uniform in a ball of this radius
  double bias_norm = 0.05;     // |xi_t|, constant direction per seed
  double k_bound = 0.0;        // 0: exact almost-sure bound from the family
  double m_bound = 0.0;        // 0: 2 radius^2
  double eta = 0.0;            // 0: sqrt(2 m_bound / (k_bound T))
  long long horizon = 400;
  double delta = 0.05;
  std::vector<std::uint64_t> seeds;
};

struct RegretRow {
  std::uint64_t seed = 0;
  double regret = 0.0;
  double bound = 0.0;
  bool violated = false;
};

struct RegretReport {
  std::vector<RegretRow> rows;
  int violations = 0;
  double k_bound = 0.0;  // resolved values
  double m_bound = 0.0;
  double eta = 0.0;
};

RegretReport regret_harness(const RegretSpec& spec);
void write_regret_csv(const RegretReport& report, std::ostream& os,
                      const CsvMeta& meta = {});
nlohmann::json regret_to_json(const RegretReport& report);

// Splits the averaged regret of the primal player over a frozen batch into
// the value gap between the networks and their linearizations at the
// iterates, the regret of the linearized game, and the value gap at the
// comparator.  The three parts sum to the raw regret by construction; the
// report carries the residual of that identity.  Requires stride-1
// snapshots and a comparator initialized identically to the primal player.
struct DecompositionReport {
  double raw_regret = 0.0;
  double value_gap_at_iterates = 0.0;
  double linearized_regret = 0.0;
  double value_gap_at_comparator = 0.0;
  double identity_gap = 0.0;
  long long iterations = 0;
};

DecompositionReport decomposition_report(const TrainTrace& trace,
                                         std::span<const Sample> frozen_batch,
                                         const NetworkState& comparator);
nlohmann::json decomposition_to_json(const DecompositionReport& report);

// Quadratic-form moment objective J(g) = psi' Lambda^-1 psi / 2 with
// psi_j = mean(residual * h_j(x2)) and Lambda = mean(h h').  The dual field
// solves the inner maximization max_a a'psi - a'Lambda a/2 by an
// eigendecomposition, an independent route to the same value.  A singular
// Lambda gets a trace-scaled ridge and sets `regularized`.
using GridFn = std::function<double(std::span<const double>)>;

struct GmmResult {
  double objective = 0.0;
  double dual_objective = 0.0;
  bool regularized = false;
};

GmmResult gmm_objective(const GridFn& g, std::span<const GridFn> instruments,
                        std::span<const Sample> samples);

// Finite-difference audit of the network and payoff gradients at random
// feasible states, resampling any probe that sits within `margin` of a
// relu kink.
struct AuditSpec {
  int n_probes = 100;
  std::uint64_t seed = 0;
  double alpha = 0.1;
  double margin = 1e-3;     // smallest |pre-activation| accepted
  double fd_step = 1e-6;
  double tolerance = 1e-5;  // pass threshold on relative errors
};

struct GradientAuditReport {
  double max_rel_err_network = 0.0;
  double max_rel_err_theta = 0.0;
  double max_rel_err_omega = 0.0;
  int probes = 0;
  bool pass = false;
};

GradientAuditReport gradient_audit(const NetworkState& theta_proto,
                                   const NetworkState& omega_proto,
                                   const AuditSpec& spec);
nlohmann::json audit_to_json(const GradientAuditReport& report);

}  // namespace asem
