#pragma once
// Stochastic gradient descent-ascent on the regularized minimax objective
//
//   F(theta, omega; s) = u(x2) * sum_k c_k f(x_k)  -  u(x2) * target
//                        - u(x2)^2 / 2  +  (alpha/2) * f(x_ridge)^2
//
// where f is the primal network (theta) and u the adversary (omega).  A
// single-point sample (one eval point, c = 1) recovers the plain setting
// f(x1) - target; differenced designs carry two eval points with
// coefficients +1/-1.  The adversary's best response is u = A f - b, and at
// that response the expected payoff equals the regularized projected
// residual loss, which is what makes the saddle value usable as a loss.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "asem/nn.hpp"

namespace asem {

struct WeightedPoint {
  double coeff = 1.0;
  std::vector<double> point;
};

struct Sample {
  std::vector<WeightedPoint> eval_points;  // inputs to f with coefficients
  std::vector<double> instrument;          // conditioning point fed to u
  double target = 0.0;                     // unbiased stand-in for b(x2)
  int ridge_index = 0;                     // eval point carrying the ridge
};

struct GameConfig {
  double alpha = 0.1;             // ridge weight
  double eta = 0.01;              // constant stepsize for both players
  long long iterations = 1000;    // T
  long long snapshot_stride = 0;  // 0: auto, about 512 snapshots
  int minibatch = 1;              // samples averaged per update
  std::uint64_t seed = 0;         // provenance only; the loop draws nothing
};

// Pulls the next sample; returns false when the stream is exhausted.
using SampleStream = std::function<bool(Sample&)>;

struct TraceRow {
  long long iter = 0;
  double payoff = 0.0;
  double grad_norm_theta = 0.0;
  double grad_norm_omega = 0.0;
  double dist_theta = 0.0;  // |theta_t - theta_0|
  double dist_omega = 0.0;
};

struct SnapshotRow {
  long long iter = 0;
  std::vector<double> theta_weights;
  std::vector<double> omega_weights;
};

struct TrainTrace {
  GameConfig config;
  NetworkState theta0, omega0;  // initial states; snapshots share their arch
  std::vector<TraceRow> rows;   // one per iteration
  std::vector<SnapshotRow> snapshots;
  NetworkState theta_final, omega_final;
};

double residual(const NetworkState& theta, const Sample& s);
double payoff(const NetworkState& theta, const NetworkState& omega,
              const Sample& s, double alpha);

std::vector<double> grad_theta(const NetworkState& theta, const NetworkState& omega,
                               const Sample& s, double alpha);
std::vector<double> grad_omega(const NetworkState& theta, const NetworkState& omega,
                               const Sample& s);

// Runs exactly config.iterations simultaneous update pairs from the given
// initial states.  Iteration t uses one fresh sample (or minibatch) for both
// gradients, logs the pre-update payoff, gradient norms and distances from
// the initializations, projects after every step, and snapshots the
// pre-update iterate whenever t is a multiple of the stride.
TrainTrace sgda_run(const NetworkState& theta_init, const NetworkState& omega_init,
                    const GameConfig& config, const SampleStream& stream);

// Uniform average of the snapshot networks, the estimator the theory is
// about.  Holds shared frozen state plus one weight vector per snapshot.
class AveragedEstimator {
 public:
  AveragedEstimator(NetworkState base, std::vector<std::vector<double>> snapshot_weights);

  double predict(std::span<const double> x) const;
  std::size_t n_snapshots() const { return snapshot_weights_.size(); }
  const std::vector<double>& snapshot(std::size_t i) const { return snapshot_weights_[i]; }
  const NetworkState& base() const { return base_; }

  // Base state with snapshot i's weights swapped in.
  NetworkState materialize(std::size_t i) const;

 private:
  NetworkState base_;
  std::vector<std::vector<double>> snapshot_weights_;
};

AveragedEstimator average_estimator(const TrainTrace& trace);

// Reconstructs the full network state of snapshot i for either player.
NetworkState materialize_snapshot(const TrainTrace& trace, std::size_t i, bool theta_player);

}  // namespace asem
