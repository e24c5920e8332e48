#pragma once
// Overparametrized ReLU networks trained inside a ball around their random
// initialization.
//
// Two architectures share one state type:
//
//   two_layer    f(x) = (1/sqrt(m)) * sum_r signs[r] * relu(W_r . x)
//                trainable W in R^{m x d}; feasible set is the l2 ball of
//                radius B around W(0).
//
//   multi_layer  x0 = A x;  x_h = (1/sqrt(m)) * relu(W_h x_{h-1}), h=1..H;
//                f(x) = output . x_H
//                trainable W_1..W_H in R^{m x m}; each layer lives in its
//                own Frobenius ball of radius B around its initialization.
//
// relu'(0) is taken as 0 everywhere.  All operations are pure: they never
// mutate their inputs, and identical inputs give bit-identical outputs.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "asem/common.hpp"

namespace asem {

enum class Arch { two_layer, multi_layer };

struct TwoLayerConfig {
  int input_dim = 1;    // d
  int width = 64;       // m, number of hidden units
  double radius = 1.0;  // B, feasible l2 distance from the initialization
};

struct DeepConfig {
  int input_dim = 1;
  int width = 16;       // m, width of every hidden layer
  int depth = 1;        // H, number of trainable hidden transitions
  double radius = 1.0;  // B, per-layer Frobenius radius
};

// Weight layout:
//   two_layer:   weights.size() == m*d, row r occupies [r*d, (r+1)*d)
//   multi_layer: depth blocks of m*m; block h is row-major W_{h+1}
// init_weights holds W(0) and is treated as immutable after init_network.
struct NetworkState {
  Arch arch = Arch::two_layer;
  int input_dim = 0;
  int width = 0;
  int depth = 0;  // 0 for two_layer
  double radius = 0.0;
  std::uint64_t seed = 0;

  std::vector<double> weights;
  std::vector<double> init_weights;

  std::vector<double> signs;      // two_layer: m output signs in {-1,+1}
  std::vector<double> input_map;  // multi_layer: m x d matrix A, frozen
  std::vector<double> output;     // multi_layer: m output weights, frozen

  std::size_t n_weights() const { return weights.size(); }
};

// Deterministic initialization from `seed`.  Draw order (CounterRng forks):
//   two_layer:   fork(0) -> signs (one raw draw each), fork(1) -> W(0)
//                row-major with entries gaussian * (1/sqrt(d))
//   multi_layer: fork(0) -> A row-major, entries gaussian * sqrt(2);
//                fork(1+h) -> W_{h+1}(0) row-major, entries gaussian *
//                sqrt(2); fork(1+depth) -> output, entries gaussian
NetworkState init_network(const TwoLayerConfig& config, std::uint64_t seed);
NetworkState init_network(const DeepConfig& config, std::uint64_t seed);

double forward(const NetworkState& net, std::span<const double> x);

// Forward pass with an alternative weight vector of identical layout, so
// snapshot collections can be evaluated without copying state.
double forward_with(const NetworkState& net, std::span<const double> weights,
                    std::span<const double> x);

// d f / d weights, same layout as NetworkState::weights.
std::vector<double> gradient(const NetworkState& net, std::span<const double> x);
void gradient_into(const NetworkState& net, std::span<const double> x,
                   std::span<double> out);

// Smallest |pre-activation| over all relu units at input x.  Probes for
// finite-difference checks must keep this above the stencil width, since
// the gradient jumps at zero pre-activations.
double kink_margin(const NetworkState& net, std::span<const double> x);

// Euclidean projection onto the feasible set: radial scaling toward W(0),
// per layer for multi_layer.  Feasible states pass through bit-identically.
NetworkState project(const NetworkState& net);
void project_in_place(NetworkState& net);

// Moves the weights to a random feasible point at `fraction` of the radius
// from the initialization (per block for multi_layer), deterministically in
// the seed.  Used to manufacture comparators that share an initialization.
void perturb_from_init(NetworkState& net, double fraction, std::uint64_t seed);

// First-order model around the initialization:
//   f(x, W(0)) + <grad_W f(x, W(0)), W - W(0)>
double linearized_forward(const NetworkState& net, std::span<const double> x);

struct GapPoint {
  int width = 0;
  double mean_sq_value_gap = 0.0;  // E (f - fhat)^2
  double mean_sq_grad_gap = 0.0;   // E |grad f - grad fhat|^2
};

// Monte Carlo estimate of the linearization error across widths.  For each
// width m the factory builds a fresh network; each sample draws x uniform in
// the unit ball and W uniform in direction with |W - W(0)| uniform on [0, B]
// (per-layer for multi_layer).
std::vector<GapPoint> linearization_gap(
    const std::function<NetworkState(int width, std::uint64_t seed)>& factory,
    std::span<const int> width_grid, int n_samples, std::uint64_t seed);

}  // namespace asem
