#pragma once
// Shared helpers for the test binaries: finite differences, kink margins,
// random probes.  Test-only code; the library never includes this.

#include <cmath>
#include <vector>

#include "asem/game.hpp"
#include "asem/nn.hpp"
#include "asem/rng.hpp"

namespace asem::testutil {

inline std::vector<double> fd_gradient(NetworkState net, std::span<const double> x,
                                       double h = 1e-6) {
  std::vector<double> g(net.n_weights());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double w0 = net.weights[i];
    net.weights[i] = w0 + h;
    const double fp = forward(net, x);
    net.weights[i] = w0 - h;
    const double fm = forward(net, x);
    net.weights[i] = w0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_err(std::span<const double> a, std::span<const double> b) {
  const double nb = std::sqrt(sq_norm(b));
  return std::sqrt(sq_distance(a, b)) / (nb > 0.0 ? nb : 1.0);
}

using asem::kink_margin;

// Smallest margin of either network over all points of the sample.
inline double sample_margin(const NetworkState& theta, const NetworkState& omega,
                            const Sample& s) {
  double m = kink_margin(omega, s.instrument);
  for (const WeightedPoint& p : s.eval_points) m = std::min(m, kink_margin(theta, p.point));
  return m;
}

inline void perturb_within_ball(NetworkState& net, CounterRng& rng, double frac) {
  const std::size_t n = net.n_weights();
  const std::size_t block = net.arch == Arch::two_layer
                                ? n
                                : static_cast<std::size_t>(net.width) * net.width;
  for (std::size_t off = 0; off < n; off += block) {
    double nsq = 0.0;
    std::vector<double> dir(block);
    for (std::size_t i = 0; i < block; ++i) {
      dir[i] = rng.gaussian();
      nsq += dir[i] * dir[i];
    }
    const double scale = frac * net.radius / std::sqrt(nsq);
    for (std::size_t i = 0; i < block; ++i)
      net.weights[off + i] = net.init_weights[off + i] + scale * dir[i];
  }
}

inline std::vector<double> random_unit_ball(CounterRng& rng, int d) {
  std::vector<double> x(d);
  double nsq = 0.0;
  for (double& v : x) {
    v = rng.gaussian();
    nsq += v * v;
  }
  const double r = std::pow(rng.uniform01_open(), 1.0 / d) / std::sqrt(nsq);
  for (double& v : x) v *= r;
  return x;
}

template <typename F>
std::vector<double> fd_weights(NetworkState net, const F& value_of, double h = 1e-6) {
  std::vector<double> g(net.n_weights());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double w0 = net.weights[i];
    net.weights[i] = w0 + h;
    const double fp = value_of(net);
    net.weights[i] = w0 - h;
    const double fm = value_of(net);
    net.weights[i] = w0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace asem::testutil
