#include "asem/nn.hpp"

#include <cmath>
#include <limits>

#include "asem/log.hpp"
#include "asem/rng.hpp"

namespace asem {

static void check_two_layer(const TwoLayerConfig& c) {
  if (c.input_dim < 1) fail_config("two_layer: input_dim must be >= 1, got %d", c.input_dim);
  if (c.width < 1) fail_config("two_layer: width must be >= 1, got %d", c.width);
  if (!(c.radius > 0.0) || !std::isfinite(c.radius))
    fail_config("two_layer: radius must be positive and finite, got %g", c.radius);
  if (static_cast<long long>(c.width) * c.input_dim > (1LL << 30))
    fail_config("two_layer: width * input_dim too large (%d * %d)", c.width, c.input_dim);
}

static void check_deep(const DeepConfig& c) {
  if (c.input_dim < 1) fail_config("multi_layer: input_dim must be >= 1, got %d", c.input_dim);
  if (c.width < 1) fail_config("multi_layer: width must be >= 1, got %d", c.width);
  if (c.depth < 1) fail_config("multi_layer: depth must be >= 1, got %d", c.depth);
  if (!(c.radius > 0.0) || !std::isfinite(c.radius))
    fail_config("multi_layer: radius must be positive and finite, got %g", c.radius);
  if (static_cast<long long>(c.width) * c.width * c.depth > (1LL << 30))
    fail_config("multi_layer: depth * width^2 too large (%d^2 * %d)", c.width, c.depth);
  // Linear-regime guarantees need the radius small next to sqrt(m)/H^6.
  const double limit = std::sqrt(static_cast<double>(c.width)) / std::pow(c.depth, 6.0);
  if (c.radius > limit)
    log_warn("multi_layer: radius %g exceeds sqrt(width)/depth^6 = %g; "
             "the trainable ball leaves the near-linear regime", c.radius, limit);
}

NetworkState init_network(const TwoLayerConfig& config, std::uint64_t seed) {
  check_two_layer(config);
  NetworkState net;
  net.arch = Arch::two_layer;
  net.input_dim = config.input_dim;
  net.width = config.width;
  net.depth = 0;
  net.radius = config.radius;
  net.seed = seed;

  const CounterRng root(seed);
  CounterRng sign_rng = root.fork(0);
  net.signs.resize(config.width);
  for (double& s : net.signs) s = sign_rng.sign();

  CounterRng w_rng = root.fork(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.input_dim));
  net.init_weights.resize(static_cast<std::size_t>(config.width) * config.input_dim);
  for (double& w : net.init_weights) w = scale * w_rng.gaussian();
  net.weights = net.init_weights;
  return net;
}

NetworkState init_network(const DeepConfig& config, std::uint64_t seed) {
  check_deep(config);
  NetworkState net;
  net.arch = Arch::multi_layer;
  net.input_dim = config.input_dim;
  net.width = config.width;
  net.depth = config.depth;
  net.radius = config.radius;
  net.seed = seed;

  const CounterRng root(seed);
  const double sqrt2 = std::sqrt(2.0);

  CounterRng a_rng = root.fork(0);
  net.input_map.resize(static_cast<std::size_t>(config.width) * config.input_dim);
  for (double& a : net.input_map) a = sqrt2 * a_rng.gaussian();

  const std::size_t block = static_cast<std::size_t>(config.width) * config.width;
  net.init_weights.resize(block * config.depth);
  for (int h = 0; h < config.depth; ++h) {
    CounterRng w_rng = root.fork(1 + static_cast<std::uint64_t>(h));
    double* w = net.init_weights.data() + block * h;
    for (std::size_t i = 0; i < block; ++i) w[i] = sqrt2 * w_rng.gaussian();
  }
  net.weights = net.init_weights;

  CounterRng b_rng = root.fork(1 + static_cast<std::uint64_t>(config.depth));
  net.output.resize(config.width);
  for (double& b : net.output) b = b_rng.gaussian();
  return net;
}

static void check_input(const NetworkState& net, std::span<const double> x) {
  if (static_cast<int>(x.size()) != net.input_dim)
    fail_config("network: input has dim %zu, expected %d", x.size(), net.input_dim);
}

// ---- forward / gradient on explicit weight vectors ----------------------
// All public entry points funnel through these so the linearized model can
// evaluate at W(0) without copying state.

static double forward_two(const NetworkState& net, std::span<const double> w,
                          std::span<const double> x) {
  const int m = net.width, d = net.input_dim;
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
  double s = 0.0;
  for (int r = 0; r < m; ++r) {
    const double* row = w.data() + static_cast<std::size_t>(r) * d;
    double z = 0.0;
    for (int k = 0; k < d; ++k) z += row[k] * x[k];
    if (z > 0.0) s += net.signs[r] * z;
  }
  return inv_sqrt_m * s;
}

// Runs the deep forward pass; fills post-activations per layer (x_0..x_H)
// and pre-activations (z_1..z_H) when the caller needs them for backprop.
static double forward_deep(const NetworkState& net, std::span<const double> w,
                           std::span<const double> x,
                           std::vector<std::vector<double>>* acts,
                           std::vector<std::vector<double>>* preacts) {
  const int m = net.width, d = net.input_dim, depth = net.depth;
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
  std::vector<double> cur(m), nxt(m);
  for (int i = 0; i < m; ++i) {
    const double* row = net.input_map.data() + static_cast<std::size_t>(i) * d;
    double z = 0.0;
    for (int k = 0; k < d; ++k) z += row[k] * x[k];
    cur[i] = z;
  }
  if (acts) {
    acts->clear();
    acts->push_back(cur);
  }
  if (preacts) preacts->clear();
  const std::size_t block = static_cast<std::size_t>(m) * m;
  for (int h = 0; h < depth; ++h) {
    const double* wh = w.data() + block * h;
    for (int i = 0; i < m; ++i) {
      const double* row = wh + static_cast<std::size_t>(i) * m;
      double z = 0.0;
      for (int j = 0; j < m; ++j) z += row[j] * cur[j];
      nxt[i] = z;
    }
    if (preacts) preacts->push_back(nxt);
    for (int i = 0; i < m; ++i) nxt[i] = nxt[i] > 0.0 ? inv_sqrt_m * nxt[i] : 0.0;
    cur.swap(nxt);
    if (acts) acts->push_back(cur);
  }
  double f = 0.0;
  for (int i = 0; i < m; ++i) f += net.output[i] * cur[i];
  return f;
}

static double forward_at(const NetworkState& net, std::span<const double> w,
                         std::span<const double> x) {
  return net.arch == Arch::two_layer ? forward_two(net, w, x)
                                     : forward_deep(net, w, x, nullptr, nullptr);
}

static void gradient_two(const NetworkState& net, std::span<const double> w,
                         std::span<const double> x, std::span<double> out) {
  const int m = net.width, d = net.input_dim;
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
  for (int r = 0; r < m; ++r) {
    const double* row = w.data() + static_cast<std::size_t>(r) * d;
    double z = 0.0;
    for (int k = 0; k < d; ++k) z += row[k] * x[k];
    double* g = out.data() + static_cast<std::size_t>(r) * d;
    if (z > 0.0) {
      const double c = net.signs[r] * inv_sqrt_m;
      for (int k = 0; k < d; ++k) g[k] = c * x[k];
    } else {
      for (int k = 0; k < d; ++k) g[k] = 0.0;
    }
  }
}

static void gradient_deep(const NetworkState& net, std::span<const double> w,
                          std::span<const double> x, std::span<double> out) {
  const int m = net.width, depth = net.depth;
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
  std::vector<std::vector<double>> acts, preacts;
  forward_deep(net, w, x, &acts, &preacts);

  const std::size_t block = static_cast<std::size_t>(m) * m;
  std::vector<double> g(net.output.begin(), net.output.end());  // d f / d x_h
  std::vector<double> dz(m), gprev(m);
  for (int h = depth - 1; h >= 0; --h) {
    const std::vector<double>& z = preacts[h];
    const std::vector<double>& below = acts[h];
    for (int i = 0; i < m; ++i) dz[i] = z[i] > 0.0 ? inv_sqrt_m * g[i] : 0.0;
    double* gw = out.data() + block * h;
    for (int i = 0; i < m; ++i) {
      const double di = dz[i];
      double* row = gw + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) row[j] = di * below[j];
    }
    if (h > 0) {
      const double* wh = w.data() + block * h;
      for (int j = 0; j < m; ++j) gprev[j] = 0.0;
      for (int i = 0; i < m; ++i) {
        const double di = dz[i];
        if (di == 0.0) continue;
        const double* row = wh + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) gprev[j] += di * row[j];
      }
      g = gprev;
    }
  }
}

static void gradient_at(const NetworkState& net, std::span<const double> w,
                        std::span<const double> x, std::span<double> out) {
  if (out.size() != net.n_weights())
    fail_config("gradient: output buffer has size %zu, expected %zu", out.size(),
                net.n_weights());
  if (net.arch == Arch::two_layer)
    gradient_two(net, w, x, out);
  else
    gradient_deep(net, w, x, out);
}

// ---- public ops ----------------------------------------------------------

double forward(const NetworkState& net, std::span<const double> x) {
  check_input(net, x);
  return forward_at(net, net.weights, x);
}

double forward_with(const NetworkState& net, std::span<const double> weights,
                    std::span<const double> x) {
  check_input(net, x);
  if (weights.size() != net.n_weights())
    fail_config("forward_with: weights have size %zu, expected %zu", weights.size(),
                net.n_weights());
  return forward_at(net, weights, x);
}

void gradient_into(const NetworkState& net, std::span<const double> x,
                   std::span<double> out) {
  check_input(net, x);
  gradient_at(net, net.weights, x, out);
}

std::vector<double> gradient(const NetworkState& net, std::span<const double> x) {
  std::vector<double> out(net.n_weights());
  gradient_into(net, x, out);
  return out;
}

double kink_margin(const NetworkState& net, std::span<const double> x) {
  check_input(net, x);
  double margin = std::numeric_limits<double>::infinity();
  if (net.arch == Arch::two_layer) {
    const int d = net.input_dim;
    for (int r = 0; r < net.width; ++r) {
      const double* row = net.weights.data() + static_cast<std::size_t>(r) * d;
      double z = 0.0;
      for (int k = 0; k < d; ++k) z += row[k] * x[k];
      margin = std::min(margin, std::fabs(z));
    }
    return margin;
  }
  std::vector<std::vector<double>> preacts;
  forward_deep(net, net.weights, x, nullptr, &preacts);
  for (const std::vector<double>& layer : preacts)
    for (double z : layer) margin = std::min(margin, std::fabs(z));
  return margin;
}

void project_in_place(NetworkState& net) {
  const std::size_t n = net.n_weights();
  const std::size_t block =
      net.arch == Arch::two_layer ? n : static_cast<std::size_t>(net.width) * net.width;
  for (std::size_t off = 0; off < n; off += block) {
    double nsq = 0.0;
    for (std::size_t i = off; i < off + block; ++i) {
      const double d = net.weights[i] - net.init_weights[i];
      nsq += d * d;
    }
    if (nsq <= net.radius * net.radius) continue;
    const double scale = net.radius / std::sqrt(nsq);
    for (std::size_t i = off; i < off + block; ++i)
      net.weights[i] = net.init_weights[i] + scale * (net.weights[i] - net.init_weights[i]);
  }
}

NetworkState project(const NetworkState& net) {
  NetworkState out = net;
  project_in_place(out);
  return out;
}

void perturb_from_init(NetworkState& net, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0) || fraction > 1.0)
    fail_config("nn: perturbation fraction %g outside [0, 1]", fraction);
  CounterRng rng(seed);
  const std::size_t n = net.n_weights();
  const std::size_t block =
      net.arch == Arch::two_layer ? n : static_cast<std::size_t>(net.width) * net.width;
  for (std::size_t off = 0; off < n; off += block) {
    double nsq = 0.0;
    std::vector<double> dir(block);
    for (double& d : dir) {
      d = rng.gaussian();
      nsq += d * d;
    }
    const double scale = nsq > 0.0 ? fraction * net.radius / std::sqrt(nsq) : 0.0;
    for (std::size_t i = 0; i < block; ++i)
      net.weights[off + i] = net.init_weights[off + i] + scale * dir[i];
  }
}

double linearized_forward(const NetworkState& net, std::span<const double> x) {
  check_input(net, x);
  if (net.arch == Arch::two_layer) {
    // Fused: f(x, W0) + sum_r 1{W0_r.x > 0} signs_r/sqrt(m) x.(W_r - W0_r)
    const int m = net.width, d = net.input_dim;
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
    double s = 0.0;
    for (int r = 0; r < m; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * d;
      const double* row0 = net.init_weights.data() + off;
      double z0 = 0.0;
      for (int k = 0; k < d; ++k) z0 += row0[k] * x[k];
      if (z0 <= 0.0) continue;
      const double* row = net.weights.data() + off;
      double zw = 0.0;
      for (int k = 0; k < d; ++k) zw += row[k] * x[k];
      s += net.signs[r] * zw;  // z0 + x.(W_r - W0_r) collapses to W_r.x
    }
    return inv_sqrt_m * s;
  }
  const double f0 = forward_at(net, net.init_weights, x);
  std::vector<double> g0(net.n_weights());
  gradient_at(net, net.init_weights, x, g0);
  double corr = 0.0;
  for (std::size_t i = 0; i < g0.size(); ++i)
    corr += g0[i] * (net.weights[i] - net.init_weights[i]);
  return f0 + corr;
}

std::vector<GapPoint> linearization_gap(
    const std::function<NetworkState(int width, std::uint64_t seed)>& factory,
    std::span<const int> width_grid, int n_samples, std::uint64_t seed) {
  if (width_grid.empty()) fail_config("linearization_gap: empty width grid");
  if (n_samples < 1) fail_config("linearization_gap: n_samples must be >= 1");
  std::vector<GapPoint> out;
  out.reserve(width_grid.size());
  const CounterRng root(seed);
  for (std::size_t gi = 0; gi < width_grid.size(); ++gi) {
    const int m = width_grid[gi];
    NetworkState net = factory(m, CounterRng::at(seed, gi));
    const int d = net.input_dim;
    const std::size_t n = net.n_weights();
    const std::size_t block =
        net.arch == Arch::two_layer ? n : static_cast<std::size_t>(net.width) * net.width;
    CounterRng rng = root.fork(100 + gi);
    std::vector<double> x(d), pert(n), g(n), g0(n);
    double sum_val = 0.0, sum_grad = 0.0;
    for (int s = 0; s < n_samples; ++s) {
      // x uniform in the unit ball: gaussian direction, radius u^(1/d).
      double xn = 0.0;
      for (int k = 0; k < d; ++k) {
        x[k] = rng.gaussian();
        xn += x[k] * x[k];
      }
      xn = std::sqrt(xn);
      const double r = std::pow(rng.uniform01_open(), 1.0 / d) / (xn > 0.0 ? xn : 1.0);
      for (int k = 0; k < d; ++k) x[k] *= r;
      // W(0) + perturbation with per-block norm uniform on [0, radius].
      for (std::size_t off = 0; off < n; off += block) {
        double pn = 0.0;
        for (std::size_t i = off; i < off + block; ++i) {
          pert[i] = rng.gaussian();
          pn += pert[i] * pert[i];
        }
        const double target = net.radius * rng.uniform01();
        const double scale = pn > 0.0 ? target / std::sqrt(pn) : 0.0;
        for (std::size_t i = off; i < off + block; ++i)
          net.weights[i] = net.init_weights[i] + scale * pert[i];
      }
      const double f = forward(net, x);
      const double fhat = linearized_forward(net, x);
      sum_val += (f - fhat) * (f - fhat);
      gradient_at(net, net.weights, x, g);
      gradient_at(net, net.init_weights, x, g0);
      sum_grad += sq_distance(g, g0);
    }
    out.push_back({m, sum_val / n_samples, sum_grad / n_samples});
  }
  return out;
}

}  // namespace asem
