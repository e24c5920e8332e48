#include "asem/generators.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "asem/rng.hpp"

namespace asem {

double link_eval(LinkKind kind, double scale, double freq, double u) {
  switch (kind) {
    case LinkKind::linear:
      return scale * u;
    case LinkKind::sigmoid:
      return scale * (2.0 / (1.0 + std::exp(-4.0 * u)) - 1.0);
    case LinkKind::sine:
      return scale * std::sin(3.14159265358979323846 * freq * u);
  }
  fail_config("link_eval: unknown link kind");
}

LinkKind link_from_string(const std::string& s) {
  if (s == "linear") return LinkKind::linear;
  if (s == "sigmoid") return LinkKind::sigmoid;
  if (s == "sine") return LinkKind::sine;
  fail_config("unknown link kind '%s' (expected linear|sigmoid|sine)", s.c_str());
}

std::string link_to_string(LinkKind kind) {
  switch (kind) {
    case LinkKind::linear: return "linear";
    case LinkKind::sigmoid: return "sigmoid";
    case LinkKind::sine: return "sine";
  }
  return "?";
}

void validate_design(const IvDesign& d) {
  if (d.dim < 1) fail_config("iv design: dim must be >= 1, got %d", d.dim);
  if (!(d.rho >= 0.0 && d.rho <= 1.0)) fail_config("iv design: rho must lie in [0,1], got %g", d.rho);
  if (!(d.confounder_scale >= 0.0)) fail_config("iv design: confounder_scale must be >= 0");
  if (!(d.outcome_noise >= 0.0)) fail_config("iv design: outcome_noise must be >= 0");
  if (!std::isfinite(d.link_scale)) fail_config("iv design: link_scale must be finite");
  if (d.link == LinkKind::sine && !(d.link_freq > 0.0))
    fail_config("iv design: sine link needs link_freq > 0");
}

void validate_design(const PanelDesign& d) {
  if (d.units < 1) fail_config("panel design: units must be >= 1, got %d", d.units);
  if (d.periods < 3) fail_config("panel design: periods must be >= 3, got %d", d.periods);
  if (!(d.effect_scale >= 0.0)) fail_config("panel design: effect_scale must be >= 0");
  if (!(d.noise_scale >= 0.0)) fail_config("panel design: noise_scale must be >= 0");
  if (!std::isfinite(d.link_scale)) fail_config("panel design: link_scale must be finite");
}

void validate_design(const DiscreteDesign& d) {
  const std::size_t k1 = d.joint_pmf.size();
  if (k1 == 0) fail_config("discrete design: empty pmf");
  const std::size_t k2 = d.joint_pmf[0].size();
  if (k2 == 0) fail_config("discrete design: pmf has zero columns");
  double total = 0.0;
  std::vector<double> w1(k1, 0.0), w2(k2, 0.0);
  for (std::size_t i = 0; i < k1; ++i) {
    if (d.joint_pmf[i].size() != k2) fail_config("discrete design: ragged pmf rows");
    for (std::size_t j = 0; j < k2; ++j) {
      const double p = d.joint_pmf[i][j];
      if (!(p >= 0.0)) fail_config("discrete design: pmf[%zu][%zu] = %g is negative", i, j, p);
      total += p;
      w1[i] += p;
      w2[j] += p;
    }
  }
  if (std::fabs(total - 1.0) > 1e-9)
    fail_config("discrete design: pmf sums to %.12g, expected 1", total);
  for (std::size_t i = 0; i < k1; ++i)
    if (!(w1[i] > 0.0)) fail_config("discrete design: X1 state %zu has zero mass", i);
  for (std::size_t j = 0; j < k2; ++j)
    if (!(w2[j] > 0.0)) fail_config("discrete design: X2 state %zu has zero mass", j);
  if (d.x1_grid.size() != k1 || d.x2_grid.size() != k2)
    fail_config("discrete design: grid sizes (%zu, %zu) do not match pmf (%zu, %zu)",
                d.x1_grid.size(), d.x2_grid.size(), k1, k2);
  if (d.f_true.size() != k1)
    fail_config("discrete design: f_true has %zu entries, expected %zu", d.f_true.size(), k1);
  const auto check_grid = [](const std::vector<std::vector<double>>& g, const char* name) {
    const std::size_t dim = g[0].size();
    for (const auto& p : g) {
      if (p.size() != dim) fail_config("discrete design: ragged %s grid", name);
      double nsq = 0.0;
      for (double v : p) nsq += v * v;
      if (nsq > 1.0 + 1e-12) fail_config("discrete design: %s point has norm %g > 1", name,
                                         std::sqrt(nsq));
    }
  };
  check_grid(d.x1_grid, "x1");
  check_grid(d.x2_grid, "x2");
}

// ---- instrumental variables ----------------------------------------------

std::vector<Sample> gen_iv(const IvDesign& design, long long n, std::uint64_t seed) {
  validate_design(design);
  if (n < 1) fail_config("gen_iv: n must be >= 1, got %lld", n);
  const int d = design.dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double mix = std::sqrt(1.0 - design.rho * design.rho);
  CounterRng rng = CounterRng(seed).fork(0);
  const auto truth = structural_truth(design);

  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  std::vector<double> z(d), x(d);
  for (long long i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) z[k] = rng.uniform(-1.0, 1.0);
    const double e = rng.truncated_gaussian(design.confounder_scale);
    const double nu = rng.truncated_gaussian(design.outcome_noise);
    for (int k = 0; k < d; ++k) x[k] = std::tanh(design.rho * z[k] + mix * e) * inv_sqrt_d;
    Sample s;
    s.eval_points.push_back({1.0, x});
    s.instrument = z;
    for (double& v : s.instrument) v *= inv_sqrt_d;
    s.target = truth(x) + e + nu;
    s.ridge_index = 0;
    out.push_back(std::move(s));
  }
  return out;
}

std::function<double(std::span<const double>)> structural_truth(const IvDesign& design) {
  const LinkKind kind = design.link;
  const double scale = design.link_scale, freq = design.link_freq;
  return [kind, scale, freq](std::span<const double> p) {
    double s = 0.0;
    for (double v : p) s += v;
    return link_eval(kind, scale, freq, s / std::sqrt(static_cast<double>(p.size())));
  };
}

// ---- dynamic panel --------------------------------------------------------

double panel_point_scale(const PanelDesign& design) {
  const double y_max = design.link_scale + 3.0 * design.effect_scale + 3.0 * design.noise_scale;
  return std::sqrt(y_max * y_max + 1.0);
}

std::vector<Sample> gen_panel(const PanelDesign& design, std::uint64_t seed) {
  validate_design(design);
  constexpr int kBurnIn = 50;
  const double c = panel_point_scale(design);
  const CounterRng root(seed);
  CounterRng effect_rng = root.fork(0);

  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(design.units) * (design.periods - 2));
  std::vector<double> x_path(design.periods), y_core(design.periods), y_level(design.periods);
  for (int i = 0; i < design.units; ++i) {
    const double effect = effect_rng.truncated_gaussian(design.effect_scale);
    CounterRng rng = root.fork(1 + static_cast<std::uint64_t>(i));
    double x = 0.0, eps_prev = 0.0;
    for (int t = -kBurnIn; t < design.periods; ++t) {
      const double zeta = rng.truncated_gaussian(0.5);
      const double eps = rng.truncated_gaussian(design.noise_scale);
      x = std::tanh(0.5 * x + 0.5 * eps_prev + zeta);
      eps_prev = eps;
      if (t >= 0) {
        x_path[t] = x;
        // Levels are kept fixed-effect free; the effect is added only when
        // a Y enters an eval point, so differenced targets cancel exactly.
        y_core[t] = link_eval(design.link, design.link_scale, design.link_freq, x) + eps;
        y_level[t] = y_core[t] + effect;
      }
    }
    for (int t = 2; t < design.periods; ++t) {
      Sample s;
      s.eval_points.push_back({1.0, {y_level[t - 1] / c, x_path[t] / c}});
      s.eval_points.push_back({-1.0, {y_level[t - 2] / c, x_path[t - 1] / c}});
      s.instrument = s.eval_points[1].point;
      s.target = y_core[t] - y_core[t - 1];
      s.ridge_index = 0;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::function<double(std::span<const double>)> structural_truth(const PanelDesign& design) {
  const LinkKind kind = design.link;
  const double scale = design.link_scale, freq = design.link_freq;
  const double c = panel_point_scale(design);
  return [kind, scale, freq, c](std::span<const double> p) {
    if (p.size() != 2) fail_config("panel truth: expected points of dim 2, got %zu", p.size());
    return link_eval(kind, scale, freq, p[1] * c);
  };
}

// ---- finite-state design --------------------------------------------------

std::vector<Sample> gen_discrete(const DiscreteDesign& design, long long n,
                                 std::uint64_t seed, double target_noise) {
  validate_design(design);
  if (n < 1) fail_config("gen_discrete: n must be >= 1, got %lld", n);
  if (!(target_noise >= 0.0)) fail_config("gen_discrete: target_noise must be >= 0");
  const std::size_t k1 = design.joint_pmf.size(), k2 = design.joint_pmf[0].size();
  std::vector<double> cum;
  cum.reserve(k1 * k2);
  double acc = 0.0;
  for (std::size_t i = 0; i < k1; ++i)
    for (std::size_t j = 0; j < k2; ++j) {
      acc += design.joint_pmf[i][j];
      cum.push_back(acc);
    }
  const double total = acc;

  CounterRng rng = CounterRng(seed).fork(0);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (long long s = 0; s < n; ++s) {
    const double u = rng.uniform01() * total;
    const std::size_t cell =
        std::min(static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) -
                                          cum.begin()),
                 cum.size() - 1);
    const std::size_t i = cell / k2, j = cell % k2;
    Sample sample;
    sample.eval_points.push_back({1.0, design.x1_grid[i]});
    sample.instrument = design.x2_grid[j];
    sample.target = design.f_true[i];
    if (target_noise > 0.0) sample.target += rng.truncated_gaussian(target_noise);
    sample.ridge_index = 0;
    out.push_back(std::move(sample));
  }
  return out;
}

// ---- streams ---------------------------------------------------------------

SampleStream stream_iv(const IvDesign& design, std::uint64_t seed) {
  validate_design(design);
  // One-at-a-time replay of gen_iv's draw sequence.
  struct State {
    IvDesign design;
    CounterRng rng;
    std::function<double(std::span<const double>)> truth;
  };
  auto st = std::make_shared<State>(State{design, CounterRng(seed).fork(0),
                                          structural_truth(design)});
  return [st](Sample& s) {
    const int d = st->design.dim;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double mix = std::sqrt(1.0 - st->design.rho * st->design.rho);
    std::vector<double> z(d), x(d);
    for (int k = 0; k < d; ++k) z[k] = st->rng.uniform(-1.0, 1.0);
    const double e = st->rng.truncated_gaussian(st->design.confounder_scale);
    const double nu = st->rng.truncated_gaussian(st->design.outcome_noise);
    for (int k = 0; k < d; ++k)
      x[k] = std::tanh(st->design.rho * z[k] + mix * e) * inv_sqrt_d;
    s.eval_points.clear();
    s.eval_points.push_back({1.0, x});
    s.instrument = z;
    for (double& v : s.instrument) v *= inv_sqrt_d;
    s.target = st->truth(x) + e + nu;
    s.ridge_index = 0;
    return true;
  };
}

SampleStream stream_discrete(const DiscreteDesign& design, std::uint64_t seed,
                             double target_noise) {
  validate_design(design);
  if (!(target_noise >= 0.0)) fail_config("stream_discrete: target_noise must be >= 0");
  struct State {
    DiscreteDesign design;
    std::vector<double> cum;
    double total = 0.0;
    double noise = 0.0;
    CounterRng rng{0};
  };
  auto st = std::make_shared<State>();
  st->design = design;
  st->noise = target_noise;
  st->rng = CounterRng(seed).fork(0);
  const std::size_t k2 = design.joint_pmf[0].size();
  double acc = 0.0;
  for (const auto& row : design.joint_pmf)
    for (double p : row) {
      acc += p;
      st->cum.push_back(acc);
    }
  st->total = acc;
  return [st, k2](Sample& s) {
    const double u = st->rng.uniform01() * st->total;
    const std::size_t cell = std::min(
        static_cast<std::size_t>(std::upper_bound(st->cum.begin(), st->cum.end(), u) -
                                 st->cum.begin()),
        st->cum.size() - 1);
    const std::size_t i = cell / k2, j = cell % k2;
    s.eval_points.clear();
    s.eval_points.push_back({1.0, st->design.x1_grid[i]});
    s.instrument = st->design.x2_grid[j];
    s.target = st->design.f_true[i];
    if (st->noise > 0.0) s.target += st->rng.truncated_gaussian(st->noise);
    s.ridge_index = 0;
    return true;
  };
}

SampleStream stream_from_vector(std::vector<Sample> samples) {
  auto data = std::make_shared<std::vector<Sample>>(std::move(samples));
  auto pos = std::make_shared<std::size_t>(0);
  return [data, pos](Sample& s) {
    if (*pos >= data->size()) return false;
    s = (*data)[(*pos)++];
    return true;
  };
}

// ---- moment diagnostics ----------------------------------------------------

std::vector<MomentRow> moment_check(
    std::span<const Sample> samples,
    const std::function<double(std::span<const double>)>& truth,
    std::span<const std::pair<std::string, std::function<double(std::span<const double>)>>>
        test_functions) {
  if (samples.size() < 2) fail_config("moment_check: need at least 2 samples");
  if (!truth) fail_config("moment_check: null truth function");
  std::vector<double> residuals;
  residuals.reserve(samples.size());
  for (const Sample& s : samples) {
    double r = -s.target;
    for (const WeightedPoint& p : s.eval_points) r += p.coeff * truth(p.point);
    residuals.push_back(r);
  }
  std::vector<MomentRow> rows;
  rows.reserve(test_functions.size());
  const double n = static_cast<double>(samples.size());
  for (const auto& [name, h] : test_functions) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double v = residuals[i] * h(samples[i].instrument);
      s1 += v;
      s2 += v * v;
    }
    const double m = s1 / n;
    const double var = std::max(0.0, (s2 - n * m * m) / (n - 1.0));
    rows.push_back({name, m, std::sqrt(var / n)});
  }
  return rows;
}

// ---- canned smooth instance -------------------------------------------------

DiscreteDesign make_smooth_discrete_design(int k1, int k2, double bandwidth,
                                           double truth_scale) {
  if (k1 < 2 || k2 < 2) fail_config("smooth design: need k1, k2 >= 2");
  if (!(bandwidth > 0.0)) fail_config("smooth design: bandwidth must be positive");
  constexpr double kPi = 3.14159265358979323846;
  DiscreteDesign d;
  d.joint_pmf.assign(k1, std::vector<double>(k2, 0.0));
  double total = 0.0;
  for (int i = 0; i < k1; ++i) {
    const double u = (i + 0.5) / k1;
    for (int j = 0; j < k2; ++j) {
      const double v = (j + 0.5) / k2;
      const double w = std::exp(-0.5 * (u - v) * (u - v) / (bandwidth * bandwidth));
      d.joint_pmf[i][j] = w;
      total += w;
    }
  }
  for (auto& row : d.joint_pmf)
    for (double& p : row) p /= total;

  // Half-circle embeddings keep norms exactly 1 while spanning a rich
  // function class for no-bias relu features.
  d.x1_grid.reserve(k1);
  for (int i = 0; i < k1; ++i) {
    const double a = kPi * (i + 0.5) / k1;
    d.x1_grid.push_back({std::cos(a), std::sin(a)});
  }
  d.x2_grid.reserve(k2);
  for (int j = 0; j < k2; ++j) {
    const double a = kPi * (j + 0.5) / k2;
    d.x2_grid.push_back({std::cos(a), std::sin(a)});
  }

  d.f_true.reserve(k1);
  for (int i = 0; i < k1; ++i) {
    const double u = (i + 0.5) / k1;
    d.f_true.push_back(truth_scale *
                       (0.9 * std::sin(kPi * u) + 0.35 * std::cos(2.0 * kPi * u) - 0.2));
  }
  validate_design(d);
  return d;
}

}  // namespace asem
