#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <utility>
#include <vector>

#include "asem/common.hpp"
#include "asem/generators.hpp"

using namespace asem;

namespace {

using TestFn = std::pair<std::string, std::function<double(std::span<const double>)>>;

std::vector<TestFn> battery() {
  return {
      {"const", [](std::span<const double>) { return 1.0; }},
      {"z0", [](std::span<const double> z) { return z[0]; }},
      {"z0_sq", [](std::span<const double> z) { return z[0] * z[0]; }},
      {"z_last", [](std::span<const double> z) { return z[z.size() - 1]; }},
  };
}

double sq(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

}  // namespace

TEST_CASE("iv samples: shapes, bounds, determinism") {
  IvDesign design;
  design.dim = 3;
  design.link = LinkKind::sine;
  const auto samples = gen_iv(design, 2000, 11);
  REQUIRE(samples.size() == 2000);
  for (const Sample& s : samples) {
    REQUIRE(s.eval_points.size() == 1);
    CHECK(s.eval_points[0].coeff == 1.0);
    CHECK(sq(s.eval_points[0].point) <= 1.0 + 1e-12);
    CHECK(sq(s.instrument) <= 1.0 + 1e-12);
    CHECK(std::fabs(s.target) <=
          design.link_scale + 3.0 * (design.confounder_scale + design.outcome_noise) + 1e-12);
    CHECK(s.ridge_index == 0);
  }
  const auto again = gen_iv(design, 2000, 11);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(samples[i].target == again[i].target);
    CHECK(samples[i].instrument == again[i].instrument);
  }
  const auto other = gen_iv(design, 2000, 12);
  CHECK(other[0].target != samples[0].target);

  // The endless stream replays the batch generator's sequence.
  SampleStream stream = stream_iv(design, 11);
  Sample s;
  for (int i = 0; i < 50; ++i) {
    REQUIRE(stream(s));
    CHECK(s.target == samples[static_cast<std::size_t>(i)].target);
  }
}

TEST_CASE("iv residual moments vanish against the instrument battery") {
  IvDesign design;
  design.dim = 2;
  design.link = LinkKind::sigmoid;
  design.rho = 0.5;
  design.confounder_scale = 0.1;
  design.outcome_noise = 0.1;
  const auto samples = gen_iv(design, 100000, 2024);
  const auto rows = moment_check(samples, structural_truth(design), battery());
  REQUIRE(rows.size() == 4);
  for (const MomentRow& row : rows) {
    INFO(row.name, ": mean ", row.mean, " se ", row.std_err);
    CHECK(std::fabs(row.mean) <= 3.0 * row.std_err);
  }
}

TEST_CASE("iv design is genuinely endogenous") {
  IvDesign design;
  design.dim = 2;
  design.rho = 0.5;
  design.confounder_scale = 0.3;  // strong confounding for a clear signal
  design.outcome_noise = 0.1;
  const auto samples = gen_iv(design, 50000, 5);
  const auto truth = structural_truth(design);
  // Correlate the residual with the first *regressor* coordinate; a valid
  // instrument battery is centered, this must not be.
  double s1 = 0.0, s2 = 0.0;
  for (const Sample& s : samples) {
    const double r = truth(s.eval_points[0].point) - s.target;
    const double v = r * s.eval_points[0].point[0];
    s1 += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(samples.size());
  const double m = s1 / n;
  const double se = std::sqrt((s2 / n - m * m) / n);
  CHECK(std::fabs(m) > 5.0 * se);
}

TEST_CASE("panel samples: differenced structure and sequential exogeneity") {
  PanelDesign design;
  design.units = 20000;
  design.periods = 7;
  design.effect_scale = 1.0;
  design.noise_scale = 0.1;
  const auto samples = gen_panel(design, 31);
  REQUIRE(samples.size() == static_cast<std::size_t>(design.units) * (design.periods - 2));
  for (std::size_t i = 0; i < 500; ++i) {
    const Sample& s = samples[i];
    REQUIRE(s.eval_points.size() == 2);
    CHECK(s.eval_points[0].coeff == 1.0);
    CHECK(s.eval_points[1].coeff == -1.0);
    CHECK(sq(s.eval_points[0].point) <= 1.0 + 1e-12);
    CHECK(sq(s.eval_points[1].point) <= 1.0 + 1e-12);
    CHECK(s.instrument == s.eval_points[1].point);
  }
  const auto rows = moment_check(samples, structural_truth(design), battery());
  for (const MomentRow& row : rows) {
    INFO(row.name, ": mean ", row.mean, " se ", row.std_err);
    CHECK(std::fabs(row.mean) <= 3.0 * row.std_err);
  }
}

TEST_CASE("panel differenced residual is correlated with the recent eval point") {
  PanelDesign design;
  design.units = 20000;
  design.periods = 5;
  design.noise_scale = 0.3;  // shocks feed the regressor with a lag
  const auto samples = gen_panel(design, 77);
  const auto truth = structural_truth(design);
  double s1 = 0.0, s2 = 0.0;
  for (const Sample& s : samples) {
    const double r = truth(s.eval_points[0].point) - truth(s.eval_points[1].point) - s.target;
    const double v = r * s.eval_points[0].point[1];  // regressor coordinate of u_{t-1}
    s1 += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(samples.size());
  const double m = s1 / n;
  const double se = std::sqrt((s2 / n - m * m) / n);
  CHECK(std::fabs(m) > 5.0 * se);
}

TEST_CASE("panel targets are exactly invariant to the fixed-effect draws") {
  PanelDesign small, huge;
  small.units = huge.units = 300;
  small.periods = huge.periods = 6;
  small.effect_scale = 0.0;
  huge.effect_scale = 1000.0;
  const auto a = gen_panel(small, 2025);
  const auto b = gen_panel(huge, 2025);
  REQUIRE(a.size() == b.size());
  bool points_differ = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].target == b[i].target);  // bitwise: effects cancel in the difference
    points_differ |= a[i].eval_points[0].point != b[i].eval_points[0].point;
  }
  CHECK(points_differ);  // the levels themselves do carry the effects
}

TEST_CASE("panel rejects too few periods") {
  PanelDesign design;
  design.periods = 2;
  CHECK_THROWS_AS(gen_panel(design, 1), ConfigError);
}

TEST_CASE("discrete sampling matches the joint pmf to three sigmas") {
  DiscreteDesign d;
  d.joint_pmf = {{0.10, 0.25}, {0.30, 0.05}, {0.20, 0.10}};
  d.x1_grid = {{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}};
  d.x2_grid = {{0.6, 0.8}, {0.8, -0.6}};
  d.f_true = {1.0, -0.5, 0.25};
  const long long n = 60000;
  const auto samples = gen_discrete(d, n, 13);
  std::vector<std::vector<double>> counts(3, std::vector<double>(2, 0.0));
  for (const Sample& s : samples) {
    int i = -1, j = -1;
    for (int a = 0; a < 3; ++a)
      if (s.eval_points[0].point == d.x1_grid[a]) i = a;
    for (int b = 0; b < 2; ++b)
      if (s.instrument == d.x2_grid[b]) j = b;
    REQUIRE(i >= 0);
    REQUIRE(j >= 0);
    counts[i][j] += 1.0;
    CHECK(s.target == d.f_true[i]);  // exact when noise is off
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      const double p = d.joint_pmf[i][j];
      const double freq = counts[i][j] / static_cast<double>(n);
      CHECK(std::fabs(freq - p) <= 3.0 * std::sqrt(p * (1.0 - p) / n));
    }
}

TEST_CASE("discrete target noise is bounded and centered") {
  DiscreteDesign d;
  d.joint_pmf = {{0.5, 0.5}};
  d.x1_grid = {{1.0}};
  d.x2_grid = {{1.0}, {-1.0}};
  d.f_true = {0.75};
  const auto samples = gen_discrete(d, 30000, 3, 0.2);
  double s1 = 0.0;
  for (const Sample& s : samples) {
    CHECK(std::fabs(s.target - 0.75) <= 0.6 + 1e-12);
    s1 += s.target - 0.75;
  }
  CHECK(std::fabs(s1 / 30000.0) < 0.004);

  // Stream and batch agree draw by draw.
  SampleStream stream = stream_discrete(d, 3, 0.2);
  Sample s;
  for (int i = 0; i < 200; ++i) {
    REQUIRE(stream(s));
    CHECK(s.target == samples[static_cast<std::size_t>(i)].target);
  }
}

TEST_CASE("vector stream exhausts exactly once") {
  DiscreteDesign d;
  d.joint_pmf = {{1.0}};
  d.x1_grid = {{1.0}};
  d.x2_grid = {{1.0}};
  d.f_true = {0.0};
  SampleStream stream = stream_from_vector(gen_discrete(d, 5, 1));
  Sample s;
  for (int i = 0; i < 5; ++i) CHECK(stream(s));
  CHECK(!stream(s));
  CHECK(!stream(s));
}

TEST_CASE("moment_check on a hand-built dataset") {
  std::vector<Sample> samples;
  // Two samples with residuals +1 and -1 against truth f(x) = x0.
  Sample a;
  a.eval_points.push_back({1.0, {0.5}});
  a.instrument = {2.0};
  a.target = -0.5;  // residual = 0.5 - (-0.5) = 1
  Sample b = a;
  b.eval_points[0].point = {-0.5};
  b.target = 0.5;  // residual = -1
  samples = {a, b};
  const auto truth = [](std::span<const double> p) { return p[0]; };
  std::vector<TestFn> fns = {{"one", [](std::span<const double>) { return 1.0; }},
                             {"z", [](std::span<const double> z) { return z[0]; }}};
  const auto rows = moment_check(samples, truth, fns);
  CHECK(rows[0].mean == doctest::Approx(0.0));
  CHECK(rows[0].std_err == doctest::Approx(1.0));  // sd = sqrt(2), /sqrt(2)
  CHECK(rows[1].mean == doctest::Approx(0.0));
  CHECK(rows[1].std_err == doctest::Approx(2.0));
}

TEST_CASE("smooth design: embeddings on the half circle, unit mass") {
  const DiscreteDesign d = make_smooth_discrete_design(20, 18, 0.2, 1.2);
  CHECK(d.x1_grid.size() == 20);
  CHECK(d.x2_grid.size() == 18);
  double total = 0.0;
  for (const auto& row : d.joint_pmf)
    for (double p : row) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  for (const auto& p : d.x1_grid) CHECK(sq(p) == doctest::Approx(1.0).epsilon(1e-12));
  double fmax = 0.0;
  for (double v : d.f_true) fmax = std::max(fmax, std::fabs(v));
  CHECK(fmax > 0.5);
  CHECK(fmax < 2.0);
}
