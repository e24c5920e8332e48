#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>

#include "asem/game.hpp"
#include "asem/generators.hpp"
#include "asem/nn.hpp"
#include "asem/oracle.hpp"
#include "asem/rng.hpp"
#include "asem/serialize.hpp"
#include "util.hpp"

using namespace asem;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

bool bits_equal(double a, double b) {
  return std::memcmp(&a, &b, sizeof a) == 0;
}

}  // namespace

TEST_CASE("csv meta line round-trips and rejects junk") {
  CHECK(csv_meta_line(CsvMeta{}) == "");

  CsvMeta m;
  m.config_hash = "1f2e3d4c";
  m.seeds = {1, 42, 18446744073709551615ULL};
  m.ridge_index = 1;
  const std::string line = csv_meta_line(m);
  CHECK(line == "# asem config=1f2e3d4c seeds=1,42,18446744073709551615 ridge=1");

  CsvMeta back;
  REQUIRE(parse_csv_meta(line, back));
  CHECK(back.config_hash == m.config_hash);
  CHECK(back.seeds == m.seeds);
  CHECK(back.ridge_index == 1);

  CHECK_FALSE(parse_csv_meta("# some other comment", back));
  CHECK_THROWS_AS(parse_csv_meta("# asem mystery=3", back), RuntimeError);
}

TEST_CASE("network json round-trip is bit-exact for both architectures") {
  CounterRng rng(3);

  NetworkState two = init_network(TwoLayerConfig{.input_dim = 3, .width = 16, .radius = 0.8}, 7);
  testutil::perturb_within_ball(two, rng, 0.7);
  NetworkState two_back = network_from_json(nlohmann::json::parse(network_to_json(two).dump()));
  CHECK(two_back.weights == two.weights);
  CHECK(two_back.init_weights == two.init_weights);  // re-derived from the seed
  CHECK(two_back.signs == two.signs);
  CHECK(two_back.radius == two.radius);
  CHECK(two_back.seed == two.seed);

  NetworkState deep = init_network(
      DeepConfig{.input_dim = 2, .width = 6, .depth = 2, .radius = 0.4}, 9);
  testutil::perturb_within_ball(deep, rng, 0.7);
  NetworkState deep_back = network_from_json(nlohmann::json::parse(network_to_json(deep).dump()));
  CHECK(deep_back.weights == deep.weights);
  CHECK(deep_back.init_weights == deep.init_weights);
  CHECK(deep_back.input_map == deep.input_map);
  CHECK(deep_back.output == deep.output);
  CHECK(deep_back.depth == 2);
}

TEST_CASE("awkward doubles survive the json round-trip") {
  NetworkState net = init_network(TwoLayerConfig{.input_dim = 1, .width = 8}, 1);
  net.weights = {0.1, 1.0 / 3.0, -0.0, 5e-324, 1e308, 3.141592653589793, -2.5e-17, 123456789.123456789};
  NetworkState back = network_from_json(network_to_json(net));
  REQUIRE(back.weights.size() == net.weights.size());
  for (std::size_t i = 0; i < net.weights.size(); ++i)
    CHECK(bits_equal(back.weights[i], net.weights[i]));
}

TEST_CASE("network files save and load") {
  const std::string path = temp_path("asem_test_net.json");
  NetworkState net = init_network(TwoLayerConfig{.input_dim = 2, .width = 4, .radius = 1.5}, 11);
  net.weights[3] = 0.125;
  save_network(net, path);
  NetworkState back = load_network(path);
  CHECK(back.weights == net.weights);
  fs::remove(path);

  CHECK_THROWS_AS(load_network(temp_path("asem_no_such_file.json")), RuntimeError);
}

TEST_CASE("network documents reject malformed input") {
  NetworkState net = init_network(TwoLayerConfig{.input_dim = 2, .width = 4}, 5);
  nlohmann::json doc = network_to_json(net);

  nlohmann::json bad = doc;
  bad["surprise"] = 1;
  CHECK_THROWS_AS(network_from_json(bad), ConfigError);

  bad = doc;
  bad["config"]["momentum"] = 0.9;
  CHECK_THROWS_AS(network_from_json(bad), ConfigError);

  bad = doc;
  bad["format"] = "asem-operator";
  CHECK_THROWS_AS(network_from_json(bad), ConfigError);

  bad = doc;
  bad["version"] = 2;
  CHECK_THROWS_AS(network_from_json(bad), ConfigError);

  bad = doc;
  bad["arch"] = "three_layer";
  CHECK_THROWS_AS(network_from_json(bad), ConfigError);

  bad = doc;
  bad["weights"].push_back(1.0);
  CHECK_THROWS_AS(network_from_json(bad), ConfigError);

  bad = doc;
  bad["seed"] = -3;
  CHECK_THROWS_AS(network_from_json(bad), ConfigError);

  net.weights[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(network_to_json(net), RuntimeError);
}

TEST_CASE("weight blob is raw little-endian and round-trips") {
  const std::string path = temp_path("asem_test_weights.wbin");
  NetworkState net = init_network(TwoLayerConfig{.input_dim = 2, .width = 3, .radius = 2.0}, 13);
  net.weights = {1.0, -0.0, 0.1, 5e-324, -123.456, 2.0};
  save_weights_blob(net, path);

  // 6 doubles, 8 bytes each; first word must be the little-endian bits of 1.0.
  std::string bytes = read_text_file(path);
  REQUIRE(bytes.size() == 48);
  const unsigned char one[8] = {0, 0, 0, 0, 0, 0, 0xF0, 0x3F};
  for (int i = 0; i < 8; ++i)
    CHECK(static_cast<unsigned char>(bytes[i]) == one[i]);

  NetworkState other = net;
  for (double& w : other.weights) w = 0.0;
  load_weights_blob(other, path);
  for (std::size_t i = 0; i < net.weights.size(); ++i)
    CHECK(bits_equal(other.weights[i], net.weights[i]));
  fs::remove(path);

  // A blob of the wrong size does not fit another architecture.
  const std::string path2 = temp_path("asem_test_weights2.wbin");
  save_weights_blob(net, path2);
  NetworkState wider = init_network(TwoLayerConfig{.input_dim = 2, .width = 5}, 13);
  CHECK_THROWS_AS(load_weights_blob(wider, path2), RuntimeError);
  fs::remove(path2);
}

TEST_CASE("snapshot filenames carry zero-padded iteration suffixes") {
  CHECK(snapshot_filename("theta", 500) == "theta_000500.json");
  CHECK(snapshot_filename("out/omega", 32000) == "out/omega_032000.json");
  CHECK(snapshot_filename("theta", 1234567) == "theta_1234567.json");
}

TEST_CASE("trace csv: exact header, 17-digit round-trip, meta line") {
  TrainTrace trace;
  trace.rows = {
      {1, -0.12345678901234567, 1.0 / 3.0, 2.0, 0.0, -0.0},
      {2, 1e-300, 0.5, std::sqrt(2.0), 0.25, 1.75},
  };

  std::ostringstream os;
  write_trace_csv(trace, os);
  std::istringstream is(os.str());
  std::string first;
  std::getline(is, first);
  CHECK(first == "iter,payoff,grad_norm_theta,grad_norm_omega,dist_theta,dist_omega");

  std::istringstream full(os.str());
  std::vector<TraceRow> rows = read_trace_csv(full);
  REQUIRE(rows.size() == 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].iter == trace.rows[i].iter);
    CHECK(bits_equal(rows[i].payoff, trace.rows[i].payoff));
    CHECK(bits_equal(rows[i].grad_norm_theta, trace.rows[i].grad_norm_theta));
    CHECK(bits_equal(rows[i].grad_norm_omega, trace.rows[i].grad_norm_omega));
    CHECK(bits_equal(rows[i].dist_theta, trace.rows[i].dist_theta));
    CHECK(bits_equal(rows[i].dist_omega, trace.rows[i].dist_omega));
  }

  // Same trace, same bytes.
  std::ostringstream again;
  write_trace_csv(trace, again);
  CHECK(again.str() == os.str());

  CsvMeta meta;
  meta.config_hash = "abc123";
  meta.seeds = {7};
  std::ostringstream with_meta;
  write_trace_csv(trace, with_meta, meta);
  std::istringstream mread(with_meta.str());
  CsvMeta got;
  rows = read_trace_csv(mread, &got);
  CHECK(rows.size() == 2);
  CHECK(got.config_hash == "abc123");
  CHECK(got.seeds == std::vector<std::uint64_t>{7});

  std::istringstream bad("payoff,iter\n1,2\n");
  CHECK_THROWS_AS(read_trace_csv(bad), RuntimeError);
}

TEST_CASE("trace csv from a real run reads back exactly") {
  NetworkState theta = init_network(TwoLayerConfig{.input_dim = 1, .width = 4, .radius = 0.5}, 21);
  NetworkState omega = init_network(TwoLayerConfig{.input_dim = 1, .width = 4, .radius = 0.5}, 22);
  Sample s;
  s.eval_points = {{1.0, {0.4}}};
  s.instrument = {0.6};
  s.target = 0.3;
  GameConfig cfg;
  cfg.eta = 0.1;
  cfg.iterations = 25;
  TrainTrace trace = sgda_run(theta, omega, cfg,
                              [&s](Sample& out) { out = s; return true; });

  std::ostringstream os;
  write_trace_csv(trace, os);
  std::istringstream is(os.str());
  std::vector<TraceRow> rows = read_trace_csv(is);
  REQUIRE(rows.size() == 25);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(bits_equal(rows[i].payoff, trace.rows[i].payoff));
    CHECK(bits_equal(rows[i].dist_theta, trace.rows[i].dist_theta));
  }
}

TEST_CASE("sample csv: one-point design layout") {
  IvDesign design;
  std::vector<Sample> batch = gen_iv(design, 6, 31);

  std::ostringstream os;
  CsvMeta meta;
  meta.config_hash = "feed";
  meta.seeds = {31};
  write_samples_csv(batch, os, meta);

  std::istringstream lines(os.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "# asem config=feed seeds=31 ridge=0");
  std::getline(lines, line);
  CHECK(line == "n_points,c_1,x_1_1,x_1_2,x2_1,x2_2,b_tilde");

  std::istringstream is(os.str());
  CsvMeta got;
  std::vector<Sample> back = read_samples_csv(is, &got);
  REQUIRE(back.size() == batch.size());
  CHECK(got.config_hash == "feed");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(back[i].ridge_index == batch[i].ridge_index);
    CHECK(bits_equal(back[i].target, batch[i].target));
    CHECK(back[i].eval_points[0].coeff == batch[i].eval_points[0].coeff);
    for (int k = 0; k < 2; ++k) {
      CHECK(bits_equal(back[i].eval_points[0].point[k], batch[i].eval_points[0].point[k]));
      CHECK(bits_equal(back[i].instrument[k], batch[i].instrument[k]));
    }
  }
}

TEST_CASE("sample csv: differenced two-point layout") {
  PanelDesign design;
  design.units = 5;
  std::vector<Sample> batch = gen_panel(design, 17);
  REQUIRE(!batch.empty());
  REQUIRE(batch[0].eval_points.size() == 2);

  std::ostringstream os;
  write_samples_csv(batch, os);
  std::istringstream head(os.str());
  std::string line;
  std::getline(head, line);  // meta carries the ridge even with no hash
  CHECK(line == "# asem ridge=0");
  std::getline(head, line);
  CHECK(line == "n_points,c_1,x_1_1,x_1_2,c_2,x_2_1,x_2_2,x2_1,x2_2,b_tilde");

  std::istringstream is(os.str());
  std::vector<Sample> back = read_samples_csv(is);
  REQUIRE(back.size() == batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(back[i].eval_points.size() == 2);
    CHECK(back[i].eval_points[1].coeff == -1.0);
    for (int k = 0; k < 2; ++k)
      CHECK(bits_equal(back[i].eval_points[1].point[k], batch[i].eval_points[1].point[k]));
    CHECK(bits_equal(back[i].target, batch[i].target));
  }

  // Writing twice yields identical bytes.
  std::ostringstream os2;
  write_samples_csv(batch, os2);
  CHECK(os2.str() == os.str());
}

TEST_CASE("sample csv rejects empty and mixed batches") {
  std::ostringstream os;
  CHECK_THROWS_AS(write_samples_csv(std::vector<Sample>{}, os), ConfigError);

  IvDesign iv;
  PanelDesign panel;
  panel.units = 4;
  std::vector<Sample> mixed = gen_iv(iv, 2, 1);
  std::vector<Sample> extra = gen_panel(panel, 1);
  mixed.push_back(extra[0]);
  CHECK_THROWS_AS(write_samples_csv(mixed, os), ConfigError);

  std::istringstream bad("n_points,b_tilde\n0,1\n");
  CHECK_THROWS_AS(read_samples_csv(bad), RuntimeError);
}

TEST_CASE("operator json round-trips bit-exactly and validates on load") {
  DiscreteDesign design = make_smooth_discrete_design(5, 4, 0.5, 1.0);
  DiscretizedOperator op = estimate_operator(design);

  nlohmann::json doc = operator_to_json(op);
  DiscretizedOperator back = operator_from_json(nlohmann::json::parse(doc.dump()));
  CHECK(back.k1() == op.k1());
  CHECK(back.k2() == op.k2());
  for (int j = 0; j < op.k2(); ++j)
    for (int i = 0; i < op.k1(); ++i)
      CHECK(bits_equal(back.a_hat(j, i), op.a_hat(j, i)));
  for (int i = 0; i < op.k1(); ++i) CHECK(bits_equal(back.w1(i), op.w1(i)));
  for (int j = 0; j < op.k2(); ++j) CHECK(bits_equal(back.w2(j), op.w2(j)));
  CHECK(back.x1_grid == op.x1_grid);
  CHECK(back.x2_grid == op.x2_grid);

  nlohmann::json tampered = doc;
  tampered["a_hat"][0] = tampered["a_hat"][0].get<double>() + 0.1;
  CHECK_THROWS_AS(operator_from_json(tampered), RuntimeError);

  tampered = doc;
  tampered["w1"][0] = -0.2;
  CHECK_THROWS_AS(operator_from_json(tampered), ConfigError);

  tampered = doc;
  tampered["extra"] = true;
  CHECK_THROWS_AS(operator_from_json(tampered), ConfigError);
}

TEST_CASE("grid function json round-trips") {
  DiscreteDesign design = make_smooth_discrete_design(6, 6, 0.5, 1.0);
  Eigen::VectorXd values =
      Eigen::Map<const Eigen::VectorXd>(design.f_true.data(), design.f_true.size());

  nlohmann::json doc = grid_function_to_json(design.x1_grid, values);
  std::vector<std::vector<double>> grid;
  Eigen::VectorXd back;
  grid_function_from_json(nlohmann::json::parse(doc.dump()), grid, back);
  CHECK(grid == design.x1_grid);
  REQUIRE(back.size() == values.size());
  for (Eigen::Index i = 0; i < back.size(); ++i) CHECK(bits_equal(back(i), values(i)));

  Eigen::VectorXd short_values = values.head(3);
  CHECK_THROWS_AS(grid_function_to_json(design.x1_grid, short_values), ConfigError);
}

TEST_CASE("singular value csv lists 1-based components") {
  DiscreteDesign design = make_smooth_discrete_design(4, 4, 0.6, 1.0);
  SingularSystem sys = svd_system(estimate_operator(design));

  std::ostringstream os;
  write_singular_values_csv(sys, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "j,lambda_j");
  int j = 0;
  while (std::getline(is, line)) {
    ++j;
    const std::string expected = std::to_string(j) + "," + fmt_g17(sys.values(j - 1));
    CHECK(line == expected);
  }
  CHECK(j == sys.values.size());
}
