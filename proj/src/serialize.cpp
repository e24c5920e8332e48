#include "asem/serialize.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace asem {

namespace {

const char* kTraceHeader = "iter,payoff,grad_norm_theta,grad_norm_omega,dist_theta,dist_omega";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_double(const std::string& tok, const char* what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size())
    fail_runtime("csv: bad %s value \"%s\"", what, tok.c_str());
  return v;
}

long long parse_ll(const std::string& tok, const char* what) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size())
    fail_runtime("csv: bad %s value \"%s\"", what, tok.c_str());
  return v;
}

std::uint64_t parse_u64(const std::string& tok, const char* what) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size())
    fail_runtime("csv: bad %s value \"%s\"", what, tok.c_str());
  return v;
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) fail_runtime("%s: non-finite value %g", what, x);
}

double number_at(const nlohmann::json& j, const char* what) {
  if (!j.is_number()) fail_config("%s: expected a number, got %s", what, j.dump().c_str());
  return j.get<double>();
}

int int_at(const nlohmann::json& obj, const char* key, const char* context) {
  if (!obj.contains(key)) fail_config("%s: missing key \"%s\"", context, key);
  const nlohmann::json& j = obj.at(key);
  if (!j.is_number_integer() && !j.is_number_unsigned())
    fail_config("%s: key \"%s\" must be an integer", context, key);
  return j.get<int>();
}

double double_at(const nlohmann::json& obj, const char* key, const char* context) {
  if (!obj.contains(key)) fail_config("%s: missing key \"%s\"", context, key);
  return number_at(obj.at(key), key);
}

std::uint64_t seed_at(const nlohmann::json& obj, const char* key, const char* context) {
  if (!obj.contains(key)) fail_config("%s: missing key \"%s\"", context, key);
  const nlohmann::json& j = obj.at(key);
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<long long>() >= 0)
    return static_cast<std::uint64_t>(j.get<long long>());
  fail_config("%s: key \"%s\" must be a nonnegative integer", context, key);
}

std::vector<double> doubles_at(const nlohmann::json& obj, const char* key,
                               const char* context) {
  if (!obj.contains(key)) fail_config("%s: missing key \"%s\"", context, key);
  const nlohmann::json& j = obj.at(key);
  if (!j.is_array()) fail_config("%s: key \"%s\" must be an array", context, key);
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(number_at(v, key));
  return out;
}

std::vector<std::vector<double>> grid_at(const nlohmann::json& obj, const char* key,
                                         const char* context) {
  if (!obj.contains(key)) fail_config("%s: missing key \"%s\"", context, key);
  const nlohmann::json& j = obj.at(key);
  if (!j.is_array()) fail_config("%s: key \"%s\" must be an array of arrays", context, key);
  std::vector<std::vector<double>> out;
  out.reserve(j.size());
  for (const auto& row : j) {
    if (!row.is_array()) fail_config("%s: key \"%s\" must be an array of arrays", context, key);
    std::vector<double> r;
    r.reserve(row.size());
    for (const auto& v : row) r.push_back(number_at(v, key));
    out.push_back(std::move(r));
  }
  return out;
}

void check_format(const nlohmann::json& doc, const char* format, const char* context) {
  if (!doc.is_object()) fail_config("%s: expected a JSON object", context);
  if (!doc.contains("format") || !doc.at("format").is_string() ||
      doc.at("format").get<std::string>() != format)
    fail_config("%s: missing or wrong \"format\" marker (want \"%s\")", context, format);
  if (int_at(doc, "version", context) != 1)
    fail_config("%s: unsupported version %d", context, int_at(doc, "version", context));
}

std::string arch_to_string(Arch a) {
  return a == Arch::two_layer ? "two_layer" : "multi_layer";
}

void put_u64_le(std::uint64_t v, std::ostream& os) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

}  // namespace

std::string csv_meta_line(const CsvMeta& meta) {
  if (meta.config_hash.empty() && meta.seeds.empty() && meta.ridge_index < 0) return {};
  std::string line = "# asem";
  if (!meta.config_hash.empty()) line += " config=" + meta.config_hash;
  if (!meta.seeds.empty()) {
    line += " seeds=";
    for (std::size_t i = 0; i < meta.seeds.size(); ++i) {
      if (i) line += ',';
      line += std::to_string(meta.seeds[i]);
    }
  }
  if (meta.ridge_index >= 0) line += strprintf(" ridge=%d", meta.ridge_index);
  return line;
}

bool parse_csv_meta(const std::string& line, CsvMeta& out) {
  if (line.rfind("# asem", 0) != 0) return false;
  out = CsvMeta{};
  std::istringstream is(line.substr(6));
  std::string field;
  while (is >> field) {
    const std::size_t eq = field.find('=');
    if (eq == std::string::npos) fail_runtime("csv: malformed meta field \"%s\"", field.c_str());
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "config") {
      out.config_hash = value;
    } else if (key == "seeds") {
      for (const std::string& tok : split_csv(value))
        out.seeds.push_back(parse_u64(tok, "seed"));
    } else if (key == "ridge") {
      out.ridge_index = static_cast<int>(parse_ll(value, "ridge"));
    } else {
      fail_runtime("csv: unknown meta field \"%s\"", key.c_str());
    }
  }
  return true;
}

void check_known_keys(const nlohmann::json& obj,
                      std::initializer_list<const char*> allowed,
                      const char* context) {
  if (!obj.is_object()) fail_config("%s: expected a JSON object", context);
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known) fail_config("%s: unknown key \"%s\"", context, item.key().c_str());
  }
}

nlohmann::json network_to_json(const NetworkState& net) {
  require_finite(net.weights, "network weights");
  nlohmann::json config;
  config["input_dim"] = net.input_dim;
  config["width"] = net.width;
  config["radius"] = net.radius;
  if (net.arch == Arch::multi_layer) config["depth"] = net.depth;

  nlohmann::json doc;
  doc["format"] = "asem-network";
  doc["version"] = 1;
  doc["arch"] = arch_to_string(net.arch);
  doc["config"] = std::move(config);
  doc["seed"] = net.seed;
  doc["weights"] = net.weights;
  return doc;
}

NetworkState network_from_json(const nlohmann::json& doc) {
  const char* ctx = "network document";
  check_format(doc, "asem-network", ctx);
  check_known_keys(doc, {"format", "version", "arch", "config", "seed", "weights"}, ctx);
  if (!doc.contains("arch") || !doc.at("arch").is_string())
    fail_config("%s: missing \"arch\" string", ctx);
  const std::string arch = doc.at("arch").get<std::string>();
  const std::uint64_t seed = seed_at(doc, "seed", ctx);
  if (!doc.contains("config")) fail_config("%s: missing key \"config\"", ctx);
  const nlohmann::json& config = doc.at("config");

  NetworkState net;
  if (arch == "two_layer") {
    check_known_keys(config, {"input_dim", "width", "radius"}, "network config");
    TwoLayerConfig c;
    c.input_dim = int_at(config, "input_dim", "network config");
    c.width = int_at(config, "width", "network config");
    c.radius = double_at(config, "radius", "network config");
    net = init_network(c, seed);
  } else if (arch == "multi_layer") {
    check_known_keys(config, {"input_dim", "width", "depth", "radius"}, "network config");
    DeepConfig c;
    c.input_dim = int_at(config, "input_dim", "network config");
    c.width = int_at(config, "width", "network config");
    c.depth = int_at(config, "depth", "network config");
    c.radius = double_at(config, "radius", "network config");
    net = init_network(c, seed);
  } else {
    fail_config("%s: unknown arch \"%s\"", ctx, arch.c_str());
  }

  std::vector<double> w = doubles_at(doc, "weights", ctx);
  if (w.size() != net.n_weights())
    fail_config("%s: %zu weights, architecture needs %zu", ctx, w.size(), net.n_weights());
  require_finite(w, "network weights");
  net.weights = std::move(w);
  return net;
}

void save_network(const NetworkState& net, const std::string& path) {
  write_text_file(path, network_to_json(net).dump() + "\n");
}

NetworkState load_network(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail_runtime("network file %s: %s", path.c_str(), e.what());
  }
  return network_from_json(doc);
}

void save_weights_blob(const NetworkState& net, const std::string& path) {
  require_finite(net.weights, "network weights");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail_runtime("cannot open %s for writing", path.c_str());
  for (double w : net.weights) put_u64_le(std::bit_cast<std::uint64_t>(w), os);
  if (!os.good()) fail_runtime("write to %s failed", path.c_str());
}

void load_weights_blob(NetworkState& net, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail_runtime("cannot open %s", path.c_str());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() != 8 * net.n_weights())
    fail_runtime("weight blob %s holds %zu bytes, network needs %zu", path.c_str(),
                 bytes.size(), 8 * net.n_weights());
  for (std::size_t i = 0; i < net.n_weights(); ++i) {
    std::uint64_t v = 0;
    for (int b = 7; b >= 0; --b)
      v = (v << 8) | static_cast<unsigned char>(bytes[8 * i + b]);
    net.weights[i] = std::bit_cast<double>(v);
  }
  require_finite(net.weights, "network weights");
}

std::string snapshot_filename(const std::string& stem, long long iter) {
  return strprintf("%s_%06lld.json", stem.c_str(), iter);
}

void write_trace_csv(const TrainTrace& trace, std::ostream& os, const CsvMeta& meta) {
  const std::string head = csv_meta_line(meta);
  if (!head.empty()) os << head << '\n';
  os << kTraceHeader << '\n';
  for (const TraceRow& r : trace.rows) {
    os << r.iter << ',' << fmt_g17(r.payoff) << ',' << fmt_g17(r.grad_norm_theta) << ','
       << fmt_g17(r.grad_norm_omega) << ',' << fmt_g17(r.dist_theta) << ','
       << fmt_g17(r.dist_omega) << '\n';
  }
}

void write_trace_csv(const TrainTrace& trace, const std::string& path, const CsvMeta& meta) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail_runtime("cannot open %s for writing", path.c_str());
  write_trace_csv(trace, os, meta);
  if (!os.good()) fail_runtime("write to %s failed", path.c_str());
}

std::vector<TraceRow> read_trace_csv(std::istream& is, CsvMeta* meta) {
  std::string line;
  bool have_header = false;
  std::vector<TraceRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      CsvMeta m;
      if (parse_csv_meta(line, m) && meta) *meta = m;
      continue;
    }
    if (!have_header) {
      if (line != kTraceHeader)
        fail_runtime("trace csv: unexpected header \"%s\"", line.c_str());
      have_header = true;
      continue;
    }
    const std::vector<std::string> tok = split_csv(line);
    if (tok.size() != 6) fail_runtime("trace csv: row has %zu fields, expected 6", tok.size());
    TraceRow r;
    r.iter = parse_ll(tok[0], "iter");
    r.payoff = parse_double(tok[1], "payoff");
    r.grad_norm_theta = parse_double(tok[2], "grad_norm_theta");
    r.grad_norm_omega = parse_double(tok[3], "grad_norm_omega");
    r.dist_theta = parse_double(tok[4], "dist_theta");
    r.dist_omega = parse_double(tok[5], "dist_omega");
    rows.push_back(r);
  }
  if (!have_header) fail_runtime("trace csv: missing header");
  return rows;
}

namespace {

// Shared sample batch shape; every row of one file must match it.
struct SampleShape {
  int n_points = 0;
  int point_dim = 0;
  int inst_dim = 0;
  int ridge_index = 0;
};

SampleShape shape_of(std::span<const Sample> samples) {
  if (samples.empty()) fail_config("samples: cannot serialize an empty batch");
  const Sample& first = samples.front();
  if (first.eval_points.empty()) fail_config("samples: sample has no eval points");
  SampleShape s;
  s.n_points = static_cast<int>(first.eval_points.size());
  s.point_dim = static_cast<int>(first.eval_points[0].point.size());
  s.inst_dim = static_cast<int>(first.instrument.size());
  s.ridge_index = first.ridge_index;
  for (const Sample& smp : samples) {
    if (static_cast<int>(smp.eval_points.size()) != s.n_points ||
        static_cast<int>(smp.instrument.size()) != s.inst_dim ||
        smp.ridge_index != s.ridge_index)
      fail_config("samples: batch mixes sample shapes");
    for (const WeightedPoint& p : smp.eval_points)
      if (static_cast<int>(p.point.size()) != s.point_dim)
        fail_config("samples: batch mixes point dimensions");
  }
  return s;
}

std::string sample_header(const SampleShape& s) {
  std::string h = "n_points";
  for (int k = 1; k <= s.n_points; ++k) {
    h += strprintf(",c_%d", k);
    for (int i = 1; i <= s.point_dim; ++i) h += strprintf(",x_%d_%d", k, i);
  }
  for (int i = 1; i <= s.inst_dim; ++i) h += strprintf(",x2_%d", i);
  h += ",b_tilde";
  return h;
}

}  // namespace

void write_samples_csv(std::span<const Sample> samples, std::ostream& os,
                       const CsvMeta& meta) {
  const SampleShape shape = shape_of(samples);
  CsvMeta m = meta;
  m.ridge_index = shape.ridge_index;  // always recorded, the columns do not carry it
  os << csv_meta_line(m) << '\n';
  os << sample_header(shape) << '\n';
  for (const Sample& s : samples) {
    os << shape.n_points;
    for (const WeightedPoint& p : s.eval_points) {
      os << ',' << fmt_g17(p.coeff);
      for (double v : p.point) os << ',' << fmt_g17(v);
    }
    for (double v : s.instrument) os << ',' << fmt_g17(v);
    os << ',' << fmt_g17(s.target) << '\n';
  }
}

void write_samples_csv(std::span<const Sample> samples, const std::string& path,
                       const CsvMeta& meta) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail_runtime("cannot open %s for writing", path.c_str());
  write_samples_csv(samples, os, meta);
  if (!os.good()) fail_runtime("write to %s failed", path.c_str());
}

std::vector<Sample> read_samples_csv(std::istream& is, CsvMeta* meta) {
  std::string line;
  CsvMeta m;
  bool have_meta = false, have_header = false;
  SampleShape shape;
  std::vector<Sample> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (parse_csv_meta(line, m)) have_meta = true;
      continue;
    }
    if (!have_header) {
      // Recover the shape from the column names, then insist the whole
      // header matches the canonical layout for that shape.
      const std::vector<std::string> tok = split_csv(line);
      shape.ridge_index = have_meta && m.ridge_index >= 0 ? m.ridge_index : 0;
      for (const std::string& t : tok) {
        if (t.rfind("c_", 0) == 0) ++shape.n_points;
        else if (t.rfind("x2_", 0) == 0) ++shape.inst_dim;
        else if (t.rfind("x_1_", 0) == 0) ++shape.point_dim;
      }
      if (shape.n_points < 1 || line != sample_header(shape))
        fail_runtime("samples csv: unexpected header \"%s\"", line.c_str());
      have_header = true;
      continue;
    }
    const std::vector<std::string> tok = split_csv(line);
    const std::size_t want = 1 +
        static_cast<std::size_t>(shape.n_points) * (1 + shape.point_dim) +
        shape.inst_dim + 1;
    if (tok.size() != want)
      fail_runtime("samples csv: row has %zu fields, expected %zu", tok.size(), want);
    if (parse_ll(tok[0], "n_points") != shape.n_points)
      fail_runtime("samples csv: row n_points disagrees with the header");
    Sample s;
    s.ridge_index = shape.ridge_index;
    std::size_t f = 1;
    for (int k = 0; k < shape.n_points; ++k) {
      WeightedPoint p;
      p.coeff = parse_double(tok[f++], "coeff");
      for (int i = 0; i < shape.point_dim; ++i)
        p.point.push_back(parse_double(tok[f++], "point"));
      s.eval_points.push_back(std::move(p));
    }
    for (int i = 0; i < shape.inst_dim; ++i)
      s.instrument.push_back(parse_double(tok[f++], "instrument"));
    s.target = parse_double(tok[f++], "b_tilde");
    out.push_back(std::move(s));
  }
  if (!have_header) fail_runtime("samples csv: missing header");
  if (meta) *meta = m;
  return out;
}

nlohmann::json operator_to_json(const DiscretizedOperator& op) {
  nlohmann::json doc;
  doc["format"] = "asem-operator";
  doc["version"] = 1;
  doc["k1"] = op.k1();
  doc["k2"] = op.k2();
  std::vector<double> a;
  a.reserve(static_cast<std::size_t>(op.k1()) * op.k2());
  for (int j = 0; j < op.k2(); ++j)
    for (int i = 0; i < op.k1(); ++i) a.push_back(op.a_hat(j, i));
  doc["a_hat"] = std::move(a);
  doc["w1"] = std::vector<double>(op.w1.begin(), op.w1.end());
  doc["w2"] = std::vector<double>(op.w2.begin(), op.w2.end());
  doc["x1_grid"] = op.x1_grid;
  doc["x2_grid"] = op.x2_grid;
  return doc;
}

DiscretizedOperator operator_from_json(const nlohmann::json& doc) {
  const char* ctx = "operator document";
  check_format(doc, "asem-operator", ctx);
  check_known_keys(doc, {"format", "version", "k1", "k2", "a_hat", "w1", "w2",
                         "x1_grid", "x2_grid"}, ctx);
  const int k1 = int_at(doc, "k1", ctx);
  const int k2 = int_at(doc, "k2", ctx);
  if (k1 < 1 || k2 < 1) fail_config("%s: grid sizes must be positive", ctx);

  const std::vector<double> a = doubles_at(doc, "a_hat", ctx);
  if (a.size() != static_cast<std::size_t>(k1) * k2)
    fail_config("%s: a_hat has %zu entries, expected %d", ctx, a.size(), k1 * k2);
  const std::vector<double> w1 = doubles_at(doc, "w1", ctx);
  const std::vector<double> w2 = doubles_at(doc, "w2", ctx);
  if (static_cast<int>(w1.size()) != k1 || static_cast<int>(w2.size()) != k2)
    fail_config("%s: marginal sizes disagree with k1/k2", ctx);
  for (double w : w1)
    if (!(w > 0.0)) fail_config("%s: w1 entries must be positive", ctx);
  for (double w : w2)
    if (!(w > 0.0)) fail_config("%s: w2 entries must be positive", ctx);

  DiscretizedOperator op;
  op.a_hat.resize(k2, k1);
  for (int j = 0; j < k2; ++j)
    for (int i = 0; i < k1; ++i) op.a_hat(j, i) = a[static_cast<std::size_t>(j) * k1 + i];
  op.w1 = Eigen::Map<const Eigen::VectorXd>(w1.data(), k1);
  op.w2 = Eigen::Map<const Eigen::VectorXd>(w2.data(), k2);
  op.x1_grid = grid_at(doc, "x1_grid", ctx);
  op.x2_grid = grid_at(doc, "x2_grid", ctx);
  if (static_cast<int>(op.x1_grid.size()) != k1 || static_cast<int>(op.x2_grid.size()) != k2)
    fail_config("%s: grid sizes disagree with k1/k2", ctx);
  check_operator(op);
  return op;
}

nlohmann::json grid_function_to_json(const std::vector<std::vector<double>>& grid,
                                     const Eigen::VectorXd& values) {
  if (static_cast<std::size_t>(values.size()) != grid.size())
    fail_config("grid function: %lld values for %zu grid points",
                static_cast<long long>(values.size()), grid.size());
  nlohmann::json doc;
  doc["format"] = "asem-grid-function";
  doc["version"] = 1;
  doc["grid"] = grid;
  doc["values"] = std::vector<double>(values.begin(), values.end());
  return doc;
}

void grid_function_from_json(const nlohmann::json& doc,
                             std::vector<std::vector<double>>& grid,
                             Eigen::VectorXd& values) {
  const char* ctx = "grid function document";
  check_format(doc, "asem-grid-function", ctx);
  check_known_keys(doc, {"format", "version", "grid", "values"}, ctx);
  grid = grid_at(doc, "grid", ctx);
  const std::vector<double> v = doubles_at(doc, "values", ctx);
  if (v.size() != grid.size())
    fail_config("%s: %zu values for %zu grid points", ctx, v.size(), grid.size());
  values = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void write_singular_values_csv(const SingularSystem& sys, std::ostream& os,
                               const CsvMeta& meta) {
  const std::string head = csv_meta_line(meta);
  if (!head.empty()) os << head << '\n';
  os << "j,lambda_j\n";
  for (Eigen::Index j = 0; j < sys.values.size(); ++j)
    os << (j + 1) << ',' << fmt_g17(sys.values(j)) << '\n';
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail_runtime("cannot open %s", path.c_str());
  std::ostringstream buf;
  buf << is.rdbuf();
  if (!is.good() && !is.eof()) fail_runtime("read from %s failed", path.c_str());
  return std::move(buf).str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail_runtime("cannot open %s for writing", path.c_str());
  os << content;
  if (!os.good()) fail_runtime("write to %s failed", path.c_str());
}

}  // namespace asem
