#pragma once
// On-disk formats.  Everything numeric round-trips exactly: JSON doubles
// use the shortest representation that parses back to the same bits, CSV
// doubles are printed with 17 significant digits, and the optional weight
// blob is raw little-endian IEEE 754.  Readers reject unknown JSON keys so
// typos fail loudly instead of being ignored.

#include <cstdint>
#include <iosfwd>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "asem/game.hpp"
#include "asem/nn.hpp"
#include "asem/oracle.hpp"

namespace asem {

// Leading comment line for CSV outputs, recording provenance.  Fields that
// are unset (empty hash, no seeds, negative ridge) are omitted; a
// default-constructed meta writes no line at all.
struct CsvMeta {
  std::string config_hash;          // hex digest of the generating config
  std::vector<std::uint64_t> seeds;
  int ridge_index = -1;             // sample files only
};

std::string csv_meta_line(const CsvMeta& meta);
// Parses a "# asem ..." line; returns false if the line is not one.
bool parse_csv_meta(const std::string& line, CsvMeta& out);

// Throws ConfigError naming the first key of `obj` not in `allowed`.
void check_known_keys(const nlohmann::json& obj,
                      std::initializer_list<const char*> allowed,
                      const char* context);

// Networks: {format, version, arch, config, seed, weights}.  The frozen
// initialization is not stored; loading re-derives it from the seed and
// swaps in the stored weights bit for bit.
nlohmann::json network_to_json(const NetworkState& net);
NetworkState network_from_json(const nlohmann::json& doc);
void save_network(const NetworkState& net, const std::string& path);
NetworkState load_network(const std::string& path);

// Raw weight vector, n_weights() doubles, little-endian.
void save_weights_blob(const NetworkState& net, const std::string& path);
void load_weights_blob(NetworkState& net, const std::string& path);

// Snapshot file name with a zero-padded iteration suffix, e.g.
// theta_000500.json.
std::string snapshot_filename(const std::string& stem, long long iter);

// Training traces.
void write_trace_csv(const TrainTrace& trace, std::ostream& os,
                     const CsvMeta& meta = {});
void write_trace_csv(const TrainTrace& trace, const std::string& path,
                     const CsvMeta& meta = {});
std::vector<TraceRow> read_trace_csv(std::istream& is, CsvMeta* meta = nullptr);

// Sample batches.  All samples in a file share one shape (point count,
// dimensions, ridge index); the ridge index travels in the meta line.
void write_samples_csv(std::span<const Sample> samples, std::ostream& os,
                       const CsvMeta& meta = {});
void write_samples_csv(std::span<const Sample> samples, const std::string& path,
                       const CsvMeta& meta = {});
std::vector<Sample> read_samples_csv(std::istream& is, CsvMeta* meta = nullptr);

// Discretized operators and tabulated grid functions.
nlohmann::json operator_to_json(const DiscretizedOperator& op);
DiscretizedOperator operator_from_json(const nlohmann::json& doc);
nlohmann::json grid_function_to_json(const std::vector<std::vector<double>>& grid,
                                     const Eigen::VectorXd& values);
void grid_function_from_json(const nlohmann::json& doc,
                             std::vector<std::vector<double>>& grid,
                             Eigen::VectorXd& values);

// Singular value decay, one row per component, 1-based index.
void write_singular_values_csv(const SingularSystem& sys, std::ostream& os,
                               const CsvMeta& meta = {});

// Whole-file helpers.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace asem
