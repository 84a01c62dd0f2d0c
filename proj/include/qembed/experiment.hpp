#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "qembed/queues.hpp"

namespace qembed {

enum ExitCode : int {
  kExitOk = 0,
  kExitCompareFailed = 1,
  kExitValidation = 2,
  kExitRuntime = 3,
  kExitIo = 4,
  kExitParse = 5,
};

/// A config value that is missing, mistyped or out of range. The message
/// starts with the dotted path of the offending field.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exit code for the exception currently being handled.
int exit_code_for_current_exception();

struct RunOptions {
  std::optional<std::uint64_t> seed;
  /// Output directory; created if missing.
  std::filesystem::path out = "results";
  int jobs = 1;
};

struct RunReport {
  std::string kind;
  std::vector<std::filesystem::path> artifacts;
  /// The config with every default filled in (and --seed applied).
  nlohmann::json resolved;
};

nlohmann::json load_config(const std::filesystem::path& path);

/// Validates and runs one experiment, writing artifacts and manifest.json
/// into options.out.
RunReport run_config(const nlohmann::json& config, const RunOptions& options);
RunReport run_config_file(const std::filesystem::path& path, const RunOptions& options);

/// Fully resolved config without running anything.
nlohmann::json resolve_config(const nlohmann::json& config, std::optional<std::uint64_t> seed = std::nullopt);

struct ComparisonRow {
  double y = 0.0;
  double mean = 0.0;
  double std = 0.0;
  int replications = 0;
  double exact = 0.0;
  double z = 0.0;
};

/// Simulated means against exact values on a shared grid. Up to
/// `allowance` points may exceed 3 standard errors (2 per 30 points).
struct OracleComparison {
  std::vector<ComparisonRow> rows;
  int outside = 0;
  int allowance = 0;
  bool pass = false;
};

OracleComparison compare_oracle(const std::vector<SweepRow>& simulated, const std::vector<SweepRow>& exact);
OracleComparison compare_oracle_files(const std::filesystem::path& simulated, const std::filesystem::path& exact);
void write_comparison(std::ostream& out, const OracleComparison& cmp);

struct ProtocolInfo {
  std::string name;
  std::string kind;
  std::string description;
  std::filesystem::path path;
};

std::filesystem::path default_protocol_dir();
std::vector<ProtocolInfo> list_protocols(const std::filesystem::path& dir = default_protocol_dir());

std::vector<SweepRow> read_sweep_csv_file(const std::filesystem::path& path);

}  // namespace qembed
