#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "stsae/evaluation.hpp"
#include "stsae/trainer.hpp"

namespace stsae::cli {

/// Bad flags or config; maps to exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Architecture as the user specifies it, before D is known.
struct ArchSpec {
  std::uint32_t expansion = 8;
  std::uint32_t k = 64;
  ActivationKind activation = ActivationKind::topk;
  double temperature = 1.0;
  // Fraction of the dictionary in the Matryoshka high group.
  std::optional<double> matryoshka_split;

  SaeConfig resolve(std::uint32_t input_dim) const;
};

struct Paths {
  std::string features;
  std::string checkpoint;
  std::string log;
  std::string out;
  std::string sim;
  std::string text;
};

/// The JSON run configuration: {"train", "sae", "metrics", "paths"}.
struct RunConfig {
  TrainConfig train;
  ArchSpec sae;
  EvalOptions metrics;
  Paths paths;

  nlohmann::json to_json() const;
  static RunConfig from_json_strict(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
};

/// 64-bit FNV-1a of a string, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

struct SweepRow {
  std::string variant;
  double lambda = 0.0;
  double tau = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string metrics_csv;
};

/// Orders rows by (variant, lambda, tau, seed).
void sort_sweep_rows(std::vector<SweepRow>& rows);

/// Runs the `stsae` command line. Returns the process exit code: 0 success,
/// 1 runtime failure, 2 usage or validation error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stsae::cli
