#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "polykin/kinetic_types.hpp"

namespace polykin {

/// Exit codes of the harness.
enum ExitCode {
  kOk = 0,
  kValidationError = 2,
  kRuntimeError = 3,
  kCheckFailed = 4,
};

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out_dir;
  bool check = false;
};

/// FNV-1a hash of a string, hex-encoded; used to stamp outputs with their
/// configuration.
std::string fnv1a_hex(const std::string& text);

/// Formats a double with round-trip precision.
std::string fmt_g17(double x);

/// Loads the config, validates it strictly (unknown keys rejected), runs the
/// named experiment and writes its artifacts. Returns an ExitCode.
int run(const std::filesystem::path& config_path, const CliOverrides& overrides);

/// Same entry point from an already-parsed config.
int run_config_json(const nlohmann::json& config, const CliOverrides& overrides);

/// Converts an experiment output CSV into tidy long format
/// (series, x, y, y_err), grouped by series and sorted by x.
int emit_plot_data(const std::filesystem::path& input,
                   const std::filesystem::path& output);

}  // namespace polykin
