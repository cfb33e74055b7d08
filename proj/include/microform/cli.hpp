#pragma once

#include <atomic>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "microform/provider.hpp"
#include "microform/value.hpp"

namespace microform::cli {

struct CliConfig {
  std::filesystem::path working_dir = ".";
  std::optional<std::filesystem::path> state_file;
  std::optional<std::string> backend_url;
  std::map<std::string, Value> var_overrides;
  int parallelism = 10;
  bool refresh = true;
  bool auto_approve = false;
  std::optional<std::filesystem::path> out_file;
  bool detailed_exitcode = false;
  bool destroy_graph = false;
  std::vector<std::string> command;  // command words and positional arguments
};

/// Parses `-flag=value` style arguments; throws Error on bad usage.
CliConfig parse_args(const std::vector<std::string>& args);

struct RunOptions {
  /// Providers to use; builtin_registry(working_dir) when null.
  const ProviderRegistry* registry = nullptr;
  /// Set asynchronously (e.g. from a signal handler) to stop an apply.
  const std::atomic<bool>* interrupt = nullptr;
};

/// Runs one command. Returns the process exit code.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err,
        const RunOptions& opts = {});

}  // namespace microform::cli
