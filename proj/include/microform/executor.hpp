#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "microform/config.hpp"
#include "microform/planner.hpp"
#include "microform/provider.hpp"
#include "microform/state.hpp"

namespace microform {

class StalePlanError : public Error {
 public:
  using Error::Error;
};

struct ApplyOptions {
  int parallelism = 10;
  /// Progress lines (`<address>: <action> done (<id>)`); may be null.
  std::ostream* out = nullptr;
  /// Once set, no further changes are started.
  const std::atomic<bool>* interrupt = nullptr;
};

struct ApplyReport {
  std::vector<std::string> succeeded;
  std::map<std::string, std::string> failed;  // address → error
  std::vector<std::string> skipped;
  double duration_seconds = 0;
  std::uint64_t final_serial = 0;
  /// Set when the final state write failed; `unpersisted` then lists the
  /// addresses whose effects are not recorded.
  std::optional<std::string> write_error;
  std::vector<std::string> unpersisted;
  int added = 0;
  int changed = 0;
  int destroyed = 0;
  bool interrupted = false;

  bool ok() const { return failed.empty() && skipped.empty() && !write_error; }
};

/// Executes `plan` against the backend's current state. The caller holds the
/// state lock through `backend`. Throws StalePlanError when the stored
/// serial or lineage differ from the plan's base.
ApplyReport apply(const Plan& plan, const ConfigDocument& doc, StateBackend& backend, ProviderSet& providers,
                  const ApplyOptions& opts = {});

/// Replaces every Unknown in `change.after` whose origin is an expression by
/// its value under `objects`. Unknowns without an origin (computed
/// attributes) are left in place.
PlannedChange resolve_unknowns(const PlannedChange& change, const std::map<std::string, AttributeMap>& objects,
                               const std::map<std::string, Value>& variables = {});

struct ChangeResult {
  /// New state record; empty for Delete and Read.
  std::optional<ResourceState> resource;
  /// Data source result for Read.
  AttributeMap data;
};

/// Runs one change through `provider`. Replace deletes then creates.
ChangeResult execute_change(const PlannedChange& change, Provider& provider);

}  // namespace microform
