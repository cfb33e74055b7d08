#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "microform/config.hpp"
#include "microform/graph.hpp"
#include "microform/provider.hpp"
#include "microform/state.hpp"

namespace microform {

enum class Action { Create, Update, Replace, Delete, NoOp, Read };

std::string_view action_name(Action a);
Action action_from_name(std::string_view name);

struct PlannedChange {
  std::string address;
  Action action = Action::NoOp;
  std::optional<AttributeMap> before;
  std::optional<AttributeMap> after;
  std::vector<std::string> changed_paths;

  bool operator==(const PlannedChange&) const = default;
};

struct PlanSummary {
  int add = 0;
  int change = 0;
  int destroy = 0;
  bool any() const { return add + change + destroy > 0; }
};

struct Plan {
  std::string created_at;
  std::uint64_t base_serial = 0;
  std::string base_lineage;
  std::vector<PlannedChange> changes;
  bool is_destroy = false;

  PlanSummary summary() const;
  const PlannedChange* find(std::string_view address) const;
  bool operator==(const Plan&) const = default;
};

/// Re-reads every state resource from its provider. Resources the provider
/// reports absent are dropped; the serial is left alone.
StateSnapshot refresh(const StateSnapshot& state, ProviderSet& providers);

/// Reads a data source during planning; called only when its configuration
/// is fully known.
using DataReader = std::function<AttributeMap(const std::string& address, const std::string& type,
                                              const AttributeMap& config)>;

/// Computes the plan turning `state` into `doc`. Pure unless `read_data` is given.
Plan diff(const ConfigDocument& doc, const StateSnapshot& state,
          const std::map<std::string, ProviderSchema>& schemas, const DataReader& read_data = {});

/// One Delete per state resource, dependents first.
Plan plan_destroy(const StateSnapshot& state);

/// Addresses of `state` in destroy order (dependents before dependencies).
std::vector<std::string> destroy_order(const StateSnapshot& state);

std::string serialize_plan(const Plan& plan, bool include_timestamp = true);
Plan parse_plan(const std::string& text);
void save_plan(const Plan& plan, const std::filesystem::path& path);
Plan load_plan(const std::filesystem::path& path);

/// Human-readable plan: one `+ create` / `~ update` / `-/+ replace` /
/// `- delete` line per change with indented attribute detail, then the
/// `Plan: ...` summary line.
std::string render_plan(const Plan& plan);

}  // namespace microform
