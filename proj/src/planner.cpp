#include "microform/planner.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "microform/util.hpp"

namespace microform {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string_view action_name(Action a) {
  switch (a) {
    case Action::Create: return "create";
    case Action::Update: return "update";
    case Action::Replace: return "replace";
    case Action::Delete: return "delete";
    case Action::NoOp: return "noop";
    case Action::Read: return "read";
  }
  return "?";
}

Action action_from_name(std::string_view name) {
  for (auto a : {Action::Create, Action::Update, Action::Replace, Action::Delete, Action::NoOp, Action::Read})
    if (action_name(a) == name) return a;
  throw Error("unknown plan action '" + std::string(name) + "'");
}

PlanSummary Plan::summary() const {
  PlanSummary s;
  for (const auto& c : changes) {
    switch (c.action) {
      case Action::Create: ++s.add; break;
      case Action::Update: ++s.change; break;
      case Action::Replace: ++s.add, ++s.destroy; break;
      case Action::Delete: ++s.destroy; break;
      default: break;
    }
  }
  return s;
}

const PlannedChange* Plan::find(std::string_view address) const {
  for (const auto& c : changes)
    if (c.address == address) return &c;
  return nullptr;
}

StateSnapshot refresh(const StateSnapshot& state, ProviderSet& providers) {
  StateSnapshot out = state;
  out.resources.clear();
  for (const auto& [addr, r] : state.resources) {
    std::optional<AttributeMap> attrs;
    try {
      attrs = providers.get(r.provider)->read(r.type, r.id);
    } catch (const std::exception& e) {
      throw Error("refreshing " + addr + " failed: " + e.what());
    }
    if (!attrs) continue;
    ResourceState next = r;
    next.attributes = std::move(*attrs);
    if (auto it = next.attributes.find("id"); it != next.attributes.end() && it->second.is_string())
      next.id = it->second.as_string();
    out.resources.emplace(addr, std::move(next));
  }
  return out;
}

namespace {

const TypeSchema& schema_for(const Block& b, const std::map<std::string, ProviderSchema>& schemas) {
  const auto& type = b.labels.at(0);
  auto provider = provider_for_type(type);
  auto it = schemas.find(provider);
  if (it == schemas.end()) throw ConfigError(b.span, "no schema for provider '" + provider + "'");
  const TypeSchema* t = b.kind == "data" ? it->second.data(type) : it->second.resource(type);
  if (t == nullptr)
    throw ConfigError(b.span, "provider '" + provider + "' has no " +
                                  (b.kind == "data" ? std::string("data source") : std::string("resource type")) +
                                  " '" + type + "'");
  return *t;
}

std::string joined(const std::vector<std::string>& v, const char* sep = "; ") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

/// Evaluated configuration with defaults applied; every non-computed schema
/// attribute present (null when unset).
AttributeMap desired_attributes(const Block& b, const TypeSchema& schema, const EvalContext& ctx) {
  auto addr = block_address(b);
  if (!b.nested.empty())
    throw ConfigError(b.nested.front().span, addr + ": nested block '" + b.nested.front().kind + "' is not supported");
  AttributeMap config;
  for (const auto& a : b.body) config[a.name] = evaluate(a.expr, ctx);
  if (auto problems = check_config_attributes(schema, config); !problems.empty())
    throw ConfigError(b.span, addr + ": " + joined(problems));
  AttributeMap desired;
  for (const auto& spec : schema) {
    if (spec.mode == AttrMode::Computed) continue;
    auto it = config.find(spec.name);
    if (it != config.end() && !it->second.is_null())
      desired[spec.name] = it->second;
    else
      desired[spec.name] = spec.default_value.value_or(Value());
  }
  return desired;
}

DependencyGraph state_graph(const StateSnapshot& state) {
  DependencyGraph g;
  for (const auto& [addr, _] : state.resources) g.add_node(addr);
  for (const auto& [addr, r] : state.resources)
    for (const auto& d : r.dependencies)
      if (g.contains(d) && d != addr) g.add_edge(addr, d);
  return g;
}

std::vector<std::string> reversed_order(const DependencyGraph& g) {
  if (detect_cycles(g)) {
    // Corrupt dependency records should not block destruction.
    return {g.nodes().begin(), g.nodes().end()};
  }
  return topo_order(reverse(g));
}

}  // namespace

Plan diff(const ConfigDocument& doc, const StateSnapshot& state, const std::map<std::string, ProviderSchema>& schemas,
          const DataReader& read_data) {
  Plan plan;
  plan.created_at = utc_timestamp();
  plan.base_serial = state.serial;
  plan.base_lineage = state.lineage;

  auto graph = build_graph(doc);
  if (auto cycle = detect_cycles(graph)) throw CycleError(*cycle);
  std::map<std::string, const Block*> blocks;
  for (const Block* b : doc.resources()) blocks[block_address(*b)] = b;

  EvalContext ctx;
  ctx.variables = doc.variables;
  std::map<std::string, Action> actions;

  for (const auto& addr : topo_order(graph)) {
    const Block& b = *blocks.at(addr);
    const auto& type = b.labels.at(0);
    const TypeSchema& schema = schema_for(b, schemas);
    AttributeMap desired = desired_attributes(b, schema, ctx);
    PlannedChange change;
    change.address = addr;

    if (b.kind == "data") {
      bool deps_settled = true;
      for (const auto& dep : graph.dependencies(addr)) {
        auto a = actions.at(dep);
        if (a != Action::NoOp && a != Action::Read) deps_settled = false;
        if (a == Action::Read && ctx.objects.at(dep).empty()) deps_settled = false;
      }
      bool known = deps_settled && !Value(desired).contains_unknown();
      AttributeMap after = desired;
      if (known && read_data) {
        after = normalize_attributes(schema, read_data(addr, type, desired));
      } else {
        for (const auto& spec : schema)
          if (spec.mode == AttrMode::Computed) after[spec.name] = Value(Unknown{});
      }
      change.action = Action::Read;
      change.after = after;
      ctx.objects[addr] = after;
      actions[addr] = Action::Read;
      plan.changes.push_back(std::move(change));
      continue;
    }

    auto prior = state.resources.find(addr);
    if (prior == state.resources.end()) {
      AttributeMap after = desired;
      for (const auto& spec : schema)
        if (spec.mode == AttrMode::Computed) after[spec.name] = Value(Unknown{});
      change.action = Action::Create;
      for (const auto& [k, _] : desired) change.changed_paths.push_back(k);
      change.after = std::move(after);
    } else {
      const AttributeMap& before = prior->second.attributes;
      bool force = false;
      for (const auto& spec : schema) {
        if (spec.mode == AttrMode::Computed) continue;
        auto bit = before.find(spec.name);
        const Value& old = bit == before.end() ? Value() : bit->second;
        if (!known_equal(desired.at(spec.name), old)) {
          change.changed_paths.push_back(spec.name);
          force = force || spec.force_new;
        }
      }
      change.before = before;
      if (change.changed_paths.empty()) {
        change.action = Action::NoOp;
        change.after = before;
      } else {
        AttributeMap after = desired;
        for (const auto& spec : schema) {
          if (spec.mode != AttrMode::Computed) continue;
          auto bit = before.find(spec.name);
          after[spec.name] = (force || bit == before.end()) ? Value(Unknown{}) : bit->second;
        }
        change.action = force ? Action::Replace : Action::Update;
        change.after = std::move(after);
      }
    }
    ctx.objects[addr] = *change.after;
    actions[addr] = change.action;
    plan.changes.push_back(std::move(change));
  }

  StateSnapshot orphans;
  for (const auto& [addr, r] : state.resources)
    if (!blocks.contains(addr)) orphans.resources.emplace(addr, r);
  for (const auto& addr : reversed_order(state_graph(orphans))) {
    PlannedChange change;
    change.address = addr;
    change.action = Action::Delete;
    change.before = orphans.resources.at(addr).attributes;
    plan.changes.push_back(std::move(change));
  }
  return plan;
}

std::vector<std::string> destroy_order(const StateSnapshot& state) { return reversed_order(state_graph(state)); }

Plan plan_destroy(const StateSnapshot& state) {
  Plan plan;
  plan.created_at = utc_timestamp();
  plan.base_serial = state.serial;
  plan.base_lineage = state.lineage;
  plan.is_destroy = true;
  for (const auto& addr : destroy_order(state)) {
    PlannedChange c;
    c.address = addr;
    c.action = Action::Delete;
    c.before = state.resources.at(addr).attributes;
    plan.changes.push_back(std::move(c));
  }
  return plan;
}

// ---------------------------------------------------------------------------

namespace {

ojson attrs_json(const std::optional<AttributeMap>& m, std::vector<UnknownAt>* unknowns) {
  if (!m) return nullptr;
  return ojson::parse(map_to_json(*m, unknowns).dump());
}

}  // namespace

std::string serialize_plan(const Plan& plan, bool include_timestamp) {
  ojson j;
  j["format_version"] = 1;
  if (include_timestamp) j["created_at"] = plan.created_at;
  j["base_serial"] = plan.base_serial;
  j["base_lineage"] = plan.base_lineage;
  j["is_destroy"] = plan.is_destroy;
  j["changes"] = ojson::array();
  for (const auto& c : plan.changes) {
    ojson e;
    e["address"] = c.address;
    e["action"] = action_name(c.action);
    if (c.before && Value(*c.before).contains_unknown()) throw Error(c.address + ": prior state contains unknown values");
    e["before"] = attrs_json(c.before, nullptr);
    std::vector<UnknownAt> unknowns;
    e["after"] = attrs_json(c.after, &unknowns);
    e["changed_paths"] = c.changed_paths;
    e["unknown_paths"] = ojson::array();
    for (const auto& u : unknowns)
      e["unknown_paths"].push_back(ojson{{"path", ojson::parse(path_to_json(u.path).dump())}, {"origin", u.origin}});
    j["changes"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

Plan parse_plan(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("malformed plan file: ") + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != 1)
      throw Error("unsupported plan format_version " + j.at("format_version").dump());
    Plan p;
    p.created_at = j.value("created_at", "");
    p.base_serial = j.at("base_serial").get<std::uint64_t>();
    p.base_lineage = j.at("base_lineage").get<std::string>();
    p.is_destroy = j.at("is_destroy").get<bool>();
    for (const auto& e : j.at("changes")) {
      PlannedChange c;
      c.address = e.at("address").get<std::string>();
      c.action = action_from_name(e.at("action").get<std::string>());
      if (!e.at("before").is_null()) c.before = map_from_json(e.at("before"));
      if (!e.at("after").is_null()) {
        auto after = map_from_json(e.at("after"));
        std::vector<UnknownAt> unknowns;
        for (const auto& u : e.at("unknown_paths"))
          unknowns.push_back(UnknownAt{path_from_json(u.at("path")), u.at("origin").get<std::string>()});
        apply_unknowns(after, unknowns);
        c.after = std::move(after);
      }
      c.changed_paths = e.at("changed_paths").get<std::vector<std::string>>();
      p.changes.push_back(std::move(c));
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed plan file: ") + e.what());
  }
}

void save_plan(const Plan& plan, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write plan file " + path.string());
  out << serialize_plan(plan);
  if (!out.flush()) throw Error("cannot write plan file " + path.string());
}

Plan load_plan(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read plan file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_plan(ss.str());
}

std::string render_plan(const Plan& plan) {
  std::ostringstream out;
  for (const auto& c : plan.changes) {
    const char* head = nullptr;
    switch (c.action) {
      case Action::Create: head = "+ create "; break;
      case Action::Update: head = "~ update "; break;
      case Action::Replace: head = "-/+ replace "; break;
      case Action::Delete: head = "- delete "; break;
      default: continue;
    }
    out << head << c.address << "\n";
    if (c.action == Action::Create) {
      for (const auto& [k, v] : *c.after)
        if (!v.is_null()) out << "    " << k << " = " << render_value(v) << "\n";
    } else if (c.action == Action::Update || c.action == Action::Replace) {
      for (const auto& k : c.changed_paths) {
        auto bit = c.before->find(k);
        out << "    " << k << " = " << (bit == c.before->end() ? "null" : render_value(bit->second)) << " -> "
            << render_value(c.after->at(k)) << "\n";
      }
      for (const auto& [k, v] : *c.after)
        if (v.is_unknown() && std::find(c.changed_paths.begin(), c.changed_paths.end(), k) == c.changed_paths.end())
          out << "    " << k << " = " << render_value(v) << "\n";
    }
  }
  auto s = plan.summary();
  if (!s.any()) out << "No changes. Infrastructure matches the configuration.\n";
  out << "Plan: " << s.add << " to add, " << s.change << " to change, " << s.destroy << " to destroy.\n";
  return out.str();
}

}  // namespace microform
