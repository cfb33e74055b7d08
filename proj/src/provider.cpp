#include "microform/provider.hpp"

#include <algorithm>

namespace microform {

std::string_view value_kind_name(ValueKind kind) {
  switch (kind) {
    case ValueKind::String: return "string";
    case ValueKind::Integer: return "integer";
    case ValueKind::Bool: return "bool";
    case ValueKind::StringList: return "list of string";
    case ValueKind::StringMap: return "map of string";
  }
  return "?";
}

const AttributeSpec* find_attribute(const TypeSchema& schema, std::string_view name) {
  for (const auto& a : schema)
    if (a.name == name) return &a;
  return nullptr;
}

bool value_matches(const Value& v, ValueKind kind) {
  if (v.is_null() || v.is_unknown()) return true;
  switch (kind) {
    case ValueKind::String: return v.is_string();
    case ValueKind::Integer: return v.is_int();
    case ValueKind::Bool: return v.is_bool();
    case ValueKind::StringList:
      return v.is_list() && std::all_of(v.as_list().begin(), v.as_list().end(),
                                        [](const Value& e) { return e.is_string() || e.is_unknown(); });
    case ValueKind::StringMap:
      return v.is_map() && std::all_of(v.as_map().begin(), v.as_map().end(), [](const auto& kv) {
               return kv.second.is_string() || kv.second.is_unknown();
             });
  }
  return false;
}

std::vector<std::string> check_config_attributes(const TypeSchema& schema, const AttributeMap& attrs) {
  std::vector<std::string> problems;
  for (const auto& [name, value] : attrs) {
    const AttributeSpec* spec = find_attribute(schema, name);
    if (spec == nullptr) {
      problems.push_back(name + ": unsupported attribute");
    } else if (spec->mode == AttrMode::Computed) {
      problems.push_back(name + ": computed attribute cannot be set");
    } else if (!value_matches(value, spec->kind)) {
      problems.push_back(name + ": expected " + std::string(value_kind_name(spec->kind)) + ", got " +
                         value.kind_name());
    }
  }
  for (const auto& spec : schema) {
    if (spec.mode != AttrMode::Required) continue;
    auto it = attrs.find(spec.name);
    if (it == attrs.end() || it->second.is_null()) problems.push_back(spec.name + ": required attribute missing");
  }
  return problems;
}

std::vector<std::string> check_returned_attributes(const TypeSchema& schema, const AttributeMap& attrs) {
  std::vector<std::string> problems;
  for (const auto& [name, value] : attrs) {
    const AttributeSpec* spec = find_attribute(schema, name);
    if (spec == nullptr)
      problems.push_back(name + ": not in schema");
    else if (value.contains_unknown())
      problems.push_back(name + ": unknown value returned");
    else if (!value_matches(value, spec->kind))
      problems.push_back(name + ": expected " + std::string(value_kind_name(spec->kind)) + ", got " +
                         value.kind_name());
  }
  return problems;
}

AttributeMap normalize_attributes(const TypeSchema& schema, AttributeMap attrs) {
  for (const auto& spec : schema) attrs.try_emplace(spec.name, Value());
  return attrs;
}

const TypeSchema* ProviderSchema::resource(std::string_view type) const {
  auto it = resource_types.find(std::string(type));
  return it == resource_types.end() ? nullptr : &it->second;
}

const TypeSchema* ProviderSchema::data(std::string_view type) const {
  auto it = data_types.find(std::string(type));
  return it == data_types.end() ? nullptr : &it->second;
}

std::vector<std::string> Provider::validate(const std::string& type, const AttributeMap& attrs) const {
  auto s = schema();
  const TypeSchema* t = s.resource(type);
  if (t == nullptr) t = s.data(type);
  if (t == nullptr) return {"unsupported type '" + type + "'"};
  return check_config_attributes(*t, attrs);
}

AttributeMap Provider::read_data(const std::string& type, const AttributeMap&) {
  throw ProviderError(ProviderError::Kind::Validation, "provider has no data source '" + type + "'");
}

// ---------------------------------------------------------------------------

namespace {

std::string joined(const std::vector<std::string>& problems) {
  std::string out;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    if (i) out += "; ";
    out += problems[i];
  }
  return out;
}

}  // namespace

SchemaCheckingProvider::SchemaCheckingProvider(ProviderHandle inner)
    : inner_(std::move(inner)), schema_(inner_->schema()) {}

const TypeSchema& SchemaCheckingProvider::resource_schema(const std::string& type) const {
  const TypeSchema* t = schema_.resource(type);
  if (t == nullptr) throw ProviderError(ProviderError::Kind::Validation, "unsupported resource type '" + type + "'");
  return *t;
}

std::vector<std::string> SchemaCheckingProvider::validate(const std::string& type, const AttributeMap& attrs) const {
  return inner_->validate(type, attrs);
}

CreateResult SchemaCheckingProvider::create(const std::string& type, const AttributeMap& attrs) {
  const auto& schema = resource_schema(type);
  auto result = inner_->create(type, attrs);
  if (auto p = check_returned_attributes(schema, result.attributes); !p.empty())
    throw ProviderError(ProviderError::Kind::Internal, type + " create returned invalid attributes: " + joined(p));
  return result;
}

std::optional<AttributeMap> SchemaCheckingProvider::read(const std::string& type, const std::string& id) {
  const auto& schema = resource_schema(type);
  auto result = inner_->read(type, id);
  if (result) {
    if (auto p = check_returned_attributes(schema, *result); !p.empty())
      throw ProviderError(ProviderError::Kind::Internal, type + " read returned invalid attributes: " + joined(p));
  }
  return result;
}

AttributeMap SchemaCheckingProvider::update(const std::string& type, const std::string& id, const AttributeMap& attrs) {
  const auto& schema = resource_schema(type);
  auto result = inner_->update(type, id, attrs);
  if (auto p = check_returned_attributes(schema, result); !p.empty())
    throw ProviderError(ProviderError::Kind::Internal, type + " update returned invalid attributes: " + joined(p));
  return result;
}

AttributeMap SchemaCheckingProvider::read_data(const std::string& type, const AttributeMap& attrs) {
  const TypeSchema* t = schema_.data(type);
  if (t == nullptr) throw ProviderError(ProviderError::Kind::Validation, "unsupported data source '" + type + "'");
  auto result = inner_->read_data(type, attrs);
  if (auto p = check_returned_attributes(*t, result); !p.empty())
    throw ProviderError(ProviderError::Kind::Internal, type + " read returned invalid attributes: " + joined(p));
  return result;
}

// ---------------------------------------------------------------------------

void ProviderRegistry::register_provider(const std::string& name, ProviderFactory factory) {
  if (!factories_.emplace(name, std::move(factory)).second)
    throw Error("provider '" + name + "' is already registered");
}

bool ProviderRegistry::has(const std::string& name) const { return factories_.contains(name); }

std::vector<std::string> ProviderRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : factories_) out.push_back(n);
  return out;
}

std::unique_ptr<Provider> ProviderRegistry::instantiate(const std::string& name) const {
  auto it = factories_.find(name);
  if (it == factories_.end()) throw Error("unknown provider '" + name + "'");
  return it->second();
}

ProviderSchema ProviderRegistry::schema(const std::string& name) const { return instantiate(name)->schema(); }

ProviderHandle ProviderRegistry::resolve(const std::string& name, const ConfigDocument& doc) const {
  const Block* block = doc.provider(name);
  if (block == nullptr) throw Error("no provider \"" + name + "\" block in configuration");
  std::shared_ptr<Provider> handle = instantiate(name);
  EvalContext ctx;
  ctx.variables = doc.variables;
  AttributeMap config;
  for (const auto& a : block->body) {
    try {
      config[a.name] = evaluate(a.expr, ctx);
    } catch (const ConfigError& e) {
      throw ConfigError(e.span(), "provider \"" + name + "\": " + e.detail());
    }
  }
  auto s = handle->schema();
  if (auto p = check_config_attributes(s.config_attrs, config); !p.empty())
    throw ConfigError(block->span, "provider \"" + name + "\": " + joined(p));
  for (const auto& spec : s.config_attrs)
    if (spec.default_value && (!config.contains(spec.name) || config[spec.name].is_null()))
      config[spec.name] = *spec.default_value;
  try {
    handle->configure(config);
  } catch (const Error& e) {
    throw Error("provider \"" + name + "\" configuration failed: " + e.what());
  }
  return handle;
}

ProviderHandle ProviderSet::get(const std::string& name) {
  std::lock_guard lock(mu_);
  auto it = handles_.find(name);
  if (it != handles_.end()) return it->second;
  auto h = registry_.resolve(name, doc_);
  handles_.emplace(name, h);
  return h;
}

void ProviderSet::resolve_all() {
  for (const auto& n : doc_.provider_names()) get(n);
}

std::map<std::string, ProviderSchema> ProviderSet::schemas() {
  std::map<std::string, ProviderSchema> out;
  for (const auto& n : doc_.provider_names()) {
    if (!registry_.has(n)) throw Error("unknown provider '" + n + "'");
    out.emplace(n, registry_.schema(n));
  }
  return out;
}

ProviderRegistry builtin_registry(const std::filesystem::path& working_dir) {
  ProviderRegistry r;
  r.register_provider("localfs", [working_dir] { return make_localfs_provider(working_dir); });
  r.register_provider("memcloud", [] { return make_memcloud_provider(); });
  return r;
}

}  // namespace microform
