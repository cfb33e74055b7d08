#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "microform/config.hpp"
#include "microform/value.hpp"

namespace microform {

enum class ValueKind { String, Integer, Bool, StringList, StringMap };
enum class AttrMode { Required, Optional, Computed };

std::string_view value_kind_name(ValueKind kind);

struct AttributeSpec {
  std::string name;
  ValueKind kind = ValueKind::String;
  AttrMode mode = AttrMode::Optional;
  bool force_new = false;
  std::optional<Value> default_value;
};

using TypeSchema = std::vector<AttributeSpec>;

const AttributeSpec* find_attribute(const TypeSchema& schema, std::string_view name);

/// True when `v` has the shape `kind` describes. Null and Unknown always pass.
bool value_matches(const Value& v, ValueKind kind);

/// Checks configuration-supplied attributes: no unknown or computed names,
/// required ones present, kinds match.
std::vector<std::string> check_config_attributes(const TypeSchema& schema, const AttributeMap& attrs);

/// Checks attributes a provider returned: every name is in the schema and
/// kinds match; no Unknown markers.
std::vector<std::string> check_returned_attributes(const TypeSchema& schema, const AttributeMap& attrs);

/// Adds a null entry for every schema attribute missing from `attrs`.
AttributeMap normalize_attributes(const TypeSchema& schema, AttributeMap attrs);

struct ProviderSchema {
  std::string provider_name;
  TypeSchema config_attrs;
  std::map<std::string, TypeSchema> resource_types;
  std::map<std::string, TypeSchema> data_types;

  const TypeSchema* resource(std::string_view type) const;
  const TypeSchema* data(std::string_view type) const;
};

class ProviderError : public Error {
 public:
  enum class Kind { Validation, NotFound, Conflict, Unavailable, Internal };
  ProviderError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Create failed after the provider had already allocated the object.
class PartialCreateError : public ProviderError {
 public:
  PartialCreateError(std::string id, AttributeMap attrs, const std::string& message)
      : ProviderError(Kind::Internal, message), id_(std::move(id)), attrs_(std::move(attrs)) {}
  const std::string& id() const { return id_; }
  const AttributeMap& attributes() const { return attrs_; }

 private:
  std::string id_;
  AttributeMap attrs_;
};

struct CreateResult {
  std::string id;
  AttributeMap attributes;
};

/// CRUD contract every provider implements. Calls on distinct ids may run
/// concurrently.
class Provider {
 public:
  virtual ~Provider() = default;

  virtual ProviderSchema schema() const = 0;
  virtual void configure(const AttributeMap& config) = 0;
  /// Provider-specific checks beyond the schema. Empty means valid.
  virtual std::vector<std::string> validate(const std::string& type, const AttributeMap& attrs) const;

  virtual CreateResult create(const std::string& type, const AttributeMap& attrs) = 0;
  virtual std::optional<AttributeMap> read(const std::string& type, const std::string& id) = 0;
  virtual AttributeMap update(const std::string& type, const std::string& id, const AttributeMap& attrs) = 0;
  virtual void remove(const std::string& type, const std::string& id) = 0;
  /// Reads a data source.
  virtual AttributeMap read_data(const std::string& type, const AttributeMap& attrs);
};

using ProviderHandle = std::shared_ptr<Provider>;
using ProviderFactory = std::function<std::unique_ptr<Provider>()>;

/// Wraps a provider and throws when it returns attributes outside its schema.
class SchemaCheckingProvider : public Provider {
 public:
  explicit SchemaCheckingProvider(ProviderHandle inner);

  ProviderSchema schema() const override { return schema_; }
  void configure(const AttributeMap& config) override { inner_->configure(config); }
  std::vector<std::string> validate(const std::string& type, const AttributeMap& attrs) const override;
  CreateResult create(const std::string& type, const AttributeMap& attrs) override;
  std::optional<AttributeMap> read(const std::string& type, const std::string& id) override;
  AttributeMap update(const std::string& type, const std::string& id, const AttributeMap& attrs) override;
  void remove(const std::string& type, const std::string& id) override { inner_->remove(type, id); }
  AttributeMap read_data(const std::string& type, const AttributeMap& attrs) override;

 private:
  const TypeSchema& resource_schema(const std::string& type) const;
  ProviderHandle inner_;
  ProviderSchema schema_;
};

class ProviderRegistry {
 public:
  void register_provider(const std::string& name, ProviderFactory factory);
  bool has(const std::string& name) const;
  std::vector<std::string> names() const;

  /// Schema of an unconfigured instance.
  ProviderSchema schema(const std::string& name) const;

  /// New handle configured from the document's provider block.
  ProviderHandle resolve(const std::string& name, const ConfigDocument& doc) const;

 private:
  std::unique_ptr<Provider> instantiate(const std::string& name) const;
  std::map<std::string, ProviderFactory> factories_;
};

/// Configured handles for one run, resolved lazily and cached by name.
class ProviderSet {
 public:
  ProviderSet(const ProviderRegistry& registry, const ConfigDocument& doc) : registry_(registry), doc_(doc) {}

  ProviderHandle get(const std::string& name);
  /// Resolves every provider the document declares.
  void resolve_all();
  std::map<std::string, ProviderSchema> schemas();

 private:
  const ProviderRegistry& registry_;
  const ConfigDocument& doc_;
  std::mutex mu_;
  std::map<std::string, ProviderHandle> handles_;
};

/// Filesystem provider. `base_dir` anchors a relative `root`.
std::unique_ptr<Provider> make_localfs_provider(std::filesystem::path base_dir);

/// HTTP client for the mock cloud service.
std::unique_ptr<Provider> make_memcloud_provider();

/// Registry holding localfs and memcloud.
ProviderRegistry builtin_registry(const std::filesystem::path& working_dir);

}  // namespace microform
