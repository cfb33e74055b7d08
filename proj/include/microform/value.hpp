#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace microform {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Placeholder for a value that only becomes known during apply.
///
/// `origin` is the residual expression (canonical native syntax) that will
/// produce the value once the referenced resources exist. An empty origin
/// marks a computed attribute the provider fills in itself.
struct Unknown {
  std::string origin;
  bool operator==(const Unknown&) const = default;
};

/// Dynamically typed attribute value.
class Value {
 public:
  using List = std::vector<Value>;
  using Map = std::map<std::string, Value>;
  using Storage =
      std::variant<std::monostate, bool, std::int64_t, double, std::string, List, Map, Unknown>;

  Value() = default;
  Value(std::nullptr_t) {}
  Value(bool b) : data_(b) {}
  Value(int i) : data_(static_cast<std::int64_t>(i)) {}
  Value(std::int64_t i) : data_(i) {}
  Value(double d) : data_(d) {}
  Value(const char* s) : data_(std::string(s)) {}
  Value(std::string s) : data_(std::move(s)) {}
  Value(List l) : data_(std::move(l)) {}
  Value(Map m) : data_(std::move(m)) {}
  Value(Unknown u) : data_(std::move(u)) {}

  bool is_null() const { return std::holds_alternative<std::monostate>(data_); }
  bool is_bool() const { return std::holds_alternative<bool>(data_); }
  bool is_int() const { return std::holds_alternative<std::int64_t>(data_); }
  bool is_float() const { return std::holds_alternative<double>(data_); }
  bool is_string() const { return std::holds_alternative<std::string>(data_); }
  bool is_list() const { return std::holds_alternative<List>(data_); }
  bool is_map() const { return std::holds_alternative<Map>(data_); }
  bool is_unknown() const { return std::holds_alternative<Unknown>(data_); }

  bool as_bool() const { return std::get<bool>(data_); }
  std::int64_t as_int() const { return std::get<std::int64_t>(data_); }
  double as_float() const { return std::get<double>(data_); }
  const std::string& as_string() const { return std::get<std::string>(data_); }
  const List& as_list() const { return std::get<List>(data_); }
  List& as_list() { return std::get<List>(data_); }
  const Map& as_map() const { return std::get<Map>(data_); }
  Map& as_map() { return std::get<Map>(data_); }
  const Unknown& as_unknown() const { return std::get<Unknown>(data_); }

  const Storage& storage() const { return data_; }

  /// True when this value or anything nested in it is Unknown.
  bool contains_unknown() const;

  /// Short kind name used in diagnostics ("string", "integer", ...).
  std::string kind_name() const;

  bool operator==(const Value&) const = default;

 private:
  Storage data_;
};

using AttributeMap = Value::Map;

/// Deep equality where Unknown never equals anything, itself included.
bool known_equal(const Value& a, const Value& b);

/// Shortest round-tripping decimal form; always contains '.' or an exponent.
std::string format_float(double d);

/// HCL-flavoured rendering used by plan output and diagnostics.
std::string render_value(const Value& v);

/// Sentinel string written in place of Unknown values in serialized plans.
inline constexpr const char* kUnknownSentinel = "(known after apply)";

/// Location of an Unknown inside an attribute map: attribute name followed
/// by list indices / map keys.
using ValuePath = std::vector<std::variant<std::string, std::size_t>>;

struct UnknownAt {
  ValuePath path;
  std::string origin;
  bool operator==(const UnknownAt&) const = default;
};

nlohmann::json path_to_json(const ValuePath& path);
ValuePath path_from_json(const nlohmann::json& j);

/// Converts a value to JSON. Unknown values throw unless `unknowns` is
/// given, in which case they are written as the sentinel and recorded.
nlohmann::json to_json(const Value& v, std::vector<UnknownAt>* unknowns = nullptr,
                       ValuePath prefix = {});
Value from_json(const nlohmann::json& j);

nlohmann::json map_to_json(const AttributeMap& m, std::vector<UnknownAt>* unknowns = nullptr);
AttributeMap map_from_json(const nlohmann::json& j);

/// Restores Unknown markers recorded by `to_json` into a decoded map.
void apply_unknowns(AttributeMap& m, const std::vector<UnknownAt>& unknowns);

}  // namespace microform
