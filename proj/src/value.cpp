#include "microform/value.hpp"

#include <charconv>
#include <sstream>

namespace microform {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  out += '"';
  return out;
}

}  // namespace

bool Value::contains_unknown() const {
  return std::visit(overloaded{
                        [](const Unknown&) { return true; },
                        [](const List& l) {
                          for (const auto& e : l)
                            if (e.contains_unknown()) return true;
                          return false;
                        },
                        [](const Map& m) {
                          for (const auto& [_, e] : m)
                            if (e.contains_unknown()) return true;
                          return false;
                        },
                        [](const auto&) { return false; },
                    },
                    data_);
}

std::string Value::kind_name() const {
  return std::visit(overloaded{
                        [](std::monostate) { return std::string("null"); },
                        [](bool) { return std::string("bool"); },
                        [](std::int64_t) { return std::string("integer"); },
                        [](double) { return std::string("number"); },
                        [](const std::string&) { return std::string("string"); },
                        [](const List&) { return std::string("list"); },
                        [](const Map&) { return std::string("map"); },
                        [](const Unknown&) { return std::string("unknown"); },
                    },
                    data_);
}

bool known_equal(const Value& a, const Value& b) {
  if (a.is_unknown() || b.is_unknown()) return false;
  if (a.is_list() && b.is_list()) {
    const auto& la = a.as_list();
    const auto& lb = b.as_list();
    if (la.size() != lb.size()) return false;
    for (std::size_t i = 0; i < la.size(); ++i)
      if (!known_equal(la[i], lb[i])) return false;
    return true;
  }
  if (a.is_map() && b.is_map()) {
    const auto& ma = a.as_map();
    const auto& mb = b.as_map();
    if (ma.size() != mb.size()) return false;
    for (auto ia = ma.begin(), ib = mb.begin(); ia != ma.end(); ++ia, ++ib)
      if (ia->first != ib->first || !known_equal(ia->second, ib->second)) return false;
    return true;
  }
  return a == b;
}

std::string format_float(double d) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), d);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string render_value(const Value& v) {
  return std::visit(overloaded{
                        [](std::monostate) { return std::string("null"); },
                        [](bool b) { return std::string(b ? "true" : "false"); },
                        [](std::int64_t i) { return std::to_string(i); },
                        [](double d) { return format_float(d); },
                        [](const std::string& s) { return quote(s); },
                        [](const Value::List& l) {
                          std::string out = "[";
                          for (std::size_t i = 0; i < l.size(); ++i) {
                            if (i) out += ", ";
                            out += render_value(l[i]);
                          }
                          return out + "]";
                        },
                        [](const Value::Map& m) {
                          std::string out = "{";
                          bool first = true;
                          for (const auto& [k, e] : m) {
                            out += first ? " " : ", ";
                            first = false;
                            out += k + " = " + render_value(e);
                          }
                          return out + (m.empty() ? "}" : " }");
                        },
                        [](const Unknown&) { return std::string(kUnknownSentinel); },
                    },
                    v.storage());
}

nlohmann::json path_to_json(const ValuePath& path) {
  auto j = nlohmann::json::array();
  for (const auto& seg : path) {
    if (const auto* s = std::get_if<std::string>(&seg))
      j.push_back(*s);
    else
      j.push_back(std::get<std::size_t>(seg));
  }
  return j;
}

ValuePath path_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error("unknown path must be an array");
  ValuePath path;
  for (const auto& seg : j) {
    if (seg.is_string())
      path.emplace_back(seg.get<std::string>());
    else if (seg.is_number_unsigned())
      path.emplace_back(seg.get<std::size_t>());
    else
      throw Error("unknown path segment must be a string or index");
  }
  return path;
}

nlohmann::json to_json(const Value& v, std::vector<UnknownAt>* unknowns, ValuePath prefix) {
  return std::visit(
      overloaded{
          [](std::monostate) { return nlohmann::json(nullptr); },
          [](bool b) { return nlohmann::json(b); },
          [](std::int64_t i) { return nlohmann::json(i); },
          [](double d) { return nlohmann::json(d); },
          [](const std::string& s) { return nlohmann::json(s); },
          [&](const Value::List& l) {
            auto j = nlohmann::json::array();
            for (std::size_t i = 0; i < l.size(); ++i) {
              auto p = prefix;
              p.emplace_back(i);
              j.push_back(to_json(l[i], unknowns, std::move(p)));
            }
            return j;
          },
          [&](const Value::Map& m) {
            auto j = nlohmann::json::object();
            for (const auto& [k, e] : m) {
              auto p = prefix;
              p.emplace_back(k);
              j[k] = to_json(e, unknowns, std::move(p));
            }
            return j;
          },
          [&](const Unknown& u) {
            if (unknowns == nullptr) throw Error("unknown value cannot be serialized here");
            unknowns->push_back(UnknownAt{prefix, u.origin});
            return nlohmann::json(kUnknownSentinel);
          },
      },
      v.storage());
}

Value from_json(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::null: return Value();
    case nlohmann::json::value_t::boolean: return Value(j.get<bool>());
    case nlohmann::json::value_t::number_integer:
    case nlohmann::json::value_t::number_unsigned: return Value(j.get<std::int64_t>());
    case nlohmann::json::value_t::number_float: return Value(j.get<double>());
    case nlohmann::json::value_t::string: return Value(j.get<std::string>());
    case nlohmann::json::value_t::array: {
      Value::List l;
      for (const auto& e : j) l.push_back(from_json(e));
      return Value(std::move(l));
    }
    case nlohmann::json::value_t::object: return Value(map_from_json(j));
    default: throw Error("unsupported JSON value");
  }
}

nlohmann::json map_to_json(const AttributeMap& m, std::vector<UnknownAt>* unknowns) {
  return to_json(Value(m), unknowns);
}

AttributeMap map_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("expected a JSON object");
  AttributeMap m;
  for (const auto& [k, e] : j.items()) m.emplace(k, from_json(e));
  return m;
}

void apply_unknowns(AttributeMap& m, const std::vector<UnknownAt>& unknowns) {
  for (const auto& u : unknowns) {
    if (u.path.empty()) throw Error("empty unknown path");
    Value* cur = nullptr;
    for (std::size_t i = 0; i < u.path.size(); ++i) {
      const auto& seg = u.path[i];
      if (i == 0) {
        const auto* key = std::get_if<std::string>(&seg);
        if (key == nullptr || !m.contains(*key)) throw Error("unknown path does not match value");
        cur = &m.at(*key);
        continue;
      }
      if (const auto* key = std::get_if<std::string>(&seg)) {
        if (!cur->is_map() || !cur->as_map().contains(*key))
          throw Error("unknown path does not match value");
        cur = &cur->as_map().at(*key);
      } else {
        auto idx = std::get<std::size_t>(seg);
        if (!cur->is_list() || idx >= cur->as_list().size())
          throw Error("unknown path does not match value");
        cur = &cur->as_list()[idx];
      }
    }
    *cur = Value(Unknown{u.origin});
  }
}

}  // namespace microform
