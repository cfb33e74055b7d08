#include <httplib.h>

#include "microform/provider.hpp"

namespace microform {

namespace {

using Kind = ProviderError::Kind;

AttributeSpec req(const char* name, bool force_new = true, ValueKind kind = ValueKind::String) {
  return {name, kind, AttrMode::Required, force_new, std::nullopt};
}
AttributeSpec opt(const char* name, ValueKind kind, std::optional<Value> def = std::nullopt) {
  return {name, kind, AttrMode::Optional, false, std::move(def)};
}
AttributeSpec computed(const char* name) { return {name, ValueKind::String, AttrMode::Computed, false, std::nullopt}; }

const std::map<std::string, std::string>& collections() {
  static const std::map<std::string, std::string> m = {
      {"memcloud_vpc", "vpcs"},
      {"memcloud_subnet", "subnets"},
      {"memcloud_security_group", "security_groups"},
      {"memcloud_instance", "instances"},
      {"memcloud_load_balancer", "load_balancers"},
  };
  return m;
}

class MemcloudProvider : public Provider {
 public:
  ProviderSchema schema() const override {
    ProviderSchema s;
    s.provider_name = "memcloud";
    s.config_attrs = {req("endpoint", false)};
    s.resource_types = {
        {"memcloud_vpc", {req("cidr"), computed("id")}},
        {"memcloud_subnet", {req("vpc_id"), req("cidr"), computed("id")}},
        {"memcloud_security_group", {req("vpc_id"), opt("rules", ValueKind::StringList), computed("id")}},
        {"memcloud_instance",
         {req("subnet_id"), req("image"), opt("size", ValueKind::String, Value("small")),
          opt("security_group_ids", ValueKind::StringList), computed("id"), computed("private_ip")}},
        {"memcloud_load_balancer",
         {req("subnet_id"), req("instance_ids", false, ValueKind::StringList),
          opt("port", ValueKind::Integer, Value(80)), computed("id"), computed("dns_name")}},
    };
    s.data_types = {{"memcloud_vpc", {req("id", false), computed("cidr")}}};
    return s;
  }

  void configure(const AttributeMap& config) override {
    auto it = config.find("endpoint");
    if (it == config.end() || !it->second.is_string() || it->second.as_string().empty())
      throw ProviderError(Kind::Validation, "endpoint: required");
    endpoint_ = it->second.as_string();
    while (!endpoint_.empty() && endpoint_.back() == '/') endpoint_.pop_back();
    auto res = client().Get("/v1/vpcs");
    if (!res) throw ProviderError(Kind::Unavailable, "cannot reach memcloud endpoint " + endpoint_);
  }

  CreateResult create(const std::string& type, const AttributeMap& attrs) override {
    auto res = call("POST", "/v1/" + collection(type), body_for(type, attrs), type);
    auto out = decode(type, res->body);
    return {out.at("id").as_string(), std::move(out)};
  }

  std::optional<AttributeMap> read(const std::string& type, const std::string& id) override {
    auto res = client().Get("/v1/" + collection(type) + "/" + id);
    if (!res) throw unavailable();
    if (res->status == 404) return std::nullopt;
    check(*res, type);
    return decode(type, res->body);
  }

  AttributeMap update(const std::string& type, const std::string& id, const AttributeMap& attrs) override {
    auto res = call("PUT", "/v1/" + collection(type) + "/" + id, body_for(type, attrs), type);
    return decode(type, res->body);
  }

  void remove(const std::string& type, const std::string& id) override {
    auto res = client().Delete("/v1/" + collection(type) + "/" + id);
    if (!res) throw unavailable();
    if (res->status == 404) return;
    check(*res, type);
  }

  AttributeMap read_data(const std::string& type, const AttributeMap& attrs) override {
    if (type != "memcloud_vpc") throw ProviderError(Kind::Validation, "memcloud has no data source '" + type + "'");
    auto it = attrs.find("id");
    if (it == attrs.end() || !it->second.is_string()) throw ProviderError(Kind::Validation, "id: required");
    auto res = client().Get("/v1/vpcs/" + it->second.as_string());
    if (!res) throw unavailable();
    check(*res, type);
    auto body = nlohmann::json::parse(res->body);
    return AttributeMap{{"id", body.at("id").get<std::string>()}, {"cidr", body.at("cidr").get<std::string>()}};
  }

 private:
  httplib::Client client() const {
    httplib::Client c(endpoint_);
    c.set_connection_timeout(2);
    c.set_read_timeout(10);
    return c;
  }

  ProviderError unavailable() const {
    return ProviderError(Kind::Unavailable, "memcloud endpoint " + endpoint_ + " unavailable");
  }

  static const std::string& collection(const std::string& type) {
    auto it = collections().find(type);
    if (it == collections().end()) throw ProviderError(Kind::Validation, "memcloud does not support '" + type + "'");
    return it->second;
  }

  const TypeSchema& type_schema(const std::string& type) const {
    if (!schema_) schema_ = schema();
    const TypeSchema* t = schema_->resource(type);
    if (t == nullptr) throw ProviderError(Kind::Validation, "memcloud does not support '" + type + "'");
    return *t;
  }

  /// Request body: every non-computed attribute, nulls included.
  std::string body_for(const std::string& type, const AttributeMap& attrs) const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& spec : type_schema(type)) {
      if (spec.mode == AttrMode::Computed) continue;
      auto it = attrs.find(spec.name);
      j[spec.name] = it == attrs.end() ? nlohmann::json(nullptr) : to_json(it->second);
    }
    return j.dump();
  }

  AttributeMap decode(const std::string& type, const std::string& body) const {
    try {
      return normalize_attributes(type_schema(type), map_from_json(nlohmann::json::parse(body)));
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(Kind::Internal, "malformed memcloud response: " + std::string(e.what()));
    }
  }

  static void check(const httplib::Response& res, const std::string& type) {
    if (res.status >= 200 && res.status < 300) return;
    std::string msg = "HTTP " + std::to_string(res.status);
    try {
      auto j = nlohmann::json::parse(res.body);
      if (j.contains("error")) msg = j["error"].get<std::string>();
    } catch (const nlohmann::json::exception&) {
    }
    msg = type + ": " + msg;
    if (res.status == 404) throw ProviderError(Kind::NotFound, msg);
    if (res.status == 409) throw ProviderError(Kind::Conflict, msg);
    if (res.status >= 500) throw ProviderError(Kind::Unavailable, msg);
    throw ProviderError(Kind::Validation, msg);
  }

  httplib::Result call(const std::string& method, const std::string& path, const std::string& body,
                       const std::string& type) const {
    auto c = client();
    auto res = method == "POST" ? c.Post(path, body, "application/json") : c.Put(path, body, "application/json");
    if (!res) throw unavailable();
    check(*res, type);
    return res;
  }

  std::string endpoint_;
  mutable std::optional<ProviderSchema> schema_;
};

}  // namespace

std::unique_ptr<Provider> make_memcloud_provider() { return std::make_unique<MemcloudProvider>(); }

}  // namespace microform
