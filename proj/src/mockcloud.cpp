#include "microform/mockcloud.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdio>
#include <optional>

#include "microform/value.hpp"

namespace microform::mockcloud {

namespace {

using ojson = nlohmann::ordered_json;

enum class FieldType { String, Integer, StringList };

struct FieldSpec {
  const char* name;
  FieldType type;
  bool required;
  bool mutable_;
  const char* ref;  // referenced collection, or nullptr
  std::optional<ojson> default_value;
};

struct CollectionSpec {
  const char* prefix;
  std::vector<FieldSpec> fields;
  std::vector<const char*> computed;
};

const std::map<std::string, CollectionSpec>& specs() {
  static const std::map<std::string, CollectionSpec> s = {
      {"vpcs", {"vpc", {{"cidr", FieldType::String, true, false, nullptr, std::nullopt}}, {}}},
      {"subnets",
       {"sub",
        {{"vpc_id", FieldType::String, true, false, "vpcs", std::nullopt},
         {"cidr", FieldType::String, true, false, nullptr, std::nullopt}},
        {}}},
      {"security_groups",
       {"sg",
        {{"vpc_id", FieldType::String, true, false, "vpcs", std::nullopt},
         {"rules", FieldType::StringList, false, true, nullptr, std::nullopt}},
        {}}},
      {"instances",
       {"inst",
        {{"subnet_id", FieldType::String, true, false, "subnets", std::nullopt},
         {"image", FieldType::String, true, false, nullptr, std::nullopt},
         {"size", FieldType::String, false, true, nullptr, ojson("small")},
         {"security_group_ids", FieldType::StringList, false, true, "security_groups", std::nullopt}},
        {"private_ip"}}},
      {"load_balancers",
       {"lb",
        {{"subnet_id", FieldType::String, true, false, "subnets", std::nullopt},
         {"instance_ids", FieldType::StringList, true, true, "instances", std::nullopt},
         {"port", FieldType::Integer, false, true, nullptr, ojson(80)}},
        {"dns_name"}}},
  };
  return s;
}

Response error(int status, const std::string& message) {
  return Response{status, ojson{{"error", message}}.dump()};
}

bool type_ok(const ojson& v, FieldType t) {
  switch (t) {
    case FieldType::String: return v.is_string();
    case FieldType::Integer: return v.is_number_integer();
    case FieldType::StringList:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const ojson& e) { return e.is_string(); });
  }
  return false;
}

std::vector<std::string> ref_targets(const ojson& v) {
  std::vector<std::string> out;
  if (v.is_string()) out.push_back(v.get<std::string>());
  if (v.is_array())
    for (const auto& e : v)
      if (e.is_string()) out.push_back(e.get<std::string>());
  return out;
}

std::optional<ojson> parse_object(const std::string& body) {
  try {
    auto j = ojson::parse(body.empty() ? "{}" : body);
    if (j.is_object()) return j;
  } catch (const ojson::parse_error&) {
  }
  return std::nullopt;
}

std::string format_id(const char* prefix, std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%06llu", prefix, static_cast<unsigned long long>(n));
  return buf;
}

}  // namespace

std::optional<Response> MockCloud::take_fault(const std::string& collection, const std::string& op) const {
  std::lock_guard lock(fault_mu_);
  auto it = faults_.find({collection, op});
  if (it == faults_.end()) return std::nullopt;
  int status = it->second.status;
  if (--it->second.count <= 0) faults_.erase(it);
  return error(status, "injected");
}

void MockCloud::record(const std::string& method, const std::string& collection, const std::string& id,
                       int status) const {
  std::lock_guard lock(trace_mu_);
  trace_.push_back(TraceEntry{++seq_, method, collection, id, status});
}

Response MockCloud::handle(const std::string& method, const std::string& path, const std::string& body) {
  std::vector<std::string> seg;
  for (std::size_t start = 1; start <= path.size();) {
    auto slash = path.find('/', start);
    if (slash == std::string::npos) slash = path.size();
    seg.push_back(path.substr(start, slash - start));
    start = slash + 1;
  }
  if (seg.size() == 2 && seg[0] == "admin" && method == "POST") {
    if (seg[1] == "reset") {
      reset();
      return Response{200, "{}"};
    }
    if (seg[1] == "faults") {
      auto j = parse_object(body);
      if (!j) return error(400, "body must be a JSON object");
      try {
        FaultRule rule{j->at("collection").get<std::string>(), j->at("operation").get<std::string>(),
                       j->value("count", 1), j->value("status", 500)};
        add_fault(rule);
      } catch (const ojson::exception& e) {
        return error(400, std::string("invalid fault rule: ") + e.what());
      }
      return Response{200, "{}"};
    }
  }
  if (seg.size() < 2 || seg.size() > 3 || seg[0] != "v1") return error(404, "no such route");
  const auto& coll = seg[1];
  if (seg.size() == 2) {
    if (method == "POST") return create(coll, body);
    if (method == "GET") return list(coll);
    return error(405, "method not allowed");
  }
  const auto& id = seg[2];
  if (method == "GET") return get(coll, id);
  if (method == "PUT") return update(coll, id, body);
  if (method == "DELETE") return remove(coll, id);
  return error(405, "method not allowed");
}

Response MockCloud::create(const std::string& coll, const std::string& body) {
  auto sit = specs().find(coll);
  if (sit == specs().end()) return error(404, "unknown collection '" + coll + "'");
  if (auto f = take_fault(coll, "create")) {
    record("POST", coll, "", f->status);
    return *f;
  }
  const auto& spec = sit->second;
  auto in = parse_object(body);
  if (!in) return error(400, "body must be a JSON object");

  std::unique_lock lock(mu_);
  for (const auto& [k, v] : in->items()) {
    bool known = std::any_of(spec.fields.begin(), spec.fields.end(), [&](const FieldSpec& f) { return k == f.name; });
    if (!known) {
      record("POST", coll, "", 422);
      return error(422, k + (k == "id" || std::find(spec.computed.begin(), spec.computed.end(), k) != spec.computed.end()
                                 ? ": read-only"
                                 : ": unknown field"));
    }
  }
  Object obj;
  obj["id"] = nullptr;
  for (const auto& f : spec.fields) {
    auto it = in->find(f.name);
    if (it == in->end() || it->is_null()) {
      if (f.required) {
        record("POST", coll, "", 422);
        return error(422, std::string(f.name) + ": required");
      }
      if (f.default_value) obj[f.name] = *f.default_value;
      continue;
    }
    if (!type_ok(*it, f.type)) {
      record("POST", coll, "", 422);
      return error(422, std::string(f.name) + ": invalid type");
    }
    if (f.ref) {
      const auto& targets = objects_[f.ref];
      for (const auto& t : ref_targets(*it))
        if (!targets.contains(t)) {
          record("POST", coll, "", 422);
          return error(422, std::string(f.name) + ": not found");
        }
    }
    obj[f.name] = *it;
  }
  auto n = ++counters_[coll];
  auto id = format_id(spec.prefix, n);
  obj["id"] = id;
  if (coll == "instances") obj["private_ip"] = "10.0." + std::to_string(n / 256) + "." + std::to_string(n % 256);
  if (coll == "load_balancers") obj["dns_name"] = id + ".lb.mock";
  objects_[coll][id] = obj;
  record("POST", coll, id, 201);
  return finish_mutation(Response{201, obj.dump()});
}

Response MockCloud::get(const std::string& coll, const std::string& id) const {
  if (!specs().contains(coll)) return error(404, "unknown collection '" + coll + "'");
  if (auto f = take_fault(coll, "read")) return *f;
  std::shared_lock lock(mu_);
  auto cit = objects_.find(coll);
  if (cit == objects_.end() || !cit->second.contains(id)) return error(404, id + ": not found");
  return Response{200, cit->second.at(id).dump()};
}

Response MockCloud::list(const std::string& coll) const {
  if (!specs().contains(coll)) return error(404, "unknown collection '" + coll + "'");
  if (auto f = take_fault(coll, "list")) return *f;
  std::shared_lock lock(mu_);
  auto arr = ojson::array();
  if (auto cit = objects_.find(coll); cit != objects_.end())
    for (const auto& [_, obj] : cit->second) arr.push_back(obj);
  return Response{200, arr.dump()};
}

Response MockCloud::update(const std::string& coll, const std::string& id, const std::string& body) {
  auto sit = specs().find(coll);
  if (sit == specs().end()) return error(404, "unknown collection '" + coll + "'");
  if (auto f = take_fault(coll, "update")) {
    record("PUT", coll, id, f->status);
    return *f;
  }
  const auto& spec = sit->second;
  auto in = parse_object(body);
  if (!in) return error(400, "body must be a JSON object");

  std::unique_lock lock(mu_);
  auto& coll_objects = objects_[coll];
  auto oit = coll_objects.find(id);
  if (oit == coll_objects.end()) {
    record("PUT", coll, id, 404);
    return error(404, id + ": not found");
  }
  Object next = oit->second;
  auto reject = [&](const std::string& msg) {
    record("PUT", coll, id, 422);
    return error(422, msg);
  };
  for (const auto& [k, v] : in->items()) {
    const FieldSpec* f = nullptr;
    for (const auto& fs : spec.fields)
      if (k == fs.name) f = &fs;
    if (f == nullptr) {
      bool computed = k == "id" || std::find(spec.computed.begin(), spec.computed.end(), k) != spec.computed.end();
      if (!computed) return reject(k + ": unknown field");
      if (!next.contains(k) || next[k] != v) return reject(k + ": read-only");
      continue;
    }
    const ojson current = next.contains(k) ? next[k] : ojson();
    if (!f->mutable_) {
      if (current != v) return reject(k + ": immutable");
      continue;
    }
    if (v.is_null()) {
      if (f->required) return reject(k + ": required");
      if (f->default_value)
        next[k] = *f->default_value;
      else
        next.erase(k);
      continue;
    }
    if (!type_ok(v, f->type)) return reject(k + ": invalid type");
    if (f->ref) {
      const auto& targets = objects_[f->ref];
      for (const auto& t : ref_targets(v))
        if (!targets.contains(t)) return reject(k + ": not found");
    }
    next[k] = v;
  }
  oit->second = next;
  record("PUT", coll, id, 200);
  return finish_mutation(Response{200, next.dump()});
}

std::optional<std::string> MockCloud::referrer_locked(const std::string& id) const {
  for (const auto& [coll, objs] : objects_) {
    const auto& spec = specs().at(coll);
    for (const auto& [oid, obj] : objs)
      for (const auto& f : spec.fields)
        if (f.ref && obj.contains(f.name)) {
          auto targets = ref_targets(obj[f.name]);
          if (std::find(targets.begin(), targets.end(), id) != targets.end()) return oid;
        }
  }
  return std::nullopt;
}

Response MockCloud::remove(const std::string& coll, const std::string& id) {
  if (!specs().contains(coll)) return error(404, "unknown collection '" + coll + "'");
  if (auto f = take_fault(coll, "delete")) {
    record("DELETE", coll, id, f->status);
    return *f;
  }
  std::unique_lock lock(mu_);
  auto& coll_objects = objects_[coll];
  if (!coll_objects.contains(id)) {
    record("DELETE", coll, id, 404);
    return error(404, id + ": not found");
  }
  if (auto ref = referrer_locked(id)) {
    record("DELETE", coll, id, 409);
    return error(409, "referenced by " + *ref);
  }
  coll_objects.erase(id);
  record("DELETE", coll, id, 204);
  return finish_mutation(Response{204, ""});
}

Response MockCloud::finish_mutation(Response r) {
  if (opts_.integrity_sweep) {
    auto v = violations_locked();
    if (!v.empty()) return error(500, "integrity violated: " + v.front());
  }
  return r;
}

void MockCloud::add_fault(const FaultRule& rule) {
  std::lock_guard lock(fault_mu_);
  if (rule.count <= 0) return;
  faults_[{rule.collection, rule.operation}] = rule;
}

void MockCloud::reset() {
  {
    std::unique_lock lock(mu_);
    objects_.clear();
    counters_.clear();
  }
  {
    std::lock_guard lock(fault_mu_);
    faults_.clear();
  }
  std::lock_guard lock(trace_mu_);
  trace_.clear();
  seq_ = 0;
}

std::vector<std::string> MockCloud::violations_locked() const {
  std::vector<std::string> out;
  for (const auto& [coll, objs] : objects_) {
    const auto& spec = specs().at(coll);
    for (const auto& [oid, obj] : objs)
      for (const auto& f : spec.fields) {
        if (!f.ref || !obj.contains(f.name)) continue;
        auto tit = objects_.find(f.ref);
        for (const auto& t : ref_targets(obj[f.name]))
          if (tit == objects_.end() || !tit->second.contains(t))
            out.push_back(oid + "." + f.name + " -> " + t);
      }
  }
  return out;
}

std::vector<std::string> MockCloud::integrity_violations() const {
  std::shared_lock lock(mu_);
  return violations_locked();
}

std::vector<TraceEntry> MockCloud::trace() const {
  std::lock_guard lock(trace_mu_);
  return trace_;
}

std::size_t MockCloud::object_count() const {
  std::shared_lock lock(mu_);
  std::size_t n = 0;
  for (const auto& [_, objs] : objects_) n += objs.size();
  return n;
}

nlohmann::json MockCloud::snapshot() const {
  std::shared_lock lock(mu_);
  nlohmann::json j;
  j["counters"] = nlohmann::json::object();
  for (const auto& [c, n] : counters_) j["counters"][c] = n;
  j["objects"] = nlohmann::json::object();
  for (const auto& [c, objs] : objects_) {
    auto arr = nlohmann::json::array();
    for (const auto& [_, o] : objs) arr.push_back(nlohmann::json::parse(o.dump()));
    j["objects"][c] = arr;
  }
  return j;
}

void MockCloud::restore(const nlohmann::json& snap) {
  std::unique_lock lock(mu_);
  objects_.clear();
  counters_.clear();
  for (const auto& [c, n] : snap.at("counters").items()) {
    if (!specs().contains(c)) throw Error("snapshot names unknown collection '" + c + "'");
    counters_[c] = n.get<std::uint64_t>();
  }
  for (const auto& [c, arr] : snap.at("objects").items()) {
    if (!specs().contains(c)) throw Error("snapshot names unknown collection '" + c + "'");
    for (const auto& o : arr) {
      auto obj = ojson::parse(o.dump());
      objects_[c][obj.at("id").get<std::string>()] = obj;
    }
  }
  if (auto v = violations_locked(); !v.empty()) throw Error("snapshot has dangling reference " + v.front());
}

// ---------------------------------------------------------------------------

Server::Server(MockCloud& cloud) : cloud_(cloud), http_(std::make_unique<httplib::Server>()) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    auto r = cloud_.handle(req.method, req.path, req.body);
    res.status = r.status;
    if (r.status != 204) res.set_content(r.body, "application/json");
  };
  http_->Get(".*", handler);
  http_->Post(".*", handler);
  http_->Put(".*", handler);
  http_->Delete(".*", handler);
}

Server::~Server() { stop(); }

void Server::start(const std::string& host, int port) {
  if (port == 0)
    port_ = http_->bind_to_any_port(host);
  else if (http_->bind_to_port(host, port))
    port_ = port;
  else
    port_ = -1;
  if (port_ < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
}

void Server::listen(const std::string& host, int port) {
  if (!http_->bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  port_ = port;
  http_->listen_after_bind();
}

void Server::stop() {
  if (http_) http_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace microform::mockcloud
