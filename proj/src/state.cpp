#include "microform/state.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <httplib.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "microform/util.hpp"

namespace microform {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

StateSnapshot StateSnapshot::empty() {
  StateSnapshot s;
  s.lineage = new_uuid();
  return s;
}

std::string serialize_state(const StateSnapshot& s) {
  ojson j;
  j["format_version"] = s.format_version;
  j["serial"] = s.serial;
  j["lineage"] = s.lineage;
  j["resources"] = ojson::array();
  for (const auto& [addr, r] : s.resources) {
    ojson e;
    e["address"] = addr;
    e["type"] = r.type;
    e["name"] = r.name;
    e["provider"] = r.provider;
    e["id"] = r.id;
    e["attributes"] = ojson::parse(map_to_json(r.attributes).dump());
    e["dependencies"] = r.dependencies;
    j["resources"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

StateSnapshot parse_state(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorruptStateError(std::string("state document is not valid JSON: ") + e.what());
  }
  try {
    StateSnapshot s;
    s.format_version = j.at("format_version").get<int>();
    if (s.format_version != 1)
      throw CorruptStateError("unsupported state format_version " + std::to_string(s.format_version));
    if (!j.at("serial").is_number_unsigned()) throw CorruptStateError("state serial must be a non-negative integer");
    s.serial = j.at("serial").get<std::uint64_t>();
    s.lineage = j.at("lineage").get<std::string>();
    for (const auto& e : j.at("resources")) {
      ResourceState r;
      r.type = e.at("type").get<std::string>();
      r.name = e.at("name").get<std::string>();
      r.provider = e.at("provider").get<std::string>();
      r.id = e.at("id").get<std::string>();
      r.attributes = map_from_json(e.at("attributes"));
      r.dependencies = e.at("dependencies").get<std::vector<std::string>>();
      auto addr = e.at("address").get<std::string>();
      if (addr != r.address()) throw CorruptStateError("state entry '" + addr + "' does not match its type and name");
      if (r.id.empty()) throw CorruptStateError("state entry '" + addr + "' has no id");
      if (!s.resources.emplace(addr, std::move(r)).second)
        throw CorruptStateError("state lists '" + addr + "' twice");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptStateError(std::string("malformed state document: ") + e.what());
  } catch (const CorruptStateError&) {
    throw;
  } catch (const Error& e) {
    throw CorruptStateError(std::string("malformed state document: ") + e.what());
  }
}

std::string_view lock_operation_name(LockOperation op) {
  switch (op) {
    case LockOperation::Plan: return "plan";
    case LockOperation::Apply: return "apply";
    case LockOperation::Destroy: return "destroy";
  }
  return "?";
}

nlohmann::json lock_to_json(const LockInfo& info) {
  return nlohmann::json{{"holder", info.holder},
                        {"operation", lock_operation_name(info.operation)},
                        {"acquired_at", info.acquired_at},
                        {"token", info.token}};
}

LockInfo lock_from_json(const nlohmann::json& j) {
  LockInfo info;
  info.holder = j.value("holder", "");
  auto op = j.value("operation", "plan");
  if (op == "plan") info.operation = LockOperation::Plan;
  else if (op == "apply") info.operation = LockOperation::Apply;
  else if (op == "destroy") info.operation = LockOperation::Destroy;
  else throw Error("unknown lock operation '" + op + "'");
  info.acquired_at = j.value("acquired_at", "");
  info.token = j.value("token", "");
  return info;
}

SerialConflictError::SerialConflictError(std::uint64_t stored, std::uint64_t expected)
    : Error("state serial conflict: stored serial is " + std::to_string(stored) + ", expected " +
            std::to_string(expected)),
      stored_(stored) {}

namespace {

std::string holder_text(const std::optional<LockInfo>& h) {
  if (!h) return "state is locked by an unknown holder";
  return "state is locked by " + h->holder + " (operation " + std::string(lock_operation_name(h->operation)) +
         ", since " + h->acquired_at + ", token " + h->token + ")";
}

std::optional<std::string> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

LockedError::LockedError(std::optional<LockInfo> holder) : Error(holder_text(holder)), holder_(std::move(holder)) {}

// ---------------------------------------------------------------------------

LocalBackend::LocalBackend(fs::path state_file) : path_(std::move(state_file)) {}

fs::path LocalBackend::lock_path() const { return fs::path(path_.string() + ".lock"); }

StateSnapshot LocalBackend::read_locked() const {
  std::error_code ec;
  if (!fs::exists(path_, ec)) return StateSnapshot::empty();
  auto text = slurp(path_);
  if (!text) throw CorruptStateError("cannot read state file " + path_.string());
  try {
    return parse_state(*text);
  } catch (const CorruptStateError& e) {
    throw CorruptStateError(path_.string() + ": " + e.what());
  }
}

StateSnapshot LocalBackend::read_state() {
  std::lock_guard lock(mu_);
  return read_locked();
}

std::optional<LockInfo> LocalBackend::read_lock_locked() const {
  auto text = slurp(lock_path());
  if (!text) return std::nullopt;
  try {
    return lock_from_json(nlohmann::json::parse(*text));
  } catch (const std::exception&) {
    // Present but unreadable: still locked, holder unknown.
    return LockInfo{"unknown", LockOperation::Plan, "", ""};
  }
}

std::optional<LockInfo> LocalBackend::current_lock() {
  std::lock_guard lock(mu_);
  return read_lock_locked();
}

std::uint64_t LocalBackend::write_state(const StateSnapshot& snapshot, std::uint64_t expected_serial) {
  std::string token;
  {
    std::lock_guard lock(mu_);
    token = held_token_;
  }
  if (token.empty()) throw NotLockedError("cannot write state without holding the lock");
  return write_with_token(snapshot, expected_serial, token);
}

std::uint64_t LocalBackend::write_with_token(const StateSnapshot& snapshot, std::uint64_t expected_serial,
                                             const std::string& token) {
  std::lock_guard lock(mu_);
  auto holder = read_lock_locked();
  if (!holder) throw NotLockedError("cannot write state without holding the lock");
  if (holder->token != token) throw LockTokenError("lock token does not match the current lock");
  if (snapshot.serial != expected_serial)
    throw Error("snapshot serial " + std::to_string(snapshot.serial) + " does not match expected serial " +
                std::to_string(expected_serial));
  std::error_code ec;
  if (fs::exists(path_, ec)) {
    auto stored = read_locked();
    if (stored.serial != expected_serial) throw SerialConflictError(stored.serial, expected_serial);
    if (stored.lineage != snapshot.lineage)
      throw Error("state lineage mismatch: stored " + stored.lineage + ", got " + snapshot.lineage);
  } else if (expected_serial != 0) {
    throw SerialConflictError(0, expected_serial);
  }
  StateSnapshot next = snapshot;
  next.serial = expected_serial + 1;
  auto tmp = fs::path(path_.string() + ".tmp-" + new_uuid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << serialize_state(next);
    out.flush();
    if (!out) {
      fs::remove(tmp, ec);
      throw Error("cannot write " + tmp.string());
    }
  }
  fs::rename(tmp, path_, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error("cannot replace state file " + path_.string() + ": " + ec.message());
  }
  return next.serial;
}

std::string LocalBackend::lock(LockInfo info) {
  std::lock_guard lock(mu_);
  info.token = new_uuid();
  if (info.acquired_at.empty()) info.acquired_at = utc_timestamp();
  auto lp = lock_path();
  if (lp.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(lp.parent_path(), ec);
  }
  int fd = ::open(lp.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
  if (fd < 0) {
    if (errno == EEXIST) throw LockedError(read_lock_locked());
    throw Error("cannot create lock file " + lp.string() + ": " + std::strerror(errno));
  }
  auto body = lock_to_json(info).dump() + "\n";
  bool ok = ::write(fd, body.data(), body.size()) == static_cast<ssize_t>(body.size());
  ::close(fd);
  if (!ok) {
    ::unlink(lp.c_str());
    throw Error("cannot write lock file " + lp.string());
  }
  held_token_ = info.token;
  return info.token;
}

void LocalBackend::unlock(const std::string& token) {
  std::lock_guard lock(mu_);
  auto holder = read_lock_locked();
  if (!holder) throw NotLockedError("state is not locked");
  if (holder->token != token) throw LockTokenError("lock token " + token + " does not match the current lock");
  std::error_code ec;
  fs::remove(lock_path(), ec);
  if (ec) throw Error("cannot remove lock file: " + ec.message());
  if (held_token_ == token) held_token_.clear();
}

// ---------------------------------------------------------------------------

namespace {

std::string error_message(const httplib::Response& res) {
  try {
    auto j = nlohmann::json::parse(res.body);
    if (j.is_object() && j.contains("error")) return j["error"].get<std::string>();
  } catch (const std::exception&) {
  }
  return "HTTP " + std::to_string(res.status);
}

}  // namespace

HttpBackend::HttpBackend(std::string base_url) : url_(std::move(base_url)) {
  while (!url_.empty() && url_.back() == '/') url_.pop_back();
  auto scheme = url_.find("://");
  auto path_start = url_.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  host_ = path_start == std::string::npos ? url_ : url_.substr(0, path_start);
  prefix_ = path_start == std::string::npos ? "" : url_.substr(path_start);
}

#define MICROFORM_HTTP_CLIENT(c)  \
  httplib::Client c(host_);       \
  c.set_connection_timeout(2);    \
  c.set_read_timeout(10)

StateSnapshot HttpBackend::read_state() {
  std::lock_guard lock(mu_);
  MICROFORM_HTTP_CLIENT(c);
  auto res = c.Get(prefix_ + "/state");
  if (!res) throw Error("state server " + url_ + " unreachable");
  if (res->status == 404) return StateSnapshot::empty();
  if (res->status != 200) throw Error("state server: " + error_message(*res));
  return parse_state(res->body);
}

std::uint64_t HttpBackend::write_state(const StateSnapshot& snapshot, std::uint64_t expected_serial) {
  std::lock_guard lock(mu_);
  if (held_token_.empty()) throw NotLockedError("cannot write state without holding the lock");
  MICROFORM_HTTP_CLIENT(c);
  httplib::Headers headers{{kLockTokenHeader, held_token_}};
  auto res = c.Put(prefix_ + "/state?expected_serial=" + std::to_string(expected_serial), headers,
                   serialize_state(snapshot), "application/json");
  if (!res) throw Error("state server " + url_ + " unreachable");
  if (res->status == 409) {
    std::uint64_t stored = 0;
    try {
      stored = nlohmann::json::parse(res->body).at("stored_serial").get<std::uint64_t>();
    } catch (const std::exception&) {
    }
    throw SerialConflictError(stored, expected_serial);
  }
  if (res->status == 423) throw NotLockedError("state server: " + error_message(*res));
  if (res->status != 200) throw Error("state server: " + error_message(*res));
  return nlohmann::json::parse(res->body).at("serial").get<std::uint64_t>();
}

std::string HttpBackend::lock(LockInfo info) {
  std::lock_guard lock(mu_);
  if (info.acquired_at.empty()) info.acquired_at = utc_timestamp();
  MICROFORM_HTTP_CLIENT(c);
  auto res = c.Post(prefix_ + "/state/lock", lock_to_json(info).dump(), "application/json");
  if (!res) throw Error("state server " + url_ + " unreachable");
  if (res->status == 423) {
    std::optional<LockInfo> holder;
    try {
      holder = lock_from_json(nlohmann::json::parse(res->body));
    } catch (const std::exception&) {
    }
    throw LockedError(holder);
  }
  if (res->status != 200) throw Error("state server: " + error_message(*res));
  held_token_ = res->body;
  return res->body;
}

void HttpBackend::unlock(const std::string& token) {
  std::lock_guard lock(mu_);
  MICROFORM_HTTP_CLIENT(c);
  httplib::Headers headers{{kLockTokenHeader, token}};
  auto res = c.Delete(prefix_ + "/state/lock", headers);
  if (!res) throw Error("state server " + url_ + " unreachable");
  if (res->status == 403) throw LockTokenError("state server: " + error_message(*res));
  if (res->status == 409) throw NotLockedError("state server: " + error_message(*res));
  if (res->status != 200) throw Error("state server: " + error_message(*res));
  if (held_token_ == token) held_token_.clear();
}

std::optional<LockInfo> HttpBackend::current_lock() {
  std::lock_guard lock(mu_);
  MICROFORM_HTTP_CLIENT(c);
  auto res = c.Get(prefix_ + "/state/lock");
  if (!res) throw Error("state server " + url_ + " unreachable");
  if (res->status == 404) return std::nullopt;
  if (res->status != 200) throw Error("state server: " + error_message(*res));
  return lock_from_json(nlohmann::json::parse(res->body));
}

#undef MICROFORM_HTTP_CLIENT

// ---------------------------------------------------------------------------

namespace {

void json_error(httplib::Response& res, int status, const std::string& msg, nlohmann::json extra = {}) {
  nlohmann::json body = extra.is_object() ? extra : nlohmann::json::object();
  body["error"] = msg;
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

StateServer::StateServer(fs::path state_file)
    : backend_(std::move(state_file)), http_(std::make_unique<httplib::Server>()) {
  http_->Get("/state", [this](const httplib::Request&, httplib::Response& res) {
    std::lock_guard lock(mu_);
    std::error_code ec;
    if (!fs::exists(backend_.path(), ec)) return json_error(res, 404, "no state");
    try {
      auto text = slurp(backend_.path());
      if (!text) return json_error(res, 500, "cannot read state");
      parse_state(*text);
      res.set_content(*text, "application/json");
    } catch (const std::exception& e) {
      json_error(res, 500, e.what());
    }
  });
  http_->Put("/state", [this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu_);
    if (!req.has_param("expected_serial")) return json_error(res, 400, "expected_serial is required");
    std::uint64_t expected = 0;
    try {
      expected = std::stoull(req.get_param_value("expected_serial"));
    } catch (const std::exception&) {
      return json_error(res, 400, "expected_serial must be an integer");
    }
    try {
      auto snap = parse_state(req.body);
      auto serial = backend_.write_with_token(snap, expected, req.get_header_value(kLockTokenHeader));
      res.set_content(nlohmann::json{{"serial", serial}}.dump(), "application/json");
    } catch (const SerialConflictError& e) {
      json_error(res, 409, e.what(), {{"stored_serial", e.stored()}});
    } catch (const NotLockedError& e) {
      json_error(res, 423, e.what());
    } catch (const LockTokenError& e) {
      json_error(res, 423, e.what());
    } catch (const CorruptStateError& e) {
      json_error(res, 400, e.what());
    } catch (const std::exception& e) {
      json_error(res, 400, e.what());
    }
  });
  http_->Post("/state/lock", [this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu_);
    LockInfo info;
    try {
      info = lock_from_json(nlohmann::json::parse(req.body));
    } catch (const std::exception& e) {
      return json_error(res, 400, std::string("invalid lock info: ") + e.what());
    }
    try {
      res.set_content(backend_.lock(info), "text/plain");
    } catch (const LockedError& e) {
      res.status = 423;
      res.set_content(e.holder() ? lock_to_json(*e.holder()).dump() : "{}", "application/json");
    } catch (const std::exception& e) {
      json_error(res, 500, e.what());
    }
  });
  http_->Get("/state/lock", [this](const httplib::Request&, httplib::Response& res) {
    std::lock_guard lock(mu_);
    auto info = backend_.current_lock();
    if (!info) return json_error(res, 404, "not locked");
    res.set_content(lock_to_json(*info).dump(), "application/json");
  });
  http_->Delete("/state/lock", [this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu_);
    try {
      backend_.unlock(req.get_header_value(kLockTokenHeader));
      res.set_content("{}", "application/json");
    } catch (const LockTokenError& e) {
      json_error(res, 403, e.what());
    } catch (const NotLockedError& e) {
      json_error(res, 409, e.what());
    } catch (const std::exception& e) {
      json_error(res, 500, e.what());
    }
  });
}

StateServer::~StateServer() { stop(); }

void StateServer::start(const std::string& host, int port) {
  if (port == 0)
    port_ = http_->bind_to_any_port(host);
  else
    port_ = http_->bind_to_port(host, port) ? port : -1;
  if (port_ < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
}

void StateServer::listen(const std::string& host, int port) {
  if (!http_->bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  port_ = port;
  http_->listen_after_bind();
}

void StateServer::stop() {
  if (http_) http_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace microform
