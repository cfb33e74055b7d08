#pragma once

// In-memory cloud simulator served over HTTP/JSON.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace httplib {
class Server;
}

namespace microform::mockcloud {

inline constexpr const char* kCollections[] = {"vpcs", "subnets", "security_groups", "instances",
                                               "load_balancers"};

struct Response {
  int status = 200;
  std::string body;
};

/// One provider-facing request as seen by the service, in arrival order.
struct TraceEntry {
  std::uint64_t seq = 0;
  std::string method;
  std::string collection;
  std::string id;  // target id, or the assigned id for a successful create
  int status = 0;
};

struct FaultRule {
  std::string collection;
  std::string operation;  // create | read | list | update | delete
  int count = 0;
  int status = 500;
};

class MockCloud {
 public:
  struct Options {
    /// Re-check referential integrity after every mutation.
    bool integrity_sweep = false;
  };

  MockCloud() = default;
  explicit MockCloud(Options opts) : opts_(opts) {}

  /// Routes one request. `path` excludes the query string.
  Response handle(const std::string& method, const std::string& path, const std::string& body);

  Response create(const std::string& collection, const std::string& body);
  Response get(const std::string& collection, const std::string& id) const;
  Response list(const std::string& collection) const;
  Response update(const std::string& collection, const std::string& id, const std::string& body);
  Response remove(const std::string& collection, const std::string& id);

  void add_fault(const FaultRule& rule);
  void reset();

  /// Dangling references in the stored object graph; empty when consistent.
  std::vector<std::string> integrity_violations() const;

  std::vector<TraceEntry> trace() const;
  std::size_t object_count() const;

  nlohmann::json snapshot() const;
  void restore(const nlohmann::json& snap);

 private:
  using Object = nlohmann::ordered_json;

  std::optional<Response> take_fault(const std::string& collection, const std::string& op) const;
  void record(const std::string& method, const std::string& collection, const std::string& id, int status) const;
  std::vector<std::string> violations_locked() const;
  std::optional<std::string> referrer_locked(const std::string& id) const;
  Response finish_mutation(Response r);

  Options opts_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::map<std::string, Object>> objects_;
  std::map<std::string, std::uint64_t> counters_;

  mutable std::mutex fault_mu_;
  mutable std::map<std::pair<std::string, std::string>, FaultRule> faults_;

  mutable std::mutex trace_mu_;
  mutable std::vector<TraceEntry> trace_;
  mutable std::uint64_t seq_ = 0;
};

/// Serves a MockCloud over HTTP on a background thread.
class Server {
 public:
  explicit Server(MockCloud& cloud);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds `host:port` (port 0 picks a free port) and starts serving.
  void start(const std::string& host, int port);
  /// Blocks serving on the calling thread.
  void listen(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  MockCloud& cloud_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace microform::mockcloud
