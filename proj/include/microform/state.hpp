#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "microform/value.hpp"

namespace httplib {
class Server;
}

namespace microform {

struct ResourceState {
  std::string type;
  std::string name;
  std::string provider;
  std::string id;
  AttributeMap attributes;
  std::vector<std::string> dependencies;

  std::string address() const { return type + "." + name; }
  bool operator==(const ResourceState&) const = default;
};

struct StateSnapshot {
  int format_version = 1;
  std::uint64_t serial = 0;
  std::string lineage;
  std::map<std::string, ResourceState> resources;

  /// Serial 0, fresh lineage, no resources.
  static StateSnapshot empty();
  bool operator==(const StateSnapshot&) const = default;
};

/// Canonical state document: resources sorted by address, trailing newline.
std::string serialize_state(const StateSnapshot& s);
/// Throws CorruptStateError on malformed input.
StateSnapshot parse_state(const std::string& text);

enum class LockOperation { Plan, Apply, Destroy };

std::string_view lock_operation_name(LockOperation op);

struct LockInfo {
  std::string holder;
  LockOperation operation = LockOperation::Plan;
  std::string acquired_at;
  std::string token;
};

nlohmann::json lock_to_json(const LockInfo& info);
LockInfo lock_from_json(const nlohmann::json& j);

class CorruptStateError : public Error {
 public:
  using Error::Error;
};

class SerialConflictError : public Error {
 public:
  SerialConflictError(std::uint64_t stored, std::uint64_t expected);
  std::uint64_t stored() const { return stored_; }

 private:
  std::uint64_t stored_;
};

class LockedError : public Error {
 public:
  explicit LockedError(std::optional<LockInfo> holder);
  const std::optional<LockInfo>& holder() const { return holder_; }

 private:
  std::optional<LockInfo> holder_;
};

class LockTokenError : public Error {
 public:
  using Error::Error;
};

class NotLockedError : public Error {
 public:
  using Error::Error;
};

/// Where state lives. Each method is serialized per handle.
class StateBackend {
 public:
  virtual ~StateBackend() = default;

  virtual StateSnapshot read_state() = 0;
  /// Requires the lock held through this handle. Returns the new serial.
  virtual std::uint64_t write_state(const StateSnapshot& snapshot, std::uint64_t expected_serial) = 0;
  /// Acquires the exclusive lock; the handle remembers the token.
  virtual std::string lock(LockInfo info) = 0;
  virtual void unlock(const std::string& token) = 0;
  virtual std::optional<LockInfo> current_lock() = 0;
  virtual std::string describe() const = 0;
};

/// JSON file plus `<file>.lock` created exclusively.
class LocalBackend : public StateBackend {
 public:
  explicit LocalBackend(std::filesystem::path state_file);

  StateSnapshot read_state() override;
  std::uint64_t write_state(const StateSnapshot& snapshot, std::uint64_t expected_serial) override;
  std::string lock(LockInfo info) override;
  void unlock(const std::string& token) override;
  std::optional<LockInfo> current_lock() override;
  std::string describe() const override { return path_.string(); }

  /// Write authorized by an explicit lock token (used by the state server).
  std::uint64_t write_with_token(const StateSnapshot& snapshot, std::uint64_t expected_serial,
                                 const std::string& token);

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path lock_path() const;

 private:
  std::optional<LockInfo> read_lock_locked() const;
  StateSnapshot read_locked() const;

  std::filesystem::path path_;
  std::mutex mu_;
  std::string held_token_;
};

/// Client for the remote state server.
class HttpBackend : public StateBackend {
 public:
  explicit HttpBackend(std::string base_url);

  StateSnapshot read_state() override;
  std::uint64_t write_state(const StateSnapshot& snapshot, std::uint64_t expected_serial) override;
  std::string lock(LockInfo info) override;
  void unlock(const std::string& token) override;
  std::optional<LockInfo> current_lock() override;
  std::string describe() const override { return url_; }

 private:
  std::string url_;
  std::string host_;
  std::string prefix_;
  std::mutex mu_;
  std::string held_token_;
};

inline constexpr const char* kLockTokenHeader = "X-Lock-Token";

/// Exposes a LocalBackend over HTTP: GET/PUT /state, POST/GET/DELETE /state/lock.
class StateServer {
 public:
  explicit StateServer(std::filesystem::path state_file);
  ~StateServer();
  StateServer(const StateServer&) = delete;
  StateServer& operator=(const StateServer&) = delete;

  void start(const std::string& host, int port);
  void listen(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  LocalBackend backend_;
  std::mutex mu_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace microform
