#pragma once

// In-memory provider used by executor and planner tests. Records every
// call with start/end sequence numbers and the peak number of concurrent
// calls.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "microform/provider.hpp"

namespace microform::testing {

struct CallEvent {
  std::string op;    // create | read | update | delete | read_data
  std::string name;  // the object's `name` attribute
  std::uint64_t start = 0;
  std::uint64_t end = 0;
  bool ok = true;
};

class TestCloud {
 public:
  struct Object {
    std::string type;
    AttributeMap attrs;
  };

  /// Objects keyed by id.
  std::map<std::string, Object> objects() const;
  std::vector<CallEvent> events() const;
  int max_in_flight() const { return max_in_flight_.load(); }
  int calls() const { return calls_.load(); }
  void clear_events();

  /// Next create of an object with this name fails.
  void fail_create(const std::string& name);
  /// Next create of this name allocates the object, then reports failure.
  void partial_create(const std::string& name);
  void set_delay_ms(int ms) { delay_ms_ = ms; }

  /// Out-of-band mutation, as if edited outside the engine.
  void erase_by_name(const std::string& name);
  void set_attribute(const std::string& name, const std::string& attr, Value v);

 private:
  friend class TestCloudProvider;

  std::uint64_t begin(const std::string& op);
  void end(const std::string& op, const std::string& name, std::uint64_t start, bool ok);

  mutable std::mutex mu_;
  std::map<std::string, Object> objects_;
  std::uint64_t counter_ = 0;
  std::uint64_t seq_ = 0;
  std::vector<CallEvent> events_;
  std::set<std::string> fail_create_;
  std::set<std::string> partial_create_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
  std::atomic<int> calls_{0};
  std::atomic<int> delay_ms_{0};
};

/// Schema: `testcloud_node` {name req+force_new, value opt, tag opt+force_new,
/// deps opt string-list, size opt integer default 1; id, output computed}
/// and data source `testcloud_lookup` {name req; id, value computed}.
std::unique_ptr<Provider> make_testcloud_provider(std::shared_ptr<TestCloud> cloud);

void register_testcloud(ProviderRegistry& registry, std::shared_ptr<TestCloud> cloud);

}  // namespace microform::testing
