#include "microform/executor.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <set>
#include <thread>

#include "microform/graph.hpp"

namespace microform {

namespace {

std::string joined(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "; " : "") + v[i];
  return out;
}

Value resolve_value(const Value& v, const EvalContext& ctx) {
  if (v.is_unknown()) {
    const auto& origin = v.as_unknown().origin;
    if (origin.empty()) return v;
    Value r = evaluate(parse_expression(origin), ctx);
    if (r.contains_unknown()) throw Error("value of " + origin + " is still unknown");
    return r;
  }
  if (v.is_list()) {
    Value::List out;
    for (const auto& x : v.as_list()) out.push_back(resolve_value(x, ctx));
    return Value(std::move(out));
  }
  if (v.is_map()) {
    Value::Map out;
    for (const auto& [k, x] : v.as_map()) out[k] = resolve_value(x, ctx);
    return Value(std::move(out));
  }
  return v;
}

struct Target {
  ResourceAddress addr;
  std::string provider;
};

Target target_of(const PlannedChange& c) {
  Target t{ResourceAddress::parse(c.address), {}};
  t.provider = provider_for_type(t.addr.type);
  return t;
}

const TypeSchema& type_schema(Provider& p, const ResourceAddress& a, ProviderSchema& holder) {
  holder = p.schema();
  const TypeSchema* s = a.category == ResourceAddress::Category::Data ? holder.data(a.type) : holder.resource(a.type);
  if (s == nullptr) throw ProviderError(ProviderError::Kind::Validation, "unsupported type '" + a.type + "'");
  return *s;
}

/// Configuration attributes to send: every non-computed schema attribute.
AttributeMap request_attributes(const TypeSchema& schema, const AttributeMap& after) {
  AttributeMap req;
  for (const auto& spec : schema) {
    if (spec.mode == AttrMode::Computed) continue;
    auto it = after.find(spec.name);
    Value v = it == after.end() ? Value() : it->second;
    if (v.contains_unknown()) throw Error("attribute " + spec.name + " is unknown at apply time");
    req[spec.name] = std::move(v);
  }
  return req;
}

std::string prior_id(const PlannedChange& c) {
  if (c.before) {
    auto it = c.before->find("id");
    if (it != c.before->end() && it->second.is_string()) return it->second.as_string();
  }
  throw Error(c.address + ": prior state has no id");
}

void check_returned(const TypeSchema& schema, const AttributeMap& attrs, const std::string& what) {
  if (auto p = check_returned_attributes(schema, attrs); !p.empty())
    throw ProviderError(ProviderError::Kind::Internal, what + " returned attributes violating schema: " + joined(p));
}

void do_delete(const PlannedChange& c, const Target& t, Provider& p) { p.remove(t.addr.type, prior_id(c)); }

ResourceState do_create(const PlannedChange& c, const Target& t, Provider& p) {
  ProviderSchema holder;
  const auto& schema = type_schema(p, t.addr, holder);
  auto req = request_attributes(schema, *c.after);
  if (auto problems = p.validate(t.addr.type, req); !problems.empty())
    throw ProviderError(ProviderError::Kind::Validation, joined(problems));
  auto result = p.create(t.addr.type, req);
  check_returned(schema, result.attributes, "create");
  return ResourceState{t.addr.type, t.addr.name, t.provider, result.id,
                       normalize_attributes(schema, std::move(result.attributes)), {}};
}

ResourceState do_update(const PlannedChange& c, const Target& t, Provider& p) {
  ProviderSchema holder;
  const auto& schema = type_schema(p, t.addr, holder);
  auto req = request_attributes(schema, *c.after);
  if (auto problems = p.validate(t.addr.type, req); !problems.empty())
    throw ProviderError(ProviderError::Kind::Validation, joined(problems));
  auto id = prior_id(c);
  auto attrs = p.update(t.addr.type, id, req);
  check_returned(schema, attrs, "update");
  attrs = normalize_attributes(schema, std::move(attrs));
  if (auto it = attrs.find("id"); it != attrs.end() && it->second.is_string()) id = it->second.as_string();
  return ResourceState{t.addr.type, t.addr.name, t.provider, id, std::move(attrs), {}};
}

AttributeMap do_read(const PlannedChange& c, const Target& t, Provider& p) {
  ProviderSchema holder;
  const auto& schema = type_schema(p, t.addr, holder);
  auto attrs = p.read_data(t.addr.type, request_attributes(schema, *c.after));
  check_returned(schema, attrs, "read");
  return normalize_attributes(schema, std::move(attrs));
}

}  // namespace

PlannedChange resolve_unknowns(const PlannedChange& change, const std::map<std::string, AttributeMap>& objects,
                               const std::map<std::string, Value>& variables) {
  PlannedChange out = change;
  if (!out.after) return out;
  EvalContext ctx;
  ctx.variables = variables;
  ctx.objects = objects;
  for (auto& [k, v] : *out.after) {
    try {
      v = resolve_value(v, ctx);
    } catch (const std::exception& e) {
      throw Error(change.address + "." + k + ": " + e.what());
    }
  }
  return out;
}

ChangeResult execute_change(const PlannedChange& change, Provider& provider) {
  auto t = target_of(change);
  ChangeResult r;
  switch (change.action) {
    case Action::Create: r.resource = do_create(change, t, provider); break;
    case Action::Update: r.resource = do_update(change, t, provider); break;
    case Action::Replace:
      do_delete(change, t, provider);
      r.resource = do_create(change, t, provider);
      break;
    case Action::Delete: do_delete(change, t, provider); break;
    case Action::Read: r.data = do_read(change, t, provider); break;
    case Action::NoOp: break;
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

enum class NodeState { Waiting, Running, Done, Failed, Skipped };

struct Node {
  const PlannedChange* change = nullptr;
  bool is_delete = false;
  std::vector<std::size_t> waiters;
  std::size_t pending = 0;
  NodeState state = NodeState::Waiting;
};

class Walk {
 public:
  Walk(const Plan& plan, const ConfigDocument& doc, ProviderSet& providers, StateSnapshot working,
       const ApplyOptions& opts)
      : doc_(doc), providers_(providers), working_(std::move(working)), opts_(opts) {
    for (const auto& c : plan.changes) by_addr_[c.address] = &c;
    build(plan);
  }

  void run(ApplyReport& report);
  StateSnapshot& working() { return working_; }
  /// Called with the in-memory state after every failed change.
  void on_failure(std::function<void(const StateSnapshot&)> f) { checkpoint_ = std::move(f); }

 private:
  void build(const Plan& plan);
  void edge(std::size_t before, std::size_t after);
  bool reaches(std::size_t from, std::size_t to) const;
  void check_acyclic() const;
  std::vector<std::string> state_dependencies(const std::string& addr);
  void work();
  void finish(std::size_t idx, bool ok, const std::string& error, ChangeResult result);
  void skip_descendants(std::size_t idx);
  void emit(const std::string& line);
  bool stopped() const { return opts_.interrupt && opts_.interrupt->load(); }

  const ConfigDocument& doc_;
  ProviderSet& providers_;
  StateSnapshot working_;
  const ApplyOptions& opts_;
  std::map<std::string, const PlannedChange*> by_addr_;
  DependencyGraph config_graph_;

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> create_node_, delete_node_;
  std::set<std::pair<std::string, std::size_t>> ready_;
  std::size_t remaining_ = 0;
  std::size_t running_ = 0;

  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, AttributeMap> data_;
  std::map<std::string, std::string> errors_;
  std::set<std::string> partial_;
  std::mutex out_mu_;
  std::function<void(const StateSnapshot&)> checkpoint_;
};

void Walk::edge(std::size_t before, std::size_t after) {
  nodes_[before].waiters.push_back(after);
  ++nodes_[after].pending;
}

bool Walk::reaches(std::size_t from, std::size_t to) const {
  std::vector<bool> seen(nodes_.size());
  std::vector<std::size_t> stack{from};
  while (!stack.empty()) {
    auto i = stack.back();
    stack.pop_back();
    if (i == to) return true;
    if (seen[i]) continue;
    seen[i] = true;
    stack.insert(stack.end(), nodes_[i].waiters.begin(), nodes_[i].waiters.end());
  }
  return false;
}

void Walk::check_acyclic() const {
  std::vector<std::size_t> pending(nodes_.size());
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if ((pending[i] = nodes_[i].pending) == 0) ready.push_back(i);
  std::size_t done = 0;
  while (!ready.empty()) {
    auto i = ready.back();
    ready.pop_back();
    ++done;
    for (auto w : nodes_[i].waiters)
      if (--pending[w] == 0) ready.push_back(w);
  }
  if (done != nodes_.size()) throw Error("plan cannot be ordered: its changes depend on each other in a cycle");
}

std::vector<std::string> Walk::state_dependencies(const std::string& addr) {
  std::set<std::string> out;
  std::vector<std::string> stack{addr};
  std::set<std::string> seen;
  while (!stack.empty()) {
    auto cur = stack.back();
    stack.pop_back();
    for (const auto& d : config_graph_.dependencies(cur)) {
      if (!seen.insert(d).second) continue;
      if (ResourceAddress::parse(d).category == ResourceAddress::Category::Data)
        stack.push_back(d);
      else
        out.insert(d);
    }
  }
  return {out.begin(), out.end()};
}

void Walk::build(const Plan& plan) {
  if (!plan.is_destroy) config_graph_ = build_graph(doc_);
  for (const auto& c : plan.changes) {
    if (c.action == Action::NoOp) continue;
    if (c.action == Action::Delete || c.action == Action::Replace) {
      delete_node_[c.address] = nodes_.size();
      nodes_.push_back(Node{&c, true, {}, 0, NodeState::Waiting});
    }
    if (c.action != Action::Delete) {
      create_node_[c.address] = nodes_.size();
      nodes_.push_back(Node{&c, false, {}, 0, NodeState::Waiting});
    }
  }
  for (const auto& [addr, d] : delete_node_)
    if (auto it = create_node_.find(addr); it != create_node_.end()) edge(d, it->second);
  for (const auto& [addr, c] : create_node_)
    for (const auto& dep : config_graph_.contains(addr) ? config_graph_.dependencies(addr) : std::vector<std::string>{})
      if (auto it = create_node_.find(dep); it != create_node_.end()) edge(it->second, c);
  // Deletions wait for the deletion of everything that depended on the doomed
  // object in the prior state.
  std::vector<std::pair<std::size_t, std::size_t>> preferred;
  for (const auto& [addr, r] : working_.resources) {
    for (const auto& dep : r.dependencies) {
      auto d = delete_node_.find(dep);
      if (d == delete_node_.end() || dep == addr) continue;
      if (auto own = delete_node_.find(addr); own != delete_node_.end()) {
        edge(own->second, d->second);
      } else if (auto up = create_node_.find(addr);
                 up != create_node_.end() && by_addr_.at(addr)->action == Action::Update &&
                 by_addr_.at(dep)->action == Action::Delete) {
        preferred.emplace_back(up->second, d->second);
      }
    }
  }
  // Updating a dependent before deleting what it referenced is only added
  // where it cannot close a cycle.
  for (const auto& [up, del] : preferred)
    if (!reaches(del, up)) edge(up, del);
  check_acyclic();
  remaining_ = nodes_.size();
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].pending == 0) ready_.emplace(nodes_[i].change->address + (nodes_[i].is_delete ? "\x01" : "\x02"), i);
}

void Walk::emit(const std::string& line) {
  if (!opts_.out) return;
  std::lock_guard lock(out_mu_);
  *opts_.out << line << "\n" << std::flush;
}

void Walk::skip_descendants(std::size_t idx) {
  std::vector<std::size_t> stack(nodes_[idx].waiters.begin(), nodes_[idx].waiters.end());
  while (!stack.empty()) {
    auto i = stack.back();
    stack.pop_back();
    if (nodes_[i].state != NodeState::Waiting) continue;
    nodes_[i].state = NodeState::Skipped;
    ready_.erase({nodes_[i].change->address + (nodes_[i].is_delete ? "\x01" : "\x02"), i});
    --remaining_;
    stack.insert(stack.end(), nodes_[i].waiters.begin(), nodes_[i].waiters.end());
  }
}

void Walk::finish(std::size_t idx, bool ok, const std::string& error, ChangeResult result) {
  Node& n = nodes_[idx];
  const auto& c = *n.change;
  --running_;
  --remaining_;
  if (!ok) {
    n.state = NodeState::Failed;
    errors_[c.address] = error;
    if (result.resource) {
      working_.resources[c.address] = std::move(*result.resource);
      partial_.insert(c.address);
    }
    skip_descendants(idx);
    if (checkpoint_) checkpoint_(working_);
    return;
  }
  n.state = NodeState::Done;
  if (n.is_delete) {
    working_.resources.erase(c.address);
  } else if (c.action == Action::Read) {
    data_[c.address] = std::move(result.data);
  } else if (result.resource) {
    result.resource->dependencies = state_dependencies(c.address);
    working_.resources[c.address] = std::move(*result.resource);
  }
  for (auto w : n.waiters)
    if (--nodes_[w].pending == 0 && nodes_[w].state == NodeState::Waiting)
      ready_.emplace(nodes_[w].change->address + (nodes_[w].is_delete ? "\x01" : "\x02"), w);
}

void Walk::work() {
  std::unique_lock lock(mu_);
  while (true) {
    cv_.wait(lock, [&] { return remaining_ == 0 || (!ready_.empty() && !stopped()) || (stopped() && running_ == 0); });
    if (remaining_ == 0) break;
    if (stopped()) {
      if (running_ > 0) continue;
      for (auto& n : nodes_)
        if (n.state == NodeState::Waiting) n.state = NodeState::Skipped, --remaining_;
      ready_.clear();
      cv_.notify_all();
      break;
    }
    auto idx = ready_.begin()->second;
    ready_.erase(ready_.begin());
    Node& n = nodes_[idx];
    n.state = NodeState::Running;
    ++running_;
    const PlannedChange& change = *n.change;
    bool is_delete = n.is_delete;

    std::map<std::string, AttributeMap> objects = data_;
    for (const auto& [addr, r] : working_.resources) objects[addr] = r.attributes;
    lock.unlock();

    ChangeResult result;
    std::string error;
    bool ok = true;
    auto t = target_of(change);
    try {
      auto provider = providers_.get(t.provider);
      if (is_delete) {
        do_delete(change, t, *provider);
      } else {
        auto resolved = resolve_unknowns(change, objects, doc_.variables);
        switch (change.action) {
          case Action::Update: result.resource = do_update(resolved, t, *provider); break;
          case Action::Read: result.data = do_read(resolved, t, *provider); break;
          default: result.resource = do_create(resolved, t, *provider); break;
        }
      }
    } catch (const PartialCreateError& e) {
      ok = false;
      error = e.what();
      ProviderSchema holder;
      try {
        auto provider = providers_.get(t.provider);
        const auto& schema = type_schema(*provider, t.addr, holder);
        result.resource = ResourceState{t.addr.type, t.addr.name, t.provider, e.id(),
                                        normalize_attributes(schema, e.attributes()), {}};
      } catch (const std::exception&) {
      }
    } catch (const std::exception& e) {
      ok = false;
      error = e.what();
    }

    std::string verb = is_delete ? "delete" : std::string(action_name(change.action));
    if (ok) {
      std::string id = is_delete ? prior_id(change)
                       : result.resource ? result.resource->id
                                         : std::string();
      bool last = !(is_delete && change.action == Action::Replace);
      if (last)
        emit(change.address + ": " + std::string(action_name(change.action)) + "... done" +
             (id.empty() ? "" : " (" + id + ")"));
    } else {
      emit(change.address + ": " + verb + "... failed: " + error);
    }

    lock.lock();
    finish(idx, ok, error, std::move(result));
    cv_.notify_all();
  }
}


void Walk::run(ApplyReport& report) {
  int workers = std::max(1, opts_.parallelism);
  workers = static_cast<int>(std::min<std::size_t>(workers, std::max<std::size_t>(1, nodes_.size())));
  std::vector<std::thread> pool;
  for (int i = 0; i < workers; ++i) pool.emplace_back([this] { work(); });
  for (auto& t : pool) t.join();
  report.interrupted = stopped();

  std::map<std::string, std::vector<NodeState>> per_addr;
  for (const auto& n : nodes_) per_addr[n.change->address].push_back(n.state);
  for (const auto& [addr, states] : per_addr) {
    auto action = by_addr_.at(addr)->action;
    if (auto e = errors_.find(addr); e != errors_.end()) {
      report.failed[addr] = e->second;
    } else if (std::all_of(states.begin(), states.end(), [](NodeState s) { return s == NodeState::Done; })) {
      report.succeeded.push_back(addr);
      if (action == Action::Create) ++report.added;
      if (action == Action::Update) ++report.changed;
      if (action == Action::Delete) ++report.destroyed;
      if (action == Action::Replace) ++report.added, ++report.destroyed;
    } else {
      report.skipped.push_back(addr);
    }
  }
}

}  // namespace

ApplyReport apply(const Plan& plan, const ConfigDocument& doc, StateBackend& backend, ProviderSet& providers,
                  const ApplyOptions& opts) {
  auto started = std::chrono::steady_clock::now();
  StateSnapshot stored = backend.read_state();
  bool fresh = stored.serial == 0 && stored.resources.empty();
  if (stored.serial != plan.base_serial || (!fresh && stored.lineage != plan.base_lineage))
    throw StalePlanError("plan is stale: state serial changed (plan base " + std::to_string(plan.base_serial) +
                         ", current " + std::to_string(stored.serial) + "); re-run plan");
  if (fresh) stored.lineage = plan.base_lineage;

  for (const auto& c : plan.changes) {
    if (c.action == Action::NoOp) continue;
    providers.get(target_of(c).provider);
  }

  StateSnapshot working = stored;
  for (auto it = working.resources.begin(); it != working.resources.end();) {
    if (plan.find(it->first) == nullptr)
      it = working.resources.erase(it);
    else
      ++it;
  }
  for (const auto& c : plan.changes) {
    if (c.action != Action::NoOp) continue;
    auto it = working.resources.find(c.address);
    if (it == working.resources.end()) continue;
    if (c.before) it->second.attributes = *c.before;
  }

  StateSnapshot persisted = stored;
  std::optional<std::string> write_error;
  auto persist = [&](const StateSnapshot& s) {
    if (write_error) return;
    StateSnapshot snap = s;
    snap.serial = persisted.serial;
    if (snap == persisted) return;
    try {
      snap.serial = backend.write_state(snap, persisted.serial);
      persisted = std::move(snap);
    } catch (const std::exception& e) {
      write_error = e.what();
    }
  };

  Walk walk(plan, doc, providers, working, opts);
  walk.on_failure(persist);
  ApplyReport report;
  walk.run(report);
  persist(walk.working());
  report.final_serial = persisted.serial;
  if (write_error) {
    report.write_error = write_error;
    for (const auto& addr : report.succeeded) {
      auto want = walk.working().resources.find(addr);
      auto have = persisted.resources.find(addr);
      bool same = (want == walk.working().resources.end()) == (have == persisted.resources.end()) &&
                  (want == walk.working().resources.end() || want->second == have->second);
      if (!same) report.unpersisted.push_back(addr);
    }
  }
  report.duration_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (opts.out)
    *opts.out << "Apply complete: " << report.added << " added, " << report.changed << " changed, "
              << report.destroyed << " destroyed.\n";
  return report;
}

}  // namespace microform
