#include "microform/cli.hpp"

#include <unistd.h>

#include <cstdlib>
#include <iostream>
#include <memory>

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "microform/config.hpp"
#include "microform/executor.hpp"
#include "microform/graph.hpp"
#include "microform/planner.hpp"
#include "microform/state.hpp"
#include "microform/util.hpp"

namespace microform::cli {

namespace fs = std::filesystem;

namespace {

bool parse_bool(const std::string& flag, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("invalid value for -" + flag + ": " + v);
}

std::string holder_name() {
  char host[256] = {0};
  gethostname(host, sizeof(host) - 1);
  const char* user = std::getenv("USER");
  return std::string(user ? user : "unknown") + "@" + host + ":" + std::to_string(getpid());
}

/// Holds the state lock for one command and releases it on every exit path.
class LockGuard {
 public:
  LockGuard(StateBackend& backend, LockOperation op, spdlog::logger& log) : backend_(backend), log_(log) {
    LockInfo info;
    info.holder = holder_name();
    info.operation = op;
    info.acquired_at = utc_timestamp();
    token_ = backend_.lock(info);
    log_.debug("acquired state lock {}", token_);
  }
  ~LockGuard() {
    try {
      backend_.unlock(token_);
      log_.debug("released state lock {}", token_);
    } catch (const std::exception& e) {
      log_.error("failed to release state lock {}: {}", token_, e.what());
    }
  }
  LockGuard(const LockGuard&) = delete;
  LockGuard& operator=(const LockGuard&) = delete;

 private:
  StateBackend& backend_;
  spdlog::logger& log_;
  std::string token_;
};

class Session {
 public:
  Session(CliConfig cfg, std::istream& in, std::ostream& out, std::ostream& err, const RunOptions& opts)
      : cfg_(std::move(cfg)), in_(in), out_(out), err_(err), opts_(opts) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err_);
    sink->set_pattern("[%l] %v");
    log_ = std::make_shared<spdlog::logger>("microform", sink);
    const char* level = std::getenv("MICROFORM_LOG");
    log_->set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
    if (!opts_.registry) {
      owned_registry_ = std::make_unique<ProviderRegistry>(builtin_registry(cfg_.working_dir));
      registry_ = owned_registry_.get();
    } else {
      registry_ = opts_.registry;
    }
  }

  int dispatch();

 private:
  std::unique_ptr<StateBackend> backend();
  ConfigDocument load();
  bool confirm(const std::string& question);
  int cmd_validate();
  int cmd_plan();
  int cmd_apply();
  int cmd_destroy();
  int cmd_graph();
  int cmd_state();
  int cmd_force_unlock();
  int finish_apply(const ApplyReport& report);
  std::map<std::string, ProviderSchema> schemas(const ConfigDocument& doc);
  Plan make_plan(const ConfigDocument& doc, const StateSnapshot& stored, ProviderSet& providers);

  CliConfig cfg_;
  std::istream& in_;
  std::ostream& out_;
  std::ostream& err_;
  const RunOptions& opts_;
  std::shared_ptr<spdlog::logger> log_;
  std::unique_ptr<ProviderRegistry> owned_registry_;
  const ProviderRegistry* registry_ = nullptr;
};

std::unique_ptr<StateBackend> Session::backend() {
  if (cfg_.backend_url) return std::make_unique<HttpBackend>(*cfg_.backend_url);
  fs::path file = cfg_.state_file.value_or("microform.tfstate");
  if (file.is_relative()) file = cfg_.working_dir / file;
  return std::make_unique<LocalBackend>(file);
}

ConfigDocument Session::load() {
  auto doc = load_directory(cfg_.working_dir, cfg_.var_overrides);
  log_->debug("loaded {} configuration files from {}", doc.source_files.size(), cfg_.working_dir.string());
  return doc;
}

bool Session::confirm(const std::string& question) {
  if (cfg_.auto_approve) return true;
  out_ << "\n" << question << "\n  Only 'yes' will be accepted to approve.\n\n  Enter a value: " << std::flush;
  std::string line;
  if (!std::getline(in_, line)) line.clear();
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line == "yes") return true;
  err_ << "Error: apply cancelled\n";
  return false;
}

std::map<std::string, ProviderSchema> Session::schemas(const ConfigDocument& doc) {
  std::map<std::string, ProviderSchema> out;
  for (const auto& n : doc.provider_names()) {
    if (!registry_->has(n)) throw Error("unknown provider '" + n + "'");
    out.emplace(n, registry_->schema(n));
  }
  return out;
}

Plan Session::make_plan(const ConfigDocument& doc, const StateSnapshot& stored, ProviderSet& providers) {
  StateSnapshot base = stored;
  if (cfg_.refresh && !stored.resources.empty()) {
    log_->info("refreshing {} resources", stored.resources.size());
    base = refresh(stored, providers);
  }
  auto reader = [&](const std::string&, const std::string& type, const AttributeMap& config) {
    return providers.get(provider_for_type(type))->read_data(type, config);
  };
  Plan plan = diff(doc, base, schemas(doc), reader);
  plan.base_serial = stored.serial;
  plan.base_lineage = stored.lineage;
  // Resources the refresh found missing but no change covers must still be
  // forgotten by apply; apply drops any state entry absent from the plan.
  return plan;
}

int Session::cmd_validate() {
  auto doc = load();
  auto graph = build_graph(doc);
  if (auto cycle = detect_cycles(graph)) throw CycleError(*cycle);
  diff(doc, StateSnapshot::empty(), schemas(doc));
  out_ << "Success! The configuration is valid.\n";
  return 0;
}

int Session::cmd_plan() {
  auto doc = load();
  auto be = backend();
  LockGuard lock(*be, LockOperation::Plan, *log_);
  auto stored = be->read_state();
  ProviderSet providers(*registry_, doc);
  Plan plan = make_plan(doc, stored, providers);
  out_ << render_plan(plan);
  if (cfg_.out_file) {
    save_plan(plan, *cfg_.out_file);
    out_ << "Saved the plan to: " << cfg_.out_file->string() << "\n";
  }
  if (cfg_.detailed_exitcode && plan.summary().any()) return 2;
  return 0;
}

int Session::finish_apply(const ApplyReport& report) {
  if (report.interrupted) err_ << "Error: apply interrupted; remaining changes were not started\n";
  for (const auto& [addr, e] : report.failed) err_ << "Error: " << addr << ": " << e << "\n";
  for (const auto& addr : report.skipped) err_ << "Skipped: " << addr << "\n";
  if (report.write_error) {
    err_ << "Error: failed to persist state: " << *report.write_error << "\n";
    for (const auto& addr : report.unpersisted) err_ << "  not recorded: " << addr << "\n";
  }
  return report.ok() ? 0 : 1;
}

int Session::cmd_apply() {
  ApplyOptions aopts;
  aopts.parallelism = cfg_.parallelism;
  aopts.out = &out_;
  aopts.interrupt = opts_.interrupt;

  if (cfg_.command.size() > 2) throw Error("apply takes at most one plan file argument");
  auto doc = load();
  auto be = backend();
  LockGuard lock(*be, LockOperation::Apply, *log_);
  ProviderSet providers(*registry_, doc);
  if (cfg_.command.size() == 2) {
    Plan plan = load_plan(cfg_.command[1]);
    return finish_apply(apply(plan, doc, *be, providers, aopts));
  }
  auto stored = be->read_state();
  Plan plan = make_plan(doc, stored, providers);
  out_ << render_plan(plan);
  if (plan.summary().any() && !confirm("Do you want to perform these actions?")) return 1;
  return finish_apply(apply(plan, doc, *be, providers, aopts));
}

int Session::cmd_destroy() {
  ApplyOptions aopts;
  aopts.parallelism = cfg_.parallelism;
  aopts.out = &out_;
  aopts.interrupt = opts_.interrupt;

  auto doc = load();
  auto be = backend();
  LockGuard lock(*be, LockOperation::Destroy, *log_);
  ProviderSet providers(*registry_, doc);
  auto stored = be->read_state();
  StateSnapshot base = cfg_.refresh ? refresh(stored, providers) : stored;
  Plan plan = plan_destroy(base);
  plan.base_serial = stored.serial;
  plan.base_lineage = stored.lineage;
  out_ << render_plan(plan);
  if (plan.summary().any() && !confirm("Do you really want to destroy all resources?")) return 1;
  return finish_apply(apply(plan, doc, *be, providers, aopts));
}

int Session::cmd_graph() {
  auto doc = load();
  auto graph = build_graph(doc);
  if (auto cycle = detect_cycles(graph)) throw CycleError(*cycle);
  out_ << render_dot(cfg_.destroy_graph ? reverse(graph) : graph);
  return 0;
}

int Session::cmd_state() {
  if (cfg_.command.size() < 2) throw Error("usage: state list | state show <address>");
  auto be = backend();
  auto snap = be->read_state();
  const auto& sub = cfg_.command[1];
  if (sub == "list") {
    if (cfg_.command.size() != 2) throw Error("usage: state list");
    for (const auto& [addr, _] : snap.resources) out_ << addr << "\n";
    return 0;
  }
  if (sub == "show") {
    if (cfg_.command.size() != 3) throw Error("usage: state show <address>");
    auto it = snap.resources.find(cfg_.command[2]);
    if (it == snap.resources.end()) throw Error("no resource " + cfg_.command[2] + " in state");
    StateSnapshot one;
    one.resources.emplace(it->first, it->second);
    auto j = nlohmann::ordered_json::parse(serialize_state(one));
    out_ << j["resources"][0].dump(2) << "\n";
    return 0;
  }
  throw Error("unknown state subcommand '" + sub + "'");
}

int Session::cmd_force_unlock() {
  if (cfg_.command.size() != 2) throw Error("usage: force-unlock <token>");
  auto be = backend();
  be->unlock(cfg_.command[1]);
  out_ << "State lock released.\n";
  return 0;
}

int Session::dispatch() {
  if (cfg_.command.empty()) throw Error("missing command; expected validate | plan | apply | destroy | graph | state | force-unlock");
  const auto& c = cfg_.command[0];
  auto no_args = [&] {
    if (cfg_.command.size() != 1) throw Error(c + " takes no positional arguments");
  };
  if (c == "validate") return no_args(), cmd_validate();
  if (c == "plan") return no_args(), cmd_plan();
  if (c == "apply") return cmd_apply();
  if (c == "destroy") return no_args(), cmd_destroy();
  if (c == "graph") return no_args(), cmd_graph();
  if (c == "state") return cmd_state();
  if (c == "force-unlock") return cmd_force_unlock();
  throw Error("unknown command '" + c + "'");
}

}  // namespace

CliConfig parse_args(const std::vector<std::string>& args) {
  CliConfig cfg;
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string a = args[i];
    if (a.size() < 2 || a[0] != '-') {
      cfg.command.push_back(a);
      continue;
    }
    a.erase(0, a.rfind("--", 0) == 0 ? 2 : 1);
    std::string name = a, value;
    bool has_value = false;
    if (auto eq = a.find('='); eq != std::string::npos) {
      name = a.substr(0, eq);
      value = a.substr(eq + 1);
      has_value = true;
    }
    auto need = [&] {
      if (!has_value) throw Error("flag -" + name + " requires a value (-" + name + "=...)");
      return value;
    };
    if (name == "chdir") {
      cfg.working_dir = need();
    } else if (name == "state") {
      cfg.state_file = need();
    } else if (name == "backend") {
      if (need() == "http") {
        if (!cfg.backend_url) cfg.backend_url = "";
      } else if (value != "local") {
        throw Error("unknown backend '" + value + "'");
      }
    } else if (name == "backend-url") {
      cfg.backend_url = need();
    } else if (name == "var") {
      std::string kv = has_value ? value : (i + 1 < args.size() ? args[++i] : throw Error("-var requires NAME=VALUE"));
      auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw Error("-var expects NAME=VALUE, got '" + kv + "'");
      cfg.var_overrides[kv.substr(0, eq)] = parse_var_value(kv.substr(eq + 1));
    } else if (name == "refresh") {
      cfg.refresh = has_value ? parse_bool(name, value) : true;
    } else if (name == "parallelism") {
      try {
        std::size_t pos = 0;
        cfg.parallelism = std::stoi(need(), &pos);
        if (pos != value.size()) throw Error("");
      } catch (const std::exception&) {
        throw Error("invalid value for -parallelism: " + value);
      }
      if (cfg.parallelism < 1) throw Error("-parallelism must be at least 1");
    } else if (name == "auto-approve") {
      cfg.auto_approve = has_value ? parse_bool(name, value) : true;
    } else if (name == "out") {
      cfg.out_file = need();
    } else if (name == "detailed-exitcode") {
      cfg.detailed_exitcode = has_value ? parse_bool(name, value) : true;
    } else if (name == "destroy") {
      cfg.destroy_graph = has_value ? parse_bool(name, value) : true;
    } else {
      throw Error("unknown flag -" + name);
    }
  }
  if (cfg.backend_url && cfg.backend_url->empty()) throw Error("-backend=http requires -backend-url=URL");
  if (cfg.backend_url && cfg.state_file) throw Error("-state and -backend=http are mutually exclusive");
  return cfg;
}

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err,
        const RunOptions& opts) {
  try {
    Session s(parse_args(args), in, out, err, opts);
    return s.dispatch();
  } catch (const std::exception& e) {
    err << "Error: " << e.what() << "\n";
  }
  return 1;
}

}  // namespace microform::cli
