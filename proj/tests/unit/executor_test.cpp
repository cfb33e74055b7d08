#include <gtest/gtest.h>

#include <random>
#include <sstream>
#include <thread>

#include "../support/fixtures.hpp"
#include "../support/testcloud.hpp"
#include "microform/executor.hpp"

using namespace microform;
using namespace microform::testing;

namespace {

/// One working directory, one testcloud and one local state file.
class Rig {
 public:
  Rig() : cloud(std::make_shared<TestCloud>()), backend(dir / "microform.tfstate") {
    register_testcloud(registry, cloud);
  }

  Plan plan(const std::string& text, bool refresh_first = true) {
    write_file(dir / "cfg/main.tf", text);
    doc = std::make_unique<ConfigDocument>(load_directory(dir / "cfg"));
    providers = std::make_unique<ProviderSet>(registry, *doc);
    auto state = backend.read_state();
    auto current = refresh_first ? refresh(state, *providers) : state;
    DataReader reader = [this](const std::string&, const std::string& type, const AttributeMap& cfg) {
      return providers->get(provider_for_type(type))->read_data(type, cfg);
    };
    return diff(*doc, current, providers->schemas(), reader);
  }

  ApplyReport apply_plan(const Plan& p, int parallelism = 10, const std::atomic<bool>* interrupt = nullptr) {
    auto token = backend.lock(LockInfo{"test", LockOperation::Apply, "", ""});
    ApplyOptions opts;
    opts.parallelism = parallelism;
    opts.out = &log;
    opts.interrupt = interrupt;
    auto report = apply(p, *doc, backend, *providers, opts);
    backend.unlock(token);
    return report;
  }

  ApplyReport converge(const std::string& text, int parallelism = 10) { return apply_plan(plan(text), parallelism); }

  /// True when the cloud holds exactly the objects state records.
  ::testing::AssertionResult state_matches_cloud() {
    auto state = backend.read_state();
    auto objects = cloud->objects();
    std::set<std::string> a, b;
    for (const auto& [_, r] : state.resources) a.insert(r.id);
    for (const auto& [id, _] : objects) b.insert(id);
    if (a != b) return ::testing::AssertionFailure() << "state ids and cloud ids differ";
    for (const auto& [_, r] : state.resources)
      if (!(objects.at(r.id).attrs == r.attributes))
        return ::testing::AssertionFailure() << r.address() << " attributes differ from the cloud";
    return ::testing::AssertionSuccess();
  }

  TempDir dir;
  std::shared_ptr<TestCloud> cloud;
  ProviderRegistry registry;
  LocalBackend backend;
  std::unique_ptr<ConfigDocument> doc;
  std::unique_ptr<ProviderSet> providers;
  std::ostringstream log;
};

struct Span {
  std::uint64_t start = UINT64_MAX, end = 0;
};

/// First start and last end of each (op, name) in the trace.
std::map<std::pair<std::string, std::string>, Span> spans(const std::vector<CallEvent>& events) {
  std::map<std::pair<std::string, std::string>, Span> out;
  for (const auto& e : events) {
    auto& s = out[{e.op, e.name}];
    s.start = std::min(s.start, e.start);
    s.end = std::max(s.end, e.end);
  }
  return out;
}

std::string wide_config(int n) {
  DagSpec s;
  for (int i = 0; i < n; ++i) s.ids.push_back(i);
  return render_dag_config(s);
}

}  // namespace

TEST(Executor, AppliesAndConverges) {
  Rig rig;
  const char* text = R"(provider "testcloud" {}
resource "testcloud_node" "a" {
  name  = "a"
  value = "one"
}
resource "testcloud_node" "b" {
  name  = "b"
  value = "after ${testcloud_node.a.output}"
  deps  = [testcloud_node.a.id]
}
)";
  auto report = rig.converge(text);
  EXPECT_TRUE(report.ok());
  EXPECT_EQ(report.added, 2);
  EXPECT_EQ(report.final_serial, 1u);
  auto state = rig.backend.read_state();
  const auto& a = state.resources.at("testcloud_node.a");
  const auto& b = state.resources.at("testcloud_node.b");
  EXPECT_EQ(b.attributes.at("value"), Value("after " + a.id + ":one"));
  EXPECT_EQ(b.dependencies, std::vector<std::string>{"testcloud_node.a"});
  EXPECT_TRUE(rig.state_matches_cloud());
  EXPECT_NE(rig.log.str().find("testcloud_node.a: create... done (" + a.id + ")"), std::string::npos);
  EXPECT_NE(rig.log.str().find("Apply complete: 2 added, 0 changed, 0 destroyed."), std::string::npos);

  auto again = rig.plan(text);
  for (const auto& c : again.changes) EXPECT_EQ(c.action, Action::NoOp) << c.address;
}

TEST(Executor, NoOpPlanMakesNoCalls) {
  Rig rig;
  auto text = wide_config(4);
  rig.converge(text);
  auto p = rig.plan(text, false);
  rig.cloud->clear_events();
  auto before = rig.backend.read_state();
  auto report = rig.apply_plan(p);
  EXPECT_EQ(rig.cloud->calls(), 0);
  EXPECT_TRUE(report.ok());
  EXPECT_EQ(rig.backend.read_state(), before);
}

TEST(Executor, StalePlanIsRefused) {
  Rig rig;
  auto p = rig.plan(wide_config(2));
  rig.converge(wide_config(1));
  rig.cloud->clear_events();
  try {
    rig.apply_plan(p);
    FAIL() << "stale plan applied";
  } catch (const StalePlanError& e) {
    EXPECT_NE(std::string(e.what()).find("plan base 0, current 1"), std::string::npos);
  }
  rig.backend.unlock(rig.backend.current_lock()->token);
  EXPECT_EQ(rig.cloud->calls(), 0);

  Plan other_lineage = rig.plan(wide_config(2));
  other_lineage.base_lineage = "00000000-0000-4000-8000-000000000000";
  EXPECT_THROW(rig.apply_plan(other_lineage), StalePlanError);
}

TEST(Executor, ParallelismIsBounded) {
  for (int p : {1, 2, 4}) {
    Rig rig;
    rig.cloud->set_delay_ms(15);
    auto report = rig.converge(wide_config(10), p);
    EXPECT_TRUE(report.ok());
    EXPECT_EQ(rig.cloud->max_in_flight(), p) << "parallelism " << p;
  }
}

// Random DAG changes: every call starts only after the calls it must follow
// have finished.
TEST(Executor, TraceRespectsDependencies) {
  std::mt19937_64 rng(77);
  for (int round = 0; round < 12; ++round) {
    Rig rig;
    rig.cloud->set_delay_ms(1);
    auto first = random_dag(rng, 8, 0.3);
    rig.converge(render_dag_config(first), 6);
    auto second = mutate_dag(rng, first);
    auto p = rig.plan(render_dag_config(second));
    rig.cloud->clear_events();
    auto report = rig.apply_plan(p, 6);
    ASSERT_TRUE(report.ok()) << round;
    auto sp = spans(rig.cloud->events());
    auto finished = [&](const std::string& name) {
      std::uint64_t e = 0;
      for (const char* op : {"create", "update"})
        if (auto it = sp.find({op, name}); it != sp.end()) e = std::max(e, it->second.end);
      return e;
    };
    for (const auto& [a, b] : second.edges) {
      auto done_b = finished(node_name(b));
      for (const char* op : {"create", "update"})
        if (auto it = sp.find({op, node_name(a)}); it != sp.end() && done_b) {
          EXPECT_LT(done_b, it->second.start) << node_name(a) << " before " << node_name(b);
        }
    }
    for (const auto& [a, b] : first.edges) {
      auto del_b = sp.find({"delete", node_name(b)});
      auto del_a = sp.find({"delete", node_name(a)});
      auto up_a = sp.find({"update", node_name(a)});
      if (del_b == sp.end()) continue;
      const auto* change_b = p.find(node_address(b));
      if (del_a != sp.end()) {
        EXPECT_LT(del_a->second.end, del_b->second.start);
      } else if (up_a != sp.end() && change_b->action == Action::Delete) {
        EXPECT_LT(up_a->second.end, del_b->second.start);
      }
    }
    EXPECT_TRUE(rig.state_matches_cloud()) << round;
    auto again = rig.plan(render_dag_config(second));
    for (const auto& c : again.changes) EXPECT_EQ(c.action, Action::NoOp) << c.address;
  }
}

// A failed create skips exactly its transitive dependents; everything else
// is applied and recorded.
TEST(Executor, FailureSkipsOnlyDescendants) {
  std::mt19937_64 rng(31);
  for (int round = 0; round < 20; ++round) {
    Rig rig;
    auto spec = random_dag(rng, 9, 0.25);
    int victim = std::uniform_int_distribution<int>(0, 8)(rng);
    rig.cloud->fail_create(node_name(victim));
    auto report = rig.converge(render_dag_config(spec), 4);

    auto expect_skipped = descendants(spec, {victim});
    std::set<std::string> skipped(report.skipped.begin(), report.skipped.end());
    std::set<std::string> want_skipped;
    for (int i : expect_skipped) want_skipped.insert(node_address(i));
    EXPECT_EQ(skipped, want_skipped) << round;
    ASSERT_EQ(report.failed.size(), 1u);
    EXPECT_TRUE(report.failed.contains(node_address(victim)));
    EXPECT_EQ(report.succeeded.size(), spec.ids.size() - 1 - expect_skipped.size());

    auto state = rig.backend.read_state();
    EXPECT_EQ(state.resources.size(), report.succeeded.size());
    EXPECT_TRUE(rig.state_matches_cloud());
    EXPECT_NE(rig.log.str().find(node_address(victim) + ": create... failed: injected failure"), std::string::npos);

    auto retry = rig.converge(render_dag_config(spec), 4);
    EXPECT_TRUE(retry.ok());
    EXPECT_EQ(rig.backend.read_state().resources.size(), spec.ids.size());
  }
}

TEST(Executor, PartialCreateIsRecorded) {
  Rig rig;
  rig.cloud->partial_create("n01");
  auto report = rig.converge(wide_config(3));
  EXPECT_EQ(report.failed.size(), 1u);
  auto state = rig.backend.read_state();
  ASSERT_TRUE(state.resources.contains("testcloud_node.n01"));
  EXPECT_TRUE(rig.state_matches_cloud());
  auto p = rig.plan(wide_config(3));
  EXPECT_FALSE(p.summary().any());
}

TEST(Executor, InterruptStopsDispatching) {
  Rig rig;
  rig.cloud->set_delay_ms(40);
  std::atomic<bool> stop{false};
  std::thread trigger([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(60));
    stop = true;
  });
  auto report = rig.apply_plan(rig.plan(wide_config(8)), 1, &stop);
  trigger.join();
  EXPECT_TRUE(report.interrupted);
  EXPECT_TRUE(report.failed.empty());
  EXPECT_FALSE(report.succeeded.empty());
  EXPECT_FALSE(report.skipped.empty());
  EXPECT_EQ(report.succeeded.size() + report.skipped.size(), 8u);
  EXPECT_TRUE(rig.state_matches_cloud());
}

TEST(Executor, ReplaceRecreatesAndUpdatesDependents) {
  Rig rig;
  auto text = [](const std::string& tag) {
    return "provider \"testcloud\" {}\n"
           "resource \"testcloud_node\" \"a\" {\n  name = \"a\"\n  tag = \"" + tag + "\"\n}\n"
           "resource \"testcloud_node\" \"b\" {\n  name = \"b\"\n  deps = [testcloud_node.a.id]\n}\n";
  };
  rig.converge(text("x"));
  auto old_id = rig.backend.read_state().resources.at("testcloud_node.a").id;
  auto p = rig.plan(text("y"));
  EXPECT_EQ(p.find("testcloud_node.a")->action, Action::Replace);
  EXPECT_EQ(p.find("testcloud_node.b")->action, Action::Update);
  auto report = rig.apply_plan(p);
  EXPECT_TRUE(report.ok());
  EXPECT_EQ(report.added, 1);
  EXPECT_EQ(report.destroyed, 1);
  EXPECT_EQ(report.changed, 1);
  auto state = rig.backend.read_state();
  auto new_id = state.resources.at("testcloud_node.a").id;
  EXPECT_NE(new_id, old_id);
  EXPECT_EQ(state.resources.at("testcloud_node.b").attributes.at("deps"), Value(Value::List{Value(new_id)}));
  EXPECT_TRUE(rig.state_matches_cloud());
}

TEST(Executor, ResolveUnknowns) {
  PlannedChange c;
  c.address = "testcloud_node.b";
  c.action = Action::Create;
  c.after = AttributeMap{{"value", Value(Unknown{"\"${testcloud_node.a.output}/${var.env}\""})},
                         {"deps", Value(Value::List{Value("x"), Value(Unknown{"testcloud_node.a.id"})})},
                         {"id", Value(Unknown{})}};
  std::map<std::string, AttributeMap> objects = {
      {"testcloud_node.a", {{"id", Value("tc-7")}, {"output", Value("tc-7:v")}}}};
  auto r = resolve_unknowns(c, objects, {{"env", Value("prod")}});
  EXPECT_EQ(r.after->at("value"), Value("tc-7:v/prod"));
  EXPECT_EQ(r.after->at("deps"), Value(Value::List{Value("x"), Value("tc-7")}));
  EXPECT_EQ(r.after->at("id"), Value(Unknown{}));

  std::map<std::string, AttributeMap> pending = {{"testcloud_node.a", {{"id", Value(Unknown{})}}}};
  EXPECT_THROW(resolve_unknowns(c, pending, {{"env", Value("prod")}}), Error);
}

TEST(Executor, ExecuteChangeExamples) {
  auto cloud = std::make_shared<TestCloud>();
  auto p = make_testcloud_provider(cloud);
  PlannedChange create;
  create.address = "testcloud_node.a";
  create.action = Action::Create;
  create.after = AttributeMap{{"name", Value("a")}, {"value", Value("v")}, {"size", Value(1)},
                              {"id", Value(Unknown{})}, {"output", Value(Unknown{})}};
  auto made = execute_change(create, *p);
  ASSERT_TRUE(made.resource);
  EXPECT_EQ(made.resource->id, "tc-000001");
  EXPECT_EQ(made.resource->attributes.at("output"), Value("tc-000001:v"));
  EXPECT_TRUE(made.resource->attributes.at("tag").is_null());

  PlannedChange update = create;
  update.action = Action::Update;
  update.before = made.resource->attributes;
  update.after->at("value") = Value("w");
  EXPECT_EQ(execute_change(update, *p).resource->attributes.at("output"), Value("tc-000001:w"));

  PlannedChange replace = update;
  replace.action = Action::Replace;
  (*replace.after)["tag"] = Value("t");
  auto rep = execute_change(replace, *p);
  EXPECT_EQ(rep.resource->id, "tc-000002");
  EXPECT_EQ(cloud->objects().size(), 1u);

  PlannedChange read;
  read.address = "data.testcloud_lookup.q";
  read.action = Action::Read;
  read.after = AttributeMap{{"name", Value("a")}, {"id", Value(Unknown{})}, {"value", Value(Unknown{})}};
  auto data = execute_change(read, *p).data;
  EXPECT_EQ(data.at("id"), Value("tc-000002"));

  PlannedChange del;
  del.address = "testcloud_node.a";
  del.action = Action::Delete;
  del.before = rep.resource->attributes;
  EXPECT_FALSE(execute_change(del, *p).resource);
  EXPECT_TRUE(cloud->objects().empty());

  PlannedChange unresolved = create;
  unresolved.after->at("value") = Value(Unknown{"testcloud_node.z.id"});
  EXPECT_THROW(execute_change(unresolved, *p), Error);
}

TEST(Executor, MiniClusterAgainstMockCloud) {
  MockCloudHarness h;
  TempDir dir;
  LocalBackend backend(dir / "s.tfstate");
  auto doc = load_directory(fixture_path("mini_cluster"), {{"endpoint", Value(h.endpoint())}});
  auto registry = builtin_registry(dir.path());
  ProviderSet providers(registry, doc);
  auto plan = diff(doc, backend.read_state(), providers.schemas());
  auto token = backend.lock(LockInfo{"t", LockOperation::Apply, "", ""});
  auto report = apply(plan, doc, backend, providers, {});
  EXPECT_TRUE(report.ok()) << (report.failed.empty() ? "" : report.failed.begin()->second);
  EXPECT_EQ(report.added, 7);
  EXPECT_EQ(h.cloud().object_count(), 7u);
  EXPECT_TRUE(h.cloud().integrity_violations().empty());

  auto destroy = plan_destroy(backend.read_state());
  auto gone = apply(destroy, doc, backend, providers, {});
  EXPECT_TRUE(gone.ok());
  EXPECT_EQ(gone.destroyed, 7);
  EXPECT_EQ(h.cloud().object_count(), 0u);
  backend.unlock(token);
}

TEST(Executor, ReplaceUnderDeletedDependentDoesNotDeadlock) {
  Rig rig;
  ASSERT_TRUE(rig.converge(R"(provider "testcloud" {}
resource "testcloud_node" "b" {
  name = "b"
  tag  = "one"
}
resource "testcloud_node" "d" {
  name = "d"
  deps = [testcloud_node.b.id]
}
resource "testcloud_node" "a" {
  name = "a"
  deps = [testcloud_node.d.id]
}
)").ok());
  const char* next = R"(provider "testcloud" {}
resource "testcloud_node" "b" {
  name = "b"
  tag  = "two"
}
resource "testcloud_node" "a" {
  name = "a"
  deps = [testcloud_node.b.id]
}
)";
  auto p = rig.plan(next);
  std::map<std::string, Action> actions;
  for (const auto& c : p.changes) actions[c.address] = c.action;
  EXPECT_EQ(actions["testcloud_node.b"], Action::Replace);
  EXPECT_EQ(actions["testcloud_node.a"], Action::Update);
  EXPECT_EQ(actions["testcloud_node.d"], Action::Delete);
  auto report = rig.apply_plan(p, 4);
  EXPECT_TRUE(report.ok());
  EXPECT_TRUE(rig.state_matches_cloud());
  for (const auto& c : rig.plan(next).changes) EXPECT_EQ(c.action, Action::NoOp) << c.address;
}
