#include "fixtures.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace microform::testing {

fs::path fixture_path(const std::string& relative) { return fs::path(MICROFORM_FIXTURES) / relative; }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

TempDir::TempDir() {
  std::string tmpl = (fs::temp_directory_path() / "microform-test-XXXXXX").string();
  if (mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

MockCloudHarness::MockCloudHarness(bool integrity_sweep)
    : cloud_(std::make_unique<mockcloud::MockCloud>(mockcloud::MockCloud::Options{integrity_sweep})),
      server_(std::make_unique<mockcloud::Server>(*cloud_)) {
  server_->start("127.0.0.1", 0);
}

MockCloudHarness::~MockCloudHarness() { server_->stop(); }

std::string MockCloudHarness::endpoint() const { return "http://127.0.0.1:" + std::to_string(server_->port()); }

CliResult run_cli(const std::vector<std::string>& args, const std::string& input, const ProviderRegistry* registry,
                  const std::atomic<bool>* interrupt) {
  std::istringstream in(input);
  std::ostringstream out, err;
  cli::RunOptions opts;
  opts.registry = registry;
  opts.interrupt = interrupt;
  int code = cli::run(args, in, out, err, opts);
  return CliResult{code, out.str(), err.str()};
}

std::string node_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "n%02d", i);
  return buf;
}

std::string node_address(int i) { return "testcloud_node." + node_name(i); }

namespace {

std::string random_word(std::mt19937_64& rng) {
  static const char* words[] = {"alpha", "beta", "gamma", "delta", "omega"};
  return words[std::uniform_int_distribution<int>(0, 4)(rng)];
}

}  // namespace

DagSpec random_dag(std::mt19937_64& rng, int n, double edge_probability) {
  DagSpec s;
  std::bernoulli_distribution edge(edge_probability), coin(0.5);
  for (int i = 0; i < n; ++i) {
    s.ids.push_back(i);
    if (coin(rng)) s.values[i] = random_word(rng);
    if (coin(rng)) s.tags[i] = random_word(rng);
    for (int j = 0; j < i; ++j)
      if (edge(rng)) s.edges.emplace(i, j);
  }
  return s;
}

DagSpec mutate_dag(std::mt19937_64& rng, const DagSpec& base) {
  std::bernoulli_distribution drop(0.15), edit(0.25), add(0.3);
  DagSpec s;
  for (int i : base.ids) {
    if (drop(rng)) continue;
    s.ids.push_back(i);
    if (auto v = base.values.find(i); v != base.values.end()) s.values[i] = v->second;
    if (auto t = base.tags.find(i); t != base.tags.end()) s.tags[i] = t->second;
    if (edit(rng)) s.values[i] = random_word(rng);
    if (edit(rng)) {
      if (s.values.contains(i) && drop(rng)) s.values.erase(i);
    }
    if (edit(rng) && drop(rng)) s.tags[i] = random_word(rng);
  }
  int next = base.ids.empty() ? 0 : base.ids.back() + 1;
  int extra = std::uniform_int_distribution<int>(0, 3)(rng);
  for (int k = 0; k < extra; ++k)
    if (add(rng)) {
      s.ids.push_back(next);
      s.values[next] = random_word(rng);
      ++next;
    }
  std::set<int> present(s.ids.begin(), s.ids.end());
  for (const auto& [a, b] : base.edges)
    if (present.contains(a) && present.contains(b) && !drop(rng)) s.edges.emplace(a, b);
  std::bernoulli_distribution new_edge(0.1);
  for (int a : s.ids)
    for (int b : s.ids)
      if (b < a && new_edge(rng)) s.edges.emplace(a, b);
  return s;
}

std::string render_dag_config(const DagSpec& spec) {
  std::ostringstream out;
  out << "provider \"testcloud\" {}\n";
  std::map<int, std::vector<int>> deps;
  for (const auto& [a, b] : spec.edges) deps[a].push_back(b);
  for (int i : spec.ids) {
    out << "\nresource \"testcloud_node\" \"" << node_name(i) << "\" {\n";
    out << "  name = \"" << node_name(i) << "\"\n";
    if (auto v = spec.values.find(i); v != spec.values.end()) out << "  value = \"" << v->second << "\"\n";
    if (auto t = spec.tags.find(i); t != spec.tags.end()) out << "  tag = \"" << t->second << "\"\n";
    if (auto d = deps.find(i); d != deps.end()) {
      out << "  deps = [";
      for (std::size_t k = 0; k < d->second.size(); ++k)
        out << (k ? ", " : "") << node_address(d->second[k]) << ".id";
      out << "]\n";
    }
    out << "}\n";
  }
  return out.str();
}

std::set<int> descendants(const DagSpec& spec, const std::set<int>& roots) {
  std::set<int> out;
  bool grew = true;
  while (grew) {
    grew = false;
    for (const auto& [a, b] : spec.edges)
      if ((roots.contains(b) || out.contains(b)) && !roots.contains(a) && out.insert(a).second) grew = true;
  }
  return out;
}

}  // namespace microform::testing
