#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "microform/cli.hpp"
#include "microform/mockcloud.hpp"
#include "microform/provider.hpp"

namespace microform::testing {

namespace fs = std::filesystem;

fs::path fixture_path(const std::string& relative);
std::string read_file(const fs::path& p);
void write_file(const fs::path& p, const std::string& text);

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

/// A MockCloud served on an ephemeral local port.
class MockCloudHarness {
 public:
  explicit MockCloudHarness(bool integrity_sweep = true);
  ~MockCloudHarness();
  mockcloud::MockCloud& cloud() { return *cloud_; }
  std::string endpoint() const;

 private:
  std::unique_ptr<mockcloud::MockCloud> cloud_;
  std::unique_ptr<mockcloud::Server> server_;
};

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::vector<std::string>& args, const std::string& input = "",
                  const ProviderRegistry* registry = nullptr, const std::atomic<bool>* interrupt = nullptr);

/// Random testcloud_node graph. Edge (a, b) means node a depends on node b;
/// edges only point to lower indices, so the graph is acyclic by construction.
struct DagSpec {
  std::vector<int> ids;  // node numbers present, ascending
  std::set<std::pair<int, int>> edges;
  std::map<int, std::string> values;
  std::map<int, std::string> tags;
};

std::string node_name(int i);
std::string node_address(int i);
DagSpec random_dag(std::mt19937_64& rng, int n, double edge_probability);
/// Perturbs a spec: drops, adds, and edits nodes, changes tags and edges.
DagSpec mutate_dag(std::mt19937_64& rng, const DagSpec& base);
std::string render_dag_config(const DagSpec& spec);
/// Every node that transitively depends on one of `roots`, excluding the roots.
std::set<int> descendants(const DagSpec& spec, const std::set<int>& roots);

}  // namespace microform::testing
