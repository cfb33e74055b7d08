#pragma once

#include <compare>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "microform/config.hpp"

namespace microform {

/// `type.name` for managed resources, `data.type.name` for data sources.
struct ResourceAddress {
  enum class Category { Managed, Data };

  Category category = Category::Managed;
  std::string type;
  std::string name;

  std::string str() const;
  static ResourceAddress parse(std::string_view text);

  bool operator==(const ResourceAddress& o) const { return str() == o.str(); }
  std::strong_ordering operator<=>(const ResourceAddress& o) const { return str() <=> o.str(); }
};

class CycleError : public Error {
 public:
  explicit CycleError(std::vector<std::string> cycle);
  const std::vector<std::string>& cycle() const { return cycle_; }

 private:
  std::vector<std::string> cycle_;
};

/// Nodes are canonical addresses; an edge (from, to) means `from` depends on `to`.
class DependencyGraph {
 public:
  void add_node(const std::string& node);
  /// Both ends must already be nodes; self-edges are rejected.
  void add_edge(const std::string& from, const std::string& to);

  const std::set<std::string>& nodes() const { return nodes_; }
  const std::set<std::pair<std::string, std::string>>& edges() const { return edges_; }
  bool contains(const std::string& node) const { return nodes_.contains(node); }

  /// Nodes `node` depends on.
  std::vector<std::string> dependencies(const std::string& node) const;
  /// Nodes that depend on `node`.
  std::vector<std::string> dependents(const std::string& node) const;

  bool operator==(const DependencyGraph&) const = default;

 private:
  std::set<std::string> nodes_;
  std::set<std::pair<std::string, std::string>> edges_;
};

DependencyGraph build_graph(const ConfigDocument& doc);

/// nullopt when acyclic; otherwise one cycle, starting and ending at its
/// lexicographically smallest member.
std::optional<std::vector<std::string>> detect_cycles(const DependencyGraph& g);

/// Dependencies first; ties broken by lexicographic address. Throws CycleError.
std::vector<std::string> topo_order(const DependencyGraph& g);

DependencyGraph reverse(const DependencyGraph& g);

std::string render_dot(const DependencyGraph& g);

}  // namespace microform
