#include "microform/graph.hpp"

#include <functional>
#include <map>
#include <queue>

namespace microform {

std::string ResourceAddress::str() const {
  return (category == Category::Data ? "data." : "") + type + "." + name;
}

ResourceAddress ResourceAddress::parse(std::string_view text) {
  ResourceAddress a;
  if (text.starts_with("data.")) {
    a.category = Category::Data;
    text.remove_prefix(5);
  }
  auto dot = text.find('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 == text.size() ||
      text.find('.', dot + 1) != std::string_view::npos)
    throw Error("invalid resource address '" + std::string(text) + "'");
  a.type = std::string(text.substr(0, dot));
  a.name = std::string(text.substr(dot + 1));
  return a;
}

namespace {

std::string cycle_text(const std::vector<std::string>& cycle) {
  std::string out;
  for (std::size_t i = 0; i < cycle.size(); ++i) {
    if (i) out += " -> ";
    out += cycle[i];
  }
  return out;
}

}  // namespace

CycleError::CycleError(std::vector<std::string> cycle)
    : Error("dependency cycle: " + cycle_text(cycle)), cycle_(std::move(cycle)) {}

void DependencyGraph::add_node(const std::string& node) { nodes_.insert(node); }

void DependencyGraph::add_edge(const std::string& from, const std::string& to) {
  if (!nodes_.contains(from) || !nodes_.contains(to))
    throw Error("edge " + from + " -> " + to + " references a missing node");
  if (from == to) throw CycleError({from, from});
  edges_.emplace(from, to);
}

std::vector<std::string> DependencyGraph::dependencies(const std::string& node) const {
  std::vector<std::string> out;
  for (auto it = edges_.lower_bound({node, ""}); it != edges_.end() && it->first == node; ++it)
    out.push_back(it->second);
  return out;
}

std::vector<std::string> DependencyGraph::dependents(const std::string& node) const {
  std::vector<std::string> out;
  for (const auto& [from, to] : edges_)
    if (to == node) out.push_back(from);
  return out;
}

DependencyGraph build_graph(const ConfigDocument& doc) {
  DependencyGraph g;
  for (const Block* b : doc.resources()) g.add_node(block_address(*b));
  for (const Block* b : doc.resources()) {
    auto self = block_address(*b);
    for (const auto& ref : block_references(*b)) {
      auto target = referenced_address(ref.path);
      if (!target) continue;
      if (!g.contains(*target))
        throw ConfigError(ref.span, "reference to undeclared resource '" + *target + "'");
      if (*target == self) throw ConfigError(ref.span, "'" + self + "' references itself");
      g.add_edge(self, *target);
    }
  }
  for (const auto& b : doc.blocks) {
    if (b.kind != "output") continue;
    for (const auto& ref : block_references(b)) {
      auto target = referenced_address(ref.path);
      if (target && !g.contains(*target))
        throw ConfigError(ref.span, "reference to undeclared resource '" + *target + "'");
    }
  }
  return g;
}

std::optional<std::vector<std::string>> detect_cycles(const DependencyGraph& g) {
  enum class Mark { White, Grey, Black };
  std::map<std::string, Mark> mark;
  for (const auto& n : g.nodes()) mark[n] = Mark::White;
  std::vector<std::string> stack;
  std::optional<std::vector<std::string>> found;

  std::function<bool(const std::string&)> visit = [&](const std::string& n) {
    mark[n] = Mark::Grey;
    stack.push_back(n);
    for (const auto& dep : g.dependencies(n)) {
      if (mark[dep] == Mark::Grey) {
        auto start = std::find(stack.begin(), stack.end(), dep);
        std::vector<std::string> cycle(start, stack.end());
        auto smallest = std::min_element(cycle.begin(), cycle.end());
        std::rotate(cycle.begin(), smallest, cycle.end());
        cycle.push_back(cycle.front());
        found = std::move(cycle);
        return true;
      }
      if (mark[dep] == Mark::White && visit(dep)) return true;
    }
    stack.pop_back();
    mark[n] = Mark::Black;
    return false;
  };

  for (const auto& n : g.nodes())
    if (mark[n] == Mark::White && visit(n)) return found;
  return std::nullopt;
}

std::vector<std::string> topo_order(const DependencyGraph& g) {
  std::map<std::string, std::size_t> pending;
  std::map<std::string, std::vector<std::string>> dependents;
  for (const auto& n : g.nodes()) pending[n] = 0;
  for (const auto& [from, to] : g.edges()) {
    ++pending[from];
    dependents[to].push_back(from);
  }
  std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
  for (const auto& [n, count] : pending)
    if (count == 0) ready.push(n);
  std::vector<std::string> order;
  while (!ready.empty()) {
    auto n = ready.top();
    ready.pop();
    order.push_back(n);
    for (const auto& d : dependents[n])
      if (--pending[d] == 0) ready.push(d);
  }
  if (order.size() != g.nodes().size()) {
    if (auto cycle = detect_cycles(g)) throw CycleError(*cycle);
    throw Error("topological sort failed");
  }
  return order;
}

DependencyGraph reverse(const DependencyGraph& g) {
  DependencyGraph r;
  for (const auto& n : g.nodes()) r.add_node(n);
  for (const auto& [from, to] : g.edges()) r.add_edge(to, from);
  return r;
}

std::string render_dot(const DependencyGraph& g) {
  std::string out = "digraph {\n";
  for (const auto& n : g.nodes()) out += "  \"" + n + "\";\n";
  for (const auto& [from, to] : g.edges()) out += "  \"" + from + "\" -> \"" + to + "\";\n";
  out += "}\n";
  return out;
}

}  // namespace microform
