#pragma once

// Metric graphs with bounded edges and truncated half-lines, the uniform
// per-edge meshes living on them, and sampled functions with
// quadrature/flux primitives.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "qgnls/error.hpp"

namespace qgnls {

enum class EdgeKind { bounded, halfline };

struct Edge {
  std::string id;
  std::size_t tail = 0;
  /// Empty for half-lines: their far end is at infinity (truncated at `length`).
  std::optional<std::size_t> head;
  EdgeKind kind = EdgeKind::bounded;
  /// Edge length for bounded edges, truncation length R for half-lines.
  double length = 0.0;
  /// True when the nonlinearity acts on this edge (edge belongs to the core).
  bool kappa = false;

  bool is_halfline() const noexcept { return kind == EdgeKind::halfline; }
  bool is_loop() const noexcept { return head && *head == tail; }
};

/// Connected metric graph with a nontrivial compact core and at least one
/// half-line. Immutable after construction.
class MetricGraph {
 public:
  struct EdgeSpec {
    std::string id;
    std::string from;
    std::optional<std::string> to;
    std::optional<double> length;
    std::optional<double> halfline_truncation;
    bool kappa = false;
  };

  /// With `require_hg` false, compact graphs without core or half-line are
  /// accepted (used for spectral checks of the Laplacian alone).
  MetricGraph(std::vector<std::string> vertices, const std::vector<EdgeSpec>& edges, bool require_hg = true)
      : vertices_(std::move(vertices)) {
    using K = GraphError::Kind;
    for (std::size_t i = 0; i < vertices_.size(); ++i) {
      if (!vertex_index_.emplace(vertices_[i], i).second) {
        throw GraphError(K::duplicate_id, vertices_[i], "duplicate vertex id");
      }
    }
    std::map<std::string, int> seen;
    for (const auto& spec : edges) {
      if (seen[spec.id]++ > 0) throw GraphError(K::duplicate_id, spec.id, "duplicate edge id");
      Edge e;
      e.id = spec.id;
      e.tail = lookup(spec.from, spec.id);
      e.kappa = spec.kappa;
      if (spec.halfline_truncation) {
        if (spec.length) {
          throw GraphError(K::bad_halfline, spec.id, "edge has both length and halfline_truncation");
        }
        if (spec.to) throw GraphError(K::bad_halfline, spec.id, "half-line must have exactly one vertex");
        e.kind = EdgeKind::halfline;
        e.length = *spec.halfline_truncation;
        if (!(e.length > 0.0)) throw GraphError(K::negative_length, spec.id, "negative length");
        if (e.kappa) {
          throw GraphError(K::kappa_on_halfline, spec.id, "nonlinearity must be localized on bounded edges");
        }
      } else {
        if (!spec.length) throw GraphError(K::parse, spec.id, "edge needs length or halfline_truncation");
        if (!spec.to) throw GraphError(K::parse, spec.id, "bounded edge needs a 'to' vertex");
        e.kind = EdgeKind::bounded;
        e.head = lookup(*spec.to, spec.id);
        e.length = *spec.length;
        if (!(e.length > 0.0)) throw GraphError(K::negative_length, spec.id, "negative length");
      }
      edges_.push_back(std::move(e));
    }
    check_connected();
    if (!require_hg) return;
    const bool has_core = std::any_of(edges_.begin(), edges_.end(),
                                      [](const Edge& e) { return e.kappa; });
    if (!has_core) throw GraphError(K::empty_core, "", "empty compact core");
    const bool has_half = std::any_of(edges_.begin(), edges_.end(),
                                      [](const Edge& e) { return e.is_halfline(); });
    if (!has_half) throw GraphError(K::no_halfline, "", "no half-line");
  }

  const std::vector<std::string>& vertices() const noexcept { return vertices_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::size_t vertex_count() const noexcept { return vertices_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  const Edge& edge(std::size_t i) const { return edges_.at(i); }

  std::size_t vertex_index(const std::string& id) const {
    auto it = vertex_index_.find(id);
    if (it == vertex_index_.end()) throw GraphError(GraphError::Kind::unknown_vertex, id, "unknown vertex");
    return it->second;
  }

  std::optional<std::size_t> edge_index(const std::string& id) const {
    for (std::size_t i = 0; i < edges_.size(); ++i)
      if (edges_[i].id == id) return i;
    return std::nullopt;
  }

  /// Total length |K| of the edges carrying the nonlinearity.
  double core_length() const {
    double total = 0.0;
    for (const auto& e : edges_)
      if (e.kappa) total += e.length;
    return total;
  }

  std::vector<std::size_t> halflines() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < edges_.size(); ++i)
      if (edges_[i].is_halfline()) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> core_edges() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < edges_.size(); ++i)
      if (edges_[i].kappa) out.push_back(i);
    return out;
  }

  double min_length() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& e : edges_) m = std::min(m, e.length);
    return m;
  }

 private:
  std::size_t lookup(const std::string& v, const std::string& edge_id) const {
    auto it = vertex_index_.find(v);
    if (it == vertex_index_.end()) {
      throw GraphError(GraphError::Kind::unknown_vertex, edge_id, "edge references unknown vertex '" + v + "'");
    }
    return it->second;
  }

  void check_connected() const {
    if (vertices_.empty()) throw GraphError(GraphError::Kind::parse, "", "graph has no vertices");
    std::vector<std::size_t> parent(vertices_.size());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
      return parent[x] == x ? x : parent[x] = find(parent[x]);
    };
    for (const auto& e : edges_)
      if (e.head) parent[find(e.tail)] = find(*e.head);
    for (std::size_t v = 1; v < vertices_.size(); ++v) {
      if (find(v) != find(0)) throw GraphError(GraphError::Kind::disconnected, vertices_[v], "disconnected");
    }
  }

  std::vector<std::string> vertices_;
  std::vector<Edge> edges_;
  std::map<std::string, std::size_t> vertex_index_;
};

inline MetricGraph load_graph(std::string_view text) {
  using nlohmann::json;
  using K = GraphError::Kind;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& ex) {
    throw GraphError(K::parse, "", std::string("graph spec is not valid JSON: ") + ex.what());
  }
  try {
    if (!doc.is_object() || !doc.contains("vertices") || !doc.contains("edges")) {
      throw GraphError(K::parse, "", "graph spec needs 'vertices' and 'edges'");
    }
    auto vertices = doc.at("vertices").get<std::vector<std::string>>();
    std::vector<MetricGraph::EdgeSpec> edges;
    for (const auto& je : doc.at("edges")) {
      MetricGraph::EdgeSpec s;
      s.id = je.at("id").get<std::string>();
      s.from = je.at("from").get<std::string>();
      if (je.contains("to") && !je.at("to").is_null()) s.to = je.at("to").get<std::string>();
      if (je.contains("length")) s.length = je.at("length").get<double>();
      if (je.contains("halfline_truncation")) s.halfline_truncation = je.at("halfline_truncation").get<double>();
      s.kappa = je.value("kappa", false);
      edges.push_back(std::move(s));
    }
    return MetricGraph(std::move(vertices), edges);
  } catch (const json::exception& ex) {
    throw GraphError(K::parse, "", std::string("malformed graph spec: ") + ex.what());
  }
}

inline MetricGraph load_graph_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw GraphError(GraphError::Kind::parse, path, "cannot open graph file");
  std::stringstream buf;
  buf << in.rdbuf();
  return load_graph(buf.str());
}

inline nlohmann::json to_json(const MetricGraph& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : g.edges()) {
    nlohmann::json je{{"id", e.id}, {"from", g.vertices()[e.tail]}, {"kappa", e.kappa}};
    if (e.is_halfline()) {
      je["halfline_truncation"] = e.length;
    } else {
      je["to"] = g.vertices()[*e.head];
      je["length"] = e.length;
    }
    edges.push_back(std::move(je));
  }
  return {{"vertices", g.vertices()}, {"edges", edges}};
}

inline std::string serialize(const MetricGraph& g) { return to_json(g).dump(2); }

/// One loop of length `loop_length` (carrying the nonlinearity) and one
/// half-line truncated at `truncation`, glued at a single vertex.
inline MetricGraph make_tadpole(double loop_length, double truncation) {
  return MetricGraph({"v"}, {{"loop", "v", "v", loop_length, std::nullopt, true},
                             {"lead", "v", std::nullopt, std::nullopt, truncation, false}});
}

// ---------------------------------------------------------------------------

/// Uniform grid on one edge: `intervals` cells of width `step`.
struct EdgeGrid {
  std::size_t intervals = 0;
  double step = 0.0;

  std::size_t nodes() const noexcept { return intervals + 1; }
  double x(std::size_t i) const noexcept { return static_cast<double>(i) * step; }
};

/// Per-edge uniform grids built from a target step, optionally finer on the
/// core. Each edge rounds its length to an integer number of cells.
class Mesh {
 public:
  Mesh(std::shared_ptr<const MetricGraph> graph, double h, double core_h = 0.0)
      : graph_(std::move(graph)), h_(h), core_h_(core_h > 0.0 ? core_h : h) {
    if (!(h > 0.0)) throw MeshError("mesh step must be positive");
    if (core_h < 0.0) throw MeshError("core mesh step must be positive");
    for (const auto& e : graph_->edges()) {
      const double step = e.is_halfline() ? h_ : core_h_;
      if (step >= e.length) throw MeshError("mesh step " + std::to_string(step) + " not smaller than edge '" + e.id + "'");
      const auto n = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(e.length / step)));
      grids_.push_back({n, e.length / static_cast<double>(n)});
    }
  }

  const MetricGraph& graph() const noexcept { return *graph_; }
  std::shared_ptr<const MetricGraph> graph_ptr() const noexcept { return graph_; }
  /// Target step; the half-line step.
  double h() const noexcept { return h_; }
  double core_h() const noexcept { return core_h_; }
  const EdgeGrid& grid(std::size_t e) const { return grids_.at(e); }
  const std::vector<EdgeGrid>& grids() const noexcept { return grids_; }

 private:
  std::shared_ptr<const MetricGraph> graph_;
  double h_;
  double core_h_;
  std::vector<EdgeGrid> grids_;
};

inline std::shared_ptr<const Mesh> make_mesh(MetricGraph g, double h, double core_h = 0.0) {
  return std::make_shared<const Mesh>(std::make_shared<const MetricGraph>(std::move(g)), h, core_h);
}

/// Function on the graph, sampled on every edge grid (endpoints included).
/// Samples at a vertex agree across incident edges; truncated half-lines end
/// at zero.
class GraphFunction {
 public:
  GraphFunction() = default;

  explicit GraphFunction(std::shared_ptr<const Mesh> mesh) : mesh_(std::move(mesh)) {
    for (const auto& gr : mesh_->grids()) values_.emplace_back(gr.nodes(), 0.0);
  }

  GraphFunction(std::shared_ptr<const Mesh> mesh, std::vector<std::vector<double>> values)
      : mesh_(std::move(mesh)), values_(std::move(values)) {
    if (values_.size() != mesh_->grids().size()) throw MeshError("sample arrays do not match edge count");
    for (std::size_t e = 0; e < values_.size(); ++e) {
      if (values_[e].size() != mesh_->grid(e).nodes()) {
        throw MeshError("sample count mismatch on edge '" + mesh_->graph().edge(e).id + "'");
      }
    }
  }

  /// Samples f(edge, x) with x the arclength from the edge's tail. Half-line
  /// far ends are set to zero.
  template <class F>
  static GraphFunction sample(std::shared_ptr<const Mesh> mesh, F&& f) {
    GraphFunction u(mesh);
    const auto& g = mesh->graph();
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      const auto& gr = mesh->grid(e);
      for (std::size_t i = 0; i < gr.nodes(); ++i) u.values_[e][i] = f(e, gr.x(i));
      if (g.edge(e).is_halfline()) u.values_[e].back() = 0.0;
    }
    return u;
  }

  const Mesh& mesh() const { return *mesh_; }
  std::shared_ptr<const Mesh> mesh_ptr() const noexcept { return mesh_; }
  const MetricGraph& graph() const { return mesh_->graph(); }
  const std::vector<double>& edge_values(std::size_t e) const { return values_.at(e); }
  std::vector<double>& edge_values(std::size_t e) { return values_.at(e); }
  const std::vector<std::vector<double>>& values() const noexcept { return values_; }

  /// Value at a vertex, read from the first incident edge.
  double vertex_value(std::size_t v) const {
    const auto& g = graph();
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      if (g.edge(e).tail == v) return values_[e].front();
      if (g.edge(e).head && *g.edge(e).head == v) return values_[e].back();
    }
    return 0.0;
  }

  /// Largest disagreement between samples that share a vertex, and the
  /// largest half-line far-end value.
  double continuity_defect() const {
    const auto& g = graph();
    std::vector<std::optional<double>> at(g.vertex_count());
    double defect = 0.0;
    auto visit = [&](std::size_t v, double value) {
      if (!at[v]) at[v] = value;
      else defect = std::max(defect, std::abs(*at[v] - value));
    };
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      visit(g.edge(e).tail, values_[e].front());
      if (g.edge(e).head) visit(*g.edge(e).head, values_[e].back());
      else defect = std::max(defect, std::abs(values_[e].back()));
    }
    return defect;
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& v : values_)
      for (double x : v) m = std::max(m, std::abs(x));
    return m;
  }

  double min_value() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& v : values_)
      for (double x : v) m = std::min(m, x);
    return m;
  }

  double max_value() const {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& v : values_)
      for (double x : v) m = std::max(m, x);
    return m;
  }

  /// Largest |u| at the truncated far end neighbourhood of every half-line
  /// (last interior sample); a proxy for the discarded tail.
  double truncation_diagnostic() const {
    const auto& g = graph();
    double d = 0.0;
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      if (!g.edge(e).is_halfline()) continue;
      const auto& v = values_[e];
      d = std::max(d, std::abs(v[v.size() - 2]));
    }
    return d;
  }

  GraphFunction& operator+=(const GraphFunction& o) {
    for (std::size_t e = 0; e < values_.size(); ++e)
      for (std::size_t i = 0; i < values_[e].size(); ++i) values_[e][i] += o.values_[e][i];
    return *this;
  }
  GraphFunction& operator-=(const GraphFunction& o) {
    for (std::size_t e = 0; e < values_.size(); ++e)
      for (std::size_t i = 0; i < values_[e].size(); ++i) values_[e][i] -= o.values_[e][i];
    return *this;
  }
  GraphFunction& operator*=(double s) {
    for (auto& v : values_)
      for (double& x : v) x *= s;
    return *this;
  }

  friend GraphFunction operator+(GraphFunction a, const GraphFunction& b) { return a += b; }
  friend GraphFunction operator-(GraphFunction a, const GraphFunction& b) { return a -= b; }
  friend GraphFunction operator*(double s, GraphFunction a) { return a *= s; }
  friend GraphFunction operator*(GraphFunction a, double s) { return a *= s; }
  friend GraphFunction operator-(GraphFunction a) { return a *= -1.0; }

 private:
  std::shared_ptr<const Mesh> mesh_;
  std::vector<std::vector<double>> values_;
};

namespace detail {

template <class F>
double trapezoid(const std::vector<double>& v, double step, F&& f) {
  double s = 0.5 * (f(v.front()) + f(v.back()));
  for (std::size_t i = 1; i + 1 < v.size(); ++i) s += f(v[i]);
  return s * step;
}

}  // namespace detail

/// Composite trapezoid value of the integral of u^2 over the graph.
inline double mass(const GraphFunction& u) {
  double total = 0.0;
  for (std::size_t e = 0; e < u.graph().edge_count(); ++e)
    total += detail::trapezoid(u.edge_values(e), u.mesh().grid(e).step, [](double x) { return x * x; });
  return total;
}

/// Integral of |u|^p over the core edges (not its p-th root).
inline double lp_core_norm(const GraphFunction& u, double p) {
  double total = 0.0;
  for (std::size_t e = 0; e < u.graph().edge_count(); ++e) {
    if (!u.graph().edge(e).kappa) continue;
    total += detail::trapezoid(u.edge_values(e), u.mesh().grid(e).step,
                               [p](double x) { return std::pow(std::abs(x), p); });
  }
  return total;
}

/// Per-vertex |sum of outgoing derivatives| using second-order one-sided
/// differences taken away from the vertex.
inline std::vector<double> kirchhoff_residual(const GraphFunction& u) {
  const auto& g = u.graph();
  std::vector<double> flux(g.vertex_count(), 0.0);
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const auto& v = u.edge_values(e);
    const double h = u.mesh().grid(e).step;
    const std::size_t n = v.size() - 1;
    flux[g.edge(e).tail] += (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    if (g.edge(e).head) flux[*g.edge(e).head] += (-3.0 * v[n] + 4.0 * v[n - 1] - v[n - 2]) / (2.0 * h);
  }
  for (double& f : flux) f = std::abs(f);
  return flux;
}

/// CSV with columns edge_id, arclength, value.
inline void write_csv(std::ostream& os, const GraphFunction& u) {
  os << "edge_id,arclength,value\n";
  os.precision(17);
  const auto& g = u.graph();
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const auto& gr = u.mesh().grid(e);
    const auto& v = u.edge_values(e);
    for (std::size_t i = 0; i < v.size(); ++i) os << g.edge(e).id << ',' << gr.x(i) << ',' << v[i] << '\n';
  }
}

/// Reads a profile written by write_csv back onto `mesh`. Rows must cover
/// every sample of every edge.
inline GraphFunction read_csv(std::istream& is, std::shared_ptr<const Mesh> mesh) {
  GraphFunction u(mesh);
  std::vector<std::size_t> filled(mesh->graph().edge_count(), 0);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string id, xs, vs;
    if (!std::getline(row, id, ',') || !std::getline(row, xs, ',') || !std::getline(row, vs)) {
      throw MeshError("malformed profile row: " + line);
    }
    auto e = mesh->graph().edge_index(id);
    if (!e) throw MeshError("profile references unknown edge '" + id + "'");
    const auto& gr = mesh->grid(*e);
    const auto i = static_cast<std::size_t>(std::lround(std::stod(xs) / gr.step));
    if (i >= gr.nodes()) throw MeshError("profile arclength outside edge '" + id + "'");
    u.edge_values(*e)[i] = std::stod(vs);
    ++filled[*e];
  }
  for (std::size_t e = 0; e < filled.size(); ++e) {
    if (filled[e] != mesh->grid(e).nodes()) {
      throw MeshError("profile does not match mesh on edge '" + mesh->graph().edge(e).id + "'");
    }
  }
  return u;
}

}  // namespace qgnls
