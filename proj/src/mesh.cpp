#include "hystfem/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>

#include <fmt/format.h>

#include "hystfem/errors.hpp"

namespace hystfem {

namespace {

using EdgeKey = std::pair<int, int>;

EdgeKey make_key(int a, int b) { return a < b ? EdgeKey{a, b} : EdgeKey{b, a}; }

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

}  // namespace

std::string BoundaryLabel::str() const {
  return fmt::format("{}{}", is_wall() ? 'w' : 'g', index);
}

std::optional<BoundaryLabel> BoundaryLabel::parse(std::string_view token) {
  if (token.size() < 2 || (token[0] != 'w' && token[0] != 'g')) return std::nullopt;
  int index = 0;
  for (char c : token.substr(1)) {
    if (c < '0' || c > '9') return std::nullopt;
    index = index * 10 + (c - '0');
  }
  if (index < 1) return std::nullopt;
  return BoundaryLabel{token[0] == 'w' ? Kind::Wall : Kind::Gate, index};
}

Mesh::Mesh(std::vector<Vec2> nodes, std::vector<Triangle> triangles,
           std::vector<BoundaryEdge> boundary_edges)
    : nodes_(std::move(nodes)),
      triangles_(std::move(triangles)),
      boundary_edges_(std::move(boundary_edges)) {
  validate_and_build_loop();
}

double Mesh::signed_area(std::size_t t) const {
  const auto& n = triangles_.at(t).nodes;
  return 0.5 * cross(nodes_[n[1]] - nodes_[n[0]], nodes_[n[2]] - nodes_[n[0]]);
}

double Mesh::total_area() const {
  double sum = 0.0;
  for (std::size_t t = 0; t < triangles_.size(); ++t) sum += signed_area(t);
  return sum;
}

double Mesh::loop_area() const {
  double twice = 0.0;
  for (const auto& seg : loop_) {
    for (std::size_t i = 0; i + 1 < seg.nodes.size(); ++i) {
      twice += cross(nodes_[seg.nodes[i]], nodes_[seg.nodes[i + 1]]);
    }
  }
  return 0.5 * twice;
}

int Mesh::num_walls() const {
  int n = 0;
  for (const auto& e : boundary_edges_)
    if (e.label.is_wall()) n = std::max(n, e.label.index);
  return n;
}

int Mesh::num_gates() const {
  int n = 0;
  for (const auto& e : boundary_edges_)
    if (e.label.is_gate()) n = std::max(n, e.label.index);
  return n;
}

std::optional<std::size_t> Mesh::locate(const Vec2& p) const {
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    const auto& n = triangles_[t].nodes;
    const Vec2& a = nodes_[n[0]];
    const Vec2& b = nodes_[n[1]];
    const Vec2& c = nodes_[n[2]];
    const double twice = cross(b - a, c - a);
    const double tol = -1e-12 * std::abs(twice);
    if (cross(b - p, c - p) >= tol && cross(c - p, a - p) >= tol && cross(a - p, b - p) >= tol) {
      return t;
    }
  }
  return std::nullopt;
}

void Mesh::validate_and_build_loop() {
  const int nn = static_cast<int>(nodes_.size());
  if (triangles_.empty()) throw MeshError("mesh has no triangles");

  // Orientation and the edge -> (triangle, direction) incidence map.
  std::map<EdgeKey, std::vector<std::pair<int, int>>> incidence;  // key -> [(tri, from)]
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    const auto& n = triangles_[t].nodes;
    for (int v : n) {
      if (v < 0 || v >= nn) throw MeshError(fmt::format("triangle {} references node {} out of range", t, v));
    }
    if (!(signed_area(t) > 0.0)) {
      throw MeshError(fmt::format("triangle {} has non-positive signed area {} (nodes {} {} {}); expected counterclockwise orientation",
                                  t, signed_area(t), n[0], n[1], n[2]));
    }
    for (int i = 0; i < 3; ++i) {
      const int a = n[i];
      const int b = n[(i + 1) % 3];
      incidence[make_key(a, b)].emplace_back(static_cast<int>(t), a);
    }
  }

  // Boundary edges: oriented along their owning triangle.
  std::map<int, int> next_edge;  // start node -> boundary edge index
  std::map<EdgeKey, int> listed;
  std::vector<std::pair<int, int>> oriented(boundary_edges_.size());
  for (std::size_t e = 0; e < boundary_edges_.size(); ++e) {
    auto [i, j] = boundary_edges_[e].nodes;
    if (i < 0 || i >= nn || j < 0 || j >= nn || i == j) {
      throw MeshError(fmt::format("boundary edge {} has invalid nodes {} {}", e, i, j));
    }
    const auto it = incidence.find(make_key(i, j));
    if (it == incidence.end()) {
      throw MeshError(fmt::format("dangling boundary edge {} ({} {}): not an edge of any triangle", e, i, j));
    }
    if (it->second.size() != 1) {
      throw MeshError(fmt::format("boundary edge {} ({} {}) is shared by {} triangles", e, i, j, it->second.size()));
    }
    if (!listed.emplace(make_key(i, j), static_cast<int>(e)).second) {
      throw MeshError(fmt::format("boundary edge {} ({} {}) listed twice", e, i, j));
    }
    const int from = it->second.front().second;
    const int to = from == i ? j : i;
    oriented[e] = {from, to};
    if (!next_edge.emplace(from, static_cast<int>(e)).second) {
      throw MeshError(fmt::format("boundary node {} starts two boundary edges; boundary is not a simple loop", from));
    }
  }
  for (const auto& [key, tris] : incidence) {
    if (tris.size() > 2) {
      throw MeshError(fmt::format("edge ({} {}) is shared by {} triangles", key.first, key.second, tris.size()));
    }
    if (tris.size() == 1 && !listed.count(key)) {
      throw MeshError(fmt::format("unlabeled boundary edge ({} {})", key.first, key.second));
    }
  }
  if (boundary_edges_.empty()) throw MeshError("mesh has no boundary edges");

  // Walk the loop.
  std::vector<int> order;
  order.reserve(boundary_edges_.size());
  int e = 0;
  std::vector<char> seen(boundary_edges_.size(), 0);
  while (!seen[e]) {
    seen[e] = 1;
    order.push_back(e);
    const auto nx = next_edge.find(oriented[e].second);
    if (nx == next_edge.end()) {
      throw MeshError(fmt::format("boundary loop is open at node {}", oriented[e].second));
    }
    e = nx->second;
  }
  if (e != order.front() || order.size() != boundary_edges_.size()) {
    throw MeshError("boundary edges do not form a single closed loop");
  }

  // Rotate so the loop starts at a label change, preferably at w1.
  const auto label_of = [&](std::size_t k) { return boundary_edges_[order[k]].label; };
  const std::size_t m = order.size();
  const BoundaryLabel w1{BoundaryLabel::Kind::Wall, 1};
  std::size_t start = 0;
  bool have_change = false;
  for (std::size_t k = 0; k < m; ++k) {
    if (label_of(k) == label_of((k + m - 1) % m)) continue;
    if (!have_change) {
      start = k;
      have_change = true;
    }
    if (label_of(k) == w1) {
      start = k;
      break;
    }
  }
  std::rotate(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(start), order.end());

  loop_.clear();
  for (int idx : order) {
    const auto& be = boundary_edges_[idx];
    if (loop_.empty() || !(loop_.back().label == be.label)) {
      loop_.push_back(BoundarySegment{be.label, {oriented[idx].first}});
    }
    loop_.back().nodes.push_back(oriented[idx].second);
  }
}

ElementGeometry element_geometry(const Mesh& mesh, std::size_t t) {
  if (t >= mesh.num_triangles()) {
    throw std::out_of_range(fmt::format("triangle index {} out of range ({} triangles)", t, mesh.num_triangles()));
  }
  const auto& n = mesh.triangles()[t].nodes;
  const Vec2& p0 = mesh.nodes()[n[0]];
  const Vec2& p1 = mesh.nodes()[n[1]];
  const Vec2& p2 = mesh.nodes()[n[2]];
  const double twice = cross(p1 - p0, p2 - p0);
  ElementGeometry g;
  g.area = 0.5 * twice;
  g.basis_gradients[0] = Vec2(p1.y() - p2.y(), p2.x() - p1.x()) / twice;
  g.basis_gradients[1] = Vec2(p2.y() - p0.y(), p0.x() - p2.x()) / twice;
  g.basis_gradients[2] = Vec2(p0.y() - p1.y(), p1.x() - p0.x()) / twice;
  return g;
}

Mesh load_mesh(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;

  const auto next_line = [&](std::string& out) -> bool {
    while (std::getline(in, out)) {
      ++line_no;
      const auto first = out.find_first_not_of(" \t\r");
      if (first == std::string::npos || out[first] == '#') continue;
      return true;
    }
    return false;
  };
  const auto fail = [&](const std::string& msg) -> MeshError {
    return MeshError(fmt::format("mesh parse error at line {}: {}", line_no, msg));
  };

  if (!next_line(line)) throw fail("missing header");
  std::istringstream header(line);
  std::string magic;
  long n_nodes = -1, n_tri = -1, n_edges = -1;
  header >> magic >> n_nodes >> n_tri >> n_edges;
  if (magic != "mesh2d" || header.fail() || n_nodes < 0 || n_tri < 0 || n_edges < 0) {
    throw fail("expected header 'mesh2d <n_nodes> <n_triangles> <n_boundary_edges>'");
  }

  std::vector<Vec2> nodes;
  nodes.reserve(n_nodes);
  for (long i = 0; i < n_nodes; ++i) {
    if (!next_line(line)) throw fail(fmt::format("expected {} nodes, found {}", n_nodes, i));
    std::istringstream ls(line);
    double x, y;
    std::string extra;
    if (!(ls >> x >> y) || (ls >> extra)) throw fail("expected node line 'x y'");
    nodes.emplace_back(x, y);
  }
  std::vector<Triangle> tris;
  tris.reserve(n_tri);
  for (long i = 0; i < n_tri; ++i) {
    if (!next_line(line)) throw fail(fmt::format("expected {} triangles, found {}", n_tri, i));
    std::istringstream ls(line);
    Triangle t;
    std::string extra;
    if (!(ls >> t.nodes[0] >> t.nodes[1] >> t.nodes[2] >> t.region) || (ls >> extra)) {
      throw fail("expected triangle line 'i j k region'");
    }
    for (int v : t.nodes) {
      if (v < 0 || v >= n_nodes) throw fail(fmt::format("node index {} out of range", v));
    }
    tris.push_back(t);
  }
  std::vector<BoundaryEdge> edges;
  edges.reserve(n_edges);
  for (long i = 0; i < n_edges; ++i) {
    if (!next_line(line)) throw fail(fmt::format("expected {} boundary edges, found {}", n_edges, i));
    std::istringstream ls(line);
    BoundaryEdge e;
    std::string label, extra;
    if (!(ls >> e.nodes[0] >> e.nodes[1] >> label) || (ls >> extra)) {
      throw fail("expected boundary edge line 'i j label'");
    }
    const auto parsed = BoundaryLabel::parse(label);
    if (!parsed) throw fail(fmt::format("invalid boundary label '{}' (expected w<k> or g<k>)", label));
    for (int v : e.nodes) {
      if (v < 0 || v >= n_nodes) throw fail(fmt::format("node index {} out of range", v));
    }
    e.label = *parsed;
    edges.push_back(e);
  }
  if (next_line(line)) throw fail("trailing content after declared entities");
  return Mesh(std::move(nodes), std::move(tris), std::move(edges));
}

Mesh load_mesh_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MeshError(fmt::format("cannot open mesh file '{}'", path));
  std::stringstream ss;
  ss << f.rdbuf();
  return load_mesh(ss.str());
}

std::string write_mesh(const Mesh& mesh) {
  std::string out = fmt::format("mesh2d {} {} {}\n", mesh.num_nodes(), mesh.num_triangles(),
                                mesh.num_boundary_edges());
  for (const auto& p : mesh.nodes()) out += fmt::format("{:.17g} {:.17g}\n", p.x(), p.y());
  for (const auto& t : mesh.triangles()) {
    out += fmt::format("{} {} {} {}\n", t.nodes[0], t.nodes[1], t.nodes[2], t.region);
  }
  for (const auto& e : mesh.boundary_edges()) {
    out += fmt::format("{} {} {}\n", e.nodes[0], e.nodes[1], e.label.str());
  }
  return out;
}

Mesh refine_uniform(const Mesh& mesh) {
  std::vector<Vec2> nodes = mesh.nodes();
  std::map<EdgeKey, int> midpoint;
  const auto mid = [&](int a, int b) {
    const auto [it, inserted] = midpoint.emplace(make_key(a, b), static_cast<int>(nodes.size()));
    if (inserted) nodes.push_back(0.5 * (nodes[a] + nodes[b]));
    return it->second;
  };

  std::vector<Triangle> tris;
  tris.reserve(4 * mesh.num_triangles());
  for (const auto& t : mesh.triangles()) {
    const auto [a, b, c] = t.nodes;
    const int ab = mid(a, b);
    const int bc = mid(b, c);
    const int ca = mid(c, a);
    tris.push_back({{a, ab, ca}, t.region});
    tris.push_back({{ab, b, bc}, t.region});
    tris.push_back({{ca, bc, c}, t.region});
    tris.push_back({{ab, bc, ca}, t.region});
  }
  std::vector<BoundaryEdge> edges;
  edges.reserve(2 * mesh.num_boundary_edges());
  for (const auto& e : mesh.boundary_edges()) {
    const int m = midpoint.at(make_key(e.nodes[0], e.nodes[1]));
    edges.push_back({{e.nodes[0], m}, e.label});
    edges.push_back({{m, e.nodes[1]}, e.label});
  }
  return Mesh(std::move(nodes), std::move(tris), std::move(edges));
}

Mesh generate_tjoint(const TJointParams& p) {
  const double window_width = 0.5 * (p.outline_width - p.limb_width);
  const double yoke_height = p.outline_height - p.window_height;
  if (!(p.mesh_size > 0.0)) throw MeshError("T-joint: mesh size must be positive");
  if (!(p.outline_width > 0.0) || !(p.outline_height > 0.0) || !(p.limb_width > 0.0)) {
    throw MeshError("T-joint: outline and limb dimensions must be positive");
  }
  if (!(p.window_height > 0.0)) throw MeshError("T-joint: window height must be positive");
  if (!(window_width > 0.0)) throw MeshError("T-joint: limb width must be smaller than the outline width");
  if (!(yoke_height > 0.0)) throw MeshError("T-joint: window exceeds the outline height");

  const auto cells = [&](double len) { return std::max(1, static_cast<int>(std::ceil(len / p.mesh_size - 1e-9))); };
  const int n_win = cells(window_width);
  const int n_limb = cells(p.limb_width);
  const int n_wh = cells(p.window_height);
  const int n_yoke = cells(yoke_height);

  const double x0 = -0.5 * p.outline_width;
  std::vector<double> xs;
  for (int i = 0; i < n_win; ++i) xs.push_back(x0 + window_width * i / n_win);
  for (int i = 0; i < n_limb; ++i) xs.push_back(-0.5 * p.limb_width + p.limb_width * i / n_limb);
  for (int i = 0; i <= n_win; ++i) xs.push_back(0.5 * p.limb_width + window_width * i / n_win);
  std::vector<double> ys;
  for (int j = 0; j < n_wh; ++j) ys.push_back(p.window_height * j / n_wh);
  for (int j = 0; j <= n_yoke; ++j) ys.push_back(p.window_height + yoke_height * j / n_yoke);

  const int nx = static_cast<int>(xs.size());
  const int ny = static_cast<int>(ys.size());
  const int i_left = n_win;            // column index of x = -limb/2
  const int i_right = n_win + n_limb;  // column index of x = +limb/2
  const auto node_inside = [&](int i, int j) { return j >= n_wh || (i >= i_left && i <= i_right); };
  const auto cell_inside = [&](int i, int j) { return j >= n_wh || (i >= i_left && i < i_right); };

  std::vector<int> id(static_cast<std::size_t>(nx * ny), -1);
  std::vector<Vec2> nodes;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      if (node_inside(i, j)) {
        id[j * nx + i] = static_cast<int>(nodes.size());
        nodes.emplace_back(xs[i], ys[j]);
      }
    }
  }

  // Diagonals mirror about x = 0 so the mesh is left-right symmetric.
  std::vector<Triangle> tris;
  for (int j = 0; j + 1 < ny; ++j) {
    for (int i = 0; i + 1 < nx; ++i) {
      if (!cell_inside(i, j)) continue;
      const int p00 = id[j * nx + i];
      const int p10 = id[j * nx + i + 1];
      const int p01 = id[(j + 1) * nx + i];
      const int p11 = id[(j + 1) * nx + i + 1];
      if (0.5 * (xs[i] + xs[i + 1]) < 0.0) {
        tris.push_back({{p00, p10, p11}, 1});
        tris.push_back({{p00, p11, p01}, 1});
      } else {
        tris.push_back({{p00, p10, p01}, 1});
        tris.push_back({{p10, p11, p01}, 1});
      }
    }
  }

  // Topological boundary edges, labeled by location.
  std::map<EdgeKey, int> count;
  for (const auto& t : tris) {
    for (int k = 0; k < 3; ++k) ++count[make_key(t.nodes[k], t.nodes[(k + 1) % 3])];
  }
  const double tol = 1e-9 * p.outline_width;
  const double x_max = xs.back();
  const double y_max = ys.back();
  std::vector<BoundaryEdge> edges;
  for (const auto& [key, c] : count) {
    if (c != 1) continue;
    const Vec2 m = 0.5 * (nodes[key.first] + nodes[key.second]);
    BoundaryLabel label;
    using K = BoundaryLabel::Kind;
    if (std::abs(m.y() - y_max) < tol) {
      label = {K::Wall, 1};
    } else if (std::abs(m.x() - x0) < tol) {
      label = {K::Gate, 1};
    } else if (std::abs(m.x() - x_max) < tol) {
      label = {K::Gate, 3};
    } else if (std::abs(m.y()) < tol) {
      label = {K::Gate, 2};
    } else {
      label = {K::Wall, m.x() < 0.0 ? 2 : 3};
    }
    edges.push_back({{key.first, key.second}, label});
  }
  return Mesh(std::move(nodes), std::move(tris), std::move(edges));
}

}  // namespace hystfem
