#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace hystfem {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Boundary segment label: flux wall (`w<k>`) or flux gate (`g<k>`), k >= 1.
struct BoundaryLabel {
  enum class Kind { Wall, Gate };
  Kind kind = Kind::Wall;
  int index = 1;

  bool is_wall() const { return kind == Kind::Wall; }
  bool is_gate() const { return kind == Kind::Gate; }
  std::string str() const;
  static std::optional<BoundaryLabel> parse(std::string_view token);
  friend bool operator==(const BoundaryLabel&, const BoundaryLabel&) = default;
};

struct Triangle {
  std::array<int, 3> nodes;
  int region = 0;
};

struct BoundaryEdge {
  std::array<int, 2> nodes;
  BoundaryLabel label;
};

struct ElementGeometry {
  double area = 0.0;
  std::array<Vec2, 3> basis_gradients;
};

/// One maximal run of equally labeled boundary edges, listed in
/// counterclockwise order (domain on the left).
struct BoundarySegment {
  BoundaryLabel label;
  std::vector<int> nodes;  // nodes.size() == number of edges + 1
};

/// Triangulation with region tags and labeled boundary edges.
///
/// Construction validates: counterclockwise triangles with positive area,
/// every listed boundary edge belongs to exactly one triangle, every
/// topological boundary edge is listed, and the boundary forms one closed
/// loop. A constructed Mesh is immutable.
class Mesh {
 public:
  Mesh(std::vector<Vec2> nodes, std::vector<Triangle> triangles,
       std::vector<BoundaryEdge> boundary_edges);

  const std::vector<Vec2>& nodes() const { return nodes_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const std::vector<BoundaryEdge>& boundary_edges() const { return boundary_edges_; }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_triangles() const { return triangles_.size(); }
  std::size_t num_boundary_edges() const { return boundary_edges_.size(); }

  double signed_area(std::size_t t) const;
  double total_area() const;

  /// Boundary loop split into labeled segments, starting at the segment
  /// labeled `w1` when present.
  const std::vector<BoundarySegment>& boundary_loop() const { return loop_; }

  /// Shoelace area of the boundary loop.
  double loop_area() const;

  int num_walls() const;
  int num_gates() const;

  /// Index of a triangle containing `p` (closed, with a relative tolerance),
  /// or nullopt if the point is outside.
  std::optional<std::size_t> locate(const Vec2& p) const;

 private:
  void validate_and_build_loop();

  std::vector<Vec2> nodes_;
  std::vector<Triangle> triangles_;
  std::vector<BoundaryEdge> boundary_edges_;
  std::vector<BoundarySegment> loop_;
};

ElementGeometry element_geometry(const Mesh& mesh, std::size_t t);

/// Parses the `mesh2d` text format. Errors carry the offending line number.
Mesh load_mesh(std::string_view text);
Mesh load_mesh_file(const std::string& path);
std::string write_mesh(const Mesh& mesh);

/// Splits every triangle into four congruent children through the edge
/// midpoints. Boundary labels and region tags are inherited.
Mesh refine_uniform(const Mesh& mesh);

/// T-shaped cross-section of a three-limb transformer joint: a horizontal
/// yoke over a centered vertical limb, leaving two windows below the yoke.
///
/// Boundary loop (counterclockwise from the top-right corner):
///   w1 yoke top, g1 left yoke end, w2 left window edges,
///   g2 limb bottom, w3 right window edges, g3 right yoke end.
struct TJointParams {
  double outline_width = 1.6;   // m, total yoke length
  double outline_height = 0.9;  // m, limb bottom to yoke top
  double limb_width = 0.4;      // m
  double window_height = 0.5;   // m, yoke height = outline_height - window_height
  double mesh_size = 0.0375;    // m, target edge length of the structured grid
};

Mesh generate_tjoint(const TJointParams& params);

}  // namespace hystfem
