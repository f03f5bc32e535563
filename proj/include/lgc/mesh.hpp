#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lgc/vec3.hpp"

namespace lgc::geom {

// Triangle soup. Duplicate vertices are kept as-is; edges are the derived
// undirected adjacency (each pair once, lexicographically sorted).
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<long, 3>> faces;
  std::vector<std::array<long, 2>> edges;

  long num_vertices() const { return static_cast<long>(vertices.size()); }
  long num_faces() const { return static_cast<long>(faces.size()); }

  Vec3 face_normal(long f) const;  // unit length
  double face_area(long f) const;
  void bbox(Vec3& lo, Vec3& hi) const;
};

// Rebuilds the undirected edge set and drops exactly-zero-area faces.
// Returns the number of faces removed.
long clean_and_derive_edges(TriangleMesh& mesh);

// Readers for OBJ and PLY (ASCII or binary little-endian). Errors carry the
// offending line (text) or byte offset (binary) and face index where known.
TriangleMesh load_mesh(const std::string& path);

void save_obj(const std::string& path, const TriangleMesh& mesh);
void save_ply_binary(const std::string& path, const TriangleMesh& mesh);

// Content fingerprint over vertex and face bytes (caches key on this).
std::uint64_t mesh_content_hash(const TriangleMesh& mesh);

// Maps model coordinates into the unit bounding sphere: x -> (x - center)/scale.
struct NormalizationTransform {
  Vec3 center{0, 0, 0};
  double scale = 1.0;
  std::string unit_name = "units";

  Vec3 apply(const Vec3& v) const { return (v - center) / scale; }
  Vec3 invert(const Vec3& v) const { return v * scale + center; }
};

// Centers at the bounding-box centroid and scales so max ||v - center|| = 1.
// The mesh is modified in place; the returned transform maps original
// coordinates to normalized ones.
NormalizationTransform normalize_mesh(TriangleMesh& mesh, const std::string& unit_name = "units");

}  // namespace lgc::geom
