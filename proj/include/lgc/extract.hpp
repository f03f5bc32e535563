#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "lgc/mesh.hpp"
#include "lgc/nets.hpp"
#include "lgc/regions.hpp"
#include "lgc/tensor.hpp"
#include "lgc/vec3.hpp"

namespace lgc::extract {

// Axis-aligned evaluation lattice. `resolution` counts nodes per axis, so a
// grid spans resolution-1 cells each way.
struct GridSpec {
  std::array<long, 3> resolution{128, 128, 128};
  Vec3 lo{-1, -1, -1};
  Vec3 hi{1, 1, 1};

  void validate() const;  // >= 2 nodes per axis, hi strictly above lo
  Vec3 cell_size() const;
  double cell_diagonal() const;
  Vec3 node(long ix, long iy, long iz) const;
  long num_nodes() const { return resolution[0] * resolution[1] * resolution[2]; }

  // Mesh bounding box inflated by 10% per side, cubic resolution.
  static GridSpec around(const geom::TriangleMesh& mesh, long res = 128);
};

// The global field assembled from local parts: the decoder evaluated with the
// query expressed in the nearest key point's frame and that region's code.
// A single key point at the origin reduces to a plain decoder call.
struct ComposedField {
  const nets::MlpDecoder* decoder = nullptr;
  const ad::ParameterStore* store = nullptr;
  const regions::KeyPointSet* keypoints = nullptr;
  ad::Tensor codes;  // {num key points, latent}

  double operator()(const Vec3& x) const;
  // Node values in z-major scan order (x fastest), decoder run in batches.
  std::vector<double> eval_grid(const GridSpec& grid) const;
};

double compose_sdf(const Vec3& x, const nets::MlpDecoder& decoder,
                   const ad::ParameterStore& store, const ad::Tensor& codes,
                   const regions::KeyPointSet& keypoints);

// Standard 256-case marching cubes with linear edge interpolation. Vertices
// on shared lattice edges are welded, triangles are wound so normals face the
// positive side of the field, and output order is a deterministic function of
// the node values. A field with no sign change yields an empty mesh.
geom::TriangleMesh marching_cubes(const std::vector<double>& node_values, const GridSpec& grid);
geom::TriangleMesh marching_cubes(const std::function<double(const Vec3&)>& field,
                                  const GridSpec& grid);

enum class MeshFormat { Obj, PlyBinary };

MeshFormat mesh_format_from_name(const std::string& name);  // "obj" / "ply"
const char* mesh_format_name(MeshFormat format);

// Writes in the chosen format; the result loads back through geom::load_mesh.
void export_mesh(const geom::TriangleMesh& mesh, const std::string& path, MeshFormat format);

}  // namespace lgc::extract
