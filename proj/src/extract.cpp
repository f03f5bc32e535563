#include "lgc/extract.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <utility>

#include "lgc/error.hpp"

namespace lgc::extract {

using ad::Tensor;

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

void GridSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (resolution[a] < 2)
      throw ConfigError("grid: resolution must be >= 2 nodes per axis, got " +
                        std::to_string(resolution[a]));
    if (!(hi[a] > lo[a]))
      throw ConfigError("grid: bounds are empty along axis " + std::to_string(a));
  }
}

Vec3 GridSpec::cell_size() const {
  return {(hi.x - lo.x) / static_cast<double>(resolution[0] - 1),
          (hi.y - lo.y) / static_cast<double>(resolution[1] - 1),
          (hi.z - lo.z) / static_cast<double>(resolution[2] - 1)};
}

double GridSpec::cell_diagonal() const {
  const Vec3 c = cell_size();
  return std::sqrt(c.x * c.x + c.y * c.y + c.z * c.z);
}

Vec3 GridSpec::node(long ix, long iy, long iz) const {
  const Vec3 c = cell_size();
  return {lo.x + c.x * static_cast<double>(ix), lo.y + c.y * static_cast<double>(iy),
          lo.z + c.z * static_cast<double>(iz)};
}

GridSpec GridSpec::around(const geom::TriangleMesh& mesh, long res) {
  if (mesh.vertices.empty()) throw ConfigError("grid: cannot bound an empty mesh");
  GridSpec g;
  g.resolution = {res, res, res};
  mesh.bbox(g.lo, g.hi);
  const Vec3 extent = g.hi - g.lo;
  const double max_extent = std::max({extent.x, extent.y, extent.z});
  if (max_extent <= 0) throw ConfigError("grid: mesh has a degenerate bounding box");
  for (int a = 0; a < 3; ++a) {
    const double pad = 0.1 * (extent[a] > 0 ? extent[a] : max_extent);
    g.lo[a] -= pad;
    g.hi[a] += pad;
  }
  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// Composed field
// ---------------------------------------------------------------------------

namespace {

void check_composed(const ComposedField& f) {
  if (!f.decoder || !f.store || !f.keypoints)
    throw ConfigError("composed field: decoder, store, and key points must all be set");
  if (f.keypoints->points().empty()) throw ConfigError("composed field: no key points");
  long latent = f.decoder->config().latent_dim;
  if (f.codes.shape.size() != 2 ||
      f.codes.rows() != static_cast<long>(f.keypoints->points().size()) ||
      f.codes.cols() != latent)
    throw ConfigError("composed field: codes must be one latent row per key point");
}

}  // namespace

double ComposedField::operator()(const Vec3& x) const {
  check_composed(*this);
  long region = keypoints->nearest(x);
  const Vec3 local = regions::local_transform(x, keypoints->points()[region]);
  double xs[3] = {local.x, local.y, local.z};
  double out = 0;
  decoder->eval(*store, xs, codes.data.data() + region * codes.cols(), 1, &out);
  return out;
}

std::vector<double> ComposedField::eval_grid(const GridSpec& grid) const {
  check_composed(*this);
  grid.validate();
  const long n = grid.num_nodes();
  const long latent = codes.cols();
  std::vector<double> values(static_cast<std::size_t>(n));

  const long chunk = 8192;
  std::vector<double> xs(static_cast<std::size_t>(chunk) * 3);
  std::vector<double> cs(static_cast<std::size_t>(chunk) * latent);
  long filled = 0, base = 0;
  auto flush = [&]() {
    if (filled == 0) return;
    decoder->eval(*store, xs.data(), cs.data(), filled, values.data() + base);
    base += filled;
    filled = 0;
  };
  for (long iz = 0; iz < grid.resolution[2]; ++iz)
    for (long iy = 0; iy < grid.resolution[1]; ++iy)
      for (long ix = 0; ix < grid.resolution[0]; ++ix) {
        const Vec3 p = grid.node(ix, iy, iz);
        long region = keypoints->nearest(p);
        const Vec3 local = regions::local_transform(p, keypoints->points()[region]);
        xs[filled * 3 + 0] = local.x;
        xs[filled * 3 + 1] = local.y;
        xs[filled * 3 + 2] = local.z;
        std::copy_n(codes.data.begin() + region * latent, latent, cs.begin() + filled * latent);
        if (++filled == chunk) flush();
      }
  flush();
  return values;
}

double compose_sdf(const Vec3& x, const nets::MlpDecoder& decoder,
                   const ad::ParameterStore& store, const Tensor& codes,
                   const regions::KeyPointSet& keypoints) {
  ComposedField f{&decoder, &store, &keypoints, codes};
  return f(x);
}

// ---------------------------------------------------------------------------
// Marching cubes
// ---------------------------------------------------------------------------

namespace {

// Classic tables: corner k of a cell at its ring position, edge e between the
// corner pair below, one bit per inside corner indexing kEdgeTable (crossed
// edges) and kTriTable (fan of edge triples, -1 terminated).
const int kCornerOffset[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                 {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};

const int kEdgeCorner[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

// Lattice identity of each cube edge: the node it starts from and its axis.
const int kEdgeBase[12][4] = {{0, 0, 0, 0}, {1, 0, 0, 1}, {0, 1, 0, 0}, {0, 0, 0, 1},
                              {0, 0, 1, 0}, {1, 0, 1, 1}, {0, 1, 1, 0}, {0, 0, 1, 1},
                              {0, 0, 0, 2}, {1, 0, 0, 2}, {1, 1, 0, 2}, {0, 1, 0, 2}};

#include "mc_tables.inc"

}  // namespace

geom::TriangleMesh marching_cubes(const std::vector<double>& node_values, const GridSpec& grid) {
  grid.validate();
  if (static_cast<long>(node_values.size()) != grid.num_nodes())
    throw ConfigError("marching cubes: expected " + std::to_string(grid.num_nodes()) +
                      " node values, got " + std::to_string(node_values.size()));
  const long nx = grid.resolution[0], ny = grid.resolution[1], nz = grid.resolution[2];
  auto node_index = [&](long ix, long iy, long iz) { return ix + nx * (iy + ny * iz); };
  for (std::size_t i = 0; i < node_values.size(); ++i)
    if (!std::isfinite(node_values[i]))
      throw NumericalError("marching cubes: non-finite field value at node " + std::to_string(i));

  geom::TriangleMesh mesh;
  std::unordered_map<long, long> edge_vertex;  // lattice edge id -> vertex index
  const Vec3 cell = grid.cell_size();

  auto vertex_on_edge = [&](long cx, long cy, long cz, int e) {
    const long bx = cx + kEdgeBase[e][0], by = cy + kEdgeBase[e][1], bz = cz + kEdgeBase[e][2];
    const int axis = kEdgeBase[e][3];
    const long key = (node_index(bx, by, bz)) * 3 + axis;
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;

    const int* c0 = kCornerOffset[kEdgeCorner[e][0]];
    const int* c1 = kCornerOffset[kEdgeCorner[e][1]];
    const double f0 = node_values[node_index(cx + c0[0], cy + c0[1], cz + c0[2])];
    const double f1 = node_values[node_index(cx + c1[0], cy + c1[1], cz + c1[2])];
    double t = f0 == f1 ? 0.5 : f0 / (f0 - f1);
    t = std::clamp(t, 0.0, 1.0);
    const Vec3 p0 = grid.node(cx + c0[0], cy + c0[1], cz + c0[2]);
    const Vec3 p1 = grid.node(cx + c1[0], cy + c1[1], cz + c1[2]);
    const Vec3 p = p0 + (p1 - p0) * t;

    long id = mesh.num_vertices();
    mesh.vertices.push_back(p);
    edge_vertex.emplace(key, id);
    return id;
  };

  for (long cz = 0; cz + 1 < nz; ++cz)
    for (long cy = 0; cy + 1 < ny; ++cy)
      for (long cx = 0; cx + 1 < nx; ++cx) {
        int cube = 0;
        for (int k = 0; k < 8; ++k) {
          const int* o = kCornerOffset[k];
          if (node_values[node_index(cx + o[0], cy + o[1], cz + o[2])] < 0) cube |= 1 << k;
        }
        if (kEdgeTable[cube] == 0) continue;
        const signed char* tris = kTriTable[cube];
        for (int t = 0; tris[t] != -1; t += 3) {
          // Table order faces the negative side; swap to face positive field.
          long a = vertex_on_edge(cx, cy, cz, tris[t]);
          long b = vertex_on_edge(cx, cy, cz, tris[t + 1]);
          long c = vertex_on_edge(cx, cy, cz, tris[t + 2]);
          mesh.faces.push_back({a, c, b});
        }
      }

  long dropped = geom::clean_and_derive_edges(mesh);
  if (dropped > 0) {
    // Zero-area faces can orphan corner-exact vertices; compact them away.
    std::vector<long> remap(mesh.vertices.size(), -1);
    std::vector<Vec3> kept;
    for (const auto& f : mesh.faces)
      for (long v : f)
        if (remap[v] < 0) {
          remap[v] = static_cast<long>(kept.size());
          kept.push_back(mesh.vertices[v]);
        }
    for (auto& f : mesh.faces) f = {remap[f[0]], remap[f[1]], remap[f[2]]};
    mesh.vertices = std::move(kept);
    geom::clean_and_derive_edges(mesh);
  }
  return mesh;
}

geom::TriangleMesh marching_cubes(const std::function<double(const Vec3&)>& field,
                                  const GridSpec& grid) {
  grid.validate();
  std::vector<double> values(static_cast<std::size_t>(grid.num_nodes()));
  std::size_t i = 0;
  for (long iz = 0; iz < grid.resolution[2]; ++iz)
    for (long iy = 0; iy < grid.resolution[1]; ++iy)
      for (long ix = 0; ix < grid.resolution[0]; ++ix) values[i++] = field(grid.node(ix, iy, iz));
  return marching_cubes(values, grid);
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

MeshFormat mesh_format_from_name(const std::string& name) {
  if (name == "obj") return MeshFormat::Obj;
  if (name == "ply") return MeshFormat::PlyBinary;
  throw ConfigError("unknown mesh format '" + name + "' (expected obj or ply)");
}

const char* mesh_format_name(MeshFormat format) {
  return format == MeshFormat::Obj ? "obj" : "ply";
}

void export_mesh(const geom::TriangleMesh& mesh, const std::string& path, MeshFormat format) {
  if (format == MeshFormat::Obj)
    geom::save_obj(path, mesh);
  else
    geom::save_ply_binary(path, mesh);
}

}  // namespace lgc::extract
