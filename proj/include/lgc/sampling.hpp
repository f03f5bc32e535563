#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lgc/mesh.hpp"
#include "lgc/spatial.hpp"
#include "lgc/vec3.hpp"

namespace lgc::geom {

// Training points: surface samples carry a unit normal and d_u = 0;
// perturbed (off-surface) samples carry d_u > 0 and a zero normal.
struct SampleSet {
  std::vector<Vec3> points;
  std::vector<double> unsigned_distance;
  std::vector<std::uint8_t> on_surface;
  std::vector<Vec3> normal;

  long size() const { return static_cast<long>(points.size()); }
  void append(const SampleSet& other);
};

// Area-uniform surface sampling: face chosen proportionally to area, then
// uniform barycentric position; normal is the flat face normal.
SampleSet sample_surface(const TriangleMesh& mesh, long count, std::uint64_t seed);

// Two-Gaussian off-surface sampling. Each drawn surface center emits one
// point from N(x, sigma_local^2 I) and one from N(x, sigma_global^2 I),
// where sigma_local is the distance from the center to its knn_k-th nearest
// surface sample. d_u comes from exact nearest-triangle queries.
// sigma_local_override >= 0 replaces the kNN-derived width (tests use 0).
SampleSet sample_perturbed(const SampleSet& surface, const MeshBvh& index, long count,
                           double sigma_global, long knn_k, std::uint64_t seed,
                           double sigma_local_override = -1.0);

// Cache: rows of 8 little-endian doubles (x, y, z, d_u, nx, ny, nz, flag)
// in <path>, with a JSON sidecar in <path>.json carrying `count` plus
// whatever provenance the caller adds (seed, sigmas, mesh hash, ...).
void save_samples(const std::string& path, const SampleSet& set, nlohmann::json sidecar);
SampleSet load_samples(const std::string& path, nlohmann::json* sidecar_out = nullptr);

}  // namespace lgc::geom
