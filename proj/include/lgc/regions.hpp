#pragma once

#include <vector>

#include "lgc/mesh.hpp"
#include "lgc/sparse.hpp"
#include "lgc/spatial.hpp"
#include "lgc/vec3.hpp"

namespace lgc::regions {

// The key points partitioning space into nearest-point cells. Ties go to the
// lowest index.
class KeyPointSet {
 public:
  explicit KeyPointSet(std::vector<Vec3> points) : index_(std::move(points)) {}

  const std::vector<Vec3>& points() const { return index_.points(); }
  long size() const { return static_cast<long>(index_.points().size()); }
  long nearest(const Vec3& x) const { return index_.nearest(x).second; }

 private:
  geom::PointKdTree index_;
};

struct RegionAssignment {
  std::vector<long> region;  // nearest key point per sample
  std::vector<Vec3> local;   // x - p_region
};

RegionAssignment assign_regions(const std::vector<Vec3>& samples, const KeyPointSet& keypoints);

// Local coordinates are a pure translation into the key point's frame.
inline Vec3 local_transform(const Vec3& x, const Vec3& p) { return x - p; }

// For each vertex, the vertices at graph distance exactly k, k = 1..depth,
// each ring sorted ascending.
struct RingNeighborhoods {
  long num_vertices = 0;
  int depth = 0;
  std::vector<std::vector<std::vector<long>>> rings;

  const std::vector<long>& ring(long v, int k) const {
    return rings[static_cast<std::size_t>(v)][static_cast<std::size_t>(k - 1)];
  }
};

RingNeighborhoods ring_neighborhoods(const geom::TriangleMesh& mesh, int depth);

enum class RingAverageMode {
  Normalized,  // mean of the per-ring means (empty rings skipped)
  Literal,     // sum of the per-ring means
};

// Sparse neighborhood-average operator S: (S Z)_i is vertex i's aggregate of
// the code rows Z. A vertex whose rings are all empty gets an identity row,
// so its residual z_i - (S z)_i vanishes.
ad::Csr ring_average_operator(const RingNeighborhoods& rings, RingAverageMode mode);

}  // namespace lgc::regions
