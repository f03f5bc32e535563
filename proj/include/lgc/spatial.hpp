#pragma once

#include <utility>
#include <vector>

#include "lgc/mesh.hpp"
#include "lgc/vec3.hpp"

namespace lgc::geom {

// Closest point on triangle abc to p (interior, edge, or vertex case).
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// Exact nearest-triangle queries over a triangle soup. Results match a
// brute-force scan bit-for-bit, including the tie rule (lowest face index
// among equally close faces).
class MeshBvh {
 public:
  struct Hit {
    double dist = 0;
    long face = -1;
    Vec3 point{0, 0, 0};  // closest point on that face
  };

  explicit MeshBvh(const TriangleMesh& mesh);
  Hit nearest(const Vec3& p) const;

 private:
  struct BvhNode {
    Vec3 lo, hi;
    long left = -1, right = -1;   // internal children
    long begin = 0, end = 0;      // leaf face range in order_
  };

  long build(long begin, long end, std::vector<Vec3>& centroids);

  const TriangleMesh& mesh_;
  std::vector<BvhNode> nodes_;
  std::vector<long> order_;
  long root_ = -1;
};

// Nearest-neighbor queries over a fixed point set. Ties break on
// (distance^2, index) lexicographically, so results are deterministic.
class PointKdTree {
 public:
  explicit PointKdTree(std::vector<Vec3> points);

  // (squared distance, index) of the single nearest point.
  std::pair<double, long> nearest(const Vec3& q) const;

  // k nearest, ascending (distance^2, index). k is clamped to the set size.
  std::vector<std::pair<double, long>> knn(const Vec3& q, long k) const;

  const std::vector<Vec3>& points() const { return points_; }

 private:
  struct KdNode {
    long left = -1, right = -1;
    long begin = 0, end = 0;  // leaf point range in order_
    int axis = 0;
    double split = 0;
  };

  long build(long begin, long end);
  void search(long node, const Vec3& q, long k,
              std::vector<std::pair<double, long>>& heap) const;

  std::vector<Vec3> points_;
  std::vector<KdNode> nodes_;
  std::vector<long> order_;
  long root_ = -1;
};

}  // namespace lgc::geom
