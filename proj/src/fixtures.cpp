#include "lgc/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

#include "lgc/extract.hpp"

namespace lgc::fixtures {

using geom::TriangleMesh;
using lgc::Vec3;

TriangleMesh icosphere(int level, double radius) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh mesh;
  mesh.vertices = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
                   {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  mesh.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},
                {5, 11, 4}, {11, 10, 2}, {10, 7, 6},  {7, 1, 8},  {3, 9, 4},   {3, 4, 2},
                {3, 2, 6},  {3, 6, 8},  {3, 8, 9},   {4, 9, 5},  {2, 4, 11},  {6, 2, 10},
                {8, 6, 7},  {9, 8, 1}};

  for (int l = 0; l < level; ++l) {
    std::map<std::pair<long, long>, long> midpoint;
    auto mid = [&](long a, long b) {
      const std::pair<long, long> key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      const long idx = mesh.num_vertices();
      mesh.vertices.push_back((mesh.vertices[a] + mesh.vertices[b]) * 0.5);
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<long, 3>> next;
    next.reserve(mesh.faces.size() * 4);
    for (const auto& f : mesh.faces) {
      const long ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    mesh.faces = std::move(next);
  }

  for (Vec3& v : mesh.vertices) v = v.normalized() * radius;
  geom::clean_and_derive_edges(mesh);
  return mesh;
}

namespace {

double sphere_sdf(const Vec3& p, const Vec3& c, double r) { return (p - c).norm() - r; }

double capsule_sdf(const Vec3& p, const Vec3& a, const Vec3& b, double r) {
  const Vec3 ab = b - a;
  const double t = std::clamp(dot(p - a, ab) / dot(ab, ab), 0.0, 1.0);
  return (p - (a + ab * t)).norm() - r;
}

geom::TriangleMesh from_sdf(const std::function<double(const Vec3&)>& sdf, const Vec3& lo,
                            const Vec3& hi, long res) {
  extract::GridSpec grid;
  grid.lo = lo;
  grid.hi = hi;
  const Vec3 extent = hi - lo;
  const double max_extent = std::max({extent.x, extent.y, extent.z});
  for (int a = 0; a < 3; ++a)
    grid.resolution[a] = std::max<long>(8, std::lround(res * extent[a] / max_extent));
  return extract::marching_cubes(sdf, grid);
}

}  // namespace

TriangleMesh dumbbell() {
  auto sdf = [](const Vec3& p) {
    const double ball_l = sphere_sdf(p, {-0.55, 0, 0}, 0.32);
    const double ball_r = sphere_sdf(p, {0.55, 0, 0}, 0.32);
    const double bar = capsule_sdf(p, {-0.55, 0, 0}, {0.55, 0, 0}, 0.14);
    return std::min({ball_l, ball_r, bar});
  };
  return from_sdf(sdf, {-1.0, -0.45, -0.45}, {1.0, 0.45, 0.45}, 48);
}

TriangleMesh multi_limb() {
  auto sdf = [](const Vec3& p) {
    const Vec3 torso{0, 0, 0};
    double d = sphere_sdf(p, torso, 0.3);
    d = std::min(d, capsule_sdf(p, torso, {0.75, 0.15, 0}, 0.1));   // right arm
    d = std::min(d, capsule_sdf(p, torso, {-0.75, 0.15, 0}, 0.1));  // left arm
    d = std::min(d, capsule_sdf(p, {-0.15, -0.2, 0}, {-0.3, -0.7, 0}, 0.1));
    d = std::min(d, capsule_sdf(p, {0.15, -0.2, 0}, {0.3, -0.7, 0}, 0.1));
    d = std::min(d, capsule_sdf(p, torso, {0, 0.65, 0}, 0.12));  // head
    return d;
  };
  return from_sdf(sdf, {-0.95, -0.9, -0.45}, {0.95, 0.85, 0.45}, 48);
}

}  // namespace lgc::fixtures
