#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <vector>

#include "lgc/error.hpp"
#include "lgc/fixtures.hpp"
#include "lgc/regions.hpp"
#include "lgc/rng.hpp"

using namespace lgc;
using namespace lgc::regions;

namespace {

long brute_nearest(const std::vector<Vec3>& pts, const Vec3& q) {
  long best = 0;
  double best_d2 = norm2(q - pts[0]);
  for (long i = 1; i < static_cast<long>(pts.size()); ++i) {
    const double d2 = norm2(q - pts[static_cast<std::size_t>(i)]);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

Vec3 rotate(const std::array<std::array<double, 3>, 3>& R, const Vec3& v) {
  return Vec3(R[0][0] * v.x + R[0][1] * v.y + R[0][2] * v.z,
              R[1][0] * v.x + R[1][1] * v.y + R[1][2] * v.z,
              R[2][0] * v.x + R[2][1] * v.y + R[2][2] * v.z);
}

// Rodrigues rotation about a unit axis.
std::array<std::array<double, 3>, 3> axis_angle(const Vec3& axis_in, double angle) {
  const Vec3 a = normalized(axis_in);
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  return {{{t * a.x * a.x + c, t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y},
           {t * a.x * a.y + s * a.z, t * a.y * a.y + c, t * a.y * a.z - s * a.x},
           {t * a.x * a.z - s * a.y, t * a.y * a.z + s * a.x, t * a.z * a.z + c}}};
}

// Mesh stand-in with explicit edges and no faces; ring_neighborhoods only
// reads vertices and edges.
geom::TriangleMesh graph_mesh(long n, std::vector<std::array<long, 2>> edges) {
  geom::TriangleMesh m;
  m.vertices.assign(static_cast<std::size_t>(n), Vec3(0, 0, 0));
  m.edges = std::move(edges);
  return m;
}

std::vector<std::vector<long>> bfs_oracle(long n, const std::vector<std::array<long, 2>>& edges,
                                          long src, int depth) {
  std::vector<std::vector<long>> adj(static_cast<std::size_t>(n));
  for (const auto& e : edges) {
    adj[static_cast<std::size_t>(e[0])].push_back(e[1]);
    adj[static_cast<std::size_t>(e[1])].push_back(e[0]);
  }
  std::vector<int> dist(static_cast<std::size_t>(n), -1);
  dist[static_cast<std::size_t>(src)] = 0;
  std::vector<long> frontier{src};
  std::vector<std::vector<long>> rings(static_cast<std::size_t>(depth));
  for (int k = 1; k <= depth; ++k) {
    std::vector<long> next;
    for (long u : frontier)
      for (long v : adj[static_cast<std::size_t>(u)])
        if (dist[static_cast<std::size_t>(v)] < 0) {
          dist[static_cast<std::size_t>(v)] = k;
          next.push_back(v);
        }
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    rings[static_cast<std::size_t>(k - 1)] = next;
    frontier = std::move(next);
  }
  return rings;
}

double row_sum(const ad::Csr& s, long i) {
  double acc = 0.0;
  for (long p = s.row_ptr[static_cast<std::size_t>(i)]; p < s.row_ptr[static_cast<std::size_t>(i + 1)]; ++p)
    acc += s.vals[static_cast<std::size_t>(p)];
  return acc;
}

double entry(const ad::Csr& s, long i, long j) {
  for (long p = s.row_ptr[static_cast<std::size_t>(i)]; p < s.row_ptr[static_cast<std::size_t>(i + 1)]; ++p)
    if (s.col_idx[static_cast<std::size_t>(p)] == j) return s.vals[static_cast<std::size_t>(p)];
  return 0.0;
}

}  // namespace

TEST_CASE("nearest key point and tie-breaking") {
  KeyPointSet kp({Vec3(0, 0, 0), Vec3(1, 0, 0)});
  CHECK(kp.nearest(Vec3(0.2, 0, 0)) == 0);
  CHECK(kp.nearest(Vec3(0.9, 0, 0)) == 1);
  // Equidistant: lowest index wins.
  CHECK(kp.nearest(Vec3(0.5, 0, 0)) == 0);
  CHECK(kp.nearest(Vec3(0.5, 3.0, -2.0)) == 0);
}

TEST_CASE("local transform is translation into the key point frame") {
  const Vec3 got = local_transform(Vec3(1, 2, 3), Vec3(0.5, 0, 1));
  CHECK(got == Vec3(0.5, 2, 2));
  CHECK(local_transform(Vec3(0.25, -1, 4), Vec3(0.25, -1, 4)) == Vec3(0, 0, 0));
}

TEST_CASE("assign_regions matches brute force, ties included") {
  Rng rng(20240511);
  std::vector<Vec3> pts;
  for (int i = 0; i < 40; ++i) {
    // Snap key points to a coarse grid so equidistant queries actually occur.
    pts.emplace_back(std::round(rng.uniform(-2, 2) * 2) / 2, std::round(rng.uniform(-2, 2) * 2) / 2,
                     std::round(rng.uniform(-2, 2) * 2) / 2);
  }
  KeyPointSet kp(pts);

  std::vector<Vec3> samples;
  for (int i = 0; i < 10000; ++i) {
    if (i % 3 == 0)
      samples.emplace_back(std::round(rng.uniform(-2, 2) * 4) / 4, std::round(rng.uniform(-2, 2) * 4) / 4,
                           std::round(rng.uniform(-2, 2) * 4) / 4);
    else
      samples.emplace_back(rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5));
  }

  const RegionAssignment ra = assign_regions(samples, kp);
  REQUIRE(ra.region.size() == samples.size());
  REQUIRE(ra.local.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const long want = brute_nearest(pts, samples[i]);
    CHECK(ra.region[i] == want);
    CHECK(ra.local[i] == samples[i] - pts[static_cast<std::size_t>(ra.region[i])]);
  }
}

TEST_CASE("region labels are invariant under rigid motion") {
  Rng rng(77);
  std::vector<Vec3> pts;
  for (int i = 0; i < 25; ++i)
    pts.emplace_back(rng.normal(), rng.normal(), rng.normal());
  std::vector<Vec3> samples;
  for (int i = 0; i < 2000; ++i)
    samples.emplace_back(rng.normal() * 1.5, rng.normal() * 1.5, rng.normal() * 1.5);

  const RegionAssignment base = assign_regions(samples, KeyPointSet(pts));

  const auto R = axis_angle(Vec3(0.3, -1.1, 0.7), 1.234);
  const Vec3 t(0.4, -2.0, 1.1);
  std::vector<Vec3> pts_r, samples_r;
  for (const Vec3& p : pts) pts_r.push_back(rotate(R, p) + t);
  for (const Vec3& x : samples) samples_r.push_back(rotate(R, x) + t);

  const RegionAssignment moved = assign_regions(samples_r, KeyPointSet(pts_r));
  CHECK(moved.region == base.region);
}

TEST_CASE("assign_regions edge cases") {
  KeyPointSet kp({Vec3(0, 0, 0)});
  const RegionAssignment empty = assign_regions({}, kp);
  CHECK(empty.region.empty());
  CHECK(empty.local.empty());
  // An empty key point set is rejected at construction time.
  CHECK_THROWS_AS(KeyPointSet({}), Error);
}

TEST_CASE("icosahedron one-rings have valence five and equal the edge set") {
  const geom::TriangleMesh ico = fixtures::icosphere(0);
  const RingNeighborhoods rn = ring_neighborhoods(ico, 1);
  REQUIRE(rn.num_vertices == 12);

  std::set<std::pair<long, long>> from_rings, from_edges;
  for (long v = 0; v < 12; ++v) {
    CHECK(rn.ring(v, 1).size() == 5);
    for (long u : rn.ring(v, 1)) from_rings.insert({std::min(u, v), std::max(u, v)});
  }
  for (const auto& e : ico.edges) from_edges.insert({std::min(e[0], e[1]), std::max(e[0], e[1])});
  CHECK(from_rings == from_edges);
}

TEST_CASE("path graph rings") {
  const geom::TriangleMesh path = graph_mesh(3, {{0, 1}, {1, 2}});
  const RingNeighborhoods rn = ring_neighborhoods(path, 2);
  CHECK(rn.ring(0, 1) == std::vector<long>{1});
  CHECK(rn.ring(0, 2) == std::vector<long>{2});
  CHECK(rn.ring(1, 1) == std::vector<long>{0, 2});
  CHECK(rn.ring(1, 2).empty());
  CHECK(rn.ring(2, 1) == std::vector<long>{1});
  CHECK(rn.ring(2, 2) == std::vector<long>{0});
}

TEST_CASE("ring depth below one is rejected") {
  const geom::TriangleMesh path = graph_mesh(2, {{0, 1}});
  CHECK_THROWS_AS(ring_neighborhoods(path, 0), ConfigError);
  CHECK_THROWS_AS(ring_neighborhoods(path, -3), ConfigError);
}

TEST_CASE("rings match a breadth-first oracle on random graphs") {
  Rng rng(991);
  for (int trial = 0; trial < 8; ++trial) {
    const long n = 20 + static_cast<long>(rng.uniform_index(20));
    std::vector<std::array<long, 2>> edges;
    for (long a = 0; a < n; ++a)
      for (long b = a + 1; b < n; ++b)
        if (rng.uniform() < 0.12) edges.push_back({a, b});
    const geom::TriangleMesh g = graph_mesh(n, edges);
    const int depth = 1 + static_cast<int>(rng.uniform_index(4));
    const RingNeighborhoods rn = ring_neighborhoods(g, depth);
    for (long s = 0; s < n; ++s) {
      const auto want = bfs_oracle(n, edges, s, depth);
      for (int k = 1; k <= depth; ++k)
        CHECK(rn.ring(s, k) == want[static_cast<std::size_t>(k - 1)]);
    }
  }
}

TEST_CASE("ring properties: disjoint, symmetric, truncation-consistent") {
  const geom::TriangleMesh ico = fixtures::icosphere(1);
  const int depth = 3;
  const RingNeighborhoods rn = ring_neighborhoods(ico, depth);
  const RingNeighborhoods shallow = ring_neighborhoods(ico, depth - 1);

  for (long v = 0; v < rn.num_vertices; ++v) {
    std::set<long> seen{v};
    for (int k = 1; k <= depth; ++k) {
      for (long u : rn.ring(v, k)) {
        CHECK(!seen.count(u));  // each vertex appears in at most one ring
        seen.insert(u);
        // symmetry: u lists v at the same distance
        const auto& back = rn.ring(u, k);
        CHECK(std::binary_search(back.begin(), back.end(), v));
      }
      if (k < depth) CHECK(rn.ring(v, k) == shallow.ring(v, k));
    }
  }
}

TEST_CASE("ring average operator: path graph, normalized") {
  const geom::TriangleMesh path = graph_mesh(3, {{0, 1}, {1, 2}});
  const ad::Csr s = ring_average_operator(ring_neighborhoods(path, 1), RingAverageMode::Normalized);
  CHECK(entry(s, 0, 1) == 1.0);
  CHECK(entry(s, 1, 0) == 0.5);
  CHECK(entry(s, 1, 2) == 0.5);
  CHECK(entry(s, 2, 1) == 1.0);
  CHECK(entry(s, 0, 0) == 0.0);

  // Codes 0, 1, 2 along the path: targets are 1, 1, 1, so the mean absolute
  // residual is (1 + 0 + 1) / 3 = 2/3.
  const std::vector<double> z{0.0, 1.0, 2.0};
  std::vector<double> sz(3, 0.0);
  s.apply(z.data(), 1, sz.data());
  double mean_abs = 0.0;
  for (int i = 0; i < 3; ++i) mean_abs += std::abs(z[static_cast<std::size_t>(i)] - sz[static_cast<std::size_t>(i)]);
  mean_abs /= 3.0;
  CHECK(mean_abs == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("ring average operator: empty rings are skipped, not averaged in") {
  // Path of three vertices, depth 2. Vertex 1 has an empty second ring, so
  // its normalized row averages over the first ring only.
  const geom::TriangleMesh path = graph_mesh(3, {{0, 1}, {1, 2}});
  const ad::Csr s = ring_average_operator(ring_neighborhoods(path, 2), RingAverageMode::Normalized);
  CHECK(entry(s, 0, 1) == 0.5);  // ring 1 = {1}, ring 2 = {2}, each weighted 1/2
  CHECK(entry(s, 0, 2) == 0.5);
  // Vertex 1 averages over its single nonempty ring {0, 2}; the empty second
  // ring does not dilute the row.
  CHECK(entry(s, 1, 0) == 0.5);
  CHECK(entry(s, 1, 2) == 0.5);
  CHECK(row_sum(s, 1) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("ring average operator: literal mode sums ring means") {
  // Cycle of eight vertices: every ring up to depth 3 is nonempty.
  std::vector<std::array<long, 2>> edges;
  for (long i = 0; i < 8; ++i) edges.push_back({i, (i + 1) % 8});
  const geom::TriangleMesh cyc = graph_mesh(8, edges);
  const ad::Csr lit = ring_average_operator(ring_neighborhoods(cyc, 3), RingAverageMode::Literal);
  const ad::Csr nrm = ring_average_operator(ring_neighborhoods(cyc, 3), RingAverageMode::Normalized);

  for (long v = 0; v < 8; ++v) {
    CHECK(row_sum(lit, v) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(row_sum(nrm, v) == doctest::Approx(1.0).epsilon(1e-15));
  }

  // Constant codes c: literal target is 3c, so the residual is 2|c| per entry.
  const double c = -0.7;
  std::vector<double> z(8, c), sz(8, 0.0);
  lit.apply(z.data(), 1, sz.data());
  for (long v = 0; v < 8; ++v)
    CHECK(std::abs(z[static_cast<std::size_t>(v)] - sz[static_cast<std::size_t>(v)]) ==
          doctest::Approx(2.0 * std::abs(c)).epsilon(1e-15));
}

TEST_CASE("ring average operator: isolated vertex gets an identity row") {
  RingNeighborhoods rn;
  rn.num_vertices = 2;
  rn.depth = 2;
  rn.rings = {{{1}, {}}, {{}, {}}};  // vertex 1 sees nobody
  const ad::Csr s = ring_average_operator(rn, RingAverageMode::Normalized);
  CHECK(entry(s, 0, 1) == 1.0);
  CHECK(entry(s, 1, 1) == 1.0);
  CHECK(entry(s, 1, 0) == 0.0);
}

TEST_CASE("ring neighborhoods are deterministic") {
  const geom::TriangleMesh ico = fixtures::icosphere(1);
  const RingNeighborhoods a = ring_neighborhoods(ico, 3);
  const RingNeighborhoods b = ring_neighborhoods(ico, 3);
  CHECK(a.rings == b.rings);
}
