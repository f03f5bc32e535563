#include "lgc/regions.hpp"

#include <algorithm>
#include <queue>

#include "lgc/error.hpp"

namespace lgc::regions {

RegionAssignment assign_regions(const std::vector<Vec3>& samples, const KeyPointSet& keypoints) {
  RegionAssignment out;
  out.region.reserve(samples.size());
  out.local.reserve(samples.size());
  for (const Vec3& x : samples) {
    const long r = keypoints.nearest(x);
    out.region.push_back(r);
    out.local.push_back(local_transform(x, keypoints.points()[static_cast<std::size_t>(r)]));
  }
  return out;
}

RingNeighborhoods ring_neighborhoods(const geom::TriangleMesh& mesh, int depth) {
  if (depth < 1) throw ConfigError("ring_neighborhoods: depth must be >= 1, got " + std::to_string(depth));
  const long n = static_cast<long>(mesh.vertices.size());

  std::vector<std::vector<long>> adj(static_cast<std::size_t>(n));
  for (const auto& e : mesh.edges) {
    adj[static_cast<std::size_t>(e[0])].push_back(e[1]);
    adj[static_cast<std::size_t>(e[1])].push_back(e[0]);
  }

  RingNeighborhoods out;
  out.num_vertices = n;
  out.depth = depth;
  out.rings.assign(static_cast<std::size_t>(n),
                   std::vector<std::vector<long>>(static_cast<std::size_t>(depth)));

  std::vector<int> dist(static_cast<std::size_t>(n), -1);
  std::vector<long> touched;
  for (long s = 0; s < n; ++s) {
    touched.clear();
    dist[static_cast<std::size_t>(s)] = 0;
    touched.push_back(s);
    std::queue<long> q;
    q.push(s);
    while (!q.empty()) {
      const long u = q.front();
      q.pop();
      const int du = dist[static_cast<std::size_t>(u)];
      if (du == depth) continue;
      for (long v : adj[static_cast<std::size_t>(u)]) {
        if (dist[static_cast<std::size_t>(v)] >= 0) continue;
        dist[static_cast<std::size_t>(v)] = du + 1;
        touched.push_back(v);
        out.rings[static_cast<std::size_t>(s)][static_cast<std::size_t>(du)].push_back(v);
        q.push(v);
      }
    }
    for (auto& ring : out.rings[static_cast<std::size_t>(s)])
      std::sort(ring.begin(), ring.end());
    for (long v : touched) dist[static_cast<std::size_t>(v)] = -1;
  }
  return out;
}

ad::Csr ring_average_operator(const RingNeighborhoods& rings, RingAverageMode mode) {
  std::vector<ad::Triplet> trips;
  for (long i = 0; i < rings.num_vertices; ++i) {
    int nonempty = 0;
    for (int k = 1; k <= rings.depth; ++k)
      if (!rings.ring(i, k).empty()) ++nonempty;
    if (nonempty == 0) {
      trips.push_back({i, i, 1.0});
      continue;
    }
    const double outer = mode == RingAverageMode::Normalized ? 1.0 / nonempty : 1.0;
    for (int k = 1; k <= rings.depth; ++k) {
      const auto& ring = rings.ring(i, k);
      if (ring.empty()) continue;
      const double w = outer / static_cast<double>(ring.size());
      for (long j : ring) trips.push_back({i, j, w});
    }
  }
  return ad::csr_from_triplets(rings.num_vertices, rings.num_vertices, trips);
}

}  // namespace lgc::regions
