#include "lgc/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lgc/error.hpp"

namespace lgc::geom {

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) return a;

  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));

  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && d4 - d3 >= 0 && d5 - d6 >= 0)
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));

  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

namespace {

double box_dist2(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  double s = 0;
  for (int k = 0; k < 3; ++k) {
    const double d = p[k] < lo[k] ? lo[k] - p[k] : (p[k] > hi[k] ? p[k] - hi[k] : 0.0);
    s += d * d;
  }
  return s;
}

}  // namespace

MeshBvh::MeshBvh(const TriangleMesh& mesh) : mesh_(mesh) {
  if (mesh.faces.empty()) throw Error("MeshBvh: mesh has no faces");
  const long nf = mesh.num_faces();
  order_.resize(nf);
  std::vector<Vec3> centroids(static_cast<std::size_t>(nf));
  for (long f = 0; f < nf; ++f) {
    order_[f] = f;
    const auto& t = mesh.faces[f];
    centroids[f] =
        (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) * (1.0 / 3.0);
  }
  nodes_.reserve(static_cast<std::size_t>(2 * nf));
  root_ = build(0, nf, centroids);
}

long MeshBvh::build(long begin, long end, std::vector<Vec3>& centroids) {
  BvhNode node;
  const auto& tform = mesh_.faces[order_[begin]];
  node.lo = node.hi = mesh_.vertices[tform[0]];
  Vec3 clo = centroids[order_[begin]], chi = clo;
  for (long i = begin; i < end; ++i) {
    const auto& t = mesh_.faces[order_[i]];
    for (int k = 0; k < 3; ++k) {
      node.lo = min3(node.lo, mesh_.vertices[t[k]]);
      node.hi = max3(node.hi, mesh_.vertices[t[k]]);
    }
    clo = min3(clo, centroids[order_[i]]);
    chi = max3(chi, centroids[order_[i]]);
  }

  if (end - begin <= 4) {
    node.begin = begin;
    node.end = end;
    nodes_.push_back(node);
    return static_cast<long>(nodes_.size()) - 1;
  }

  const Vec3 ext = chi - clo;
  int axis = 0;
  if (ext.y > ext.x) axis = 1;
  if (ext.z > ext[axis]) axis = 2;
  const long mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](long fa, long fb) {
                     const double ca = centroids[fa][axis], cb = centroids[fb][axis];
                     return ca != cb ? ca < cb : fa < fb;
                   });

  const long left = build(begin, mid, centroids);
  const long right = build(mid, end, centroids);
  node.left = left;
  node.right = right;
  nodes_.push_back(node);
  return static_cast<long>(nodes_.size()) - 1;
}

MeshBvh::Hit MeshBvh::nearest(const Vec3& p) const {
  double best_d2 = std::numeric_limits<double>::infinity();
  long best_face = -1;
  Vec3 best_point{0, 0, 0};

  long stack[128];
  int top = 0;
  stack[top++] = root_;
  while (top > 0) {
    const BvhNode& node = nodes_[static_cast<std::size_t>(stack[--top])];
    if (box_dist2(p, node.lo, node.hi) > best_d2) continue;
    if (node.left < 0) {
      for (long i = node.begin; i < node.end; ++i) {
        const long f = order_[i];
        const auto& t = mesh_.faces[f];
        const Vec3 q = closest_point_on_triangle(p, mesh_.vertices[t[0]], mesh_.vertices[t[1]],
                                                 mesh_.vertices[t[2]]);
        const double d2 = (p - q).norm2();
        if (d2 < best_d2 || (d2 == best_d2 && f < best_face)) {
          best_d2 = d2;
          best_face = f;
          best_point = q;
        }
      }
      continue;
    }
    // Visit the closer child first so pruning bites sooner.
    const BvhNode& l = nodes_[static_cast<std::size_t>(node.left)];
    const BvhNode& r = nodes_[static_cast<std::size_t>(node.right)];
    const double dl = box_dist2(p, l.lo, l.hi), dr = box_dist2(p, r.lo, r.hi);
    if (dl <= dr) {
      stack[top++] = node.right;
      stack[top++] = node.left;
    } else {
      stack[top++] = node.left;
      stack[top++] = node.right;
    }
  }

  Hit h;
  h.dist = std::sqrt(best_d2);
  h.face = best_face;
  h.point = best_point;
  return h;
}

PointKdTree::PointKdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.empty()) throw Error("PointKdTree: empty point set");
  order_.resize(points_.size());
  for (std::size_t i = 0; i < points_.size(); ++i) order_[i] = static_cast<long>(i);
  nodes_.reserve(2 * points_.size());
  root_ = build(0, static_cast<long>(points_.size()));
}

long PointKdTree::build(long begin, long end) {
  if (end - begin <= 8) {
    KdNode node;
    node.begin = begin;
    node.end = end;
    nodes_.push_back(node);
    return static_cast<long>(nodes_.size()) - 1;
  }
  Vec3 lo = points_[order_[begin]], hi = lo;
  for (long i = begin; i < end; ++i) {
    lo = min3(lo, points_[order_[i]]);
    hi = max3(hi, points_[order_[i]]);
  }
  const Vec3 ext = hi - lo;
  int axis = 0;
  if (ext.y > ext.x) axis = 1;
  if (ext.z > ext[axis]) axis = 2;
  const long mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](long ia, long ib) {
                     const double ca = points_[ia][axis], cb = points_[ib][axis];
                     return ca != cb ? ca < cb : ia < ib;
                   });
  KdNode node;
  node.axis = axis;
  node.split = points_[order_[mid]][axis];
  const long left = build(begin, mid);
  const long right = build(mid, end);
  node.left = left;
  node.right = right;
  nodes_.push_back(node);
  return static_cast<long>(nodes_.size()) - 1;
}

void PointKdTree::search(long id, const Vec3& q, long k,
                         std::vector<std::pair<double, long>>& heap) const {
  const KdNode& node = nodes_[static_cast<std::size_t>(id)];
  if (node.left < 0) {
    for (long i = node.begin; i < node.end; ++i) {
      const long idx = order_[i];
      const std::pair<double, long> cand{(points_[idx] - q).norm2(), idx};
      if (static_cast<long>(heap.size()) < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end());
      } else if (cand < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  const double delta = q[node.axis] - node.split;
  const long near = delta < 0 ? node.left : node.right;
  const long far = delta < 0 ? node.right : node.left;
  search(near, q, k, heap);
  if (static_cast<long>(heap.size()) < k || delta * delta <= heap.front().first)
    search(far, q, k, heap);
}

std::pair<double, long> PointKdTree::nearest(const Vec3& q) const { return knn(q, 1)[0]; }

std::vector<std::pair<double, long>> PointKdTree::knn(const Vec3& q, long k) const {
  k = std::min<long>(k, static_cast<long>(points_.size()));
  if (k <= 0) throw Error("PointKdTree::knn: k must be positive");
  std::vector<std::pair<double, long>> heap;
  heap.reserve(static_cast<std::size_t>(k));
  search(root_, q, k, heap);
  std::sort_heap(heap.begin(), heap.end());
  return heap;
}

}  // namespace lgc::geom
