#include "lgc/sampling.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include "lgc/error.hpp"
#include "lgc/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "sample caches are raw little-endian doubles");

namespace lgc::geom {

using nlohmann::json;

void SampleSet::append(const SampleSet& other) {
  points.insert(points.end(), other.points.begin(), other.points.end());
  unsigned_distance.insert(unsigned_distance.end(), other.unsigned_distance.begin(),
                           other.unsigned_distance.end());
  on_surface.insert(on_surface.end(), other.on_surface.begin(), other.on_surface.end());
  normal.insert(normal.end(), other.normal.begin(), other.normal.end());
}

SampleSet sample_surface(const TriangleMesh& mesh, long count, std::uint64_t seed) {
  if (mesh.faces.empty()) throw Error("sample_surface: empty mesh");
  if (count < 1) throw Error("sample_surface: count must be >= 1");

  const long nf = mesh.num_faces();
  std::vector<double> cum(static_cast<std::size_t>(nf));
  double total = 0;
  for (long f = 0; f < nf; ++f) {
    total += mesh.face_area(f);
    cum[f] = total;
  }
  if (total <= 0) throw Error("sample_surface: mesh has zero total area");

  Rng rng(seed);
  SampleSet set;
  set.points.reserve(count);
  set.unsigned_distance.assign(count, 0.0);
  set.on_surface.assign(count, 1);
  set.normal.reserve(count);

  for (long i = 0; i < count; ++i) {
    const double u = rng.uniform() * total;
    long f = static_cast<long>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    if (f >= nf) f = nf - 1;
    const auto& t = mesh.faces[f];
    // sqrt trick: (1-sqrt(r1), sqrt(r1)(1-r2), sqrt(r1) r2) is area-uniform.
    const double su = std::sqrt(rng.uniform());
    const double v = rng.uniform();
    const Vec3 p = mesh.vertices[t[0]] * (1.0 - su) + mesh.vertices[t[1]] * (su * (1.0 - v)) +
                   mesh.vertices[t[2]] * (su * v);
    set.points.push_back(p);
    set.normal.push_back(mesh.face_normal(f));
  }
  return set;
}

SampleSet sample_perturbed(const SampleSet& surface, const MeshBvh& index, long count,
                           double sigma_global, long knn_k, std::uint64_t seed,
                           double sigma_local_override) {
  if (surface.size() == 0) throw Error("sample_perturbed: no surface samples");
  if (count < 1) throw Error("sample_perturbed: count must be >= 1");
  if (sigma_local_override < 0 && surface.size() < knn_k)
    throw Error("sample_perturbed: " + std::to_string(surface.size()) +
                " surface samples but knn_k = " + std::to_string(knn_k));

  // sigma_local per center: distance to the knn_k-th nearest *other* sample.
  // The query set contains the center itself at distance zero, so ask for
  // one extra neighbor and skip the self entry.
  std::vector<double> sigma_local(static_cast<std::size_t>(surface.size()), 0.0);
  if (sigma_local_override < 0) {
    PointKdTree tree(surface.points);
    for (long i = 0; i < surface.size(); ++i) {
      auto nn = tree.knn(surface.points[i], knn_k + 1);
      double d2 = 0;
      long seen = 0;
      for (const auto& [dd, idx] : nn) {
        if (idx == i) continue;  // the center itself
        d2 = dd;
        if (++seen == knn_k) break;
      }
      sigma_local[i] = std::sqrt(d2);
    }
  } else {
    std::fill(sigma_local.begin(), sigma_local.end(), sigma_local_override);
  }

  Rng rng(seed);
  SampleSet set;
  set.points.reserve(count);
  set.unsigned_distance.reserve(count);
  set.on_surface.assign(count, 0);
  set.normal.assign(count, Vec3{0, 0, 0});

  while (set.size() < count) {
    const long c = static_cast<long>(rng.uniform_index(surface.size()));
    const Vec3 x = surface.points[c];
    for (const double sigma : {sigma_local[c], sigma_global}) {
      if (set.size() >= count) break;
      const Vec3 p = x + Vec3{rng.normal(), rng.normal(), rng.normal()} * sigma;
      set.points.push_back(p);
      set.unsigned_distance.push_back(index.nearest(p).dist);
    }
  }
  return set;
}

void save_samples(const std::string& path, const SampleSet& set, json sidecar) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  for (long i = 0; i < set.size(); ++i) {
    const double row[8] = {set.points[i].x,  set.points[i].y,  set.points[i].z,
                           set.unsigned_distance[i], set.normal[i].x, set.normal[i].y,
                           set.normal[i].z,  set.on_surface[i] ? 1.0 : 0.0};
    f.write(reinterpret_cast<const char*>(row), sizeof(row));
  }
  if (!f) throw IoError("short write to " + path);

  sidecar["count"] = set.size();
  std::ofstream sf(path + ".json", std::ios::trunc);
  if (!sf) throw IoError("cannot write " + path + ".json");
  sf << sidecar.dump(2) << "\n";
}

SampleSet load_samples(const std::string& path, json* sidecar_out) {
  std::ifstream sf(path + ".json");
  if (!sf) throw IoError("cannot read " + path + ".json");
  json sidecar;
  try {
    sf >> sidecar;
  } catch (const json::exception& e) {
    throw IoError(path + ".json: " + e.what());
  }
  const long count = sidecar.at("count").get<long>();

  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  f.seekg(0, std::ios::end);
  const long bytes = static_cast<long>(f.tellg());
  if (bytes != count * 8 * static_cast<long>(sizeof(double)))
    throw IoError(path + ": " + std::to_string(bytes) + " bytes but sidecar promises " +
                  std::to_string(count) + " rows");
  f.seekg(0);

  SampleSet set;
  set.points.resize(count);
  set.unsigned_distance.resize(count);
  set.on_surface.resize(count);
  set.normal.resize(count);
  for (long i = 0; i < count; ++i) {
    double row[8];
    f.read(reinterpret_cast<char*>(row), sizeof(row));
    if (!f) throw IoError(path + ": truncated at row " + std::to_string(i));
    set.points[i] = {row[0], row[1], row[2]};
    set.unsigned_distance[i] = row[3];
    set.normal[i] = {row[4], row[5], row[6]};
    set.on_surface[i] = row[7] != 0.0 ? 1 : 0;
  }
  if (sidecar_out) *sidecar_out = std::move(sidecar);
  return set;
}

}  // namespace lgc::geom
