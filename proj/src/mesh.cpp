#include "lgc/mesh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "lgc/error.hpp"
#include "lgc/hash.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary PLY I/O assumes a little-endian host");

namespace lgc::geom {

Vec3 TriangleMesh::face_normal(long f) const {
  const auto& t = faces[static_cast<std::size_t>(f)];
  const Vec3 n = cross(vertices[t[1]] - vertices[t[0]], vertices[t[2]] - vertices[t[0]]);
  return n.normalized();
}

double TriangleMesh::face_area(long f) const {
  const auto& t = faces[static_cast<std::size_t>(f)];
  return 0.5 * cross(vertices[t[1]] - vertices[t[0]], vertices[t[2]] - vertices[t[0]]).norm();
}

void TriangleMesh::bbox(Vec3& lo, Vec3& hi) const {
  if (vertices.empty()) throw Error("bbox: empty mesh");
  lo = hi = vertices[0];
  for (const Vec3& v : vertices) {
    lo = min3(lo, v);
    hi = max3(hi, v);
  }
}

long clean_and_derive_edges(TriangleMesh& mesh) {
  const long nv = mesh.num_vertices();
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    for (long idx : mesh.faces[f]) {
      if (idx < 0 || idx >= nv)
        throw IoError("face " + std::to_string(f) + " references vertex " + std::to_string(idx) +
                      " of " + std::to_string(nv));
    }
  }
  std::vector<std::array<long, 3>> kept;
  kept.reserve(mesh.faces.size());
  long dropped = 0;
  for (const auto& t : mesh.faces) {
    const Vec3 n =
        cross(mesh.vertices[t[1]] - mesh.vertices[t[0]], mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    if (n.norm2() == 0.0) {
      ++dropped;
      continue;
    }
    kept.push_back(t);
  }
  mesh.faces = std::move(kept);

  std::set<std::array<long, 2>> edges;
  for (const auto& t : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      long a = t[k], b = t[(k + 1) % 3];
      if (a == b) continue;
      edges.insert({std::min(a, b), std::max(a, b)});
    }
  }
  mesh.edges.assign(edges.begin(), edges.end());
  return dropped;
}

namespace {

bool has_suffix(const std::string& s, const std::string& suf) {
  if (s.size() < suf.size()) return false;
  std::string tail = s.substr(s.size() - suf.size());
  std::transform(tail.begin(), tail.end(), tail.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return tail == suf;
}

long parse_obj_index(const std::string& token, long line_no, long vertex_count) {
  // OBJ face tokens may be v, v/vt, v//vn, or v/vt/vn; only v matters here.
  const std::size_t slash = token.find('/');
  const std::string head = slash == std::string::npos ? token : token.substr(0, slash);
  long idx = 0;
  try {
    idx = std::stol(head);
  } catch (...) {
    throw IoError("line " + std::to_string(line_no) + ": bad face index '" + token + "'");
  }
  if (idx < 0) idx = vertex_count + idx + 1;  // negative indices count from the end
  if (idx < 1 || idx > vertex_count)
    throw IoError("line " + std::to_string(line_no) + ": face index " + head + " out of range");
  return idx - 1;
}

TriangleMesh load_obj(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  TriangleMesh mesh;
  std::string line;
  long line_no = 0;
  long face_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v.x >> v.y >> v.z))
        throw IoError(path + ": line " + std::to_string(line_no) + ": malformed vertex");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<std::string> tokens;
      std::string t;
      while (ss >> t) tokens.push_back(t);
      if (tokens.size() != 3)
        throw IoError(path + ": line " + std::to_string(line_no) + ": face " +
                      std::to_string(face_no) + " has " + std::to_string(tokens.size()) +
                      " vertices; only triangles are supported");
      std::array<long, 3> tri;
      for (int k = 0; k < 3; ++k)
        tri[k] = parse_obj_index(tokens[k], line_no, mesh.num_vertices());
      mesh.faces.push_back(tri);
      ++face_no;
    }
    // Other tags (vn, vt, usemtl, o, g, s, ...) are ignored.
  }
  return mesh;
}

struct PlyProperty {
  std::string name;
  std::string type;       // scalar type, or the value type for lists
  std::string count_type;  // nonempty for list properties
  bool is_list = false;
};

struct PlyElement {
  std::string name;
  long count = 0;
  std::vector<PlyProperty> props;
};

long ply_type_size(const std::string& t, const std::string& where) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
      t == "float32")
    return 4;
  if (t == "double" || t == "float64" || t == "int64" || t == "uint64") return 8;
  throw IoError(where + ": unknown PLY type '" + t + "'");
}

double ply_read_scalar_binary(std::ifstream& f, const std::string& type, const std::string& path) {
  unsigned char buf[8];
  const long n = ply_type_size(type, path);
  const long offset = static_cast<long>(f.tellg());
  f.read(reinterpret_cast<char*>(buf), n);
  if (!f)
    throw IoError(path + ": truncated binary data at byte offset " + std::to_string(offset));
  if (type == "char" || type == "int8") return static_cast<double>(static_cast<signed char>(buf[0]));
  if (type == "uchar" || type == "uint8") return buf[0];
  auto as = [&](auto v) {
    std::memcpy(&v, buf, sizeof(v));
    return static_cast<double>(v);
  };
  if (type == "short" || type == "int16") return as(std::int16_t{});
  if (type == "ushort" || type == "uint16") return as(std::uint16_t{});
  if (type == "int" || type == "int32") return as(std::int32_t{});
  if (type == "uint" || type == "uint32") return as(std::uint32_t{});
  if (type == "float" || type == "float32") return as(float{});
  if (type == "double" || type == "float64") return as(double{});
  if (type == "int64") return as(std::int64_t{});
  return as(std::uint64_t{});
}

TriangleMesh load_ply(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string line;
  long line_no = 0;
  auto next_line = [&]() {
    if (!std::getline(f, line)) throw IoError(path + ": unexpected end of header");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };

  next_line();
  if (line != "ply") throw IoError(path + ": line 1: not a PLY file");
  std::string format;
  std::vector<PlyElement> elements;
  while (true) {
    next_line();
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "comment" || tag == "obj_info" || tag.empty()) continue;
    if (tag == "format") {
      ss >> format;
      if (format != "ascii" && format != "binary_little_endian")
        throw IoError(path + ": line " + std::to_string(line_no) + ": unsupported PLY format '" +
                      format + "'");
    } else if (tag == "element") {
      PlyElement e;
      if (!(ss >> e.name >> e.count))
        throw IoError(path + ": line " + std::to_string(line_no) + ": malformed element");
      elements.push_back(e);
    } else if (tag == "property") {
      if (elements.empty())
        throw IoError(path + ": line " + std::to_string(line_no) + ": property before element");
      PlyProperty p;
      std::string t1;
      ss >> t1;
      if (t1 == "list") {
        p.is_list = true;
        if (!(ss >> p.count_type >> p.type >> p.name))
          throw IoError(path + ": line " + std::to_string(line_no) + ": malformed list property");
      } else {
        p.type = t1;
        if (!(ss >> p.name))
          throw IoError(path + ": line " + std::to_string(line_no) + ": malformed property");
      }
      elements.back().props.push_back(p);
    } else if (tag == "end_header") {
      break;
    } else {
      throw IoError(path + ": line " + std::to_string(line_no) + ": unknown header tag '" + tag +
                    "'");
    }
  }
  if (format.empty()) throw IoError(path + ": header has no format line");

  const bool binary = format == "binary_little_endian";
  TriangleMesh mesh;

  auto read_ascii_tokens = [&](std::istringstream& ss, const std::string& what) {
    double v;
    if (!(ss >> v))
      throw IoError(path + ": line " + std::to_string(line_no) + ": expected " + what);
    return v;
  };

  for (const PlyElement& el : elements) {
    const bool is_vertex = el.name == "vertex";
    const bool is_face = el.name == "face";
    long ix = -1, iy = -1, iz = -1, ilist = -1;
    if (is_vertex) {
      for (std::size_t i = 0; i < el.props.size(); ++i) {
        if (el.props[i].is_list)
          throw IoError(path + ": vertex element has a list property; unsupported");
        if (el.props[i].name == "x") ix = static_cast<long>(i);
        if (el.props[i].name == "y") iy = static_cast<long>(i);
        if (el.props[i].name == "z") iz = static_cast<long>(i);
      }
      if (ix < 0 || iy < 0 || iz < 0)
        throw IoError(path + ": vertex element lacks x/y/z properties");
    }
    if (is_face) {
      for (std::size_t i = 0; i < el.props.size(); ++i) {
        if (el.props[i].is_list &&
            (el.props[i].name == "vertex_indices" || el.props[i].name == "vertex_index"))
          ilist = static_cast<long>(i);
      }
      if (ilist < 0) throw IoError(path + ": face element lacks a vertex index list");
    }

    for (long row = 0; row < el.count; ++row) {
      std::istringstream ss;
      if (!binary) {
        next_line();
        ss.str(line);
      }
      std::vector<double> scalars;
      std::vector<long> list;
      for (std::size_t i = 0; i < el.props.size(); ++i) {
        const PlyProperty& p = el.props[i];
        if (p.is_list) {
          const long n = static_cast<long>(
              binary ? ply_read_scalar_binary(f, p.count_type, path)
                     : read_ascii_tokens(ss, "list count"));
          std::vector<long> vals(static_cast<std::size_t>(n));
          for (long k = 0; k < n; ++k)
            vals[static_cast<std::size_t>(k)] = static_cast<long>(
                binary ? ply_read_scalar_binary(f, p.type, path)
                       : read_ascii_tokens(ss, "list entry"));
          if (static_cast<long>(i) == ilist) list = std::move(vals);
        } else {
          const double v = binary ? ply_read_scalar_binary(f, p.type, path)
                                  : read_ascii_tokens(ss, "property " + p.name);
          scalars.push_back(v);
        }
      }
      if (is_vertex) {
        mesh.vertices.push_back({scalars[static_cast<std::size_t>(ix)],
                                 scalars[static_cast<std::size_t>(iy)],
                                 scalars[static_cast<std::size_t>(iz)]});
      } else if (is_face) {
        if (list.size() != 3)
          throw IoError(path + ": face " + std::to_string(row) + " has " +
                        std::to_string(list.size()) + " vertices; only triangles are supported");
        mesh.faces.push_back({list[0], list[1], list[2]});
      }
    }
  }
  return mesh;
}

}  // namespace

TriangleMesh load_mesh(const std::string& path) {
  TriangleMesh mesh;
  if (has_suffix(path, ".obj"))
    mesh = load_obj(path);
  else if (has_suffix(path, ".ply"))
    mesh = load_ply(path);
  else
    throw IoError(path + ": unsupported mesh format (expected .obj or .ply)");
  if (mesh.vertices.empty()) throw IoError(path + ": mesh has no vertices");
  if (mesh.faces.empty()) throw IoError(path + ": mesh has no faces");
  clean_and_derive_edges(mesh);
  if (mesh.faces.empty()) throw IoError(path + ": all faces are degenerate");
  return mesh;
}

void save_obj(const std::string& path, const TriangleMesh& mesh) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  char buf[128];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", v.x, v.y, v.z);
    f << buf;
  }
  for (const auto& t : mesh.faces) f << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  if (!f) throw IoError("short write to " + path);
}

void save_ply_binary(const std::string& path, const TriangleMesh& mesh) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << "ply\nformat binary_little_endian 1.0\n";
  f << "element vertex " << mesh.vertices.size() << "\n";
  f << "property double x\nproperty double y\nproperty double z\n";
  f << "element face " << mesh.faces.size() << "\n";
  f << "property list uchar int vertex_indices\n";
  f << "end_header\n";
  for (const Vec3& v : mesh.vertices)
    f.write(reinterpret_cast<const char*>(&v.x), 3 * sizeof(double));
  for (const auto& t : mesh.faces) {
    const unsigned char n = 3;
    f.write(reinterpret_cast<const char*>(&n), 1);
    for (int k = 0; k < 3; ++k) {
      const std::int32_t idx = static_cast<std::int32_t>(t[k]);
      f.write(reinterpret_cast<const char*>(&idx), 4);
    }
  }
  if (!f) throw IoError("short write to " + path);
}

std::uint64_t mesh_content_hash(const TriangleMesh& mesh) {
  std::uint64_t h = fnv1a64("mesh-v1");
  for (const Vec3& v : mesh.vertices) h = fnv1a64(&v.x, 3 * sizeof(double), h);
  for (const auto& t : mesh.faces) h = fnv1a64(t.data(), 3 * sizeof(long), h);
  return h;
}

NormalizationTransform normalize_mesh(TriangleMesh& mesh, const std::string& unit_name) {
  if (mesh.vertices.empty()) throw Error("normalize_mesh: empty mesh");
  Vec3 lo, hi;
  mesh.bbox(lo, hi);
  NormalizationTransform tr;
  tr.unit_name = unit_name;
  tr.center = (lo + hi) * 0.5;
  double r = 0;
  for (const Vec3& v : mesh.vertices) r = std::max(r, (v - tr.center).norm());
  if (r == 0) throw Error("normalize_mesh: mesh has zero extent");
  tr.scale = r;
  for (Vec3& v : mesh.vertices) v = tr.apply(v);
  return tr;
}

}  // namespace lgc::geom
