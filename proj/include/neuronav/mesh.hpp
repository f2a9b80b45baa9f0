#pragma once

// Indexed triangle meshes: marching cubes extraction from masks, welding,
// normals, statistics and OBJ interchange.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "neuronav/error.hpp"
#include "neuronav/mc_tables.hpp"
#include "neuronav/segmentation.hpp"
#include "neuronav/text_doc.hpp"
#include "neuronav/volume.hpp"

namespace neuronav {

using Triangle = std::array<std::uint32_t, 3>;

/// Vertices in millimetres (patient space), counter-clockwise winding seen
/// from outside, one unit normal per vertex (or none).
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
  std::vector<Vec3> normals;

  bool empty() const { return triangles.empty(); }
};

struct MeshStats {
  std::size_t vertex_count = 0;
  std::size_t triangle_count = 0;
  std::size_t edge_count = 0;
  Vec3 bbox_min = Vec3::Zero();
  Vec3 bbox_max = Vec3::Zero();
  std::size_t boundary_edge_count = 0;
  long long euler_characteristic = 0;

  bool watertight() const { return boundary_edge_count == 0; }
};

inline MeshStats mesh_stats(const TriangleMesh& mesh) {
  MeshStats s;
  s.vertex_count = mesh.vertices.size();
  s.triangle_count = mesh.triangles.size();
  if (!mesh.vertices.empty()) {
    s.bbox_min = s.bbox_max = mesh.vertices.front();
    for (const auto& v : mesh.vertices) {
      s.bbox_min = s.bbox_min.cwiseMin(v);
      s.bbox_max = s.bbox_max.cwiseMax(v);
    }
  }
  std::vector<std::uint64_t> edges;
  edges.reserve(mesh.triangles.size() * 3);
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      std::uint64_t a = t[e], b = t[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      edges.push_back((a << 32) | b);
    }
  }
  std::sort(edges.begin(), edges.end());
  for (std::size_t i = 0; i < edges.size();) {
    std::size_t j = i;
    while (j < edges.size() && edges[j] == edges[i]) ++j;
    ++s.edge_count;
    if (j - i == 1) ++s.boundary_edge_count;
    i = j;
  }
  s.euler_characteristic =
      static_cast<long long>(s.vertex_count) - static_cast<long long>(s.edge_count) + static_cast<long long>(s.triangle_count);
  return s;
}

/// Signed enclosed volume (positive for outward-facing closed meshes).
inline double signed_volume(const TriangleMesh& mesh) {
  double v = 0.0;
  for (const auto& t : mesh.triangles) {
    v += mesh.vertices[t[0]].dot(mesh.vertices[t[1]].cross(mesh.vertices[t[2]]));
  }
  return v / 6.0;
}

/// Per-vertex normals: normalised area-weighted sum of incident face normals.
inline std::vector<Vec3> vertex_normals(const std::vector<Vec3>& vertices, const std::vector<Triangle>& triangles) {
  std::vector<Vec3> n(vertices.size(), Vec3::Zero());
  for (const auto& t : triangles) {
    const Vec3 face = (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
    for (auto idx : t) n[idx] += face;
  }
  for (auto& v : n) {
    const double len = v.norm();
    v = len > 0 ? Vec3(v / len) : Vec3::Zero();
  }
  return n;
}

// ---------------------------------------------------------------------------
// Marching cubes

namespace mc_detail {

constexpr std::array<std::array<int, 3>, 8> kCorner = {{
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
}};
constexpr std::array<std::array<int, 2>, 12> kEdgeCorners = {{
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
}};

}  // namespace mc_detail

/// Extracts the iso surface of a 0/1 mask sampled at voxel centres.
/// Vertices on shared cell edges are shared, so the result is already welded.
/// Normals point from the set region to the unset region.
inline TriangleMesh marching_cubes(const LabelMask& mask, const VolumeGeometry& geom, double iso = 0.5) {
  using namespace mc_detail;
  const std::size_t nx = mask.dims[0], ny = mask.dims[1], nz = mask.dims[2];
  if (nx < 2 || ny < 2 || nz < 2) throw Error(ErrorCode::DimsTooSmall, "mask needs at least 2 voxels per axis");
  if (!(iso > 0.0 && iso < 1.0)) throw Error(ErrorCode::InvalidArgument, "iso must lie in (0, 1)");

  TriangleMesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  const auto* bits = mask.bits.data();
  const std::size_t sy = nx, sz = nx * ny;

  auto vertex_on_edge = [&](std::size_t i, std::size_t j, std::size_t k, int edge) -> std::uint32_t {
    auto a = kEdgeCorners[edge][0], b = kEdgeCorners[edge][1];
    // Orient the edge from its lower corner so neighbouring cells agree.
    if (kCorner[a][0] + kCorner[a][1] + kCorner[a][2] > kCorner[b][0] + kCorner[b][1] + kCorner[b][2]) std::swap(a, b);
    const std::size_t li = i + kCorner[a][0], lj = j + kCorner[a][1], lk = k + kCorner[a][2];
    const int axis = kCorner[b][0] != kCorner[a][0] ? 0 : (kCorner[b][1] != kCorner[a][1] ? 1 : 2);
    const std::uint64_t key = 3 * std::uint64_t(lk * sz + lj * sy + li) + std::uint64_t(axis);
    auto [it, inserted] = edge_vertex.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
    if (inserted) {
      const double va = bits[lk * sz + lj * sy + li];
      const double vb = bits[(lk + (axis == 2)) * sz + (lj + (axis == 1)) * sy + li + (axis == 0)];
      const double t = (iso - va) / (vb - va);
      double p[3] = {double(li), double(lj), double(lk)};
      p[axis] += t;
      mesh.vertices.push_back(geom.to_patient(p[0], p[1], p[2]));
    }
    return it->second;
  };

  for (std::size_t k = 0; k + 1 < nz; ++k) {
    for (std::size_t j = 0; j + 1 < ny; ++j) {
      const std::uint8_t* r00 = bits + k * sz + j * sy;
      const std::uint8_t* r10 = r00 + sy;
      const std::uint8_t* r01 = r00 + sz;
      const std::uint8_t* r11 = r01 + sy;
      for (std::size_t i = 0; i + 1 < nx; ++i) {
        const int c0 = r00[i], c1 = r00[i + 1], c2 = r10[i + 1], c3 = r10[i];
        const int c4 = r01[i], c5 = r01[i + 1], c6 = r11[i + 1], c7 = r11[i];
        const int sum = c0 + c1 + c2 + c3 + c4 + c5 + c6 + c7;
        if (sum == 0 || sum == 8) continue;
        // bit set where the corner is below iso, i.e. unset
        const int cube = (!c0) | (!c1) << 1 | (!c2) << 2 | (!c3) << 3 | (!c4) << 4 | (!c5) << 5 | (!c6) << 6 |
                         (!c7) << 7;
        const auto& tri = mc_tables::kTriTable[cube];
        for (int t = 0; tri[t] != -1; t += 3) {
          const auto a = vertex_on_edge(i, j, k, tri[t]);
          const auto b = vertex_on_edge(i, j, k, tri[t + 1]);
          const auto c = vertex_on_edge(i, j, k, tri[t + 2]);
          mesh.triangles.push_back({a, b, c});
        }
      }
    }
  }
  if (geom.orientation.determinant() < 0) {
    for (auto& t : mesh.triangles) std::swap(t[1], t[2]);
  }
  mesh.normals = vertex_normals(mesh.vertices, mesh.triangles);
  return mesh;
}

// ---------------------------------------------------------------------------
// Welding

/// Merges vertices closer than eps (grid hash with cell size eps, checking
/// neighbouring cells), drops triangles that collapse, recomputes normals.
/// eps == 0 merges only bit-identical positions.
inline TriangleMesh weld_and_normals(const TriangleMesh& mesh, double eps) {
  if (eps < 0) throw Error(ErrorCode::InvalidArgument, "eps must be >= 0");
  struct KeyHash {
    std::size_t operator()(const std::array<std::int64_t, 3>& k) const noexcept {
      std::uint64_t h = 1469598103934665603ull;
      for (auto v : k) h = (h ^ std::uint64_t(v)) * 1099511628211ull;
      return std::size_t(h);
    }
  };
  std::unordered_map<std::array<std::int64_t, 3>, std::vector<std::uint32_t>, KeyHash> grid;
  grid.reserve(mesh.vertices.size());
  TriangleMesh out;
  std::vector<std::uint32_t> remap(mesh.vertices.size());

  auto cell_of = [&](const Vec3& p) -> std::array<std::int64_t, 3> {
    if (eps == 0) {
      std::array<std::int64_t, 3> bits_key;
      for (int a = 0; a < 3; ++a) std::memcpy(&bits_key[a], &p[a], sizeof(double));
      return bits_key;
    }
    return {std::int64_t(std::floor(p.x() / eps)), std::int64_t(std::floor(p.y() / eps)),
            std::int64_t(std::floor(p.z() / eps))};
  };

  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    const Vec3& p = mesh.vertices[v];
    const auto cell = cell_of(p);
    std::int64_t found = -1;
    if (eps == 0) {
      auto it = grid.find(cell);
      if (it != grid.end()) found = it->second.front();
    } else {
      for (int dz = -1; dz <= 1 && found < 0; ++dz)
        for (int dy = -1; dy <= 1 && found < 0; ++dy)
          for (int dx = -1; dx <= 1 && found < 0; ++dx) {
            auto it = grid.find({cell[0] + dx, cell[1] + dy, cell[2] + dz});
            if (it == grid.end()) continue;
            for (auto rep : it->second) {
              if ((out.vertices[rep] - p).norm() <= eps) {
                found = rep;
                break;
              }
            }
          }
    }
    if (found >= 0) {
      remap[v] = static_cast<std::uint32_t>(found);
    } else {
      remap[v] = static_cast<std::uint32_t>(out.vertices.size());
      grid[cell].push_back(remap[v]);
      out.vertices.push_back(p);
    }
  }
  for (const auto& t : mesh.triangles) {
    const Triangle r{remap[t[0]], remap[t[1]], remap[t[2]]};
    if (r[0] == r[1] || r[1] == r[2] || r[0] == r[2]) continue;
    out.triangles.push_back(r);
  }
  out.normals = vertex_normals(out.vertices, out.triangles);
  return out;
}

// ---------------------------------------------------------------------------
// OBJ
//
// Writer contract: a "# neuronav mesh" comment line, then one
// "v x y z" line per vertex, one "vn x y z" line per normal (when the mesh has
// per-vertex normals), then "f a//a b//b c//c" (or "f a b c" without normals)
// with 1-based indices. Numbers use printf "%.9g". Lines end with '\n'.

inline constexpr std::string_view kObjHeader = "# neuronav mesh\n";

inline std::string export_obj(const TriangleMesh& mesh) {
  std::string out(kObjHeader);
  out.reserve(out.size() + mesh.vertices.size() * 80 + mesh.triangles.size() * 40);
  char buf[128];
  for (const auto& v : mesh.vertices) {
    const int n = std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
    out.append(buf, std::size_t(n));
  }
  const bool with_normals = !mesh.normals.empty() && mesh.normals.size() == mesh.vertices.size();
  if (with_normals) {
    for (const auto& v : mesh.normals) {
      const int n = std::snprintf(buf, sizeof(buf), "vn %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
      out.append(buf, std::size_t(n));
    }
  }
  for (const auto& t : mesh.triangles) {
    const unsigned a = t[0] + 1, b = t[1] + 1, c = t[2] + 1;
    const int n = with_normals ? std::snprintf(buf, sizeof(buf), "f %u//%u %u//%u %u//%u\n", a, a, b, b, c, c)
                               : std::snprintf(buf, sizeof(buf), "f %u %u %u\n", a, b, c);
    out.append(buf, std::size_t(n));
  }
  return out;
}

inline std::size_t export_obj_file(const TriangleMesh& mesh, const std::filesystem::path& destination) {
  const auto text = export_obj(mesh);
  write_file_text(destination, text);
  return text.size();
}

inline TriangleMesh import_obj(std::string_view text) {
  TriangleMesh mesh;
  std::vector<Vec3> file_normals;
  struct Corner {
    std::int64_t v;
    std::int64_t n;  // -1 when absent
  };
  std::vector<std::array<Corner, 3>> faces;
  std::size_t line_no = 0;
  std::size_t pos = 0;

  auto parse_error = [&](const std::string& what) {
    return Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + what);
  };
  auto resolve = [&](std::string_view token, std::size_t count) -> std::int64_t {
    auto idx = parse_int<std::int64_t>(token);
    if (!idx) throw parse_error("bad index '" + std::string(token) + "'");
    if (*idx < 0) {
      const std::int64_t r = std::int64_t(count) + *idx;
      if (r < 0) throw Error(ErrorCode::IndexOutOfRange, "line " + std::to_string(line_no) + ": relative index");
      return r;
    }
    if (*idx == 0) throw Error(ErrorCode::IndexOutOfRange, "line " + std::to_string(line_no) + ": index 0");
    return *idx - 1;
  };

  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    auto line = trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto tokens = split_ws(line);
    const auto& kind = tokens[0];
    if (kind == "v" || kind == "vn") {
      if (tokens.size() < 4) throw parse_error("expected 3 coordinates");
      Vec3 p;
      for (int a = 0; a < 3; ++a) {
        auto d = parse_double(tokens[std::size_t(a) + 1]);
        if (!d) throw parse_error("bad number '" + tokens[std::size_t(a) + 1] + "'");
        p[a] = *d;
      }
      (kind == "v" ? mesh.vertices : file_normals).push_back(p);
    } else if (kind == "f") {
      if (tokens.size() < 4) throw parse_error("face needs at least 3 vertices");
      std::vector<Corner> poly;
      for (std::size_t t = 1; t < tokens.size(); ++t) {
        const std::string_view tok = tokens[t];
        const auto s1 = tok.find('/');
        Corner c{resolve(tok.substr(0, s1), mesh.vertices.size()), -1};
        if (s1 != std::string_view::npos) {
          const auto s2 = tok.find('/', s1 + 1);
          if (s2 != std::string_view::npos && s2 + 1 < tok.size()) {
            c.n = resolve(tok.substr(s2 + 1), file_normals.size());
          }
        }
        poly.push_back(c);
      }
      for (std::size_t t = 1; t + 1 < poly.size(); ++t) faces.push_back({poly[0], poly[t], poly[t + 1]});
    }
  }

  bool normals_match_vertices = !file_normals.empty() && file_normals.size() == mesh.vertices.size();
  for (const auto& f : faces) {
    for (const auto& c : f) {
      if (c.v >= std::int64_t(mesh.vertices.size())) {
        throw Error(ErrorCode::IndexOutOfRange, "vertex index " + std::to_string(c.v + 1) + " exceeds " +
                                                    std::to_string(mesh.vertices.size()) + " vertices");
      }
      if (c.n >= std::int64_t(file_normals.size())) {
        throw Error(ErrorCode::IndexOutOfRange, "normal index " + std::to_string(c.n + 1) + " out of range");
      }
      if (c.n != c.v) normals_match_vertices = false;
    }
    const Triangle t{std::uint32_t(f[0].v), std::uint32_t(f[1].v), std::uint32_t(f[2].v)};
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
    mesh.triangles.push_back(t);
  }
  mesh.normals = normals_match_vertices ? file_normals : vertex_normals(mesh.vertices, mesh.triangles);
  return mesh;
}

inline TriangleMesh import_obj_file(const std::filesystem::path& source) { return import_obj(read_file_text(source)); }

}  // namespace neuronav
