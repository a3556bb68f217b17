#pragma once

// ASCII PLY for grid cloth meshes. Coordinates are written in shortest
// round-trip form, so reading a file back reproduces every double exactly. The
// grid shape travels in a "comment grid H W" header line.

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "clothdiff/core/error.hpp"
#include "clothdiff/sim/cloth_mesh.hpp"

namespace clothdiff::io {

namespace detail {

inline void put_double(std::string& out, double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, r.ptr);
}

inline double parse_double(const std::string& tok, const std::string& path) {
  double v = 0.0;
  const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  require(r.ec == std::errc() && r.ptr == tok.data() + tok.size(), ErrorKind::kFormat,
          "bad coordinate '" + tok + "' in " + path);
  return v;
}

}  // namespace detail

inline void export_mesh(const ClothMesh& mesh, const std::string& path) {
  mesh.validate();
  const auto faces = mesh.faces();
  std::string s = "ply\nformat ascii 1.0\ncomment grid " + std::to_string(mesh.grid_h) + " " + std::to_string(mesh.grid_w) +
                  "\nelement vertex " + std::to_string(mesh.size()) +
                  "\nproperty double x\nproperty double y\nproperty double z\nelement face " + std::to_string(faces.size()) +
                  "\nproperty list uchar int vertex_indices\nend_header\n";
  for (const auto& v : mesh.vertices) {
    for (int a = 0; a < 3; ++a) {
      if (a) s.push_back(' ');
      detail::put_double(s, v[a]);
    }
    s.push_back('\n');
  }
  for (const auto& f : faces) s += "3 " + std::to_string(f[0]) + " " + std::to_string(f[1]) + " " + std::to_string(f[2]) + "\n";
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot open for writing: " + path);
  out << s;
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed: " + path);
}

/// Reads a file written by export_mesh; faces must match the grid triangulation.
inline ClothMesh import_mesh(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open for reading: " + path);
  std::string line;
  require(std::getline(in, line) && line == "ply", ErrorKind::kFormat, "not a PLY file: " + path);
  int h = -1, w = -1;
  long nv = -1, nf = -1;
  while (std::getline(in, line) && line != "end_header") {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      require(fmt == "ascii", ErrorKind::kFormat, "only ASCII PLY is supported: " + path);
    } else if (key == "comment") {
      std::string tag;
      if (ls >> tag && tag == "grid") ls >> h >> w;
    } else if (key == "element") {
      std::string name;
      long count = -1;
      ls >> name >> count;
      if (name == "vertex") nv = count;
      if (name == "face") nf = count;
    }
  }
  require(line == "end_header", ErrorKind::kFormat, "PLY header is not terminated: " + path);
  require(h >= 2 && w >= 2, ErrorKind::kFormat, "PLY file lacks a 'comment grid H W' line: " + path);
  require(nv == static_cast<long>(h) * w, ErrorKind::kFormat, "PLY vertex count does not match the grid: " + path);
  std::vector<Vec3> v(static_cast<std::size_t>(nv));
  for (auto& p : v) {
    std::array<std::string, 3> tok;
    require(static_cast<bool>(in >> tok[0] >> tok[1] >> tok[2]), ErrorKind::kFormat, "truncated PLY vertex list: " + path);
    for (int a = 0; a < 3; ++a) p[a] = detail::parse_double(tok[static_cast<std::size_t>(a)], path);
  }
  ClothMesh mesh(h, w, std::move(v));
  const auto expected = mesh.faces();
  require(nf == static_cast<long>(expected.size()), ErrorKind::kFormat, "PLY face count does not match the grid: " + path);
  for (const auto& f : expected) {
    int n = 0;
    std::array<int, 3> g{};
    require(static_cast<bool>(in >> n >> g[0] >> g[1] >> g[2]) && n == 3 && g == f, ErrorKind::kFormat,
            "PLY faces do not follow the grid triangulation: " + path);
  }
  return mesh;
}

}  // namespace clothdiff::io
