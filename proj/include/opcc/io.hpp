#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "opcc/common.hpp"
#include "opcc/geometry.hpp"

namespace opcc {

namespace detail {

inline std::string lower_ext(const std::string& path) {
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return "";
  std::string e = path.substr(dot + 1);
  for (auto& c : e) c = static_cast<char>(std::tolower(c));
  return e;
}

[[noreturn]] inline void parse_fail(const std::string& path, uint64_t offset,
                                    const std::string& what) {
  throw ParseError(path + ": " + what + " (byte offset " +
                   std::to_string(offset) + ")");
}

inline std::vector<char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open file");
  in.seekg(0, std::ios::end);
  const std::streamoff n = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<char> buf(static_cast<size_t>(n));
  if (n > 0) in.read(buf.data(), n);
  if (!in) throw ParseError(path + ": read failed");
  return buf;
}

struct PlyProp {
  std::string name;
  int size = 0;       // bytes for binary
  bool is_float = false;
  bool is_double = false;
};

inline int ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" ||
      t == "float" || t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  return 0;
}

inline PointCloud load_ply(const std::string& path,
                           const std::vector<char>& buf) {
  size_t pos = 0;
  uint64_t line_start = 0;
  auto next_line = [&](std::string& line) -> bool {
    line_start = pos;
    if (pos >= buf.size()) return false;
    size_t end = pos;
    while (end < buf.size() && buf[end] != '\n') ++end;
    line.assign(buf.data() + pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = end < buf.size() ? end + 1 : end;
    return true;
  };

  std::string line;
  if (!next_line(line) || line != "ply")
    parse_fail(path, 0, "not a ply file, expected magic line 'ply'");

  bool ascii = false, fmt_seen = false;
  uint64_t vertex_count = 0;
  bool in_vertex_element = false, vertex_seen = false;
  std::vector<PlyProp> vprops;
  bool header_done = false;
  while (next_line(line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment" || tok == "obj_info" || tok.empty()) continue;
    if (tok == "format") {
      std::string f, ver;
      ls >> f >> ver;
      if (f == "ascii") ascii = true;
      else if (f == "binary_little_endian") ascii = false;
      else parse_fail(path, line_start, "unsupported ply format '" + f + "'");
      fmt_seen = true;
    } else if (tok == "element") {
      std::string name;
      uint64_t count = 0;
      ls >> name >> count;
      in_vertex_element = (name == "vertex");
      if (in_vertex_element) {
        vertex_count = count;
        vertex_seen = true;
      }
    } else if (tok == "property") {
      if (!in_vertex_element) continue;
      std::string type;
      ls >> type;
      if (type == "list")
        parse_fail(path, line_start, "list property in vertex element");
      PlyProp p;
      ls >> p.name;
      p.size = ply_type_size(type);
      if (p.size == 0)
        parse_fail(path, line_start, "unknown property type '" + type + "'");
      p.is_float = (type == "float" || type == "float32");
      p.is_double = (type == "double" || type == "float64");
      vprops.push_back(p);
    } else if (tok == "end_header") {
      header_done = true;
      break;
    } else {
      parse_fail(path, line_start, "unknown header keyword '" + tok + "'");
    }
  }
  if (!header_done) parse_fail(path, line_start, "missing end_header");
  if (!fmt_seen) parse_fail(path, line_start, "missing format line");
  if (!vertex_seen) parse_fail(path, line_start, "missing vertex element");

  int ix = -1, iy = -1, iz = -1;
  for (size_t i = 0; i < vprops.size(); ++i) {
    if (vprops[i].name == "x") ix = static_cast<int>(i);
    if (vprops[i].name == "y") iy = static_cast<int>(i);
    if (vprops[i].name == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0)
    parse_fail(path, line_start, "vertex element lacks x/y/z properties");

  PointCloud pc;
  pc.reserve(vertex_count);
  if (ascii) {
    for (uint64_t v = 0; v < vertex_count; ++v) {
      if (!next_line(line))
        parse_fail(path, pos, "unexpected end of file in vertex data");
      std::istringstream ls(line);
      Vec3 p{0, 0, 0};
      for (size_t i = 0; i < vprops.size(); ++i) {
        double val;
        if (!(ls >> val))
          parse_fail(path, line_start, "bad vertex line");
        if (static_cast<int>(i) == ix) p[0] = val;
        if (static_cast<int>(i) == iy) p[1] = val;
        if (static_cast<int>(i) == iz) p[2] = val;
      }
      pc.push_back(p);
    }
  } else {
    size_t stride = 0;
    for (const auto& p : vprops) stride += static_cast<size_t>(p.size);
    if (pos + stride * vertex_count > buf.size())
      parse_fail(path, buf.size(), "vertex data truncated");
    for (uint64_t v = 0; v < vertex_count; ++v) {
      size_t rec = pos + v * stride;
      Vec3 p{0, 0, 0};
      size_t field = rec;
      for (size_t i = 0; i < vprops.size(); ++i) {
        const auto& pr = vprops[i];
        const bool wanted = static_cast<int>(i) == ix ||
                            static_cast<int>(i) == iy ||
                            static_cast<int>(i) == iz;
        if (wanted) {
          double val = 0;
          if (pr.is_float) {
            float f;
            std::memcpy(&f, buf.data() + field, 4);
            val = f;
          } else if (pr.is_double) {
            std::memcpy(&val, buf.data() + field, 8);
          } else {
            parse_fail(path, field, "coordinate property is not float/double");
          }
          if (static_cast<int>(i) == ix) p[0] = val;
          if (static_cast<int>(i) == iy) p[1] = val;
          if (static_cast<int>(i) == iz) p[2] = val;
        }
        field += static_cast<size_t>(pr.size);
      }
      pc.push_back(p);
    }
  }
  return pc;
}

inline PointCloud load_xyz(const std::string& path,
                           const std::vector<char>& buf) {
  PointCloud pc;
  size_t pos = 0;
  while (pos < buf.size()) {
    const uint64_t line_start = pos;
    size_t end = pos;
    while (end < buf.size() && buf[end] != '\n') ++end;
    std::string line(buf.data() + pos, end - pos);
    pos = end < buf.size() ? end + 1 : end;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool blank = true;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
    if (blank) continue;
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p[0] >> p[1] >> p[2]))
      parse_fail(path, line_start, "expected three coordinates per line");
    std::string rest;
    ls >> rest;  // trailing columns (intensity etc.) are tolerated
    pc.push_back(p);
  }
  return pc;
}

// raw scan format: consecutive records of four little-endian float32
// (x, y, z, intensity); intensity is dropped
inline PointCloud load_bin(const std::string& path,
                           const std::vector<char>& buf) {
  if (buf.size() % 16 != 0)
    parse_fail(path, buf.size() - buf.size() % 16,
               "file size is not a multiple of the 16-byte record");
  PointCloud pc;
  pc.reserve(buf.size() / 16);
  for (size_t off = 0; off < buf.size(); off += 16) {
    float f[4];
    std::memcpy(f, buf.data() + off, 16);
    pc.push_back({f[0], f[1], f[2]});
  }
  return pc;
}

}  // namespace detail

// Format chosen by extension: .ply, .xyz/.txt, .bin
inline PointCloud load_point_cloud(const std::string& path) {
  const auto buf = detail::read_all(path);
  const std::string ext = detail::lower_ext(path);
  PointCloud pc;
  if (ext == "ply")
    pc = detail::load_ply(path, buf);
  else if (ext == "xyz" || ext == "txt")
    pc = detail::load_xyz(path, buf);
  else if (ext == "bin")
    pc = detail::load_bin(path, buf);
  else
    throw ParseError(path + ": unsupported point cloud extension '" + ext +
                     "'");
  if (pc.empty()) throw ParseError(path + ": file contains no points");
  return pc;
}

inline void save_point_cloud(const std::string& path, const PointCloud& pc) {
  const std::string ext = detail::lower_ext(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open for writing");
  if (ext == "ply") {
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << pc.size()
        << "\nproperty double x\nproperty double y\nproperty double z\n"
        << "end_header\n";
    for (const auto& p : pc)
      out.write(reinterpret_cast<const char*>(p.data()), 24);
  } else if (ext == "xyz" || ext == "txt") {
    char line[128];
    for (const auto& p : pc) {
      const int n =
          std::snprintf(line, sizeof line, "%.17g %.17g %.17g\n", p[0], p[1], p[2]);
      out.write(line, n);
    }
  } else {
    throw Error(path + ": unsupported output extension '" + ext + "'");
  }
  if (!out) throw Error(path + ": write failed");
}

}  // namespace opcc
