#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gingr/geometry.hpp"

namespace gingr {

enum class GeometryFormat { Ply, PlyBinary, Obj, XyzCsv };

/// Picks the format from the file extension (.ply, .obj, .csv/.xyz).
inline GeometryFormat format_from_path(const std::string& path) {
  auto ends_with = [&](const char* ext) {
    const std::size_t len = std::strlen(ext);
    if (path.size() < len) return false;
    std::string tail = path.substr(path.size() - len);
    for (auto& c : tail) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return tail == ext;
  };
  if (ends_with(".ply")) return GeometryFormat::Ply;
  if (ends_with(".obj")) return GeometryFormat::Obj;
  if (ends_with(".csv") || ends_with(".xyz")) return GeometryFormat::XyzCsv;
  fail(ErrorKind::Format, "cannot infer geometry format from '" + path + "'");
}

/// Named per-vertex scalar written as an extra PLY vertex property.
struct VertexAttribute {
  std::string name;
  Vector values;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

struct PlyProperty {
  std::string name;
  std::string type;
  bool is_list = false;
  std::string count_type;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

inline int ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  return 0;
}

inline double read_binary_le(const char* p, const std::string& t) {
  // the host is assumed little-endian, which every supported target is
  if (t == "char" || t == "int8") return static_cast<double>(*reinterpret_cast<const std::int8_t*>(p));
  if (t == "uchar" || t == "uint8") return static_cast<double>(*reinterpret_cast<const std::uint8_t*>(p));
  if (t == "short" || t == "int16") { std::int16_t v; std::memcpy(&v, p, 2); return v; }
  if (t == "ushort" || t == "uint16") { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
  if (t == "int" || t == "int32") { std::int32_t v; std::memcpy(&v, p, 4); return v; }
  if (t == "uint" || t == "uint32") { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
  if (t == "float" || t == "float32") { float v; std::memcpy(&v, p, 4); return v; }
  double v;
  std::memcpy(&v, p, 8);
  return v;
}

inline TriangleMesh build_mesh(std::vector<double>&& coords, int d, std::vector<Triangle>&& tris,
                               const std::string& path) {
  require(!coords.empty(), ErrorKind::Format, path + ": no vertices");
  const auto n = static_cast<Eigen::Index>(coords.size() / static_cast<std::size_t>(d));
  Matrix pts(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) pts(i, c) = coords[static_cast<std::size_t>(i * d + c)];
  for (Eigen::Index i = 0; i < n; ++i) {
    require(pts.row(i).allFinite(), ErrorKind::Validation,
            path + ": non-finite coordinate at vertex " + std::to_string(i));
  }
  return TriangleMesh(PointSet(std::move(pts)), std::move(tris));
}

inline void push_polygon(std::vector<Triangle>& tris, const std::vector<int>& poly, const std::string& where) {
  require(poly.size() >= 3, ErrorKind::Format, where + ": face with fewer than 3 vertices");
  for (std::size_t k = 1; k + 1 < poly.size(); ++k) tris.push_back({poly[0], poly[k], poly[k + 1]});
}

inline TriangleMesh load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open '" + path + "'");
  std::string line;
  int line_no = 0;
  auto next_line = [&]() {
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Format,
            path + ": unexpected end of header after line " + std::to_string(line_no));
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };
  next_line();
  require(line == "ply", ErrorKind::Format, path + ":1: missing 'ply' magic");
  bool binary = false;
  std::vector<PlyElement> elements;
  for (;;) {
    next_line();
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else require(fmt == "ascii", ErrorKind::Format, path + ":" + std::to_string(line_no) + ": unsupported format '" + fmt + "'");
    } else if (key == "element") {
      PlyElement e;
      require(static_cast<bool>(ss >> e.name >> e.count), ErrorKind::Format,
              path + ":" + std::to_string(line_no) + ": malformed element line");
      elements.push_back(e);
    } else if (key == "property") {
      require(!elements.empty(), ErrorKind::Format, path + ":" + std::to_string(line_no) + ": property before element");
      PlyProperty p;
      std::string t;
      ss >> t;
      if (t == "list") {
        p.is_list = true;
        ss >> p.count_type >> p.type >> p.name;
        require(ply_type_size(p.count_type) > 0, ErrorKind::Format, path + ":" + std::to_string(line_no) + ": bad list count type");
      } else {
        p.type = t;
        ss >> p.name;
      }
      require(ply_type_size(p.type) > 0, ErrorKind::Format,
              path + ":" + std::to_string(line_no) + ": unknown property type '" + p.type + "'");
      elements.back().properties.push_back(p);
    } else if (key == "end_header") {
      break;
    } else if (key == "comment" || key == "obj_info" || key.empty()) {
      continue;
    } else {
      fail(ErrorKind::Format, path + ":" + std::to_string(line_no) + ": unexpected header keyword '" + key + "'");
    }
  }

  int d = 0;
  std::vector<double> coords;
  std::vector<Triangle> tris;
  std::vector<char> body;
  std::size_t offset = 0;
  if (binary) body.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());

  auto take = [&](const std::string& type) {
    const int size = ply_type_size(type);
    require(offset + static_cast<std::size_t>(size) <= body.size(), ErrorKind::Format,
            path + ": binary body truncated at byte offset " + std::to_string(offset));
    const double v = read_binary_le(body.data() + offset, type);
    offset += static_cast<std::size_t>(size);
    return v;
  };

  for (const auto& e : elements) {
    const bool is_vertex = e.name == "vertex";
    const bool is_face = e.name == "face";
    int ix = -1, iy = -1, iz = -1, iface = -1;
    for (int k = 0; k < static_cast<int>(e.properties.size()); ++k) {
      const auto& p = e.properties[k];
      if (p.name == "x") ix = k;
      if (p.name == "y") iy = k;
      if (p.name == "z") iz = k;
      if (p.is_list && (p.name == "vertex_indices" || p.name == "vertex_index")) iface = k;
    }
    if (is_vertex) {
      require(ix >= 0 && iy >= 0, ErrorKind::Format, path + ": vertex element lacks x/y properties");
      d = iz >= 0 ? 3 : 2;
      coords.reserve(e.count * static_cast<std::size_t>(d));
    }
    for (std::size_t row = 0; row < e.count; ++row) {
      std::vector<double> scalars(e.properties.size(), 0.0);
      std::vector<int> poly;
      std::istringstream ss;
      if (!binary) {
        require(static_cast<bool>(std::getline(in, line)), ErrorKind::Format,
                path + ":" + std::to_string(line_no + 1) + ": unexpected end of file in element '" + e.name + "'");
        ++line_no;
        ss.str(line);
      }
      for (int k = 0; k < static_cast<int>(e.properties.size()); ++k) {
        const auto& p = e.properties[k];
        auto read_value = [&](const std::string& type) -> double {
          if (binary) return take(type);
          double v;
          require(static_cast<bool>(ss >> v), ErrorKind::Format,
                  path + ":" + std::to_string(line_no) + ": cannot parse property '" + p.name + "'");
          return v;
        };
        if (p.is_list) {
          const double cnt = read_value(p.count_type);
          require(cnt >= 0 && cnt < 1e6, ErrorKind::Format, path + ":" + std::to_string(line_no) + ": bad list length");
          for (int j = 0; j < static_cast<int>(cnt); ++j) {
            const double v = read_value(p.type);
            if (k == iface) poly.push_back(static_cast<int>(v));
          }
        } else {
          scalars[k] = read_value(p.type);
        }
      }
      if (is_vertex) {
        coords.push_back(scalars[ix]);
        coords.push_back(scalars[iy]);
        if (d == 3) coords.push_back(scalars[iz]);
      } else if (is_face && iface >= 0) {
        push_polygon(tris, poly, path + (binary ? ": face " + std::to_string(row) : ":" + std::to_string(line_no)));
      }
    }
  }
  require(d > 0, ErrorKind::Format, path + ": no vertex element");
  return build_mesh(std::move(coords), d, std::move(tris), path);
}

inline TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open '" + path + "'");
  std::vector<double> coords;
  std::vector<Triangle> tris;
  std::string line;
  int line_no = 0;
  std::size_t vertex_count = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key) || key[0] == '#') continue;
    const std::string where = path + ":" + std::to_string(line_no);
    if (key == "v") {
      double x, y, z;
      require(static_cast<bool>(ss >> x >> y >> z), ErrorKind::Format, where + ": malformed vertex record");
      coords.insert(coords.end(), {x, y, z});
      ++vertex_count;
    } else if (key == "f") {
      std::vector<int> poly;
      std::string tok;
      while (ss >> tok) {
        int idx = 0;
        try {
          idx = std::stoi(tok.substr(0, tok.find('/')));
        } catch (const std::exception&) {
          fail(ErrorKind::Format, where + ": bad face index '" + tok + "'");
        }
        idx = idx < 0 ? static_cast<int>(vertex_count) + idx : idx - 1;
        poly.push_back(idx);
      }
      push_polygon(tris, poly, where);
    }
  }
  return build_mesh(std::move(coords), 3, std::move(tris), path);
}

inline TriangleMesh load_xyz_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open '" + path + "'");
  std::vector<double> coords;
  std::string line;
  int line_no = 0, d = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      require(coords.empty() && line_no == 1, ErrorKind::Format,
              path + ":" + std::to_string(line_no) + ": non-numeric row");
      continue;  // header
    }
    if (d == 0) d = static_cast<int>(row.size());
    require(static_cast<int>(row.size()) == d, ErrorKind::Format,
            path + ":" + std::to_string(line_no) + ": expected " + std::to_string(d) + " columns");
    coords.insert(coords.end(), row.begin(), row.end());
  }
  require(d == 2 || d == 3, ErrorKind::Format, path + ": expected 2 or 3 columns");
  return build_mesh(std::move(coords), d, {}, path);
}

}  // namespace detail

/// Reads a mesh or point set. Point-set formats yield a mesh without triangles.
inline TriangleMesh load_geometry(const std::string& path, GeometryFormat format) {
  switch (format) {
    case GeometryFormat::Ply:
    case GeometryFormat::PlyBinary: return detail::load_ply(path);
    case GeometryFormat::Obj: return detail::load_obj(path);
    case GeometryFormat::XyzCsv: return detail::load_xyz_csv(path);
  }
  fail(ErrorKind::Format, "unknown format");
}

inline TriangleMesh load_geometry(const std::string& path) { return load_geometry(path, format_from_path(path)); }

/// Writes geometry; per-vertex attributes are only representable in PLY.
inline void save_geometry(const TriangleMesh& mesh, const std::string& path, GeometryFormat format,
                          const std::vector<VertexAttribute>& attributes = {}) {
  for (const auto& a : attributes) {
    require(a.values.size() == mesh.size(), ErrorKind::Validation,
            "attribute '" + a.name + "' has " + std::to_string(a.values.size()) + " values for " +
                std::to_string(mesh.size()) + " vertices");
  }
  require(attributes.empty() || format == GeometryFormat::Ply || format == GeometryFormat::PlyBinary,
          ErrorKind::Unsupported, "vertex attributes need PLY output");

  const bool binary = format == GeometryFormat::PlyBinary;
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  require(out.good(), ErrorKind::Io, "cannot write '" + path + "'");
  const Matrix& p = mesh.points();
  const int d = mesh.dim();

  if (format == GeometryFormat::Ply || format == GeometryFormat::PlyBinary) {
    out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
    out << "element vertex " << mesh.size() << "\n";
    const char* axes[] = {"x", "y", "z"};
    for (int c = 0; c < d; ++c) out << "property double " << axes[c] << "\n";
    for (const auto& a : attributes) out << "property double " << a.name << "\n";
    if (mesh.has_triangles()) {
      out << "element face " << mesh.triangles().size() << "\n";
      out << "property list uchar int vertex_indices\n";
    }
    out << "end_header\n";
    for (int i = 0; i < mesh.size(); ++i) {
      if (binary) {
        for (int c = 0; c < d; ++c) out.write(reinterpret_cast<const char*>(&p(i, c)), 8);
        for (const auto& a : attributes) out.write(reinterpret_cast<const char*>(&a.values(i)), 8);
      } else {
        for (int c = 0; c < d; ++c) out << (c ? " " : "") << detail::format_double(p(i, c));
        for (const auto& a : attributes) out << " " << detail::format_double(a.values(i));
        out << "\n";
      }
    }
    for (const auto& t : mesh.triangles()) {
      if (binary) {
        const std::uint8_t three = 3;
        out.write(reinterpret_cast<const char*>(&three), 1);
        for (int v : t) {
          const std::int32_t idx = v;
          out.write(reinterpret_cast<const char*>(&idx), 4);
        }
      } else {
        out << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
      }
    }
  } else if (format == GeometryFormat::Obj) {
    require(d == 3, ErrorKind::Unsupported, "OBJ output needs 3D vertices");
    for (int i = 0; i < mesh.size(); ++i) {
      out << "v " << detail::format_double(p(i, 0)) << " " << detail::format_double(p(i, 1)) << " "
          << detail::format_double(p(i, 2)) << "\n";
    }
    for (const auto& t : mesh.triangles()) out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  } else {
    for (int i = 0; i < mesh.size(); ++i) {
      for (int c = 0; c < d; ++c) out << (c ? "," : "") << detail::format_double(p(i, c));
      out << "\n";
    }
  }
  require(out.good(), ErrorKind::Io, "write to '" + path + "' failed");
}

inline void save_geometry(const TriangleMesh& mesh, const std::string& path,
                          const std::vector<VertexAttribute>& attributes = {}) {
  save_geometry(mesh, path, format_from_path(path), attributes);
}

}  // namespace gingr
