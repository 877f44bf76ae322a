#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gingr/errors.hpp"
#include "gingr/gpmm.hpp"

namespace gingr {

// Model file layout:
//   8 bytes   magic "GINGRGP1"
//   uint32    header length H (little-endian)
//   H bytes   JSON header {"n", "d", "rank", "triangles", "orthonormal", "rank_reduced"}
//   int32     triangles x 3 vertex indices
//   float64   reference, n x d row-major
//   float64   mean, n x d row-major
//   float64   eigenvalues, rank
//   float64   basis fields, rank blocks of n x d row-major
// All numbers are little-endian.

static_assert(std::endian::native == std::endian::little, "model I/O assumes a little-endian host");

inline constexpr char kModelMagic[8] = {'G', 'I', 'N', 'G', 'R', 'G', 'P', '1'};

namespace gp_io_detail {

inline void write_raw(std::ofstream& out, const void* p, std::size_t bytes) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(bytes));
}

inline void read_raw(std::ifstream& in, void* p, std::size_t bytes, const std::string& path) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(bytes));
  require(in.gcount() == static_cast<std::streamsize>(bytes), ErrorKind::Format, "model file '" + path + "' is truncated");
}

}  // namespace gp_io_detail

inline void save_model(const LowRankGp& gp, const std::string& path) {
  using gp_io_detail::write_raw;
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot write '" + path + "'");
  const int n = gp.size(), d = gp.dim(), r = gp.rank();
  const nlohmann::json header = {{"n", n},
                                 {"d", d},
                                 {"rank", r},
                                 {"triangles", gp.reference.triangles().size()},
                                 {"orthonormal", gp.orthonormal},
                                 {"rank_reduced", gp.rank_reduced}};
  const std::string text = header.dump();
  const auto length = static_cast<std::uint32_t>(text.size());
  write_raw(out, kModelMagic, 8);
  write_raw(out, &length, 4);
  write_raw(out, text.data(), text.size());
  for (const auto& t : gp.reference.triangles())
    for (int v : t) {
      const std::int32_t idx = v;
      write_raw(out, &idx, 4);
    }
  auto write_field = [&](const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index c = 0; c < m.cols(); ++c) write_raw(out, &m(i, c), 8);
  };
  write_field(gp.reference.points());
  write_field(gp.mean);
  for (int k = 0; k < r; ++k) write_raw(out, &gp.eigenvalues(k), 8);
  for (int k = 0; k < r; ++k)
    for (Eigen::Index row = 0; row < gp.basis.rows(); ++row) write_raw(out, &gp.basis(row, k), 8);
  require(out.good(), ErrorKind::Io, "write to '" + path + "' failed");
}

inline LowRankGp load_model(const std::string& path) {
  using gp_io_detail::read_raw;
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot read '" + path + "'");
  char magic[8];
  read_raw(in, magic, 8, path);
  require(std::equal(magic, magic + 8, kModelMagic), ErrorKind::Format, "'" + path + "' is not a model file");
  std::uint32_t length = 0;
  read_raw(in, &length, 4, path);
  require(length < (1u << 20), ErrorKind::Format, "model header of '" + path + "' is implausibly long");
  std::string text(length, '\0');
  read_raw(in, text.data(), length, path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Format, "model header of '" + path + "': " + e.what());
  }
  int n = 0, d = 0, r = 0;
  std::size_t tri_count = 0;
  try {
    n = header.at("n").get<int>();
    d = header.at("d").get<int>();
    r = header.at("rank").get<int>();
    tri_count = header.at("triangles").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, "model header of '" + path + "': " + e.what());
  }
  require(n >= 1 && (d == 2 || d == 3) && r >= 0, ErrorKind::Format, "model header of '" + path + "' is inconsistent");

  std::vector<Triangle> tris(tri_count);
  for (auto& t : tris)
    for (int& v : t) {
      std::int32_t idx = 0;
      read_raw(in, &idx, 4, path);
      v = idx;
    }
  auto read_field = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index c = 0; c < cols; ++c) read_raw(in, &m(i, c), 8, path);
    return m;
  };
  LowRankGp gp;
  gp.reference = TriangleMesh(read_field(n, d), std::move(tris));
  gp.mean = read_field(n, d);
  gp.eigenvalues.resize(r);
  for (int k = 0; k < r; ++k) read_raw(in, &gp.eigenvalues(k), 8, path);
  gp.basis.resize(static_cast<Eigen::Index>(n) * d, r);
  for (int k = 0; k < r; ++k)
    for (Eigen::Index row = 0; row < gp.basis.rows(); ++row) read_raw(in, &gp.basis(row, k), 8, path);
  gp.orthonormal = header.value("orthonormal", true);
  gp.rank_reduced = header.value("rank_reduced", false);
  return gp;
}

}  // namespace gingr
