#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "gingr/mesh_io.hpp"
#include "gingr/synthetic.hpp"

using namespace gingr;
namespace fs = std::filesystem;

namespace {

class MeshIo : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("gingr_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& body) const {
    const auto p = (dir_ / name).string();
    std::ofstream(p) << body;
    return p;
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::Validation;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.message();
  }
  return {};
}

const char* kTrianglePly =
    "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
    "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
    "0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";

}  // namespace

TEST_F(MeshIo, MinimalAsciiPly) {
  const TriangleMesh m = load_geometry(write("tri.ply", kTrianglePly));
  EXPECT_EQ(m.size(), 3);
  ASSERT_EQ(m.triangles().size(), 1u);
  EXPECT_EQ(m.triangles()[0], (Triangle{0, 1, 2}));
  EXPECT_EQ(m.points()(1, 0), 1.0);
}

TEST_F(MeshIo, CsvWithAndWithoutHeader) {
  const TriangleMesh a = load_geometry(write("a.csv", "0,0,0\n1,0,0\n0,1,0\n0,0,1\n"));
  EXPECT_EQ(a.size(), 4);
  EXPECT_FALSE(a.has_triangles());
  const TriangleMesh b = load_geometry(write("b.csv", "x,y,z\n0,0,0\n1,0,0\n0,1,0\n0,0,1\n"));
  EXPECT_EQ(b.points(), a.points());
}

TEST_F(MeshIo, FaceIndexOutOfRange) {
  std::string body = kTrianglePly;
  body.replace(body.find("3 0 1 2"), 7, "3 0 1 99");
  const auto p = write("bad.ply", body);
  EXPECT_EQ(kind_of([&] { load_geometry(p); }), ErrorKind::Validation);
}

TEST_F(MeshIo, NonFiniteCoordinate) {
  const auto p = write("nan.csv", "0,0,0\nnan,0,0\n");
  EXPECT_EQ(kind_of([&] { load_geometry(p); }), ErrorKind::Validation);
}

TEST_F(MeshIo, ParseErrorNamesTheLine) {
  const auto ply = write("broken.ply",
                         "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                         "property float z\nend_header\n0 0 0\n1 oops 0\n");
  EXPECT_EQ(kind_of([&] { load_geometry(ply); }), ErrorKind::Format);
  EXPECT_NE(message_of([&] { load_geometry(ply); }).find(":9"), std::string::npos)
      << message_of([&] { load_geometry(ply); });

  const auto obj = write("broken.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 x\n");
  EXPECT_EQ(kind_of([&] { load_geometry(obj); }), ErrorKind::Format);
  EXPECT_NE(message_of([&] { load_geometry(obj); }).find(":4"), std::string::npos);

  EXPECT_EQ(kind_of([&] { load_geometry(write("x.ply", "not a ply\n")); }), ErrorKind::Format);
  EXPECT_EQ(kind_of([&] { load_geometry(path("missing.ply")); }), ErrorKind::Io);
  EXPECT_EQ(kind_of([&] { load_geometry(path("model.stl")); }), ErrorKind::Format);
}

TEST_F(MeshIo, RoundTripsEveryFormat) {
  const TriangleMesh m = icosphere(1);
  for (const auto& [name, fmt] : std::vector<std::pair<std::string, GeometryFormat>>{
           {"m.ply", GeometryFormat::Ply}, {"mb.ply", GeometryFormat::PlyBinary}, {"m.obj", GeometryFormat::Obj}}) {
    save_geometry(m, path(name), fmt);
    const TriangleMesh back = load_geometry(path(name));
    EXPECT_EQ(back.triangles(), m.triangles()) << name;
    EXPECT_LT((back.points() - m.points()).cwiseAbs().maxCoeff(), 1e-6) << name;
  }
  // binary keeps doubles bit for bit
  EXPECT_EQ(load_geometry(path("mb.ply")).points(), m.points());

  save_geometry(TriangleMesh(m.points()), path("p.csv"));
  EXPECT_LT((load_geometry(path("p.csv")).points() - m.points()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST_F(MeshIo, PointSetAsVertexOnlyPly) {
  const TriangleMesh pts(icosphere(0).points());
  save_geometry(pts, path("v.ply"));
  std::ifstream in(path("v.ply"));
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(text.find("element face"), std::string::npos);
  const TriangleMesh back = load_geometry(path("v.ply"));
  EXPECT_EQ(back.size(), 12);
  EXPECT_FALSE(back.has_triangles());
}

TEST_F(MeshIo, BinaryFloat32Ply) {
  const auto p = path("f32.ply");
  {
    std::ofstream out(p, std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
           "property float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n";
    const float v[9] = {0, 0, 0, 1.5f, 0, 0, 0, 2.25f, 0};
    out.write(reinterpret_cast<const char*>(v), sizeof v);
    const unsigned char three = 3;
    const std::int32_t idx[3] = {2, 1, 0};
    out.write(reinterpret_cast<const char*>(&three), 1);
    out.write(reinterpret_cast<const char*>(idx), sizeof idx);
  }
  const TriangleMesh m = load_geometry(p);
  EXPECT_EQ(m.points()(1, 0), 1.5);
  EXPECT_EQ(m.points()(2, 1), 2.25);
  EXPECT_EQ(m.triangles()[0], (Triangle{2, 1, 0}));
}

TEST_F(MeshIo, AttributeNeedsPlyAndMatchingLength) {
  const TriangleMesh m = icosphere(0);
  EXPECT_EQ(kind_of([&] { save_geometry(m, path("a.obj"), {{"u", Vector::Zero(12)}}); }), ErrorKind::Unsupported);
  EXPECT_EQ(kind_of([&] { save_geometry(m, path("a.ply"), {{"u", Vector::Zero(5)}}); }), ErrorKind::Validation);
}

TEST_F(MeshIo, AttributeReadableByThirdPartyParser) {
  if (std::system("python3 -c 'import plyfile' >/dev/null 2>&1") != 0) GTEST_SKIP() << "python3 plyfile not available";
  const TriangleMesh m = icosphere(1);
  const Vector u = Vector::LinSpaced(m.size(), 0.0, 4.2);
  for (const auto& [name, fmt] :
       std::vector<std::pair<std::string, GeometryFormat>>{{"u.ply", GeometryFormat::Ply}, {"ub.ply", GeometryFormat::PlyBinary}}) {
    save_geometry(m, path(name), fmt, {{"uncertainty", u}});
    const std::string script = path("check.py");
    std::ofstream(script) << "import sys\nfrom plyfile import PlyData\n"
                             "d = PlyData.read(sys.argv[1])\n"
                             "v = d['vertex']\n"
                             "n = int(sys.argv[2])\n"
                             "assert v.count == n, v.count\n"
                             "u = v['uncertainty']\n"
                             "for i in range(n):\n"
                             "    assert abs(u[i] - 4.2 * i / (n - 1)) < 1e-6, (i, u[i])\n"
                             "assert d['face'].count == int(sys.argv[3])\n";
    const std::string cmd = "python3 " + script + " " + path(name) + " " + std::to_string(m.size()) + " " +
                            std::to_string(m.triangles().size());
    EXPECT_EQ(std::system(cmd.c_str()), 0) << name;
  }
}
