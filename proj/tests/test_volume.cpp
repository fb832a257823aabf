#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "dcl/resample.hpp"
#include "dcl/rng.hpp"
#include "dcl/volume.hpp"
#include "dcl/volume_io.hpp"

using namespace dcl;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir() {
  auto d = fs::temp_directory_path() / "dcl_test_volume";
  fs::create_directories(d);
  return d;
}

Volume3D random_volume(std::array<int, 3> dims, uint64_t seed) {
  Geometry g;
  g.dims = dims;
  Volume3D v(g);
  Rng rng(seed);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform(-2, 2));
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("volume write/read round trip is bit exact") {
  auto d = tmpdir();
  Volume3D zeros(Geometry{{3, 3, 3}});
  write_volume(zeros, d / "zeros");
  CHECK(read_volume(d / "zeros").data == zeros.data);

  Volume3D v = random_volume({4, 5, 6}, 11);
  v.geom.spacing = {0.5, 1.25, 2.0};
  v.geom.affine = Mat4::translation(1.5, -2.0, 3.25);
  write_volume(v, d / "r");
  Volume3D back = read_volume(d / "r");
  CHECK(back.data == v.data);
  CHECK(back.geom.dims == v.geom.dims);
  CHECK(back.geom.spacing == v.geom.spacing);
  CHECK(back.geom.affine == v.geom.affine);
}

TEST_CASE("volume writes are deterministic bytes") {
  auto d = tmpdir();
  Volume3D v = random_volume({3, 4, 2}, 5);
  write_volume(v, d / "a");
  write_volume(v, d / "b");
  CHECK(slurp(d / "a.json") == slurp(d / "b.json"));
  CHECK(slurp(d / "a.raw") == slurp(d / "b.raw"));
}

TEST_CASE("raw payload layout: 2x1x1 volume is 8 little-endian bytes") {
  auto d = tmpdir();
  Volume3D v(Geometry{{2, 1, 1}});
  v.data = {1.0f, 2.0f};
  write_volume(v, d / "two");
  const std::string raw = slurp(d / "two.raw");
  REQUIRE(raw.size() == 8);
  float vals[2];
  std::memcpy(vals, raw.data(), 8);
  CHECK(vals[0] == 1.0f);
  CHECK(vals[1] == 2.0f);
}

TEST_CASE("read_volume rejects size mismatch and bad dtype with diagnostics") {
  auto d = tmpdir();
  Volume3D v(Geometry{{2, 2, 2}});
  write_volume(v, d / "bad");
  std::ofstream(d / "bad.raw", std::ios::binary).write("0123456789012345678901234567", 28);
  CHECK_THROWS_WITH_AS(read_volume(d / "bad"), doctest::Contains("28"), std::runtime_error);

  write_volume(v, d / "dt");
  std::string hdr = slurp(d / "dt.json");
  const auto pos = hdr.find("f32");
  hdr.replace(pos, 3, "f64");
  std::ofstream(d / "dt.json") << hdr;
  CHECK_THROWS_WITH_AS(read_volume(d / "dt"), doctest::Contains("dtype"), std::runtime_error);
}

TEST_CASE("write_volume refuses non-finite data") {
  auto d = tmpdir();
  Volume3D v(Geometry{{2, 2, 2}});
  v.data[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(write_volume(v, d / "nan"), std::runtime_error);
}

TEST_CASE("resample identity and one-voxel shift") {
  Volume3D v = random_volume({5, 4, 3}, 3);
  Volume3D same = resample_with_affine(v, v.geom, Interp::Trilinear);
  for (size_t i = 0; i < v.data.size(); ++i) CHECK(same.data[i] == doctest::Approx(v.data[i]));

  // target shifted one voxel along +x: out(x,y,z) = src(x+1,y,z)
  Geometry t = v.geom;
  t.affine = Mat4::translation(1, 0, 0);
  Volume3D shifted = resample_with_affine(v, t, Interp::Nearest);
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) CHECK(shifted.at(x, y, z) == v.at(x + 1, y, z));
      CHECK(shifted.at(4, y, z) == 0.0f);
    }
}

TEST_CASE("nearest resampling preserves the value set") {
  Volume3D v(Geometry{{4, 4, 4}});
  Rng rng(9);
  for (auto& x : v.data) x = rng.bernoulli(0.4) ? 1.0f : 0.0f;
  Geometry t = v.geom;
  t.dims = {8, 8, 8};
  t.spacing = {0.5, 0.5, 0.5};
  t.affine = Mat4::scaling(0.5, 0.5, 0.5);
  Volume3D out = resample_with_affine(v, t, Interp::Nearest);
  for (float x : out.data) CHECK((x == 0.0f || x == 1.0f));
}

TEST_CASE("normalize_zscore: degenerate, hand case, idempotence") {
  Volume3D c(Geometry{{3, 3, 3}}, 5.0f);
  Volume3D nc = normalize_zscore(c);
  for (float x : nc.data) CHECK(x == 0.0f);

  Volume3D v(Geometry{{2, 1, 1}});
  v.data = {1.0f, 3.0f};
  Volume3D n = normalize_zscore(v);
  CHECK(n.data[0] == doctest::Approx(-1.0));
  CHECK(n.data[1] == doctest::Approx(1.0));

  Volume3D r = random_volume({4, 4, 4}, 17);
  Volume3D n1 = normalize_zscore(r);
  Volume3D n2 = normalize_zscore(n1);
  for (size_t i = 0; i < n1.data.size(); ++i)
    CHECK(n2.data[i] == doctest::Approx(n1.data[i]).epsilon(1e-5));
}

TEST_CASE("extract/stack are inverse; wrong count rejected") {
  Geometry g{{4, 3, 5}};
  ModalitySample s;
  s.subject_id = "s";
  s.t1w = random_volume(g.dims, 1);
  s.fa = random_volume(g.dims, 2);
  s.precise = LabelVolume(g, {"a"});
  s.coarse = LabelVolume(g, {"a"});
  Rng rng(3);
  for (auto& x : s.precise.channels[0].data) x = rng.bernoulli(0.3) ? 1.0f : 0.0f;

  auto slices = extract_axial_slices(s);
  REQUIRE(slices.size() == 5);
  std::vector<std::vector<float>> t1_planes;
  for (auto& sl : slices) t1_planes.push_back(sl.t1w);
  Volume3D re = stack_slices(t1_planes, g);
  CHECK(re.data == s.t1w.data);

  t1_planes.pop_back();
  CHECK_THROWS_AS(stack_slices(t1_planes, g), std::runtime_error);
}

TEST_CASE("transfer_labels identity and translation") {
  Geometry g{{5, 5, 5}};
  LabelVolume atlas(g, {"a"});
  atlas.channels[0].at(2, 2, 2) = 1.0f;
  LabelVolume same = transfer_labels(atlas, Mat4::identity(), g);
  CHECK(same.channels[0].data == atlas.channels[0].data);

  LabelVolume moved = transfer_labels(atlas, Mat4::translation(1, 0, 0), g);
  CHECK(moved.channels[0].at(3, 2, 2) == 1.0f);
  CHECK(moved.channels[0].at(2, 2, 2) == 0.0f);
}

TEST_CASE("manifest round trip") {
  auto d = tmpdir();
  Manifest m;
  m.seed = 42;
  m.subjects.push_back({"sub000", "sub000/t1w", "sub000/fa", "sub000/precise", "sub000/coarse"});
  write_manifest(m, d / "manifest.json");
  Manifest back = read_manifest(d / "manifest.json");
  CHECK(back.seed == 42);
  REQUIRE(back.subjects.size() == 1);
  CHECK(back.subjects[0].id == "sub000");
  CHECK(back.base_dir == d);
}

TEST_CASE("rng: deterministic, stream-separated, in range") {
  Rng a(123, 4), b(123, 4), c(123, 5);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const uint64_t x = a.next_u64();
    all_equal = all_equal && x == b.next_u64();
    any_diff = any_diff || x != c.next_u64();
  }
  CHECK(all_equal);
  CHECK(any_diff);
  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("affine inverse round trips points") {
  Mat4 m = Mat4::translation(1, 2, 3) * Mat4::scaling(2, 0.5, 1.5);
  Mat4 inv = m.affine_inverse();
  Vec3 p{0.3, -1.2, 4.5};
  Vec3 q = inv.apply(m.apply(p));
  for (int i = 0; i < 3; ++i) CHECK(q[i] == doctest::Approx(p[i]).epsilon(1e-12));
}
