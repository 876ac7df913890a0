#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "c2freg/io.hpp"
#include "c2freg/phantom.hpp"
#include "c2freg/report.hpp"

using namespace c2freg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("c2freg_test_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

Volume3D random_volume(const Dims& d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 10.0);
  Volume3D v = Volume3D::filled(d, 0.0);
  for (double& x : v.values()) x = n(rng);
  return v;
}

bool same_bits(const Volume3D& a, const Volume3D& b) {
  return a.dims() == b.dims() && a.values().size() == b.values().size() &&
         std::memcmp(a.values().data(), b.values().data(), a.values().size() * sizeof(double)) == 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

void replace_in_file(const fs::path& p, const std::string& from, const std::string& to) {
  std::string s = slurp(p);
  const auto at = s.find(from);
  REQUIRE(at != std::string::npos);
  s.replace(at, from.size(), to);
  spit(p, s);
}

}  // namespace

TEST_CASE("f64 volumes round-trip bit-exactly") {
  TempDir dir;
  Volume3D v = random_volume(Dims::cube(16), 1);
  v.values()[3] = -0.0;
  v.values()[4] = 5e-324;
  write_volume(dir / "v.json", v);
  CHECK(fs::exists(dir / "v.raw"));
  CHECK(fs::file_size(dir / "v.raw") == 16 * 16 * 16 * 8);
  const Volume3D r = read_volume(dir / "v.json");
  CHECK(same_bits(v, r));
  CHECK(r.spacing() == v.spacing());
}

TEST_CASE("f32 and u16 volumes round-trip their representable values") {
  TempDir dir;
  Volume3D v = random_volume({5, 6, 7}, 2);
  for (double& x : v.values()) x = static_cast<float>(x);
  write_volume(dir / "f.json", v, DType::F32);
  CHECK(fs::file_size(dir / "f.raw") == 5 * 6 * 7 * 4);
  CHECK(same_bits(read_volume(dir / "f.json"), v));

  Volume3D u = Volume3D::filled({4, 4, 4}, 0.0);
  for (std::size_t i = 0; i < u.values().size(); ++i) u.values()[i] = double(i * 1000 % 65536);
  write_volume(dir / "u.json", u, DType::U16);
  CHECK(same_bits(read_volume(dir / "u.json"), u));
  u.values()[0] = 0.5;
  CHECK_THROWS(write_volume(dir / "bad.json", u, DType::U16));
}

TEST_CASE("label volumes round-trip with their structure count") {
  TempDir dir;
  const LabelVolume l = make_phantom(Dims::cube(16), 3).labels;
  write_labels(dir / "l.json", l);
  const LabelVolume r = read_labels(dir / "l.json");
  CHECK(r == l);
  CHECK(read_volume_header(dir / "l.json").kind == VolumeKind::Labels);
}

TEST_CASE("volume file errors are named distinctly") {
  TempDir dir;
  const Volume3D v = random_volume(Dims::cube(4), 3);
  write_volume(dir / "v.json", v);
  write_labels(dir / "l.json", make_phantom(Dims::cube(16), 4).labels);

  CHECK_THROWS_AS(read_volume(dir / "l.json"), KindMismatchError);
  CHECK_THROWS_AS(read_labels(dir / "v.json"), KindMismatchError);

  const std::string payload = slurp(dir / "v.raw");
  spit(dir / "v.raw", payload.substr(0, payload.size() - 3));
  CHECK_THROWS_AS(read_volume(dir / "v.json"), PayloadLengthError);
  spit(dir / "v.raw", payload + "x");
  CHECK_THROWS_AS(read_volume(dir / "v.json"), PayloadLengthError);
  spit(dir / "v.raw", payload);
  CHECK_NOTHROW(read_volume(dir / "v.json"));

  const std::string sidecar = slurp(dir / "v.json");
  replace_in_file(dir / "v.json", "\"f64\"", "\"f16\"");
  CHECK_THROWS_AS(read_volume(dir / "v.json"), UnknownDTypeError);
  spit(dir / "v.json", sidecar.substr(0, sidecar.size() / 2));
  CHECK_THROWS_AS(read_volume(dir / "v.json"), MalformedSidecarError);
  spit(dir / "v.json", "{\"dims\": [4, 4], \"dtype\": \"f64\", \"kind\": \"image\", \"payload\": \"v.raw\"}");
  CHECK_THROWS_AS(read_volume(dir / "v.json"), MalformedSidecarError);
  spit(dir / "v.json", sidecar);
  replace_in_file(dir / "v.json", "\"image\"", "\"mesh\"");
  CHECK_THROWS_AS(read_volume(dir / "v.json"), MalformedSidecarError);

  CHECK_THROWS_AS(parse_dtype("int8"), UnknownDTypeError);
  CHECK(parse_dtype("u16") == DType::U16);
}

TEST_CASE("affine files round-trip bit-exactly and validate their params") {
  TempDir dir;
  const SyntheticPair p = make_pair(Dims::cube(16), 5, 6, 0.3);
  AffineFile a;
  a.matrix = p.truth;
  a.params = p.params;
  a.pivot = center_of_mass(p.fixed);
  a.note = "synthetic ground truth";
  write_affine(dir / "a.json", a);
  const AffineFile r = read_affine(dir / "a.json");
  CHECK(r.matrix == a.matrix);
  REQUIRE(r.params.has_value());
  CHECK(r.params->flat() == a.params->flat());
  CHECK(*r.pivot == *a.pivot);
  CHECK(r.convention == a.convention);
  CHECK(r.note == a.note);

  AffineFile plain;
  plain.matrix = p.truth;
  write_affine(dir / "m.json", plain);
  const AffineFile rm = read_affine(dir / "m.json");
  CHECK(rm.matrix == plain.matrix);
  CHECK_FALSE(rm.params.has_value());

  AffineFile wrong = a;
  wrong.params->t[0] += 1e-6;
  write_affine(dir / "w.json", wrong);
  CHECK_THROWS_AS(read_affine(dir / "w.json"), FormatError);

  spit(dir / "row.json", "{\"matrix\": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0.5,1]}");
  CHECK_THROWS_AS(read_affine(dir / "row.json"), FormatError);
  spit(dir / "short.json", "{\"matrix\": [1,0,0,0]}");
  CHECK_THROWS_AS(read_affine(dir / "short.json"), FormatError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  TempDir dir;
  const ModelConfig c = ModelConfig::toy();
  const SyntheticPair p = make_pair(c.input_dims, 7, 8, 0.2);
  TrainingState st{c, init_weights(c, 9), {}};
  st.adam.cfg.lr = 3e-4;
  train_step(p.fixed, p.moving, nullptr, st, LossConfig{});
  train_step(p.fixed, p.moving, nullptr, st, LossConfig{});
  save_checkpoint(dir / "ck.bin", st);
  const TrainingState r = load_checkpoint(dir / "ck.bin");
  CHECK(r.config == st.config);
  CHECK(r.model == st.model);
  CHECK(r.adam == st.adam);

  const std::string bytes = slurp(dir / "ck.bin");
  spit(dir / "cut.bin", bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.bin"), FormatError);
  spit(dir / "junk.bin", "not a checkpoint\n");
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.bin"), FormatError);
}

TEST_CASE("phantoms are deterministic with a zero background") {
  const Dims d = Dims::cube(24);
  const Phantom model = make_phantom_model(11);
  const PhantomImage a = make_phantom(d, 11), b = make_phantom(d, 11);
  CHECK(same_bits(a.image, b.image));
  CHECK(a.labels == b.labels);
  CHECK_FALSE(same_bits(a.image, make_phantom(d, 12).image));
  CHECK(model.num_structures() >= 3);
  CHECK(model.num_structures() <= 5);
  CHECK(a.labels.num_structures() == model.num_structures());
  std::size_t background = 0;
  for (std::size_t i = 0; i < d.h; ++i)
    for (std::size_t j = 0; j < d.w; ++j)
      for (std::size_t k = 0; k < d.d; ++k) {
        const Vec3 x{normalized_coord(i, d.h), normalized_coord(j, d.w), normalized_coord(k, d.d)};
        if (model.head.rho(x) >= 1.0 + model.edge) {
          ++background;
          CHECK(a.image.at(i, j, k) == 0.0);
          CHECK(a.labels.at(i, j, k) == 0);
        }
      }
  CHECK(background > d.count() / 10);
  CHECK_THROWS(make_phantom(Dims{15, 32, 32}, 1));
}

TEST_CASE("phantom labels agree with the structures and the centre of mass is inside the head") {
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    const Phantom model = make_phantom_model(seed);
    const PhantomImage p = make_phantom(Dims::cube(20), seed);
    CHECK(model.head.rho(center_of_mass(p.image)) < 1.0);
    std::vector<std::size_t> count(model.num_structures() + 1, 0);
    for (Label l : p.labels.labels()) ++count.at(l);
    for (std::size_t s = 1; s <= model.num_structures(); ++s) CHECK(count[s] > 0);
  }
}

TEST_CASE("random affines stay in the shrunken box and reproduce per seed") {
  const double pi = std::acos(-1.0);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const GeometricParams g = sample_random_affine(seed, 0.2);
    CHECK(g.in_bounds());
    for (int a = 0; a < 3; ++a) {
      CHECK(std::abs(g.t[a]) <= 0.2);
      CHECK(std::abs(g.r[a]) <= 0.2 * pi);
      CHECK(std::abs(g.s[a] - 1.0) <= 0.1);
      CHECK(std::abs(g.h[a]) <= 0.2 * pi);
    }
    CHECK(sample_random_affine(seed, 0.2).flat() == g.flat());
  }
  CHECK(sample_random_affine(1, 0.2).flat() != sample_random_affine(2, 0.2).flat());
  const auto tiny = sample_random_affine(3, 1e-12).flat();
  const auto id = GeometricParams::identity().flat();
  for (int i = 0; i < 12; ++i) CHECK(std::abs(tiny[i] - id[i]) < 1e-11);
  CHECK_THROWS(sample_random_affine(1, 0.0));
  CHECK_THROWS(sample_random_affine(1, 1.5));
}

TEST_CASE("synthetic pairs warp the fixed image by the inverse truth") {
  const SyntheticPair p = make_pair(Dims::cube(20), 13, 14, 0.2);
  CHECK(p.truth == recenter(compose(p.params), center_of_mass(p.fixed)));
  CHECK(same_bits(p.moving, warp_affine(p.fixed, p.truth.inverse(), p.fixed.dims())));
  CHECK(p.moving_labels == warp_labels(p.fixed_labels, p.truth.inverse(), p.fixed.dims()));
}

TEST_CASE("report tables") {
  CaseResult a{"a", {1.0, 0.5}, {0.0, 2.0}};
  CaseResult b{"b", {0.25, 0.75}, {std::nullopt, std::nullopt}};
  const Table cases = case_table({a, b});
  CHECK(cases.header == std::vector<std::string>{"case", "mean_dsc", "dsc_1", "dsc_2", "mean_hd95"});
  CHECK(cases.csv() == "case,mean_dsc,dsc_1,dsc_2,mean_hd95\na,0.75,1,0.5,1\nb,0.5,0.25,0.75,nan\n");
  const std::string aligned = cases.aligned();
  CHECK(aligned.find("mean_dsc") != std::string::npos);
  std::size_t lines = 0;
  for (char ch : aligned) lines += ch == '\n';
  CHECK(lines >= 3);

  const Table s = summary_table({a, b});
  REQUIRE(s.rows.size() == 1);
  // DSC30 over two cases takes ceil(0.6) = 1 case.
  CHECK(s.rows[0] == std::vector<std::string>{"2", "0.625", "0.5", "1"});
  CHECK(std::stod(format_number(0.1 + 0.2)) == 0.1 + 0.2);
  CHECK(format_number(0.5) == "0.5");
}
