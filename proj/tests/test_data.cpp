#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "scolio/data.hpp"
#include "scolio/ops.hpp"
#include "support.hpp"

using namespace scolio;
using scolio::test::max_abs_diff;
using scolio::test::scratch_dir;

namespace {

SynthConfig quiet() {
  SynthConfig cfg;
  cfg.noise = 0.0;
  return cfg;
}

double asymmetry(const Sample& s) {
  const TensorD f = flip_width(s.image);
  double e = 0.0;
  for (Index i = 0; i < s.image.numel(); ++i) e += std::abs(s.image[i] - f[i]);
  return e;
}

bool same_pixels(const TensorD& a, const TensorD& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("general_level examples") {
  CHECK(general_level(6.48) == 1);
  CHECK(general_level(75.71) == 4);
  CHECK(general_level(0.0) == 1);
  CHECK(general_level(10.0) == 1);
  CHECK(general_level(10.3) == 2);
  CHECK(general_level(20.0) == 2);
  CHECK(general_level(45.0) == 3);
  CHECK(general_level(45.1) == 4);
  CHECK_THROWS_AS(general_level(-0.5), std::domain_error);
}

TEST_CASE("fine_level examples") {
  CHECK(fine_level(0.0) == 1);
  CHECK(fine_level(5.0) == 1);
  CHECK(fine_level(7.0) == 2);
  CHECK(fine_level(45.0) == 9);
  CHECK(fine_level(46.0) == 10);
  CHECK(fine_level(173.0) == 10);
  CHECK_THROWS_AS(fine_level(-1.0), std::domain_error);
}

TEST_CASE("fine levels group into general levels") {
  CHECK(fine_to_general(1) == 1);
  CHECK(fine_to_general(2) == 1);
  CHECK(fine_to_general(3) == 2);
  CHECK(fine_to_general(4) == 2);
  for (int f = 5; f <= 9; ++f) CHECK(fine_to_general(f) == 3);
  CHECK(fine_to_general(10) == 4);
  int prev_g = 1, prev_f = 1;
  for (int a = 0; a <= 180; ++a) {
    const int g = general_level(a), f = fine_level(a);
    CHECK(fine_to_general(f) == g);
    CHECK(g >= prev_g);
    CHECK(f >= prev_f);
    prev_g = g;
    prev_f = f;
  }
}

TEST_CASE("level schemes") {
  const auto g = LevelScheme::general();
  CHECK(g.levels() == 4);
  CHECK(g.bounds(2) == std::pair<double, double>{10, 20});
  CHECK(std::isinf(g.bounds(4).second));
  const auto f = scheme_from_string("fine");
  CHECK(f.levels() == 10);
  CHECK(f.level(12.0) == 3);
  CHECK(f.bounds(3) == std::pair<double, double>{10, 15});
  CHECK_THROWS_AS(scheme_from_string("coarse"), std::invalid_argument);
}

TEST_CASE("synth at angle 0 without noise is mirror-symmetric") {
  for (std::uint64_t seed : {0, 1, 2, 3}) {
    const Sample s = synth_back(0.0, quiet(), seed);
    CHECK(same_pixels(s.image, flip_width(s.image)));
  }
}

TEST_CASE("synth labels, ranges and determinism") {
  const SynthConfig cfg;
  const Sample s = synth_back(60.0, cfg, 9);
  CHECK(s.general_level == 4);
  CHECK(s.fine_level == 10);
  CHECK(s.angle_deg == 60.0);
  CHECK(s.image.shape() == Shape{1, 64, 64});
  for (double v : s.image.data()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK_NOTHROW(check_bbox(s.bbox, s.width(), s.height()));
  CHECK(same_pixels(s.image, synth_back(60.0, cfg, 9).image));
  CHECK_FALSE(same_pixels(s.image, synth_back(60.0, cfg, 10).image));
  CHECK_THROWS_AS(synth_back(180.0, cfg, 0), std::domain_error);
  CHECK_THROWS_AS(synth_back(-1.0, cfg, 0), std::domain_error);
}

TEST_CASE("asymmetry grows with the angle") {
  for (std::uint64_t seed : {0, 1, 2}) {
    double prev = -1.0;
    for (double angle : {0.0, 15.0, 30.0, 60.0}) {
      const double e = asymmetry(synth_back(angle, quiet(), seed));
      CHECK(e > prev);
      prev = e;
    }
  }
}

TEST_CASE("synth config settings") {
  SynthConfig cfg;
  cfg.set("noise", "0.5");
  CHECK(cfg.noise == 0.5);
  cfg.set("width", "32");
  CHECK(cfg.width == 32);
  CHECK_THROWS_AS(cfg.set("colour", "1"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.set("noise", "lots"), std::invalid_argument);
  CHECK(cfg.to_map().at("noise") == "0.5");

  const auto dir = scratch_dir("synth_cfg");
  {
    std::ofstream out(dir / "gen.txt");
    out << "# generator\n\nnoise = 0.01\nshoulder_tilt=0.01  \n";
  }
  const SynthConfig read = read_synth_config(dir / "gen.txt");
  CHECK(read.noise == 0.01);
  CHECK(read.shoulder_tilt == 0.01);
  {
    std::ofstream out(dir / "bad.txt");
    out << "noise 0.01\n";
  }
  CHECK_THROWS(read_synth_config(dir / "bad.txt"));
}

TEST_CASE("corpus counts per level are exact") {
  SynthConfig cfg;
  cfg.width = cfg.height = 16;
  const std::vector<int> counts{453, 571, 504, 370};
  const auto data = synth_corpus(cfg, counts, LevelScheme::general());
  std::vector<int> seen(4, 0);
  for (const auto& s : data) {
    ++seen[static_cast<std::size_t>(s.general_level - 1)];
    CHECK(s.general_level == general_level(s.angle_deg));
    CHECK(s.fine_level == fine_level(s.angle_deg));
  }
  CHECK(seen == counts);

  const auto fine = synth_corpus(cfg, std::vector<int>(10, 2), LevelScheme::fine());
  std::vector<int> fine_seen(10, 0);
  for (const auto& s : fine) ++fine_seen[static_cast<std::size_t>(s.fine_level - 1)];
  CHECK(fine_seen == std::vector<int>(10, 2));
}

TEST_CASE("generated corpus round-trips through disk") {
  const auto dir = scratch_dir("corpus");
  SynthConfig cfg;
  cfg.seed = 7;
  const auto made = generate_corpus(dir, cfg, {3, 3, 3, 3}, LevelScheme::general());
  const auto rows = read_manifest(dir / "manifest.csv");
  CHECK(rows.size() == 12);
  const auto back = read_corpus(dir);
  REQUIRE(back.size() == made.size());
  for (std::size_t i = 0; i < made.size(); ++i) {
    CHECK(back[i].angle_deg == made[i].angle_deg);
    CHECK(back[i].bbox == made[i].bbox);
    CHECK(back[i].general_level == made[i].general_level);
    CHECK(back[i].fine_level == made[i].fine_level);
    CHECK(same_pixels(back[i].image, made[i].image));
  }
  std::ifstream in(dir / "manifest.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == kManifestHeader);
}

TEST_CASE("manifest errors name the file") {
  const auto dir = scratch_dir("manifest_err");
  try {
    (void)read_manifest(dir / "missing.csv");
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("missing.csv") != std::string::npos);
  }
  {
    std::ofstream out(dir / "bad.csv");
    out << kManifestHeader << "\nimages/a.png,12.5,0,0,4\n";
  }
  CHECK_THROWS(read_manifest(dir / "bad.csv"));
  {
    std::ofstream out(dir / "header.csv");
    out << "file,angle\n";
  }
  CHECK_THROWS(read_manifest(dir / "header.csv"));
}

TEST_CASE("crop examples") {
  const Sample s = synth_back(20.0, SynthConfig{}, 3);
  Sample full = s;
  full.bbox = {0, 0, s.width(), s.height()};
  CHECK(same_pixels(crop_bbox(full, s.height(), s.width()), s.image));

  Sample left = s;
  left.bbox = {0, 0, s.width() / 2, s.height()};
  const TensorD half = crop_bbox(left, s.height(), s.width() / 2);
  for (Index y = 0; y < s.height(); ++y)
    for (Index x = 0; x < s.width() / 2; ++x)
      CHECK(half[y * (s.width() / 2) + x] == s.image[y * s.width() + x]);

  const TensorD flat(Shape{1, 7, 9}, 0.37);
  const TensorD resized = resize_bilinear(flat, 13, 5);
  for (double v : resized.data()) CHECK(v == 0.37);

  Sample bad = s;
  bad.bbox = {s.width() - 2, 0, 4, 4};
  CHECK_THROWS_AS(crop_bbox(bad), std::out_of_range);
  bad.bbox = {0, 0, 0, 4};
  CHECK_THROWS_AS(crop_bbox(bad), std::out_of_range);
}

TEST_CASE("augment keeps labels and pixel range") {
  const Sample s = synth_back(33.0, SynthConfig{}, 4);
  Rng rng(1);
  const Sample same = augment(s, rng, AugmentPolicy::none());
  CHECK(same_pixels(same.image, s.image));
  CHECK(same.bbox == s.bbox);

  AugmentPolicy flip = AugmentPolicy::none();
  flip.flip_prob = 1.0;
  const Sample f = augment(s, rng, flip);
  CHECK(same_pixels(f.image, flip_width(s.image)));
  CHECK(f.bbox.x == s.width() - s.bbox.x - s.bbox.w);
  CHECK(f.angle_deg == s.angle_deg);
  CHECK(f.general_level == s.general_level);

  AugmentPolicy strong;
  strong.brightness = 0.5;
  strong.contrast = 0.5;
  for (int i = 0; i < 50; ++i) {
    const Sample a = augment(s, rng, strong);
    CHECK(a.angle_deg == s.angle_deg);
    CHECK(a.general_level == s.general_level);
    CHECK(a.fine_level == s.fine_level);
    CHECK_NOTHROW(check_bbox(a.bbox, a.width(), a.height()));
    for (double v : a.image.data()) CHECK((v >= 0.0 && v <= 1.0));
  }

  AugmentPolicy bad;
  bad.crop = 0.3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = AugmentPolicy{};
  bad.flip_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("batches stack crops") {
  SynthConfig cfg;
  const auto data = synth_corpus(cfg, {1, 1, 1, 1}, LevelScheme::general());
  const TensorD b = make_batch<double>(data, {2, 0}, 32, 32);
  CHECK(b.shape() == Shape{2, 1, 32, 32});
  const TensorD first = crop_bbox(data[2], 32, 32);
  CHECK(std::equal(first.data().begin(), first.data().end(), b.data().begin()));
}

TEST_CASE("gray conversion round-trips quantized pixels") {
  const Sample s = synth_back(12.0, SynthConfig{}, 5);
  CHECK(same_pixels(from_gray(to_gray(s.image)), s.image));
}
