#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tdseg/data.hpp"
#include "tdseg/metrics.hpp"

using namespace tdseg;
namespace fs = std::filesystem;

TEST_CASE("synthetic data is deterministic and self-consistent") {
  auto a = synth_generate(7, 20, 64, 4);
  auto b = synth_generate(7, 20, 64, 4);
  REQUIRE(a.size() == 20);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].mask == b[i].mask);
    REQUIRE(a[i].boxes.size() == b[i].boxes.size());
  }
  for (const auto& s : a) {
    CHECK((int)s.boxes.size() >= 1);
    for (uint8_t v : s.mask) CHECK((v < 4 || v == 255));
    // every box is the tight bounding box of its class pixels, recomputed
    // from the mask
    for (const auto& gb : s.boxes) {
      int y0 = s.h, x0 = s.w, y1 = -1, x1 = -1;
      int inside = 0;
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
          if (s.mask[(size_t)y * s.w + x] == gb.cls && x >= gb.box.x0 && x < gb.box.x1 &&
              y >= gb.box.y0 && y < gb.box.y1) {
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            ++inside;
          }
      CHECK(inside >= 1);
      CHECK(y0 == (int)gb.box.y0);
      CHECK(x0 == (int)gb.box.x0);
      CHECK(y1 + 1 == (int)gb.box.y1);
      CHECK(x1 + 1 == (int)gb.box.x1);
    }
  }
}

TEST_CASE("train transform on a square sample of target size is the identity") {
  auto s = synth_generate(3, 1, 64, 4)[0];
  Rng rng(1);
  auto t = train_transform(s, 64, rng);
  CHECK(t.image == s.image);
  CHECK(t.mask == s.mask);
  REQUIRE(t.boxes.size() == s.boxes.size());
}

TEST_CASE("eval transform pads to the target with mean pixel and don't-care") {
  // 128x64 content resized to 64x32 and padded on the right
  Sample s;
  s.h = 128;
  s.w = 64;
  s.image.assign((size_t)3 * s.h * s.w, 100);
  s.mask.assign((size_t)s.h * s.w, 1);
  s.boxes.push_back({{0, 0, 64, 128}, 1});
  std::array<double, 3> mean{10, 20, 30};
  auto t = eval_transform(s, 64, mean);
  CHECK(t.h == 64);
  CHECK(t.w == 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const bool content = x < 32;
      CHECK(t.mask[(size_t)y * 64 + x] == (content ? 1 : 255));
      if (!content) {
        CHECK(t.image[(size_t)y * 64 + x] == 10);
        CHECK(t.image[(size_t)64 * 64 + y * 64 + x] == 20);
        CHECK(t.image[(size_t)2 * 64 * 64 + y * 64 + x] == 30);
      }
    }
  REQUIRE(t.boxes.size() == 1);
  CHECK(t.boxes[0].box.x1 == doctest::Approx(32.0));
}

TEST_CASE("perturbations") {
  auto s = synth_generate(5, 1, 64, 4)[0];

  for (auto kind : {PerturbKind::Uniform, PerturbKind::SaltPepper, PerturbKind::BoxOcclusion}) {
    auto p = perturb(s.image, s.h, s.w, {kind, 0.0, 9});
    CHECK(p == s.image);  // sigma 0 never changes the image
  }

  auto sp = perturb(s.image, s.h, s.w, {PerturbKind::SaltPepper, 1.0, 9});
  for (uint8_t v : sp) CHECK((v == 0 || v == 255));

  auto bo = perturb(s.image, s.h, s.w, {PerturbKind::BoxOcclusion, 0.5, 9});
  int zeros = 0;
  for (int i = 0; i < 64 * 64; ++i) {
    bool all_zero = bo[i] == 0 && bo[64 * 64 + i] == 0 && bo[2 * 64 * 64 + i] == 0;
    if (all_zero && s.image[i] != 0) ++zeros;
  }
  CHECK(zeros >= 32 * 32 - 64);  // one 32x32 square (minus pixels already 0)
  CHECK(zeros <= 32 * 32);

  auto un = perturb(s.image, s.h, s.w, {PerturbKind::Uniform, 0.45, 9});
  CHECK(un != s.image);
  CHECK(perturb(s.image, s.h, s.w, {PerturbKind::Uniform, 0.45, 9}) == un);  // seeded

  CHECK_THROWS_AS(perturb(s.image, s.h, s.w, {PerturbKind::Uniform, 1.5, 0}),
                  std::invalid_argument);
}

TEST_CASE("ppm/pgm round-trip is byte exact") {
  auto s = synth_generate(11, 1, 48, 4)[0];
  const std::string dir = (fs::temp_directory_path() / "tdseg_io_test").string();
  fs::create_directories(dir);
  write_ppm(dir + "/a.ppm", s.h, s.w, s.image);
  int h, w;
  std::vector<uint8_t> img;
  read_ppm(dir + "/a.ppm", h, w, img);
  CHECK(h == s.h);
  CHECK(img == s.image);
  write_ppm(dir + "/b.ppm", h, w, img);
  std::ifstream fa(dir + "/a.ppm", std::ios::binary), fb(dir + "/b.ppm", std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(ba == bb);

  write_pgm(dir + "/m.pgm", s.h, s.w, s.mask);
  std::vector<uint8_t> mask;
  read_pgm(dir + "/m.pgm", h, w, mask);
  CHECK(mask == s.mask);
  fs::remove_all(dir);
}

TEST_CASE("dataset split round-trips through disk") {
  auto samples = synth_generate(13, 3, 48, 4);
  const std::string dir = (fs::temp_directory_path() / "tdseg_split_test").string();
  fs::remove_all(dir);
  write_split(dir, samples);
  auto back = read_split(dir);
  REQUIRE(back.size() == samples.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].image == samples[i].image);
    CHECK(back[i].mask == samples[i].mask);
    REQUIRE(back[i].boxes.size() == samples[i].boxes.size());
    for (size_t b = 0; b < back[i].boxes.size(); ++b) {
      CHECK(back[i].boxes[b].box.x0 == samples[i].boxes[b].box.x0);
      CHECK(back[i].boxes[b].cls == samples[i].boxes[b].cls);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("transforms keep the box/mask consistency invariant") {
  Rng rng(21);
  auto samples = synth_generate(17, 5, 64, 4);
  for (const auto& s : samples) {
    auto t = train_transform(s, 48, rng);
    for (const auto& gb : t.boxes) {
      int inside = 0;
      for (int y = (int)gb.box.y0; y < (int)gb.box.y1; ++y)
        for (int x = (int)gb.box.x0; x < (int)gb.box.x1; ++x)
          if (t.mask[(size_t)y * t.w + x] == gb.cls) ++inside;
      CHECK(inside >= 1);
    }
  }
}
