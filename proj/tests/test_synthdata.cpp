#include <cstring>
#include <filesystem>
#include <fstream>

#include "bat/rng.hpp"
#include "bat/synthdata.hpp"
#include "doctest.h"

using namespace bat;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / tag;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double box_mean(const Image& img, int ch, const BBox& b) {
  double sum = 0.0;
  int count = 0;
  for (int y = int(b.y); y < int(b.y + b.h); ++y)
    for (int x = int(b.x); x < int(b.x + b.w); ++x) {
      sum += img.at(ch, y, x);
      ++count;
    }
  return sum / count;
}

double channel_mean(const Image& img, int ch) {
  double sum = 0.0;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) sum += img.at(ch, y, x);
  return sum / (double(img.w) * img.h);
}

}  // namespace

TEST_CASE("spec validation") {
  SequenceSpec s;
  CHECK_NOTHROW(s.validate());
  SequenceSpec bad = s;
  bad.max_target = 64.0;  // equal to the frame side
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.noise = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.switch_period = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.frames = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.min_target = 10.0;
  bad.max_target = 9.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("dominance block pattern") {
  // P = 10, 40 frames: RGB, TIR, RGB, TIR in 10-frame blocks
  for (int f = 0; f < 40; ++f) {
    bool want_rgb = (f / 10) % 2 == 0;
    CHECK(frame_dominant_is_rgb(f, 10) == want_rgb);
  }
  CHECK(frame_dominant_is_rgb(0, 1));
  CHECK_FALSE(frame_dominant_is_rgb(1, 1));
}

TEST_CASE("generation is bit-deterministic") {
  SequenceSpec spec;
  spec.frames = 6;
  spec.frame_size = 32;
  spec.seed = 42;
  SequenceRecord a = generate_sequence(spec);
  SequenceRecord b = generate_sequence(spec);
  REQUIRE(a.visible.size() == 6);
  for (std::size_t f = 0; f < a.visible.size(); ++f) {
    CHECK(std::memcmp(a.visible[f].data.data(), b.visible[f].data.data(),
                      a.visible[f].data.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(a.infrared[f].data.data(), b.infrared[f].data.data(),
                      a.infrared[f].data.size() * sizeof(double)) == 0);
    CHECK(a.gt_visible[f].x == b.gt_visible[f].x);
    CHECK(a.gt_visible[f].w == b.gt_visible[f].w);
  }

  spec.seed = 43;
  SequenceRecord c = generate_sequence(spec);
  CHECK(std::memcmp(a.visible[0].data.data(), c.visible[0].data.data(),
                    a.visible[0].data.size() * sizeof(double)) != 0);
}

TEST_CASE("ground truth stays inside the frame across random specs") {
  SplitMix64 rng(7);
  for (int i = 0; i < 100; ++i) {
    SequenceSpec spec;
    spec.frames = 12;
    spec.frame_size = 24 + int(rng.index(60));
    spec.min_target = 6.0 + rng.u01() * 4.0;
    spec.max_target = spec.min_target + rng.u01() * (spec.frame_size - spec.min_target - 2.0) * 0.5;
    spec.motion = rng.u01() * 5.0;
    spec.switch_period = 1 + int(rng.index(10));
    spec.noise = rng.u01();
    spec.seed = rng.next();
    SequenceRecord rec = generate_sequence(spec);
    for (const BBox& b : rec.gt_visible) {
      CHECK(b.x >= 0.0);
      CHECK(b.y >= 0.0);
      CHECK(b.x + b.w <= spec.frame_size);
      CHECK(b.y + b.h <= spec.frame_size);
      CHECK(b.w >= 1.0);
      CHECK(b.h >= 1.0);
      CHECK(b.x == std::floor(b.x));
      CHECK(b.w == std::floor(b.w));
    }
  }
}

TEST_CASE("dominant modality carries the stronger target contrast") {
  int wins = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    SequenceSpec spec;
    spec.frames = 10;
    spec.frame_size = 48;
    spec.switch_period = 5;
    spec.noise = 0.3;
    spec.seed = seed;
    SequenceRecord rec = generate_sequence(spec);
    for (int f = 0; f < spec.frames; ++f) {
      const BBox& gt = rec.gt_visible[std::size_t(f)];
      double vis_c = box_mean(rec.visible[std::size_t(f)], 0, gt) -
                     channel_mean(rec.visible[std::size_t(f)], 0);
      double tir_c = box_mean(rec.infrared[std::size_t(f)], 0, gt) -
                     channel_mean(rec.infrared[std::size_t(f)], 0);
      bool rgb_dom = frame_dominant_is_rgb(f, spec.switch_period);
      double dom = rgb_dom ? vis_c : tir_c;
      double aux = rgb_dom ? tir_c : vis_c;
      if (dom > aux) ++wins;
      ++total;
    }
  }
  CHECK(double(wins) / total >= 0.95);
}

TEST_CASE("dataset writes round-trip byte for byte") {
  SequenceSpec spec;
  spec.frames = 2;
  spec.frame_size = 16;
  spec.min_target = 4.0;
  spec.max_target = 6.0;
  spec.attributes = {"NO", "TC"};
  SequenceRecord rec = generate_sequence(spec);
  spec.seed = 9;
  SequenceRecord rec2 = generate_sequence(spec);

  fs::path root_a = temp_dir("bat_ds_a");
  fs::path root_b = temp_dir("bat_ds_b");
  write_dataset({rec, rec2}, root_a.string());

  auto records = read_dataset(root_a.string());
  REQUIRE(records.size() == 2);
  CHECK(records[0].name == "seq_0000");
  CHECK(records[1].name == "seq_0001");
  CHECK(records[0].attributes == std::vector<std::string>{"NO", "TC"});
  REQUIRE(records[0].visible.size() == 2);
  CHECK(records[0].visible[0].c == 3);
  CHECK(records[0].infrared[0].c == 1);

  write_dataset(records, root_b.string());
  for (auto& e : fs::recursive_directory_iterator(root_a)) {
    if (!e.is_regular_file()) continue;
    fs::path rel = fs::relative(e.path(), root_a);
    CHECK(read_file(e.path()) == read_file(root_b / rel));
  }

  // aligned annotations: the two ground-truth files are identical bytes
  CHECK(read_file(root_a / "seq_0000" / "visible.txt") ==
        read_file(root_a / "seq_0000" / "infrared.txt"));

  fs::remove_all(root_a);
  fs::remove_all(root_b);
}

TEST_CASE("pgm format is exactly as specified") {
  //  all-black 3 wide x 2 high
  Image img = Image::zeros(1, 2, 3);
  fs::path p = fs::temp_directory_path() / "bat_black.pgm";
  write_image(img, p.string());
  std::string bytes = read_file(p);
  std::string want = std::string("P5\n3 2\n255\n") + std::string(6, '\0');
  CHECK(bytes == want);
  fs::remove(p);
}

TEST_CASE("image reader rejects what it cannot keep exact") {
  fs::path dir = temp_dir("bat_img_err");

  {
    std::ofstream f(dir / "wide.pgm", std::ios::binary);
    f << "P5\n2 2\n65535\n";
    f.write("\0\0\0\0\0\0\0\0", 8);
  }
  CHECK_THROWS_AS(read_image((dir / "wide.pgm").string()), ImageIoError);

  {
    std::ofstream f(dir / "magic.ppm", std::ios::binary);
    f << "P7\n2 2\n255\n1234";
  }
  try {
    read_image((dir / "magic.ppm").string());
    FAIL("expected ImageIoError");
  } catch (const ImageIoError& e) {
    std::string msg = e.what();
    CHECK(msg.find("magic.ppm") != std::string::npos);
    CHECK(msg.find("byte") != std::string::npos);
  }

  {
    std::ofstream f(dir / "short.pgm", std::ios::binary);
    f << "P5\n4 4\n255\n";
    f.write("\0\0\0", 3);  // 13 bytes missing
  }
  CHECK_THROWS_AS(read_image((dir / "short.pgm").string()), ImageIoError);

  fs::remove_all(dir);
}

TEST_CASE("dataset reader flags inconsistent annotations") {
  fs::path root = temp_dir("bat_ds_bad");
  fs::create_directories(root / "seq_0000" / "visible");
  fs::create_directories(root / "seq_0000" / "infrared");
  Image vis = Image::zeros(3, 8, 8);
  Image tir = Image::zeros(1, 8, 8);
  write_image(vis, (root / "seq_0000" / "visible" / "000000.ppm").string());
  write_image(tir, (root / "seq_0000" / "infrared" / "000000.pgm").string());
  std::ofstream(root / "seq_0000" / "visible.txt") << "1,1,4,4\n2,2,4,4\n";
  std::ofstream(root / "seq_0000" / "infrared.txt") << "1,1,4,4\n";
  CHECK_THROWS_AS(read_dataset(root.string()), std::runtime_error);

  std::ofstream(root / "seq_0000" / "infrared.txt") << "1,1,4,4\nnot-a-box\n";
  CHECK_THROWS_AS(read_dataset(root.string()), std::runtime_error);
  fs::remove_all(root);

  CHECK_THROWS_AS(read_dataset((fs::temp_directory_path() / "bat_nowhere").string()),
                  std::runtime_error);
}

TEST_CASE("crop aligned to the pixel grid copies the sub-image") {
  Image frame = Image::zeros(1, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) frame.at(0, y, x) = y * 8 + x;

  // box (2,2,4,4): center (4,4), factor 1 -> side 4, out 4
  CropWindow win;
  Image patch = crop_and_resize(frame, BBox{2, 2, 4, 4}, 1.0, 4, &win);
  CHECK(win.side == doctest::Approx(4.0));
  CHECK(win.cx == doctest::Approx(4.0));
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(patch.at(0, y, x) == doctest::Approx(frame.at(0, y + 2, x + 2)));
}

TEST_CASE("constant frames crop to constant patches") {
  Image frame = Image::zeros(3, 10, 10);
  for (auto& v : frame.data) v = 0.37;
  // heavy out-of-bounds geometry: fill value is the frame mean, still 0.37
  Image patch = crop_and_resize(frame, BBox{-2, -2, 6, 6}, 3.0, 12);
  for (double v : patch.data) CHECK(v == doctest::Approx(0.37));
}

TEST_CASE("half out-of-bounds crop pads with the frame mean") {
  Image frame = Image::zeros(1, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) frame.at(0, y, x) = y * 4 + x;
  const double fill = 7.5;  // mean of 0..15

  // box (0,1,2,2): center (1,2); factor 2 -> side 4; out 4 -> unit steps.
  // Sample columns land at -1,0,1,2; rows at 0,1,2,3.
  Image patch = crop_and_resize(frame, BBox{0, 1, 2, 2}, 2.0, 4);
  for (int y = 0; y < 4; ++y) {
    CHECK(patch.at(0, y, 0) == doctest::Approx(fill));
    for (int x = 1; x < 4; ++x)
      CHECK(patch.at(0, y, x) == doctest::Approx(frame.at(0, y, x - 1)));
  }

  CHECK_THROWS_AS(crop_and_resize(frame, BBox{1, 1, 0, 2}, 2.0, 4),
                  std::invalid_argument);
}

TEST_CASE("crop window maps boxes back to frame coordinates") {
  Image frame = Image::zeros(1, 32, 32);
  CropWindow win;
  crop_and_resize(frame, BBox{10, 12, 6, 4}, 4.0, 16, &win);
  BBox in_frame{9, 11, 8, 6};
  BBox crop = win.to_crop(in_frame);
  BBox back = win.to_frame(crop);
  CHECK(back.x == doctest::Approx(in_frame.x).epsilon(1e-12));
  CHECK(back.y == doctest::Approx(in_frame.y).epsilon(1e-12));
  CHECK(back.w == doctest::Approx(in_frame.w).epsilon(1e-12));
  CHECK(back.h == doctest::Approx(in_frame.h).epsilon(1e-12));
}
