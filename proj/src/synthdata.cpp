#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "bat/rng.hpp"
#include "bat/synthdata.hpp"

namespace fs = std::filesystem;

namespace bat {

namespace {

// SplitMix64's additive constant; offsetting a seed by k*kGamma and hashing
// lands on the k-th element of that seed's stream, which gives cheap
// order-free per-index randomness.
constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;

double cell_noise(std::uint64_t seed, std::uint64_t idx) {
  return hash_u01(seed + idx * kGamma);
}

double bump(double dx, double dy, double rx, double ry) {
  double r2 = (dx / rx) * (dx / rx) + (dy / ry) * (dy / ry);
  double t = 1.0 - std::min(1.0, r2);
  return t * t;
}

struct Walk {
  double cx, cy, w, h;
};

void reflect(double& pos, double& vel, double lo, double hi) {
  if (lo > hi) {  // frame barely fits the target; pin to the center
    pos = (lo + hi) / 2.0;
    vel = 0.0;
    return;
  }
  if (pos < lo) {
    pos = lo;
    vel = -vel;
  } else if (pos > hi) {
    pos = hi;
    vel = -vel;
  }
}

}  // namespace

void SequenceSpec::validate() const {
  if (frames < 1) throw std::invalid_argument("sequence needs at least one frame");
  if (frame_size < 8) throw std::invalid_argument("frame size must be at least 8");
  if (switch_period < 1) throw std::invalid_argument("switch period must be >= 1");
  if (noise < 0.0 || noise > 1.0) throw std::invalid_argument("noise level must lie in [0,1]");
  if (min_target <= 0.0 || max_target < min_target)
    throw std::invalid_argument("target size range is empty or non-positive");
  if (max_target >= frame_size)
    throw std::invalid_argument("target size must be smaller than the frame");
  if (motion < 0.0) throw std::invalid_argument("motion must be non-negative");
}

bool frame_dominant_is_rgb(int frame, int switch_period) {
  return (frame / switch_period) % 2 == 0;
}

SequenceRecord generate_sequence(const SequenceSpec& spec) {
  spec.validate();
  const int F = spec.frame_size;

  // Fixed draw order (the on-disk determinism contract):
  //   1 w, 2 h, 3 cx, 4 cy, 5 vx, 6 vy, 7 texture seed, 8 noise seed,
  //   9 decoy orbit phase, 10 decoy orbit period,
  //   then per frame from frame 1: ax, ay, jw, jh.
  SplitMix64 rng(spec.seed);
  Walk t;
  t.w = rng.uniform(spec.min_target, spec.max_target);
  t.h = rng.uniform(spec.min_target, spec.max_target);
  double lo_x = t.w / 2.0 + 1.0, hi_x = F - t.w / 2.0 - 1.0;
  double lo_y = t.h / 2.0 + 1.0, hi_y = F - t.h / 2.0 - 1.0;
  t.cx = rng.uniform(std::min(lo_x, hi_x), std::max(lo_x, hi_x));
  t.cy = rng.uniform(std::min(lo_y, hi_y), std::max(lo_y, hi_y));
  double vx = rng.uniform(-spec.motion, spec.motion);
  double vy = rng.uniform(-spec.motion, spec.motion);
  std::uint64_t texture_seed = rng.next();
  std::uint64_t noise_seed = rng.next();
  double orbit_phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  double orbit_period = rng.uniform(15.0, 30.0);

  SequenceRecord rec;
  rec.attributes = spec.attributes;

  for (int f = 0; f < spec.frames; ++f) {
    if (f > 0) {
      double ax = rng.uniform(-spec.motion, spec.motion);
      double ay = rng.uniform(-spec.motion, spec.motion);
      double jw = rng.uniform(-1.0, 1.0);
      double jh = rng.uniform(-1.0, 1.0);
      vx = std::clamp(vx + 0.5 * ax, -spec.motion, spec.motion);
      vy = std::clamp(vy + 0.5 * ay, -spec.motion, spec.motion);
      t.cx += vx;
      t.cy += vy;
      t.w = std::clamp(t.w * (1.0 + 0.02 * jw), spec.min_target, spec.max_target);
      t.h = std::clamp(t.h * (1.0 + 0.02 * jh), spec.min_target, spec.max_target);
      reflect(t.cx, vx, t.w / 2.0 + 1.0, F - t.w / 2.0 - 1.0);
      reflect(t.cy, vy, t.h / 2.0 + 1.0, F - t.h / 2.0 - 1.0);
    }

    // The decoy orbits the target with an oscillating radius, so it sweeps
    // through the search neighbourhood and passes close (about 6 px) twice
    // per orbit instead of sitting harmlessly far away.
    double theta = orbit_phase + 2.0 * 3.14159265358979323846 * f / orbit_period;
    double radius = 17.0 + 11.0 * std::sin(2.0 * theta);
    double mx = std::clamp(t.cx + radius * std::cos(theta), 1.0, F - 2.0);
    double my = std::clamp(t.cy + radius * std::sin(theta), 1.0, F - 2.0);

    const bool rgb_dom = frame_dominant_is_rgb(f, spec.switch_period);
    Image vis = Image::zeros(3, F, F);
    Image tir = Image::zeros(1, F, F);

    for (int y = 0; y < F; ++y) {
      for (int x = 0; x < F; ++x) {
        std::uint64_t cell = std::uint64_t(y / 4) * 1024 + std::uint64_t(x / 4);
        double bg = 0.25 + 0.3 * cell_noise(texture_seed, cell);
        double tb = bump(x - t.cx, y - t.cy, t.w / 2.0, t.h / 2.0);
        double db = bump(x - mx, y - my, t.w / 2.0, t.h / 2.0);
        std::uint64_t idx = (std::uint64_t(f) * F + std::uint64_t(y)) * F + std::uint64_t(x);
        double n = (cell_noise(noise_seed, idx) - 0.5) * spec.noise;

        // The decoy blob rides the dominant channel slightly hotter than the
        // target, so that channel's own salience ranking points at the wrong
        // blob; the auxiliary channel carries the answer at reduced contrast
        // and no decoy. Summed across modalities the target wins
        // (0.45 + 0.30 vs 0.55), standalone either channel misleads.
        double vis_amp = rgb_dom ? 0.45 : 0.30;
        double tir_amp = rgb_dom ? 0.30 : 0.45;
        double vis_extra = rgb_dom ? 0.55 * db : n;
        double tir_extra = rgb_dom ? n : 0.55 * db;

        double v = bg + vis_amp * tb + vis_extra;
        vis.at(0, y, x) = std::clamp(v, 0.0, 1.0);
        vis.at(1, y, x) = std::clamp(v * 0.95 + 0.02, 0.0, 1.0);
        vis.at(2, y, x) = std::clamp(v * 0.90 + 0.04, 0.0, 1.0);
        tir.at(0, y, x) = std::clamp(bg + tir_amp * tb + tir_extra, 0.0, 1.0);
      }
    }

    rec.visible.push_back(std::move(vis));
    rec.infrared.push_back(std::move(tir));
    BBox gt{std::floor(t.cx - t.w / 2.0), std::floor(t.cy - t.h / 2.0), std::floor(t.w),
            std::floor(t.h)};
    rec.gt_visible.push_back(gt);
    rec.gt_infrared.push_back(gt);
  }
  return rec;
}

namespace {

std::string seq_dir_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "seq_%04zu", i);
  return buf;
}

std::string frame_file_name(std::size_t i, const char* ext) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%06zu.%s", i, ext);
  return buf;
}

}  // namespace

void write_box_lines(const std::string& path, const std::vector<BBox>& boxes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const BBox& b : boxes) {
    out << (long long)std::floor(b.x) << ',' << (long long)std::floor(b.y) << ','
        << (long long)std::floor(b.w) << ',' << (long long)std::floor(b.h) << '\n';
  }
}

std::vector<BBox> read_box_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<BBox> boxes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    long long x, y, w, h;
    if (std::sscanf(line.c_str(), "%lld,%lld,%lld,%lld", &x, &y, &w, &h) != 4)
      throw std::runtime_error("bad box line " + std::to_string(lineno) + " in " + path);
    boxes.push_back(BBox{double(x), double(y), double(w), double(h)});
  }
  return boxes;
}

void write_dataset(const std::vector<SequenceRecord>& records, const std::string& root) {
  fs::create_directories(root);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SequenceRecord& r = records[i];
    if (r.visible.size() != r.infrared.size() || r.visible.size() != r.gt_visible.size() ||
        r.gt_visible.size() != r.gt_infrared.size())
      throw std::invalid_argument("sequence " + std::to_string(i) +
                                  " has mismatched frame/annotation counts");
    fs::path dir = fs::path(root) / seq_dir_name(i);
    fs::create_directories(dir / "visible");
    fs::create_directories(dir / "infrared");
    for (std::size_t f = 0; f < r.visible.size(); ++f) {
      write_image(r.visible[f], (dir / "visible" / frame_file_name(f, "ppm")).string());
      write_image(r.infrared[f], (dir / "infrared" / frame_file_name(f, "pgm")).string());
    }
    write_box_lines((dir / "visible.txt").string(), r.gt_visible);
    write_box_lines((dir / "infrared.txt").string(), r.gt_infrared);
    std::ofstream attrs(dir / "attributes.txt", std::ios::binary);
    for (const std::string& a : r.attributes) attrs << a << '\n';
  }
}

std::vector<SequenceRecord> read_dataset(const std::string& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root " + root + " is not a directory");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().rfind("seq_", 0) == 0)
      names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("no seq_* directories under " + root);

  std::vector<SequenceRecord> records;
  for (const std::string& name : names) {
    fs::path dir = fs::path(root) / name;
    SequenceRecord r;
    r.name = name;
    r.gt_visible = read_box_lines((dir / "visible.txt").string());
    r.gt_infrared = read_box_lines((dir / "infrared.txt").string());
    if (r.gt_visible.size() != r.gt_infrared.size())
      throw std::runtime_error(name + ": ground-truth files disagree on frame count");
    for (std::size_t f = 0; f < r.gt_visible.size(); ++f) {
      r.visible.push_back(read_image((dir / "visible" / frame_file_name(f, "ppm")).string()));
      r.infrared.push_back(read_image((dir / "infrared" / frame_file_name(f, "pgm")).string()));
    }
    std::ifstream attrs(dir / "attributes.txt", std::ios::binary);
    std::string line;
    while (std::getline(attrs, line))
      if (!line.empty()) r.attributes.push_back(line);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace bat
