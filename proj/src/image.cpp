#include "bat/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace bat {

Image Image::zeros(int c, int h, int w) {
  Image img;
  img.w = w;
  img.h = h;
  img.c = c;
  img.data.assign(std::size_t(c) * h * w, 0.0);
  return img;
}

double Image::mean() const {
  if (data.empty()) return 0.0;
  double s = 0.0;
  for (double v : data) s += v;
  return s / double(data.size());
}

namespace {

[[noreturn]] void io_fail(const std::string& path, std::size_t offset, const std::string& what) {
  throw ImageIoError(path + ": " + what + " (byte " + std::to_string(offset) + ")");
}

// Reads one whitespace-delimited ASCII token, tracking the byte offset.
std::string next_token(std::istream& in, const std::string& path, std::size_t& off) {
  int ch = in.get();
  while (ch != EOF && std::isspace(ch)) {
    ++off;
    ch = in.get();
  }
  if (ch == EOF) io_fail(path, off, "unexpected end of header");
  std::string tok;
  while (ch != EOF && !std::isspace(ch)) {
    tok.push_back(char(ch));
    ++off;
    ch = in.get();
  }
  if (ch != EOF) ++off;  // the single whitespace byte ending the token
  return tok;
}

int parse_dim(const std::string& tok, const std::string& path, std::size_t off) {
  std::size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(tok, &pos);
  } catch (const std::exception&) {
    io_fail(path, off, "expected a number, got \"" + tok + "\"");
  }
  if (pos != tok.size() || v <= 0) io_fail(path, off, "bad dimension \"" + tok + "\"");
  return v;
}

}  // namespace

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError(path + ": cannot open");
  std::size_t off = 0;
  const std::string magic = next_token(in, path, off);
  int channels = 0;
  if (magic == "P6")
    channels = 3;
  else if (magic == "P5")
    channels = 1;
  else
    io_fail(path, 0, "bad magic \"" + magic + "\", want P6 or P5");

  const std::size_t woff = off;
  const int w = parse_dim(next_token(in, path, off), path, woff);
  const std::size_t hoff = off;
  const int h = parse_dim(next_token(in, path, off), path, hoff);
  const std::size_t moff = off;
  const std::string maxval = next_token(in, path, off);
  if (maxval != "255") io_fail(path, moff, "unsupported maxval \"" + maxval + "\", want 255");

  const std::size_t n = std::size_t(w) * h * channels;
  std::vector<unsigned char> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(n));
  if (std::size_t(in.gcount()) != n)
    io_fail(path, off + std::size_t(in.gcount()), "truncated pixel data");

  // interleaved bytes -> planar doubles
  Image img = Image::zeros(channels, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < channels; ++ch)
        img.at(ch, y, x) = double(raw[(std::size_t(y) * w + x) * channels + ch]) / 255.0;
  return img;
}

void write_image(const Image& img, const std::string& path) {
  if (img.c != 1 && img.c != 3)
    throw ImageIoError(path + ": only 1- or 3-channel images are supported, got " +
                       std::to_string(img.c));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError(path + ": cannot open for writing");
  out << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> raw(std::size_t(img.w) * img.h * img.c);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        const double v = std::clamp(img.at(ch, y, x), 0.0, 1.0);
        raw[(std::size_t(y) * img.w + x) * img.c + ch] = (unsigned char)std::lround(v * 255.0);
      }
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  if (!out) throw ImageIoError(path + ": write failed");
}

Image crop_and_resize(const Image& frame, const BBox& box, double factor, int out_size,
                      CropWindow* window) {
  if (box.w <= 0.0 || box.h <= 0.0)
    throw std::invalid_argument("crop_and_resize: zero-area box");
  if (factor <= 0.0 || out_size <= 0)
    throw std::invalid_argument("crop_and_resize: factor and out size must be positive");

  const double side = factor * std::sqrt(box.w * box.h);
  const double cx = box.cx();
  const double cy = box.cy();
  if (window) *window = CropWindow{cx, cy, side, out_size};

  const double fill = frame.mean();
  const double step = side / double(out_size);
  const double x0 = cx - side / 2.0;
  const double y0 = cy - side / 2.0;

  Image patch = Image::zeros(frame.c, out_size, out_size);
  auto sample = [&](int ch, int ix, int iy) -> double {
    if (ix < 0 || iy < 0 || ix >= frame.w || iy >= frame.h) return fill;
    return frame.at(ch, iy, ix);
  };
  for (int oy = 0; oy < out_size; ++oy) {
    // sample at destination pixel centers; source pixel i has center i
    const double sy = y0 + (oy + 0.5) * step - 0.5;
    const int iy = int(std::floor(sy));
    const double fy = sy - iy;
    for (int ox = 0; ox < out_size; ++ox) {
      const double sx = x0 + (ox + 0.5) * step - 0.5;
      const int ix = int(std::floor(sx));
      const double fx = sx - ix;
      for (int ch = 0; ch < frame.c; ++ch) {
        const double v00 = sample(ch, ix, iy);
        const double v10 = sample(ch, ix + 1, iy);
        const double v01 = sample(ch, ix, iy + 1);
        const double v11 = sample(ch, ix + 1, iy + 1);
        patch.at(ch, oy, ox) = (1 - fy) * ((1 - fx) * v00 + fx * v10) +
                               fy * ((1 - fx) * v01 + fx * v11);
      }
    }
  }
  return patch;
}

}  // namespace bat
