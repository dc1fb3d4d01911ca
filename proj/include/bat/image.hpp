#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bat/box.hpp"

namespace bat {

// Planar image, values in [0,1], layout (c, h, w) to match conv2d.
struct Image {
  int w = 0, h = 0, c = 0;
  std::vector<double> data;

  static Image zeros(int c, int h, int w);
  double& at(int ch, int y, int x) { return data[std::size_t((ch * h + y) * w + x)]; }
  double at(int ch, int y, int x) const { return data[std::size_t((ch * h + y) * w + x)]; }
  double mean() const;
};

// Raised on malformed image files; message carries path and byte offset.
struct ImageIoError : std::runtime_error {
  explicit ImageIoError(const std::string& what) : std::runtime_error(what) {}
};

// Binary PPM (P6, 3 channels) / PGM (P5, 1 channel), maxval 255 only.
// write_image picks the format from the channel count.
Image read_image(const std::string& path);
void write_image(const Image& img, const std::string& path);

// The square crop window a patch was taken from, for mapping boxes between
// crop coordinates and frame coordinates.
struct CropWindow {
  double cx = 0.0, cy = 0.0;  // center, frame pixels
  double side = 0.0;          // square side, frame pixels
  int out = 0;                // resampled size, crop pixels

  double scale() const { return side / double(out); }

  BBox to_frame(const BBox& b) const {
    const double s = scale();
    return {cx - side / 2.0 + b.x * s, cy - side / 2.0 + b.y * s, b.w * s, b.h * s};
  }
  BBox to_crop(const BBox& b) const {
    const double s = scale();
    return {(b.x - (cx - side / 2.0)) / s, (b.y - (cy - side / 2.0)) / s, b.w / s, b.h / s};
  }
};

// Square crop of side factor*sqrt(w*h) centered on the box center, bilinear
// resample to out_size x out_size; samples outside the frame read the frame's
// mean value. Throws std::invalid_argument on a zero-area box.
Image crop_and_resize(const Image& frame, const BBox& box, double factor, int out_size,
                      CropWindow* window = nullptr);

}  // namespace bat
