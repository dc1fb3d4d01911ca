#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bat/tensor.hpp"

namespace bat {

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

// On-disk model container. Layout:
//   magic "BATCKPT1"
//   u32le entry count
//   per entry: u32le name length, name bytes (UTF-8),
//              u32le dtype (1 = f64), u32le rank, u32le dims...
//   raw f64le tensor data, concatenated in manifest order
// Entry order is preserved; writing the same entries twice yields identical
// bytes, which the determinism checks rely on.
struct Checkpoint {
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> data;
  };

  std::vector<Entry> entries;

  void add(std::string name, const Tensor& t);
  void add_scalar(std::string name, double v);
  void add_vector(std::string name, const std::vector<double>& v);

  bool has(const std::string& name) const;
  // Throws CheckpointError when the name is missing.
  const Entry& get(const std::string& name) const;
  double get_scalar(const std::string& name) const;
  // Copies data (and shape) into an existing tensor; shape must match.
  void load_into(const std::string& name, Tensor& t) const;
};

void write_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace bat
