#include "bat/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace bat {

namespace {

constexpr char kMagic[8] = {'B', 'A', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kDtypeF64 = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4)
    throw CheckpointError(path + ": truncated while reading " + std::string(what));
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

void put_f64(std::ostream& out, const double* p, std::size_t n) {
  // doubles are written as little-endian IEEE-754 bytes; on the platforms we
  // build for that is the in-memory representation
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(p), std::streamsize(n * 8));
}

}  // namespace

void Checkpoint::add(std::string name, const Tensor& t) {
  entries.push_back(Entry{std::move(name), t.shape, t.data});
}

void Checkpoint::add_scalar(std::string name, double v) {
  entries.push_back(Entry{std::move(name), Shape{1}, {v}});
}

void Checkpoint::add_vector(std::string name, const std::vector<double>& v) {
  entries.push_back(Entry{std::move(name), Shape{std::int64_t(v.size())}, v});
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return true;
  return false;
}

const Checkpoint::Entry& Checkpoint::get(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw CheckpointError("checkpoint has no entry \"" + name + "\"");
}

double Checkpoint::get_scalar(const std::string& name) const {
  const Entry& e = get(name);
  if (e.data.size() != 1)
    throw CheckpointError("entry \"" + name + "\" is not a scalar");
  return e.data[0];
}

void Checkpoint::load_into(const std::string& name, Tensor& t) const {
  const Entry& e = get(name);
  if (e.shape != t.shape)
    throw CheckpointError("entry \"" + name + "\" has shape " + shape_str(e.shape) +
                          ", expected " + shape_str(t.shape));
  t.data = e.data;
}

void write_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(path + ": cannot open for writing");
  out.write(kMagic, 8);
  put_u32(out, std::uint32_t(ck.entries.size()));
  for (const auto& e : ck.entries) {
    put_u32(out, std::uint32_t(e.name.size()));
    out.write(e.name.data(), std::streamsize(e.name.size()));
    put_u32(out, kDtypeF64);
    put_u32(out, std::uint32_t(e.shape.size()));
    for (auto d : e.shape) put_u32(out, std::uint32_t(d));
  }
  for (const auto& e : ck.entries) put_f64(out, e.data.data(), e.data.size());
  if (!out) throw CheckpointError(path + ": write failed");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path + ": cannot open");
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw CheckpointError(path + ": bad magic, not a BATCKPT1 file");

  Checkpoint ck;
  const std::uint32_t count = get_u32(in, path, "entry count");
  ck.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Checkpoint::Entry e;
    const std::uint32_t name_len = get_u32(in, path, "name length");
    e.name.resize(name_len);
    in.read(e.name.data(), name_len);
    if (std::size_t(in.gcount()) != name_len)
      throw CheckpointError(path + ": truncated entry name");
    const std::uint32_t dtype = get_u32(in, path, "dtype");
    if (dtype != kDtypeF64)
      throw CheckpointError(path + ": entry \"" + e.name + "\" has unsupported dtype " +
                            std::to_string(dtype));
    const std::uint32_t rank = get_u32(in, path, "rank");
    e.shape.resize(rank);
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      e.shape[d] = get_u32(in, path, "dimension");
      numel *= e.shape[d];
    }
    e.data.resize(std::size_t(numel));
    ck.entries.push_back(std::move(e));
  }
  for (auto& e : ck.entries) {
    in.read(reinterpret_cast<char*>(e.data.data()), std::streamsize(e.data.size() * 8));
    if (std::size_t(in.gcount()) != e.data.size() * 8)
      throw CheckpointError(path + ": truncated data for entry \"" + e.name + "\"");
  }
  return ck;
}

}  // namespace bat
