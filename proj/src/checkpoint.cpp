#include "lsnpc/checkpoint.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "lsnpc/binary_io.hpp"

namespace lsnpc {

namespace io {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string shortest(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace io

std::vector<std::uint8_t> encode_checkpoint(const std::map<std::string, Tensor>& tensors) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u8(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) w.u64(d);
    w.u64(offset);
    offset += 8 * t.numel();
  }
  for (const auto& [_, t] : tensors)
    for (double v : t.data()) w.f64(v);
  return w.buffer();
}

std::map<std::string, Tensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "checkpoint");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  const auto version = r.u8();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.u32();
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str(4096);
    const auto rank = r.u32();
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank for " + e.name);
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u64());
    e.offset = r.u64();
    if (!entries.empty() && !(entries.back().name < e.name))
      throw std::runtime_error("checkpoint: manifest not in sorted name order");
    entries.push_back(std::move(e));
  }
  const std::size_t payload = r.position();
  std::map<std::string, Tensor> out;
  for (const auto& e : entries) {
    const std::size_t n = shape_numel(e.shape);
    r.seek(payload + e.offset);
    std::vector<double> data(n);
    for (auto& v : data) v = r.f64();
    out.emplace(e.name, Tensor(e.shape, std::move(data)));
  }
  return out;
}

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors) {
  io::write_file(path, encode_checkpoint(tensors));
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace lsnpc
