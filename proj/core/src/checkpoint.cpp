#include "hvit/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hvit {

namespace {

constexpr char kMagic[4] = {'H', 'V', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(b, 8);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() == 0 && in.eof()) return false;  // clean end at a record boundary
  if (in.gcount() != 4) throw std::runtime_error("checkpoint truncated inside a u32 field");
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() != 8) throw std::runtime_error("checkpoint truncated inside tensor data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParamSet& params) {
  out.write(kMagic, 4);
  for (const auto& [name, tensor] : params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : tensor.data()) put_f64(out, v);
  }
  if (!out) throw std::runtime_error("checkpoint write failed");
}

ParamSet read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || magic[0] != 'H' || magic[1] != 'V' || magic[2] != 'T' || magic[3] != '1') {
    throw std::runtime_error("not a checkpoint: bad magic bytes (expected HVT1)");
  }
  ParamSet params;
  std::uint32_t name_len = 0;
  while (get_u32(in, name_len)) {
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (in.gcount() != static_cast<std::streamsize>(name_len)) {
      throw std::runtime_error("checkpoint truncated inside a tensor name");
    }
    std::uint32_t rank = 0;
    if (!get_u32(in, rank)) throw std::runtime_error("checkpoint truncated before rank of '" + name + "'");
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::uint32_t d = 0;
      if (!get_u32(in, d) || d == 0) {
        throw std::runtime_error("checkpoint has bad dims for tensor '" + name + "'");
      }
      shape[i] = d;
      count *= d;
    }
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i) data[i] = get_f64(in);
    if (!params.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw std::runtime_error("checkpoint has duplicate tensor name '" + name + "'");
    }
  }
  return params;
}

void write_checkpoint_file(const std::string& path, const ParamSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  write_checkpoint(out, params);
}

ParamSet read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  return read_checkpoint(in);
}

std::string checkpoint_bytes(const ParamSet& params) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, params);
  return os.str();
}

}  // namespace hvit
