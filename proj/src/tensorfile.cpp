#include "pastanet/tensorfile.hpp"

#include <cstring>
#include <fstream>

namespace pastanet::diff {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'S', 'T', 'A', 'v', '1', '\0'};

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw data_error("truncated tensor file while reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

float read_f32(std::istream& in, const std::string& what) {
  std::uint32_t bits = read_u32(in, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_tensor_file(const std::vector<NamedTensor>& tensors, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write tensor file " + path);
  out.write(kMagic, 8);
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    write_u32(out, static_cast<std::uint32_t>(nt.name.size()));
    out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    write_u32(out, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.shape) write_u32(out, static_cast<std::uint32_t>(d));
    for (float v : nt.tensor.v) write_f32(out, v);
  }
  if (!out) throw data_error("write failure on tensor file " + path);
}

std::vector<NamedTensor> load_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open tensor file " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw data_error("bad magic in tensor file " + path);
  std::uint32_t count = read_u32(in, "tensor count");
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = read_u32(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw data_error("truncated tensor file in name");
    std::uint32_t rank = read_u32(in, "rank");
    std::vector<std::size_t> shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(read_u32(in, "dim"));
      numel *= shape.back();
    }
    TensorF t(shape);
    for (std::size_t j = 0; j < numel; ++j) t[j] = read_f32(in, "values of " + name);
    out.push_back({std::move(name), std::move(t)});
  }
  return out;
}

}  // namespace pastanet::diff
