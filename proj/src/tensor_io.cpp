#include "rfnet/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rfnet/error.hpp"

namespace rfnet {

namespace io {

void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(b, 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("unexpected end of stream (u32)");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  os.write(b, 8);
}

double read_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("unexpected end of stream (f64)");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw IoError("unexpected end of stream (string)");
  return s;
}

void expect_magic(std::istream& is, const char (&magic)[5], const char* what) {
  char b[4];
  if (!is.read(b, 4) || std::memcmp(b, magic, 4) != 0) {
    throw IoError(std::string("bad magic: not a ") + what);
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

}  // namespace io

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("RFT1", 4);
  io::write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.dims()) io::write_u32(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) io::write_f64(os, v);
}

Tensor read_tensor(std::istream& is) {
  io::expect_magic(is, "RFT1", "portable tensor");
  const std::uint32_t rank = io::read_u32(is);
  if (rank == 0 || rank > 8) throw IoError("tensor rank " + std::to_string(rank) + " unsupported");
  Shape dims(rank);
  for (auto& d : dims) {
    d = io::read_u32(is);
    if (d == 0) throw IoError("tensor file has a zero dimension");
  }
  std::vector<double> values(shape_numel(dims));
  for (auto& v : values) v = io::read_f64(is);
  return Tensor(std::move(dims), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  io::write_file_atomic(path, os.str());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace rfnet
