#include "affar/binary_io.hpp"

#include <array>
#include <bit>

#include "affar/error.hpp"

namespace affar::io {
namespace {

template <typename T>
void write_le(std::ostream& out, T v) {
  std::array<char, sizeof(T)> buf{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(buf.data(), buf.size());
}

template <typename T>
T read_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw CorruptFileError(std::string("unexpected end of file while reading ") + what);
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(buf[i]) << (8 * i);
  }
  return v;
}

}  // namespace

void write_u16(std::ostream& out, std::uint16_t v) { write_le(out, v); }
void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }

std::uint16_t read_u16(std::istream& in, const char* what) { return read_le<std::uint16_t>(in, what); }
std::uint32_t read_u32(std::istream& in, const char* what) { return read_le<std::uint32_t>(in, what); }
std::uint64_t read_u64(std::istream& in, const char* what) { return read_le<std::uint64_t>(in, what); }
double read_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(read_le<std::uint64_t>(in, what));
}

void expect_magic(std::istream& in, const std::string& magic, const std::string& path) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (in.gcount() != static_cast<std::streamsize>(magic.size()) || got != magic) {
    throw CorruptFileError(path + ": bad magic, expected " + magic);
  }
}

}  // namespace affar::io
