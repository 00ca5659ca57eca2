#include "affar/mat_reader.hpp"

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "affar/error.hpp"

namespace affar {
namespace {

enum MiType : std::uint32_t {
  kMiInt8 = 1,
  kMiUint8 = 2,
  kMiInt16 = 3,
  kMiUint16 = 4,
  kMiInt32 = 5,
  kMiUint32 = 6,
  kMiSingle = 7,
  kMiDouble = 9,
  kMiInt64 = 12,
  kMiUint64 = 13,
  kMiMatrix = 14,
  kMiCompressed = 15,
  kMiUtf8 = 16,
};

enum MxClass : std::uint32_t { kMxChar = 4, kMxSparse = 5, kMxDouble = 6, kMxUint64 = 15 };

struct Element {
  std::uint32_t type = 0;
  const unsigned char* data = nullptr;
  std::size_t size = 0;
};

class Cursor {
 public:
  Cursor(const unsigned char* begin, std::size_t size, const std::string& path)
      : p_(begin), end_(begin + size), path_(path) {}

  bool done() const { return p_ >= end_; }

  Element next() {
    need(8);
    std::uint32_t first = load<std::uint32_t>(p_);
    Element e;
    if ((first >> 16) != 0) {
      // Small data element: type and size packed into one word.
      e.type = first & 0xFFFF;
      e.size = first >> 16;
      e.data = p_ + 4;
      p_ += 8;
      return e;
    }
    e.type = first;
    e.size = load<std::uint32_t>(p_ + 4);
    p_ += 8;
    need(e.size);
    e.data = p_;
    std::size_t advance = e.size;
    if (e.type != kMiCompressed) advance = (advance + 7) / 8 * 8;
    p_ += std::min<std::size_t>(advance, static_cast<std::size_t>(end_ - p_));
    return e;
  }

  template <typename T>
  static T load(const unsigned char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
  }

 private:
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) throw IngestError(path_ + ": truncated MAT element");
  }
  const unsigned char* p_;
  const unsigned char* end_;
  const std::string& path_;
};

std::vector<double> widen(const Element& e, const std::string& path) {
  std::vector<double> out;
  auto take = [&]<typename T>(T) {
    const std::size_t n = e.size / sizeof(T);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(Cursor::load<T>(e.data + i * sizeof(T)));
  };
  switch (e.type) {
    case kMiInt8: take(std::int8_t{}); break;
    case kMiUint8: take(std::uint8_t{}); break;
    case kMiInt16: take(std::int16_t{}); break;
    case kMiUint16: take(std::uint16_t{}); break;
    case kMiInt32: take(std::int32_t{}); break;
    case kMiUint32: take(std::uint32_t{}); break;
    case kMiSingle: take(float{}); break;
    case kMiDouble: take(double{}); break;
    case kMiInt64: take(std::int64_t{}); break;
    case kMiUint64: take(std::uint64_t{}); break;
    case kMiUtf8: take(std::uint8_t{}); break;
    default: throw IngestError(path + ": unsupported MAT data type " + std::to_string(e.type));
  }
  return out;
}

std::vector<unsigned char> inflate_element(const Element& e, const std::string& path) {
  std::vector<unsigned char> out(std::max<std::size_t>(e.size * 4, 1024));
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw IngestError(path + ": zlib init failed");
  zs.next_in = const_cast<Bytef*>(e.data);
  zs.avail_in = static_cast<uInt>(e.size);
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    if (zs.total_out == out.size()) out.resize(out.size() * 2);
    zs.next_out = out.data() + zs.total_out;
    zs.avail_out = static_cast<uInt>(out.size() - zs.total_out);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw IngestError(path + ": corrupt compressed MAT element");
    }
  }
  out.resize(zs.total_out);
  inflateEnd(&zs);
  return out;
}

void parse_matrix(const Element& e, const std::string& path, std::map<std::string, MatVariable>& out) {
  Cursor sub(e.data, e.size, path);
  const Element flags = sub.next();
  if (flags.size < 8) throw IngestError(path + ": bad array flags");
  const std::uint32_t cls = Cursor::load<std::uint32_t>(flags.data) & 0xFF;
  const Element dims_el = sub.next();
  const auto dims = widen(dims_el, path);
  const Element name_el = sub.next();
  MatVariable var;
  var.name.assign(reinterpret_cast<const char*>(name_el.data), name_el.size);
  if (dims.size() != 2) return;
  if (cls == kMxSparse || cls < kMxChar || cls > kMxUint64) return;
  var.rows = static_cast<std::size_t>(dims[0]);
  var.cols = static_cast<std::size_t>(dims[1]);
  if (sub.done()) throw IngestError(path + ": variable '" + var.name + "' has no data");
  const Element real = sub.next();
  var.values = widen(real, path);
  if (var.values.size() != var.rows * var.cols) {
    throw IngestError(path + ": variable '" + var.name + "' has inconsistent size");
  }
  if (cls == kMxChar) {
    var.is_char = true;
    // Column-major 1xN strings read left to right.
    for (double c : var.values) var.text.push_back(static_cast<char>(c));
  }
  out[var.name] = std::move(var);
}

void parse_elements(Cursor& cur, const std::string& path, std::map<std::string, MatVariable>& out) {
  while (!cur.done()) {
    const Element e = cur.next();
    if (e.type == kMiCompressed) {
      auto raw = inflate_element(e, path);
      Cursor inner(raw.data(), raw.size(), path);
      parse_elements(inner, path, out);
    } else if (e.type == kMiMatrix) {
      if (e.size > 0) parse_matrix(e, path, out);
    }
  }
}

}  // namespace

std::map<std::string, MatVariable> read_mat_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 128) throw IngestError(path + ": too short for a MAT v5 header");
  if (bytes[126] != 'I' || bytes[127] != 'M') {
    throw IngestError(path + ": not a little-endian MAT v5 file");
  }
  std::map<std::string, MatVariable> out;
  Cursor cur(bytes.data() + 128, bytes.size() - 128, path);
  parse_elements(cur, path, out);
  return out;
}

}  // namespace affar
