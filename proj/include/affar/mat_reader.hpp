#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace affar {

// A top-level variable of a MATLAB level-5 MAT-file. Numeric arrays are
// widened to double and kept column-major; char arrays land in `text`.
struct MatVariable {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::string text;
  bool is_char = false;

  double at(std::size_t r, std::size_t c) const { return values[c * rows + r]; }
};

// Reads every 2-D numeric or char variable of a little-endian MAT v5 file,
// including zlib-compressed elements. Structs, cells and sparse arrays are
// skipped. Throws IngestError on malformed input.
std::map<std::string, MatVariable> read_mat_file(const std::string& path);

}  // namespace affar
