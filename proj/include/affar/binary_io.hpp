#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

// Little-endian primitives shared by the window and parameter containers.
namespace affar::io {

void write_u16(std::ostream& out, std::uint16_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);

// Readers throw CorruptFileError on short reads; `what` names the field.
std::uint16_t read_u16(std::istream& in, const char* what);
std::uint32_t read_u32(std::istream& in, const char* what);
std::uint64_t read_u64(std::istream& in, const char* what);
double read_f64(std::istream& in, const char* what);

void expect_magic(std::istream& in, const std::string& magic, const std::string& path);

}  // namespace affar::io
