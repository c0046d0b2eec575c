#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "rfnet/tensor.hpp"

namespace rfnet {

// Portable tensor format: "RFT1", u32 LE rank, rank x u32 LE dims, then the
// row-major values as f64 LE.

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

namespace io {

void write_u32(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32(std::istream& is);
void write_f64(std::ostream& os, double v);
double read_f64(std::istream& is);
/// u32 LE length followed by raw bytes.
void write_string(std::ostream& os, const std::string& s);
std::string read_string(std::istream& is);
void expect_magic(std::istream& is, const char (&magic)[5], const char* what);

/// Writes to `<path>.tmp` then renames over `path`, so a failure never
/// leaves a partial file under the final name.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace io

}  // namespace rfnet
