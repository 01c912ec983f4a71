#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "malpipe/numerics.hpp"

namespace malpipe::container {

// MALPIPE1 container: 8-byte magic, u32 little-endian format version, a
// section table (name, offset, length), then section blobs. Sections hold
// shape-prefixed little-endian f64 arrays and length-prefixed UTF-8 text.
// Writing is byte-deterministic for a given payload.
inline constexpr char kMagic[8] = {'M', 'A', 'L', 'P', 'I', 'P', 'E', '1'};
inline constexpr std::uint32_t kVersion = 1;

class SectionWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(const std::string& s);           // u32 length + bytes
  void matrix(const Matrix& m);             // u32 rows, u32 cols, f64 data
  void f64_vec(const std::vector<double>& v);
  void u32_vec(const std::vector<std::uint32_t>& v);

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Writer {
 public:
  SectionWriter& add(const std::string& name);
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, SectionWriter>> sections_;
};

class SectionReader {
 public:
  SectionReader(std::string name, const std::uint8_t* data, std::size_t size)
      : name_(std::move(name)), data_(data), size_(size) {}

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  Matrix matrix();
  std::vector<double> f64_vec();
  std::vector<std::uint32_t> u32_vec();

  bool exhausted() const { return pos_ == size_; }
  // Throws FormatError naming the section unless every byte was consumed.
  void expect_exhausted() const;

 private:
  void need(std::size_t n);

  std::string name_;
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path);

  bool has(const std::string& name) const { return sections_.count(name) > 0; }
  SectionReader open(const std::string& name) const;
  std::vector<std::string> section_names() const;

 private:
  std::vector<std::uint8_t> blob_;
  std::map<std::string, std::pair<std::size_t, std::size_t>> sections_;  // offset, length
};

}  // namespace malpipe::container
