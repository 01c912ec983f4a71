#include "malpipe/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace malpipe::container {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void SectionWriter::u32(std::uint32_t v) { put_u32(bytes_, v); }
void SectionWriter::u64(std::uint64_t v) { put_u64(bytes_, v); }
void SectionWriter::f64(double v) { put_u64(bytes_, std::bit_cast<std::uint64_t>(v)); }

void SectionWriter::str(const std::string& s) {
  put_u32(bytes_, static_cast<std::uint32_t>(s.size()));
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void SectionWriter::matrix(const Matrix& m) {
  put_u32(bytes_, static_cast<std::uint32_t>(m.rows));
  put_u32(bytes_, static_cast<std::uint32_t>(m.cols));
  for (double v : m.data) f64(v);
}

void SectionWriter::f64_vec(const std::vector<double>& v) {
  put_u32(bytes_, static_cast<std::uint32_t>(v.size()));
  for (double x : v) f64(x);
}

void SectionWriter::u32_vec(const std::vector<std::uint32_t>& v) {
  put_u32(bytes_, static_cast<std::uint32_t>(v.size()));
  for (std::uint32_t x : v) u32(x);
}

SectionWriter& Writer::add(const std::string& name) {
  sections_.emplace_back(name, SectionWriter{});
  return sections_.back().second;
}

void Writer::write(const std::filesystem::path& path) const {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(sections_.size()));

  std::size_t table_size = 0;
  for (const auto& [name, sec] : sections_) table_size += 4 + name.size() + 8 + 8;
  std::uint64_t offset = out.size() + table_size;
  for (const auto& [name, sec] : sections_) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u64(out, offset);
    put_u64(out, sec.bytes().size());
    offset += sec.bytes().size();
  }
  for (const auto& [name, sec] : sections_)
    out.insert(out.end(), sec.bytes().begin(), sec.bytes().end());

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write container: " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

void SectionReader::need(std::size_t n) {
  if (pos_ + n > size_)
    throw FormatError("container section '" + name_ + "' is truncated");
}

std::uint32_t SectionReader::u32() {
  need(4);
  const std::uint32_t v = get_u32(data_ + pos_);
  pos_ += 4;
  return v;
}

std::uint64_t SectionReader::u64() {
  need(8);
  const std::uint64_t v = get_u64(data_ + pos_);
  pos_ += 8;
  return v;
}

double SectionReader::f64() { return std::bit_cast<double>(u64()); }

std::string SectionReader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
  pos_ += n;
  return s;
}

Matrix SectionReader::matrix() {
  const std::uint32_t rows = u32();
  const std::uint32_t cols = u32();
  if (rows != 0 && cols != 0 && static_cast<std::uint64_t>(rows) * cols > (size_ - pos_) / 8)
    throw FormatError("container section '" + name_ + "' is truncated");
  Matrix m(rows, cols);
  for (auto& v : m.data) v = f64();
  return m;
}

std::vector<double> SectionReader::f64_vec() {
  const std::uint32_t n = u32();
  if (n > (size_ - pos_) / 8)
    throw FormatError("container section '" + name_ + "' is truncated");
  std::vector<double> v(n);
  for (auto& x : v) x = f64();
  return v;
}

std::vector<std::uint32_t> SectionReader::u32_vec() {
  const std::uint32_t n = u32();
  if (n > (size_ - pos_) / 4)
    throw FormatError("container section '" + name_ + "' is truncated");
  std::vector<std::uint32_t> v(n);
  for (auto& x : v) x = u32();
  return v;
}

void SectionReader::expect_exhausted() const {
  if (pos_ != size_)
    throw FormatError("container section '" + name_ + "' has trailing bytes");
}

Reader::Reader(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open container: " + path.string());
  blob_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());

  if (blob_.size() < 16) throw FormatError("container too short: " + path.string());
  if (std::memcmp(blob_.data(), kMagic, 8) != 0)
    throw FormatError("bad container magic in " + path.string());
  const std::uint32_t version = get_u32(blob_.data() + 8);
  if (version > kVersion)
    throw FormatError("unsupported container version " + std::to_string(version) + " in " +
                      path.string());
  const std::uint32_t n_sections = get_u32(blob_.data() + 12);

  std::size_t pos = 16;
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    if (pos + 4 > blob_.size()) throw FormatError("container table truncated: " + path.string());
    const std::uint32_t name_len = get_u32(blob_.data() + pos);
    pos += 4;
    if (pos + name_len + 16 > blob_.size())
      throw FormatError("container table truncated: " + path.string());
    std::string name(reinterpret_cast<const char*>(blob_.data() + pos), name_len);
    pos += name_len;
    const std::uint64_t offset = get_u64(blob_.data() + pos);
    const std::uint64_t length = get_u64(blob_.data() + pos + 8);
    pos += 16;
    if (offset > blob_.size() || length > blob_.size() - offset)
      throw FormatError("container section '" + name + "' is truncated");
    sections_[name] = {static_cast<std::size_t>(offset), static_cast<std::size_t>(length)};
  }
}

SectionReader Reader::open(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end())
    throw FormatError("container is missing section '" + name + "'");
  return SectionReader(name, blob_.data() + it->second.first, it->second.second);
}

std::vector<std::string> Reader::section_names() const {
  std::vector<std::string> names;
  for (const auto& [name, span] : sections_) names.push_back(name);
  return names;
}

}  // namespace malpipe::container
