#pragma once

// Little-endian binary helpers shared by the dataset and checkpoint
// containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace latkit::binio {

class Writer {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  const std::string& data() const { return buf_; }

 private:
  template <class U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

/// Reader over an in-memory buffer; every read past the end throws
/// FormatError naming the offset and the field being read.
class Reader {
 public:
  explicit Reader(std::string data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

  std::string bytes(std::size_t n, std::string_view what);
  std::uint8_t u8(std::string_view what) { return static_cast<std::uint8_t>(get<std::uint8_t>(what)); }
  std::uint32_t u32(std::string_view what) { return static_cast<std::uint32_t>(get<std::uint32_t>(what)); }
  std::uint64_t u64(std::string_view what) { return get<std::uint64_t>(what); }
  std::int32_t i32(std::string_view what) { return static_cast<std::int32_t>(get<std::uint32_t>(what)); }
  double f64(std::string_view what) { return std::bit_cast<double>(get<std::uint64_t>(what)); }
  std::string str(std::string_view what) { return bytes(u32(what), what); }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(std::string_view message) const;

 private:
  template <class U>
  std::uint64_t get(std::string_view what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  void need(std::size_t n, std::string_view what) const;

  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename, so readers never observe a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace latkit::binio
