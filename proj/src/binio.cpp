#include "latkit/binio.hpp"

#include <fstream>
#include <sstream>

#include "latkit/error.hpp"

namespace latkit::binio {

std::string Reader::bytes(std::size_t n, std::string_view what) {
  need(n, what);
  std::string out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

void Reader::need(std::size_t n, std::string_view what) const {
  if (data_.size() - pos_ < n) {
    fail("truncated while reading " + std::string(what) + " (need " + std::to_string(n) + " bytes, " +
         std::to_string(data_.size() - pos_) + " left)");
  }
}

void Reader::fail(std::string_view message) const {
  throw FormatError(source_ + ": offset " + std::to_string(pos_) + ": " + std::string(message));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace latkit::binio
