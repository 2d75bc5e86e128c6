#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "peghole/errors.hpp"

namespace peghole::binio {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

// FNV-1a over a byte range.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Accumulates the payload in memory so a trailing checksum can cover it.
class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f64s(const double* p, std::size_t n) { raw(p, n * sizeof(double)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }

  const std::vector<unsigned char>& bytes() const { return buf_; }

  // Writes magic + payload + fnv1a(payload).
  void save(const std::string& path, const char magic[8]) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(magic, 8);
    f.write(reinterpret_cast<const char*>(buf_.data()),
            static_cast<std::streamsize>(buf_.size()));
    const std::uint64_t sum = fnv1a(buf_.data(), buf_.size());
    f.write(reinterpret_cast<const char*>(&sum), sizeof sum);
    if (!f) throw IoError("write failed: " + path);
  }

 private:
  std::vector<unsigned char> buf_;
};

// Loads a whole file, verifies magic and trailing checksum, then reads
// sequentially.  Any attempt to read past the payload throws CorruptFile, so
// truncated files are rejected deterministically.
class Reader {
 public:
  Reader(const std::string& path, const char magic[8]) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    std::vector<unsigned char> all((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    if (all.size() < 16) throw CorruptFile("file too short: " + path);
    if (std::memcmp(all.data(), magic, 8) != 0)
      throw CorruptFile("bad magic: " + path);
    std::uint64_t stored;
    std::memcpy(&stored, all.data() + all.size() - 8, 8);
    const std::uint64_t actual = fnv1a(all.data() + 8, all.size() - 16);
    if (stored != actual) throw CorruptFile("checksum mismatch: " + path);
    buf_.assign(all.begin() + 8, all.end() - 8);
  }

  void raw(void* p, std::size_t n) {
    if (pos_ + n > buf_.size()) throw CorruptFile("unexpected end of payload");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
  std::int64_t i64() { std::int64_t v; raw(&v, sizeof v); return v; }
  double f64() { double v; raw(&v, sizeof v); return v; }
  void f64s(double* p, std::size_t n) { raw(p, n * sizeof(double)); }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > buf_.size()) throw CorruptFile("string length corrupt");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  bool exhausted() const { return pos_ == buf_.size(); }

 private:
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace peghole::binio
