#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>

namespace slmfuse {

// Little-endian byte helpers shared by the on-disk formats.

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

/// Rounds to f32; values outside the f32 range are a ValidationError.
float to_f32(double v);

inline void put_f32(std::string& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(to_f32(v))); }

/// Sequential reader over a byte buffer; overruns throw naming `origin`.
class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string origin)
      : bytes_(bytes), origin_(std::move(origin)) {}
  std::uint32_t u32();
  double f32();
  void expect_magic(const char (&magic)[5]);
  bool done() const noexcept { return pos_ == bytes_.size(); }
  void expect_done() const;

 private:
  void need(std::size_t n) const;
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace slmfuse
