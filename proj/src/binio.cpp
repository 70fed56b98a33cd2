#include "slmfuse/binio.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "slmfuse/error.hpp"

namespace slmfuse {

float to_f32(double v) {
  if (std::abs(v) > static_cast<double>(std::numeric_limits<float>::max())) {
    throw ValidationError("value " + std::to_string(v) + " does not fit in f32");
  }
  return static_cast<float>(v);
}

void ByteReader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n) {
    throw ValidationError(origin_ + ": truncated at byte " + std::to_string(pos_));
  }
}

std::uint32_t ByteReader::u32() {
  need(4);
  const std::uint32_t v = get_u32(bytes_, pos_);
  pos_ += 4;
  return v;
}

double ByteReader::f32() {
  const double v = static_cast<double>(std::bit_cast<float>(u32()));
  if (!std::isfinite(v)) {
    throw NumericalError(origin_ + ": non-finite value at byte " + std::to_string(pos_ - 4));
  }
  return v;
}

void ByteReader::expect_magic(const char (&magic)[5]) {
  need(4);
  if (bytes_.compare(pos_, 4, magic, 4) != 0) {
    throw ValidationError(origin_ + ": bad magic, expected " + std::string(magic, 4));
  }
  pos_ += 4;
}

void ByteReader::expect_done() const {
  if (!done()) {
    throw ValidationError(origin_ + ": " + std::to_string(bytes_.size() - pos_) +
                          " trailing bytes");
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("failed writing " + path.string());
}

}  // namespace slmfuse
