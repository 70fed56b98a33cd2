#include "slmfuse/mmf.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>

#include "slmfuse/binio.hpp"
#include "slmfuse/error.hpp"

namespace slmfuse {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'F', '1'};

}  // namespace

std::string encode_mmf(const Tensor& t) {
  if (t.rows() > std::numeric_limits<std::uint32_t>::max() ||
      t.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw ValidationError("tensor too large for MMF1: " + t.shape_string());
  }
  std::string out(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(t.rows()));
  put_u32(out, static_cast<std::uint32_t>(t.cols()));
  out.reserve(out.size() + 4 * t.size());
  for (double v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(to_f32(v)));
  return out;
}

Tensor decode_mmf(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ValidationError(origin + ": not an MMF1 tensor file");
  }
  const std::uint32_t rows = get_u32(bytes, 4);
  const std::uint32_t cols = get_u32(bytes, 8);
  const std::uint64_t n = static_cast<std::uint64_t>(rows) * cols;
  if (rows == 0 || cols == 0 || bytes.size() != 12 + 4 * n) {
    throw ValidationError(origin + ": MMF1 payload size does not match " +
                          std::to_string(rows) + "x" + std::to_string(cols));
  }
  std::vector<double> values(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    values[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, 12 + 4 * i)));
    if (!std::isfinite(values[i])) {
      throw NumericalError(origin + ": non-finite value at index " + std::to_string(i));
    }
  }
  return Tensor({rows, cols}, std::move(values));
}

void write_mmf(const std::filesystem::path& path, const Tensor& t) {
  write_file(path, encode_mmf(t));
}

Tensor read_mmf(const std::filesystem::path& path) {
  return decode_mmf(read_file(path), path.string());
}

void round_to_f32(Tensor& t) {
  for (double& v : t.values()) v = static_cast<double>(to_f32(v));
}

}  // namespace slmfuse
