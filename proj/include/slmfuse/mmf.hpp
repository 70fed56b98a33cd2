#pragma once

#include <filesystem>
#include <string>

#include "slmfuse/tensor.hpp"

namespace slmfuse {

/// `MMF1` tensor container: 4 magic bytes, u32 rows, u32 cols (both
/// little-endian), then rows*cols little-endian f32 values in row-major order.
/// Tensors are written as rows() x cols().
void write_mmf(const std::filesystem::path& path, const Tensor& t);
Tensor read_mmf(const std::filesystem::path& path);

std::string encode_mmf(const Tensor& t);
Tensor decode_mmf(const std::string& bytes, const std::string& origin);

/// Rounds every entry to the nearest f32, the precision MMF1 stores.
void round_to_f32(Tensor& t);

}  // namespace slmfuse
