#pragma once

#include "bevpred/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bevpred {

/// BTF v1: magic "BTF1", little-endian u32 rank, rank x little-endian u32
/// extents, u8 dtype tag (0 = f32, 1 = f64), raw little-endian row-major
/// data. No alignment padding.
std::vector<std::uint8_t> encode_btf(const Tensor& t);
Tensor decode_btf(const std::vector<std::uint8_t>& bytes);

void write_btf(const std::string& path, const Tensor& t);
Tensor read_btf(const std::string& path);

} // namespace bevpred
