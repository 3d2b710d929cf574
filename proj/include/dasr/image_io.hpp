#pragma once

#include <filesystem>
#include <string>

#include "dasr/tensor.hpp"

namespace dasr {

/// Decodes an 8- or 16-bit PNG (gray, RGB, palette, with or without
/// alpha) into a (1, 3, H, W) tensor in [0, 1]; alpha is dropped.
Tensor<float> read_png(const std::filesystem::path& path);
Tensor<float> decode_png(const std::string& bytes);

/// Encodes batch item 0 of a 3-channel tensor as RGB with `bit_depth`
/// 8 or 16; values are clipped to [0, 1] and rounded to nearest.
std::string encode_png(const Tensor<float>& image, int bit_depth = 8);
// Written atomically.
void write_png(const std::filesystem::path& path, const Tensor<float>& image, int bit_depth = 8);

}  // namespace dasr
