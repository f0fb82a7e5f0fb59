#pragma once

#include <string>
#include <vector>

#include "tensor.hpp"

namespace kfwc {

// PNG codec and bilinear resize, backed by OpenCV. Encoding always uses the
// same compression settings so identical pixels produce identical bytes.
std::vector<uint8_t> encode_png(const ImageU8& img);
ImageU8 decode_image(const std::vector<uint8_t>& bytes);  // throws ArtifactError
ImageU8 read_image_file(const std::string& path);

void write_file(const std::string& path, const void* data, size_t n);
std::vector<uint8_t> read_file(const std::string& path);

// Bilinear resize of a float CHW tensor.
Tensor3 resize_bilinear(const Tensor3& in, int out_h, int out_w);

}  // namespace kfwc
