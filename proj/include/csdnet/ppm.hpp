#pragma once

#include "csdnet/tensor.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace csdnet {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Binary P6 with maxval 255. Values are clamped to [0, 1] and rounded.
std::string encode_ppm(const Tensor& image);
void write_ppm(const Tensor& image, const std::filesystem::path& path);

/// Parses a binary P6 image into a 3 x H x W tensor with values in [0, 1].
/// Throws FormatError on anything else.
Tensor decode_ppm(std::string_view bytes);
Tensor read_ppm(const std::filesystem::path& path);

/// Snaps every value to the nearest k/255 after clamping to [0, 1], i.e.
/// exactly what a write/read round trip produces.
void quantize_to_bytes(Tensor& image) noexcept;

} // namespace csdnet
