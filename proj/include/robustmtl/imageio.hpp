#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "robustmtl/tensor.hpp"

namespace rmtl {

// Interleaved 8-bit image, c = 1 or 3.
struct ImageU8 {
    int h = 0, w = 0, c = 0;
    std::vector<std::uint8_t> v;

    std::uint8_t& at(int y, int x, int ch) {
        return v[(static_cast<size_t>(y) * w + x) * c + ch];
    }
    std::uint8_t at(int y, int x, int ch) const {
        return v[(static_cast<size_t>(y) * w + x) * c + ch];
    }
};

// Binary PPM (P6, RGB) and PGM (P5, single channel), maxval 255.
void write_ppm(const std::string& path, const ImageU8& img);
ImageU8 read_ppm(const std::string& path);
void write_pgm(const std::string& path, const ImageU8& img);
ImageU8 read_pgm(const std::string& path);

// {1,C,H,W} tensor of gray values in [0,255].
Tensor image_to_tensor(const ImageU8& img);
// Rounds and clamps back to 8 bits.
ImageU8 tensor_to_image(const Tensor& t);

}  // namespace rmtl
