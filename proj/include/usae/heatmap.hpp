#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "usae/sae.hpp"

namespace usae {

struct GrayImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // row-major

    std::uint8_t at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
};

// Consecutive blocks of grid_h * grid_w code rows form one image each; a
// token's level is floor(255 * Z_k / max over its image), all black when the
// image maximum is 0.
std::vector<GrayImage> export_heatmap(const CodeBatch<float>& codes, std::uint32_t k, std::size_t grid_h,
                                      std::size_t grid_w);

// Min-max scaling of arbitrary values into [0, 255]; constant input is black.
GrayImage to_gray(const Matrix& values);

// Plain (P2) 8-bit PGM.
std::string to_pgm(const GrayImage& image);
void write_pgm(const GrayImage& image, const std::filesystem::path& path);

}  // namespace usae
