#include "usae/heatmap.hpp"

#include <cmath>

#include "usae/binary_io.hpp"

namespace usae {

std::vector<GrayImage> export_heatmap(const CodeBatch<float>& codes, std::uint32_t k, std::size_t grid_h,
                                      std::size_t grid_w) {
    if (grid_h < 1 || grid_w < 1) throw ParameterError("heatmap: grid dimensions must be >= 1");
    if (static_cast<Eigen::Index>(k) >= codes.m) throw ParameterError("heatmap: concept out of range");
    const std::size_t per_image = grid_h * grid_w;
    const auto n = static_cast<std::size_t>(codes.rows());
    if (n % per_image != 0)
        throw ParameterError("heatmap: " + std::to_string(n) + " tokens not divisible by grid " +
                             std::to_string(grid_h) + "x" + std::to_string(grid_w));
    std::vector<GrayImage> images;
    for (std::size_t start = 0; start < n; start += per_image) {
        std::vector<float> vals(per_image);
        float peak = 0.0f;
        for (std::size_t t = 0; t < per_image; ++t) {
            vals[t] = codes.value(static_cast<Eigen::Index>(start + t), k);
            peak = std::max(peak, vals[t]);
        }
        GrayImage img{grid_w, grid_h, std::vector<std::uint8_t>(per_image, 0)};
        if (peak > 0.0f)
            for (std::size_t t = 0; t < per_image; ++t)
                img.pixels[t] = static_cast<std::uint8_t>(
                    std::min(255.0, std::floor(255.0 * static_cast<double>(vals[t]) / static_cast<double>(peak))));
        images.push_back(std::move(img));
    }
    return images;
}

GrayImage to_gray(const Matrix& values) {
    GrayImage img{static_cast<std::size_t>(values.cols()), static_cast<std::size_t>(values.rows()), {}};
    img.pixels.assign(img.width * img.height, 0);
    if (values.size() == 0) return img;
    const double lo = values.minCoeff(), hi = values.maxCoeff();
    if (hi <= lo) return img;
    for (Eigen::Index r = 0; r < values.rows(); ++r)
        for (Eigen::Index c = 0; c < values.cols(); ++c)
            img.pixels[static_cast<std::size_t>(r) * img.width + static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(
                std::min(255.0, std::floor(255.0 * (static_cast<double>(values(r, c)) - lo) / (hi - lo))));
    return img;
}

std::string to_pgm(const GrayImage& image) {
    std::string out = "P2\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    for (std::size_t r = 0; r < image.height; ++r) {
        for (std::size_t c = 0; c < image.width; ++c) {
            if (c) out += ' ';
            out += std::to_string(image.at(r, c));
        }
        out += '\n';
    }
    return out;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) { io::write_text_file(path, to_pgm(image)); }

}  // namespace usae
