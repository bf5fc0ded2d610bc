#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Minimal binary portable-pixmap (P6) output plus the small compositing
// helpers the dump commands need. No metadata is embedded, so identical
// pixels give byte-identical files.

namespace taflab {

struct Image {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> rgb;  // height * width * 3

    static Image blank(std::size_t h, std::size_t w, std::uint8_t value = 0);
};

void write_ppm(const Image& img, const std::string& path);

// grayscale [0,1] frame to RGB
Image gray_image(const float* pixels, std::size_t h, std::size_t w);

// frame with a nearest-neighbor-upsampled heat map alpha-blended in red
Image cam_overlay(const float* frame, std::size_t H, std::size_t W, const float* map,
                  std::size_t h, std::size_t w, float blend = 0.5f);

// signed values as blue (negative) to red (positive) around black
Image delta_heatmap(const float* delta, std::size_t h, std::size_t w, float scale);

// tiles of equal size arranged row-major with a padding gap
Image compose_grid(const std::vector<std::vector<Image>>& rows, std::size_t pad = 2);

}  // namespace taflab
