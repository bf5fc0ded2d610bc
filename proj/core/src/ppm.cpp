#include "taflab/ppm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "taflab/errors.hpp"

namespace taflab {

namespace {

std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
}

}  // namespace

Image Image::blank(std::size_t h, std::size_t w, std::uint8_t value) {
    Image img;
    img.height = h;
    img.width = w;
    img.rgb.assign(h * w * 3, value);
    return img;
}

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("ppm: cannot open " + path + " for writing");
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()),
             static_cast<std::streamsize>(img.rgb.size()));
    if (!os) throw IoError("ppm: write failed for " + path);
}

Image gray_image(const float* pixels, std::size_t h, std::size_t w) {
    Image img = Image::blank(h, w);
    for (std::size_t i = 0; i < h * w; ++i) {
        const std::uint8_t v = to_byte(pixels[i]);
        img.rgb[i * 3] = img.rgb[i * 3 + 1] = img.rgb[i * 3 + 2] = v;
    }
    return img;
}

Image cam_overlay(const float* frame, std::size_t H, std::size_t W, const float* map,
                  std::size_t h, std::size_t w, float blend) {
    Image img = Image::blank(H, W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const float g = frame[y * W + x];
            const float m = map[(y * h / H) * w + (x * w / W)];  // nearest neighbor
            const float r = (1.0f - blend) * g + blend * m;
            const float gb = (1.0f - blend) * g;
            const std::size_t i = (y * W + x) * 3;
            img.rgb[i] = to_byte(r);
            img.rgb[i + 1] = to_byte(gb);
            img.rgb[i + 2] = to_byte(gb);
        }
    return img;
}

Image delta_heatmap(const float* delta, std::size_t h, std::size_t w, float scale) {
    Image img = Image::blank(h, w);
    for (std::size_t i = 0; i < h * w; ++i) {
        const float v = delta[i] / scale;
        img.rgb[i * 3] = to_byte(std::max(v, 0.0f));
        img.rgb[i * 3 + 2] = to_byte(std::max(-v, 0.0f));
    }
    return img;
}

Image compose_grid(const std::vector<std::vector<Image>>& rows, std::size_t pad) {
    if (rows.empty() || rows[0].empty()) throw ContractError("ppm: empty grid");
    const std::size_t th = rows[0][0].height, tw = rows[0][0].width;
    std::size_t cols = 0;
    for (const auto& r : rows) cols = std::max(cols, r.size());
    const std::size_t H = rows.size() * th + (rows.size() - 1) * pad;
    const std::size_t W = cols * tw + (cols - 1) * pad;
    Image img = Image::blank(H, W, 32);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            const auto& tile = rows[r][c];
            if (tile.height != th || tile.width != tw)
                throw ContractError("ppm: grid tiles differ in size");
            const std::size_t oy = r * (th + pad), ox = c * (tw + pad);
            for (std::size_t y = 0; y < th; ++y)
                std::copy_n(tile.rgb.data() + y * tw * 3, tw * 3,
                            img.rgb.data() + ((oy + y) * W + ox) * 3);
        }
    return img;
}

}  // namespace taflab
