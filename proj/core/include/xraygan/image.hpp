#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xraygan/tensor.hpp"

namespace xraygan {

// Grayscale image with pixels in [-1, 1]. Stored on disk as 8-bit PNG
// with byte b mapping to 2*b/255 - 1.
struct Image {
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::int64_t h, std::int64_t w, double fill = -1.0)
        : h(h), w(w), pixels(static_cast<std::size_t>(h * w), fill) {}

    double& at(std::int64_t r, std::int64_t c) { return pixels[static_cast<std::size_t>(r * w + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return pixels[static_cast<std::size_t>(r * w + c)]; }
};

std::uint8_t pixel_to_byte(double v);
double byte_to_pixel(std::uint8_t b);

Image read_png_gray(const std::string& path);
void write_png_gray(const std::string& path, const Image& img);

// [1,H,W] channel-first tensor.
Tensor image_to_tensor(const Image& img);
// Accepts [H,W] or [1,H,W] or [1,1,H,W].
Image tensor_to_image(const Tensor& t);

// Block average; factor must divide both dimensions.
Image box_downsample(const Image& img, int factor);
Tensor box_downsample(const Tensor& t, int factor);

// Resize a square [S,S] tensor to another power-of-two side: box average
// when shrinking, half-pixel bilinear doubling when growing.
Tensor resize_pow2(const Tensor& t, std::int64_t side);

}  // namespace xraygan
