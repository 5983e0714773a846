#include "xraygan/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include "xraygan/autodiff.hpp"

namespace xraygan {

std::uint8_t pixel_to_byte(double v) {
    double scaled = (v + 1.0) * 0.5 * 255.0;
    double r = std::nearbyint(scaled);
    if (r < 0.0) r = 0.0;
    if (r > 255.0) r = 255.0;
    return static_cast<std::uint8_t>(r);
}

double byte_to_pixel(std::uint8_t b) {
    return 2.0 * static_cast<double>(b) / 255.0 - 1.0;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image read_png_gray(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8)) {
        throw std::runtime_error(path + " is not a PNG file");
    }

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }

    std::vector<std::uint8_t> bytes;
    png_uint_32 width = 0, height = 0;
    bool bad_format = false;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("failed to decode " + path);
    }

    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (color != PNG_COLOR_TYPE_GRAY) {
        bad_format = true;
    } else {
        if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (depth == 16) png_set_strip_16(png);
        png_read_update_info(png, info);

        bytes.resize(static_cast<std::size_t>(width) * height);
        std::vector<png_bytep> rows(height);
        for (png_uint_32 r = 0; r < height; ++r) {
            rows[r] = bytes.data() + static_cast<std::size_t>(r) * width;
        }
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);

    if (bad_format) throw std::runtime_error(path + " is not grayscale");

    Image img(static_cast<std::int64_t>(height), static_cast<std::int64_t>(width));
    for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = byte_to_pixel(bytes[i]);
    return img;
}

void write_png_gray(const std::string& path, const Image& img) {
    if (img.h <= 0 || img.w <= 0) throw std::invalid_argument("empty image");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot create " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }

    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(img.h * img.w));
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = pixel_to_byte(img.pixels[i]);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
    for (std::int64_t r = 0; r < img.h; ++r) {
        rows[static_cast<std::size_t>(r)] = bytes.data() + r * img.w;
    }

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("failed to encode " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor image_to_tensor(const Image& img) {
    Tensor t(Shape{1, img.h, img.w});
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = img.pixels[static_cast<std::size_t>(i)];
    return t;
}

Image tensor_to_image(const Tensor& t) {
    const Shape& s = t.shape();
    std::int64_t h = 0, w = 0;
    if (s.size() == 2) {
        h = s[0];
        w = s[1];
    } else if (s.size() == 3 && s[0] == 1) {
        h = s[1];
        w = s[2];
    } else if (s.size() == 4 && s[0] == 1 && s[1] == 1) {
        h = s[2];
        w = s[3];
    } else {
        throw std::invalid_argument("tensor_to_image expects one grayscale plane, got " + shape_str(s));
    }
    Image img(h, w);
    for (std::int64_t i = 0; i < h * w; ++i) img.pixels[static_cast<std::size_t>(i)] = t[i];
    return img;
}

Image box_downsample(const Image& img, int factor) {
    if (factor < 1 || img.h % factor || img.w % factor) {
        throw std::invalid_argument("box_downsample factor must divide image dims");
    }
    Image out(img.h / factor, img.w / factor);
    double inv = 1.0 / (static_cast<double>(factor) * factor);
    for (std::int64_t r = 0; r < out.h; ++r) {
        for (std::int64_t c = 0; c < out.w; ++c) {
            double acc = 0.0;
            for (int i = 0; i < factor; ++i)
                for (int j = 0; j < factor; ++j) acc += img.at(r * factor + i, c * factor + j);
            out.at(r, c) = acc * inv;
        }
    }
    return out;
}

Tensor box_downsample(const Tensor& t, int factor) {
    Image img = tensor_to_image(t);
    Image down = box_downsample(img, factor);
    Tensor out = image_to_tensor(down);
    if (t.shape().size() == 4) return out.reshaped(Shape{1, 1, down.h, down.w});
    if (t.shape().size() == 2) return out.reshaped(Shape{down.h, down.w});
    return out;
}

Tensor resize_pow2(const Tensor& t, std::int64_t side) {
    const Shape& s = t.shape();
    if (s.size() != 2 || s[0] != s[1]) {
        throw std::invalid_argument("resize_pow2 expects a square [S,S] tensor, got " + shape_str(s));
    }
    std::int64_t cur = s[0];
    auto pow2 = [](std::int64_t v) { return v >= 1 && (v & (v - 1)) == 0; };
    if (!pow2(cur) || !pow2(side)) {
        throw std::invalid_argument("resize_pow2 sides must be powers of two");
    }
    if (cur == side) return t;
    if (cur > side) return box_downsample(t, static_cast<int>(cur / side));
    ad::Var v = ad::constant(t.reshaped(Shape{1, 1, cur, cur}));
    while (cur < side) {
        v = ad::upsample_bilinear2x(v);
        cur *= 2;
    }
    return v.value().reshaped(Shape{side, side});
}

}  // namespace xraygan
