#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "testutil.hpp"
#include "xraygan/image.hpp"

using namespace xraygan;

namespace {

std::string temp_dir() {
    auto d = std::filesystem::temp_directory_path() / "xraygan-image-tests";
    std::filesystem::create_directories(d);
    return d.string();
}

}  // namespace

TEST_CASE("byte mapping endpoints and midpoint") {
    CHECK(byte_to_pixel(0) == -1.0);
    CHECK(byte_to_pixel(255) == 1.0);
    CHECK(pixel_to_byte(-1.0) == 0);
    CHECK(pixel_to_byte(1.0) == 255);
    CHECK(pixel_to_byte(-1.5) == 0);
    CHECK(pixel_to_byte(2.0) == 255);
    CHECK(byte_to_pixel(pixel_to_byte(0.0)) == doctest::Approx(0.0).epsilon(1.0 / 255.0));
}

TEST_CASE("byte mapping round-trips every byte exactly") {
    for (int b = 0; b <= 255; ++b) {
        CHECK(pixel_to_byte(byte_to_pixel(static_cast<std::uint8_t>(b))) == b);
    }
}

TEST_CASE("png write then read reproduces lattice pixels bit-exactly") {
    Rng rng(11);
    Image img(9, 7);
    for (auto& p : img.pixels) p = byte_to_pixel(static_cast<std::uint8_t>(rng.bounded(256)));
    auto path = temp_dir() + "/roundtrip.png";
    write_png_gray(path, img);
    Image back = read_png_gray(path);
    REQUIRE(back.h == img.h);
    REQUIRE(back.w == img.w);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(back.pixels[i] == img.pixels[i]);
}

TEST_CASE("png read quantizes off-lattice values to the nearest byte") {
    Image img(2, 2);
    img.pixels = {0.3, -0.77, 0.999, 0.0};
    auto path = temp_dir() + "/quantized.png";
    write_png_gray(path, img);
    Image back = read_png_gray(path);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        CHECK(back.pixels[i] == byte_to_pixel(pixel_to_byte(img.pixels[i])));
    }
}

TEST_CASE("reading a missing file fails") {
    CHECK_THROWS(read_png_gray(temp_dir() + "/does-not-exist.png"));
}

TEST_CASE("reading a non-png file fails") {
    auto path = temp_dir() + "/not-a-png.png";
    {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        REQUIRE(f != nullptr);
        std::fputs("plain text", f);
        std::fclose(f);
    }
    CHECK_THROWS(read_png_gray(path));
}

TEST_CASE("image tensor conversions preserve layout") {
    Image img(2, 3);
    img.pixels = {1, 2, 3, 4, 5, 6};
    Tensor t = image_to_tensor(img);
    REQUIRE(t.shape() == Shape{1, 2, 3});
    for (std::int64_t i = 0; i < 6; ++i) CHECK(t[i] == static_cast<double>(i + 1));

    Image back = tensor_to_image(t);
    CHECK(back.h == 2);
    CHECK(back.w == 3);
    CHECK(back.pixels == img.pixels);

    Image from_2d = tensor_to_image(Tensor(Shape{2, 3}, {1, 2, 3, 4, 5, 6}));
    CHECK(from_2d.pixels == img.pixels);
    Image from_4d = tensor_to_image(Tensor(Shape{1, 1, 2, 3}, {1, 2, 3, 4, 5, 6}));
    CHECK(from_4d.pixels == img.pixels);
}

TEST_CASE("box downsample averages each block") {
    Image img(4, 4);
    for (std::int64_t i = 0; i < 16; ++i) img.pixels[static_cast<std::size_t>(i)] = static_cast<double>(i);
    Image half = box_downsample(img, 2);
    REQUIRE(half.h == 2);
    REQUIRE(half.w == 2);
    CHECK(half.at(0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
    CHECK(half.at(0, 1) == doctest::Approx((2 + 3 + 6 + 7) / 4.0));
    CHECK(half.at(1, 0) == doctest::Approx((8 + 9 + 12 + 13) / 4.0));
    CHECK(half.at(1, 1) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
}

TEST_CASE("box downsample preserves constant images and rejects bad factors") {
    Image img(6, 6, 0.25);
    Image third = box_downsample(img, 3);
    REQUIRE(third.h == 2);
    for (double p : third.pixels) CHECK(p == doctest::Approx(0.25));
    CHECK_THROWS(box_downsample(img, 4));
}

TEST_CASE("resize to the same side copies the input") {
    Rng rng(5);
    Tensor t = testutil::random_tensor(Shape{8, 8}, rng);
    Tensor same = resize_pow2(t, 8);
    for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(same[i] == t[i]);
}

TEST_CASE("resize down equals box averaging") {
    Rng rng(6);
    Tensor t = testutil::random_tensor(Shape{16, 16}, rng);
    Tensor down = resize_pow2(t, 4);
    REQUIRE(down.shape() == Shape{4, 4});
    for (std::int64_t r = 0; r < 4; ++r) {
        for (std::int64_t c = 0; c < 4; ++c) {
            double sum = 0.0;
            for (std::int64_t dr = 0; dr < 4; ++dr)
                for (std::int64_t dc = 0; dc < 4; ++dc) sum += t[(4 * r + dr) * 16 + 4 * c + dc];
            CHECK(down[r * 4 + c] == doctest::Approx(sum / 16.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("resize up keeps a constant image constant") {
    Tensor t(Shape{4, 4});
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = 0.375;
    Tensor up = resize_pow2(t, 16);
    REQUIRE(up.shape() == Shape{16, 16});
    for (std::int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(0.375).epsilon(1e-12));
}

TEST_CASE("resize up stays inside the input value range") {
    Rng rng(7);
    Tensor t = testutil::random_tensor(Shape{4, 4}, rng);
    double lo = t[0], hi = t[0];
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        lo = std::min(lo, t[i]);
        hi = std::max(hi, t[i]);
    }
    Tensor up = resize_pow2(t, 16);
    REQUIRE(up.shape() == Shape{16, 16});
    for (std::int64_t i = 0; i < up.numel(); ++i) {
        CHECK(up[i] >= lo - 1e-12);
        CHECK(up[i] <= hi + 1e-12);
    }
}

TEST_CASE("resize rejects non-square and non-power-of-two inputs") {
    CHECK_THROWS(resize_pow2(Tensor(Shape{4, 8}), 8));
    CHECK_THROWS(resize_pow2(Tensor(Shape{6, 6}), 8));
    CHECK_THROWS(resize_pow2(Tensor(Shape{8, 8}), 6));
}
