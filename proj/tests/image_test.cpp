#include "biaslab/image.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace biaslab {
namespace {

TEST(Png, EncodeDecodeRoundTrip) {
  Rng rng(7);
  for (int iter = 0; iter < 20; ++iter) {
    const int w = static_cast<int>(rng.between(1, 70));
    const int h = static_cast<int>(rng.between(1, 70));
    Image img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng.below(256));

    const Image back = decode_png(encode_png(img));
    ASSERT_EQ(back.width, w);
    ASSERT_EQ(back.height, h);
    EXPECT_EQ(back.rgb, img.rgb);
  }
}

TEST(Png, DeterministicBytes) {
  Image img = Image::filled(16, 16, 10, 200, 30);
  EXPECT_EQ(encode_png(img), encode_png(img));
}

TEST(Png, RejectsGarbage) {
  EXPECT_THROW(decode_png("not a png at all"), ParseError);
}

TEST(Png, FileRoundTrip) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "biaslab_png_test";
  fs::create_directories(dir);
  Image img = Image::filled(32, 32, 1, 2, 3);
  img.pixel(5, 9)[0] = 250;
  write_png(img, dir / "x.png");
  const Image back = read_png(dir / "x.png");
  EXPECT_EQ(back.rgb, img.rgb);
  EXPECT_EQ(content_hash(back), content_hash(img));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace biaslab
