#include <gtest/gtest.h>

#include <filesystem>

#include "scenecaps/image_io.hpp"

using namespace scenecaps;

namespace {

PixelLayer gradient(int w, int h) {
  PixelLayer l(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) l.at(x, y) = to_byte((x + 3.0 * y) / (w + 3.0 * h)) / 255.0;
  return l;
}

}  // namespace

TEST(ImageIo, PngAndPgmRoundTripOnByteGrid) {
  const auto img = gradient(17, 9);
  EXPECT_EQ(decode_png(encode_png(img)), img);
  EXPECT_EQ(decode_pgm(encode_pgm(img)), img);
  EXPECT_EQ(decode_image(encode_png(img)), img);
  EXPECT_EQ(decode_image(encode_pgm(img)), img);
}

TEST(ImageIo, AsciiPgm) {
  const std::string text = "P2\n# comment\n2 2\n255\n0 255\n51 102\n";
  const auto img = decode_pgm(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  ASSERT_EQ(img.width(), 2);
  EXPECT_DOUBLE_EQ(img.at(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(img.at(0, 1), 0.2);
}

TEST(ImageIo, MalformedInputThrows) {
  auto png = encode_png(gradient(8, 8));
  png.resize(png.size() / 2);
  EXPECT_THROW(decode_image(png), DataError);
  const std::vector<std::uint8_t> junk{'h', 'e', 'l', 'l', 'o'};
  EXPECT_THROW(decode_image(junk), DataError);
  EXPECT_THROW(decode_image(std::vector<std::uint8_t>{}), DataError);
  EXPECT_THROW(read_image("/nonexistent/file.png"), DataError);
}

TEST(ImageIo, FileDispatchByExtension) {
  const auto dir = std::filesystem::temp_directory_path() / "scenecaps_image_io";
  std::filesystem::create_directories(dir);
  const auto img = gradient(5, 6);
  write_image(dir / "a.pgm", img);
  write_image(dir / "a.png", img);
  EXPECT_EQ(read_file_bytes(dir / "a.pgm")[0], 'P');
  EXPECT_EQ(read_file_bytes(dir / "a.png")[1], 'P');
  EXPECT_EQ(read_image(dir / "a.pgm"), img);
  EXPECT_EQ(read_image(dir / "a.png"), img);
  std::filesystem::remove_all(dir);
}
