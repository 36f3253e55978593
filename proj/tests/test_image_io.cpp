#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "cssr/image_io.hpp"
#include "cssr/rng.hpp"

namespace cssr {
namespace {

namespace fs = std::filesystem;

class ImageIo : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("cssr_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

Image integer_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h);
  for (double& v : img.pixels()) v = static_cast<double>(rng.below(256));
  return img;
}

TEST_F(ImageIo, Pgm8RoundTripIsBitExact) {
  const Image img = integer_image(13, 7, 1);
  write_pgm(dir_ / "a.pgm", img);
  EXPECT_EQ(read_pgm(dir_ / "a.pgm"), img);
}

TEST_F(ImageIo, Pgm16RoundTripOnItsGrid) {
  Rng rng(2);
  Image img(9, 4);
  for (double& v : img.pixels()) v = static_cast<double>(rng.below(65536)) / 257.0;
  write_pgm(dir_ / "b.pgm", img, 16);
  const Image back = read_pgm(dir_ / "b.pgm");
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.pixels()[i], img.pixels()[i], 1e-12);
}

TEST_F(ImageIo, PgmQuantizesAndClampsOnWrite) {
  const Image img(3, 1, std::vector<double>{-5.0, 100.4, 300.0});
  const Image back = decode_pgm(encode_pgm(img));
  EXPECT_EQ(back(0, 0), 0.0);
  EXPECT_EQ(back(0, 1), 100.0);
  EXPECT_EQ(back(0, 2), 255.0);
}

TEST_F(ImageIo, PgmHeaderWithComment) {
  const std::string data = std::string("P5\n# note\n2 1\n255\n") + char(7) + char(200);
  const Image img = decode_pgm(data);
  EXPECT_EQ(img.width(), 2);
  EXPECT_EQ(img(0, 1), 200.0);
}

TEST_F(ImageIo, MalformedPgmIsAFormatError) {
  EXPECT_THROW(decode_pgm("P2\n1 1\n255\n0"), FormatError);
  EXPECT_THROW(decode_pgm(std::string("P5\n4 4\n255\n") + "abc"), FormatError);
  EXPECT_THROW(decode_pgm("P5\nx 4\n255\n"), FormatError);
}

TEST_F(ImageIo, Png8RoundTripIsBitExact) {
  const Image img = integer_image(17, 11, 3);
  write_png(dir_ / "c.png", img);
  EXPECT_EQ(read_png(dir_ / "c.png"), img);
  EXPECT_FALSE(png_is_color(dir_ / "c.png"));
}

TEST_F(ImageIo, Png16RoundTripOnItsGrid) {
  Rng rng(4);
  Image img(5, 6);
  for (double& v : img.pixels()) v = static_cast<double>(rng.below(65536)) / 257.0;
  write_png(dir_ / "d.png", img, 16);
  const Image back = read_png(dir_ / "d.png");
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.pixels()[i], img.pixels()[i], 1e-12);
}

TEST_F(ImageIo, ColorPngRoundTrip) {
  const ColorImage rgb{integer_image(4, 4, 5), integer_image(4, 4, 6), integer_image(4, 4, 7)};
  write_png_color(dir_ / "e.png", rgb);
  EXPECT_TRUE(png_is_color(dir_ / "e.png"));
  const ColorImage back = read_png_color(dir_ / "e.png");
  EXPECT_EQ(back.r, rgb.r);
  EXPECT_EQ(back.g, rgb.g);
  EXPECT_EQ(back.b, rgb.b);
}

TEST_F(ImageIo, DispatchByExtension) {
  const Image img = integer_image(6, 6, 8);
  write_image(dir_ / "f.PGM", img);
  write_image(dir_ / "g.png", img);
  EXPECT_EQ(read_image(dir_ / "f.PGM"), img);
  EXPECT_EQ(read_image(dir_ / "g.png"), img);
}

TEST_F(ImageIo, GarbagePngIsAFormatError) {
  atomic_write(dir_ / "bad.png", "not a png");
  EXPECT_THROW(read_png(dir_ / "bad.png"), FormatError);
}

TEST_F(ImageIo, AtomicWriteLeavesNoTemporary) {
  atomic_write(dir_ / "x.bin", "hello");
  EXPECT_EQ(read_file_bytes(dir_ / "x.bin"), "hello");
  atomic_write(dir_ / "x.bin", "bye");
  EXPECT_EQ(read_file_bytes(dir_ / "x.bin"), "bye");
  EXPECT_FALSE(fs::exists(dir_ / "x.bin.tmp"));
}

TEST_F(ImageIo, MissingFileIsAnError) { EXPECT_THROW(read_file_bytes(dir_ / "absent"), Error); }

}  // namespace
}  // namespace cssr
