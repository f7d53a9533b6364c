#ifndef TOKENPOSE_IMAGE_IO_HPP
#define TOKENPOSE_IMAGE_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace tokenpose {

// Planar [c,h,w] pixels in [0,1]; c is 1 (PGM) or 3 (PPM).
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
};

// Binary PPM (P6) for RGB, PGM (P5) for grayscale, 8-bit.
void write_image(const std::string& path, const Image& img);
Image read_image(const std::string& path);

// 16-bit big-endian PGM, values min-max normalized; `comment` goes into the
// header as a '#' line.
void write_pgm16(const std::string& path, const std::vector<double>& values, std::size_t height,
                 std::size_t width, const std::string& comment = "");

// N float32 little-endian planes behind a one-line text header "H W N".
void write_raw_planes(const std::string& path, const std::vector<float>& values,
                      std::size_t height, std::size_t width, std::size_t count);
std::vector<float> read_raw_planes(const std::string& path, std::size_t& height,
                                   std::size_t& width, std::size_t& count);

}  // namespace tokenpose

#endif
