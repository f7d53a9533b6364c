#include "tokenpose/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tokenpose/errors.hpp"

namespace tokenpose {

namespace {

int next_pnm_token(std::istream& in) {
  // skips whitespace and '#' comments, returns a nonnegative int
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    break;
  }
  int value = -1;
  in >> value;
  return value;
}

}  // namespace

void write_image(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw InvalidArgument("write_image supports 1 or 3 channels, got " +
                          std::to_string(img.channels));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(img.width * img.channels);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        float v = img.at(c, y, x);
        v = std::min(std::max(v, 0.0f), 1.0f);
        row[x * img.channels + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("short write to " + path);
}

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw IoError(path + ": unsupported format " + magic);
  std::size_t channels = magic == "P5" ? 1 : 3;
  int w = next_pnm_token(in);
  int h = next_pnm_token(in);
  int maxval = next_pnm_token(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw IoError(path + ": bad PNM header");
  in.get();  // single whitespace after maxval
  std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::size_t count = static_cast<std::size_t>(w) * h * channels;
  std::vector<unsigned char> buf(count * bytes_per);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw IoError(path + ": truncated pixel data");

  Image img;
  img.channels = channels;
  img.height = static_cast<std::size_t>(h);
  img.width = static_cast<std::size_t>(w);
  img.pixels.resize(count);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        std::size_t src = (y * img.width + x) * channels + c;
        unsigned value = bytes_per == 1
                             ? buf[src]
                             : (static_cast<unsigned>(buf[src * 2]) << 8) | buf[src * 2 + 1];
        img.pixels[(c * img.height + y) * img.width + x] =
            static_cast<float>(value) / static_cast<float>(maxval);
      }
  return img;
}

void write_pgm16(const std::string& path, const std::vector<double>& values, std::size_t height,
                 std::size_t width, const std::string& comment) {
  if (values.size() != height * width)
    throw InvalidArgument("write_pgm16: value count does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double range = hi > lo ? hi - lo : 1.0;
  out << "P5\n";
  if (!comment.empty()) out << "# " << comment << "\n";
  out << width << " " << height << "\n65535\n";
  for (double v : values) {
    unsigned s = static_cast<unsigned>(std::lround((v - lo) / range * 65535.0));
    unsigned char bytes[2] = {static_cast<unsigned char>(s >> 8),
                              static_cast<unsigned char>(s & 0xff)};
    out.write(reinterpret_cast<const char*>(bytes), 2);
  }
  if (!out) throw IoError("short write to " + path);
}

void write_raw_planes(const std::string& path, const std::vector<float>& values,
                      std::size_t height, std::size_t width, std::size_t count) {
  if (values.size() != height * width * count)
    throw InvalidArgument("write_raw_planes: value count does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << height << " " << width << " " << count << "\n";
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * 4));
  if (!out) throw IoError("short write to " + path);
}

std::vector<float> read_raw_planes(const std::string& path, std::size_t& height,
                                   std::size_t& width, std::size_t& count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  long h = -1, w = -1, n = -1;
  hs >> h >> w >> n;
  if (h <= 0 || w <= 0 || n <= 0) throw IoError(path + ": bad raw plane header \"" + header + "\"");
  height = static_cast<std::size_t>(h);
  width = static_cast<std::size_t>(w);
  count = static_cast<std::size_t>(n);
  std::vector<float> values(height * width * count);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * 4));
  if (!in) throw IoError(path + ": truncated raw plane data");
  return values;
}

}  // namespace tokenpose
