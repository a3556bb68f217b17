#pragma once

// Binary PGM (P5, 8- or 16-bit) and PPM (P6, 8-bit) images. 16-bit samples are
// big-endian as the format requires.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clothdiff/core/error.hpp"

namespace clothdiff::io {

struct PnmImage {
  int rows = 0;
  int cols = 0;
  int channels = 1;  // 1 for PGM, 3 for PPM
  int maxval = 255;
  std::vector<std::uint16_t> samples;  // rows * cols * channels, row-major, interleaved
};

inline void write_pnm(const std::string& path, const PnmImage& img) {
  require(img.channels == 1 || img.channels == 3, ErrorKind::kInvalidArgument, "PNM images have 1 or 3 channels");
  require(img.maxval >= 1 && img.maxval <= 65535, ErrorKind::kInvalidArgument, "PNM maxval must lie in [1, 65535]");
  require(img.samples.size() == static_cast<std::size_t>(img.rows) * img.cols * img.channels, ErrorKind::kShape,
          "PNM sample count does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot open for writing: " + path);
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.cols << ' ' << img.rows << '\n' << img.maxval << '\n';
  const bool wide = img.maxval > 255;
  std::string bytes;
  bytes.reserve(img.samples.size() * (wide ? 2 : 1));
  for (std::uint16_t v : img.samples) {
    require(v <= img.maxval, ErrorKind::kInvalidArgument, "PNM sample exceeds maxval");
    if (wide) bytes.push_back(static_cast<char>(v >> 8));
    bytes.push_back(static_cast<char>(v & 0xff));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed: " + path);
}

namespace detail {

inline int read_header_int(std::istream& in, const std::string& path) {
  int c = in.peek();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#')
      while (c != EOF && c != '\n') c = in.get();
    else
      in.get();
    c = in.peek();
  }
  int v = -1;
  in >> v;
  require(static_cast<bool>(in) && v >= 0, ErrorKind::kFormat, "malformed PNM header: " + path);
  return v;
}

}  // namespace detail

inline PnmImage read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open for reading: " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  require(in && magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6'), ErrorKind::kFormat,
          "not a binary PGM/PPM file: " + path);
  PnmImage img;
  img.channels = magic[1] == '5' ? 1 : 3;
  img.cols = detail::read_header_int(in, path);
  img.rows = detail::read_header_int(in, path);
  img.maxval = detail::read_header_int(in, path);
  require(img.maxval >= 1 && img.maxval <= 65535 && img.rows > 0 && img.cols > 0, ErrorKind::kFormat,
          "invalid PNM dimensions or maxval: " + path);
  require(std::isspace(in.get()), ErrorKind::kFormat, "malformed PNM header: " + path);
  const bool wide = img.maxval > 255;
  const std::size_t n = static_cast<std::size_t>(img.rows) * img.cols * img.channels;
  std::string bytes(n * (wide ? 2 : 1), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<std::size_t>(in.gcount()) == bytes.size(), ErrorKind::kFormat, "truncated PNM data: " + path);
  img.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto hi = static_cast<unsigned char>(bytes[wide ? 2 * i : i]);
    img.samples[i] = wide ? static_cast<std::uint16_t>(hi << 8 | static_cast<unsigned char>(bytes[2 * i + 1])) : hi;
    require(img.samples[i] <= img.maxval, ErrorKind::kFormat, "PNM sample exceeds maxval: " + path);
  }
  return img;
}

}  // namespace clothdiff::io
