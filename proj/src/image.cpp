// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#include "qfpred/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace qfpred {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

// --------------------------------------------------------------------------
// PNM (P2/P3 plain, P5/P6 raw)
// --------------------------------------------------------------------------

struct PnmHeader {
  int magic = 0;  // 2, 3, 5, 6
  int width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

int next_pnm_int(const std::vector<std::uint8_t>& b, std::size_t& pos, const std::string& path) {
  // skip whitespace and '#' comments
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= b.size() || !std::isdigit(b[pos])) {
    throw FormatError("PNM header truncated or malformed: " + path);
  }
  int v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos] - '0');
    ++pos;
  }
  return v;
}

ImageBuffer decode_pnm(const std::vector<std::uint8_t>& b, const std::string& path) {
  if (b.size() < 2 || b[0] != 'P') throw FormatError("not a PNM file: " + path);
  const int magic = b[1] - '0';
  if (magic != 2 && magic != 3 && magic != 5 && magic != 6) {
    throw FormatError("unsupported PNM variant P" + std::string(1, static_cast<char>(b[1])) +
                      ": " + path);
  }
  std::size_t pos = 2;
  const int width = next_pnm_int(b, pos, path);
  const int height = next_pnm_int(b, pos, path);
  const int maxval = next_pnm_int(b, pos, path);
  if (width <= 0 || height <= 0) throw FormatError("bad PNM dimensions: " + path);
  if (maxval > 255) throw FormatError("16-bit PNM not supported: " + path);
  if (maxval <= 0) throw FormatError("bad PNM maxval: " + path);

  const int channels = (magic == 3 || magic == 6) ? 3 : 1;
  ImageBuffer img = ImageBuffer::make(width, height, channels);
  const std::size_t count = img.pixels.size();

  if (magic == 5 || magic == 6) {
    ++pos;  // single whitespace byte after maxval
    if (b.size() < pos + count) throw FormatError("PNM pixel data truncated: " + path);
    std::memcpy(img.pixels.data(), b.data() + pos, count);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const int v = next_pnm_int(b, pos, path);
      if (v > maxval) throw FormatError("PNM sample exceeds maxval: " + path);
      img.pixels[i] = static_cast<std::uint8_t>(v);
    }
  }
  if (maxval != 255) {
    for (auto& p : img.pixels) {
      p = static_cast<std::uint8_t>(std::lround(p * 255.0 / maxval));
    }
  }
  return img;
}

// --------------------------------------------------------------------------
// PNG. Chunk layer and scanline filters implemented here; DEFLATE streams go
// through zlib.
// --------------------------------------------------------------------------

constexpr std::uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> zlib_inflate(const std::vector<std::uint8_t>& in,
                                       std::size_t expected, const std::string& path) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw Error("zlib inflateInit failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != expected) {
    throw FormatError("PNG IDAT stream corrupt or truncated: " + path);
  }
  return out;
}

std::vector<std::uint8_t> zlib_deflate(const std::vector<std::uint8_t>& in) {
  uLongf bound = compressBound(static_cast<uLong>(in.size()));
  std::vector<std::uint8_t> out(bound);
  if (compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), 6) != Z_OK) {
    throw Error("zlib compress failed");
  }
  out.resize(bound);
  return out;
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

ImageBuffer decode_png(const std::vector<std::uint8_t>& b, const std::string& path) {
  if (b.size() < 8 + 25 || std::memcmp(b.data(), kPngSig, 8) != 0) {
    throw FormatError("not a PNG file: " + path);
  }
  std::size_t pos = 8;
  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  bool have_ihdr = false, have_iend = false;
  std::vector<std::uint8_t> idat;

  while (pos + 12 <= b.size()) {
    const std::uint32_t len = be32(&b[pos]);
    if (pos + 12 + len > b.size()) throw FormatError("PNG chunk truncated: " + path);
    const char* type = reinterpret_cast<const char*>(&b[pos + 4]);
    const std::uint8_t* data = &b[pos + 8];
    const std::uint32_t crc_stored = be32(&b[pos + 8 + len]);
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, &b[pos + 4], len + 4);
    if (crc != crc_stored) throw FormatError("PNG chunk CRC mismatch: " + path);

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw FormatError("bad IHDR length: " + path);
      width = static_cast<int>(be32(data));
      height = static_cast<int>(be32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (data[12] != 0) throw FormatError("interlaced PNG not supported: " + path);
      if (bit_depth == 16) throw FormatError("16-bit PNG not supported: " + path);
      if (bit_depth != 8 || (color_type != 0 && color_type != 2)) {
        throw FormatError("only 8-bit gray or RGB PNG supported (color type " +
                          std::to_string(color_type) + ", depth " + std::to_string(bit_depth) +
                          "): " + path);
      }
      have_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      have_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!have_ihdr || !have_iend || idat.empty()) {
    throw FormatError("PNG missing required chunks (truncated?): " + path);
  }
  if (width <= 0 || height <= 0) throw FormatError("bad PNG dimensions: " + path);

  const int channels = color_type == 2 ? 3 : 1;
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  const std::size_t raw_size = (stride + 1) * height;
  std::vector<std::uint8_t> raw = zlib_inflate(idat, raw_size, path);

  ImageBuffer img = ImageBuffer::make(width, height, channels);
  std::vector<std::uint8_t> prev(stride, 0);
  for (int y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[(stride + 1) * y];
    const std::uint8_t* src = &raw[(stride + 1) * y + 1];
    std::uint8_t* dst = &img.pixels[stride * y];
    for (std::size_t x = 0; x < stride; ++x) {
      const int a = x >= static_cast<std::size_t>(channels) ? dst[x - channels] : 0;
      const int up = prev[x];
      const int c = x >= static_cast<std::size_t>(channels) ? prev[x - channels] : 0;
      int v;
      switch (filter) {
        case 0: v = src[x]; break;
        case 1: v = src[x] + a; break;
        case 2: v = src[x] + up; break;
        case 3: v = src[x] + (a + up) / 2; break;
        case 4: v = src[x] + paeth(a, up, c); break;
        default: throw FormatError("unknown PNG filter type: " + path);
      }
      dst[x] = static_cast<std::uint8_t>(v & 0xFF);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return img;
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  std::uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + start, static_cast<uInt>(4 + data.size()));
  put_be32(out, crc);
}

}  // namespace

ImageBuffer ImageBuffer::make(int width, int height, int channels, std::uint8_t fill) {
  if (width < 0 || height < 0 || (channels != 1 && channels != 3)) {
    throw DimensionError("ImageBuffer: bad geometry " + std::to_string(width) + "x" +
                         std::to_string(height) + "x" + std::to_string(channels));
  }
  ImageBuffer img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(static_cast<std::size_t>(width) * height * channels, fill);
  return img;
}

ImageBuffer to_gray(const ImageBuffer& img) {
  if (img.channels == 1) return img;
  ImageBuffer out = ImageBuffer::make(img.width, img.height, 1);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double y = 0.299 * img.pixels[3 * i] + 0.587 * img.pixels[3 * i + 1] +
                     0.114 * img.pixels[3 * i + 2];
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(y), 0, 255));
  }
  return out;
}

ImageBuffer to_rgb(const ImageBuffer& img) {
  if (img.channels == 3) return img;
  ImageBuffer out = ImageBuffer::make(img.width, img.height, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = img.pixels[i];
  }
  return out;
}

ImageBuffer crop(const ImageBuffer& img, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > img.width || y0 + h > img.height) {
    throw DimensionError("crop window (" + std::to_string(x0) + "," + std::to_string(y0) + "," +
                         std::to_string(w) + "," + std::to_string(h) + ") outside image " +
                         std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  ImageBuffer out = ImageBuffer::make(w, h, img.channels);
  const std::size_t row_bytes = static_cast<std::size_t>(w) * img.channels;
  for (int y = 0; y < h; ++y) {
    std::memcpy(&out.pixels[row_bytes * y],
                &img.pixels[(static_cast<std::size_t>(y0 + y) * img.width + x0) * img.channels],
                row_bytes);
  }
  return out;
}

ImageBuffer load_image(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) {
    return decode_png(bytes, path);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P') {
    return decode_pnm(bytes, path);
  }
  throw FormatError("unrecognized image format: " + path);
}

void save_png(const ImageBuffer& img, const std::string& path) {
  const int channels = img.channels;
  const std::size_t stride = static_cast<std::size_t>(img.width) * channels;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.pixels.begin() + stride * y, img.pixels.begin() + stride * (y + 1));
  }

  std::vector<std::uint8_t> out(kPngSig, kPngSig + 8);
  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                              // bit depth
  ihdr.push_back(channels == 3 ? 2 : 0);          // color type
  ihdr.push_back(0);                              // compression
  ihdr.push_back(0);                              // filter method
  ihdr.push_back(0);                              // no interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", zlib_deflate(raw));
  append_chunk(out, "IEND", {});
  write_file(path, out);
}

void save_pnm(const ImageBuffer& img, const std::string& path) {
  std::ostringstream header;
  header << (img.channels == 3 ? "P6" : "P5") << "\n"
         << img.width << " " << img.height << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  write_file(path, out);
}

void save_image(const ImageBuffer& img, const std::string& path) {
  const auto dot = path.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".png") {
    save_png(img, path);
  } else if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
    save_pnm(img, path);
  } else {
    throw FormatError("unsupported output extension '" + ext + "' for " + path);
  }
}

}  // namespace qfpred
