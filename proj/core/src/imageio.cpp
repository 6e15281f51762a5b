// Copyright 2026 The GridDrive Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "griddrive/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "griddrive/common.hpp"
#include "griddrive/digest.hpp"

namespace griddrive {

void write_ppm(const std::string& path, const world::Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write ppm: " + path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  for (double v : image.px) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.put(static_cast<char>(std::lround(c * 255.0)));
  }
  if (!out) throw IoError("short write on ppm: " + path);
}

world::Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read ppm: " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255) throw IoError("unsupported ppm: " + path);
  in.get();  // single whitespace after the header
  if (w != 32 || h != 32) throw IoError("read_ppm: expected 32x32");
  world::Image img;
  std::vector<char> buf(static_cast<size_t>(w) * h * 3);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw IoError("truncated ppm: " + path);
  }
  for (size_t i = 0; i < buf.size(); ++i) {
    img.px[i] = static_cast<unsigned char>(buf[i]) / 255.0;
  }
  return img;
}

namespace {

void put_be32(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>((v >> 24) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>(v & 0xff));
}

void put_chunk(std::string& out, const char type[4], const std::string& payload) {
  put_be32(out, static_cast<uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  put_be32(out, crc32(body.data(), body.size()));
}

// zlib stream with stored (uncompressed) deflate blocks.
std::string zlib_stored(const std::string& raw) {
  std::string z;
  z.push_back(0x78);
  z.push_back(0x01);
  size_t off = 0;
  const size_t kMax = 65535;
  do {
    const size_t n = std::min(kMax, raw.size() - off);
    const bool last = off + n == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<char>(n & 0xff));
    z.push_back(static_cast<char>((n >> 8) & 0xff));
    z.push_back(static_cast<char>(~n & 0xff));
    z.push_back(static_cast<char>((~n >> 8) & 0xff));
    z.append(raw.data() + off, n);
    off += n;
  } while (off < raw.size());
  put_be32(z, adler32(raw.data(), raw.size()));
  return z;
}

}  // namespace

void write_png(const std::string& path, const Rgb8Image& image) {
  std::string raw;
  raw.reserve(static_cast<size_t>(image.height) * (image.width * 3 + 1));
  for (int r = 0; r < image.height; ++r) {
    raw.push_back(0);  // filter: none
    raw.append(reinterpret_cast<const char*>(image.px.data()) +
                   static_cast<size_t>(r) * image.width * 3,
               static_cast<size_t>(image.width) * 3);
  }
  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_be32(ihdr, static_cast<uint32_t>(image.width));
  put_be32(ihdr, static_cast<uint32_t>(image.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", zlib_stored(raw));
  put_chunk(out, "IEND", "");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write png: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write on png: " + path);
}

}  // namespace griddrive
