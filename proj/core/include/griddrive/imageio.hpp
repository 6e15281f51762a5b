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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "griddrive/world.hpp"

namespace griddrive {

// Binary PPM (P6). Values are quantized to 8 bits on write.
void write_ppm(const std::string& path, const world::Image& image);
world::Image read_ppm(const std::string& path);

// Minimal RGB8 PNG writer (stored deflate blocks, no external deps).
struct Rgb8Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> px;  // 3 bytes per pixel, row-major

  Rgb8Image() = default;
  Rgb8Image(int w, int h) : width(w), height(h), px(static_cast<size_t>(w) * h * 3, 0) {}
  uint8_t* at(int row, int col) { return px.data() + (static_cast<size_t>(row) * width + col) * 3; }
};

void write_png(const std::string& path, const Rgb8Image& image);

}  // namespace griddrive
