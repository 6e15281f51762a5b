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

#include <cstddef>
#include <cstdint>
#include <string>

namespace griddrive {

// CRC-32 (IEEE 802.3), used for checkpoint array integrity and PNG chunks.
uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);

// Adler-32, used for the zlib stream inside PNG files.
uint32_t adler32(const void* data, size_t len);

// SHA-1 hex digest, used for content hashes in run manifests.
std::string sha1_hex(const void* data, size_t len);
std::string sha1_file_hex(const std::string& path);

}  // namespace griddrive
