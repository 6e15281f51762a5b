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

#include "griddrive/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace griddrive::world {

namespace {

void put_u32(std::string& buf, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  buf.append(b, 4);
}

void put_u64(std::string& buf, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  buf.append(b, 8);
}

void put_f64(std::string& buf, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(buf, bits);
}

struct Reader {
  const char* p;
  const char* end;
  uint32_t u32() {
    check(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(static_cast<unsigned char>(p[i])) << (8 * i);
    p += 4;
    return v;
  }
  uint64_t u64() {
    check(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(static_cast<unsigned char>(p[i])) << (8 * i);
    p += 8;
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  uint8_t u8() {
    check(1);
    return static_cast<uint8_t>(*p++);
  }
  void bytes(void* dst, size_t n) {
    check(n);
    std::memcpy(dst, p, n);
    p += n;
  }
  void check(size_t n) {
    if (static_cast<size_t>(end - p) < n) throw IoError("dataset shard truncated");
  }
};

void encode_episode(std::string& buf, const Episode& ep) {
  put_u64(buf, ep.seed);
  buf.push_back(static_cast<char>(ep.instruction_class));
  put_u32(buf, static_cast<uint32_t>(ep.instruction_text.size()));
  buf.append(ep.instruction_text);
  for (const EgoState& p : ep.poses) {
    put_f64(buf, p.x);
    put_f64(buf, p.y);
    put_f64(buf, p.theta);
    put_f64(buf, p.v);
  }
  for (const Action& a : ep.actions) {
    put_f64(buf, a.dx);
    put_f64(buf, a.dy);
    put_f64(buf, a.dtheta);
  }
  for (const Raster& f : ep.frames) {
    buf.append(reinterpret_cast<const char*>(f.cells.data()), f.cells.size());
  }
}

Episode decode_episode(Reader& r) {
  Episode ep;
  ep.seed = r.u64();
  const uint8_t cls = r.u8();
  if (cls >= kNumClasses) throw IoError("dataset: bad class byte");
  ep.instruction_class = static_cast<InstructionClass>(cls);
  const uint32_t text_len = r.u32();
  ep.instruction_text.resize(text_len);
  if (text_len > 0) r.bytes(ep.instruction_text.data(), text_len);
  ep.poses.resize(kHorizon + 1);
  for (EgoState& p : ep.poses) {
    p.x = r.f64();
    p.y = r.f64();
    p.theta = r.f64();
    p.v = r.f64();
  }
  ep.actions.resize(kHorizon);
  for (Action& a : ep.actions) {
    a.dx = r.f64();
    a.dy = r.f64();
    a.dtheta = r.f64();
  }
  ep.frames.resize(kHorizon + 1);
  for (Raster& f : ep.frames) r.bytes(f.cells.data(), f.cells.size());
  ep.map = make_map(ep.seed, ep.instruction_class);
  return ep;
}

}  // namespace

std::map<std::string, double> uniform_class_mix() {
  std::map<std::string, double> mix;
  for (int i = 0; i < kNumClasses; ++i) {
    mix[class_name(static_cast<InstructionClass>(i))] = 1.0 / kNumClasses;
  }
  return mix;
}

Dataset generate_dataset(int n_episodes, uint64_t seed,
                         const std::map<std::string, double>& class_mix, int jobs) {
  if (n_episodes < 1) throw InvalidInputError("generate_dataset: n_episodes must be >= 1");
  double total = 0.0;
  for (const auto& [name, frac] : class_mix) {
    class_from_name(name);
    if (frac < 0.0) throw InvalidInputError("generate_dataset: negative class fraction");
    total += frac;
  }
  if (total <= 0.0) throw InvalidInputError("generate_dataset: class mix sums to zero");

  // Largest-remainder allocation, then a seeded shuffle.
  std::vector<InstructionClass> order;
  order.reserve(n_episodes);
  {
    std::vector<std::pair<double, InstructionClass>> rem;
    int assigned = 0;
    for (const auto& [name, frac] : class_mix) {
      const double want = frac / total * n_episodes;
      const int base = static_cast<int>(want);
      const InstructionClass c = class_from_name(name);
      for (int i = 0; i < base; ++i) order.push_back(c);
      assigned += base;
      rem.emplace_back(want - base, c);
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (int i = 0; assigned < n_episodes; ++i, ++assigned) {
      order.push_back(rem[i % rem.size()].second);
    }
    Rng shuffle_rng = Rng(seed).child("class-order");
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    }
  }

  Dataset ds;
  ds.meta.seed = seed;
  ds.meta.episode_count = n_episodes;
  ds.meta.class_mix = class_mix;
  ds.episodes.resize(n_episodes);
  parallel_for(n_episodes, jobs, [&](int i) {
    const uint64_t ep_seed = Rng(seed).child("dataset", i).next_u64();
    ds.episodes[i] = generate_episode(ep_seed, order[i]);
  });
  return ds;
}

void write_dataset(const std::string& dir, const Dataset& ds, int episodes_per_shard) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory: " + dir);

  json manifest;
  manifest["format_version"] = ds.meta.format_version;
  manifest["seed"] = ds.meta.seed;
  manifest["episode_count"] = static_cast<int>(ds.episodes.size());
  manifest["rate_hz"] = ds.meta.rate_hz;
  manifest["horizon"] = ds.meta.horizon;
  manifest["ego_frame"] = ds.meta.ego_frame;
  manifest["thresholds"] = {{"turn_rad", ds.meta.thresholds.turn_rad},
                            {"speedup_mps", ds.meta.thresholds.speedup_mps},
                            {"slowdown_mps", ds.meta.thresholds.slowdown_mps},
                            {"stop_mps", ds.meta.thresholds.stop_mps}};
  manifest["class_mix"] = ds.meta.class_mix;

  json shards = json::array();
  const int n = static_cast<int>(ds.episodes.size());
  int shard_idx = 0;
  for (int begin = 0; begin < n; begin += episodes_per_shard, ++shard_idx) {
    const int count = std::min(episodes_per_shard, n - begin);
    char name[32];
    std::snprintf(name, sizeof(name), "episodes_%04d.bin", shard_idx);
    std::string buf;
    for (int i = begin; i < begin + count; ++i) encode_episode(buf, ds.episodes[i]);
    std::ofstream out(fs::path(dir) / name, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(std::string("cannot write shard: ") + name);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError(std::string("short write on shard: ") + name);
    shards.push_back({{"file", name}, {"count", count}});
  }
  manifest["shards"] = shards;

  std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!mf) throw IoError("cannot write dataset manifest");
  mf << manifest.dump(2) << "\n";
}

Dataset read_dataset(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!mf) throw IoError("cannot open dataset manifest in " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const std::exception& e) {
    throw IoError(std::string("bad dataset manifest: ") + e.what());
  }
  Dataset ds;
  ds.meta.format_version = manifest.at("format_version").get<int>();
  if (ds.meta.format_version != kDatasetFormatVersion) {
    throw IoError("unsupported dataset format version");
  }
  ds.meta.seed = manifest.at("seed").get<uint64_t>();
  ds.meta.episode_count = manifest.at("episode_count").get<int>();
  ds.meta.rate_hz = manifest.at("rate_hz").get<double>();
  ds.meta.horizon = manifest.at("horizon").get<int>();
  ds.meta.ego_frame = manifest.at("ego_frame").get<std::string>();
  const auto& th = manifest.at("thresholds");
  ds.meta.thresholds.turn_rad = th.at("turn_rad").get<double>();
  ds.meta.thresholds.speedup_mps = th.at("speedup_mps").get<double>();
  ds.meta.thresholds.slowdown_mps = th.at("slowdown_mps").get<double>();
  ds.meta.thresholds.stop_mps = th.at("stop_mps").get<double>();
  for (const auto& [k, v] : manifest.at("class_mix").items()) {
    ds.meta.class_mix[k] = v.get<double>();
  }
  for (const auto& shard : manifest.at("shards")) {
    const std::string file = shard.at("file").get<std::string>();
    std::ifstream in(fs::path(dir) / file, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open shard: " + file);
    std::string buf(static_cast<size_t>(in.tellg()), '\0');
    in.seekg(0);
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!in) throw IoError("short read on shard: " + file);
    Reader r{buf.data(), buf.data() + buf.size()};
    const int count = shard.at("count").get<int>();
    for (int i = 0; i < count; ++i) ds.episodes.push_back(decode_episode(r));
    if (r.p != r.end) throw IoError("trailing bytes in shard: " + file);
  }
  if (static_cast<int>(ds.episodes.size()) != ds.meta.episode_count) {
    throw IoError("dataset episode count mismatch");
  }
  return ds;
}

}  // namespace griddrive::world
