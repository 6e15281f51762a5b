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

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "griddrive/digest.hpp"
#include "griddrive/trainer.hpp"
#include "nlohmann/json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

using json = nlohmann::ordered_json;

namespace griddrive::train {

namespace {

constexpr char kMagic[8] = {'G', 'D', 'R', 'V', 'C', 'K', 'P', 'T'};
constexpr size_t kAlign = 64;

size_t align_up(size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

template <typename S>
const char* dtype_name() {
  return sizeof(S) == 4 ? "f32" : "f64";
}

template <typename S>
struct ArrayRef {
  std::string name;
  const Matrix<S>* mat;
};

template <typename S>
std::vector<ArrayRef<S>> collect_arrays(const TrainerState<S>& state) {
  std::vector<ArrayRef<S>> arrays;
  state.weights.for_each_param([&](const std::string& n, const Matrix<S>& m, bool) {
    arrays.push_back({"model/" + n, &m});
  });
  state.ema.for_each_param([&](const std::string& n, const Matrix<S>& m, bool) {
    arrays.push_back({"ema/" + n, &m});
  });
  size_t i = 0;
  state.weights.for_each_param([&](const std::string& n, const Matrix<S>&, bool) {
    arrays.push_back({"opt_m/" + n, &state.opt.m[i]});
    arrays.push_back({"opt_v/" + n, &state.opt.v[i]});
    ++i;
  });
  return arrays;
}

}  // namespace

template <typename S>
void save_checkpoint(const std::string& path, const TrainerState<S>& state) {
  const auto arrays = collect_arrays(state);

  json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["precision"] = dtype_name<S>();
  manifest["step"] = state.step;
  manifest["config"] = config_entries(state.config);
  manifest["vocab_words"] = state.vocab.payload_words();
  manifest["action_stats"] = {{"mean", state.stats.mean}, {"stdev", state.stats.stdev}};

  json jarrays = json::array();
  size_t offset = 0;  // relative to the payload section
  for (const auto& a : arrays) {
    const size_t bytes = a.mat->size() * sizeof(S);
    jarrays.push_back({{"name", a.name},
                       {"rows", a.mat->rows},
                       {"cols", a.mat->cols},
                       {"dtype", dtype_name<S>()},
                       {"offset", offset},
                       {"bytes", bytes},
                       {"crc32", crc32(a.mat->v.data(), bytes)}});
    offset = align_up(offset + bytes);
  }
  manifest["arrays"] = jarrays;

  const std::string mtext = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  const uint32_t version = kCheckpointFormatVersion;
  const uint32_t mlen = static_cast<uint32_t>(mtext.size());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&mlen), 4);
  out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  const size_t header_len = sizeof(kMagic) + 8 + mtext.size();
  const size_t payload_base = align_up(header_len);
  for (size_t i = header_len; i < payload_base; ++i) out.put(0);
  size_t cursor = 0;
  for (const auto& a : arrays) {
    const size_t bytes = a.mat->size() * sizeof(S);
    out.write(reinterpret_cast<const char*>(a.mat->v.data()),
              static_cast<std::streamsize>(bytes));
    cursor += bytes;
    const size_t padded = align_up(cursor);
    for (; cursor < padded; ++cursor) out.put(0);
  }
  if (!out) throw IoError("short write on checkpoint: " + path);
}

namespace {

json read_manifest(std::ifstream& in, const std::string& path, size_t* payload_base) {
  char magic[8];
  uint32_t version = 0, mlen = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&mlen), 4);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("not a checkpoint file: " + path);
  }
  if (version != static_cast<uint32_t>(kCheckpointFormatVersion)) {
    throw IoError("unsupported checkpoint version in " + path);
  }
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), mlen);
  if (!in) throw IoError("truncated checkpoint manifest: " + path);
  *payload_base = align_up(sizeof(kMagic) + 8 + static_cast<size_t>(mlen));
  try {
    return json::parse(mtext);
  } catch (const std::exception& e) {
    throw IoError(std::string("bad checkpoint manifest: ") + e.what());
  }
}

}  // namespace

Precision checkpoint_precision(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  size_t payload_base = 0;
  const json manifest = read_manifest(in, path, &payload_base);
  const std::string p = manifest.at("precision").get<std::string>();
  if (p == "f32") return Precision::F32;
  if (p == "f64") return Precision::F64;
  throw IoError("unknown checkpoint precision: " + p);
}

template <typename S>
TrainerState<S> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  size_t payload_base = 0;
  const json manifest = read_manifest(in, path, &payload_base);

  if (manifest.at("precision").get<std::string>() != dtype_name<S>()) {
    throw IoError("checkpoint precision mismatch: expected " + std::string(dtype_name<S>()));
  }

  TrainConfig config;
  for (const auto& [k, v] : manifest.at("config").items()) {
    apply_config_entry(config, k, v.template get<std::string>());
  }

  TrainerState<S> state;
  state.config = config;
  state.vocab = codec::Vocabulary::from_words(
      manifest.at("vocab_words").get<std::vector<std::string>>());
  const auto& jstats = manifest.at("action_stats");
  for (int d = 0; d < codec::kActionDim; ++d) {
    state.stats.mean[d] = jstats.at("mean")[d].get<double>();
    state.stats.stdev[d] = jstats.at("stdev")[d].get<double>();
  }
  state.step = manifest.at("step").get<int64_t>();

  const model::MoTConfig mc = config.mot_config(state.vocab.size());
  state.weights.allocate(mc);
  state.ema.allocate(mc);
  state.opt.allocate(state.weights);
  state.grads.allocate(mc);
  state.sample_grads.resize(config.batch_size);
  for (auto& g : state.sample_grads) g.allocate(mc);

  std::map<std::string, Matrix<S>*> by_name;
  state.weights.for_each_param(
      [&](const std::string& n, Matrix<S>& m, bool) { by_name["model/" + n] = &m; });
  state.ema.for_each_param(
      [&](const std::string& n, Matrix<S>& m, bool) { by_name["ema/" + n] = &m; });
  size_t i = 0;
  state.weights.for_each_param([&](const std::string& n, Matrix<S>&, bool) {
    by_name["opt_m/" + n] = &state.opt.m[i];
    by_name["opt_v/" + n] = &state.opt.v[i];
    ++i;
  });

  size_t seen = 0;
  for (const auto& ja : manifest.at("arrays")) {
    const std::string name = ja.at("name").get<std::string>();
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint: unexpected array " + name);
    Matrix<S>& m = *it->second;
    if (ja.at("rows").get<int>() != m.rows || ja.at("cols").get<int>() != m.cols) {
      throw IoError("checkpoint: shape mismatch on " + name);
    }
    const size_t bytes = ja.at("bytes").get<size_t>();
    if (bytes != m.size() * sizeof(S)) throw IoError("checkpoint: byte count mismatch on " + name);
    in.clear();
    in.seekg(static_cast<std::streamoff>(payload_base + ja.at("offset").get<size_t>()));
    in.read(reinterpret_cast<char*>(m.v.data()), static_cast<std::streamsize>(bytes));
    if (in.gcount() != static_cast<std::streamsize>(bytes)) {
      throw IoError("checkpoint: truncated array " + name);
    }
    if (crc32(m.v.data(), bytes) != ja.at("crc32").get<uint32_t>()) {
      throw IoError("checkpoint: checksum failure on " + name);
    }
    ++seen;
  }
  if (seen != by_name.size()) throw IoError("checkpoint: missing arrays");
  return state;
}

template void save_checkpoint(const std::string&, const TrainerState<float>&);
template void save_checkpoint(const std::string&, const TrainerState<double>&);
template TrainerState<float> load_checkpoint(const std::string&);
template TrainerState<double> load_checkpoint(const std::string&);

}  // namespace griddrive::train
