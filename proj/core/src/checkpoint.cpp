// SPDX-License-Identifier: Apache-2.0
#include "tabloid/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tabloid/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload layout assumes a little-endian host");

namespace tabloid {

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'T', 'B', 'L', 'D', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <class T>
const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else return "f64";
}

json config_to_json(const ModelConfig& c) {
  json j;
  j["layers"] = c.layers;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["vocab_size"] = c.vocab_size;
  j["max_seq"] = c.max_seq;
  j["preset"] = c.preset;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.layers = j.at("layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq = j.at("max_seq").get<int>();
  c.preset = j.at("preset").get<std::string>();
  c.check();
  return c;
}

void append(std::string& buf, const void* data, size_t n) {
  buf.append(static_cast<const char*>(data), n);
}

}  // namespace

template <class T>
void save_checkpoint(TransformerLM<T>& model, int64_t step, const std::string& path) {
  auto params = model.params();

  json tensors = json::array();
  uint64_t offset = 0;
  for (auto& p : params) {
    json t;
    t["name"] = p.name;
    t["shape"] = p.tensor->shape;
    t["offset"] = offset;
    t["bytes"] = static_cast<uint64_t>(p.tensor->numel()) * sizeof(T);
    tensors.push_back(t);
    offset += static_cast<uint64_t>(p.tensor->numel()) * sizeof(T);
  }
  json header;
  header["dtype"] = dtype_name<T>();
  header["step"] = step;
  header["config"] = config_to_json(model.config());
  header["tensors"] = tensors;
  std::string header_str = header.dump();

  std::string buf;
  buf.reserve(24 + header_str.size() + offset);
  append(buf, kMagic, sizeof(kMagic));
  uint32_t version = kVersion, hlen = static_cast<uint32_t>(header_str.size());
  append(buf, &version, 4);
  append(buf, &hlen, 4);
  buf += header_str;
  for (auto& p : params) append(buf, p.tensor->v.data(), p.tensor->v.size() * sizeof(T));

  uint64_t checksum = fnv1a64(buf.data(), buf.size());
  append(buf, &checksum, 8);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed for checkpoint '" + path + "'");
}

namespace {

struct RawCheckpoint {
  json header;
  std::string body;  // full file contents
  size_t payload_start = 0;
};

RawCheckpoint read_raw(const std::string& path, bool verify_checksum) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (body.size() < 24 || std::memcmp(body.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("'" + path + "' is not a checkpoint file");
  uint32_t version = 0, hlen = 0;
  std::memcpy(&version, body.data() + 8, 4);
  std::memcpy(&hlen, body.data() + 12, 4);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  if (body.size() < 16 + static_cast<size_t>(hlen) + 8)
    throw std::runtime_error("checkpoint '" + path + "' is truncated");
  if (verify_checksum) {
    uint64_t stored = 0;
    std::memcpy(&stored, body.data() + body.size() - 8, 8);
    uint64_t actual = fnv1a64(body.data(), body.size() - 8);
    if (stored != actual)
      throw std::runtime_error("checkpoint '" + path + "' failed its integrity check");
  }
  RawCheckpoint raw;
  raw.header = json::parse(body.substr(16, hlen));
  raw.payload_start = 16 + hlen;
  raw.body = std::move(body);
  return raw;
}

}  // namespace

CheckpointInfo checkpoint_info(const std::string& path) {
  RawCheckpoint raw = read_raw(path, /*verify_checksum=*/false);
  CheckpointInfo info;
  info.dtype = raw.header.at("dtype").get<std::string>();
  info.step = raw.header.at("step").get<int64_t>();
  info.config = config_from_json(raw.header.at("config"));
  return info;
}

template <class T>
std::pair<TransformerLM<T>, int64_t> load_checkpoint(const std::string& path) {
  RawCheckpoint raw = read_raw(path, /*verify_checksum=*/true);
  std::string dtype = raw.header.at("dtype").get<std::string>();
  if (dtype != dtype_name<T>())
    throw std::runtime_error("checkpoint '" + path + "' holds " + dtype +
                             " tensors, not " + dtype_name<T>());
  ModelConfig cfg = config_from_json(raw.header.at("config"));
  TransformerLM<T> model(cfg);
  auto params = model.params();
  const json& tensors = raw.header.at("tensors");
  if (tensors.size() != params.size())
    throw std::runtime_error("checkpoint tensor table does not match this model");
  for (size_t i = 0; i < params.size(); ++i) {
    const json& t = tensors.at(i);
    if (t.at("name").get<std::string>() != params[i].name)
      throw std::runtime_error("checkpoint tensor '" + t.at("name").get<std::string>() +
                               "' does not match expected '" + params[i].name + "'");
    auto shape = t.at("shape").get<std::vector<int>>();
    if (shape != params[i].tensor->shape)
      throw std::runtime_error("checkpoint tensor '" + params[i].name + "' has a mismatched shape");
    uint64_t off = t.at("offset").get<uint64_t>();
    uint64_t bytes = t.at("bytes").get<uint64_t>();
    if (bytes != params[i].tensor->v.size() * sizeof(T) ||
        raw.payload_start + off + bytes + 8 > raw.body.size())
      throw std::runtime_error("checkpoint tensor '" + params[i].name + "' has bad extents");
    std::memcpy(params[i].tensor->v.data(), raw.body.data() + raw.payload_start + off, bytes);
  }
  return {std::move(model), raw.header.at("step").get<int64_t>()};
}

template <class T>
std::pair<TransformerLM<T>, int64_t> load_checkpoint(const std::string& path,
                                                     const ModelConfig& expect) {
  auto [model, step] = load_checkpoint<T>(path);
  if (!(model.config() == expect))
    throw std::runtime_error("checkpoint '" + path + "' config does not match the expected " +
                             expect.preset + " configuration");
  return {std::move(model), step};
}

template void save_checkpoint<float>(TransformerLM<float>&, int64_t, const std::string&);
template void save_checkpoint<double>(TransformerLM<double>&, int64_t, const std::string&);
template std::pair<TransformerLM<float>, int64_t> load_checkpoint<float>(const std::string&);
template std::pair<TransformerLM<double>, int64_t> load_checkpoint<double>(const std::string&);
template std::pair<TransformerLM<float>, int64_t> load_checkpoint<float>(const std::string&,
                                                                         const ModelConfig&);
template std::pair<TransformerLM<double>, int64_t> load_checkpoint<double>(const std::string&,
                                                                           const ModelConfig&);

}  // namespace tabloid
