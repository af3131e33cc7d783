#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ras/model.hpp"

namespace ras {

struct Checkpoint {
  ModelParams params;
  Vocab vocab;
  int64_t step = 0;
  int64_t total_steps = 0;
  int epoch = 0;
};

// Archive layout: u64 little-endian header length, JSON header, then the raw
// payload. The header lists every tensor (name, shape, dtype, byte offset into
// the payload); values are little-endian IEEE-754 doubles in row-major order.

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const Vocab& vocab, int64_t step, int64_t total_steps, int epoch) {
  nlohmann::ordered_json header;
  header["format"] = "ras-checkpoint-v1";
  header["config"] = train_config_to_json(params.cfg);
  header["vocab"] = vocab.words;
  header["feat_dim"] = params.feat_dim;
  header["step"] = step;
  header["total_steps"] = total_steps;
  header["epoch"] = epoch;

  auto tensors = nlohmann::ordered_json::array();
  std::vector<double> payload;
  visit_params(const_cast<ModelParams&>(params), [&](const std::string& name, Mat& m) {
    nlohmann::ordered_json t;
    t["name"] = name;
    t["shape"] = {m.rows(), m.cols()};
    t["dtype"] = "f64";
    t["offset"] = payload.size() * sizeof(double);
    tensors.push_back(std::move(t));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) payload.push_back(m(r, c));
  });
  header["tensors"] = std::move(tensors);
  header["payload_bytes"] = payload.size() * sizeof(double);

  std::string head = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  uint64_t len = head.size();
  char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = char((len >> (8 * i)) & 0xFF);
  out.write(lenbuf, 8);
  out.write(head.data(), std::streamsize(head.size()));
  static_assert(sizeof(double) == 8);
  for (double v : payload) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = char((bits >> (8 * i)) & 0xFF);
    out.write(buf, 8);
  }
  if (!out) fail(ErrorCode::IoError, "short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 8) fail(ErrorCode::SchemaError, "checkpoint too short");
  uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= uint64_t(uint8_t(data[size_t(i)])) << (8 * i);
  if (8 + len > data.size()) fail(ErrorCode::SchemaError, "checkpoint header overruns file");

  nlohmann::json header = nlohmann::json::parse(data.substr(8, len), nullptr, false);
  if (header.is_discarded()) fail(ErrorCode::SchemaError, "invalid checkpoint header");
  if (header.value("format", "") != "ras-checkpoint-v1")
    fail(ErrorCode::SchemaError, "unknown checkpoint format");

  size_t payload_off = 8 + size_t(len);
  size_t payload_bytes = header.at("payload_bytes").get<size_t>();
  if (payload_off + payload_bytes != data.size())
    fail(ErrorCode::SchemaError, "checkpoint payload length mismatch");

  Checkpoint ck;
  TrainConfig cfg = train_config_from_json(header.at("config"));
  for (const auto& w : header.at("vocab")) {
    std::string word = w.get<std::string>();
    ck.vocab.index[word] = int(ck.vocab.words.size());
    ck.vocab.words.push_back(word);
  }
  ck.step = header.at("step").get<int64_t>();
  ck.total_steps = header.at("total_steps").get<int64_t>();
  ck.epoch = header.at("epoch").get<int>();
  int feat_dim = header.at("feat_dim").get<int>();
  ck.params = init_params(cfg, ck.vocab.size(), feat_dim, 0);

  std::map<std::string, Mat*> by_name;
  visit_params(ck.params, [&](const std::string& name, Mat& m) { by_name[name] = &m; });
  size_t seen = 0;
  for (const auto& t : header.at("tensors")) {
    std::string name = t.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) fail(ErrorCode::SchemaError, "unexpected tensor '" + name + "'");
    Mat& m = *it->second;
    auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
      fail(ErrorCode::SchemaError, "tensor '" + name + "' has unexpected shape");
    if (t.at("dtype").get<std::string>() != "f64")
      fail(ErrorCode::SchemaError, "tensor '" + name + "' has unsupported dtype");
    size_t off = t.at("offset").get<size_t>();
    size_t bytes = size_t(m.size()) * 8;
    if (off + bytes > payload_bytes)
      fail(ErrorCode::SchemaError, "tensor '" + name + "' overruns the payload");
    const char* src = data.data() + payload_off + off;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= uint64_t(uint8_t(*src++)) << (8 * i);
        double v;
        std::memcpy(&v, &bits, 8);
        m(r, c) = v;
      }
    ++seen;
  }
  if (seen != by_name.size()) fail(ErrorCode::SchemaError, "checkpoint is missing tensors");
  return ck;
}

}  // namespace ras
