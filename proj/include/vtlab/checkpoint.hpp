#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtlab/errors.hpp"
#include "vtlab/vlm.hpp"

namespace vtlab {

// Checkpoint layout: 8-byte magic, u32 version, u32 header length, JSON
// header (dims, vocab, eos id, charset, parameter directory), then the raw
// little-endian float64 parameter data in directory order. Loading restores
// parameters bit-exactly.
inline constexpr char kCheckpointMagic[8] = {'T', 'V', 'L', 'M', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

inline nlohmann::json vlm_config_to_json(const VlmConfig& c) {
  return nlohmann::json{{"image_h", c.image_h},
                        {"image_w", c.image_w},
                        {"image_c", c.image_c},
                        {"embed_dim", c.embed_dim},
                        {"vocab", c.vocab},
                        {"visual_tokens", c.visual_tokens},
                        {"max_tokens", c.max_tokens},
                        {"conv1_channels", c.conv1_channels},
                        {"conv2_channels", c.conv2_channels},
                        {"conv1_kernel", c.conv1_kernel},
                        {"conv2_kernel", c.conv2_kernel},
                        {"layers", c.layers},
                        {"ff_dim", c.ff_dim},
                        {"max_seq", c.max_seq},
                        {"ln_eps", c.ln_eps}};
}

inline VlmConfig vlm_config_from_json(const nlohmann::json& j) {
  VlmConfig c;
  c.image_h = j.at("image_h");
  c.image_w = j.at("image_w");
  c.image_c = j.at("image_c");
  c.embed_dim = j.at("embed_dim");
  c.vocab = j.at("vocab");
  c.visual_tokens = j.at("visual_tokens");
  c.max_tokens = j.at("max_tokens");
  c.conv1_channels = j.at("conv1_channels");
  c.conv2_channels = j.at("conv2_channels");
  c.conv1_kernel = j.at("conv1_kernel");
  c.conv2_kernel = j.at("conv2_kernel");
  c.layers = j.at("layers");
  c.ff_dim = j.at("ff_dim");
  c.max_seq = j.at("max_seq");
  c.ln_eps = j.at("ln_eps");
  return c;
}

inline void save_checkpoint(ToyVlmModel& model, const std::string& path) {
  nlohmann::json header;
  header["model"] = vlm_config_to_json(model.config());
  header["eos_id"] = model.eos_id();
  header["charset"] = model.tokenizer().charset();
  nlohmann::json dir = nlohmann::json::array();
  for (const Param* p : model.parameters())
    dir.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  header["params"] = dir;
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(kCheckpointMagic, 8);
  const uint32_t ver = kCheckpointVersion;
  const uint32_t hlen = static_cast<uint32_t>(hs.size());
  f.write(reinterpret_cast<const char*>(&ver), 4);
  f.write(reinterpret_cast<const char*>(&hlen), 4);
  f.write(hs.data(), hs.size());
  for (const Param* p : model.parameters())
    f.write(reinterpret_cast<const char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  if (!f) throw IoError("short write on checkpoint: " + path);
}

inline ToyVlmModel load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path);
  uint32_t ver = 0, hlen = 0;
  f.read(reinterpret_cast<char*>(&ver), 4);
  f.read(reinterpret_cast<char*>(&hlen), 4);
  if (!f || ver != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  std::string hs(hlen, '\0');
  f.read(hs.data(), hlen);
  if (!f) throw IoError("truncated checkpoint header");
  nlohmann::json header = nlohmann::json::parse(hs);

  ToyVlmModel model(vlm_config_from_json(header.at("model")), 0);
  if (header.at("eos_id") != model.eos_id() || header.at("charset") != model.tokenizer().charset())
    throw IoError("checkpoint tokenizer does not match this build");

  const auto& dir = header.at("params");
  const auto& params = model.parameters();
  if (dir.size() != params.size()) throw DimensionError("checkpoint parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    Param* p = params[i];
    const auto& e = dir[i];
    if (e.at("name") != p->name || e.at("rows") != p->value.rows() ||
        e.at("cols") != p->value.cols())
      throw DimensionError("checkpoint parameter '" + e.at("name").get<std::string>() +
                           "' does not match model shape");
    f.read(reinterpret_cast<char*>(p->value.data()),
           static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!f) throw IoError("truncated checkpoint data at " + p->name);
  }
  return model;
}

}  // namespace vtlab
