// SPDX-License-Identifier: Apache-2.0
#include "rkld/workbench/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "rkld/errors.hpp"

namespace rkld::wb {

namespace {

using json = nlohmann::ordered_json;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(in[at + i])) << (8 * i);
  return v;
}

std::uint32_t crc(const char* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; checkpoints are far below 4 GiB.
  c = crc32(c, reinterpret_cast<const Bytef*>(data), uInt(n));
  return std::uint32_t(c);
}

constexpr std::size_t kPrelude = sizeof(kCheckpointMagic) + 8;

}  // namespace

std::string serialize_checkpoint(const lm::LanguageModel& model, const Provenance& prov) {
  const auto& cfg = model.config();
  json header;
  header["config"] = {{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
                      {"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads},
                      {"ctx_len", cfg.ctx_len},       {"seed", cfg.seed}};
  json dir = json::array();
  std::size_t offset = 0;
  for (const auto& [name, value] : model.parameters()) {
    dir.push_back({{"name", name}, {"shape", value.shape()}, {"offset", offset}});
    offset += value.numel();
  }
  header["tensors"] = dir;
  header["provenance"] = {{"stage", prov.stage},
                          {"epoch", prov.epoch},
                          {"method", prov.method},
                          {"parent_checksum", prov.parent_checksum}};
  const std::string head = header.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, std::uint32_t(head.size()));
  out += head;
  out.reserve(out.size() + 4 * offset + 4);
  for (const auto& np : model.parameters()) {
    for (auto v : np.value.data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
  put_u32(out, crc(out.data(), out.size()));
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < kPrelude + 4 ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CorruptionError(origin + ": not a checkpoint or truncated header");
  }
  const std::uint32_t version = get_u32(bytes, 8);
  if (version != kCheckpointVersion) {
    throw VersionError(origin + ": checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) +
                       "); regenerate it with the train/unlearn stages of this build");
  }
  const std::size_t body = bytes.size() - 4;
  const std::uint32_t stored = get_u32(bytes, body);
  const std::uint32_t actual = crc(bytes.data(), body);
  if (stored != actual) throw CorruptionError(origin + ": checksum mismatch");

  const std::uint32_t head_len = get_u32(bytes, 12);
  if (kPrelude + head_len > body) throw CorruptionError(origin + ": header runs past the end");
  json header;
  try {
    header = json::parse(bytes.substr(kPrelude, head_len));
    lm::LMConfig cfg;
    const auto& c = header.at("config");
    cfg.vocab_size = c.at("vocab_size").get<std::size_t>();
    cfg.d_model = c.at("d_model").get<std::size_t>();
    cfg.n_layers = c.at("n_layers").get<std::size_t>();
    cfg.n_heads = c.at("n_heads").get<std::size_t>();
    cfg.ctx_len = c.at("ctx_len").get<std::size_t>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    Checkpoint ck{version, lm::LanguageModel(cfg), {}, stored};
    const auto& p = header.at("provenance");
    ck.provenance.stage = p.at("stage").get<std::string>();
    ck.provenance.epoch = p.at("epoch").get<std::size_t>();
    ck.provenance.method = p.at("method").get<std::string>();
    ck.provenance.parent_checksum = p.at("parent_checksum").get<std::uint32_t>();

    const auto& dir = header.at("tensors");
    auto& params = ck.model.parameters();
    if (dir.size() != params.size()) throw CorruptionError(origin + ": tensor count does not match config");
    const std::size_t data_start = kPrelude + head_len;
    const std::size_t n_floats = (body - data_start) / 4;
    if ((body - data_start) % 4 != 0) throw CorruptionError(origin + ": payload is not whole floats");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = dir[i];
      auto& value = params[i].value;
      if (entry.at("name").get<std::string>() != params[i].name ||
          entry.at("shape").get<nd::Shape>() != value.shape()) {
        throw CorruptionError(origin + ": tensor " + params[i].name + " does not match config");
      }
      const std::size_t off = entry.at("offset").get<std::size_t>();
      if (off + value.numel() > n_floats) throw CorruptionError(origin + ": tensor data truncated");
      auto dst = value.mutable_data();
      for (std::size_t j = 0; j < dst.size(); ++j) {
        const std::uint32_t bits = get_u32(bytes, data_start + 4 * (off + j));
        float f;
        std::memcpy(&f, &bits, 4);
        dst[j] = static_cast<nd::real>(f);
      }
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(origin + ": malformed header: " + e.what());
  } catch (const ContractError& e) {
    throw CorruptionError(origin + ": invalid model config: " + e.what());
  }
}

std::uint32_t save_checkpoint(const std::string& path, const lm::LanguageModel& model,
                              const Provenance& prov) {
  const std::string bytes = serialize_checkpoint(model, prov);
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, target);
  return get_u32(bytes, bytes.size() - 4);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path);
}

}  // namespace rkld::wb
