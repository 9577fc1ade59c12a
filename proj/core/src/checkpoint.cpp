#include "actdiff/checkpoint.hpp"

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "actdiff/error.hpp"
#include "json.hpp"

namespace actdiff {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host order");

namespace {

constexpr char kMagic[8] = {'A', 'C', 'T', 'D', 'C', 'K', 'P', 'T'};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_checkpoint(const std::filesystem::path& path, const std::string& kind, const std::string& config_json,
                      const ParameterSet& params, const std::string& provenance) {
  json header;
  header["kind"] = kind;
  header["config"] = json::parse(config_json);
  header["provenance"] = json::parse(provenance);
  header["tensors"] = json::array();
  std::size_t offset = 0;
  for (const auto& e : params.entries()) {
    const auto v = e.tensor.data();
    header["tensors"].push_back({{"name", e.name},
                                 {"shape", e.tensor.shape()},
                                 {"offset", offset},
                                 {"checksum", hex64(fnv1a64(v.data(), v.size_bytes()))}});
    offset += v.size();
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t length = text.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&length), sizeof length);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : params.entries()) {
    const auto v = e.tensor.data();
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
  }
  if (!out) throw DataError("short write to " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  const std::size_t prefix = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < prefix) throw DataError(where + "file is " + std::to_string(bytes.size()) + " bytes, too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw DataError(where + "bad magic at byte 0");
  std::uint32_t version;
  std::uint64_t length;
  std::memcpy(&version, bytes.data() + 8, sizeof version);
  std::memcpy(&length, bytes.data() + 12, sizeof length);
  if (version != kCheckpointVersion) {
    throw DataError(where + "format version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  if (length > bytes.size() - prefix) throw DataError(where + "header length " + std::to_string(length) + " past end");

  Checkpoint ck;
  json header;
  try {
    header = json::parse(bytes.begin() + prefix, bytes.begin() + static_cast<std::ptrdiff_t>(prefix + length));
    ck.kind = header.at("kind").get<std::string>();
    ck.config_json = header.at("config").dump();
    ck.provenance_json = header.contains("provenance") ? header["provenance"].dump() : "{}";
  } catch (const json::exception& e) {
    throw DataError(where + "header: " + e.what());
  }
  const char* payload = bytes.data() + prefix + length;
  const std::size_t payload_bytes = bytes.size() - prefix - length;
  const std::size_t payload_doubles = payload_bytes / sizeof(double);
  std::size_t expected_offset = 0;
  try {
    for (const auto& t : header.at("tensors")) {
      CheckpointTensor ct;
      ct.name = t.at("name").get<std::string>();
      ct.shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto checksum = t.at("checksum").get<std::string>();
      const std::size_t n = shape_numel(ct.shape);
      if (offset != expected_offset) {
        throw DataError(where + "tensor '" + ct.name + "' at offset " + std::to_string(offset) + ", expected " +
                        std::to_string(expected_offset));
      }
      if (offset + n > payload_doubles) {
        throw DataError(where + "tensor '" + ct.name + "' runs past the end of the payload (truncated file)");
      }
      ct.values.resize(n);
      std::memcpy(ct.values.data(), payload + offset * sizeof(double), n * sizeof(double));
      const auto actual = hex64(fnv1a64(ct.values.data(), n * sizeof(double)));
      if (actual != checksum) {
        throw DataError(where + "checksum mismatch in tensor '" + ct.name + "' (payload bytes " +
                        std::to_string(prefix + length + offset * sizeof(double)) + ".." +
                        std::to_string(prefix + length + (offset + n) * sizeof(double)) + ")");
      }
      expected_offset += n;
      ck.tensors.push_back(std::move(ct));
    }
  } catch (const json::exception& e) {
    throw DataError(where + "tensor table: " + e.what());
  }
  if (expected_offset * sizeof(double) != payload_bytes) {
    throw DataError(where + std::to_string(payload_bytes - expected_offset * sizeof(double)) +
                    " trailing bytes after the last tensor");
  }
  return ck;
}

void load_parameters(const Checkpoint& ckpt, ParameterSet& params, const std::string& origin) {
  auto& entries = params.entries();
  if (ckpt.tensors.size() != entries.size()) {
    throw DataError(origin + ": holds " + std::to_string(ckpt.tensors.size()) + " tensors, model has " +
                    std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& src = ckpt.tensors[i];
    auto& dst = entries[i];
    if (src.name != dst.name || src.shape != dst.tensor.shape()) {
      throw DataError(origin + ": tensor " + std::to_string(i) + " is '" + src.name + "' " + shape_str(src.shape) +
                      ", model expects '" + dst.name + "' " + shape_str(dst.tensor.shape()));
    }
    auto out = dst.tensor.mutable_data();
    std::copy(src.values.begin(), src.values.end(), out.begin());
  }
}

namespace {

Checkpoint read_kind(const std::filesystem::path& path, const std::string& kind) {
  auto ck = read_checkpoint(path);
  if (ck.kind != kind) throw DataError(path.string() + ": holds a " + ck.kind + ", expected a " + kind);
  return ck;
}

}  // namespace

void save_denoiser(const Denoiser& model, const std::filesystem::path& path, const std::string& provenance) {
  write_checkpoint(path, "denoiser", model.config().to_json(), model.parameters(), provenance);
}

Denoiser load_denoiser(const std::filesystem::path& path) {
  const auto ck = read_kind(path, "denoiser");
  DenoiserConfig cfg;
  try {
    cfg = DenoiserConfig::from_json(ck.config_json);
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": config: " + e.what());
  }
  Denoiser model(cfg);
  load_parameters(ck, model.parameters(), path.string());
  return model;
}

void save_classifier(const TaskClassifier& model, const std::filesystem::path& path, const std::string& provenance) {
  write_checkpoint(path, "classifier", model.config().to_json(), model.parameters(), provenance);
}

TaskClassifier load_classifier(const std::filesystem::path& path) {
  const auto ck = read_kind(path, "classifier");
  ClassifierConfig cfg;
  try {
    cfg = ClassifierConfig::from_json(ck.config_json);
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": config: " + e.what());
  }
  TaskClassifier model(cfg);
  load_parameters(ck, model.parameters(), path.string());
  return model;
}

}  // namespace actdiff
