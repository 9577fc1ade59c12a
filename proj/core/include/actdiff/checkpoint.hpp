#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "actdiff/classifier.hpp"
#include "actdiff/denoiser.hpp"
#include "actdiff/optim.hpp"

/// Checkpoint container.
///
///   bytes 0..7   magic "ACTDCKPT"
///   u32          format version
///   u64          header length H
///   H bytes      JSON header {kind, config, provenance, tensors: [{name, shape, offset, checksum}]}
///   payload      little-endian float64 values, tensors back to back
///
/// `offset` counts doubles from the start of the payload and `checksum` is
/// the 64-bit FNV-1a hash of a tensor's payload bytes, written as 16 hex digits.
namespace actdiff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string kind;         // "denoiser" or "classifier"
  std::string config_json;  // compact JSON
  std::string provenance_json = "{}";
  std::vector<CheckpointTensor> tensors;
};

std::uint64_t fnv1a64(const void* data, std::size_t bytes);

void write_checkpoint(const std::filesystem::path& path, const std::string& kind, const std::string& config_json,
                      const ParameterSet& params, const std::string& provenance = "{}");
/// Throws DataError naming the file and the failing field, tensor or byte offset.
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Copies values into an existing parameter set; names and shapes must match exactly.
void load_parameters(const Checkpoint& ckpt, ParameterSet& params, const std::string& origin);

void save_denoiser(const Denoiser& model, const std::filesystem::path& path, const std::string& provenance = "{}");
Denoiser load_denoiser(const std::filesystem::path& path);
void save_classifier(const TaskClassifier& model, const std::filesystem::path& path,
                     const std::string& provenance = "{}");
TaskClassifier load_classifier(const std::filesystem::path& path);

}  // namespace actdiff
