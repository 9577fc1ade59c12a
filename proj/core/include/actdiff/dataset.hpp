#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "actdiff/embedding.hpp"
#include "actdiff/plan_matrix.hpp"

namespace actdiff {

enum class LabelStructure { Linear, Scattered };

const char* to_string(LabelStructure s);
LabelStructure parse_label_structure(const std::string& s);

/// Parameters of the synthetic instructional-procedure generator.
///
/// Linear: task k owns a chain of `chain_length` consecutive action labels
/// (chains of different tasks may overlap) and every video replays a
/// contiguous sub-chain. Scattered: each task draws a pool of
/// `task_pool_size` labels from the shared label space and walks a sparse
/// task-specific transition table over it.
struct SyntheticSpec {
  std::size_t num_tasks = 5;
  std::size_t num_actions = 20;
  std::size_t obs_dim = 32;
  std::size_t embedding_dim = 0;  // 0 means num_actions
  std::size_t videos_per_task = 60;
  std::size_t min_actions = 4;
  std::size_t max_actions = 8;
  std::size_t chain_length = 0;  // linear only; 0 means max_actions
  std::size_t task_pool_size = 12;  // scattered only
  LabelStructure structure = LabelStructure::Linear;
  double embedding_mean = -0.3;
  double embedding_std = 1.0;
  double observation_noise_std = 0.1;
  std::uint64_t seed = 0;

  static SyntheticSpec linear_preset();
  static SyntheticSpec scattered_preset();

  std::size_t effective_embedding_dim() const { return embedding_dim ? embedding_dim : num_actions; }
  std::size_t effective_chain_length() const { return chain_length ? chain_length : max_actions; }
  void validate() const;
  /// Compact JSON echo used in manifests and run headers.
  std::string to_json() const;
};

/// One video: m actions and m + 1 boundary features. Boundary j is the
/// observation at the start of action j; boundary m closes the last action.
struct VideoRecord {
  std::size_t task = 0;
  std::vector<std::size_t> actions;
  std::vector<std::vector<double>> boundary_features;
};

struct SyntheticData {
  std::vector<VideoRecord> videos;
  ActionEmbeddingTable embeddings;  // raw, not normalized
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

enum class Split { Train, Test };

struct CurationWindow {
  std::size_t task = 0;
  std::vector<std::size_t> actions;
  std::vector<double> obs_start;
  std::vector<double> obs_goal;
  std::size_t video = 0;   // index of the source video
  std::size_t offset = 0;  // position of actions[0] in the source video
  Split split = Split::Train;

  bool operator==(const CurationWindow&) const = default;
};

/// Every contiguous length-`horizon` run of every record becomes a window.
std::vector<CurationWindow> curate_windows(const std::vector<VideoRecord>& videos, std::size_t horizon);

struct ProcedureDataset {
  static constexpr int kFormatVersion = 1;

  ProblemDims dims;
  std::vector<CurationWindow> windows;
  ActionEmbeddingTable embeddings;  // raw; A x D_e with D_e == A
  std::size_t num_videos = 0;
  std::string spec_json = "{}";  // generator echo, opaque
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  double train_fraction = 0.7;

  bool operator==(const ProcedureDataset&) const = default;
};

/// Curates and packages generated videos for the given horizon, tagged
/// with the default 70/30 video-level split seeded by spec.seed.
ProcedureDataset make_dataset(const SyntheticData& data, const SyntheticSpec& spec, std::size_t horizon);

/// Assigns videos (never individual windows) to train/test. The first
/// round(train_fraction * V) videos of a seeded permutation go to train.
ProcedureDataset assign_split(ProcedureDataset dataset, double train_fraction, std::uint64_t seed);
std::pair<ProcedureDataset, ProcedureDataset> split(const ProcedureDataset& dataset, double train_fraction,
                                                    std::uint64_t seed);
/// Windows carrying the given tag.
ProcedureDataset subset(const ProcedureDataset& dataset, Split which);

/// Writes manifest.json, records.jsonl and embeddings.json into `dir`.
/// `provenance` (a JSON object) is echoed into every file; in records.jsonl
/// it is the first line, {"provenance": ...}, which the loader skips.
void save_dataset(const ProcedureDataset& dataset, const std::filesystem::path& dir,
                  const std::string& provenance = "{}");
/// Loads and validates a dataset directory; DataError names the offending
/// file and record.
ProcedureDataset load_dataset(const std::filesystem::path& dir);

/// Fixed seeded Gaussian projection of a D_e-wide table onto `num_actions`
/// coordinates, for external embeddings whose width differs from A.
ActionEmbeddingTable project_embeddings(const ActionEmbeddingTable& table, std::size_t target_dim, std::uint64_t seed);

}  // namespace actdiff
