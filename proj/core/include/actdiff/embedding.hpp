#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace actdiff {

/// One embedding vector per action class, row-major A x D.
struct ActionEmbeddingTable {
  std::size_t num_actions = 0;
  std::size_t dim = 0;
  std::vector<double> values;
  /// Bounds used by the normalization that produced this table (0 for raw tables).
  double g_min = 0.0;
  double g_max = 0.0;
  bool normalized = false;

  std::span<const double> row(std::size_t action) const {
    return std::span<const double>(values).subspan(action * dim, dim);
  }
  bool operator==(const ActionEmbeddingTable&) const = default;
};

/// Global min-max map of every entry onto [-1, 1]. A constant table maps to
/// all zeros. Throws ConfigError for an empty or non-finite table.
ActionEmbeddingTable normalize_embeddings(const ActionEmbeddingTable& raw);

}  // namespace actdiff
