#include "actdiff/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <utility>

#include "actdiff/error.hpp"
#include "actdiff/rng.hpp"
#include "json.hpp"

namespace actdiff {

using nlohmann::json;

namespace {

// Stream ids for Rng::derive, kept apart so adding a consumer never shifts another.
constexpr std::uint64_t kEmbeddingStream = 1;
constexpr std::uint64_t kProjectionStream = 2;
constexpr std::uint64_t kStructureStream = 3;
constexpr std::uint64_t kVideoStreamBase = 1u << 20;

void append_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

void append_array(std::string& out, std::span<const double> values) {
  out += '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    append_double(out, values[i]);
  }
  out += ']';
}

std::vector<double> gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::vector<double> m(rows * cols);
  for (auto& v : m) v = rng.normal(0.0, stddev);
  return m;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::size_t> linear_video(std::size_t task, const SyntheticSpec& spec, Rng& rng) {
  const std::size_t chain = spec.effective_chain_length();
  const std::size_t span = spec.num_actions - chain;
  const std::size_t offset =
      spec.num_tasks == 1 ? 0
                          : static_cast<std::size_t>(std::llround(static_cast<double>(task * span) /
                                                                  static_cast<double>(spec.num_tasks - 1)));
  const std::size_t hi = std::min(spec.max_actions, chain);
  const auto m = static_cast<std::size_t>(rng.uniform_int(spec.min_actions, hi));
  const auto start = static_cast<std::size_t>(rng.uniform_int(0, chain - m));
  std::vector<std::size_t> actions(m);
  std::iota(actions.begin(), actions.end(), offset + start);
  return actions;
}

struct TaskGrammar {
  std::vector<std::size_t> pool;
  std::vector<std::array<std::size_t, 2>> successors;  // indices into pool
};

std::vector<TaskGrammar> scattered_grammars(const SyntheticSpec& spec) {
  Rng rng = Rng::derive(spec.seed, kStructureStream);
  std::vector<TaskGrammar> out(spec.num_tasks);
  const std::size_t p = spec.task_pool_size;
  for (auto& g : out) {
    std::vector<std::size_t> labels(spec.num_actions);
    std::iota(labels.begin(), labels.end(), 0);
    for (std::size_t i = 0; i < p; ++i) std::swap(labels[i], labels[i + rng.index(labels.size() - i)]);
    g.pool.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(p));
    g.successors.resize(p);
    for (std::size_t i = 0; i < p; ++i) {
      const std::size_t first = (i + 1 + rng.index(p - 1)) % p;
      std::size_t second = first;
      while (second == first || second == i) second = rng.index(p);
      g.successors[i] = {first, second};
    }
  }
  return out;
}

std::vector<std::size_t> scattered_video(const TaskGrammar& g, const SyntheticSpec& spec, Rng& rng) {
  const auto m = static_cast<std::size_t>(rng.uniform_int(spec.min_actions, spec.max_actions));
  std::vector<std::size_t> actions;
  std::size_t at = rng.index(g.pool.size());
  for (std::size_t i = 0; i < m; ++i) {
    actions.push_back(g.pool[at]);
    at = g.successors[at][rng.index(2)];
  }
  return actions;
}

}  // namespace

const char* to_string(LabelStructure s) { return s == LabelStructure::Linear ? "linear" : "scattered"; }

LabelStructure parse_label_structure(const std::string& s) {
  if (s == "linear") return LabelStructure::Linear;
  if (s == "scattered") return LabelStructure::Scattered;
  throw ConfigError("unknown label structure '" + s + "' (expected linear or scattered)");
}

SyntheticSpec SyntheticSpec::linear_preset() { return SyntheticSpec{}; }

SyntheticSpec SyntheticSpec::scattered_preset() {
  SyntheticSpec s;
  s.num_tasks = 8;
  s.num_actions = 40;
  s.structure = LabelStructure::Scattered;
  return s;
}

void SyntheticSpec::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("synthetic spec: ") + name + " must be positive");
  };
  positive(num_tasks, "num_tasks");
  positive(num_actions, "num_actions");
  positive(obs_dim, "observation_dim");
  positive(videos_per_task, "videos_per_task");
  positive(min_actions, "min_actions");
  if (max_actions < min_actions) throw ConfigError("synthetic spec: max_actions < min_actions");
  if (!(embedding_std > 0.0) || !std::isfinite(embedding_mean)) throw ConfigError("synthetic spec: bad embedding moments");
  if (!(observation_noise_std >= 0.0)) throw ConfigError("synthetic spec: observation_noise_std must be >= 0");
  if (structure == LabelStructure::Linear) {
    const std::size_t chain = effective_chain_length();
    if (chain > num_actions) {
      throw ConfigError("synthetic spec: chain length " + std::to_string(chain) + " exceeds num_actions " +
                        std::to_string(num_actions));
    }
    if (chain < min_actions) throw ConfigError("synthetic spec: chain length shorter than min_actions");
  } else {
    if (task_pool_size < 3 || task_pool_size > num_actions) {
      throw ConfigError("synthetic spec: task_pool_size must lie in [3, num_actions]");
    }
  }
}

std::string SyntheticSpec::to_json() const {
  json j;
  j["num_tasks"] = num_tasks;
  j["num_actions"] = num_actions;
  j["observation_dim"] = obs_dim;
  j["embedding_dim"] = effective_embedding_dim();
  j["videos_per_task"] = videos_per_task;
  j["min_actions"] = min_actions;
  j["max_actions"] = max_actions;
  j["chain_length"] = effective_chain_length();
  j["task_pool_size"] = task_pool_size;
  j["structure"] = actdiff::to_string(structure);
  j["embedding_mean"] = embedding_mean;
  j["embedding_std"] = embedding_std;
  j["observation_noise_std"] = observation_noise_std;
  j["seed"] = seed;
  return j.dump();
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t a = spec.num_actions, de = spec.effective_embedding_dim(), o = spec.obs_dim, c = spec.num_tasks;

  SyntheticData data;
  {
    Rng rng = Rng::derive(spec.seed, kEmbeddingStream);
    data.embeddings.num_actions = a;
    data.embeddings.dim = de;
    data.embeddings.values.resize(a * de);
    for (auto& v : data.embeddings.values) v = rng.normal(spec.embedding_mean, spec.embedding_std);
  }

  // Observation model: boundary j = P_task onehot(task) + P_act e_{a_j} + noise,
  // with the closing boundary reusing the last action.
  Rng proj_rng = Rng::derive(spec.seed, kProjectionStream);
  const auto p_task = gaussian_matrix(o, c, 1.0, proj_rng);
  const auto p_act = gaussian_matrix(o, de, 1.0 / std::sqrt(static_cast<double>(de)), proj_rng);

  std::vector<TaskGrammar> grammars;
  if (spec.structure == LabelStructure::Scattered) grammars = scattered_grammars(spec);

  for (std::size_t task = 0; task < c; ++task) {
    for (std::size_t v = 0; v < spec.videos_per_task; ++v) {
      const std::size_t index = task * spec.videos_per_task + v;
      Rng rng = Rng::derive(spec.seed, kVideoStreamBase + index);
      VideoRecord rec;
      rec.task = task;
      rec.actions = spec.structure == LabelStructure::Linear ? linear_video(task, spec, rng)
                                                             : scattered_video(grammars[task], spec, rng);
      const std::size_t m = rec.actions.size();
      for (std::size_t j = 0; j <= m; ++j) {
        auto emb = data.embeddings.row(rec.actions[std::min(j, m - 1)]);
        std::vector<double> feat(o);
        for (std::size_t r = 0; r < o; ++r) {
          double s = p_task[r * c + task];
          for (std::size_t k = 0; k < de; ++k) s += p_act[r * de + k] * emb[k];
          feat[r] = s + rng.normal(0.0, spec.observation_noise_std);
        }
        rec.boundary_features.push_back(std::move(feat));
      }
      data.videos.push_back(std::move(rec));
    }
  }
  return data;
}

std::vector<CurationWindow> curate_windows(const std::vector<VideoRecord>& videos, std::size_t horizon) {
  if (horizon < 2) throw ConfigError("curate_windows: horizon must be >= 2, got " + std::to_string(horizon));
  std::vector<CurationWindow> out;
  for (std::size_t vi = 0; vi < videos.size(); ++vi) {
    const auto& rec = videos[vi];
    const std::size_t m = rec.actions.size();
    if (rec.boundary_features.size() != m + 1) {
      throw ConfigError("curate_windows: video " + std::to_string(vi) + " has " +
                        std::to_string(rec.boundary_features.size()) + " boundary features for " + std::to_string(m) +
                        " actions");
    }
    for (std::size_t i = 0; i + horizon <= m; ++i) {
      CurationWindow w;
      w.task = rec.task;
      w.actions.assign(rec.actions.begin() + static_cast<std::ptrdiff_t>(i),
                       rec.actions.begin() + static_cast<std::ptrdiff_t>(i + horizon));
      w.obs_start = rec.boundary_features[i];
      w.obs_goal = rec.boundary_features[i + horizon];
      w.video = vi;
      w.offset = i;
      out.push_back(std::move(w));
    }
  }
  return out;
}

ProcedureDataset make_dataset(const SyntheticData& data, const SyntheticSpec& spec, std::size_t horizon) {
  spec.validate();
  if (spec.structure == LabelStructure::Linear && spec.num_actions < horizon) {
    throw ConfigError("make_dataset: num_actions " + std::to_string(spec.num_actions) + " < horizon " +
                      std::to_string(horizon));
  }
  ProcedureDataset ds;
  ds.dims = ProblemDims{horizon, spec.num_actions, spec.num_tasks, spec.obs_dim};
  ds.dims.validate();
  ds.windows = curate_windows(data.videos, horizon);
  ds.embeddings = data.embeddings.dim == spec.num_actions
                      ? data.embeddings
                      : project_embeddings(data.embeddings, spec.num_actions, spec.seed);
  ds.num_videos = data.videos.size();
  ds.spec_json = spec.to_json();
  ds.seed = spec.seed;
  return assign_split(std::move(ds), 0.7, spec.seed);
}

ProcedureDataset assign_split(ProcedureDataset dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split: train_fraction must lie in (0, 1)");
  }
  const std::size_t v = dataset.num_videos;
  std::vector<std::size_t> order(v);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = v; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(v) + 0.5));
  std::vector<Split> side(v, Split::Test);
  for (std::size_t i = 0; i < n_train && i < v; ++i) side[order[i]] = Split::Train;
  for (auto& w : dataset.windows) {
    if (w.video >= v) throw ConfigError("split: window references video " + std::to_string(w.video));
    w.split = side[w.video];
  }
  dataset.split_seed = seed;
  dataset.train_fraction = train_fraction;
  return dataset;
}

ProcedureDataset subset(const ProcedureDataset& dataset, Split which) {
  ProcedureDataset out = dataset;
  out.windows.clear();
  for (const auto& w : dataset.windows)
    if (w.split == which) out.windows.push_back(w);
  return out;
}

std::pair<ProcedureDataset, ProcedureDataset> split(const ProcedureDataset& dataset, double train_fraction,
                                                    std::uint64_t seed) {
  auto tagged = assign_split(dataset, train_fraction, seed);
  return {subset(tagged, Split::Train), subset(tagged, Split::Test)};
}

ActionEmbeddingTable project_embeddings(const ActionEmbeddingTable& table, std::size_t target_dim, std::uint64_t seed) {
  if (target_dim == 0 || table.dim == 0) throw ConfigError("project_embeddings: zero width");
  if (table.values.size() != table.num_actions * table.dim) throw ConfigError("project_embeddings: ragged table");
  Rng rng = Rng::derive(seed, kProjectionStream + 1);
  const auto p = gaussian_matrix(table.dim, target_dim, 1.0 / std::sqrt(static_cast<double>(table.dim)), rng);
  ActionEmbeddingTable out;
  out.num_actions = table.num_actions;
  out.dim = target_dim;
  out.values.assign(table.num_actions * target_dim, 0.0);
  for (std::size_t a = 0; a < table.num_actions; ++a)
    for (std::size_t k = 0; k < table.dim; ++k)
      for (std::size_t j = 0; j < target_dim; ++j)
        out.values[a * target_dim + j] += table.values[a * table.dim + k] * p[k * target_dim + j];
  return out;
}

void save_dataset(const ProcedureDataset& ds, const std::filesystem::path& dir, const std::string& provenance) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  std::size_t n_train = 0;
  for (const auto& w : ds.windows) n_train += w.split == Split::Train;
  json manifest;
  manifest["format_version"] = ProcedureDataset::kFormatVersion;
  manifest["dims"] = {{"horizon", ds.dims.horizon},
                      {"num_actions", ds.dims.num_actions},
                      {"num_tasks", ds.dims.num_tasks},
                      {"observation_dim", ds.dims.obs_dim}};
  manifest["counts"] = {{"windows", ds.windows.size()},
                        {"train", n_train},
                        {"test", ds.windows.size() - n_train},
                        {"videos", ds.num_videos}};
  manifest["spec"] = json::parse(ds.spec_json);
  manifest["seed"] = ds.seed;
  manifest["split"] = {{"seed", ds.split_seed}, {"train_fraction", ds.train_fraction}};
  const auto prov = json::parse(provenance);
  manifest["provenance"] = prov;
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "records.jsonl", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "records.jsonl").string());
    out << json{{"provenance", prov}}.dump() << '\n';
    std::string line;
    for (const auto& w : ds.windows) {
      line = "{\"task\":" + std::to_string(w.task) + ",\"actions\":[";
      for (std::size_t i = 0; i < w.actions.size(); ++i) line += (i ? "," : "") + std::to_string(w.actions[i]);
      line += "],\"o_s\":";
      append_array(line, w.obs_start);
      line += ",\"o_g\":";
      append_array(line, w.obs_goal);
      line += ",\"video\":" + std::to_string(w.video) + ",\"offset\":" + std::to_string(w.offset);
      line += std::string(",\"split\":\"") + (w.split == Split::Train ? "train" : "test") + "\"}\n";
      out << line;
    }
  }
  {
    std::ofstream out(dir / "embeddings.json", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "embeddings.json").string());
    std::string text = "{\"provenance\":" + prov.dump() + ",\"num_actions\":" + std::to_string(ds.embeddings.num_actions) +
                       ",\"dim\":" + std::to_string(ds.embeddings.dim) + ",\"values\":";
    append_array(text, ds.embeddings.values);
    out << text << "}\n";
  }
}

ProcedureDataset load_dataset(const std::filesystem::path& dir) {
  ProcedureDataset ds;
  const auto manifest_path = dir / "manifest.json";
  std::size_t expected_windows = 0, expected_train = 0;
  try {
    auto m = json::parse(read_file(manifest_path));
    const int version = m.at("format_version").get<int>();
    if (version != ProcedureDataset::kFormatVersion) {
      throw DataError(manifest_path.string() + ": format version " + std::to_string(version) + ", expected " +
                      std::to_string(ProcedureDataset::kFormatVersion));
    }
    const auto& d = m.at("dims");
    ds.dims = ProblemDims{d.at("horizon").get<std::size_t>(), d.at("num_actions").get<std::size_t>(),
                          d.at("num_tasks").get<std::size_t>(), d.at("observation_dim").get<std::size_t>()};
    expected_windows = m.at("counts").at("windows").get<std::size_t>();
    expected_train = m.at("counts").at("train").get<std::size_t>();
    ds.num_videos = m.at("counts").at("videos").get<std::size_t>();
    ds.spec_json = m.at("spec").dump();
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.split_seed = m.at("split").at("seed").get<std::uint64_t>();
    ds.train_fraction = m.at("split").at("train_fraction").get<double>();
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  try {
    ds.dims.validate();
  } catch (const ConfigError& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }

  const auto records_path = dir / "records.jsonl";
  {
    std::istringstream in(read_file(records_path));
    std::string line;
    std::size_t index = 0, n_train = 0;
    bool first = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::exchange(first, false) && line.rfind("{\"provenance\":", 0) == 0) continue;
      auto fail = [&](const std::string& why) -> DataError {
        return DataError(records_path.string() + ": record " + std::to_string(index) + ": " + why);
      };
      CurationWindow w;
      try {
        auto j = json::parse(line);
        w.task = j.at("task").get<std::size_t>();
        w.actions = j.at("actions").get<std::vector<std::size_t>>();
        w.obs_start = j.at("o_s").get<std::vector<double>>();
        w.obs_goal = j.at("o_g").get<std::vector<double>>();
        w.video = j.at("video").get<std::size_t>();
        w.offset = j.at("offset").get<std::size_t>();
        const auto side = j.at("split").get<std::string>();
        if (side != "train" && side != "test") throw fail("split tag '" + side + "' is neither train nor test");
        w.split = side == "train" ? Split::Train : Split::Test;
      } catch (const json::exception& e) {
        throw fail(e.what());
      }
      if (w.task >= ds.dims.num_tasks) {
        throw fail("task label " + std::to_string(w.task) + " out of range [0," + std::to_string(ds.dims.num_tasks) +
                   ")");
      }
      if (w.actions.size() != ds.dims.horizon) {
        throw fail(std::to_string(w.actions.size()) + " actions, horizon is " + std::to_string(ds.dims.horizon));
      }
      for (std::size_t t = 0; t < w.actions.size(); ++t) {
        if (w.actions[t] >= ds.dims.num_actions) {
          throw fail("action label " + std::to_string(w.actions[t]) + " at position " + std::to_string(t) +
                     " out of range [0," + std::to_string(ds.dims.num_actions) + ")");
        }
      }
      if (w.obs_start.size() != ds.dims.obs_dim || w.obs_goal.size() != ds.dims.obs_dim) {
        throw fail("observation width differs from " + std::to_string(ds.dims.obs_dim));
      }
      for (double v : w.obs_start)
        if (!std::isfinite(v)) throw fail("non-finite o_s entry");
      for (double v : w.obs_goal)
        if (!std::isfinite(v)) throw fail("non-finite o_g entry");
      if (w.video >= ds.num_videos) throw fail("video index " + std::to_string(w.video) + " out of range");
      n_train += w.split == Split::Train;
      ds.windows.push_back(std::move(w));
      ++index;
    }
    if (ds.windows.size() != expected_windows || n_train != expected_train) {
      throw DataError(records_path.string() + ": holds " + std::to_string(ds.windows.size()) + " records (" +
                      std::to_string(n_train) + " train), manifest declares " + std::to_string(expected_windows) +
                      " (" + std::to_string(expected_train) + " train)");
    }
  }

  const auto emb_path = dir / "embeddings.json";
  try {
    auto j = json::parse(read_file(emb_path));
    ds.embeddings.num_actions = j.at("num_actions").get<std::size_t>();
    ds.embeddings.dim = j.at("dim").get<std::size_t>();
    ds.embeddings.values = j.at("values").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw DataError(emb_path.string() + ": " + e.what());
  }
  if (ds.embeddings.num_actions != ds.dims.num_actions ||
      ds.embeddings.values.size() != ds.embeddings.num_actions * ds.embeddings.dim) {
    throw DataError(emb_path.string() + ": table is " + std::to_string(ds.embeddings.num_actions) + "x" +
                    std::to_string(ds.embeddings.dim) + " with " + std::to_string(ds.embeddings.values.size()) +
                    " values, dataset has " + std::to_string(ds.dims.num_actions) + " actions");
  }
  if (ds.embeddings.dim != ds.dims.num_actions) {
    ds.embeddings = project_embeddings(ds.embeddings, ds.dims.num_actions, ds.seed);
  }
  for (std::size_t i = 0; i < ds.embeddings.values.size(); ++i) {
    if (!std::isfinite(ds.embeddings.values[i])) {
      throw DataError(emb_path.string() + ": non-finite value at index " + std::to_string(i));
    }
  }
  return ds;
}

}  // namespace actdiff
