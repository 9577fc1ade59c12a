#include "actdiff_app/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include "actdiff/error.hpp"
#include "actdiff/schedule.hpp"

namespace actdiff::app {

using nlohmann::json;

std::string kebab(const std::string& key) {
  std::string out = key;
  std::replace(out.begin(), out.end(), '_', '-');
  return out;
}

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& text, const char* what) {
  throw ConfigError("config: '" + key + "' expects " + what + ", got '" + text + "'");
}

template <class T>
T parse_text(const std::string& key, const std::string& text);

template <>
std::uint64_t parse_text<std::uint64_t>(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size() || text.empty()) bad(key, text, "a non-negative integer");
  return v;
}

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "size_t and uint64_t share one parser");

template <>
double parse_text<double>(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) bad(key, text, "a finite number");
    return v;
  } catch (const std::logic_error&) {
    bad(key, text, "a finite number");
  }
}

template <>
bool parse_text<bool>(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "off" || text == "no") return false;
  bad(key, text, "true or false");
}

template <>
std::string parse_text<std::string>(const std::string&, const std::string& text) {
  return text;
}

template <>
std::vector<std::size_t> parse_text<std::vector<std::size_t>>(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = std::min(text.find(',', start), text.size());
    out.push_back(parse_text<std::size_t>(key, text.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

template <class T>
T from_json_value(const std::string& key, const json& j) {
  const char* what = "a value of the right type";
  if constexpr (std::is_same_v<T, bool>) {
    if (j.is_boolean()) return j.get<bool>();
    what = "a boolean";
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (j.is_string()) return j.get<std::string>();
    what = "a string";
  } else if constexpr (std::is_same_v<T, double>) {
    if (j.is_number()) return j.get<double>();
    what = "a number";
  } else if constexpr (std::is_integral_v<T>) {
    if (j.is_number_unsigned()) return j.get<T>();
    what = "a non-negative integer";
  } else {
    if (j.is_array() && std::all_of(j.begin(), j.end(), [](const json& e) { return e.is_number_unsigned(); }))
      return j.get<T>();
    what = "an array of non-negative integers";
  }
  bad(key, j.dump(), what);
}

template <class T>
void add(std::vector<RunConfig::Field>& out, const char* key, T& ref, const char* help) {
  const std::string k = key;
  out.push_back({k, help, [k, &ref](const std::string& s) { ref = parse_text<T>(k, s); },
                 [k, &ref](const json& j) { ref = from_json_value<T>(k, j); }, [&ref] { return json(ref); }});
}

template <class T>
void add(std::vector<RunConfig::Field>& out, const char* key, std::optional<T>& ref, const char* help) {
  const std::string k = key;
  out.push_back({k, help, [k, &ref](const std::string& s) { ref = parse_text<T>(k, s); },
                 [k, &ref](const json& j) {
                   if (j.is_null()) ref.reset();
                   else ref = from_json_value<T>(k, j);
                 },
                 [&ref] { return ref ? json(*ref) : json(nullptr); }});
}

}  // namespace

std::vector<RunConfig::Field> RunConfig::fields() {
  std::vector<Field> f;
  add(f, "horizon", horizon, "plan length T (default 3, or the dataset's)");
  add(f, "diffusion_steps", diffusion_steps, "diffusion steps N (default per preset)");
  add(f, "tau", tau, "cosine schedule offset (default 0.008)");
  add(f, "mask_mode", mask_mode, "multiadd, singleadd or nomask");
  add(f, "attention", attention, "self-attention after each stage");
  add(f, "use_fitted_mean", use_fitted_mean, "start inference from the fitted per-position mean");
  add(f, "dataset", dataset, "dataset directory (generated in memory when empty)");
  add(f, "output", output, "output directory; relative paths resolve under ACTDIFF_OUTPUT_ROOT");
  add(f, "model_dir", model_dir, "directory holding trained artifacts (eval; defaults to output)");
  add(f, "preset", preset, "linear or scattered");
  add(f, "seed", seed, "generator and split seed");
  add(f, "train_fraction", train_fraction, "fraction of videos assigned to train");
  add(f, "num_tasks", num_tasks, "task classes C");
  add(f, "num_actions", num_actions, "action classes A");
  add(f, "observation_dim", obs_dim, "observation feature width");
  add(f, "embedding_dim", embedding_dim, "raw action embedding width (0 means A)");
  add(f, "videos_per_task", videos_per_task, "videos generated per task");
  add(f, "min_actions", min_actions, "shortest video");
  add(f, "max_actions", max_actions, "longest video");
  add(f, "chain_length", chain_length, "linear preset chain length (0 means max_actions)");
  add(f, "task_pool_size", task_pool_size, "scattered preset labels per task");
  add(f, "embedding_mean", embedding_mean, "mean of raw embedding entries");
  add(f, "embedding_std", embedding_std, "std of raw embedding entries");
  add(f, "observation_noise_std", observation_noise_std, "observation noise std");
  add(f, "train_seed", train_seed, "initialisation and minibatch seed");
  add(f, "noise_seed", noise_seed, "noise statistics seed");
  add(f, "infer_seed", infer_seed, "inference seed");
  add(f, "batch_size", batch_size, "minibatch size");
  add(f, "epochs", epochs, "training epochs");
  add(f, "steps_per_epoch", steps_per_epoch, "optimizer steps per epoch");
  add(f, "warmup_epochs", warmup_epochs, "linear warmup epochs");
  add(f, "peak_lr", peak_lr, "learning rate after warmup");
  add(f, "decay_rate", decay_rate, "step decay factor");
  add(f, "decay_every", decay_every, "epochs between decays");
  add(f, "decay_last_k_epochs", decay_last_k_epochs, "decay applies in the last k epochs");
  add(f, "weight_decay", weight_decay, "decoupled weight decay");
  add(f, "channels", channels, "comma-separated stage widths");
  add(f, "time_embed_dim", time_embed_dim, "step embedding width");
  add(f, "kernel_size", kernel_size, "convolution kernel size");
  add(f, "activation", activation, "mish or silu");
  add(f, "classifier_hidden", classifier_hidden, "task classifier hidden width");
  add(f, "horizons", horizons, "comma-separated horizons for ablate");
  add(f, "bins", bins, "histogram bins for analyze-noise");
  add(f, "draws_per_window", draws_per_window, "forward-process draws per training window");
  add(f, "max_queries", max_queries, "evaluate at most this many test windows (0 = all)");
  add(f, "infer_batch", infer_batch, "queries denoised together");
  add(f, "quiet", quiet, "suppress progress output");
  return f;
}

json RunConfig::to_json() {
  json j = json::object();
  for (auto& f : fields()) j[f.key] = f.get();
  return j;
}

void RunConfig::apply_json(const json& doc, const std::function<bool(const std::string&)>& skip) {
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
  auto fs = fields();
  for (const auto& [key, value] : doc.items()) {
    auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return f.key == key; });
    if (it == fs.end()) throw ConfigError("config: unknown key '" + key + "'");
    if (skip && skip(key)) continue;
    it->set_json(value);
  }
}

SyntheticSpec RunConfig::synthetic_spec() const {
  SyntheticSpec s;
  if (preset == "linear") s = SyntheticSpec::linear_preset();
  else if (preset == "scattered") s = SyntheticSpec::scattered_preset();
  else throw ConfigError("config: unknown preset '" + preset + "' (expected linear or scattered)");
  auto take = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  take(s.num_tasks, num_tasks);
  take(s.num_actions, num_actions);
  take(s.obs_dim, obs_dim);
  take(s.embedding_dim, embedding_dim);
  take(s.videos_per_task, videos_per_task);
  take(s.min_actions, min_actions);
  take(s.max_actions, max_actions);
  take(s.chain_length, chain_length);
  take(s.task_pool_size, task_pool_size);
  take(s.embedding_mean, embedding_mean);
  take(s.embedding_std, embedding_std);
  take(s.observation_noise_std, observation_noise_std);
  s.seed = seed;
  s.validate();
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("config: train_fraction must lie in (0, 1)");
  return s;
}

TrainingConfig RunConfig::training(std::uint64_t seed_override) const {
  TrainingConfig t;
  t.batch_size = batch_size;
  t.epochs = epochs;
  t.steps_per_epoch = steps_per_epoch;
  t.warmup_epochs = warmup_epochs;
  t.peak_lr = peak_lr;
  t.decay_rate = decay_rate;
  t.decay_every = decay_every;
  t.decay_last_k_epochs = decay_last_k_epochs;
  t.weight_decay = weight_decay;
  t.seed = seed_override;
  t.validate();
  return t;
}

DenoiserConfig RunConfig::architecture() const {
  DenoiserConfig a;
  a.channels = channels;
  a.attention = attention;
  a.time_embed_dim = time_embed_dim;
  a.kernel_size = kernel_size;
  a.activation = parse_activation(activation);
  a.init_seed = train_seed;
  return a;
}

std::size_t RunConfig::resolved_steps() const {
  const auto n = diffusion_steps ? *diffusion_steps : default_diffusion_steps(preset.c_str());
  if (n == 0) throw ConfigError("config: diffusion_steps must be positive");
  return n;
}

double RunConfig::resolved_tau() const { return tau ? *tau : NoiseSchedule::kDefaultTau; }

}  // namespace actdiff::app
