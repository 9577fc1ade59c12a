#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "CLI11.hpp"
#include "actdiff/checkpoint.hpp"
#include "actdiff/classifier.hpp"
#include "actdiff/error.hpp"
#include "actdiff/metrics.hpp"
#include "actdiff/noise.hpp"
#include "actdiff/planner.hpp"
#include "actdiff_app/app.hpp"
#include "actdiff_app/run_config.hpp"

namespace actdiff::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hex16(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string fingerprint(const fs::path& path) {
  const auto bytes = read_file(path);
  return hex16(fnv1a64(bytes.data(), bytes.size()));
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

struct Run {
  RunConfig cfg;
  std::string command;
  fs::path out;
  std::ostream& log;
  json echo;  // resolved config without locations
  json inputs = json::object();

  std::string provenance() const {
    json p{{"tool", "actdiff"},
           {"version", ACTDIFF_VERSION},
           {"command", command},
           {"config", echo},
           {"seeds",
            {{"seed", cfg.seed}, {"train_seed", cfg.train_seed}, {"noise_seed", cfg.noise_seed},
             {"infer_seed", cfg.infer_seed}}},
           {"inputs", inputs}};
    return p.dump();
  }
  std::string csv_header() const { return "# provenance: " + provenance() + "\n"; }
  void say(const std::string& line) const {
    if (!cfg.quiet) log << line << std::endl;
  }
};

fs::path resolve_output(const RunConfig& cfg, const std::string& command) {
  fs::path out = cfg.output.empty() ? fs::path("runs") / command : fs::path(cfg.output);
  if (out.is_relative()) {
    if (const char* root = std::getenv("ACTDIFF_OUTPUT_ROOT"); root && *root) out = fs::path(root) / out;
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create output directory " + out.string() + ": " + ec.message());
  return out;
}

/// Loads --dataset, or generates the preset in memory. Either way the
/// resolved data settings land in the provenance echo.
ProcedureDataset obtain_dataset(Run& run, std::optional<std::size_t> horizon) {
  const auto& cfg = run.cfg;
  if (!cfg.dataset.empty()) {
    const fs::path dir = cfg.dataset;
    auto ds = load_dataset(dir);
    if (horizon && *horizon != ds.dims.horizon) {
      throw ConfigError("config: horizon " + std::to_string(*horizon) + " does not match the dataset's horizon " +
                        std::to_string(ds.dims.horizon));
    }
    run.echo["horizon"] = ds.dims.horizon;
    run.echo["seed"] = ds.seed;
    run.cfg.seed = ds.seed;
    run.inputs["dataset"] = {{"records_fnv1a64", fingerprint(dir / "records.jsonl")},
                             {"embeddings_fnv1a64", fingerprint(dir / "embeddings.json")},
                             {"spec", json::parse(ds.spec_json)},
                             {"split", {{"seed", ds.split_seed}, {"train_fraction", ds.train_fraction}}}};
    return ds;
  }
  const auto spec = cfg.synthetic_spec();
  const std::size_t h = horizon.value_or(3);
  if (h == 0) throw ConfigError("config: horizon must be positive");
  auto ds = assign_split(make_dataset(generate_synthetic(spec), spec, h), cfg.train_fraction, spec.seed);
  run.echo["horizon"] = h;
  const auto resolved = json::parse(spec.to_json());
  for (const auto& [k, v] : resolved.items()) {
    if (run.echo.contains(k)) run.echo[k] = v;
  }
  run.inputs["dataset"] = {{"generated", true}, {"spec", resolved}};
  return ds;
}

std::vector<PlanQuery> test_queries(const ProcedureDataset& test, std::size_t limit) {
  const std::size_t n = limit ? std::min(limit, test.windows.size()) : test.windows.size();
  std::vector<PlanQuery> q;
  q.reserve(n);
  for (std::size_t i = 0; i < n; ++i) q.push_back({test.windows[i].obs_start, test.windows[i].obs_goal});
  return q;
}

EvalReport score(const ProcedureDataset& test, const std::vector<PlanResult>& results) {
  std::vector<Plan> preds, gts;
  for (std::size_t i = 0; i < results.size(); ++i) {
    preds.push_back(results[i].plan);
    gts.push_back(test.windows[i].actions);
  }
  return evaluate(preds, gts);
}

ProcedureDataset require_split(const ProcedureDataset& ds, Split which) {
  auto part = subset(ds, which);
  if (part.windows.empty())
    throw DataError(std::string("dataset has no ") + (which == Split::Train ? "training" : "test") + " windows");
  return part;
}

int gen_data(Run& run) {
  if (!run.cfg.dataset.empty()) throw ConfigError("gen-data: --dataset names an input; use --output");
  const auto ds = obtain_dataset(run, run.cfg.horizon);
  save_dataset(ds, run.out, run.provenance());
  const auto train = subset(ds, Split::Train).windows.size();
  run.say("gen-data: " + std::to_string(ds.windows.size()) + " windows (" + std::to_string(train) + " train, " +
          std::to_string(ds.windows.size() - train) + " test) from " + std::to_string(ds.num_videos) +
          " videos -> " + run.out.string());
  return kOk;
}

int train(Run& run) {
  const auto& cfg = run.cfg;
  const auto mode = parse_mask_mode(cfg.mask_mode);
  const auto tc = cfg.training(cfg.train_seed);
  const auto arch = cfg.architecture();
  const NoiseSchedule schedule(cfg.resolved_steps(), cfg.resolved_tau());
  run.echo["diffusion_steps"] = schedule.steps();
  run.echo["tau"] = schedule.tau();
  const auto train_set = require_split(obtain_dataset(run, cfg.horizon), Split::Train);
  const auto prov = run.provenance();

  run.say("train: " + std::to_string(train_set.windows.size()) + " training windows, mask " + to_string(mode) +
          ", attention " + (arch.attention ? "on" : "off"));
  ClassifierTrainingLog clog;
  const auto classifier = train_task_classifier(train_set, tc, &clog, cfg.classifier_hidden);
  const double cls_acc = task_accuracy(classifier, train_set);
  run.say("train: task classifier training accuracy " + fmt(cls_acc));

  DenoiserTrainingLog dlog;
  const auto denoiser = train_denoiser(train_set, schedule, mode, tc, arch, &dlog);
  run.say("train: denoiser final epoch loss " + fmt(dlog.epoch_loss.back()));
  const auto stats = estimate_noise_stats(train_set, schedule, mode, cfg.noise_seed, cfg.draws_per_window);

  save_classifier(classifier, run.out / "classifier.ckpt", prov);
  save_denoiser(denoiser, run.out / "denoiser.ckpt", prov);
  stats.save(run.out / "noise_stats.json", prov);

  std::string loss = run.csv_header() + "epoch,step,lr,loss\n";
  for (std::size_t i = 0; i < dlog.step_loss.size(); ++i) {
    loss += std::to_string(i / tc.steps_per_epoch + 1) + "," + std::to_string(i + 1) + "," + fmt(dlog.step_lr[i]) +
            "," + fmt(dlog.step_loss[i]) + "\n";
  }
  write_file(run.out / "loss_log.csv", loss);
  std::string cls = run.csv_header() + "epoch,loss,train_accuracy\n";
  for (std::size_t e = 0; e < clog.epoch_loss.size(); ++e)
    cls += std::to_string(e + 1) + "," + fmt(clog.epoch_loss[e]) + "," + fmt(clog.epoch_accuracy[e]) + "\n";
  write_file(run.out / "classifier_log.csv", cls);

  json summary{{"provenance", json::parse(prov)},
               {"classifier_train_accuracy", cls_acc},
               {"denoiser_final_epoch_loss", dlog.epoch_loss.back()},
               {"denoiser_parameters", denoiser.parameters().count()},
               {"classifier_parameters", classifier.parameters().count()}};
  write_file(run.out / "run.json", summary.dump(2) + "\n");
  run.say("train: artifacts -> " + run.out.string());
  return kOk;
}

int eval(Run& run) {
  const auto& cfg = run.cfg;
  const fs::path model_dir = cfg.model_dir.empty() ? run.out : fs::path(cfg.model_dir);
  const auto stats = NoiseStats::load(model_dir / "noise_stats.json");
  const auto denoiser = load_denoiser(model_dir / "denoiser.ckpt");
  const auto classifier = load_classifier(model_dir / "classifier.ckpt");
  if (cfg.diffusion_steps && *cfg.diffusion_steps != stats.schedule_steps) {
    throw ConfigError("config: diffusion_steps " + std::to_string(*cfg.diffusion_steps) +
                      " differs from the trained model's " + std::to_string(stats.schedule_steps));
  }
  if (cfg.tau && *cfg.tau != stats.schedule_tau)
    throw ConfigError("config: tau " + fmt(*cfg.tau) + " differs from the trained model's " + fmt(stats.schedule_tau));
  const NoiseSchedule schedule(stats.schedule_steps, stats.schedule_tau);

  // Training-time settings come from the model's own header; only the
  // inference keys are taken from this invocation.
  const auto trained = json::parse(read_file(model_dir / "noise_stats.json"));
  if (trained.contains("provenance")) {
    const auto& prov = trained["provenance"];
    if (prov.contains("config") && prov["config"].is_object()) {
      auto echo = prov["config"];
      for (const char* key : {"infer_seed", "use_fitted_mean", "max_queries", "infer_batch"}) echo[key] = run.echo[key];
      run.echo = std::move(echo);
    }
    if (prov.contains("seeds")) {
      run.cfg.train_seed = prov["seeds"].value("train_seed", run.cfg.train_seed);
      run.cfg.noise_seed = prov["seeds"].value("noise_seed", run.cfg.noise_seed);
    }
  }

  const auto& arch = denoiser.config();
  run.echo["diffusion_steps"] = schedule.steps();
  run.echo["tau"] = schedule.tau();
  run.echo["mask_mode"] = to_string(stats.mode);
  run.echo["attention"] = arch.attention;
  run.echo["channels"] = arch.channels;
  run.echo["time_embed_dim"] = arch.time_embed_dim;
  run.echo["kernel_size"] = arch.kernel_size;
  run.echo["activation"] = to_string(arch.activation);
  run.echo["classifier_hidden"] = classifier.config().hidden;
  run.inputs["model"] = {{"denoiser_fnv1a64", fingerprint(model_dir / "denoiser.ckpt")},
                         {"classifier_fnv1a64", fingerprint(model_dir / "classifier.ckpt")},
                         {"noise_stats_fnv1a64", fingerprint(model_dir / "noise_stats.json")}};

  const auto test = require_split(obtain_dataset(run, cfg.horizon ? cfg.horizon : std::optional(stats.horizon)),
                                  Split::Test);
  if (arch.horizon != test.dims.horizon || arch.input_width != test.dims.width() ||
      classifier.config().obs_dim != test.dims.obs_dim || classifier.config().num_tasks != test.dims.num_tasks) {
    throw DataError("model in " + model_dir.string() + " was trained for different problem dimensions than the dataset");
  }
  const auto queries = test_queries(test, cfg.max_queries);
  InferenceOptions opts;
  opts.use_fitted_mean = cfg.use_fitted_mean;
  opts.batch = cfg.infer_batch;
  run.say("eval: " + std::to_string(queries.size()) + " test queries");
  const auto results = infer_plans(denoiser, classifier, queries, stats, schedule, cfg.infer_seed, opts);
  const auto report = score(test, results);
  const auto prov = run.provenance();

  std::string plans = json{{"provenance", json::parse(prov)}}.dump() + "\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& w = test.windows[i];
    plans += json{{"index", i},
                  {"video", w.video},
                  {"offset", w.offset},
                  {"task", w.task},
                  {"predicted_task", results[i].predicted_task},
                  {"gt", w.actions},
                  {"pred", results[i].plan},
                  {"exact", results[i].plan == w.actions}}
                 .dump() +
             "\n";
  }
  write_file(run.out / "plans.jsonl", plans);
  auto text = report.to_json(prov);
  if (text.empty() || text.back() != '\n') text += '\n';
  write_file(run.out / "report.json", text);
  run.say("eval: n=" + std::to_string(report.n_samples) + " sr=" + fmt(report.sr) + " macc=" + fmt(report.macc) +
          " msiou=" + fmt(report.msiou));
  return kOk;
}

int ablate(Run& run) {
  const auto& cfg = run.cfg;
  std::vector<std::size_t> horizons = cfg.horizons;
  if (horizons.empty()) horizons.push_back(cfg.horizon.value_or(0));
  const NoiseSchedule schedule(cfg.resolved_steps(), cfg.resolved_tau());
  const auto tc = cfg.training(cfg.train_seed);
  run.echo["diffusion_steps"] = schedule.steps();
  run.echo["tau"] = schedule.tau();
  run.echo["mask_mode"] = {"multiadd", "singleadd", "nomask"};
  run.echo["attention"] = {true, false};

  struct Row {
    std::size_t horizon;
    MaskMode mode;
    bool attention;
    EvalReport report;
    double random_sr;
  };
  std::vector<Row> rows;
  InferenceOptions opts;
  opts.use_fitted_mean = cfg.use_fitted_mean;
  opts.batch = cfg.infer_batch;
  json horizons_echo = json::array();
  for (const auto h : horizons) {
    const auto ds = obtain_dataset(run, h ? std::optional(h) : cfg.horizon);
    horizons_echo.push_back(ds.dims.horizon);
    const auto train_set = require_split(ds, Split::Train);
    const auto test = require_split(ds, Split::Test);
    const auto queries = test_queries(test, cfg.max_queries);
    const auto classifier = train_task_classifier(train_set, tc, nullptr, cfg.classifier_hidden);
    const double random_sr = std::pow(1.0 / static_cast<double>(ds.dims.num_actions), ds.dims.horizon);
    for (const auto mode : {MaskMode::MultiAdd, MaskMode::SingleAdd, MaskMode::NoMask}) {
      for (const bool attention : {true, false}) {
        auto arch = cfg.architecture();
        arch.attention = attention;
        const auto denoiser = train_denoiser(train_set, schedule, mode, tc, arch);
        const auto stats = estimate_noise_stats(train_set, schedule, mode, cfg.noise_seed, cfg.draws_per_window);
        const auto results = infer_plans(denoiser, classifier, queries, stats, schedule, cfg.infer_seed, opts);
        rows.push_back({ds.dims.horizon, mode, attention, score(test, results), random_sr});
        const auto& r = rows.back().report;
        run.say("ablate: T=" + std::to_string(ds.dims.horizon) + " " + to_string(mode) + " attention " +
                (attention ? "on " : "off") + " sr=" + fmt(r.sr) + " macc=" + fmt(r.macc) + " msiou=" + fmt(r.msiou));
      }
    }
  }
  run.echo["horizons"] = horizons_echo;

  std::string table = run.csv_header() +
                      "horizon,mask_mode,attention,n_samples,sr,macc,msiou,set_acc,random_sr,sr_over_random\n";
  for (const auto& r : rows) {
    table += std::to_string(r.horizon) + "," + to_string(r.mode) + "," + (r.attention ? "on" : "off") + "," +
             std::to_string(r.report.n_samples) + "," + fmt(r.report.sr) + "," + fmt(r.report.macc) + "," +
             fmt(r.report.msiou) + "," + fmt(r.report.set_acc) + "," + fmt(r.random_sr) + "," +
             fmt(r.report.sr / r.random_sr) + "\n";
  }
  write_file(run.out / "ablation.csv", table);

  auto find = [&](std::size_t h, MaskMode m, bool a) -> const EvalReport& {
    return std::find_if(rows.begin(), rows.end(),
                        [&](const Row& r) { return r.horizon == h && r.mode == m && r.attention == a; })
        ->report;
  };
  std::string deltas = run.csv_header() + "horizon,comparison,held_fixed,delta_sr,delta_macc,delta_msiou\n";
  auto delta_line = [&](std::size_t h, const char* what, const std::string& fixed, const EvalReport& a,
                        const EvalReport& b) {
    deltas += std::to_string(h) + "," + what + "," + fixed + "," + fmt(a.sr - b.sr) + "," + fmt(a.macc - b.macc) +
              "," + fmt(a.msiou - b.msiou) + "\n";
  };
  for (const auto& h : horizons_echo) {
    const auto t = h.get<std::size_t>();
    for (const bool a : {true, false}) {
      delta_line(t, "multiadd_minus_nomask", a ? "attention_on" : "attention_off", find(t, MaskMode::MultiAdd, a),
                 find(t, MaskMode::NoMask, a));
    }
    for (const auto m : {MaskMode::MultiAdd, MaskMode::SingleAdd, MaskMode::NoMask})
      delta_line(t, "attention_on_minus_off", to_string(m), find(t, m, true), find(t, m, false));
  }
  write_file(run.out / "ablation_deltas.csv", deltas);
  run.say("ablate: " + std::to_string(rows.size()) + " rows -> " + (run.out / "ablation.csv").string());
  return kOk;
}

int analyze_noise(Run& run) {
  const auto& cfg = run.cfg;
  const auto mode = parse_mask_mode(cfg.mask_mode);
  if (cfg.bins == 0) throw ConfigError("config: bins must be positive");
  if (cfg.draws_per_window == 0) throw ConfigError("config: draws_per_window must be positive");
  const NoiseSchedule schedule(cfg.resolved_steps(), cfg.resolved_tau());
  run.echo["diffusion_steps"] = schedule.steps();
  run.echo["tau"] = schedule.tau();
  const auto train_set = require_split(obtain_dataset(run, cfg.horizon), Split::Train);
  const auto prov = run.provenance();

  // Same seed for both passes, so eps_a is eps shifted by the mask draw for draw.
  NoisedActionSamples plain, masked;
  const auto eps = estimate_noise_stats(train_set, schedule, MaskMode::NoMask, cfg.noise_seed, cfg.draws_per_window,
                                        &plain);
  const auto eps_a =
      estimate_noise_stats(train_set, schedule, mode, cfg.noise_seed, cfg.draws_per_window, &masked);

  std::string summary = run.csv_header() + "kind,position,mu,sigma,count\n";
  auto emit = [&](const char* kind, const NoiseStats& stats, const NoisedActionSamples& samples) {
    for (std::size_t t = 0; t < stats.horizon; ++t) {
      const auto& v = samples.per_position[t];
      summary += std::string(kind) + "," + std::to_string(t + 1) + "," + fmt(stats.mu[t]) + "," +
                 fmt(stats.sigma[t]) + "," + std::to_string(v.size()) + "\n";
      const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
      const double lo = *lo_it;
      const double hi = *hi_it > lo ? *hi_it : lo + 1.0;
      const double width = (hi - lo) / static_cast<double>(cfg.bins);
      std::vector<std::size_t> counts(cfg.bins, 0);
      for (const double x : v) {
        const auto b = static_cast<std::size_t>((x - lo) / width);
        ++counts[std::min(b, cfg.bins - 1)];
      }
      std::string hist = run.csv_header() + "bin_left,bin_right,count\n";
      for (std::size_t b = 0; b < cfg.bins; ++b) {
        const double right = b + 1 == cfg.bins ? hi : lo + width * static_cast<double>(b + 1);
        hist += fmt(lo + width * static_cast<double>(b)) + "," + fmt(right) + "," + std::to_string(counts[b]) + "\n";
      }
      write_file(run.out / ("hist_" + std::string(kind) + "_t" + std::to_string(t + 1) + ".csv"), hist);
    }
  };
  emit("eps", eps, plain);
  emit("eps_a", eps_a, masked);
  write_file(run.out / "summary.csv", summary);

  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (const double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  json analysis{{"provenance", json::parse(prov)},
                {"mask_mode", to_string(mode)},
                {"raw_embedding_mean", mean_of(train_set.embeddings.values)},
                {"normalized_embedding_mean", mean_of(normalize_embeddings(train_set.embeddings).values)},
                {"eps", {{"mu", eps.mu}, {"sigma", eps.sigma}}},
                {"eps_a", {{"mu", eps_a.mu}, {"sigma", eps_a.sigma}}}};
  write_file(run.out / "analysis.json", analysis.dump(2) + "\n");
  for (std::size_t t = 0; t < eps_a.horizon; ++t) {
    run.say("analyze-noise: position " + std::to_string(t + 1) + " eps mu=" + fmt(eps.mu[t]) + " sigma=" +
            fmt(eps.sigma[t]) + " | eps_a mu=" + fmt(eps_a.mu[t]) + " sigma=" + fmt(eps_a.sigma[t]));
  }
  return kOk;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

int fail(std::ostream& err, int code, const std::string& msg) {
  err << "actdiff: error: " << one_line(msg) << std::endl;
  return code;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Action-aware diffusion for procedure planning", "actdiff"};
  std::string command;
  app.add_option("command", command, "gen-data, train, eval, ablate or analyze-noise")
      ->required()
      ->check(CLI::IsMember({"gen-data", "train", "eval", "ablate", "analyze-noise"}));
  std::string config_path;
  bool config_wins = false;
  app.add_option("--config", config_path, "JSON object of run config keys");
  app.add_flag("--config-wins", config_wins, "let the config file override command-line flags");

  RunConfig cfg;
  auto fields = cfg.fields();
  std::vector<std::string> staged(fields.size());
  std::vector<CLI::Option*> options;
  for (std::size_t i = 0; i < fields.size(); ++i)
    options.push_back(app.add_option("--" + kebab(fields[i].key), staged[i], fields[i].help));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, kConfigError, e.what());
  }

  try {
    json doc = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("config: cannot read " + config_path);
      try {
        doc = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError("config: " + config_path + " is not valid JSON: " + e.what());
      }
      cfg.apply_json(doc, [&](const std::string& key) {
        const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.key == key; });
        return !config_wins && options[static_cast<std::size_t>(it - fields.begin())]->count() > 0;
      });
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (options[i]->count() == 0) continue;
      if (config_wins && doc.contains(fields[i].key)) continue;
      fields[i].set_text(staged[i]);
    }

    Run run{cfg, command, resolve_output(cfg, command), out, cfg.to_json()};
    for (const char* key : {"dataset", "output", "model_dir", "quiet"}) run.echo.erase(key);
    run.echo["diffusion_steps"] = cfg.resolved_steps();
    run.echo["tau"] = cfg.resolved_tau();
    if (command == "gen-data") return gen_data(run);
    if (command == "train") return train(run);
    if (command == "eval") return eval(run);
    if (command == "ablate") return ablate(run);
    return analyze_noise(run);
  } catch (const ConfigError& e) {
    return fail(err, kConfigError, e.what());
  } catch (const DataError& e) {
    return fail(err, kDataError, e.what());
  } catch (const NumericError& e) {
    return fail(err, kNumericError, e.what());
  } catch (const std::exception& e) {
    return fail(err, kFailure, e.what());
  }
}

}  // namespace actdiff::app
