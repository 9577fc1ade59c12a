#include "actdiff/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "actdiff/error.hpp"
#include "actdiff/ops.hpp"
#include "actdiff/rng.hpp"
#include "json.hpp"

namespace actdiff {

using nlohmann::json;

void ClassifierConfig::validate() const {
  if (obs_dim == 0 || num_tasks == 0 || hidden == 0) throw ConfigError("classifier: all widths must be positive");
}

std::string ClassifierConfig::to_json() const {
  return json{{"obs_dim", obs_dim}, {"num_tasks", num_tasks}, {"hidden", hidden}, {"init_seed", init_seed}}.dump();
}

ClassifierConfig ClassifierConfig::from_json(const std::string& text) {
  ClassifierConfig c;
  try {
    auto j = json::parse(text);
    c.obs_dim = j.at("obs_dim").get<std::size_t>();
    c.num_tasks = j.at("num_tasks").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("classifier config: ") + e.what());
  }
  c.validate();
  return c;
}

TaskClassifier::TaskClassifier(ClassifierConfig config) : config_(config) {
  config_.validate();
  Rng rng(config_.init_seed);
  const std::size_t widths[] = {2 * config_.obs_dim, config_.hidden, config_.hidden, config_.hidden,
                                config_.num_tasks};
  for (std::size_t l = 0; l < kLayers; ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    std::vector<double> w(in * out);
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : w) v = rng.normal(0.0, sd);
    const std::string name = "fc" + std::to_string(l + 1);
    params_.add(name + ".weight", Tensor::from_data({out, in}, std::move(w), true));
    params_.add(name + ".bias", Tensor::zeros({out}, true));
  }
}

Tensor TaskClassifier::logits(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != 2 * config_.obs_dim) {
    throw ConfigError("classifier: input " + shape_str(x.shape()) + ", expected [B," +
                      std::to_string(2 * config_.obs_dim) + "]");
  }
  Tensor h = x;
  for (std::size_t l = 0; l < kLayers; ++l) {
    const std::string name = "fc" + std::to_string(l + 1);
    h = ops::linear(h, params_.at(name + ".weight"), params_.at(name + ".bias"));
    if (l + 1 < kLayers) h = ops::mish(h);
  }
  return h;
}

namespace {

Tensor stack_inputs(const ProcedureDataset& data, std::span<const std::size_t> rows) {
  const std::size_t o = data.dims.obs_dim;
  std::vector<double> x;
  x.reserve(rows.size() * 2 * o);
  for (auto r : rows) {
    const auto& w = data.windows[r];
    x.insert(x.end(), w.obs_start.begin(), w.obs_start.end());
    x.insert(x.end(), w.obs_goal.begin(), w.obs_goal.end());
  }
  return Tensor::from_data({rows.size(), 2 * o}, std::move(x));
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TaskPrediction predict_task(const TaskClassifier& model, std::span<const double> obs_start,
                            std::span<const double> obs_goal) {
  const std::size_t o = model.config().obs_dim;
  if (obs_start.size() != o || obs_goal.size() != o) {
    throw ConfigError("predict_task: observations of width " + std::to_string(obs_start.size()) + "/" +
                      std::to_string(obs_goal.size()) + ", expected " + std::to_string(o));
  }
  std::vector<double> x(obs_start.begin(), obs_start.end());
  x.insert(x.end(), obs_goal.begin(), obs_goal.end());
  const auto z = model.logits(Tensor::from_data({1, 2 * o}, std::move(x)));
  const auto logits = z.data();
  TaskPrediction p;
  p.label = argmax(logits);
  const double mx = logits[p.label];
  double total = 0.0;
  for (double v : logits) {
    p.probabilities.push_back(std::exp(v - mx));
    total += p.probabilities.back();
  }
  for (auto& v : p.probabilities) v /= total;
  return p;
}

double task_accuracy(const TaskClassifier& model, const ProcedureDataset& data) {
  if (data.windows.empty()) return 0.0;
  std::vector<std::size_t> rows(data.windows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto z = model.logits(stack_inputs(data, rows));
  const std::size_t c = model.config().num_tasks;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) hits += argmax(z.data().subspan(i * c, c)) == data.windows[i].task;
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

TaskClassifier train_task_classifier(const ProcedureDataset& train, const TrainingConfig& cfg,
                                     ClassifierTrainingLog* log, std::size_t hidden) {
  cfg.validate();
  if (train.windows.empty()) throw ConfigError("train_task_classifier: empty training set");
  TaskClassifier model({train.dims.obs_dim, train.dims.num_tasks, hidden, cfg.seed});
  AdamW opt(model.parameters(), 0.9, 0.999, 1e-8, cfg.weight_decay);
  Rng rng = Rng::derive(cfg.seed, 0xC1A55);
  std::vector<std::size_t> rows(cfg.batch_size), labels(cfg.batch_size);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        rows[b] = rng.index(train.windows.size());
        labels[b] = train.windows[rows[b]].task;
      }
      model.parameters().zero_grad();
      auto loss = ops::cross_entropy(model.logits(stack_inputs(train, rows)), labels);
      if (!std::isfinite(loss.item())) {
        throw NumericError("train_task_classifier: non-finite loss at epoch " + std::to_string(epoch + 1) + " step " +
                           std::to_string(step + 1));
      }
      backward(loss);
      opt.step(learning_rate(cfg, epoch, step));
      epoch_loss += loss.item();
    }
    if (log) {
      log->epoch_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(cfg.steps_per_epoch, 1)));
      log->epoch_accuracy.push_back(task_accuracy(model, train));
    }
  }
  return model;
}

}  // namespace actdiff
