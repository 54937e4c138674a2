// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loupe/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "loupe/checkpoint.hpp"
#include "loupe/objective.hpp"

namespace loupe {

namespace {

using json = nlohmann::ordered_json;

constexpr double kInputMean = 0.5;
constexpr double kInputScale = 4.0;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

template <typename T>
TrainResult train_impl(const RunConfig& cfg, const Dataset& data, const TrainOptions& options) {
  namespace fs = std::filesystem;
  const auto start = std::chrono::steady_clock::now();
  ModelState<T> state = build<T>(cfg.model);
  std::vector<Parameter<T>*> params = state.parameters();
  OptimState<T> optim = make_optim_state<T>(params, cfg.optim);

  const std::vector<SyntheticSample> val = prepare_eval(data.val, cfg.eval_transform);
  const std::vector<SyntheticSample> test = prepare_eval(data.test, cfg.eval_transform);

  const fs::path out_dir(cfg.out_dir);
  const fs::path metrics_path = out_dir / "metrics.jsonl";
  const fs::path best_dir = out_dir / "best";
  if (options.write_artifacts) {
    fs::create_directories(out_dir);
    std::ofstream os(metrics_path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + metrics_path.string());
    os << config_json_line(cfg) << '\n';
  }

  TrainResult result;
  ModelState<T> best = state;
  std::vector<double> history;
  const std::size_t n_train = data.train.size();
  const std::size_t batch = cfg.schedule.batch_size;

  for (std::size_t epoch = 0; epoch < cfg.schedule.total_epochs; ++epoch) {
    optim.hp.lr = cosine_lr(epoch, cfg.schedule);
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(mix(cfg.seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0, ce_sum = 0, sparsity_sum = 0;
    for (std::size_t first = 0; first < n_train; first += batch) {
      const std::size_t count = std::min(batch, n_train - first);
      std::vector<SyntheticSample> views;
      views.reserve(count);
      std::vector<int> labels;
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t idx = order[first + i];
        std::mt19937_64 rng(mix(mix(cfg.seed, epoch + 1), idx));
        views.push_back(train_transform(data.train[idx], rng, cfg));
        labels.push_back(views.back().label);
      }
      std::vector<const SyntheticSample*> ptrs;
      for (const auto& v : views) ptrs.push_back(&v);

      Graph<T> g;
      ForwardResult<T> fw = forward(state, g.constant(make_batch<T>(ptrs)));
      CompositeLoss<T> loss = composite_loss(fw.logits, labels, fw.map, cfg.loss);
      g.backward(loss.total);
      lion_step<T>(params, optim);
      state.zero_grad();
      ++state.step;

      const double w = static_cast<double>(count);
      loss_sum += static_cast<double>(loss.total.value()[0]) * w;
      ce_sum += loss.ce * w;
      sparsity_sum += loss.sparsity * w;
    }

    const EvalSummary v = evaluate(state, val, cfg.eval_batch);
    const bool improved = history.empty() || v.accuracy > result.best_val_accuracy;
    history.push_back(v.accuracy);
    if (improved) {
      result.best_val_accuracy = v.accuracy;
      result.best_epoch = epoch + 1;
      best = state;
      if (options.write_artifacts) save_checkpoint(best_dir, best, cfg);
    }

    const bool stop = (epoch + 1 >= cfg.schedule.min_epochs && early_stop(history, cfg.schedule.patience)) ||
                      epoch + 1 == cfg.schedule.total_epochs;
    MetricsRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(n_train);
    rec.train_ce = ce_sum / static_cast<double>(n_train);
    rec.train_sparsity = sparsity_sum / static_cast<double>(n_train);
    rec.val_accuracy = v.accuracy;
    rec.mean_attention_mass = v.mean_attention_mass;
    rec.pointing_hit_rate = v.pointing_hit_rate;
    rec.iou_mean = v.iou_mean;
    rec.lr = optim.hp.lr;
    if (stop) {
      result.test = evaluate(best, test, cfg.eval_batch);
      result.final_test = evaluate(state, test, cfg.eval_batch);
      rec.test_accuracy = result.test.accuracy;
    }
    if (cfg.record_wall_time) {
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    if (options.write_artifacts) {
      std::ofstream os(metrics_path, std::ios::app);
      os << to_json_line(rec) << '\n';
      os.flush();
      if (!os) throw IoError("cannot append to " + metrics_path.string());
    }
    if (options.log) {
      *options.log << "epoch " << rec.epoch << " loss " << rec.train_loss << " ce " << rec.train_ce
                   << " sparsity " << rec.train_sparsity << " val_acc " << rec.val_accuracy;
      if (rec.mean_attention_mass) *options.log << " mass " << *rec.mean_attention_mass << " hit " << *rec.pointing_hit_rate;
      if (rec.test_accuracy) *options.log << " test_acc " << *rec.test_accuracy;
      *options.log << std::endl;
    }
    result.records.push_back(rec);
    if (stop) break;
  }
  return result;
}

}  // namespace

template <typename T>
Tensor<T> make_batch(std::span<const SyntheticSample* const> samples) {
  if (samples.empty()) throw ArgumentError("make_batch: empty batch");
  const std::size_t s = samples.front()->size;
  Tensor<T> out({samples.size(), 3, s, s});
  for (std::size_t n = 0; n < samples.size(); ++n) {
    if (samples[n]->size != s) throw DimensionError("make_batch: mixed image sizes");
    T* dst = out.ptr() + n * 3 * s * s;
    for (std::size_t i = 0; i < 3 * s * s; ++i) {
      dst[i] = static_cast<T>((static_cast<double>(samples[n]->image[i]) - kInputMean) * kInputScale);
    }
  }
  return out;
}

std::vector<SyntheticSample> prepare_eval(std::span<const SyntheticSample> samples, const EvalTransformConfig& cfg) {
  std::vector<SyntheticSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(eval_transform(s, cfg));
  return out;
}

SyntheticSample train_transform(const SyntheticSample& sample, std::mt19937_64& rng, const RunConfig& cfg) {
  return resize(augment(sample, rng, cfg.augment), cfg.model.input_size);
}

template <typename T>
EvalSummary evaluate(ModelState<T>& state, std::span<const SyntheticSample> samples, std::size_t batch_size,
                     std::vector<SampleOutcome>* outcomes) {
  EvalSummary summary;
  summary.count = samples.size();
  if (samples.empty()) return summary;
  if (outcomes) outcomes->assign(samples.size(), {});
  const bool has_map = state.config.loupe_enabled;
  std::size_t correct = 0, hits = 0;
  double mass = 0, iou = 0, border = 0;

  for (std::size_t first = 0; first < samples.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, samples.size() - first);
    std::vector<const SyntheticSample*> ptrs;
    for (std::size_t i = 0; i < count; ++i) ptrs.push_back(&samples[first + i]);
    Graph<T> g(false);
    ForwardResult<T> fw = forward(state, g.constant(make_batch<T>(ptrs)));
    const Tensor<T>& logits = fw.logits.value();
    const std::size_t k = logits.shape().c;
    for (std::size_t i = 0; i < count; ++i) {
      const T* row = logits.ptr() + i * k;
      const int pred = static_cast<int>(std::max_element(row, row + k) - row);
      correct += pred == samples[first + i].label;
      if (outcomes) (*outcomes)[first + i].predicted = pred;
    }
    if (!has_map) continue;

    const Tensor<T>& map = fw.map->value();
    const std::size_t s = samples[first].size;
    const std::size_t hw = map.shape().spatial();
    const Tensor<T> up = upsample_bilinear(map, s, s);
    for (std::size_t i = 0; i < count; ++i) {
      std::span<const T> native = map.data().subspan(i * hw, hw);
      std::span<const T> big = up.data().subspan(i * s * s, s * s);
      double m = 0;
      for (T v : native) m += static_cast<double>(v);
      mass += m / static_cast<double>(hw);
      border += border_mass(native, map.shape().h, map.shape().w);
      const BinaryMask gt(s, s, samples[first + i].mask);
      const bool hit = pointing_game(big, s, s, gt);
      BinaryMask top = top_fraction_mask(big, s, s, kTopFraction);
      const double sample_iou = attention_iou(top, gt);
      hits += hit;
      iou += sample_iou;
      if (outcomes) {
        SampleOutcome& o = (*outcomes)[first + i];
        o.upsampled_map.assign(big.begin(), big.end());
        o.top_mask = std::move(top);
        o.hit = hit;
        o.iou = sample_iou;
      }
    }
  }
  const double n = static_cast<double>(samples.size());
  summary.accuracy = static_cast<double>(correct) / n;
  if (has_map) {
    summary.mean_attention_mass = mass / n;
    summary.pointing_hit_rate = static_cast<double>(hits) / n;
    summary.iou_mean = iou / n;
    summary.border_mass = border / n;
  }
  return summary;
}

std::string to_json_line(const MetricsRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["train_ce"] = r.train_ce;
  j["train_sparsity"] = r.train_sparsity;
  j["val_accuracy"] = r.val_accuracy;
  j["test_accuracy"] = optional_number(r.test_accuracy);
  j["mean_attention_mass"] = optional_number(r.mean_attention_mass);
  j["pointing_hit_rate"] = optional_number(r.pointing_hit_rate);
  j["iou_mean"] = optional_number(r.iou_mean);
  j["lr"] = r.lr;
  j["wall_seconds"] = optional_number(r.wall_seconds);
  return j.dump();
}

std::string config_json_line(const RunConfig& cfg) {
  json inner;
  for (const auto& [k, v] : config_entries(cfg)) inner[k] = v;
  json j;
  j["config"] = inner;
  return j.dump();
}

TrainResult train(const RunConfig& cfg, const Dataset& data, const TrainOptions& options) {
  cfg.validate();
  if (data.train.empty() || data.val.empty() || data.test.empty()) throw ConfigError("data: every split must be non-empty");
  if (data.spec.num_classes != cfg.data.num_classes) throw ConfigError("data.num_classes: dataset has " + std::to_string(data.spec.num_classes));
  if (data.spec.image_size != cfg.data.image_size) throw ConfigError("data.image_size: dataset has " + std::to_string(data.spec.image_size));
  return cfg.precision == Precision::kSingle ? train_impl<float>(cfg, data, options)
                                             : train_impl<double>(cfg, data, options);
}

Dataset load_or_generate(const RunConfig& cfg) {
  if (cfg.data_path.empty()) return generate(cfg.data);
  Dataset d = read_dataset(cfg.data_path);
  const DatasetSpec& a = d.spec;
  const DatasetSpec& b = cfg.data;
  if (a.num_classes != b.num_classes || a.image_size != b.image_size || a.patch_size != b.patch_size) {
    throw ConfigError("data.path: file " + cfg.data_path + " disagrees with data.num_classes/image_size/patch_size");
  }
  d.spec.noise_scale = b.noise_scale;
  return d;
}

template Tensor<float> make_batch<float>(std::span<const SyntheticSample* const>);
template Tensor<double> make_batch<double>(std::span<const SyntheticSample* const>);
template EvalSummary evaluate<float>(ModelState<float>&, std::span<const SyntheticSample>, std::size_t, std::vector<SampleOutcome>*);
template EvalSummary evaluate<double>(ModelState<double>&, std::span<const SyntheticSample>, std::size_t, std::vector<SampleOutcome>*);

}  // namespace loupe
