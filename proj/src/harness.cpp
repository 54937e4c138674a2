// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loupe/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "loupe/checkpoint.hpp"
#include "loupe/objective.hpp"

namespace loupe {

namespace {

using json = nlohmann::ordered_json;

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string lambda_dir_name(double lambda) {
  std::ostringstream os;
  os << "lambda_" << lambda;
  return os.str();
}

template <typename T>
EvalSummary evaluate_split(const std::filesystem::path& dir, const Dataset& data, Split split,
                           std::optional<std::uint64_t> shuffle_seed) {
  const RunConfig cfg = read_checkpoint_config(dir);
  ModelState<T> state = load_checkpoint<T>(dir);
  std::vector<SyntheticSample> samples =
      prepare_eval(split == Split::kVal ? data.val : data.test, cfg.eval_transform);
  if (shuffle_seed) {
    std::vector<int> labels;
    for (const auto& s : samples) labels.push_back(s.label);
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i].label = labels[i];
  }
  return evaluate(state, samples, cfg.eval_batch);
}

}  // namespace

GradCheckOutcome run_gradcheck(const RunConfig& cfg, const Dataset& data, std::size_t batch,
                               const GradCheckOptions& options) {
  cfg.validate();
  if (batch == 0 || batch > data.train.size()) throw ArgumentError("gradcheck: batch must be in [1, n_train]");
  ModelState<double> state = build<double>(cfg.model);
  if (cfg.model.loupe_enabled) {
    std::mt19937_64 rng(cfg.seed ^ 0xA5A5A5A5ULL);
    std::normal_distribution<double> dist(0.0, 0.5);
    for (double& v : state.loupe.w2.value.data()) v = dist(rng);
    for (double& v : state.loupe.b2.value.data()) v = dist(rng);
  }

  std::vector<SyntheticSample> views = prepare_eval(std::span(data.train).first(batch), cfg.eval_transform);
  std::vector<const SyntheticSample*> ptrs;
  std::vector<int> labels;
  for (const auto& v : views) {
    ptrs.push_back(&v);
    labels.push_back(v.label);
  }
  const Tensor<double> images = make_batch<double>(ptrs);

  auto objective = [&](bool with_backward) {
    Graph<double> g(with_backward);
    g.track_kinks(true);
    ForwardResult<double> fw = forward(state, g.constant(images));
    CompositeLoss<double> loss = composite_loss(fw.logits, labels, fw.map, cfg.loss);
    if (with_backward) g.backward(loss.total);
    return GradCheckEval{loss.total.value()[0], g.kink_signature()};
  };

  state.zero_grad();
  objective(true);
  std::vector<Parameter<double>*> params = state.parameters();
  GradCheckOutcome out;
  out.report = grad_check(std::function<GradCheckEval()>([&] { return objective(false); }), params, options);
  out.loupe_checked = cfg.model.loupe_enabled &&
                      std::count(out.report.checked_params.begin(), out.report.checked_params.end(), "loupe.w1") &&
                      std::count(out.report.checked_params.begin(), out.report.checked_params.end(), "loupe.w2");
  out.passed = out.report.max_rel_err < kGradCheckTolerance && out.report.coordinates >= options.min_coordinates;
  return out;
}

EvalSummary evaluate_checkpoint(const std::filesystem::path& dir, const Dataset& data, Split split,
                                std::optional<std::uint64_t> shuffle_seed) {
  const RunConfig cfg = read_checkpoint_config(dir);
  return cfg.precision == Precision::kSingle ? evaluate_split<float>(dir, data, split, shuffle_seed)
                                             : evaluate_split<double>(dir, data, split, shuffle_seed);
}

std::string summary_json(const EvalSummary& s) {
  json j;
  j["count"] = s.count;
  j["accuracy"] = s.accuracy;
  j["mean_attention_mass"] = optional_number(s.mean_attention_mass);
  j["pointing_hit_rate"] = optional_number(s.pointing_hit_rate);
  j["iou_mean"] = optional_number(s.iou_mean);
  j["border_mass"] = optional_number(s.border_mass);
  return j.dump();
}

std::vector<TrainResult> train_many(const std::vector<RunConfig>& configs, const Dataset& data, std::size_t jobs,
                                    bool write_artifacts, std::ostream* log) {
  std::vector<TrainResult> results(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        results[i] = train(configs[i], data, {write_artifacts, nullptr});
        if (log) {
          std::lock_guard lock(log_mutex);
          *log << configs[i].out_dir << ": epochs " << results[i].records.size() << " best_val "
               << results[i].best_val_accuracy << " test " << results[i].test.accuracy << std::endl;
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(1, configs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::vector<SweepRow> run_sweep(const RunConfig& base, const Dataset& data, const SweepOptions& options) {
  if (options.lambdas.empty() || options.seeds.empty()) throw ArgumentError("sweep: need at least one lambda and one seed");
  if (!base.model.loupe_enabled) throw ConfigError("model.loupe: sweep requires the attention module");
  std::vector<RunConfig> configs;
  for (double lambda : options.lambdas) {
    for (std::uint64_t seed : options.seeds) {
      RunConfig c = base;
      c.loss.lambda = lambda;
      c.seed = seed;
      c.out_dir = (std::filesystem::path(base.out_dir) / lambda_dir_name(lambda) / ("seed_" + std::to_string(seed))).string();
      c.resolve();
      configs.push_back(std::move(c));
    }
  }
  const std::vector<TrainResult> results = train_many(configs, data, options.jobs, options.write_artifacts, options.log);
  std::vector<SweepRow> rows;
  std::size_t i = 0;
  for (double lambda : options.lambdas) {
    SweepRow row;
    row.lambda = lambda;
    for (std::size_t s = 0; s < options.seeds.size(); ++s, ++i) {
      const EvalSummary& t = results[i].test;
      row.accuracy.push_back(t.accuracy);
      row.mass.push_back(results[i].final_test.mean_attention_mass.value_or(0.0));
      row.checkpoint_mass.push_back(t.mean_attention_mass.value_or(0.0));
      row.hit_rate.push_back(t.pointing_hit_rate.value_or(0.0));
      row.iou.push_back(t.iou_mean.value_or(0.0));
    }
    rows.push_back(std::move(row));
  }
  if (options.write_artifacts) {
    write_file_atomic(std::filesystem::path(base.out_dir) / "sweep.tsv", sweep_table(rows));
  }
  return rows;
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "lambda\truns\tacc_mean\tacc_sd\tmass_mean\tmass_sd\thit_mean\tiou_mean\tckpt_mass_mean\n";
  os << std::setprecision(6);
  for (const SweepRow& r : rows) {
    os << r.lambda << '\t' << r.accuracy.size() << '\t' << mean(r.accuracy) << '\t' << stddev(r.accuracy) << '\t'
       << mean(r.mass) << '\t' << stddev(r.mass) << '\t' << mean(r.hit_rate) << '\t' << mean(r.iou) << '\t'
       << mean(r.checkpoint_mass) << '\n';
  }
  return os.str();
}

VizSummary run_viz(const std::filesystem::path& checkpoint, const Dataset& data, std::size_t count,
                   const std::filesystem::path& out_dir) {
  const RunConfig cfg = read_checkpoint_config(checkpoint);
  if (!cfg.model.loupe_enabled) throw ContractError("viz: checkpoint has no attention module");
  ModelState<float> state = load_checkpoint<float>(checkpoint);
  count = std::min(count, data.test.size());
  const std::vector<SyntheticSample> samples =
      prepare_eval(std::span(data.test).first(count), cfg.eval_transform);

  std::vector<SampleOutcome> outcomes;
  VizSummary summary;
  summary.metrics = evaluate(state, samples, cfg.eval_batch, &outcomes);
  std::filesystem::create_directories(out_dir);
  std::ostringstream sidecar;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SyntheticSample& s = samples[i];
    const SampleOutcome& o = outcomes[i];
    const ContourSet contours = trace_contours(o.top_mask);
    std::ostringstream name;
    name << "sample_" << std::setw(4) << std::setfill('0') << i << ".ppm";
    overlay_write(s.image, s.size, s.size, contours, out_dir / name.str());
    json j;
    j["file"] = name.str();
    j["label"] = s.label;
    j["predicted"] = o.predicted;
    j["hit"] = o.hit;
    j["iou"] = o.iou;
    j["mask_pixels"] = o.top_mask.popcount();
    j["contours"] = contours.contours.size();
    j["contour_length"] = contours.total_length();
    sidecar << j.dump() << '\n';
  }
  write_file_atomic(out_dir / "viz_metrics.jsonl", sidecar.str());
  summary.written = samples.size();
  return summary;
}

}  // namespace loupe
