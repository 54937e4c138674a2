// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loupe/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace loupe {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  // strtod accepts every notation we write out (fixed and exponent forms).
  std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError(std::string(key) + ": expected a real number, got '" + s + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

std::string fmt_real(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define UINT_FIELD(KEY, MEMBER)                                                                        \
  Field {                                                                                              \
    KEY, [](RunConfig& c, std::string_view k, std::string_view v) { c.MEMBER = parse_uint(k, v); },    \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }                                    \
  }
#define REAL_FIELD(KEY, MEMBER)                                                                        \
  Field {                                                                                              \
    KEY, [](RunConfig& c, std::string_view k, std::string_view v) { c.MEMBER = parse_real(k, v); },    \
        [](const RunConfig& c) { return fmt_real(c.MEMBER); }                                          \
  }
#define BOOL_FIELD(KEY, MEMBER)                                                                        \
  Field {                                                                                              \
    KEY, [](RunConfig& c, std::string_view k, std::string_view v) { c.MEMBER = parse_bool(k, v); },    \
        [](const RunConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }                    \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      UINT_FIELD("data.num_classes", data.num_classes),
      UINT_FIELD("data.image_size", data.image_size),
      UINT_FIELD("data.patch_size", data.patch_size),
      UINT_FIELD("data.n_train", data.n_train),
      UINT_FIELD("data.n_val", data.n_val),
      UINT_FIELD("data.n_test", data.n_test),
      REAL_FIELD("data.noise_scale", data.noise_scale),
      UINT_FIELD("data.seed", data.seed),
      Field{"data.path", [](RunConfig& c, std::string_view, std::string_view v) { c.data_path = std::string(v); },
            [](const RunConfig& c) { return c.data_path; }},
      UINT_FIELD("data.crop_size", augment.crop_size),
      REAL_FIELD("data.flip_prob", augment.flip_prob),
      UINT_FIELD("data.resize_to", eval_transform.resize_to),
      UINT_FIELD("data.center_crop", eval_transform.center_crop),
      UINT_FIELD("model.input_size", model.input_size),
      UINT_FIELD("model.patch_size", model.patch_size),
      UINT_FIELD("model.base_channels", model.base_channels),
      Field{"model.blocks_per_stage",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              std::array<std::size_t, 4> out{};
              std::size_t i = 0;
              while (true) {
                const auto comma = v.find(',');
                if (i >= 4) throw ConfigError(std::string(k) + ": expected four comma-separated integers");
                out[i++] = parse_uint(k, trim(v.substr(0, comma)));
                if (comma == std::string_view::npos) break;
                v.remove_prefix(comma + 1);
              }
              if (i != 4) throw ConfigError(std::string(k) + ": expected four comma-separated integers");
              c.model.blocks_per_stage = out;
            },
            [](const RunConfig& c) {
              const auto& b = c.model.blocks_per_stage;
              return std::to_string(b[0]) + "," + std::to_string(b[1]) + "," + std::to_string(b[2]) + "," +
                     std::to_string(b[3]);
            }},
      BOOL_FIELD("model.loupe", model.loupe_enabled),
      UINT_FIELD("model.insertion_stage", model.insertion_stage),
      REAL_FIELD("loss.lambda", loss.lambda),
      Field{"loss.l1_mode",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              if (v == "sum_per_sample") c.loss.l1_mode = L1Mode::kSumPerSample;
              else if (v == "mean_per_element") c.loss.l1_mode = L1Mode::kMeanPerElement;
              else throw ConfigError(std::string(k) + ": expected sum_per_sample or mean_per_element, got '" + std::string(v) + "'");
            },
            [](const RunConfig& c) { return to_string(c.loss.l1_mode); }},
      REAL_FIELD("optim.lr", optim.lr),
      REAL_FIELD("optim.weight_decay", optim.weight_decay),
      REAL_FIELD("optim.beta1", optim.beta1),
      REAL_FIELD("optim.beta2", optim.beta2),
      UINT_FIELD("schedule.epochs", schedule.total_epochs),
      UINT_FIELD("schedule.patience", schedule.patience),
      UINT_FIELD("schedule.min_epochs", schedule.min_epochs),
      UINT_FIELD("schedule.batch_size", schedule.batch_size),
      REAL_FIELD("schedule.min_lr", schedule.min_lr),
      UINT_FIELD("run.seed", seed),
      Field{"run.out_dir", [](RunConfig& c, std::string_view, std::string_view v) { c.out_dir = std::string(v); },
            [](const RunConfig& c) { return c.out_dir; }},
      Field{"run.precision",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              if (v == "single") c.precision = Precision::kSingle;
              else if (v == "double") c.precision = Precision::kDouble;
              else throw ConfigError(std::string(k) + ": expected single or double, got '" + std::string(v) + "'");
            },
            [](const RunConfig& c) { return to_string(c.precision); }},
      BOOL_FIELD("run.record_wall_time", record_wall_time),
      UINT_FIELD("run.eval_batch", eval_batch),
  };
  return table;
}

#undef UINT_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD

}  // namespace

std::string to_string(Precision p) { return p == Precision::kSingle ? "single" : "double"; }
std::string to_string(L1Mode m) { return m == L1Mode::kSumPerSample ? "sum_per_sample" : "mean_per_element"; }

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(cfg, key, trim(value));
      return;
    }
  }
  throw ConfigError(std::string(key) + ": unknown configuration key");
}

void RunConfig::resolve() {
  model.seed = seed;
  model.num_classes = data.num_classes;
  schedule.base_lr = optim.lr;
  validate();
}

void RunConfig::validate() const {
  data.validate();
  model.validate();
  loss.validate();
  schedule.validate();
  if (model.num_classes != data.num_classes) throw ConfigError("model.num_classes: must equal data.num_classes");
  if (augment.crop_size == 0 || augment.crop_size > data.image_size) {
    throw ConfigError("data.crop_size: must lie in [1, data.image_size]");
  }
  if (augment.crop_size < data.patch_size) throw ConfigError("data.crop_size: smaller than data.patch_size");
  if (!(augment.flip_prob >= 0.0 && augment.flip_prob <= 1.0)) throw ConfigError("data.flip_prob: must lie in [0, 1]");
  if (eval_transform.center_crop > eval_transform.resize_to) {
    throw ConfigError("data.center_crop: exceeds data.resize_to");
  }
  if (eval_transform.center_crop != model.input_size) {
    throw ConfigError("model.input_size: must equal data.center_crop (" + std::to_string(eval_transform.center_crop) + ")");
  }
  if (!(optim.weight_decay >= 0.0)) throw ConfigError("optim.weight_decay: must be non-negative");
  if (!(optim.beta1 >= 0.0 && optim.beta1 <= 1.0)) throw ConfigError("optim.beta1: must lie in [0, 1]");
  if (!(optim.beta2 >= 0.0 && optim.beta2 <= 1.0)) throw ConfigError("optim.beta2: must lie in [0, 1]");
  if (eval_batch == 0) throw ConfigError("run.eval_batch: must be positive");
  if (out_dir.empty()) throw ConfigError("run.out_dir: must not be empty");
}

RunConfig parse_config(std::string_view text, const RunConfig& base) {
  RunConfig cfg = base;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  cfg.resolve();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace loupe
