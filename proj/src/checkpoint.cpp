// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loupe/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace loupe {

namespace {

std::string read_all(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_all(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  os.flush();
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  write_all(tmp, contents);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const ModelState<T>& state, const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::path old = dir;
  old += ".old";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp, ec);
  if (ec) throw IoError("checkpoint: cannot create " + tmp.string() + ": " + ec.message());

  std::string manifest = "loupe-checkpoint 1\nstep " + std::to_string(state.step) + "\n";
  std::string blob;
  for (const Parameter<T>* p : state.parameters()) {
    const Shape s = p->value.shape();
    manifest += "param " + p->name + " " + std::to_string(s.n) + " " + std::to_string(s.c) + " " +
                std::to_string(s.h) + " " + std::to_string(s.w) + " " + std::to_string(blob.size()) + "\n";
    for (T v : p->value.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
  write_all(tmp / "config.txt", to_text(cfg));
  write_all(tmp / "manifest.txt", manifest);
  write_all(tmp / "params.bin", blob);

  fs::remove_all(old, ec);
  if (fs::exists(dir)) {
    fs::rename(dir, old, ec);
    if (ec) throw IoError("checkpoint: cannot move aside " + dir.string() + ": " + ec.message());
  }
  fs::rename(tmp, dir, ec);
  if (ec) throw IoError("checkpoint: cannot publish " + dir.string() + ": " + ec.message());
  fs::remove_all(old, ec);
}

RunConfig read_checkpoint_config(const std::filesystem::path& dir) {
  return parse_config(read_all(dir / "config.txt"));
}

template <typename T>
ModelState<T> load_checkpoint(const std::filesystem::path& dir) {
  const RunConfig cfg = read_checkpoint_config(dir);
  ModelState<T> state = build<T>(cfg.model);
  const std::string blob = read_all(dir / "params.bin");
  std::istringstream manifest(read_all(dir / "manifest.txt"));

  std::string header;
  std::getline(manifest, header);
  if (header != "loupe-checkpoint 1") throw IoError("checkpoint: unsupported manifest header '" + header + "'");

  std::vector<Parameter<T>*> params = state.parameters();
  std::size_t next = 0;
  std::string mismatches;
  std::string word;
  while (manifest >> word) {
    if (word == "step") {
      manifest >> state.step;
      continue;
    }
    if (word != "param") throw IoError("checkpoint: unexpected manifest entry '" + word + "'");
    std::string name;
    Shape s;
    std::size_t offset = 0;
    manifest >> name >> s.n >> s.c >> s.h >> s.w >> offset;
    if (!manifest) throw IoError("checkpoint: malformed manifest line for " + name);
    if (next >= params.size()) {
      mismatches += "  unexpected " + name + " " + s.str() + "\n";
      continue;
    }
    Parameter<T>& p = *params[next++];
    if (p.name != name || p.value.shape() != s) {
      mismatches += "  " + name + " " + s.str() + " vs configured " + p.name + " " + p.value.shape().str() + "\n";
      continue;
    }
    if (offset + 4 * s.size() > blob.size()) throw IoError("checkpoint: blob too short for " + name);
    for (std::size_t i = 0; i < s.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + 4 * i + b])) << (8 * b);
      }
      p.value[i] = static_cast<T>(std::bit_cast<float>(bits));
    }
  }
  for (; next < params.size(); ++next) {
    mismatches += "  missing " + params[next]->name + " " + params[next]->value.shape().str() + "\n";
  }
  if (!mismatches.empty()) {
    throw CompatibilityError("checkpoint " + dir.string() + " does not match its configuration:\n" + mismatches);
  }
  return state;
}

template void save_checkpoint<float>(const std::filesystem::path&, const ModelState<float>&, const RunConfig&);
template void save_checkpoint<double>(const std::filesystem::path&, const ModelState<double>&, const RunConfig&);
template ModelState<float> load_checkpoint<float>(const std::filesystem::path&);
template ModelState<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace loupe
