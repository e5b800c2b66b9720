#pragma once

// On-disk dataset layout, mirroring the conventions of public temporal
// action segmentation corpora so external feature/label files drop in
// unchanged:
//
//   root/mapping.txt           "id<space>name" per line
//   root/groundTruth/<id>.txt  one class name per line per frame
//   root/features/<id>.bin     binary feature file (see serialize.hpp)
//
// Plus a small "key = value" text config format used by the generator, the
// training pipeline and the CLI.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tseg/data.hpp"
#include "tseg/serialize.hpp"
#include "tseg/synthetic.hpp"

namespace tseg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Key-value config files
// ---------------------------------------------------------------------------

class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse_text(const std::string& text) {
    KeyValueFile kv;
    std::istringstream is(text);
    std::string line;
    long lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        contract_fail("config: line " + std::to_string(lineno) + " is not 'key = value': " + line);
      kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValueFile parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_text(buf.str());
  }

  bool has(const std::string& key) const {
    for (auto& [k, v] : items_)
      if (k == key) return true;
    return false;
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    for (auto& [k, v] : items_)
      if (k == key) return v;
    return fallback;
  }

  long get_long(const std::string& key, long fallback) const {
    if (!has(key)) return fallback;
    return std::stol(get(key, ""));
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return std::stod(get(key, ""));
  }

  uint64_t get_u64(const std::string& key, uint64_t fallback) const {
    if (!has(key)) return fallback;
    return std::stoull(get(key, ""));
  }

  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : items_)
      if (k == key) {
        v = value;
        return;
      }
    items_.emplace_back(key, value);
  }

  void set_long(const std::string& key, long v) { set(key, std::to_string(v)); }
  void set_double(const std::string& key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    set(key, buf);
  }
  void set_u64(const std::string& key, uint64_t v) { set(key, std::to_string(v)); }

  std::string to_text() const {
    std::ostringstream os;
    for (auto& [k, v] : items_) os << k << " = " << v << "\n";
    return os.str();
  }

  void write_file(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write config file: " + path);
    os << to_text();
  }

  // Order-independent content hash, recorded in artifacts.
  uint64_t hash() const {
    std::vector<std::string> lines;
    for (auto& [k, v] : items_) lines.push_back(k + "=" + v);
    std::sort(lines.begin(), lines.end());
    uint64_t h = 0xcbf29ce484222325ULL;
    for (auto& l : lines) h = fnv1a64(l + "\n", h);
    return h;
  }

  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

// ---------------------------------------------------------------------------
// Class mapping and label files
// ---------------------------------------------------------------------------

inline void write_mapping(const std::string& path, const std::vector<std::string>& names) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write mapping file: " + path);
  for (size_t i = 0; i < names.size(); ++i) os << i << " " << names[i] << "\n";
}

inline std::vector<std::string> read_mapping(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open mapping file: " + path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw std::runtime_error("bad mapping line: " + line);
    const long id = std::stol(line.substr(0, sp));
    if (id != static_cast<long>(names.size()))
      throw std::runtime_error("mapping ids must be dense and ordered: " + line);
    names.push_back(line.substr(sp + 1));
  }
  return names;
}

inline void write_label_file(const std::string& path, const LabelSequence& labels,
                             const std::vector<std::string>& names) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write label file: " + path);
  for (int l : labels) {
    if (l < 0 || l >= static_cast<int>(names.size()))
      contract_fail("label id out of range for mapping: " + std::to_string(l));
    os << names[static_cast<size_t>(l)] << "\n";
  }
}

inline LabelSequence read_label_file(const std::string& path,
                                     const std::vector<std::string>& names) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open label file: " + path);
  std::map<std::string, int> lookup;
  for (size_t i = 0; i < names.size(); ++i) lookup[names[i]] = static_cast<int>(i);
  LabelSequence out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto it = lookup.find(line);
    if (it == lookup.end()) throw std::runtime_error("unknown class name in " + path + ": " + line);
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole-dataset read/write
// ---------------------------------------------------------------------------

inline void write_dataset(const std::string& root, const std::vector<VideoRecord>& videos,
                          const std::vector<std::string>& class_names) {
  fs::create_directories(fs::path(root) / "groundTruth");
  fs::create_directories(fs::path(root) / "features");
  write_mapping((fs::path(root) / "mapping.txt").string(), class_names);
  for (auto& v : videos) {
    write_label_file((fs::path(root) / "groundTruth" / (v.id + ".txt")).string(), v.labels,
                     class_names);
    write_features((fs::path(root) / "features" / (v.id + ".bin")).string(), v.frames,
                   v.feature_dim, v.features);
  }
}

inline std::vector<std::string> list_video_ids(const std::string& root) {
  std::vector<std::string> ids;
  const fs::path gt = fs::path(root) / "groundTruth";
  if (!fs::exists(gt)) throw std::runtime_error("dataset has no groundTruth directory: " + root);
  for (auto& e : fs::directory_iterator(gt))
    if (e.path().extension() == ".txt") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<VideoRecord> videos;

  const VideoRecord* find(const std::string& id) const {
    for (auto& v : videos)
      if (v.id == id) return &v;
    return nullptr;
  }
};

inline Dataset read_dataset(const std::string& root) {
  Dataset ds;
  ds.class_names = read_mapping((fs::path(root) / "mapping.txt").string());
  for (auto& id : list_video_ids(root)) {
    VideoRecord v;
    v.id = id;
    v.labels = read_label_file((fs::path(root) / "groundTruth" / (id + ".txt")).string(),
                               ds.class_names);
    read_features((fs::path(root) / "features" / (id + ".bin")).string(), v.frames, v.feature_dim,
                  v.features);
    if (v.frames != static_cast<long>(v.labels.size()))
      throw std::runtime_error("feature/label length mismatch for video " + id + ": " +
                               std::to_string(v.frames) + " vs " +
                               std::to_string(v.labels.size()));
    ds.videos.push_back(std::move(v));
  }
  return ds;
}

inline GeneratorConfig generator_config_from(const KeyValueFile& kv) {
  GeneratorConfig cfg;
  cfg.classes = kv.get_long("classes", cfg.classes);
  cfg.videos = kv.get_long("videos", cfg.videos);
  cfg.feature_dim = kv.get_long("feature_dim", cfg.feature_dim);
  cfg.mean_frames = kv.get_double("mean_frames", cfg.mean_frames);
  cfg.mean_instances = kv.get_double("mean_instances", cfg.mean_instances);
  cfg.noise_scale = kv.get_double("noise_scale", cfg.noise_scale);
  cfg.noise_rho = kv.get_double("noise_rho", cfg.noise_rho);
  cfg.p_advance = kv.get_double("p_advance", cfg.p_advance);
  cfg.p_skip = kv.get_double("p_skip", cfg.p_skip);
  cfg.p_back = kv.get_double("p_back", cfg.p_back);
  cfg.seed = kv.get_u64("seed", cfg.seed);
  return cfg;
}

inline KeyValueFile generator_config_to_kv(const GeneratorConfig& cfg) {
  KeyValueFile kv;
  kv.set_long("classes", cfg.classes);
  kv.set_long("videos", cfg.videos);
  kv.set_long("feature_dim", cfg.feature_dim);
  kv.set_double("mean_frames", cfg.mean_frames);
  kv.set_double("mean_instances", cfg.mean_instances);
  kv.set_double("noise_scale", cfg.noise_scale);
  kv.set_double("noise_rho", cfg.noise_rho);
  kv.set_double("p_advance", cfg.p_advance);
  kv.set_double("p_skip", cfg.p_skip);
  kv.set_double("p_back", cfg.p_back);
  kv.set_u64("seed", cfg.seed);
  return kv;
}

}  // namespace tseg
