#pragma once

#include <fstream>
#include <string>

#include "eat/data.hpp"

#include "json.hpp"

namespace eat {

// JSON sidecar accompanying an exported binary dataset.
struct DatasetMeta {
  int num_classes = 0;
  int channels = 0;
  int image_size = 0;
  uint64_t seed = 0;
  std::string split = "train";
  size_t count = 0;
};

inline void save_sidecar(const DatasetMeta& meta, const std::string& path) {
  nlohmann::ordered_json j;
  j["format"] = "eat-dataset";
  j["version"] = 1;
  j["num_classes"] = meta.num_classes;
  j["channels"] = meta.channels;
  j["image_size"] = meta.image_size;
  j["seed"] = meta.seed;
  j["split"] = meta.split;
  j["count"] = meta.count;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write sidecar '" + path + "'");
  f << j.dump(2) << "\n";
  if (!f) throw IoError("short write to sidecar '" + path + "'");
}

inline DatasetMeta load_sidecar(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open sidecar '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("sidecar '" + path + "' is not valid JSON: " + e.what());
  }
  try {
    DatasetMeta meta;
    if (j.at("format") != "eat-dataset") {
      throw IoError("sidecar '" + path + "' has unknown format");
    }
    meta.num_classes = j.at("num_classes").get<int>();
    meta.channels = j.at("channels").get<int>();
    meta.image_size = j.at("image_size").get<int>();
    meta.seed = j.value("seed", 0ull);
    meta.split = j.value("split", "train");
    meta.count = j.value("count", size_t(0));
    return meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("sidecar '" + path + "' is missing fields: " + e.what());
  }
}

// Binary records (same layout as the CIFAR-10 loader consumes) plus sidecar.
template <class S>
void save_dataset(const Dataset<S>& ds, const std::string& data_path,
                  const std::string& sidecar_path, uint64_t seed = 0) {
  const Shape shape = ds.sample_shape();
  if (shape.size() != 3 || shape[1] != shape[2]) {
    throw ConfigError("save_dataset expects square [channels, n, n] samples");
  }
  save_records(ds, data_path);
  DatasetMeta meta;
  meta.num_classes = ds.num_classes;
  meta.channels = static_cast<int>(shape[0]);
  meta.image_size = static_cast<int>(shape[1]);
  meta.seed = seed;
  meta.split = to_string(ds.split);
  meta.count = ds.size();
  save_sidecar(meta, sidecar_path);
}

template <class S>
Dataset<S> load_dataset(const std::string& data_path,
                        const std::string& sidecar_path,
                        size_t max_records = 0) {
  const DatasetMeta meta = load_sidecar(sidecar_path);
  return load_records<S>({data_path}, meta.channels, meta.image_size,
                         meta.image_size, meta.num_classes,
                         split_from_string(meta.split), max_records);
}

}  // namespace eat
