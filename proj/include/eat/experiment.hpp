#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eat/data.hpp"
#include "eat/energy.hpp"
#include "eat/model.hpp"
#include "eat/trainer.hpp"

namespace eat {

enum class Precision { float64, float32 };

inline const char* to_string(Precision p) {
  return p == Precision::float64 ? "float64" : "float32";
}

inline Precision precision_from_string(const std::string& s) {
  if (s == "float64") return Precision::float64;
  if (s == "float32") return Precision::float32;
  throw ConfigError("unknown precision '" + s + "' (float64 or float32)");
}

// Where training/evaluation data comes from. `synthetic` generates the
// template-plus-noise classification task; `cifar10` reads the stock binary
// batches; `binary` reads exported record files described by a JSON sidecar.
struct DatasetSpec {
  enum class Kind { synthetic, cifar10, binary };
  Kind kind = Kind::synthetic;

  // synthetic
  int num_classes = 4;
  int train_per_class = 100;
  int test_per_class = 50;
  std::vector<int> train_counts;  // optional imbalanced per-class override
  int image_size = 16;
  int channels = 1;
  double noise_std = 0.1;
  std::optional<uint64_t> seed;  // defaults to the experiment seed

  // cifar10 / binary
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;
  size_t max_per_file = 0;  // 0 = all records
  std::string sidecar;      // binary only

  // training-batch augmentation (applies to every training arm identically)
  int crop_padding = 0;
  double max_rotation_degrees = 0.0;

  bool augmented() const {
    return crop_padding > 0 || max_rotation_degrees > 0.0;
  }
};

// Canonical one-line description; paired report runs must agree on it.
std::string dataset_desc(const DatasetSpec& spec, uint64_t resolved_seed);

struct ModelSpec {
  std::string name;
  Shape input_shape;
  std::vector<LayerSpec> layers;
};

struct AblationSpec {
  std::vector<double> sigmas;
  std::vector<double> lambdas;
  int validation_size = 100;
  double accuracy_margin = 3.0;  // percentage points vs the lambda=0 baseline
};

// Full description of one run: everything a command needs, in one file.
struct ExperimentSpec {
  int version = 1;
  std::string name;
  Precision precision = Precision::float64;
  uint64_t seed = 0;
  std::string output_dir;
  ModelSpec model;
  DatasetSpec dataset;
  TrainConfig train;
  CostModel cost;
  std::optional<AblationSpec> ablation;
  bool snapshot_energy = false;  // per-epoch energy ratio in the history
  std::string eval_split = "test";  // split the energy command simulates
  std::vector<std::string> report_formats = {"csv", "json"};

  static ExperimentSpec from_file(const std::string& path);
  static ExperimentSpec from_json_text(const std::string& text);
  void validate() const;

  // "st" when lambda == 0, else "eat" / "sponge" by penalty sign.
  std::string mode() const;
};

// Deterministic dataset construction from a spec. The validation split never
// overlaps the training samples: synthetic draws a fresh noise stream,
// file-backed sources subsample the test split with a seeded pick.
Dataset<double> build_dataset_f64(const DatasetSpec& spec, Split split,
                                  uint64_t default_seed,
                                  int validation_size = 100);

// Commands behind the CLI. `out_dir` overrides spec.output_dir when nonempty.
// All of them throw: ConfigError for bad specs, DivergenceError for numeric
// blowups, IoError for filesystem problems.
void run_train(const ExperimentSpec& spec, const std::string& out_dir);
void run_energy(const ExperimentSpec& spec, const std::string& checkpoint,
                const std::string& out_dir);
void run_ablate(const ExperimentSpec& spec, const std::string& out_dir);
void run_report(const std::vector<std::string>& run_dirs,
                const std::string& out_dir);

}  // namespace eat
