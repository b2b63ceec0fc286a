#include "eat/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "eat/checkpoint.hpp"
#include "eat/dataset_io.hpp"

#include "json.hpp"

namespace eat {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Spec parsing. Unknown keys are rejected so typos fail before any training.
// ---------------------------------------------------------------------------

void check_keys(const json& j, const std::string& context,
                const std::set<std::string>& allowed) {
  if (!j.is_object()) {
    throw ConfigError("spec: " + context + " must be an object");
  }
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("spec: unknown key '" + key + "' in " + context);
    }
  }
}

template <class T>
T get_field(const json& j, const std::string& context, const std::string& key) {
  if (!j.contains(key)) {
    throw ConfigError("spec: " + context + " is missing '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("spec: " + context + "." + key + " has the wrong type");
  }
}

template <class T>
T get_field_or(const json& j, const std::string& context,
               const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("spec: " + context + "." + key + " has the wrong type");
  }
}

LayerSpec parse_layer(const json& j, size_t index) {
  const std::string context = "model.layers[" + std::to_string(index) + "]";
  const std::string kind_str = get_field<std::string>(j, context, "kind");
  LayerSpec l;
  l.kind = layer_kind_from_string(kind_str);
  switch (l.kind) {
    case LayerKind::dense:
      check_keys(j, context, {"kind", "out_features", "in_features"});
      l.out_features = get_field<size_t>(j, context, "out_features");
      l.in_features = get_field_or<size_t>(j, context, "in_features", 0);
      break;
    case LayerKind::conv2d:
      check_keys(j, context,
                 {"kind", "out_channels", "kernel", "stride", "padding",
                  "in_channels"});
      l.out_channels = get_field<size_t>(j, context, "out_channels");
      l.kernel = get_field<size_t>(j, context, "kernel");
      l.stride = get_field_or<size_t>(j, context, "stride", 1);
      l.padding = get_field_or<size_t>(j, context, "padding", 0);
      l.in_channels = get_field_or<size_t>(j, context, "in_channels", 0);
      break;
    case LayerKind::maxpool2d:
      check_keys(j, context, {"kind", "window", "stride"});
      l.window = get_field<size_t>(j, context, "window");
      l.stride = get_field_or<size_t>(j, context, "stride", l.window);
      break;
    case LayerKind::relu:
    case LayerKind::flatten:
      check_keys(j, context, {"kind"});
      break;
  }
  return l;
}

PenaltyConfig parse_penalty(const json& j) {
  check_keys(j, "train.penalty",
             {"lambda", "sigma", "sign", "normalize_by", "layer_kinds",
              "include_final_layer"});
  PenaltyConfig p;
  p.lambda = get_field_or<double>(j, "train.penalty", "lambda", 0.0);
  p.sigma = get_field_or<double>(j, "train.penalty", "sigma", 1e-4);
  p.sign = get_field_or<int>(j, "train.penalty", "sign", +1);
  p.normalize_by = normalize_by_from_string(get_field_or<std::string>(
      j, "train.penalty", "normalize_by", "parameter_count"));
  if (j.contains("layer_kinds")) {
    for (const auto& k : get_field<std::vector<std::string>>(j, "train.penalty",
                                                             "layer_kinds")) {
      p.layer_filter.kinds.push_back(layer_kind_from_string(k));
    }
  }
  p.layer_filter.include_final_layer =
      get_field_or<bool>(j, "train.penalty", "include_final_layer", false);
  p.validate();
  return p;
}

TrainConfig parse_train(const json& j, uint64_t default_seed) {
  check_keys(j, "train",
             {"epochs", "lr_initial", "lr_decay", "momentum", "weight_decay",
              "batch_size", "penalty", "seed", "shuffle"});
  TrainConfig cfg;
  cfg.epochs = get_field<int>(j, "train", "epochs");
  cfg.lr_initial = get_field_or<double>(j, "train", "lr_initial", 0.1);
  cfg.lr_decay = get_field_or<double>(j, "train", "lr_decay", 0.95);
  cfg.momentum = get_field_or<double>(j, "train", "momentum", 0.9);
  cfg.weight_decay = get_field_or<double>(j, "train", "weight_decay", 5e-4);
  cfg.batch_size = get_field_or<int>(j, "train", "batch_size", 32);
  cfg.seed = get_field_or<uint64_t>(j, "train", "seed", default_seed);
  cfg.shuffle = get_field_or<bool>(j, "train", "shuffle", true);
  if (j.contains("penalty")) cfg.penalty = parse_penalty(j.at("penalty"));
  cfg.validate();
  return cfg;
}

DatasetSpec parse_dataset(const json& j) {
  check_keys(j, "dataset",
             {"kind", "num_classes", "train_per_class", "test_per_class",
              "train_counts", "image_size", "channels", "noise_std", "seed",
              "train_files", "test_files", "max_per_file", "sidecar",
              "crop_padding", "max_rotation_degrees"});
  DatasetSpec d;
  const std::string kind = get_field_or<std::string>(j, "dataset", "kind",
                                                     "synthetic");
  if (kind == "synthetic") {
    d.kind = DatasetSpec::Kind::synthetic;
  } else if (kind == "cifar10") {
    d.kind = DatasetSpec::Kind::cifar10;
  } else if (kind == "binary") {
    d.kind = DatasetSpec::Kind::binary;
  } else {
    throw ConfigError("spec: unknown dataset kind '" + kind + "'");
  }
  d.num_classes = get_field_or<int>(j, "dataset", "num_classes", 4);
  d.train_per_class = get_field_or<int>(j, "dataset", "train_per_class", 100);
  d.test_per_class = get_field_or<int>(j, "dataset", "test_per_class", 50);
  d.train_counts =
      get_field_or<std::vector<int>>(j, "dataset", "train_counts", {});
  d.image_size = get_field_or<int>(j, "dataset", "image_size", 16);
  d.channels = get_field_or<int>(j, "dataset", "channels", 1);
  d.noise_std = get_field_or<double>(j, "dataset", "noise_std", 0.1);
  if (j.contains("seed")) {
    d.seed = get_field<uint64_t>(j, "dataset", "seed");
  }
  d.train_files =
      get_field_or<std::vector<std::string>>(j, "dataset", "train_files", {});
  d.test_files =
      get_field_or<std::vector<std::string>>(j, "dataset", "test_files", {});
  d.max_per_file = get_field_or<size_t>(j, "dataset", "max_per_file", 0);
  d.sidecar = get_field_or<std::string>(j, "dataset", "sidecar", "");
  d.crop_padding = get_field_or<int>(j, "dataset", "crop_padding", 0);
  d.max_rotation_degrees =
      get_field_or<double>(j, "dataset", "max_rotation_degrees", 0.0);
  return d;
}

void validate_dataset(const DatasetSpec& d) {
  switch (d.kind) {
    case DatasetSpec::Kind::synthetic:
      if (d.num_classes < 1) {
        throw ConfigError("spec: dataset.num_classes must be >= 1");
      }
      if (!d.train_counts.empty() &&
          d.train_counts.size() != static_cast<size_t>(d.num_classes)) {
        throw ConfigError("spec: dataset.train_counts must list one count per class");
      }
      if (d.train_per_class < 1 && d.train_counts.empty()) {
        throw ConfigError("spec: dataset.train_per_class must be >= 1");
      }
      if (d.test_per_class < 1) {
        throw ConfigError("spec: dataset.test_per_class must be >= 1");
      }
      if (d.image_size < 8) {
        throw ConfigError("spec: dataset.image_size must be >= 8");
      }
      if (d.noise_std < 0.0) {
        throw ConfigError("spec: dataset.noise_std must be >= 0");
      }
      break;
    case DatasetSpec::Kind::cifar10:
      if (d.train_files.empty() && d.test_files.empty()) {
        throw ConfigError("spec: cifar10 dataset needs train_files/test_files");
      }
      break;
    case DatasetSpec::Kind::binary:
      if (d.sidecar.empty()) {
        throw ConfigError("spec: binary dataset needs a sidecar");
      }
      if (d.train_files.empty() && d.test_files.empty()) {
        throw ConfigError("spec: binary dataset needs train_files/test_files");
      }
      break;
  }
  if (d.crop_padding < 0) {
    throw ConfigError("spec: dataset.crop_padding must be >= 0");
  }
  if (d.max_rotation_degrees < 0.0 || d.max_rotation_degrees > 180.0) {
    throw ConfigError("spec: dataset.max_rotation_degrees must be in [0, 180]");
  }
}

// ---------------------------------------------------------------------------
// File helpers.
// ---------------------------------------------------------------------------

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << content;
  if (!f) throw IoError("short write to '" + path + "'");
}

std::string resolve_out_dir(const ExperimentSpec& spec,
                            const std::string& out_dir) {
  const std::string dir = out_dir.empty() ? spec.output_dir : out_dir;
  if (dir.empty()) {
    throw ConfigError("no output directory (set output_dir or pass --out)");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "'");
  return dir;
}

std::string opt_to_csv(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

std::string history_csv(const TrainHistory& history) {
  std::string out =
      "epoch,mean_loss,mean_penalty,lr,train_accuracy,val_accuracy,"
      "energy_ratio\n";
  for (const EpochStats& e : history.epochs) {
    out += std::to_string(e.epoch) + "," + format_double(e.mean_loss) + "," +
           format_double(e.mean_penalty) + "," + format_double(e.lr) + "," +
           format_double(e.train_accuracy) + "," + opt_to_csv(e.val_accuracy) +
           "," + opt_to_csv(e.energy_ratio) + "\n";
  }
  return out;
}

bool wants_format(const ExperimentSpec& spec, const std::string& fmt) {
  return std::find(spec.report_formats.begin(), spec.report_formats.end(),
                   fmt) != spec.report_formats.end();
}

}  // namespace

std::string dataset_desc(const DatasetSpec& d, uint64_t resolved_seed) {
  std::ostringstream s;
  switch (d.kind) {
    case DatasetSpec::Kind::synthetic: {
      s << "synthetic(classes=" << d.num_classes;
      if (d.train_counts.empty()) {
        s << ",train=" << d.train_per_class << "/class";
      } else {
        s << ",train=[";
        for (size_t i = 0; i < d.train_counts.size(); ++i) {
          if (i) s << ",";
          s << d.train_counts[i];
        }
        s << "]";
      }
      s << ",test=" << d.test_per_class << "/class,size=" << d.image_size
        << ",ch=" << d.channels << ",noise=" << format_double(d.noise_std)
        << ",seed=" << d.seed.value_or(resolved_seed) << ")";
      break;
    }
    case DatasetSpec::Kind::cifar10:
    case DatasetSpec::Kind::binary: {
      s << (d.kind == DatasetSpec::Kind::cifar10 ? "cifar10(" : "binary(");
      for (size_t i = 0; i < d.train_files.size(); ++i) {
        if (i) s << ",";
        s << fs::path(d.train_files[i]).filename().string();
      }
      s << ";";
      for (size_t i = 0; i < d.test_files.size(); ++i) {
        if (i) s << ",";
        s << fs::path(d.test_files[i]).filename().string();
      }
      if (d.max_per_file > 0) s << ";max=" << d.max_per_file;
      s << ")";
      break;
    }
  }
  if (d.augmented()) {
    s << "+aug(p" << d.crop_padding << ",r"
      << format_double(d.max_rotation_degrees) << ")";
  }
  return s.str();
}

ExperimentSpec ExperimentSpec::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("spec is not valid JSON: ") + e.what());
  }
  check_keys(j, "spec",
             {"version", "name", "precision", "seed", "output_dir", "model",
              "dataset", "train", "cost_model", "ablation", "snapshot_energy",
              "eval_split", "report_formats"});
  ExperimentSpec spec;
  spec.version = get_field_or<int>(j, "spec", "version", 1);
  if (spec.version != 1) {
    throw ConfigError("spec: unsupported version " +
                      std::to_string(spec.version));
  }
  spec.name = get_field_or<std::string>(j, "spec", "name", "");
  spec.precision = precision_from_string(
      get_field_or<std::string>(j, "spec", "precision", "float64"));
  spec.seed = get_field_or<uint64_t>(j, "spec", "seed", 0);
  spec.output_dir = get_field_or<std::string>(j, "spec", "output_dir", "");

  if (!j.contains("model")) throw ConfigError("spec: missing 'model'");
  const json& jm = j.at("model");
  check_keys(jm, "model", {"name", "input_shape", "layers"});
  spec.model.name = get_field_or<std::string>(jm, "model", "name", "");
  for (size_t d : get_field<std::vector<size_t>>(jm, "model", "input_shape")) {
    spec.model.input_shape.push_back(d);
  }
  if (!jm.contains("layers") || !jm.at("layers").is_array() ||
      jm.at("layers").empty()) {
    throw ConfigError("spec: model.layers must be a nonempty array");
  }
  for (size_t i = 0; i < jm.at("layers").size(); ++i) {
    spec.model.layers.push_back(parse_layer(jm.at("layers")[i], i));
  }

  if (!j.contains("dataset")) throw ConfigError("spec: missing 'dataset'");
  spec.dataset = parse_dataset(j.at("dataset"));

  if (!j.contains("train")) throw ConfigError("spec: missing 'train'");
  spec.train = parse_train(j.at("train"), spec.seed);

  if (j.contains("cost_model")) {
    const json& jc = j.at("cost_model");
    check_keys(jc, "cost_model",
               {"mac_energy", "nonskippable_energy", "zero_threshold"});
    spec.cost.mac_energy =
        get_field_or<double>(jc, "cost_model", "mac_energy", 1.0);
    spec.cost.nonskippable_energy =
        get_field_or<double>(jc, "cost_model", "nonskippable_energy", 1.0);
    spec.cost.zero_threshold =
        get_field_or<double>(jc, "cost_model", "zero_threshold", 0.0);
  }

  if (j.contains("ablation")) {
    const json& ja = j.at("ablation");
    check_keys(ja, "ablation",
               {"sigmas", "lambdas", "validation_size", "accuracy_margin"});
    AblationSpec ab;
    ab.sigmas = get_field_or<std::vector<double>>(ja, "ablation", "sigmas",
                                                  {spec.train.penalty.sigma});
    ab.lambdas = get_field<std::vector<double>>(ja, "ablation", "lambdas");
    ab.validation_size =
        get_field_or<int>(ja, "ablation", "validation_size", 100);
    ab.accuracy_margin =
        get_field_or<double>(ja, "ablation", "accuracy_margin", 3.0);
    spec.ablation = ab;
  }
  spec.snapshot_energy = get_field_or<bool>(j, "spec", "snapshot_energy", false);
  spec.eval_split = get_field_or<std::string>(j, "spec", "eval_split", "test");
  spec.report_formats = get_field_or<std::vector<std::string>>(
      j, "spec", "report_formats", {"csv", "json"});
  spec.validate();
  return spec;
}

ExperimentSpec ExperimentSpec::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open spec file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json_text(ss.str());
}

void ExperimentSpec::validate() const {
  train.validate();
  cost.validate();
  validate_dataset(dataset);
  split_from_string(eval_split);
  for (const std::string& fmt : report_formats) {
    if (fmt != "csv" && fmt != "json") {
      throw ConfigError("spec: unknown report format '" + fmt + "'");
    }
  }
  if (ablation) {
    if (ablation->sigmas.empty() || ablation->lambdas.empty()) {
      throw ConfigError("spec: ablation grids must be nonempty");
    }
    for (double s : ablation->sigmas) {
      if (s <= 0.0) throw ConfigError("spec: ablation sigmas must be > 0");
    }
    for (double l : ablation->lambdas) {
      if (l < 0.0) throw ConfigError("spec: ablation lambdas must be >= 0");
    }
    if (ablation->validation_size < 1) {
      throw ConfigError("spec: ablation.validation_size must be >= 1");
    }
    if (ablation->accuracy_margin < 0.0) {
      throw ConfigError("spec: ablation.accuracy_margin must be >= 0");
    }
  }
  // Resolve the layer stack once so shape mismatches fail before training.
  init_model<double>(model.input_shape, model.layers, 0);
}

std::string ExperimentSpec::mode() const {
  if (train.penalty.lambda == 0.0) return "st";
  return train.penalty.sign > 0 ? "eat" : "sponge";
}

// ---------------------------------------------------------------------------
// Dataset construction.
// ---------------------------------------------------------------------------

namespace {

template <class S>
Dataset<S> build_dataset(const DatasetSpec& d, Split split,
                         uint64_t default_seed, int validation_size) {
  const uint64_t seed = d.seed.value_or(default_seed);
  switch (d.kind) {
    case DatasetSpec::Kind::synthetic: {
      if (split == Split::train) {
        const std::vector<int> counts =
            d.train_counts.empty()
                ? std::vector<int>(d.num_classes, d.train_per_class)
                : d.train_counts;
        return gen_synthetic_counts<S>(counts, d.image_size, d.noise_std, seed,
                                       split, d.channels);
      }
      if (split == Split::test) {
        return gen_synthetic<S>(d.num_classes, d.test_per_class, d.image_size,
                                d.noise_std, seed, split, d.channels);
      }
      std::vector<int> counts(d.num_classes, validation_size / d.num_classes);
      for (int c = 0; c < validation_size % d.num_classes; ++c) ++counts[c];
      return gen_synthetic_counts<S>(counts, d.image_size, d.noise_std, seed,
                                     split, d.channels);
    }
    case DatasetSpec::Kind::cifar10:
    case DatasetSpec::Kind::binary: {
      auto load = [&](const std::vector<std::string>& files, Split s) {
        if (files.empty()) {
          throw ConfigError("dataset has no files for split " +
                            std::string(to_string(s)));
        }
        if (d.kind == DatasetSpec::Kind::cifar10) {
          return load_cifar10_binary<S>(files, s, d.max_per_file);
        }
        const DatasetMeta meta = load_sidecar(d.sidecar);
        Dataset<S> ds = load_records<S>(files, meta.channels, meta.image_size,
                                        meta.image_size, meta.num_classes, s,
                                        d.max_per_file);
        return ds;
      };
      if (split == Split::train) return load(d.train_files, Split::train);
      if (split == Split::test) return load(d.test_files, Split::test);
      // Validation: a seeded pick from the test split, so the training set is
      // identical with and without a validation stage.
      Dataset<S> test = load(d.test_files, Split::test);
      std::vector<size_t> idx(test.size());
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      Rng rng = Rng::derive(seed, 0x7a1du);
      rng.shuffle(idx);
      idx.resize(std::min<size_t>(idx.size(),
                                  static_cast<size_t>(validation_size)));
      return subset(test, idx, Split::validation);
    }
  }
  throw ConfigError("unknown dataset kind");
}

}  // namespace

Dataset<double> build_dataset_f64(const DatasetSpec& spec, Split split,
                                  uint64_t default_seed, int validation_size) {
  return build_dataset<double>(spec, split, default_seed, validation_size);
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

namespace {

template <class S>
std::function<void(BasicTensor<S>&, Rng&)> make_batch_transform(
    const DatasetSpec& d) {
  if (!d.augmented()) return {};
  const int pad = d.crop_padding;
  const double rot = d.max_rotation_degrees;
  return [pad, rot](BasicTensor<S>& batch, Rng& rng) {
    const size_t batch_size = batch.dim(0);
    Shape img_shape(batch.shape().begin() + 1, batch.shape().end());
    const size_t n = shape_numel(img_shape);
    BasicTensor<S> img(img_shape);
    for (size_t i = 0; i < batch_size; ++i) {
      std::copy(batch.data() + i * n, batch.data() + (i + 1) * n, img.data());
      const BasicTensor<S> out = augment(img, rng, pad, rot);
      std::copy(out.data(), out.data() + n, batch.data() + i * n);
    }
  };
}

ordered_json firing_stats_json(const std::vector<FiringStat>& stats) {
  ordered_json arr = ordered_json::array();
  for (const FiringStat& s : stats) {
    arr.push_back({{"layer_index", s.layer_index},
                   {"layer_kind", to_string(s.layer_kind)},
                   {"firing_percent", s.firing_percent}});
  }
  return arr;
}

ordered_json train_config_json(const TrainConfig& cfg) {
  return ordered_json{
      {"epochs", cfg.epochs},
      {"lr_initial", cfg.lr_initial},
      {"lr_decay", cfg.lr_decay},
      {"momentum", cfg.momentum},
      {"weight_decay", cfg.weight_decay},
      {"batch_size", cfg.batch_size},
      {"seed", cfg.seed},
      {"shuffle", cfg.shuffle},
      {"penalty",
       {{"lambda", cfg.penalty.lambda},
        {"sigma", cfg.penalty.sigma},
        {"sign", cfg.penalty.sign},
        {"normalize_by", to_string(cfg.penalty.normalize_by)}}}};
}

template <class S>
void run_train_impl(const ExperimentSpec& spec, const std::string& out_arg) {
  const std::string out = resolve_out_dir(spec, out_arg);
  const Dataset<S> train_set =
      build_dataset<S>(spec.dataset, Split::train, spec.seed, 100);
  const Dataset<S> test_set =
      build_dataset<S>(spec.dataset, Split::test, spec.seed, 100);
  Model<S> model =
      init_model<S>(spec.model.input_shape, spec.model.layers, spec.seed);

  TrainOptions<S> opt;
  opt.batch_transform = make_batch_transform<S>(spec.dataset);
  if (spec.snapshot_energy) {
    opt.energy_cost = &spec.cost;
    opt.energy_set = &test_set;
  }
  TrainResult<S> result = train(model, train_set, spec.train, opt);

  const std::string checkpoint = out + "/model.eatm";
  save_model(result.model, checkpoint);
  write_text_file(out + "/history.csv", history_csv(result.history));

  const double test_accuracy = evaluate_accuracy(result.model, test_set);
  const EnergyReport energy =
      simulate_energy_dataset(result.model, test_set, spec.cost);
  std::vector<FiringStat> firing;
  for (const LayerEnergy& le : energy.per_layer) {
    firing.push_back(
        {le.layer_index, le.layer_kind, 100.0 * le.firing_fraction()});
  }

  ordered_json summary;
  summary["format_version"] = 1;
  summary["name"] = spec.name;
  summary["mode"] = spec.mode();
  summary["precision"] = to_string(spec.precision);
  summary["seed"] = spec.seed;
  summary["model"] = {{"name", spec.model.name},
                      {"desc", result.model.describe()},
                      {"parameter_count", result.model.parameter_count()}};
  summary["dataset"] = {{"desc", dataset_desc(spec.dataset, spec.seed)}};
  summary["train"] = train_config_json(spec.train);
  summary["checkpoint"] = "model.eatm";
  summary["results"] = {
      {"final_train_accuracy",
       result.history.epochs.empty()
           ? ordered_json()
           : ordered_json(result.history.epochs.back().train_accuracy)},
      {"test_accuracy", test_accuracy},
      {"energy_ratio", energy.ratio},
      {"energy_optimized", energy.energy_optimized},
      {"energy_worst_case", energy.energy_worst_case},
      {"firing_stats",
       firing_stats_json(firing)}};
  write_text_file(out + "/summary.json", summary.dump(2) + "\n");
}

template <class S>
void run_energy_impl(const ExperimentSpec& spec, const Model<S>& model,
                     const std::string& checkpoint, const std::string& out_arg) {
  const std::string out = resolve_out_dir(spec, out_arg);
  const Split split = split_from_string(spec.eval_split);
  const int val_size = spec.ablation ? spec.ablation->validation_size : 100;
  const Dataset<S> dataset =
      build_dataset<S>(spec.dataset, split, spec.seed, val_size);
  const EnergyReport report =
      simulate_energy_dataset(model, dataset, spec.cost);
  if (wants_format(spec, "csv")) {
    write_text_file(out + "/energy_per_layer.csv", energy_report_csv(report));
  }
  if (wants_format(spec, "json")) {
    ordered_json j;
    j["checkpoint"] = checkpoint;
    j["model"] = {{"desc", model.describe()},
                  {"parameter_count", model.parameter_count()}};
    j["dataset"] = {{"desc", dataset_desc(spec.dataset, spec.seed)},
                    {"split", spec.eval_split},
                    {"samples", dataset.size()}};
    j["cost_model"] = {{"mac_energy", spec.cost.mac_energy},
                       {"nonskippable_energy", spec.cost.nonskippable_energy},
                       {"zero_threshold", spec.cost.zero_threshold}};
    j["report"] = energy_report_json(report);
    write_text_file(out + "/energy_summary.json", j.dump(2) + "\n");
  }
}

struct AblationCell {
  double sigma = 0.0;
  double lambda = 0.0;
  bool ok = false;
  double accuracy = 0.0;
  double energy_ratio = 0.0;
};

template <class S>
void run_ablate_impl(const ExperimentSpec& spec, const std::string& out_arg) {
  if (!spec.ablation) {
    throw ConfigError("spec has no 'ablation' section");
  }
  const AblationSpec& ab = *spec.ablation;
  const std::string out = resolve_out_dir(spec, out_arg);
  const Dataset<S> train_set =
      build_dataset<S>(spec.dataset, Split::train, spec.seed, ab.validation_size);
  const Dataset<S> val_set = build_dataset<S>(
      spec.dataset, Split::validation, spec.seed, ab.validation_size);
  // One shared initialization for every cell.
  const Model<S> model0 =
      init_model<S>(spec.model.input_shape, spec.model.layers, spec.seed);
  TrainOptions<S> opt;
  opt.batch_transform = make_batch_transform<S>(spec.dataset);

  std::vector<AblationCell> cells;
  for (double sigma : ab.sigmas) {
    for (double lambda : ab.lambdas) {
      AblationCell cell;
      cell.sigma = sigma;
      cell.lambda = lambda;
      TrainConfig cfg = spec.train;
      cfg.penalty.sigma = sigma;
      cfg.penalty.lambda = lambda;
      try {
        TrainResult<S> result = train(model0, train_set, cfg, opt);
        cell.accuracy = evaluate_accuracy(result.model, val_set);
        cell.energy_ratio =
            energy_ratio_over_dataset(result.model, val_set, spec.cost);
        cell.ok = true;
      } catch (const DivergenceError&) {
        cell.ok = false;
      } catch (const NonFiniteError&) {
        cell.ok = false;
      }
      cells.push_back(cell);
    }
  }

  std::string csv = "sigma,lambda,accuracy,energy_ratio,status\n";
  for (const AblationCell& c : cells) {
    csv += format_double(c.sigma) + "," + format_double(c.lambda) + ",";
    if (c.ok) {
      csv += format_double(c.accuracy) + "," + format_double(c.energy_ratio) +
             ",ok\n";
    } else {
      csv += ",,diverged\n";
    }
  }
  write_text_file(out + "/ablation.csv", csv);

  // Baseline: the lambda == 0 column if the grid has one (identical across
  // sigmas since lambda == 0 disables the penalty), else a separate run.
  std::optional<AblationCell> baseline;
  for (const AblationCell& c : cells) {
    if (c.lambda == 0.0 && c.ok) {
      baseline = c;
      break;
    }
  }
  if (!baseline) {
    TrainConfig cfg = spec.train;
    cfg.penalty.lambda = 0.0;
    try {
      TrainResult<S> result = train(model0, train_set, cfg, opt);
      AblationCell c;
      c.sigma = cfg.penalty.sigma;
      c.lambda = 0.0;
      c.accuracy = evaluate_accuracy(result.model, val_set);
      c.energy_ratio =
          energy_ratio_over_dataset(result.model, val_set, spec.cost);
      c.ok = true;
      baseline = c;
    } catch (const DivergenceError&) {
    } catch (const NonFiniteError&) {
    }
  }

  // Best cell: lowest energy ratio among cells within the accuracy margin of
  // the baseline.
  std::optional<AblationCell> best;
  if (baseline) {
    const double floor = baseline->accuracy - ab.accuracy_margin / 100.0;
    for (const AblationCell& c : cells) {
      if (!c.ok || c.accuracy < floor) continue;
      if (!best || c.energy_ratio < best->energy_ratio) best = c;
    }
  }

  ordered_json j;
  j["grid"] = {{"sigmas", ab.sigmas},
               {"lambdas", ab.lambdas},
               {"cells", cells.size()}};
  j["validation_size"] = ab.validation_size;
  j["accuracy_margin"] = ab.accuracy_margin;
  if (baseline) {
    j["baseline"] = {{"accuracy", baseline->accuracy},
                     {"energy_ratio", baseline->energy_ratio}};
  } else {
    j["baseline"] = nullptr;
  }
  if (best) {
    j["best"] = {{"sigma", best->sigma},
                 {"lambda", best->lambda},
                 {"accuracy", best->accuracy},
                 {"energy_ratio", best->energy_ratio}};
  } else {
    j["best"] = nullptr;
  }
  write_text_file(out + "/ablation_summary.json", j.dump(2) + "\n");
}

struct RunSummary {
  std::string dir;
  std::string mode;
  std::string model_desc;
  std::string dataset_desc;
  double accuracy = 0.0;
  double energy_ratio = 0.0;
};

RunSummary read_run_summary(const std::string& dir) {
  const std::string path = dir + "/summary.json";
  std::ifstream f(path);
  if (!f) throw IoError("cannot open run summary '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("run summary '" + path + "' is not valid JSON: " + e.what());
  }
  try {
    RunSummary s;
    s.dir = dir;
    s.mode = j.at("mode").get<std::string>();
    s.model_desc = j.at("model").at("desc").get<std::string>();
    s.dataset_desc = j.at("dataset").at("desc").get<std::string>();
    s.accuracy = j.at("results").at("test_accuracy").get<double>();
    s.energy_ratio = j.at("results").at("energy_ratio").get<double>();
    return s;
  } catch (const json::exception& e) {
    throw IoError("run summary '" + path + "' is missing fields: " + e.what());
  }
}

}  // namespace

void run_train(const ExperimentSpec& spec, const std::string& out_dir) {
  if (spec.precision == Precision::float64) {
    run_train_impl<double>(spec, out_dir);
  } else {
    run_train_impl<float>(spec, out_dir);
  }
}

void run_energy(const ExperimentSpec& spec, const std::string& checkpoint,
                const std::string& out_dir) {
  // The checkpoint's stored precision wins over the spec's.
  const AnyModel model = load_model_any(checkpoint);
  if (std::holds_alternative<Model<double>>(model)) {
    run_energy_impl<double>(spec, std::get<Model<double>>(model), checkpoint,
                            out_dir);
  } else {
    run_energy_impl<float>(spec, std::get<Model<float>>(model), checkpoint,
                           out_dir);
  }
}

void run_ablate(const ExperimentSpec& spec, const std::string& out_dir) {
  if (spec.precision == Precision::float64) {
    run_ablate_impl<double>(spec, out_dir);
  } else {
    run_ablate_impl<float>(spec, out_dir);
  }
}

void run_report(const std::vector<std::string>& run_dirs,
                const std::string& out_dir) {
  if (run_dirs.size() < 2) {
    throw ConfigError("report needs at least 2 run directories");
  }
  if (out_dir.empty()) {
    throw ConfigError("report needs an output directory (--out)");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "'");

  std::vector<RunSummary> runs;
  for (const std::string& dir : run_dirs) runs.push_back(read_run_summary(dir));

  std::string csv =
      "st_run,eat_run,mode,st_accuracy,eat_accuracy,st_energy_ratio,"
      "eat_energy_ratio,energy_decrease_percent\n";
  size_t pairs = 0;
  for (const RunSummary& run : runs) {
    if (run.mode == "st") continue;
    const RunSummary* st = nullptr;
    size_t matches = 0;
    for (const RunSummary& cand : runs) {
      if (cand.mode != "st") continue;
      if (cand.model_desc == run.model_desc &&
          cand.dataset_desc == run.dataset_desc) {
        ++matches;
        st = &cand;
      }
    }
    if (matches == 0) {
      throw ConfigError("report: no ST baseline matches run '" + run.dir +
                        "' (model/dataset mismatch)");
    }
    if (matches > 1) {
      throw ConfigError("report: pairing ambiguity, " +
                        std::to_string(matches) + " ST baselines match run '" +
                        run.dir + "'");
    }
    csv += st->dir + "," + run.dir + "," + run.mode + "," +
           format_double(st->accuracy) + "," + format_double(run.accuracy) +
           "," + format_double(st->energy_ratio) + "," +
           format_double(run.energy_ratio) + "," +
           format_double(energy_decrease(st->energy_ratio, run.energy_ratio)) +
           "\n";
    ++pairs;
  }
  if (pairs == 0) {
    throw ConfigError("report: no (ST, non-ST) pairs among the given runs");
  }
  write_text_file(out_dir + "/comparison.csv", csv);
}

}  // namespace eat
