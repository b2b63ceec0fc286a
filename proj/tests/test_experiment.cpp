#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "eat/checkpoint.hpp"
#include "eat/dataset_io.hpp"
#include "eat/experiment.hpp"

#include "json.hpp"

using namespace eat;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("eat_exp_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string dir(const std::string& name) const {
    return (path / name).string();
  }
};

// Small, fast experiment: flatten+dense MLP on tiny synthetic data.
json base_spec() {
  return json::parse(R"({
    "version": 1,
    "name": "unit",
    "seed": 5,
    "model": {
      "input_shape": [1, 8, 8],
      "layers": [
        {"kind": "flatten"},
        {"kind": "dense", "out_features": 12},
        {"kind": "relu"},
        {"kind": "dense", "out_features": 4}
      ]
    },
    "dataset": {
      "kind": "synthetic",
      "num_classes": 4,
      "train_per_class": 10,
      "test_per_class": 5,
      "image_size": 8,
      "noise_std": 0.05
    },
    "train": {
      "epochs": 3,
      "batch_size": 16,
      "penalty": {"lambda": 0.0, "sigma": 1e-4}
    }
  })");
}

ExperimentSpec spec_from(const json& j) {
  return ExperimentSpec::from_json_text(j.dump());
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

std::vector<std::string> csv_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

void write_summary(const std::string& dir, const std::string& mode,
                   double accuracy, double ratio,
                   const std::string& model_desc = "m",
                   const std::string& dataset_desc = "d") {
  fs::create_directories(dir);
  json j;
  j["mode"] = mode;
  j["model"] = {{"desc", model_desc}};
  j["dataset"] = {{"desc", dataset_desc}};
  j["results"] = {{"test_accuracy", accuracy}, {"energy_ratio", ratio}};
  std::ofstream f(dir + "/summary.json");
  f << j.dump(2);
}

}  // namespace

TEST_CASE("spec parsing accepts the reference document and fills defaults") {
  const ExperimentSpec spec = spec_from(base_spec());
  CHECK(spec.name == "unit");
  CHECK(spec.seed == 5);
  CHECK(spec.train.seed == 5);  // inherits the experiment seed
  CHECK(spec.train.lr_initial == 0.1);
  CHECK(spec.train.momentum == 0.9);
  CHECK(spec.train.weight_decay == 5e-4);
  CHECK(spec.cost.mac_energy == 1.0);
  CHECK(spec.precision == Precision::float64);
  CHECK(spec.mode() == "st");

  json eat_spec = base_spec();
  eat_spec["train"]["penalty"]["lambda"] = 1.0;
  CHECK(spec_from(eat_spec).mode() == "eat");
  eat_spec["train"]["penalty"]["sign"] = -1;
  CHECK(spec_from(eat_spec).mode() == "sponge");
}

TEST_CASE("spec parsing rejects malformed documents before any training") {
  CHECK_THROWS_AS(ExperimentSpec::from_json_text("not json"), ConfigError);
  CHECK_THROWS_AS(ExperimentSpec::from_file("/nonexistent/spec.json"), IoError);

  json missing_model = base_spec();
  missing_model.erase("model");
  CHECK_THROWS_AS(spec_from(missing_model), ConfigError);

  json unknown_key = base_spec();
  unknown_key["typo_field"] = 1;
  CHECK_THROWS_AS(spec_from(unknown_key), ConfigError);

  json unknown_nested = base_spec();
  unknown_nested["train"]["lr"] = 0.5;  // misspelled lr_initial
  CHECK_THROWS_AS(spec_from(unknown_nested), ConfigError);

  json bad_range = base_spec();
  bad_range["train"]["momentum"] = 1.5;
  CHECK_THROWS_AS(spec_from(bad_range), ConfigError);

  json bad_sigma = base_spec();
  bad_sigma["train"]["penalty"]["sigma"] = 0.0;
  CHECK_THROWS_AS(spec_from(bad_sigma), ConfigError);

  json bad_layer = base_spec();
  bad_layer["model"]["layers"][1] = {{"kind", "dense"}};
  CHECK_THROWS_AS(spec_from(bad_layer), ConfigError);

  json mismatched = base_spec();
  mismatched["model"]["layers"] = json::array(
      {json{{"kind", "dense"}, {"out_features", 3}}});  // needs flatten first
  CHECK_THROWS_AS(spec_from(mismatched), ShapeError);

  json bad_version = base_spec();
  bad_version["version"] = 2;
  CHECK_THROWS_AS(spec_from(bad_version), ConfigError);

  json empty_grid = base_spec();
  empty_grid["ablation"] = {{"sigmas", json::array()},
                            {"lambdas", {0.0, 1.0}}};
  CHECK_THROWS_AS(spec_from(empty_grid), ConfigError);
}

TEST_CASE("run_train writes checkpoint, history and summary deterministically") {
  TempDir tmp;
  ExperimentSpec spec = spec_from(base_spec());
  run_train(spec, tmp.dir("a"));
  run_train(spec, tmp.dir("b"));

  for (const char* f : {"/model.eatm", "/history.csv", "/summary.json"}) {
    CHECK(slurp(tmp.dir("a") + f) == slurp(tmp.dir("b") + f));
  }

  const auto lines = csv_lines(slurp(tmp.dir("a") + "/history.csv"));
  CHECK(lines[0] ==
        "epoch,mean_loss,mean_penalty,lr,train_accuracy,val_accuracy,"
        "energy_ratio");
  CHECK(lines.size() == 1 + 3);  // header + one row per epoch

  const json summary = json::parse(slurp(tmp.dir("a") + "/summary.json"));
  CHECK(summary.at("mode") == "st");
  CHECK(summary.at("results").at("test_accuracy").is_number());
  const double ratio = summary.at("results").at("energy_ratio").get<double>();
  CHECK(ratio > 0.0);
  CHECK(ratio <= 1.0);
  CHECK(summary.at("results").at("firing_stats").size() == 4);
}

TEST_CASE("lambda 0 and an absent penalty block produce identical checkpoints") {
  TempDir tmp;
  json with_lambda0 = base_spec();
  json without = base_spec();
  without["train"].erase("penalty");
  run_train(spec_from(with_lambda0), tmp.dir("a"));
  run_train(spec_from(without), tmp.dir("b"));
  CHECK(slurp(tmp.dir("a") + "/model.eatm") ==
        slurp(tmp.dir("b") + "/model.eatm"));
}

TEST_CASE("zero-epoch training checkpoints the seeded initialization") {
  TempDir tmp;
  json j = base_spec();
  j["train"]["epochs"] = 0;
  const ExperimentSpec spec = spec_from(j);
  run_train(spec, tmp.dir("out"));
  const auto loaded = load_model<double>(tmp.dir("out") + "/model.eatm");
  const auto fresh =
      init_model<double>(spec.model.input_shape, spec.model.layers, spec.seed);
  REQUIRE(loaded.weights.size() == fresh.weights.size());
  for (size_t t = 0; t < fresh.weights.size(); ++t) {
    CHECK(loaded.weights[t] == fresh.weights[t]);
  }
}

TEST_CASE("run_energy reports on a checkpoint and validates against it") {
  TempDir tmp;
  ExperimentSpec spec = spec_from(base_spec());
  run_train(spec, tmp.dir("run"));
  const std::string ckpt = tmp.dir("run") + "/model.eatm";

  run_energy(spec, ckpt, tmp.dir("e1"));
  run_energy(spec, ckpt, tmp.dir("e2"));
  CHECK(slurp(tmp.dir("e1") + "/energy_per_layer.csv") ==
        slurp(tmp.dir("e2") + "/energy_per_layer.csv"));
  CHECK(slurp(tmp.dir("e1") + "/energy_summary.json") ==
        slurp(tmp.dir("e2") + "/energy_summary.json"));

  const auto lines = csv_lines(slurp(tmp.dir("e1") + "/energy_per_layer.csv"));
  CHECK(lines[0] ==
        "layer_index,layer_kind,total_macs,skipped_macs,nonskippable_ops,"
        "firing_percent,energy_optimized,energy_worst_case,ratio");
  CHECK(lines.size() == 1 + 4 + 1);  // header + layers + total

  const json js = json::parse(slurp(tmp.dir("e1") + "/energy_summary.json"));
  const double ratio = js.at("report").at("total").at("ratio").get<double>();
  CHECK(ratio > 0.0);
  CHECK(ratio <= 1.0);

  // shape mismatch between checkpoint and dataset
  json other = base_spec();
  other["dataset"]["image_size"] = 12;
  other["model"]["input_shape"] = {1, 12, 12};
  CHECK_THROWS_AS(run_energy(spec_from(other), ckpt, tmp.dir("e3")),
                  ShapeError);
}

TEST_CASE("run_energy hits the nonskippable floor on an all-zero dataset") {
  TempDir tmp;
  // all-zero images exported as a binary dataset
  Dataset<double> zeros;
  zeros.num_classes = 2;
  zeros.images = Tensor(Shape{6, 1, 8, 8});
  zeros.labels.assign(6, 0);
  zeros.split = Split::test;
  save_dataset(zeros, tmp.dir("z.bin"), tmp.dir("z.json"));

  json j = base_spec();
  j["dataset"] = {{"kind", "binary"},
                  {"train_files", {tmp.dir("z.bin")}},
                  {"test_files", {tmp.dir("z.bin")}},
                  {"sidecar", tmp.dir("z.json")}};
  j["train"]["epochs"] = 0;
  const ExperimentSpec spec = spec_from(j);

  // bias-free dense stack: the seeded init already has zero biases
  const auto model =
      init_model<double>(spec.model.input_shape, spec.model.layers, 1);
  save_model(model, tmp.dir("m.eatm"));
  run_energy(spec, tmp.dir("m.eatm"), tmp.dir("out"));

  const json js = json::parse(slurp(tmp.dir("out") + "/energy_summary.json"));
  const auto& total = js.at("report").at("total");
  CHECK(total.at("skipped_macs") == total.at("total_macs"));
  const double floor = total.at("nonskippable_ops").get<double>();
  CHECK(total.at("energy_optimized").get<double>() == floor);
}

TEST_CASE("ablation grid: lambda-0 column equals ST, cells are isolated") {
  TempDir tmp;
  json j = base_spec();
  j["train"]["epochs"] = 2;
  j["ablation"] = {{"sigmas", {1e-2, 1e-4}},
                   {"lambdas", {0.0, 0.5}},
                   {"validation_size", 20}};
  const ExperimentSpec spec = spec_from(j);
  run_ablate(spec, tmp.dir("grid"));

  const auto lines = csv_lines(slurp(tmp.dir("grid") + "/ablation.csv"));
  CHECK(lines[0] == "sigma,lambda,accuracy,energy_ratio,status");
  REQUIRE(lines.size() == 1 + 4);

  // lambda = 0 rows are identical across sigmas (penalty fully disabled)
  const auto row_s2 = split_csv(lines[1]);
  const auto row_s4 = split_csv(lines[3]);
  CHECK(row_s2[1] == "0");
  CHECK(row_s4[1] == "0");
  CHECK(row_s2[2] == row_s4[2]);
  CHECK(row_s2[3] == row_s4[3]);
  for (size_t i = 1; i < lines.size(); ++i) {
    CHECK(split_csv(lines[i])[4] == "ok");
  }

  const json summary =
      json::parse(slurp(tmp.dir("grid") + "/ablation_summary.json"));
  CHECK(summary.at("baseline").at("accuracy").is_number());
  CHECK(summary.at("best").is_object());

  // a diverging cell must not disturb the others
  json j2 = j;
  j2["ablation"]["lambdas"] = {0.0, 0.5, 1e300};
  run_ablate(spec_from(j2), tmp.dir("grid2"));
  const auto lines2 = csv_lines(slurp(tmp.dir("grid2") + "/ablation.csv"));
  REQUIRE(lines2.size() == 1 + 6);
  // rows for the shared cells are byte-identical to the smaller grid
  CHECK(lines2[1] == lines[1]);
  CHECK(lines2[2] == lines[2]);
  CHECK(lines2[4] == lines[3]);
  CHECK(lines2[5] == lines[4]);
  const auto diverged = split_csv(lines2[3]);
  CHECK(diverged[4] == "diverged");
  CHECK(diverged[2].empty());
}

TEST_CASE("1x1 ablation grid reproduces a standalone train + evaluate") {
  TempDir tmp;
  json j = base_spec();
  j["train"]["epochs"] = 2;
  j["train"]["penalty"]["lambda"] = 0.5;
  j["ablation"] = {{"sigmas", {1e-4}},
                   {"lambdas", {0.5}},
                   {"validation_size", 20}};
  const ExperimentSpec spec = spec_from(j);
  run_ablate(spec, tmp.dir("grid"));
  run_train(spec, tmp.dir("solo"));

  // re-evaluate the standalone checkpoint on the ablation validation split
  const auto model = load_model<double>(tmp.dir("solo") + "/model.eatm");
  const auto val = build_dataset_f64(spec.dataset, Split::validation,
                                     spec.seed, 20);
  const double acc = evaluate_accuracy(model, val);
  const double ratio = energy_ratio_over_dataset(model, val, spec.cost);

  const auto row =
      split_csv(csv_lines(slurp(tmp.dir("grid") + "/ablation.csv"))[1]);
  CHECK(row[2] == format_double(acc));
  CHECK(row[3] == format_double(ratio));
}

TEST_CASE("run_report pairs runs and applies the decrease formula") {
  TempDir tmp;
  write_summary(tmp.dir("st"), "st", 0.91, 0.76);
  write_summary(tmp.dir("eat"), "eat", 0.93, 0.55);
  run_report({tmp.dir("st"), tmp.dir("eat")}, tmp.dir("out"));
  const auto lines = csv_lines(slurp(tmp.dir("out") + "/comparison.csv"));
  CHECK(lines[0] ==
        "st_run,eat_run,mode,st_accuracy,eat_accuracy,st_energy_ratio,"
        "eat_energy_ratio,energy_decrease_percent");
  REQUIRE(lines.size() == 2);
  const auto row = split_csv(lines[1]);
  CHECK(row[3] == format_double(0.91));
  CHECK(row[7].substr(0, 5) == "27.63");

  // identical runs pair to a zero decrease
  write_summary(tmp.dir("same_eat"), "eat", 0.91, 0.76);
  run_report({tmp.dir("st"), tmp.dir("same_eat")}, tmp.dir("out2"));
  const auto row2 =
      split_csv(csv_lines(slurp(tmp.dir("out2") + "/comparison.csv"))[1]);
  CHECK(row2[7] == "0");
}

TEST_CASE("run_report error paths") {
  TempDir tmp;
  write_summary(tmp.dir("st1"), "st", 0.9, 0.7);
  write_summary(tmp.dir("st2"), "st", 0.91, 0.71);
  write_summary(tmp.dir("eat"), "eat", 0.89, 0.6);

  CHECK_THROWS_AS(run_report({tmp.dir("st1")}, tmp.dir("o1")), ConfigError);

  // two ST baselines match: ambiguous
  CHECK_THROWS_AS(
      run_report({tmp.dir("st1"), tmp.dir("st2"), tmp.dir("eat")},
                 tmp.dir("o2")),
      ConfigError);

  // mismatched model/dataset between the pair
  write_summary(tmp.dir("other"), "eat", 0.9, 0.5, "different-model");
  CHECK_THROWS_AS(run_report({tmp.dir("st1"), tmp.dir("other")}, tmp.dir("o3")),
                  ConfigError);

  // no pairs at all
  CHECK_THROWS_AS(run_report({tmp.dir("st1"), tmp.dir("st2")}, tmp.dir("o4")),
                  ConfigError);

  CHECK_THROWS_AS(run_report({tmp.dir("st1"), tmp.dir("missing")},
                             tmp.dir("o5")),
                  IoError);
}

TEST_CASE("augmented training stays deterministic") {
  TempDir tmp;
  json j = base_spec();
  j["dataset"]["crop_padding"] = 2;
  j["dataset"]["max_rotation_degrees"] = 10.0;
  j["train"]["epochs"] = 2;
  const ExperimentSpec spec = spec_from(j);
  run_train(spec, tmp.dir("a"));
  run_train(spec, tmp.dir("b"));
  CHECK(slurp(tmp.dir("a") + "/model.eatm") ==
        slurp(tmp.dir("b") + "/model.eatm"));
  // and differs from the unaugmented run
  run_train(spec_from(base_spec()), tmp.dir("plain"));
  CHECK(slurp(tmp.dir("a") + "/model.eatm") !=
        slurp(tmp.dir("plain") + "/model.eatm"));
}

TEST_CASE("float32 runs train and checkpoint in float32") {
  TempDir tmp;
  json j = base_spec();
  j["precision"] = "float32";
  j["train"]["epochs"] = 1;
  run_train(spec_from(j), tmp.dir("f32"));
  CHECK(checkpoint_scalar_size(tmp.dir("f32") + "/model.eatm") == 4);
  const json summary = json::parse(slurp(tmp.dir("f32") + "/summary.json"));
  CHECK(summary.at("precision") == "float32");
}

#ifdef EAT_CLI_PATH
TEST_CASE("cli exit codes") {
  TempDir tmp;
  const std::string cli = EAT_CLI_PATH;
  auto run = [](const std::string& cmd) {
    const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  CHECK(run(cli + " --help") == 0);
  CHECK(run(cli + " train") == 1);  // missing --spec
  CHECK(run(cli + " train --spec /nonexistent.json --out " + tmp.dir("o")) ==
        1);  // CLI11 rejects the missing file

  const std::string spec_path = tmp.dir("spec.json");
  {
    std::ofstream f(spec_path);
    f << base_spec().dump(2);
  }
  CHECK(run(cli + " train --spec " + spec_path + " --out " + tmp.dir("run")) ==
        0);
  CHECK(fs::exists(tmp.dir("run") + "/summary.json"));
  CHECK(run(cli + " energy --spec " + spec_path + " --checkpoint " +
            tmp.dir("run") + "/model.eatm --out " + tmp.dir("energy")) == 0);

  // malformed spec: config error
  const std::string bad_path = tmp.dir("bad.json");
  {
    std::ofstream f(bad_path);
    f << "{\"version\": 1}";
  }
  CHECK(run(cli + " train --spec " + bad_path + " --out " + tmp.dir("x")) == 1);

  // report without enough runs: config error
  CHECK(run(cli + " report " + tmp.dir("run") + " " + tmp.dir("run") +
            " --out " + tmp.dir("rep")) == 1);  // two ST runs, no pair

  // seed override changes the artifacts
  CHECK(run(cli + " train --spec " + spec_path + " --seed 123 --out " +
            tmp.dir("seeded")) == 0);
  CHECK(slurp(tmp.dir("seeded") + "/model.eatm") !=
        slurp(tmp.dir("run") + "/model.eatm"));
}
#endif
