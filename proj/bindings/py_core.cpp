// Python bindings for the double-precision engine: model building, training,
// the sparsity penalty, and the zero-skipping energy simulator.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <vector>

#include "eat/checkpoint.hpp"
#include "eat/data.hpp"
#include "eat/energy.hpp"
#include "eat/model.hpp"
#include "eat/penalty.hpp"
#include "eat/trainer.hpp"

namespace py = pybind11;
using eat::Tensor;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const DoubleArray& arr) {
  eat::Shape shape;
  for (py::ssize_t d = 0; d < arr.ndim(); ++d) {
    shape.push_back(static_cast<size_t>(arr.shape(d)));
  }
  if (shape.empty()) shape = {1};
  std::vector<double> data(arr.data(), arr.data() + arr.size());
  return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (size_t d : t.shape()) shape.push_back(static_cast<py::ssize_t>(d));
  py::array_t<double> arr(shape);
  std::memcpy(arr.mutable_data(), t.data(), t.numel() * sizeof(double));
  return arr;
}

eat::LayerSpec layer_from_dict(const py::dict& d, size_t index) {
  const std::string kind = d["kind"].cast<std::string>();
  auto get = [&](const char* key, size_t fallback) -> size_t {
    return d.contains(key) ? d[key].cast<size_t>() : fallback;
  };
  eat::LayerSpec l;
  l.kind = eat::layer_kind_from_string(kind);
  switch (l.kind) {
    case eat::LayerKind::dense:
      l.out_features = get("out_features", 0);
      l.in_features = get("in_features", 0);
      if (l.out_features == 0) {
        throw eat::ConfigError("layer " + std::to_string(index) +
                               ": dense needs out_features");
      }
      break;
    case eat::LayerKind::conv2d:
      l.out_channels = get("out_channels", 0);
      l.kernel = get("kernel", 0);
      l.stride = get("stride", 1);
      l.padding = get("padding", 0);
      l.in_channels = get("in_channels", 0);
      if (l.out_channels == 0 || l.kernel == 0) {
        throw eat::ConfigError("layer " + std::to_string(index) +
                               ": conv2d needs out_channels and kernel");
      }
      break;
    case eat::LayerKind::maxpool2d:
      l.window = get("window", 0);
      l.stride = get("stride", l.window);
      break;
    default:
      break;
  }
  return l;
}

eat::Dataset<double> dataset_from_arrays(const DoubleArray& images,
                                         const std::vector<int>& labels) {
  eat::Dataset<double> ds;
  ds.images = tensor_from_array(images);
  ds.labels = labels;
  int classes = 0;
  for (int l : labels) classes = std::max(classes, l + 1);
  ds.num_classes = classes;
  if (ds.images.dim(0) != labels.size()) {
    throw eat::ShapeError("images and labels disagree on sample count");
  }
  return ds;
}

eat::PenaltyConfig penalty_from_args(double lam, double sigma, int sign,
                                     const std::string& normalize_by) {
  eat::PenaltyConfig p;
  p.lambda = lam;
  p.sigma = sigma;
  p.sign = sign;
  p.normalize_by = eat::normalize_by_from_string(normalize_by);
  p.validate();
  return p;
}

py::dict report_to_dict(const eat::EnergyReport& report) {
  py::list layers;
  for (const eat::LayerEnergy& le : report.per_layer) {
    py::dict d;
    d["layer_index"] = le.layer_index;
    d["layer_kind"] = eat::to_string(le.layer_kind);
    d["total_macs"] = le.total_macs;
    d["skipped_macs"] = le.skipped_macs;
    d["nonskippable_ops"] = le.nonskippable_ops;
    d["firing_percent"] = 100.0 * le.firing_fraction();
    d["energy_optimized"] = le.energy_optimized;
    d["energy_worst_case"] = le.energy_worst_case;
    d["ratio"] = le.ratio();
    layers.append(d);
  }
  py::dict out;
  out["per_layer"] = layers;
  out["total_macs"] = report.total_macs;
  out["skipped_macs"] = report.skipped_macs;
  out["nonskippable_ops"] = report.nonskippable_ops;
  out["firing_percent"] = 100.0 * report.firing_fraction();
  out["energy_optimized"] = report.energy_optimized;
  out["energy_worst_case"] = report.energy_worst_case;
  out["ratio"] = report.ratio;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "energy-aware training: sparsity-penalized SGD plus a zero-skipping "
      "energy simulator";

  py::register_exception<eat::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<eat::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<eat::IoError>(m, "IoError", PyExc_OSError);

  py::class_<eat::Model<double>>(m, "Model")
      .def_static(
          "build",
          [](const std::vector<py::dict>& layers,
             const std::vector<size_t>& input_shape, uint64_t seed) {
            std::vector<eat::LayerSpec> specs;
            for (size_t i = 0; i < layers.size(); ++i) {
              specs.push_back(layer_from_dict(layers[i], i));
            }
            return eat::init_model<double>(eat::Shape(input_shape), specs, seed);
          },
          py::arg("layers"), py::arg("input_shape"), py::arg("seed") = 0,
          "Build a model from a list of layer dicts; weights are seeded "
          "He-uniform, biases zero.")
      .def_property_readonly("parameter_count",
                             &eat::Model<double>::parameter_count)
      .def_property_readonly("input_shape",
                             [](const eat::Model<double>& model) {
                               return model.input_shape;
                             })
      .def("describe", &eat::Model<double>::describe)
      .def(
          "forward",
          [](const eat::Model<double>& model, const DoubleArray& batch) {
            return array_from_tensor(
                eat::forward(model, tensor_from_array(batch)).logits);
          },
          py::arg("batch"))
      .def(
          "activations",
          [](const eat::Model<double>& model, const DoubleArray& batch) {
            const auto fwd = eat::forward(model, tensor_from_array(batch));
            py::list out;
            for (const auto& e : fwd.record.entries) {
              out.append(py::make_tuple(e.layer_index,
                                        eat::to_string(e.layer_kind),
                                        array_from_tensor(e.activation)));
            }
            return out;
          },
          py::arg("batch"))
      .def("save",
           [](const eat::Model<double>& model, const std::string& path) {
             eat::save_model(model, path);
           })
      .def_static("load", [](const std::string& path) {
        if (eat::checkpoint_scalar_size(path) == 8) {
          return eat::load_model<double>(path);
        }
        // float32 checkpoints are upcast element-wise
        const auto f = eat::load_model<float>(path);
        eat::Model<double> model;
        model.input_shape = f.input_shape;
        model.layers = f.layers;
        for (const auto& w : f.weights) {
          std::vector<double> data(w.raw().begin(), w.raw().end());
          model.weights.emplace_back(w.shape(), std::move(data));
        }
        return model;
      });

  m.def(
      "l0_approx",
      [](const DoubleArray& x, double sigma) {
        return eat::l0_approx(tensor_from_array(x), sigma);
      },
      py::arg("x"), py::arg("sigma"),
      "Smooth nonzero count: sum x_j^2/(x_j^2 + sigma).");
  m.def(
      "l0_approx_grad",
      [](const DoubleArray& x, double sigma) {
        return array_from_tensor(
            eat::l0_approx_grad(tensor_from_array(x), sigma));
      },
      py::arg("x"), py::arg("sigma"));
  m.def(
      "exact_l0",
      [](const DoubleArray& x, double tau) {
        return eat::exact_l0(tensor_from_array(x), tau);
      },
      py::arg("x"), py::arg("tau") = 0.0,
      "Number of elements with |x_j| > tau.");
  m.def("energy_decrease", &eat::energy_decrease, py::arg("ratio_st"),
        py::arg("ratio_eat"),
        "100 * (ratio_st - ratio_eat) / ratio_st.");

  m.def(
      "objective",
      [](const eat::Model<double>& model, const DoubleArray& batch,
         const std::vector<int>& labels, double lam, double sigma, int sign,
         const std::string& normalize_by) {
        const auto obj =
            eat::objective(model, tensor_from_array(batch), labels,
                           penalty_from_args(lam, sigma, sign, normalize_by));
        py::dict out;
        out["value"] = obj.value;
        out["cross_entropy"] = obj.cross_entropy;
        out["penalty"] = obj.penalty;
        return out;
      },
      py::arg("model"), py::arg("batch"), py::arg("labels"),
      py::arg("lam") = 0.0, py::arg("sigma") = 1e-4, py::arg("sign") = 1,
      py::arg("normalize_by") = "parameter_count");

  m.def(
      "train",
      [](const eat::Model<double>& model, const DoubleArray& images,
         const std::vector<int>& labels, int epochs, double lr_initial,
         double lr_decay, double momentum, double weight_decay, int batch_size,
         double lam, double sigma, int sign, const std::string& normalize_by,
         uint64_t seed, bool shuffle) {
        eat::TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.lr_initial = lr_initial;
        cfg.lr_decay = lr_decay;
        cfg.momentum = momentum;
        cfg.weight_decay = weight_decay;
        cfg.batch_size = batch_size;
        cfg.penalty = penalty_from_args(lam, sigma, sign, normalize_by);
        cfg.seed = seed;
        cfg.shuffle = shuffle;
        const auto result =
            eat::train(model, dataset_from_arrays(images, labels), cfg);
        py::list history;
        for (const eat::EpochStats& e : result.history.epochs) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["mean_loss"] = e.mean_loss;
          d["mean_penalty"] = e.mean_penalty;
          d["lr"] = e.lr;
          d["train_accuracy"] = e.train_accuracy;
          history.append(d);
        }
        return py::make_tuple(result.model, history);
      },
      py::arg("model"), py::arg("images"), py::arg("labels"),
      py::arg("epochs"), py::arg("lr_initial") = 0.1,
      py::arg("lr_decay") = 0.95, py::arg("momentum") = 0.9,
      py::arg("weight_decay") = 5e-4, py::arg("batch_size") = 32,
      py::arg("lam") = 0.0, py::arg("sigma") = 1e-4, py::arg("sign") = 1,
      py::arg("normalize_by") = "parameter_count", py::arg("seed") = 0,
      py::arg("shuffle") = true,
      "SGD with momentum over cross-entropy plus the signed sparsity "
      "penalty. Returns (trained model, history).");

  m.def(
      "evaluate_accuracy",
      [](const eat::Model<double>& model, const DoubleArray& images,
         const std::vector<int>& labels) {
        return eat::evaluate_accuracy(model, dataset_from_arrays(images, labels));
      },
      py::arg("model"), py::arg("images"), py::arg("labels"));

  m.def(
      "simulate_energy",
      [](const eat::Model<double>& model, const DoubleArray& batch,
         double mac_energy, double nonskippable_energy, double zero_threshold) {
        eat::CostModel cost{mac_energy, nonskippable_energy, zero_threshold};
        return report_to_dict(
            eat::simulate_energy(model, tensor_from_array(batch), cost));
      },
      py::arg("model"), py::arg("batch"), py::arg("mac_energy") = 1.0,
      py::arg("nonskippable_energy") = 1.0, py::arg("zero_threshold") = 0.0,
      "Zero-skipping energy accounting for one batch.");

  m.def(
      "energy_ratio",
      [](const eat::Model<double>& model, const DoubleArray& images,
         const std::vector<int>& labels, double mac_energy,
         double nonskippable_energy, double zero_threshold, size_t batch_size) {
        eat::CostModel cost{mac_energy, nonskippable_energy, zero_threshold};
        return eat::energy_ratio_over_dataset(
            model, dataset_from_arrays(images, labels), cost, batch_size);
      },
      py::arg("model"), py::arg("images"), py::arg("labels"),
      py::arg("mac_energy") = 1.0, py::arg("nonskippable_energy") = 1.0,
      py::arg("zero_threshold") = 0.0, py::arg("batch_size") = 256);

  m.def(
      "firing_stats",
      [](const eat::Model<double>& model, const DoubleArray& images,
         const std::vector<int>& labels, double tau) {
        py::list out;
        for (const eat::FiringStat& s : eat::firing_stats(
                 model, dataset_from_arrays(images, labels), tau)) {
          py::dict d;
          d["layer_index"] = s.layer_index;
          d["layer_kind"] = eat::to_string(s.layer_kind);
          d["firing_percent"] = s.firing_percent;
          out.append(d);
        }
        return out;
      },
      py::arg("model"), py::arg("images"), py::arg("labels"),
      py::arg("tau") = 0.0);

  m.def(
      "gen_synthetic",
      [](int num_classes, int samples_per_class, int image_size,
         double noise_std, uint64_t seed, const std::string& split,
         int channels) {
        const auto ds = eat::gen_synthetic<double>(
            num_classes, samples_per_class, image_size, noise_std, seed,
            eat::split_from_string(split), channels);
        return py::make_tuple(array_from_tensor(ds.images), ds.labels);
      },
      py::arg("num_classes"), py::arg("samples_per_class"),
      py::arg("image_size"), py::arg("noise_std"), py::arg("seed"),
      py::arg("split") = "train", py::arg("channels") = 1,
      "Deterministic template-plus-noise classification data; returns "
      "(images, labels).");

  m.def(
      "load_cifar10",
      [](const std::vector<std::string>& paths, const std::string& split,
         size_t max_per_file) {
        const auto ds = eat::load_cifar10_binary<double>(
            paths, eat::split_from_string(split), max_per_file);
        return py::make_tuple(array_from_tensor(ds.images), ds.labels);
      },
      py::arg("paths"), py::arg("split") = "train", py::arg("max_per_file") = 0);

  m.def(
      "augment",
      [](const DoubleArray& image, uint64_t seed, int crop_padding,
         double max_rotation_degrees) {
        eat::Rng rng(seed);
        return array_from_tensor(eat::augment(
            tensor_from_array(image), rng, crop_padding, max_rotation_degrees));
      },
      py::arg("image"), py::arg("seed"), py::arg("crop_padding") = 4,
      py::arg("max_rotation_degrees") = 15.0);

  m.attr("__version__") = "0.1.0";
}
