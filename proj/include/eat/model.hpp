#pragma once

#include <string>
#include <utility>
#include <vector>

#include "eat/autodiff.hpp"
#include "eat/random.hpp"
#include "eat/tensor.hpp"

namespace eat {

enum class LayerKind { dense, conv2d, relu, maxpool2d, flatten };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "dense") return LayerKind::dense;
  if (s == "conv2d") return LayerKind::conv2d;
  if (s == "relu") return LayerKind::relu;
  if (s == "maxpool2d") return LayerKind::maxpool2d;
  if (s == "flatten") return LayerKind::flatten;
  throw ConfigError("unknown layer kind '" + s + "'");
}

inline bool layer_has_weights(LayerKind k) {
  return k == LayerKind::dense || k == LayerKind::conv2d;
}

// One layer of a plain sequential stack. Fan-in fields (in_features,
// in_channels) may be left 0 to be inferred from the incoming shape when the
// model is built.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  size_t in_features = 0, out_features = 0;                   // dense
  size_t in_channels = 0, out_channels = 0, kernel = 0;       // conv2d
  size_t stride = 1, padding = 0;                             // conv2d / maxpool2d
  size_t window = 0;                                          // maxpool2d

  static LayerSpec make_dense(size_t out_features, size_t in_features = 0) {
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.in_features = in_features;
    l.out_features = out_features;
    return l;
  }
  static LayerSpec make_conv2d(size_t out_channels, size_t kernel,
                               size_t stride = 1, size_t padding = 0,
                               size_t in_channels = 0) {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.in_channels = in_channels;
    l.out_channels = out_channels;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    return l;
  }
  static LayerSpec make_relu() { return LayerSpec{}; }
  static LayerSpec make_maxpool2d(size_t window, size_t stride) {
    LayerSpec l;
    l.kind = LayerKind::maxpool2d;
    l.window = window;
    l.stride = stride;
    return l;
  }
  static LayerSpec make_flatten() {
    LayerSpec l;
    l.kind = LayerKind::flatten;
    return l;
  }

  std::string describe() const {
    switch (kind) {
      case LayerKind::dense:
        return "dense(" + std::to_string(in_features) + "->" +
               std::to_string(out_features) + ")";
      case LayerKind::conv2d:
        return "conv2d(" + std::to_string(in_channels) + "->" +
               std::to_string(out_channels) + ",k" + std::to_string(kernel) +
               ",s" + std::to_string(stride) + ",p" + std::to_string(padding) +
               ")";
      case LayerKind::maxpool2d:
        return "maxpool2d(w" + std::to_string(window) + ",s" +
               std::to_string(stride) + ")";
      default:
        return to_string(kind);
    }
  }
};

// Per-sample output shape of a layer, given its per-sample input shape.
// Throws ShapeError if the layer cannot consume the input.
inline Shape layer_output_shape(const LayerSpec& layer, const Shape& in) {
  switch (layer.kind) {
    case LayerKind::dense: {
      if (in.size() != 1) {
        throw ShapeError("dense expects a flat input, got " +
                         shape_to_string(in) + " (add a flatten layer)");
      }
      if (layer.in_features != in[0]) {
        throw ShapeError("dense fan-in " + std::to_string(layer.in_features) +
                         " != input size " + std::to_string(in[0]));
      }
      return {layer.out_features};
    }
    case LayerKind::conv2d: {
      if (in.size() != 3) {
        throw ShapeError("conv2d expects [channels, h, w], got " +
                         shape_to_string(in));
      }
      if (layer.in_channels != in[0]) {
        throw ShapeError("conv2d channels " + std::to_string(layer.in_channels) +
                         " != input channels " + std::to_string(in[0]));
      }
      auto [ho, wo] = kernels::conv_output_hw(in[1], in[2], layer.kernel,
                                              layer.kernel, layer.stride,
                                              layer.padding);
      return {layer.out_channels, ho, wo};
    }
    case LayerKind::relu:
      return in;
    case LayerKind::maxpool2d: {
      if (in.size() != 3) {
        throw ShapeError("maxpool2d expects [channels, h, w], got " +
                         shape_to_string(in));
      }
      auto [ho, wo] =
          kernels::pool_output_hw(in[1], in[2], layer.window, layer.stride);
      return {in[0], ho, wo};
    }
    case LayerKind::flatten:
      return {shape_numel(in)};
  }
  throw ShapeError("unknown layer kind");
}

// Ordered layer stack plus its weight tensors: a (weight, bias) pair per
// parametric layer, in layer order.
template <class S>
struct Model {
  Shape input_shape;            // per-sample
  std::vector<LayerSpec> layers;
  std::vector<BasicTensor<S>> weights;

  size_t parameter_count() const {
    size_t m = 0;
    for (const auto& w : weights) m += w.numel();
    return m;
  }

  // Per-sample output shape of every layer.
  std::vector<Shape> layer_shapes() const {
    std::vector<Shape> shapes;
    Shape cur = input_shape;
    for (size_t i = 0; i < layers.size(); ++i) {
      try {
        cur = layer_output_shape(layers[i], cur);
      } catch (const ShapeError& e) {
        throw ShapeError("layer " + std::to_string(i) + " (" +
                         to_string(layers[i].kind) + "): " + e.what());
      }
      shapes.push_back(cur);
    }
    return shapes;
  }

  // First weight-tensor index of each layer (size_t(-1) for weightless ones).
  std::vector<size_t> weight_offsets() const {
    std::vector<size_t> off(layers.size(), static_cast<size_t>(-1));
    size_t wi = 0;
    for (size_t i = 0; i < layers.size(); ++i) {
      if (layer_has_weights(layers[i].kind)) {
        off[i] = wi;
        wi += 2;
      }
    }
    return off;
  }

  void validate() const {
    if (layers.empty()) throw ConfigError("model has no layers");
    if (input_shape.empty()) throw ConfigError("model has no input shape");
    layer_shapes();  // throws on any inter-layer mismatch
    size_t expected = 0;
    for (const auto& l : layers) {
      if (layer_has_weights(l.kind)) expected += 2;
    }
    if (weights.size() != expected) {
      throw ShapeError("model has " + std::to_string(weights.size()) +
                       " weight tensors, expected " + std::to_string(expected));
    }
    for (const auto& w : weights) {
      if (!w.all_finite()) throw NonFiniteError("model weight is non-finite");
    }
  }

  std::string describe() const {
    std::string s = shape_to_string(input_shape);
    for (const auto& l : layers) s += "|" + l.describe();
    return s;
  }
};

// Resolves inferred fan-ins and initializes weights: He-style uniform
// U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero, all drawn from `seed`.
template <class S>
Model<S> init_model(Shape input_shape, std::vector<LayerSpec> layers,
                    uint64_t seed) {
  Model<S> model;
  model.input_shape = std::move(input_shape);
  Rng rng = Rng::derive(seed, 0x1717u);
  Shape cur = model.input_shape;
  for (size_t i = 0; i < layers.size(); ++i) {
    LayerSpec& l = layers[i];
    if (l.kind == LayerKind::dense) {
      if (cur.size() != 1) {
        throw ShapeError("layer " + std::to_string(i) +
                         " (dense): expects a flat input, got " +
                         shape_to_string(cur) + " (add a flatten layer)");
      }
      if (l.in_features == 0) l.in_features = cur[0];
      if (l.out_features == 0) {
        throw ConfigError("dense layer needs out_features");
      }
    } else if (l.kind == LayerKind::conv2d) {
      if (cur.size() != 3) {
        throw ShapeError("layer " + std::to_string(i) +
                         " (conv2d): expects [channels, h, w], got " +
                         shape_to_string(cur));
      }
      if (l.in_channels == 0) l.in_channels = cur[0];
      if (l.out_channels == 0 || l.kernel == 0) {
        throw ConfigError("conv2d layer needs out_channels and kernel");
      }
    } else if (l.kind == LayerKind::maxpool2d) {
      if (l.window == 0 || l.stride == 0) {
        throw ConfigError("maxpool2d layer needs window and stride");
      }
    }
    model.layers.push_back(l);
    if (l.kind == LayerKind::dense) {
      const double limit = std::sqrt(6.0 / static_cast<double>(l.in_features));
      BasicTensor<S> w(Shape{l.out_features, l.in_features});
      for (size_t j = 0; j < w.numel(); ++j) {
        w[j] = static_cast<S>(rng.uniform(-limit, limit));
      }
      model.weights.push_back(std::move(w));
      model.weights.push_back(BasicTensor<S>(Shape{l.out_features}));
    } else if (l.kind == LayerKind::conv2d) {
      const size_t fan_in = l.in_channels * l.kernel * l.kernel;
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      BasicTensor<S> w(
          Shape{l.out_channels, l.in_channels, l.kernel, l.kernel});
      for (size_t j = 0; j < w.numel(); ++j) {
        w[j] = static_cast<S>(rng.uniform(-limit, limit));
      }
      model.weights.push_back(std::move(w));
      model.weights.push_back(BasicTensor<S>(Shape{l.out_channels}));
    }
    cur = layer_output_shape(model.layers.back(), cur);
  }
  model.validate();
  return model;
}

// Every layer's output captured during one forward pass, in layer order.
template <class S>
struct ActivationRecord {
  struct Entry {
    int layer_index;
    LayerKind layer_kind;
    BasicTensor<S> activation;
  };
  std::vector<Entry> entries;
};

template <class S>
void check_batch(const Model<S>& model, const BasicTensor<S>& batch) {
  const Shape& in = model.input_shape;
  bool ok = batch.rank() == in.size() + 1 && batch.dim(0) >= 1;
  if (ok) {
    for (size_t d = 0; d < in.size(); ++d) {
      if (batch.dim(d + 1) != in[d]) ok = false;
    }
  }
  if (!ok) {
    throw ShapeError("batch shape " + shape_to_string(batch.shape()) +
                     " does not match model input " + shape_to_string(in));
  }
}

template <class S>
struct ForwardResult {
  BasicTensor<S> logits;
  ActivationRecord<S> record;
};

// Inference-only forward pass; captures every layer output.
template <class S>
ForwardResult<S> forward(const Model<S>& model, const BasicTensor<S>& batch) {
  check_batch(model, batch);
  const auto offsets = model.weight_offsets();
  ActivationRecord<S> record;
  BasicTensor<S> cur = batch;
  for (size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    try {
      switch (l.kind) {
        case LayerKind::dense:
          cur = kernels::dense_forward(cur, model.weights[offsets[i]],
                                       model.weights[offsets[i] + 1]);
          break;
        case LayerKind::conv2d:
          cur = kernels::conv2d_forward(cur, model.weights[offsets[i]],
                                        model.weights[offsets[i] + 1],
                                        l.stride, l.padding);
          break;
        case LayerKind::relu:
          cur = kernels::relu_forward(cur);
          break;
        case LayerKind::maxpool2d:
          cur = kernels::maxpool2d_forward(cur, l.window, l.stride);
          break;
        case LayerKind::flatten:
          cur = cur.reshaped(Shape{cur.dim(0), cur.numel() / cur.dim(0)});
          break;
      }
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" +
                       to_string(l.kind) + "): " + e.what());
    }
    if (!cur.all_finite()) {
      throw NonFiniteError("layer " + std::to_string(i) + " (" +
                           to_string(l.kind) +
                           ") produced non-finite activations");
    }
    record.entries.push_back({static_cast<int>(i), l.kind, cur});
  }
  return {record.entries.back().activation, record};
}

// Forward pass recorded on a tape: weights are pushed as trainable slots and
// every layer output gets a tape id, so any scalar of the logits or of the
// recorded activations can be differentiated back to the weights.
template <class S>
struct TapedForward {
  ValueId logits;
  std::vector<ValueId> weight_ids;      // parallel to model.weights
  std::vector<ValueId> activation_ids;  // one per layer
  ActivationRecord<S> record;
};

template <class S>
TapedForward<S> forward(GradientTape<S>& tape, const Model<S>& model,
                        const BasicTensor<S>& batch) {
  check_batch(model, batch);
  const auto offsets = model.weight_offsets();
  TapedForward<S> out;
  out.weight_ids.reserve(model.weights.size());
  for (const auto& w : model.weights) out.weight_ids.push_back(tape.push(w, true));
  ValueId cur = tape.push(batch, false);
  for (size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    try {
      switch (l.kind) {
        case LayerKind::dense:
          cur = dense(tape, cur, out.weight_ids[offsets[i]],
                      out.weight_ids[offsets[i] + 1]);
          break;
        case LayerKind::conv2d:
          cur = conv2d(tape, cur, out.weight_ids[offsets[i]],
                       out.weight_ids[offsets[i] + 1], l.stride, l.padding);
          break;
        case LayerKind::relu:
          cur = relu(tape, cur);
          break;
        case LayerKind::maxpool2d:
          cur = maxpool2d(tape, cur, l.window, l.stride);
          break;
        case LayerKind::flatten:
          cur = flatten(tape, cur);
          break;
      }
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" +
                       to_string(l.kind) + "): " + e.what());
    }
    if (!tape.value(cur).all_finite()) {
      throw NonFiniteError("layer " + std::to_string(i) + " (" +
                           to_string(l.kind) +
                           ") produced non-finite activations");
    }
    out.activation_ids.push_back(cur);
    out.record.entries.push_back({static_cast<int>(i), l.kind, tape.value(cur)});
  }
  out.logits = cur;
  return out;
}

}  // namespace eat
