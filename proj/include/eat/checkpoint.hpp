#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "eat/model.hpp"
#include "eat/tensor.hpp"

// Binary model checkpoint, little-endian throughout:
//
//   "EATM"                      magic
//   u32  version (= 1)
//   u8   scalar size in bytes (4 = float32, 8 = float64)
//   u8   input-shape rank, then u64 per dim
//   u32  layer count
//   per layer: u8 kind, then u64 x8:
//     in_features, out_features, in_channels, out_channels,
//     kernel, stride, padding, window
//   u32  weight-tensor count
//   per tensor: u8 rank, u64 per dim, then raw scalars
//
// Round-trips are bit-exact for the stored scalar type.

namespace eat {

namespace detail {

constexpr char kCheckpointMagic[4] = {'E', 'A', 'T', 'M'};
constexpr uint32_t kCheckpointVersion = 1;

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class U>
void write_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) &
                                        0xff);
  }
  write_bytes(os, buf, sizeof(U));
}

inline void write_scalar_le(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  write_le(os, bits);
}
inline void write_scalar_le(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  write_le(os, bits);
}

inline void read_bytes(std::istream& is, void* p, size_t n,
                       const std::string& what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw IoError("checkpoint truncated while reading " + what);
  }
}

template <class U>
U read_le(std::istream& is, const std::string& what) {
  unsigned char buf[sizeof(U)];
  read_bytes(is, buf, sizeof(U), what);
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  }
  return static_cast<U>(v);
}

template <class S>
S read_scalar_le(std::istream& is, const std::string& what) {
  if constexpr (sizeof(S) == 8) {
    const uint64_t bits = read_le<uint64_t>(is, what);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return static_cast<S>(v);
  } else {
    const uint32_t bits = read_le<uint32_t>(is, what);
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return static_cast<S>(v);
  }
}

inline void write_shape(std::ostream& os, const Shape& shape) {
  write_le<uint8_t>(os, static_cast<uint8_t>(shape.size()));
  for (size_t d : shape) write_le<uint64_t>(os, d);
}

inline Shape read_shape(std::istream& is, const std::string& what) {
  const uint8_t rank = read_le<uint8_t>(is, what);
  Shape shape(rank);
  for (auto& d : shape) {
    d = static_cast<size_t>(read_le<uint64_t>(is, what));
  }
  return shape;
}

}  // namespace detail

template <class S>
void save_model(const Model<S>& model, const std::string& path) {
  model.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint '" + path + "'");
  detail::write_bytes(os, detail::kCheckpointMagic, 4);
  detail::write_le<uint32_t>(os, detail::kCheckpointVersion);
  detail::write_le<uint8_t>(os, static_cast<uint8_t>(sizeof(S)));
  detail::write_shape(os, model.input_shape);
  detail::write_le<uint32_t>(os, static_cast<uint32_t>(model.layers.size()));
  for (const LayerSpec& l : model.layers) {
    detail::write_le<uint8_t>(os, static_cast<uint8_t>(l.kind));
    for (size_t v : {l.in_features, l.out_features, l.in_channels,
                     l.out_channels, l.kernel, l.stride, l.padding, l.window}) {
      detail::write_le<uint64_t>(os, v);
    }
  }
  detail::write_le<uint32_t>(os, static_cast<uint32_t>(model.weights.size()));
  for (const auto& w : model.weights) {
    detail::write_shape(os, w.shape());
    for (size_t i = 0; i < w.numel(); ++i) detail::write_scalar_le(os, w[i]);
  }
  if (!os) throw IoError("short write to checkpoint '" + path + "'");
}

// Scalar width stored in a checkpoint (4 or 8), without loading it.
inline size_t checkpoint_scalar_size(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[4];
  detail::read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, detail::kCheckpointMagic, 4) != 0) {
    throw IoError("'" + path + "' is not a model checkpoint (bad magic)");
  }
  const uint32_t version = detail::read_le<uint32_t>(is, "version");
  if (version != detail::kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const uint8_t ss = detail::read_le<uint8_t>(is, "scalar size");
  if (ss != 4 && ss != 8) {
    throw IoError("unsupported checkpoint scalar size " + std::to_string(ss));
  }
  return ss;
}

template <class S>
Model<S> load_model(const std::string& path) {
  const size_t stored = checkpoint_scalar_size(path);
  if (stored != sizeof(S)) {
    throw IoError("checkpoint '" + path + "' stores " +
                  std::to_string(stored * 8) + "-bit scalars, expected " +
                  std::to_string(sizeof(S) * 8) + "-bit");
  }
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  is.seekg(9);  // past magic, version, scalar size
  Model<S> model;
  model.input_shape = detail::read_shape(is, "input shape");
  const uint32_t layer_count = detail::read_le<uint32_t>(is, "layer count");
  for (uint32_t i = 0; i < layer_count; ++i) {
    LayerSpec l;
    const uint8_t kind = detail::read_le<uint8_t>(is, "layer kind");
    if (kind > static_cast<uint8_t>(LayerKind::flatten)) {
      throw IoError("checkpoint has unknown layer kind " + std::to_string(kind));
    }
    l.kind = static_cast<LayerKind>(kind);
    uint64_t fields[8];
    for (auto& f : fields) f = detail::read_le<uint64_t>(is, "layer fields");
    l.in_features = fields[0];
    l.out_features = fields[1];
    l.in_channels = fields[2];
    l.out_channels = fields[3];
    l.kernel = fields[4];
    l.stride = fields[5];
    l.padding = fields[6];
    l.window = fields[7];
    model.layers.push_back(l);
  }
  const uint32_t tensor_count = detail::read_le<uint32_t>(is, "tensor count");
  for (uint32_t i = 0; i < tensor_count; ++i) {
    const Shape shape = detail::read_shape(is, "tensor shape");
    BasicTensor<S> w(shape);
    for (size_t j = 0; j < w.numel(); ++j) {
      w[j] = detail::read_scalar_le<S>(is, "tensor data");
    }
    model.weights.push_back(std::move(w));
  }
  char extra;
  if (is.read(&extra, 1), is.gcount() != 0) {
    throw IoError("checkpoint '" + path + "' has trailing bytes");
  }
  try {
    model.validate();
  } catch (const Error& e) {
    throw IoError("checkpoint '" + path + "' is inconsistent: " + e.what());
  }
  return model;
}

using AnyModel = std::variant<Model<double>, Model<float>>;

inline AnyModel load_model_any(const std::string& path) {
  if (checkpoint_scalar_size(path) == 8) {
    return load_model<double>(path);
  }
  return load_model<float>(path);
}

}  // namespace eat
