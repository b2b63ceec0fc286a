#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "eat/model.hpp"
#include "eat/penalty.hpp"
#include "eat/random.hpp"
#include "eat/trainer.hpp"

namespace eat::testutil {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(shape);
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline std::vector<int> random_labels(size_t n, int classes, Rng& rng) {
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_int(0, classes - 1));
  return labels;
}

// Smallest |pre-activation| feeding any ReLU layer.
inline double relu_margin(const Model<double>& model, const Tensor& batch) {
  const auto fwd = forward(model, batch);
  double margin = 1e300;
  for (size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].kind != LayerKind::relu) continue;
    const Tensor& in =
        i == 0 ? batch : fwd.record.entries[i - 1].activation;
    for (size_t j = 0; j < in.numel(); ++j) {
      margin = std::min(margin, std::fabs(in[j]));
    }
  }
  return margin;
}

// Smallest gap between the top two strictly positive values over all maxpool
// windows. Pools here always consume ReLU outputs, whose exact zeros are
// locally constant as long as relu_margin holds, so ties at zero are not
// kinks; only near-ties between positive candidates are.
inline double pool_margin(const Model<double>& model, const Tensor& batch) {
  const auto fwd = forward(model, batch);
  double margin = 1e300;
  for (size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    if (l.kind != LayerKind::maxpool2d) continue;
    const Tensor& in = i == 0 ? batch : fwd.record.entries[i - 1].activation;
    const size_t b = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
    const auto [ho, wo] = kernels::pool_output_hw(h, w, l.window, l.stride);
    for (size_t bb = 0; bb < b; ++bb) {
      for (size_t cc = 0; cc < c; ++cc) {
        for (size_t oh = 0; oh < ho; ++oh) {
          for (size_t ow = 0; ow < wo; ++ow) {
            double best = 0.0, second = 0.0;
            int positives = 0;
            for (size_t r = 0; r < l.window; ++r) {
              for (size_t cl = 0; cl < l.window; ++cl) {
                const double v =
                    in(bb, cc, oh * l.stride + r, ow * l.stride + cl);
                if (v <= 0.0) continue;
                ++positives;
                if (v > best) {
                  second = best;
                  best = v;
                } else if (v > second) {
                  second = v;
                }
              }
            }
            if (positives >= 2) margin = std::min(margin, best - second);
          }
        }
      }
    }
  }
  return margin;
}

// Max relative error of the taped objective gradient vs central differences,
// over every coordinate of every weight tensor.
inline double objective_weight_fd_error(const Model<double>& model,
                                        const Tensor& batch,
                                        const std::vector<int>& labels,
                                        const PenaltyConfig& penalty,
                                        double eps) {
  const auto grads = objective_grad(model, batch, labels, penalty).weight_grads;
  double max_err = 0.0;
  Model<double> probe = model;
  for (size_t t = 0; t < model.weights.size(); ++t) {
    for (size_t i = 0; i < model.weights[t].numel(); ++i) {
      const double orig = probe.weights[t][i];
      probe.weights[t][i] = orig + eps;
      const double fp = objective(probe, batch, labels, penalty).value;
      probe.weights[t][i] = orig - eps;
      const double fm = objective(probe, batch, labels, penalty).value;
      probe.weights[t][i] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = grads[t][i];
      const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-12});
      max_err = std::max(max_err, std::fabs(an - fd) / denom);
    }
  }
  return max_err;
}

// Seed whose random model/batch keeps every ReLU input and pool gap at least
// `margin` away from a kink, so finite differences stay on one smooth piece.
inline uint64_t find_smooth_seed(
    const std::function<Model<double>(uint64_t)>& make_model,
    const std::function<std::pair<Tensor, std::vector<int>>(uint64_t)>&
        make_batch,
    double margin, uint64_t start = 1, uint64_t tries = 64) {
  for (uint64_t seed = start; seed < start + tries; ++seed) {
    const Model<double> model = make_model(seed);
    const auto [batch, labels] = make_batch(seed);
    if (relu_margin(model, batch) > margin &&
        pool_margin(model, batch) > margin) {
      return seed;
    }
  }
  throw Error("no smooth seed found");
}

}  // namespace eat::testutil
