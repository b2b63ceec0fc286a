#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "eat/autodiff.hpp"
#include "eat/model.hpp"
#include "eat/tensor.hpp"

namespace eat {

// Smooth l0 surrogate: sum_j x_j^2 / (x_j^2 + sigma). Approaches the exact
// nonzero count as sigma -> 0+.
template <class S>
double l0_approx(const BasicTensor<S>& x, double sigma) {
  if (sigma <= 0.0) throw ConfigError("l0_approx: sigma must be > 0");
  double acc = 0.0;
  for (size_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>(x[i]);
    acc += v * v / (v * v + sigma);
  }
  return acc;
}

// Analytic derivative, component j: 2*sigma*x_j / (x_j^2 + sigma)^2.
template <class S>
BasicTensor<S> l0_approx_grad(const BasicTensor<S>& x, double sigma) {
  if (sigma <= 0.0) throw ConfigError("l0_approx_grad: sigma must be > 0");
  BasicTensor<S> g(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>(x[i]);
    const double d = v * v + sigma;
    g[i] = static_cast<S>(2.0 * sigma * v / (d * d));
  }
  return g;
}

// Number of elements with |x_j| > tau.
template <class S>
size_t exact_l0(const BasicTensor<S>& x, double tau = 0.0) {
  if (tau < 0.0) throw ConfigError("exact_l0: tau must be >= 0");
  size_t n = 0;
  for (size_t i = 0; i < x.numel(); ++i) {
    if (std::fabs(static_cast<double>(x[i])) > tau) ++n;
  }
  return n;
}

enum class NormalizeBy { parameter_count, activation_count, none };

inline const char* to_string(NormalizeBy n) {
  switch (n) {
    case NormalizeBy::parameter_count: return "parameter_count";
    case NormalizeBy::activation_count: return "activation_count";
    case NormalizeBy::none: return "none";
  }
  return "?";
}

inline NormalizeBy normalize_by_from_string(const std::string& s) {
  if (s == "parameter_count") return NormalizeBy::parameter_count;
  if (s == "activation_count") return NormalizeBy::activation_count;
  if (s == "none") return NormalizeBy::none;
  throw ConfigError("unknown normalize_by '" + s + "'");
}

// Which recorded activations the penalty sums over. An empty `kinds` list
// means every kind. The final layer (the logits) is excluded unless
// include_final_layer is set. Note a flatten layer's output repeats its
// input's values, so with the default filter those values are counted twice;
// exclude flatten via `kinds` if that matters for an analysis.
struct LayerFilter {
  std::vector<LayerKind> kinds;
  bool include_final_layer = false;

  bool matches(LayerKind k) const {
    if (kinds.empty()) return true;
    for (LayerKind want : kinds) {
      if (want == k) return true;
    }
    return false;
  }
};

struct PenaltyConfig {
  double sigma = 1e-4;  // approximation sharpness; smaller = closer to exact l0
  double lambda = 0.0;  // penalty weight; 0 disables the penalty entirely
  int sign = +1;        // +1 rewards sparsity, -1 rewards firing (sponge mode)
  NormalizeBy normalize_by = NormalizeBy::parameter_count;
  LayerFilter layer_filter;

  void validate() const {
    if (sigma <= 0.0) throw ConfigError("penalty: sigma must be > 0");
    if (lambda < 0.0) throw ConfigError("penalty: lambda must be >= 0");
    if (sign != 1 && sign != -1) {
      throw ConfigError("penalty: sign must be +1 or -1");
    }
  }
};

// Indices of record entries selected by the filter.
template <class S>
std::vector<size_t> selected_layers(const ActivationRecord<S>& record,
                                    const LayerFilter& filter) {
  std::vector<size_t> sel;
  for (size_t i = 0; i < record.entries.size(); ++i) {
    if (!filter.include_final_layer && i + 1 == record.entries.size()) continue;
    if (filter.matches(record.entries[i].layer_kind)) sel.push_back(i);
  }
  if (sel.empty()) {
    throw ConfigError("penalty layer filter selects no layer");
  }
  return sel;
}

template <class S>
double penalty_denominator(const ActivationRecord<S>& record,
                           const std::vector<size_t>& selected,
                           NormalizeBy normalize_by, size_t param_count) {
  const size_t batch = record.entries.front().activation.dim(0);
  double denom = static_cast<double>(batch);
  switch (normalize_by) {
    case NormalizeBy::parameter_count:
      if (param_count == 0) {
        throw ConfigError("penalty: parameter count must be > 0");
      }
      denom *= static_cast<double>(param_count);
      break;
    case NormalizeBy::activation_count: {
      size_t per_sample = 0;
      for (size_t i : selected) {
        per_sample += record.entries[i].activation.numel() / batch;
      }
      denom *= static_cast<double>(per_sample);
      break;
    }
    case NormalizeBy::none:
      break;
  }
  return denom;
}

// Batch-mean, normalized sum of l0_approx over the selected activations:
// (1/B) * sum_k l0_approx(phi_k, sigma) / denom.
template <class S>
double sparsity_penalty(const ActivationRecord<S>& record,
                        const PenaltyConfig& cfg, size_t param_count) {
  cfg.validate();
  if (record.entries.empty()) {
    throw ConfigError("sparsity_penalty: empty activation record");
  }
  const auto sel = selected_layers(record, cfg.layer_filter);
  double acc = 0.0;
  for (size_t i : sel) acc += l0_approx(record.entries[i].activation, cfg.sigma);
  return acc / penalty_denominator(record, sel, cfg.normalize_by, param_count);
}

// Taped l0_approx: scalar output differentiable w.r.t. x.
template <class S>
ValueId l0_approx(GradientTape<S>& t, ValueId x, double sigma) {
  if (sigma <= 0.0) throw ConfigError("l0_approx: sigma must be > 0");
  ValueId out = t.push(
      BasicTensor<S>::scalar(static_cast<S>(l0_approx(t.value(x), sigma))));
  t.record([x, out, sigma](GradientTape<S>& tp) {
    const S g = tp.grad(out)[0];
    const auto& xv = tp.value(x);
    auto& gx = tp.grad(x);
    for (size_t i = 0; i < xv.numel(); ++i) {
      const double v = static_cast<double>(xv[i]);
      const double d = v * v + sigma;
      gx[i] += g * static_cast<S>(2.0 * sigma * v / (d * d));
    }
  });
  return out;
}

// Taped sparsity penalty over a recorded forward pass.
template <class S>
ValueId sparsity_penalty(GradientTape<S>& t, const TapedForward<S>& fwd,
                         const PenaltyConfig& cfg, size_t param_count) {
  cfg.validate();
  if (fwd.record.entries.empty()) {
    throw ConfigError("sparsity_penalty: empty activation record");
  }
  const auto sel = selected_layers(fwd.record, cfg.layer_filter);
  ValueId acc;
  for (size_t i : sel) {
    ValueId term = l0_approx(t, fwd.activation_ids[i], cfg.sigma);
    acc = acc.valid() ? add(t, acc, term) : term;
  }
  const double denom =
      penalty_denominator(fwd.record, sel, cfg.normalize_by, param_count);
  return scale(t, acc, 1.0 / denom);
}

}  // namespace eat
