#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <vector>

#include "eat/data.hpp"
#include "eat/model.hpp"
#include "eat/penalty.hpp"
#include "eat/tensor.hpp"

#include "json.hpp"

namespace eat {

// Unit-cost model of a zero-skipping accelerator. A multiply-accumulate is
// skippable when its activation-side operand has |a| <= zero_threshold
// (weight-side zeros are never skipped). Bias adds, ReLU comparisons and
// pooling reads are non-skippable. Absolute energies are arbitrary units;
// the reported ratios are what matter.
struct CostModel {
  double mac_energy = 1.0;
  double nonskippable_energy = 1.0;
  double zero_threshold = 0.0;  // exact zeros only, by default

  void validate() const {
    if (mac_energy <= 0.0 || nonskippable_energy <= 0.0) {
      throw ConfigError("cost model: energies must be > 0");
    }
    if (zero_threshold < 0.0) {
      throw ConfigError("cost model: zero_threshold must be >= 0");
    }
  }
};

struct OpCounts {
  uint64_t macs = 0;
  uint64_t nonskippable = 0;
};

// Static op census for one layer, given its input shape *including* the batch
// dimension (counts scale with batch size).
//   dense  : macs = B*nin*nout,            nonskippable = B*nout bias adds
//   conv2d : macs = B*Co*H'*W'*Ci*kh*kw,   nonskippable = B*Co*H'*W' bias adds
//   relu   : no macs,                      nonskippable = element count
//   maxpool: no macs,                      nonskippable = windows*window^2
//   flatten: nothing
inline OpCounts count_layer_ops(const LayerSpec& layer, const Shape& input) {
  if (input.size() < 2) {
    throw ShapeError("count_layer_ops: input shape must include a batch dim");
  }
  const uint64_t batch = input[0];
  switch (layer.kind) {
    case LayerKind::dense: {
      if (input.size() != 2 || input[1] != layer.in_features) {
        throw ShapeError("count_layer_ops: dense input mismatch " +
                         shape_to_string(input));
      }
      return {batch * layer.in_features * layer.out_features,
              batch * layer.out_features};
    }
    case LayerKind::conv2d: {
      if (input.size() != 4 || input[1] != layer.in_channels) {
        throw ShapeError("count_layer_ops: conv2d input mismatch " +
                         shape_to_string(input));
      }
      auto [ho, wo] = kernels::conv_output_hw(input[2], input[3], layer.kernel,
                                              layer.kernel, layer.stride,
                                              layer.padding);
      const uint64_t positions = batch * layer.out_channels * ho * wo;
      return {positions * layer.in_channels * layer.kernel * layer.kernel,
              positions};
    }
    case LayerKind::relu:
      return {0, shape_numel(input)};
    case LayerKind::maxpool2d: {
      if (input.size() != 4) {
        throw ShapeError("count_layer_ops: maxpool2d input mismatch " +
                         shape_to_string(input));
      }
      auto [ho, wo] =
          kernels::pool_output_hw(input[2], input[3], layer.window, layer.stride);
      const uint64_t windows = batch * input[1] * ho * wo;
      return {0, windows * layer.window * layer.window};
    }
    case LayerKind::flatten:
      return {0, 0};
  }
  throw ShapeError("count_layer_ops: unknown layer kind");
}

// MACs skipped by zero-skipping, given the layer's input activations.
// Dense: a sample with z zero inputs skips z*nout MACs. Conv: every zero
// operand read by a kernel tap is skipped, and out-of-bounds reads are
// zero-padding cells, which always skip.
template <class S>
uint64_t count_skipped_macs(const LayerSpec& layer, const BasicTensor<S>& input,
                            double tau) {
  auto is_zero = [tau](S v) {
    return std::fabs(static_cast<double>(v)) <= tau;
  };
  switch (layer.kind) {
    case LayerKind::dense: {
      const size_t batch = input.dim(0), nin = input.dim(1);
      uint64_t skipped = 0;
      for (size_t s = 0; s < batch; ++s) {
        uint64_t zeros = 0;
        const S* row = input.data() + s * nin;
        for (size_t i = 0; i < nin; ++i) {
          if (is_zero(row[i])) ++zeros;
        }
        skipped += zeros * layer.out_features;
      }
      return skipped;
    }
    case LayerKind::conv2d: {
      const size_t batch = input.dim(0), ci = input.dim(1), h = input.dim(2),
                   w = input.dim(3);
      auto [ho, wo] = kernels::conv_output_hw(h, w, layer.kernel, layer.kernel,
                                              layer.stride, layer.padding);
      const long p = static_cast<long>(layer.padding);
      uint64_t skipped = 0;
      for (size_t bb = 0; bb < batch; ++bb) {
        for (size_t oh = 0; oh < ho; ++oh) {
          for (size_t ow = 0; ow < wo; ++ow) {
            uint64_t zeros = 0;
            for (size_t ic = 0; ic < ci; ++ic) {
              for (size_t r = 0; r < layer.kernel; ++r) {
                const long ih = static_cast<long>(oh * layer.stride + r) - p;
                for (size_t c = 0; c < layer.kernel; ++c) {
                  const long iw = static_cast<long>(ow * layer.stride + c) - p;
                  if (ih < 0 || ih >= static_cast<long>(h) || iw < 0 ||
                      iw >= static_cast<long>(w)) {
                    ++zeros;  // padding cell
                  } else if (is_zero(input(bb, ic, static_cast<size_t>(ih),
                                           static_cast<size_t>(iw)))) {
                    ++zeros;
                  }
                }
              }
            }
            skipped += zeros * layer.out_channels;
          }
        }
      }
      return skipped;
    }
    default:
      return 0;  // no multiplies to skip
  }
}

struct LayerEnergy {
  int layer_index = 0;
  LayerKind layer_kind = LayerKind::relu;
  uint64_t total_macs = 0;
  uint64_t skipped_macs = 0;
  uint64_t nonskippable_ops = 0;
  uint64_t fired_elements = 0;  // output elements with |a| > tau
  uint64_t total_elements = 0;
  double energy_optimized = 0.0;
  double energy_worst_case = 0.0;

  double firing_fraction() const {
    return total_elements == 0
               ? 0.0
               : static_cast<double>(fired_elements) /
                     static_cast<double>(total_elements);
  }
  double ratio() const {
    return energy_worst_case == 0.0 ? 1.0
                                    : energy_optimized / energy_worst_case;
  }
};

struct EnergyReport {
  std::vector<LayerEnergy> per_layer;
  uint64_t total_macs = 0;
  uint64_t skipped_macs = 0;
  uint64_t nonskippable_ops = 0;
  uint64_t fired_elements = 0;
  uint64_t total_elements = 0;
  double energy_optimized = 0.0;
  double energy_worst_case = 0.0;
  double ratio = 1.0;

  double firing_fraction() const {
    return total_elements == 0
               ? 0.0
               : static_cast<double>(fired_elements) /
                     static_cast<double>(total_elements);
  }
};

// Accumulates counts of `b` into `a` (same model, more batches).
inline void merge_into(EnergyReport& a, const EnergyReport& b) {
  if (a.per_layer.empty()) {
    a.per_layer = b.per_layer;
  } else {
    if (a.per_layer.size() != b.per_layer.size()) {
      throw ShapeError("cannot merge energy reports of different models");
    }
    for (size_t i = 0; i < a.per_layer.size(); ++i) {
      LayerEnergy& la = a.per_layer[i];
      const LayerEnergy& lb = b.per_layer[i];
      la.total_macs += lb.total_macs;
      la.skipped_macs += lb.skipped_macs;
      la.nonskippable_ops += lb.nonskippable_ops;
      la.fired_elements += lb.fired_elements;
      la.total_elements += lb.total_elements;
      la.energy_optimized += lb.energy_optimized;
      la.energy_worst_case += lb.energy_worst_case;
    }
  }
  a.total_macs += b.total_macs;
  a.skipped_macs += b.skipped_macs;
  a.nonskippable_ops += b.nonskippable_ops;
  a.fired_elements += b.fired_elements;
  a.total_elements += b.total_elements;
  a.energy_optimized += b.energy_optimized;
  a.energy_worst_case += b.energy_worst_case;
  a.ratio = a.energy_worst_case == 0.0 ? 1.0
                                       : a.energy_optimized / a.energy_worst_case;
}

// Energy accounting for one already-captured forward pass. Layer 0's skips
// come from the raw batch; layer k's from layer k-1's recorded output.
template <class S>
EnergyReport energy_from_record(const Model<S>& model,
                                const BasicTensor<S>& batch,
                                const ActivationRecord<S>& record,
                                const CostModel& cost) {
  cost.validate();
  if (record.entries.size() != model.layers.size()) {
    throw ShapeError("activation record does not match model");
  }
  EnergyReport report;
  for (size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& layer = model.layers[i];
    const BasicTensor<S>& input =
        i == 0 ? batch : record.entries[i - 1].activation;
    const BasicTensor<S>& output = record.entries[i].activation;
    const OpCounts ops = count_layer_ops(layer, input.shape());
    LayerEnergy le;
    le.layer_index = static_cast<int>(i);
    le.layer_kind = layer.kind;
    le.total_macs = ops.macs;
    le.skipped_macs = count_skipped_macs(layer, input, cost.zero_threshold);
    le.nonskippable_ops = ops.nonskippable;
    le.total_elements = output.numel();
    le.fired_elements = exact_l0(output, cost.zero_threshold);
    le.energy_worst_case =
        cost.mac_energy * static_cast<double>(le.total_macs) +
        cost.nonskippable_energy * static_cast<double>(le.nonskippable_ops);
    le.energy_optimized =
        cost.mac_energy *
            static_cast<double>(le.total_macs - le.skipped_macs) +
        cost.nonskippable_energy * static_cast<double>(le.nonskippable_ops);
    report.total_macs += le.total_macs;
    report.skipped_macs += le.skipped_macs;
    report.nonskippable_ops += le.nonskippable_ops;
    report.fired_elements += le.fired_elements;
    report.total_elements += le.total_elements;
    report.energy_optimized += le.energy_optimized;
    report.energy_worst_case += le.energy_worst_case;
    report.per_layer.push_back(le);
  }
  report.ratio = report.energy_worst_case == 0.0
                     ? 1.0
                     : report.energy_optimized / report.energy_worst_case;
  return report;
}

// Runs the forward pass and accounts for one batch.
template <class S>
EnergyReport simulate_energy(const Model<S>& model, const BasicTensor<S>& batch,
                             const CostModel& cost) {
  const auto fwd = forward(model, batch);
  return energy_from_record(model, batch, fwd.record, cost);
}

template <class S>
EnergyReport simulate_energy_dataset(const Model<S>& model,
                                     const Dataset<S>& dataset,
                                     const CostModel& cost,
                                     size_t batch_size = 256) {
  if (dataset.size() == 0) throw ConfigError("simulate_energy: empty dataset");
  EnergyReport report;
  std::vector<size_t> idx;
  for (size_t start = 0; start < dataset.size(); start += batch_size) {
    const size_t end = std::min(dataset.size(), start + batch_size);
    idx.clear();
    for (size_t i = start; i < end; ++i) idx.push_back(i);
    auto [batch, labels] = make_batch(dataset, idx);
    merge_into(report, simulate_energy(model, batch, cost));
  }
  return report;
}

// Energy-weighted dataset ratio: sum(optimized) / sum(worst case), not a mean
// of per-batch ratios.
template <class S>
double energy_ratio_over_dataset(const Model<S>& model,
                                 const Dataset<S>& dataset,
                                 const CostModel& cost,
                                 size_t batch_size = 256) {
  return simulate_energy_dataset(model, dataset, cost, batch_size).ratio;
}

// 100 * (ratio_st - ratio_eat) / ratio_st.
inline double energy_decrease(double ratio_st, double ratio_eat) {
  if (ratio_st <= 0.0 || ratio_eat <= 0.0) {
    throw ConfigError("energy_decrease: ratios must be > 0");
  }
  return 100.0 * (ratio_st - ratio_eat) / ratio_st;
}

struct FiringStat {
  int layer_index = 0;
  LayerKind layer_kind = LayerKind::relu;
  double firing_percent = 0.0;
};

// Per-layer percentage of activation elements with |a| > tau over a dataset.
template <class S>
std::vector<FiringStat> firing_stats(const Model<S>& model,
                                     const Dataset<S>& dataset, double tau,
                                     size_t batch_size = 256) {
  CostModel cost;
  cost.zero_threshold = tau;
  const EnergyReport report =
      simulate_energy_dataset(model, dataset, cost, batch_size);
  std::vector<FiringStat> stats;
  for (const LayerEnergy& le : report.per_layer) {
    stats.push_back({le.layer_index, le.layer_kind,
                     100.0 * le.firing_fraction()});
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Serialization. CSV has one row per layer plus a final "total" row
// (layer_index -1); columns are fixed.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, end);
}

inline std::string energy_report_csv(const EnergyReport& report) {
  std::string out =
      "layer_index,layer_kind,total_macs,skipped_macs,nonskippable_ops,"
      "firing_percent,energy_optimized,energy_worst_case,ratio\n";
  auto row = [&out](int index, const std::string& kind, uint64_t macs,
                    uint64_t skipped, uint64_t nonskip, double firing_percent,
                    double opt, double worst, double ratio) {
    out += std::to_string(index) + "," + kind + "," + std::to_string(macs) +
           "," + std::to_string(skipped) + "," + std::to_string(nonskip) + "," +
           format_double(firing_percent) + "," + format_double(opt) + "," +
           format_double(worst) + "," + format_double(ratio) + "\n";
  };
  for (const LayerEnergy& le : report.per_layer) {
    row(le.layer_index, to_string(le.layer_kind), le.total_macs,
        le.skipped_macs, le.nonskippable_ops, 100.0 * le.firing_fraction(),
        le.energy_optimized, le.energy_worst_case, le.ratio());
  }
  row(-1, "total", report.total_macs, report.skipped_macs,
      report.nonskippable_ops, 100.0 * report.firing_fraction(),
      report.energy_optimized, report.energy_worst_case, report.ratio);
  return out;
}

inline nlohmann::ordered_json energy_report_json(const EnergyReport& report) {
  nlohmann::ordered_json j;
  j["per_layer"] = nlohmann::ordered_json::array();
  for (const LayerEnergy& le : report.per_layer) {
    j["per_layer"].push_back({{"layer_index", le.layer_index},
                              {"layer_kind", to_string(le.layer_kind)},
                              {"total_macs", le.total_macs},
                              {"skipped_macs", le.skipped_macs},
                              {"nonskippable_ops", le.nonskippable_ops},
                              {"firing_percent", 100.0 * le.firing_fraction()},
                              {"energy_optimized", le.energy_optimized},
                              {"energy_worst_case", le.energy_worst_case},
                              {"ratio", le.ratio()}});
  }
  j["total"] = {{"total_macs", report.total_macs},
                {"skipped_macs", report.skipped_macs},
                {"nonskippable_ops", report.nonskippable_ops},
                {"firing_percent", 100.0 * report.firing_fraction()},
                {"energy_optimized", report.energy_optimized},
                {"energy_worst_case", report.energy_worst_case},
                {"ratio", report.ratio}};
  return j;
}

}  // namespace eat
