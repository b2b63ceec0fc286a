#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "eat/tensor.hpp"

namespace eat {

// Handle to a tensor slot on a GradientTape.
struct ValueId {
  size_t index = static_cast<size_t>(-1);
  bool valid() const { return index != static_cast<size_t>(-1); }
};

// Reverse-mode tape. Values are stored in the order they are produced, so
// every operation's inputs precede it and one reverse sweep over the recorded
// nodes propagates gradients to everything, trainables included.
template <class S>
class GradientTape {
 public:
  using T = BasicTensor<S>;

  ValueId push(T value, bool trainable = false) {
    slots_.push_back(Slot{std::move(value), T(), trainable});
    return ValueId{slots_.size() - 1};
  }

  const T& value(ValueId id) const { return slot(id).value; }
  T& grad(ValueId id) { return slot(id).grad; }
  const T& grad(ValueId id) const { return slot(id).grad; }
  bool trainable(ValueId id) const { return slot(id).trainable; }
  size_t size() const { return slots_.size(); }

  // backward_fn reads grad(output) and accumulates (+=) into input grads.
  void record(std::function<void(GradientTape&)> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  void backward(ValueId loss) {
    if (!loss.valid() || loss.index >= slots_.size()) {
      throw Error("backward: loss is not a value recorded on this tape");
    }
    if (slots_[loss.index].value.numel() != 1) {
      throw Error("backward: loss is not a scalar (shape " +
                  shape_to_string(slots_[loss.index].value.shape()) + ")");
    }
    for (Slot& s : slots_) s.grad = T(s.value.shape());
    slots_[loss.index].grad[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
  }

 private:
  struct Slot {
    T value;
    T grad;
    bool trainable = false;
  };

  const Slot& slot(ValueId id) const {
    if (!id.valid() || id.index >= slots_.size()) {
      throw Error("invalid tape value id");
    }
    return slots_[id.index];
  }
  Slot& slot(ValueId id) {
    if (!id.valid() || id.index >= slots_.size()) {
      throw Error("invalid tape value id");
    }
    return slots_[id.index];
  }

  std::vector<Slot> slots_;
  std::vector<std::function<void(GradientTape&)>> nodes_;
};

// ---------------------------------------------------------------------------
// Plain kernels: forward/backward pairs shared by the taped ops and by the
// inference-only forward pass. Backward kernels accumulate into their grad
// outputs.
// ---------------------------------------------------------------------------
namespace kernels {

// x:[B,nin] w:[nout,nin] b:[nout] -> [B,nout]
template <class S>
BasicTensor<S> dense_forward(const BasicTensor<S>& x, const BasicTensor<S>& w,
                             const BasicTensor<S>& b) {
  if (x.rank() != 2) {
    throw ShapeError("dense: input must be [batch, features], got " +
                     shape_to_string(x.shape()));
  }
  if (w.rank() != 2 || b.rank() != 1 || b.dim(0) != w.dim(0)) {
    throw ShapeError("dense: bad weight/bias shapes " +
                     shape_to_string(w.shape()) + " / " +
                     shape_to_string(b.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("dense: input features " + std::to_string(x.dim(1)) +
                     " != weight fan-in " + std::to_string(w.dim(1)));
  }
  const size_t batch = x.dim(0), nin = x.dim(1), nout = w.dim(0);
  BasicTensor<S> out(Shape{batch, nout});
  for (size_t s = 0; s < batch; ++s) {
    const S* xr = x.data() + s * nin;
    S* outr = out.data() + s * nout;
    for (size_t o = 0; o < nout; ++o) {
      const S* wr = w.data() + o * nin;
      S acc = b[o];
      for (size_t i = 0; i < nin; ++i) acc += wr[i] * xr[i];
      outr[o] = acc;
    }
  }
  return out;
}

template <class S>
void dense_backward(const BasicTensor<S>& gout, const BasicTensor<S>& x,
                    const BasicTensor<S>& w, BasicTensor<S>& gx,
                    BasicTensor<S>& gw, BasicTensor<S>& gb) {
  const size_t batch = x.dim(0), nin = x.dim(1), nout = w.dim(0);
  for (size_t s = 0; s < batch; ++s) {
    const S* xr = x.data() + s * nin;
    const S* gr = gout.data() + s * nout;
    S* gxr = gx.data() + s * nin;
    for (size_t o = 0; o < nout; ++o) {
      const S g = gr[o];
      gb[o] += g;
      const S* wr = w.data() + o * nin;
      S* gwr = gw.data() + o * nin;
      for (size_t i = 0; i < nin; ++i) {
        gxr[i] += g * wr[i];
        gwr[i] += g * xr[i];
      }
    }
  }
}

inline std::pair<size_t, size_t> conv_output_hw(size_t h, size_t w, size_t kh,
                                                size_t kw, size_t stride,
                                                size_t padding) {
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " larger than padded input " +
                     std::to_string(h + 2 * padding) + "x" +
                     std::to_string(w + 2 * padding));
  }
  return {(h + 2 * padding - kh) / stride + 1,
          (w + 2 * padding - kw) / stride + 1};
}

// Cross-correlation (no kernel flip) with zero padding.
// x:[B,Ci,H,W] k:[Co,Ci,kh,kw] b:[Co] -> [B,Co,H',W']
template <class S>
BasicTensor<S> conv2d_forward(const BasicTensor<S>& x, const BasicTensor<S>& k,
                              const BasicTensor<S>& b, size_t stride,
                              size_t padding) {
  if (x.rank() != 4) {
    throw ShapeError("conv2d: input must be [batch, channels, h, w], got " +
                     shape_to_string(x.shape()));
  }
  if (k.rank() != 4 || b.rank() != 1 || b.dim(0) != k.dim(0)) {
    throw ShapeError("conv2d: bad kernel/bias shapes " +
                     shape_to_string(k.shape()) + " / " +
                     shape_to_string(b.shape()));
  }
  if (x.dim(1) != k.dim(1)) {
    throw ShapeError("conv2d: input channels " + std::to_string(x.dim(1)) +
                     " != kernel channels " + std::to_string(k.dim(1)));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const size_t batch = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const auto [ho, wo] = conv_output_hw(h, w, kh, kw, stride, padding);
  BasicTensor<S> out(Shape{batch, co, ho, wo});
  const long p = static_cast<long>(padding);
  for (size_t bb = 0; bb < batch; ++bb) {
    for (size_t oc = 0; oc < co; ++oc) {
      for (size_t oh = 0; oh < ho; ++oh) {
        for (size_t ow = 0; ow < wo; ++ow) {
          S acc = b[oc];
          for (size_t ic = 0; ic < ci; ++ic) {
            for (size_t r = 0; r < kh; ++r) {
              const long ih = static_cast<long>(oh * stride + r) - p;
              if (ih < 0 || ih >= static_cast<long>(h)) continue;
              for (size_t c = 0; c < kw; ++c) {
                const long iw = static_cast<long>(ow * stride + c) - p;
                if (iw < 0 || iw >= static_cast<long>(w)) continue;
                acc += k(oc, ic, r, c) *
                       x(bb, ic, static_cast<size_t>(ih),
                         static_cast<size_t>(iw));
              }
            }
          }
          out(bb, oc, oh, ow) = acc;
        }
      }
    }
  }
  return out;
}

template <class S>
void conv2d_backward(const BasicTensor<S>& gout, const BasicTensor<S>& x,
                     const BasicTensor<S>& k, size_t stride, size_t padding,
                     BasicTensor<S>& gx, BasicTensor<S>& gk,
                     BasicTensor<S>& gb) {
  const size_t batch = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const size_t ho = gout.dim(2), wo = gout.dim(3);
  const long p = static_cast<long>(padding);
  for (size_t bb = 0; bb < batch; ++bb) {
    for (size_t oc = 0; oc < co; ++oc) {
      for (size_t oh = 0; oh < ho; ++oh) {
        for (size_t ow = 0; ow < wo; ++ow) {
          const S g = gout(bb, oc, oh, ow);
          gb[oc] += g;
          for (size_t ic = 0; ic < ci; ++ic) {
            for (size_t r = 0; r < kh; ++r) {
              const long ih = static_cast<long>(oh * stride + r) - p;
              if (ih < 0 || ih >= static_cast<long>(h)) continue;
              for (size_t c = 0; c < kw; ++c) {
                const long iw = static_cast<long>(ow * stride + c) - p;
                if (iw < 0 || iw >= static_cast<long>(w)) continue;
                const size_t uh = static_cast<size_t>(ih);
                const size_t uw = static_cast<size_t>(iw);
                gx(bb, ic, uh, uw) += g * k(oc, ic, r, c);
                gk(oc, ic, r, c) += g * x(bb, ic, uh, uw);
              }
            }
          }
        }
      }
    }
  }
}

// max(x, 0); non-firing positions are exactly 0.
template <class S>
BasicTensor<S> relu_forward(const BasicTensor<S>& x) {
  BasicTensor<S> out(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > S(0) ? x[i] : S(0);
  return out;
}

template <class S>
void relu_backward(const BasicTensor<S>& gout, const BasicTensor<S>& x,
                   BasicTensor<S>& gx) {
  for (size_t i = 0; i < x.numel(); ++i) {
    if (x[i] > S(0)) gx[i] += gout[i];
  }
}

inline std::pair<size_t, size_t> pool_output_hw(size_t h, size_t w,
                                                size_t window, size_t stride) {
  if (h < window || w < window) {
    throw ShapeError("maxpool2d: window " + std::to_string(window) +
                     " larger than input " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  return {(h - window) / stride + 1, (w - window) / stride + 1};
}

// Per-window max; argmax records the flat input index of the first maximum in
// row-major window scan order, which is where the gradient is routed.
template <class S>
BasicTensor<S> maxpool2d_forward(const BasicTensor<S>& x, size_t window,
                                 size_t stride,
                                 std::vector<size_t>* argmax = nullptr) {
  if (x.rank() != 4) {
    throw ShapeError("maxpool2d: input must be [batch, channels, h, w], got " +
                     shape_to_string(x.shape()));
  }
  if (window == 0 || stride == 0) {
    throw ShapeError("maxpool2d: window and stride must be positive");
  }
  const size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto [ho, wo] = pool_output_hw(h, w, window, stride);
  BasicTensor<S> out(Shape{batch, ch, ho, wo});
  if (argmax) argmax->assign(out.numel(), 0);
  size_t oi = 0;
  for (size_t bb = 0; bb < batch; ++bb) {
    for (size_t cc = 0; cc < ch; ++cc) {
      for (size_t oh = 0; oh < ho; ++oh) {
        for (size_t ow = 0; ow < wo; ++ow, ++oi) {
          S best = x(bb, cc, oh * stride, ow * stride);
          size_t best_idx = ((bb * ch + cc) * h + oh * stride) * w + ow * stride;
          for (size_t r = 0; r < window; ++r) {
            for (size_t c = 0; c < window; ++c) {
              const size_t ih = oh * stride + r;
              const size_t iw = ow * stride + c;
              const S v = x(bb, cc, ih, iw);
              if (v > best) {
                best = v;
                best_idx = ((bb * ch + cc) * h + ih) * w + iw;
              }
            }
          }
          out[oi] = best;
          if (argmax) (*argmax)[oi] = best_idx;
        }
      }
    }
  }
  return out;
}

template <class S>
void maxpool2d_backward(const BasicTensor<S>& gout,
                        const std::vector<size_t>& argmax, BasicTensor<S>& gx) {
  for (size_t i = 0; i < gout.numel(); ++i) gx[argmax[i]] += gout[i];
}

template <class S>
struct SoftmaxXentResult {
  S loss;
  BasicTensor<S> probs;  // [B,C], saved for backward
};

// Mean over the batch of -log softmax(logits)[label], max-stabilized.
template <class S>
SoftmaxXentResult<S> softmax_cross_entropy_forward(
    const BasicTensor<S>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_cross_entropy: logits must be [batch, classes]");
  }
  const size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(batch));
  }
  BasicTensor<S> probs(logits.shape());
  double loss = 0.0;
  for (size_t s = 0; s < batch; ++s) {
    if (labels[s] < 0 || static_cast<size_t>(labels[s]) >= classes) {
      throw Error("softmax_cross_entropy: label " + std::to_string(labels[s]) +
                  " out of range [0, " + std::to_string(classes) +
                  ") at sample " + std::to_string(s));
    }
    const S* row = logits.data() + s * classes;
    S mx = row[0];
    for (size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (size_t c = 0; c < classes; ++c) {
      z += std::exp(static_cast<double>(row[c] - mx));
    }
    const double logz = std::log(z);
    for (size_t c = 0; c < classes; ++c) {
      probs.data()[s * classes + c] =
          static_cast<S>(std::exp(static_cast<double>(row[c] - mx)) / z);
    }
    loss -= static_cast<double>(row[labels[s]] - mx) - logz;
  }
  return {static_cast<S>(loss / static_cast<double>(batch)), std::move(probs)};
}

template <class S>
void softmax_cross_entropy_backward(const BasicTensor<S>& probs,
                                    const std::vector<int>& labels, S gscalar,
                                    BasicTensor<S>& glogits) {
  const size_t batch = probs.dim(0), classes = probs.dim(1);
  const S inv_b = S(1) / static_cast<S>(batch);
  for (size_t s = 0; s < batch; ++s) {
    for (size_t c = 0; c < classes; ++c) {
      S g = probs[s * classes + c];
      if (static_cast<size_t>(labels[s]) == c) g -= S(1);
      glogits[s * classes + c] += gscalar * g * inv_b;
    }
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Taped ops.
// ---------------------------------------------------------------------------

template <class S>
ValueId dense(GradientTape<S>& t, ValueId x, ValueId w, ValueId b) {
  ValueId out = t.push(kernels::dense_forward(t.value(x), t.value(w), t.value(b)));
  t.record([x, w, b, out](GradientTape<S>& tp) {
    kernels::dense_backward(tp.grad(out), tp.value(x), tp.value(w), tp.grad(x),
                            tp.grad(w), tp.grad(b));
  });
  return out;
}

template <class S>
ValueId conv2d(GradientTape<S>& t, ValueId x, ValueId k, ValueId b,
               size_t stride, size_t padding) {
  ValueId out = t.push(
      kernels::conv2d_forward(t.value(x), t.value(k), t.value(b), stride, padding));
  t.record([x, k, b, out, stride, padding](GradientTape<S>& tp) {
    kernels::conv2d_backward(tp.grad(out), tp.value(x), tp.value(k), stride,
                             padding, tp.grad(x), tp.grad(k), tp.grad(b));
  });
  return out;
}

template <class S>
ValueId relu(GradientTape<S>& t, ValueId x) {
  ValueId out = t.push(kernels::relu_forward(t.value(x)));
  t.record([x, out](GradientTape<S>& tp) {
    kernels::relu_backward(tp.grad(out), tp.value(x), tp.grad(x));
  });
  return out;
}

template <class S>
ValueId maxpool2d(GradientTape<S>& t, ValueId x, size_t window, size_t stride) {
  std::vector<size_t> argmax;
  ValueId out =
      t.push(kernels::maxpool2d_forward(t.value(x), window, stride, &argmax));
  t.record([x, out, argmax = std::move(argmax)](GradientTape<S>& tp) {
    kernels::maxpool2d_backward(tp.grad(out), argmax, tp.grad(x));
  });
  return out;
}

template <class S>
ValueId flatten(GradientTape<S>& t, ValueId x) {
  const auto& xv = t.value(x);
  const size_t batch = xv.dim(0);
  ValueId out = t.push(xv.reshaped(Shape{batch, xv.numel() / batch}));
  t.record([x, out](GradientTape<S>& tp) {
    auto& gx = tp.grad(x);
    const auto& go = tp.grad(out);
    for (size_t i = 0; i < gx.numel(); ++i) gx[i] += go[i];
  });
  return out;
}

template <class S>
ValueId softmax_cross_entropy(GradientTape<S>& t, ValueId logits,
                              std::vector<int> labels) {
  auto res = kernels::softmax_cross_entropy_forward(t.value(logits), labels);
  ValueId out = t.push(BasicTensor<S>::scalar(res.loss));
  t.record([logits, out, labels = std::move(labels),
            probs = std::move(res.probs)](GradientTape<S>& tp) {
    kernels::softmax_cross_entropy_backward(probs, labels, tp.grad(out)[0],
                                            tp.grad(logits));
  });
  return out;
}

// Elementwise a + b (same shape).
template <class S>
ValueId add(GradientTape<S>& t, ValueId a, ValueId b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  if (!av.same_shape(bv)) {
    throw ShapeError("add: shape mismatch " + shape_to_string(av.shape()) +
                     " vs " + shape_to_string(bv.shape()));
  }
  BasicTensor<S> out = av;
  for (size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  ValueId id = t.push(std::move(out));
  t.record([a, b, id](GradientTape<S>& tp) {
    const auto& g = tp.grad(id);
    auto& ga = tp.grad(a);
    auto& gb = tp.grad(b);
    for (size_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
  return id;
}

// a * c for a scalar constant c.
template <class S>
ValueId scale(GradientTape<S>& t, ValueId a, double c) {
  BasicTensor<S> out = t.value(a);
  for (size_t i = 0; i < out.numel(); ++i) out[i] *= static_cast<S>(c);
  ValueId id = t.push(std::move(out));
  t.record([a, id, c](GradientTape<S>& tp) {
    const auto& g = tp.grad(id);
    auto& ga = tp.grad(a);
    for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * static_cast<S>(c);
  });
  return id;
}

// Sum of all elements -> scalar.
template <class S>
ValueId sum(GradientTape<S>& t, ValueId a) {
  const auto& av = t.value(a);
  S acc = S(0);
  for (size_t i = 0; i < av.numel(); ++i) acc += av[i];
  ValueId id = t.push(BasicTensor<S>::scalar(acc));
  t.record([a, id](GradientTape<S>& tp) {
    const S g = tp.grad(id)[0];
    auto& ga = tp.grad(a);
    for (size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
  return id;
}

// Max relative error between an analytic gradient and central differences:
// max_i |analytic_i - fd_i| / max(|analytic_i|, |fd_i|, 1e-12).
// NaN anywhere propagates to the returned value.
template <class S>
double finite_diff_check(
    const std::function<double(const BasicTensor<S>&)>& f,
    const std::function<BasicTensor<S>(const BasicTensor<S>&)>& analytic_grad,
    const BasicTensor<S>& point, double eps) {
  if (eps <= 0.0) throw ConfigError("finite_diff_check: eps must be > 0");
  const BasicTensor<S> g = analytic_grad(point);
  if (!g.same_shape(point)) {
    throw ShapeError("finite_diff_check: gradient shape mismatch");
  }
  BasicTensor<S> p = point;
  double max_err = 0.0;
  for (size_t i = 0; i < point.numel(); ++i) {
    const S orig = p[i];
    p[i] = orig + static_cast<S>(eps);
    const double fp = f(p);
    p[i] = orig - static_cast<S>(eps);
    const double fm = f(p);
    p[i] = orig;
    const double fd = (fp - fm) / (2.0 * eps);
    const double an = static_cast<double>(g[i]);
    const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-12});
    const double err = std::fabs(an - fd) / denom;
    if (std::isnan(err)) return err;
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace eat
