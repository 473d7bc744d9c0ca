#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "pastanet/gemm.hpp"
#include "pastanet/rng.hpp"
#include "pastanet/tensor.hpp"
#include "pastanet/types.hpp"

namespace pastanet::diff {

/// A named trainable tensor with its gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Insertion-ordered parameter set. Order is part of the checkpoint contract,
/// so iteration must be stable.
template <typename T>
class ParamStore {
 public:
  Param<T>& create(const std::string& name, std::vector<std::size_t> shape) {
    if (by_name_.count(name)) throw data_error("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Param<T>>();
    p->name = name;
    p->value = Tensor<T>(shape);
    p->grad = Tensor<T>(std::move(shape));
    Param<T>* raw = p.get();
    params_.push_back(std::move(p));
    by_name_[name] = raw;
    return *raw;
  }

  /// Uniform fan-scaled init (+-sqrt(6/(fan_in+fan_out))), seeded by the
  /// parameter name so layouts are reproducible regardless of creation order.
  Param<T>& create_glorot(const std::string& name, std::vector<std::size_t> shape,
                          std::uint64_t seed, std::size_t fan_in, std::size_t fan_out) {
    Param<T>& p = create(name, std::move(shape));
    Rng rng = Rng(seed).stream("init", Rng::hash_name(name));
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : p.value.v) v = static_cast<T>(rng.uniform(-limit, limit));
    return p;
  }

  Param<T>* find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  std::size_t size() const { return params_.size(); }
  Param<T>& at(std::size_t i) { return *params_[i]; }
  const Param<T>& at(std::size_t i) const { return *params_[i]; }

  void zero_grads() {
    for (auto& p : params_) p->grad.zero();
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) {
      Param<U>& q = out.create(p->name, p->value.shape);
      q.value = p->value.template cast<U>();
    }
    return out;
  }

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
  std::unordered_map<std::string, Param<T>*> by_name_;
};

struct Conv2dSpec {
  std::size_t kh = 3, kw = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool fused_relu = false;  // clamp the output in place; backward masks on y>0
};

/// Recorded forward tape over parameterized operations; reverse accumulation
/// walks it backwards. Forward values are computed eagerly as ops are
/// recorded, so replaying a build with identical inputs reproduces outputs
/// bit-identically.
template <typename T>
class Tape {
 public:
  enum class Op {
    Input,
    ParamRef,
    Fc,
    Conv2d,
    MaxPool2d,
    RoiPool,
    Relu,
    Sigmoid,
    Tanh,
    Add,
    Mul,
    Scale,
    PairMax,
    BlockScale,
    BlockMean,
    GraphMix,
    ConcatCols,
    NarrowCols,
    Reshape,
    BceLogits,
    SoftmaxCe,
    AddScalars,
    MeanAll,
  };

  struct Node {
    Op op;
    std::vector<int> in;
    Param<T>* param = nullptr;
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;

    // Op-specific attributes.
    Conv2dSpec conv;
    std::size_t k0 = 0, k1 = 0;          // pool kernel/stride, narrow start/len, blocks/width
    std::vector<std::int32_t> argmax;    // maxpool / roipool routing
    Tensor<T> saved;                     // im2col buffer, targets, masks, adjacency
    Tensor<T> saved2;
    std::vector<int> labels;             // softmax_ce
    std::vector<Box> boxes;              // roi_pool
    double scalar = 0;                   // scale factor / spatial scale
  };

  int input(Tensor<T> v, bool needs_grad = false) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    return push(std::move(n));
  }

  int param(Param<T>& p) {
    Node n;
    n.op = Op::ParamRef;
    n.param = &p;
    n.value = p.value;
    n.needs_grad = true;
    return push(std::move(n));
  }

  /// y = x W (+ b). x:[n,din], W:[din,dout], b:[dout].
  int fc(int x, int W, int b = -1) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(W);
    require(xv.rank() == 2 && wv.rank() == 2, "fc expects 2-D input and weight");
    require(xv.shape[1] == wv.shape[0], "fc shape mismatch: x " + xv.shape_str() + " W " + wv.shape_str());
    std::size_t rows = xv.shape[0], din = xv.shape[1], dout = wv.shape[1];
    Node n;
    n.op = Op::Fc;
    n.in = {x, W, b};
    n.value = Tensor<T>::uninitialized({rows, dout});
    const T* bias = nullptr;
    if (b >= 0) {
      const Tensor<T>& bv = val(b);
      require(bv.numel() == dout, "fc bias width mismatch");
      bias = bv.data();
    }
    gemm_nn_bias(rows, dout, din, xv.data(), din, wv.data(), dout, n.value.data(), dout, bias,
                 false);
    return push(std::move(n));
  }

  /// NHWC convolution. x:[n,h,w,cin], W:[kh,kw,cin,cout], b:[cout].
  int conv2d(int x, int W, int b, const Conv2dSpec& spec) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(W);
    require(xv.rank() == 4, "conv2d expects NHWC input");
    require(wv.rank() == 4, "conv2d expects [kh,kw,cin,cout] weights");
    std::size_t nimg = xv.shape[0], h = xv.shape[1], w = xv.shape[2], cin = xv.shape[3];
    require(wv.shape[0] == spec.kh && wv.shape[1] == spec.kw && wv.shape[2] == cin,
            "conv2d weight shape mismatch");
    std::size_t cout = wv.shape[3];
    require(h + 2 * spec.pad >= spec.kh && w + 2 * spec.pad >= spec.kw,
            "conv2d kernel larger than padded input");
    std::size_t oh = (h + 2 * spec.pad - spec.kh) / spec.stride + 1;
    std::size_t ow = (w + 2 * spec.pad - spec.kw) / spec.stride + 1;
    std::size_t K = spec.kh * spec.kw * cin;
    std::size_t positions = nimg * oh * ow;

    Node n;
    n.op = Op::Conv2d;
    n.in = {x, W, b};
    n.conv = spec;
    n.saved = Tensor<T>::uninitialized({positions, K});  // im2col, reused by backward
    im2col(xv, spec, oh, ow, n.saved);
    n.value = Tensor<T>::uninitialized({nimg, oh, ow, cout});
    const T* bias = nullptr;
    if (b >= 0) {
      const Tensor<T>& bv = val(b);
      require(bv.numel() == cout, "conv2d bias width mismatch");
      bias = bv.data();
    }
    gemm_nn_bias(positions, cout, K, n.saved.data(), K, wv.data(), cout, n.value.data(), cout,
                 bias, spec.fused_relu);
    return push(std::move(n));
  }

  /// Max pooling over spatial dims; gradient routes to the argmax, first
  /// occurrence in row-major order on ties.
  int maxpool2d(int x, std::size_t kernel, std::size_t stride) {
    const Tensor<T>& xv = val(x);
    require(xv.rank() == 4, "maxpool2d expects NHWC input");
    std::size_t nimg = xv.shape[0], h = xv.shape[1], w = xv.shape[2], c = xv.shape[3];
    require(kernel <= h && kernel <= w, "maxpool2d kernel larger than input");
    std::size_t oh = (h - kernel) / stride + 1;
    std::size_t ow = (w - kernel) / stride + 1;
    Node n;
    n.op = Op::MaxPool2d;
    n.in = {x};
    n.k0 = kernel;
    n.k1 = stride;
    n.value = Tensor<T>::uninitialized({nimg, oh, ow, c});
    n.argmax.resize(n.value.numel());
    const T* xd = xv.data();
    T* yd = n.value.data();
    for (std::size_t im = 0; im < nimg; ++im) {
      const T* xi = xd + im * h * w * c;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t out_base = ((im * oh + oy) * ow + ox) * c;
          for (std::size_t ch = 0; ch < c; ++ch) yd[out_base + ch] = -std::numeric_limits<T>::infinity();
          for (std::size_t ky = 0; ky < kernel; ++ky)
            for (std::size_t kx = 0; kx < kernel; ++kx) {
              std::size_t iy = oy * stride + ky, ix = ox * stride + kx;
              const T* cell = xi + (iy * w + ix) * c;
              for (std::size_t ch = 0; ch < c; ++ch) {
                if (cell[ch] > yd[out_base + ch]) {
                  yd[out_base + ch] = cell[ch];
                  n.argmax[out_base + ch] =
                      static_cast<std::int32_t>((im * h * w + iy * w + ix) * c + ch);
                }
              }
            }
        }
    }
    return push(std::move(n));
  }

  /// RoI max pooling: one box per sample, mapped by spatial_scale into
  /// feature cells and divided into p x p bins.
  int roi_pool(int x, const std::vector<Box>& boxes, std::size_t p, double spatial_scale) {
    const Tensor<T>& xv = val(x);
    require(xv.rank() == 4, "roi_pool expects NHWC input");
    std::size_t nimg = xv.shape[0], h = xv.shape[1], w = xv.shape[2], c = xv.shape[3];
    require(boxes.size() == nimg, "roi_pool expects one box per sample");
    Node n;
    n.op = Op::RoiPool;
    n.in = {x};
    n.k0 = p;
    n.scalar = spatial_scale;
    n.boxes = boxes;
    n.value = Tensor<T>({nimg, p, p, c});
    n.argmax.assign(n.value.numel(), -1);
    for (std::size_t im = 0; im < nimg; ++im) {
      double bx1 = boxes[im].x1 * spatial_scale, by1 = boxes[im].y1 * spatial_scale;
      double bx2 = boxes[im].x2 * spatial_scale, by2 = boxes[im].y2 * spatial_scale;
      if (bx2 <= 0 || by2 <= 0 || bx1 >= static_cast<double>(w) || by1 >= static_cast<double>(h))
        throw data_error("roi_pool: box does not overlap the feature map");
      double bw = (bx2 - bx1) / static_cast<double>(p);
      double bh = (by2 - by1) / static_cast<double>(p);
      const T* xi = xv.data() + im * h * w * c;
      for (std::size_t by = 0; by < p; ++by)
        for (std::size_t bx = 0; bx < p; ++bx) {
          auto cy0 = static_cast<long>(std::floor(by1 + bh * static_cast<double>(by)));
          auto cy1 = static_cast<long>(std::ceil(by1 + bh * static_cast<double>(by + 1)));
          auto cx0 = static_cast<long>(std::floor(bx1 + bw * static_cast<double>(bx)));
          auto cx1 = static_cast<long>(std::ceil(bx1 + bw * static_cast<double>(bx + 1)));
          cy0 = std::clamp<long>(cy0, 0, static_cast<long>(h));
          cy1 = std::clamp<long>(cy1, 0, static_cast<long>(h));
          cx0 = std::clamp<long>(cx0, 0, static_cast<long>(w));
          cx1 = std::clamp<long>(cx1, 0, static_cast<long>(w));
          std::size_t out_base = ((im * p + by) * p + bx) * c;
          if (cy0 >= cy1 || cx0 >= cx1) continue;  // empty bin stays zero
          for (std::size_t ch = 0; ch < c; ++ch) {
            T best = -std::numeric_limits<T>::infinity();
            std::int32_t best_idx = -1;
            for (long iy = cy0; iy < cy1; ++iy)
              for (long ix = cx0; ix < cx1; ++ix) {
                T v = xi[(static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c + ch];
                if (v > best) {
                  best = v;
                  best_idx = static_cast<std::int32_t>(
                      (im * h * w + static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c + ch);
                }
              }
            n.value[out_base + ch] = best;
            n.argmax[out_base + ch] = best_idx;
          }
        }
    }
    return push(std::move(n));
  }

  int relu(int x) {
    Node n;
    n.op = Op::Relu;
    n.in = {x};
    const Tensor<T>& xv = val(x);
    n.value = Tensor<T>::uninitialized(xv.shape);
    for (std::size_t i = 0; i < xv.numel(); ++i) n.value[i] = xv[i] > T(0) ? xv[i] : T(0);
    return push(std::move(n));
  }

  int sigmoid(int x) {
    Node n;
    n.op = Op::Sigmoid;
    n.in = {x};
    const Tensor<T>& xv = val(x);
    n.value = Tensor<T>::uninitialized(xv.shape);
    for (std::size_t i = 0; i < xv.numel(); ++i) n.value[i] = stable_sigmoid(xv[i]);
    return push(std::move(n));
  }

  int tanh_op(int x) {
    Node n;
    n.op = Op::Tanh;
    n.in = {x};
    const Tensor<T>& xv = val(x);
    n.value = Tensor<T>::uninitialized(xv.shape);
    for (std::size_t i = 0; i < xv.numel(); ++i) n.value[i] = std::tanh(xv[i]);
    return push(std::move(n));
  }

  int add(int a, int b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    require(av.shape == bv.shape, "add shape mismatch");
    Node n;
    n.op = Op::Add;
    n.in = {a, b};
    n.value = Tensor<T>::uninitialized(av.shape);
    for (std::size_t i = 0; i < bv.numel(); ++i) n.value[i] = av[i] + bv[i];
    return push(std::move(n));
  }

  int mul(int a, int b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    require(av.shape == bv.shape, "mul shape mismatch");
    Node n;
    n.op = Op::Mul;
    n.in = {a, b};
    n.value = Tensor<T>::uninitialized(av.shape);
    for (std::size_t i = 0; i < bv.numel(); ++i) n.value[i] = av[i] * bv[i];
    return push(std::move(n));
  }

  int scale(int x, double factor) {
    Node n;
    n.op = Op::Scale;
    n.in = {x};
    n.scalar = factor;
    const Tensor<T>& xv = val(x);
    n.value = Tensor<T>::uninitialized(xv.shape);
    for (std::size_t i = 0; i < xv.numel(); ++i) n.value[i] = static_cast<T>(xv[i] * factor);
    return push(std::move(n));
  }

  /// Elementwise max of two same-shape tensors; ties route the gradient to
  /// the first argument.
  int pair_max(int a, int b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    require(av.shape == bv.shape, "pair_max shape mismatch");
    Node n;
    n.op = Op::PairMax;
    n.in = {a, b};
    n.value = Tensor<T>::uninitialized(av.shape);
    for (std::size_t i = 0; i < bv.numel(); ++i) n.value[i] = std::max(av[i], bv[i]);
    return push(std::move(n));
  }

  /// x:[n, blocks*width], s:[n, blocks]; block k of each row is scaled by
  /// s[row,k].
  int block_scale(int x, int s, std::size_t blocks, std::size_t width) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& sv = val(s);
    require(xv.rank() == 2 && xv.shape[1] == blocks * width, "block_scale input mismatch");
    require(sv.rank() == 2 && sv.shape[0] == xv.shape[0] && sv.shape[1] == blocks,
            "block_scale scale mismatch");
    Node n;
    n.op = Op::BlockScale;
    n.in = {x, s};
    n.k0 = blocks;
    n.k1 = width;
    n.value = Tensor<T>::uninitialized(xv.shape);
    for (std::size_t r = 0; r < xv.shape[0]; ++r)
      for (std::size_t k = 0; k < blocks; ++k) {
        T sc = sv.at2(r, k);
        const T* src = xv.data() + r * xv.shape[1] + k * width;
        T* row = n.value.data() + r * xv.shape[1] + k * width;
        for (std::size_t j = 0; j < width; ++j) row[j] = src[j] * sc;
      }
    return push(std::move(n));
  }

  /// Mean over the block axis: [n, blocks*width] -> [n, width].
  int block_mean(int x, std::size_t blocks, std::size_t width) {
    const Tensor<T>& xv = val(x);
    require(xv.rank() == 2 && xv.shape[1] == blocks * width, "block_mean input mismatch");
    Node n;
    n.op = Op::BlockMean;
    n.in = {x};
    n.k0 = blocks;
    n.k1 = width;
    n.value = Tensor<T>({xv.shape[0], width});
    for (std::size_t r = 0; r < xv.shape[0]; ++r) {
      T* out = n.value.data() + r * width;
      for (std::size_t k = 0; k < blocks; ++k) {
        const T* row = xv.data() + r * xv.shape[1] + k * width;
        for (std::size_t j = 0; j < width; ++j) out[j] += row[j];
      }
      for (std::size_t j = 0; j < width; ++j) out[j] /= static_cast<T>(blocks);
    }
    return push(std::move(n));
  }

  /// Per-sample node mixing: x viewed as [nodes, width] per row is
  /// left-multiplied by the constant matrix A [nodes, nodes].
  int graph_mix(int x, const Tensor<T>& A, std::size_t nodes, std::size_t width) {
    const Tensor<T>& xv = val(x);
    require(xv.rank() == 2 && xv.shape[1] == nodes * width, "graph_mix input mismatch");
    require(A.rank() == 2 && A.shape[0] == nodes && A.shape[1] == nodes, "graph_mix adjacency mismatch");
    Node n;
    n.op = Op::GraphMix;
    n.in = {x};
    n.k0 = nodes;
    n.k1 = width;
    n.saved = A;
    n.value = Tensor<T>({xv.shape[0], nodes * width});
    for (std::size_t r = 0; r < xv.shape[0]; ++r)
      gemm_nn(nodes, width, nodes, A.data(), nodes, xv.data() + r * xv.shape[1], width,
              n.value.data() + r * xv.shape[1], width);
    return push(std::move(n));
  }

  int concat_cols(const std::vector<int>& xs) {
    require(!xs.empty(), "concat of nothing");
    std::size_t rows = val(xs[0]).shape[0], total = 0;
    for (int x : xs) {
      require(val(x).rank() == 2 && val(x).shape[0] == rows, "concat row mismatch");
      total += val(x).shape[1];
    }
    Node n;
    n.op = Op::ConcatCols;
    n.in = xs;
    n.value = Tensor<T>::uninitialized({rows, total});
    std::size_t off = 0;
    for (int x : xs) {
      const Tensor<T>& xv = val(x);
      for (std::size_t r = 0; r < rows; ++r)
        std::copy(xv.data() + r * xv.shape[1], xv.data() + (r + 1) * xv.shape[1],
                  n.value.data() + r * total + off);
      off += xv.shape[1];
    }
    return push(std::move(n));
  }

  int narrow_cols(int x, std::size_t start, std::size_t len) {
    const Tensor<T>& xv = val(x);
    require(xv.rank() == 2 && start + len <= xv.shape[1], "narrow out of range");
    Node n;
    n.op = Op::NarrowCols;
    n.in = {x};
    n.k0 = start;
    n.k1 = len;
    n.value = Tensor<T>::uninitialized({xv.shape[0], len});
    for (std::size_t r = 0; r < xv.shape[0]; ++r)
      std::copy(xv.data() + r * xv.shape[1] + start, xv.data() + r * xv.shape[1] + start + len,
                n.value.data() + r * len);
    return push(std::move(n));
  }

  int reshape(int x, std::vector<std::size_t> shape) {
    const Tensor<T>& xv = val(x);
    require(Tensor<T>::numel_of(shape) == xv.numel(), "reshape numel mismatch");
    Node n;
    n.op = Op::Reshape;
    n.in = {x};
    n.value = Tensor<T>::uninitialized(std::move(shape));
    std::copy(xv.v.begin(), xv.v.end(), n.value.v.begin());
    return push(std::move(n));
  }

  /// Numerically stable multi-label cross-entropy over logits, mean over
  /// unmasked elements. targets must be binary; mask (same shape, optional)
  /// selects contributing elements.
  int bce_logits(int scores, const Tensor<T>& targets, const Tensor<T>* mask = nullptr) {
    const Tensor<T>& sv = val(scores);
    require(sv.shape == targets.shape, "bce_logits target shape mismatch");
    for (const T& t : targets.v)
      if (t != T(0) && t != T(1)) throw data_error("bce_logits: targets must be binary");
    if (mask) require(mask->shape == sv.shape, "bce_logits mask shape mismatch");
    Node n;
    n.op = Op::BceLogits;
    n.in = {scores};
    n.saved = targets;
    if (mask) n.saved2 = *mask;
    double denom = 0, loss = 0;
    for (std::size_t i = 0; i < sv.numel(); ++i) {
      double m = mask ? static_cast<double>(mask->v[i]) : 1.0;
      if (m == 0) continue;
      double s = sv[i], t = targets[i];
      loss += m * (std::max(s, 0.0) - s * t + std::log1p(std::exp(-std::abs(s))));
      denom += m;
    }
    n.scalar = denom;
    n.value = Tensor<T>({1});
    n.value[0] = denom > 0 ? static_cast<T>(loss / denom) : T(0);
    return push(std::move(n));
  }

  /// Mean negative log-softmax of the true class; labels of -1 are skipped.
  int softmax_ce(int scores, const std::vector<int>& labels) {
    const Tensor<T>& sv = val(scores);
    require(sv.rank() == 2 && labels.size() == sv.shape[0], "softmax_ce label count mismatch");
    std::size_t k = sv.shape[1];
    Node n;
    n.op = Op::SoftmaxCe;
    n.in = {scores};
    n.labels = labels;
    double loss = 0;
    std::size_t counted = 0;
    for (std::size_t r = 0; r < sv.shape[0]; ++r) {
      int lbl = labels[r];
      if (lbl < 0) continue;
      if (lbl >= static_cast<int>(k))
        throw data_error("softmax_ce: label " + std::to_string(lbl) + " out of range");
      const T* row = sv.data() + r * k;
      double mx = row[0];
      for (std::size_t j = 1; j < k; ++j) mx = std::max<double>(mx, row[j]);
      double lse = 0;
      for (std::size_t j = 0; j < k; ++j) lse += std::exp(static_cast<double>(row[j]) - mx);
      lse = mx + std::log(lse);
      loss += lse - static_cast<double>(row[lbl]);
      ++counted;
    }
    n.scalar = static_cast<double>(counted);
    n.value = Tensor<T>({1});
    n.value[0] = counted ? static_cast<T>(loss / static_cast<double>(counted)) : T(0);
    return push(std::move(n));
  }

  /// Mean over all elements, as a scalar node.
  int mean_all(int x) {
    Node n;
    n.op = Op::MeanAll;
    n.in = {x};
    n.value = Tensor<T>({1});
    const Tensor<T>& xv = val(x);
    T acc = 0;
    for (const T& v : xv.v) acc += v;
    n.value[0] = acc / static_cast<T>(xv.numel());
    return push(std::move(n));
  }

  /// Sum of scalar losses.
  int add_scalars(const std::vector<int>& xs) {
    require(!xs.empty(), "add_scalars of nothing");
    Node n;
    n.op = Op::AddScalars;
    n.in = xs;
    n.value = Tensor<T>({1});
    for (int x : xs) {
      require(val(x).numel() == 1, "add_scalars expects scalar nodes");
      n.value[0] += val(x)[0];
    }
    return push(std::move(n));
  }

  const Tensor<T>& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor<T>& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse pass from a scalar loss node. Parameter gradients accumulate
  /// into Param::grad (callers zero them between steps).
  void backward(int loss_id) {
    Node& loss = nodes_[static_cast<std::size_t>(loss_id)];
    require(loss.value.numel() == 1, "backward expects a scalar loss");
    for (auto& n : nodes_)
      if (n.needs_grad && n.grad.numel() == 0) n.grad = Tensor<T>(n.value.shape);
    if (!loss.needs_grad) return;  // constant graph
    loss.grad[0] = T(1);
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad) continue;
      backward_node(n);
      if (n.op == Op::ParamRef) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i) n.param->grad[i] += n.grad[i];
      }
    }
  }

 private:
  int push(Node n) {
    if (!n.needs_grad)
      for (int i : n.in)
        if (i >= 0 && nodes_[static_cast<std::size_t>(i)].needs_grad) n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  static T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
  }

  static void require(bool ok, const std::string& msg) {
    if (!ok) throw data_error(msg);
  }

  Tensor<T>* grad_of(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.needs_grad ? &n.grad : nullptr;
  }

  static void im2col(const Tensor<T>& x, const Conv2dSpec& s, std::size_t oh, std::size_t ow,
                     Tensor<T>& cols) {
    std::size_t nimg = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
    const T* xd = x.data();
    T* cd = cols.data();
    std::size_t K = s.kh * s.kw * c;
    // Loop kernel offsets outermost so each (ky,kx) walks the output row with
    // a fixed source stride; small channel counts stay branch-light.
    for (std::size_t im = 0; im < nimg; ++im) {
      const T* xi = xd + im * h * w * c;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        T* row0 = cd + (im * oh + oy) * ow * K;
        for (std::size_t ky = 0; ky < s.kh; ++ky) {
          long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.pad);
          bool row_dead = iy < 0 || iy >= static_cast<long>(h);
          const T* src_row = row_dead ? nullptr : xi + static_cast<std::size_t>(iy) * w * c;
          for (std::size_t kx = 0; kx < s.kw; ++kx) {
            std::size_t off = (ky * s.kw + kx) * c;
            if (row_dead) {
              for (std::size_t ox = 0; ox < ow; ++ox)
                for (std::size_t ch = 0; ch < c; ++ch) row0[ox * K + off + ch] = T(0);
              continue;
            }
            for (std::size_t ox = 0; ox < ow; ++ox) {
              long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.pad);
              T* dst = row0 + ox * K + off;
              if (ix < 0 || ix >= static_cast<long>(w)) {
                for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = T(0);
              } else {
                const T* src = src_row + static_cast<std::size_t>(ix) * c;
                for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = src[ch];
              }
            }
          }
        }
      }
    }
  }

  static void col2im_add(const Tensor<T>& dcols, const Conv2dSpec& s, std::size_t oh,
                         std::size_t ow, Tensor<T>& dx) {
    std::size_t nimg = dx.shape[0], h = dx.shape[1], w = dx.shape[2], c = dx.shape[3];
    const T* cd = dcols.data();
    T* xd = dx.data();
    std::size_t K = s.kh * s.kw * c;
    for (std::size_t im = 0; im < nimg; ++im) {
      T* xi = xd + im * h * w * c;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T* row = cd + ((im * oh + oy) * ow + ox) * K;
          for (std::size_t ky = 0; ky < s.kh; ++ky) {
            long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.pad);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < s.kw; ++kx) {
              long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.pad);
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              const T* src = row + (ky * s.kw + kx) * c;
              T* dst = xi + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
              for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
            }
          }
        }
    }
  }

  void backward_node(Node& n) {
    switch (n.op) {
      case Op::Input:
      case Op::ParamRef:
        return;
      case Op::Fc: {
        const Tensor<T>& xv = val(n.in[0]);
        const Tensor<T>& wv = val(n.in[1]);
        std::size_t rows = xv.shape[0], din = xv.shape[1], dout = wv.shape[1];
        if (Tensor<T>* dx = grad_of(n.in[0]))
          gemm_nt(rows, din, dout, n.grad.data(), dout, wv.data(), dout, dx->data(), din);
        if (Tensor<T>* dw = grad_of(n.in[1]))
          gemm_tn(din, dout, rows, xv.data(), din, n.grad.data(), dout, dw->data(), dout);
        if (n.in[2] >= 0)
          if (Tensor<T>* db = grad_of(n.in[2]))
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < dout; ++j) (*db)[j] += n.grad[r * dout + j];
        return;
      }
      case Op::Conv2d: {
        const Tensor<T>& xv = val(n.in[0]);
        const Tensor<T>& wv = val(n.in[1]);
        if (n.conv.fused_relu)
          for (std::size_t i = 0; i < n.grad.numel(); ++i)
            if (n.value[i] <= T(0)) n.grad[i] = T(0);
        std::size_t oh = n.value.shape[1], ow = n.value.shape[2], cout = n.value.shape[3];
        std::size_t positions = n.value.shape[0] * oh * ow;
        std::size_t K = n.saved.shape[1];
        if (Tensor<T>* dw = grad_of(n.in[1]))
          gemm_tn(K, cout, positions, n.saved.data(), K, n.grad.data(), cout, dw->data(), cout);
        if (n.in[2] >= 0)
          if (Tensor<T>* db = grad_of(n.in[2]))
            for (std::size_t r = 0; r < positions; ++r)
              for (std::size_t j = 0; j < cout; ++j) (*db)[j] += n.grad[r * cout + j];
        if (Tensor<T>* dx = grad_of(n.in[0])) {
          // dcols = dY * W^T, then scatter-add back to the input layout.
          Tensor<T> wt({cout, K});
          for (std::size_t a = 0; a < K; ++a)
            for (std::size_t b = 0; b < cout; ++b) wt[b * K + a] = wv[a * cout + b];
          Tensor<T> dcols = Tensor<T>::uninitialized({positions, K});
          gemm_nn_assign(positions, K, cout, n.grad.data(), cout, wt.data(), K, dcols.data(), K);
          col2im_add(dcols, n.conv, oh, ow, *dx);
        }
        (void)xv;
        return;
      }
      case Op::MaxPool2d:
      case Op::RoiPool: {
        if (Tensor<T>* dx = grad_of(n.in[0]))
          for (std::size_t i = 0; i < n.argmax.size(); ++i)
            if (n.argmax[i] >= 0) (*dx)[static_cast<std::size_t>(n.argmax[i])] += n.grad[i];
        return;
      }
      case Op::Relu: {
        if (Tensor<T>* dx = grad_of(n.in[0]))
          for (std::size_t i = 0; i < n.grad.numel(); ++i)
            if (n.value[i] > T(0)) (*dx)[i] += n.grad[i];
        return;
      }
      case Op::Sigmoid: {
        if (Tensor<T>* dx = grad_of(n.in[0]))
          for (std::size_t i = 0; i < n.grad.numel(); ++i)
            (*dx)[i] += n.grad[i] * n.value[i] * (T(1) - n.value[i]);
        return;
      }
      case Op::Tanh: {
        if (Tensor<T>* dx = grad_of(n.in[0]))
          for (std::size_t i = 0; i < n.grad.numel(); ++i)
            (*dx)[i] += n.grad[i] * (T(1) - n.value[i] * n.value[i]);
        return;
      }
      case Op::Add: {
        for (int side = 0; side < 2; ++side)
          if (Tensor<T>* dx = grad_of(n.in[static_cast<std::size_t>(side)]))
            for (std::size_t i = 0; i < n.grad.numel(); ++i) (*dx)[i] += n.grad[i];
        return;
      }
      case Op::Mul: {
        const Tensor<T>& av = val(n.in[0]);
        const Tensor<T>& bv = val(n.in[1]);
        if (Tensor<T>* da = grad_of(n.in[0]))
          for (std::size_t i = 0; i < n.grad.numel(); ++i) (*da)[i] += n.grad[i] * bv[i];
        if (Tensor<T>* db = grad_of(n.in[1]))
          for (std::size_t i = 0; i < n.grad.numel(); ++i) (*db)[i] += n.grad[i] * av[i];
        return;
      }
      case Op::Scale: {
        if (Tensor<T>* dx = grad_of(n.in[0]))
          for (std::size_t i = 0; i < n.grad.numel(); ++i)
            (*dx)[i] += static_cast<T>(n.grad[i] * n.scalar);
        return;
      }
      case Op::PairMax: {
        const Tensor<T>& av = val(n.in[0]);
        const Tensor<T>& bv = val(n.in[1]);
        Tensor<T>* da = grad_of(n.in[0]);
        Tensor<T>* db = grad_of(n.in[1]);
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
          if (av[i] >= bv[i]) {
            if (da) (*da)[i] += n.grad[i];
          } else if (db) {
            (*db)[i] += n.grad[i];
          }
        }
        return;
      }
      case Op::BlockScale: {
        const Tensor<T>& xv = val(n.in[0]);
        const Tensor<T>& sv = val(n.in[1]);
        std::size_t blocks = n.k0, width = n.k1, cols = blocks * width;
        Tensor<T>* dx = grad_of(n.in[0]);
        Tensor<T>* ds = grad_of(n.in[1]);
        for (std::size_t r = 0; r < xv.shape[0]; ++r)
          for (std::size_t k = 0; k < blocks; ++k) {
            const T* g = n.grad.data() + r * cols + k * width;
            const T* x = xv.data() + r * cols + k * width;
            T sc = sv.at2(r, k);
            if (dx) {
              T* d = dx->data() + r * cols + k * width;
              for (std::size_t j = 0; j < width; ++j) d[j] += g[j] * sc;
            }
            if (ds) {
              T acc = 0;
              for (std::size_t j = 0; j < width; ++j) acc += g[j] * x[j];
              ds->at2(r, k) += acc;
            }
          }
        return;
      }
      case Op::BlockMean: {
        if (Tensor<T>* dx = grad_of(n.in[0])) {
          std::size_t blocks = n.k0, width = n.k1;
          T inv = T(1) / static_cast<T>(blocks);
          for (std::size_t r = 0; r < n.grad.shape[0]; ++r) {
            const T* g = n.grad.data() + r * width;
            for (std::size_t k = 0; k < blocks; ++k) {
              T* d = dx->data() + r * blocks * width + k * width;
              for (std::size_t j = 0; j < width; ++j) d[j] += g[j] * inv;
            }
          }
        }
        return;
      }
      case Op::GraphMix: {
        if (Tensor<T>* dx = grad_of(n.in[0])) {
          std::size_t nodes = n.k0, width = n.k1;
          // dX_s = A^T dY_s
          Tensor<T> at({nodes, nodes});
          for (std::size_t a = 0; a < nodes; ++a)
            for (std::size_t b = 0; b < nodes; ++b) at[a * nodes + b] = n.saved[b * nodes + a];
          for (std::size_t r = 0; r < n.grad.shape[0]; ++r)
            gemm_nn(nodes, width, nodes, at.data(), nodes, n.grad.data() + r * n.grad.shape[1],
                    width, dx->data() + r * n.grad.shape[1], width);
        }
        return;
      }
      case Op::ConcatCols: {
        std::size_t total = n.value.shape[1];
        std::size_t off = 0;
        for (int x : n.in) {
          const Tensor<T>& xv = val(x);
          if (Tensor<T>* dx = grad_of(x)) {
            for (std::size_t r = 0; r < xv.shape[0]; ++r)
              for (std::size_t j = 0; j < xv.shape[1]; ++j)
                (*dx)[r * xv.shape[1] + j] += n.grad[r * total + off + j];
          }
          off += xv.shape[1];
        }
        return;
      }
      case Op::NarrowCols: {
        if (Tensor<T>* dx = grad_of(n.in[0])) {
          std::size_t start = n.k0, len = n.k1, cols = val(n.in[0]).shape[1];
          for (std::size_t r = 0; r < n.grad.shape[0]; ++r)
            for (std::size_t j = 0; j < len; ++j)
              (*dx)[r * cols + start + j] += n.grad[r * len + j];
        }
        return;
      }
      case Op::Reshape: {
        if (Tensor<T>* dx = grad_of(n.in[0]))
          for (std::size_t i = 0; i < n.grad.numel(); ++i) (*dx)[i] += n.grad[i];
        return;
      }
      case Op::BceLogits: {
        if (Tensor<T>* dx = grad_of(n.in[0])) {
          const Tensor<T>& sv = val(n.in[0]);
          bool masked = n.saved2.numel() > 0;
          if (n.scalar <= 0) return;
          T g = n.grad[0] / static_cast<T>(n.scalar);
          for (std::size_t i = 0; i < sv.numel(); ++i) {
            T m = masked ? n.saved2[i] : T(1);
            if (m == T(0)) continue;
            (*dx)[i] += g * m * (stable_sigmoid(sv[i]) - n.saved[i]);
          }
        }
        return;
      }
      case Op::SoftmaxCe: {
        if (Tensor<T>* dx = grad_of(n.in[0])) {
          const Tensor<T>& sv = val(n.in[0]);
          if (n.scalar <= 0) return;
          std::size_t k = sv.shape[1];
          T g = n.grad[0] / static_cast<T>(n.scalar);
          for (std::size_t r = 0; r < sv.shape[0]; ++r) {
            int lbl = n.labels[r];
            if (lbl < 0) continue;
            const T* row = sv.data() + r * k;
            double mx = row[0];
            for (std::size_t j = 1; j < k; ++j) mx = std::max<double>(mx, row[j]);
            double z = 0;
            for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
            for (std::size_t j = 0; j < k; ++j) {
              double p = std::exp(static_cast<double>(row[j]) - mx) / z;
              (*dx)[r * k + j] += g * static_cast<T>(p - (static_cast<int>(j) == lbl ? 1.0 : 0.0));
            }
          }
        }
        return;
      }
      case Op::AddScalars: {
        for (int x : n.in)
          if (Tensor<T>* dx = grad_of(x)) (*dx)[0] += n.grad[0];
        return;
      }
      case Op::MeanAll: {
        if (Tensor<T>* dx = grad_of(n.in[0])) {
          T g = n.grad[0] / static_cast<T>(dx->numel());
          for (std::size_t i = 0; i < dx->numel(); ++i) (*dx)[i] += g;
        }
        return;
      }
    }
  }

  std::vector<Node> nodes_;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace pastanet::diff
