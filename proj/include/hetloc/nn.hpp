/*
 * Copyright 2026 The HetLoc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hetloc/core.hpp"
#include "hetloc/io.hpp"
#include "hetloc/parallel.hpp"

// Minimal deterministic float32 tensor engine with reverse-mode autodiff.
// The op set is exactly what the two networks need; every op is serial or
// statically chunked, so results are bit-identical for any thread count.

namespace hetloc::nn {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

inline void check_same_shape(const Shape& a, const Shape& b,
                             const char* op_name) {
  if (a != b)
    throw UsageError(std::string(op_name) + ": shape mismatch " +
                     shape_str(a) + " vs " + shape_str(b));
}

struct TensorNode {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // allocated on demand, same length as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    else std::fill(grad.begin(), grad.end(), 0.0f);
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// Disables graph recording in scope (inference).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor from_data(Shape shape, std::vector<float> data,
                          bool requires_grad = false) {
    auto node = std::make_shared<TensorNode>();
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
      throw UsageError("Tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<float> data(shape_numel(shape), 0.0f);
    return from_data(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor scalar(double v) {
    return from_data({1}, {static_cast<float>(v)});
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }
  std::vector<float>& data() { return node_->data; }
  const std::vector<float>& data() const { return node_->data; }
  std::vector<float>& grad() { return node_->grad; }
  const std::vector<float>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  std::shared_ptr<TensorNode> node() const { return node_; }

  float item() const {
    if (numel() != 1)
      throw UsageError("item(): tensor has shape " + shape_str(shape()));
    return node_->data[0];
  }

 private:
  std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<Tensor> parents,
                          std::function<void(TensorNode&)> backward) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data.resize(shape_numel(node->shape));
  bool rg = false;
  if (grad_mode())
    for (const auto& p : parents) rg = rg || p.requires_grad();
  node->requires_grad = rg;
  if (rg) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

// Back-propagates from a scalar loss. Grads of `params` and of every node
// reachable from the loss are zeroed first, so parameters that do not
// contribute to this loss end up with zero gradients.
inline void backward(const Tensor& loss, const std::vector<Tensor>& params = {}) {
  if (loss.numel() != 1)
    throw UsageError("backward: loss must be scalar, got shape " +
                     shape_str(loss.shape()));
  for (const auto& p : params) p.node()->ensure_grad();

  // Iterative post-order over the recorded graph.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  if (loss.requires_grad() || loss.node()->backward_fn) {
    stack.push_back({loss.node().get(), 0});
    visited.insert(loss.node().get());
  }
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (TensorNode* node : order) node->ensure_grad();
  if (!order.empty()) order.back()->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a.shape(), b.shape(), "add");
  auto an = a.node(), bn = b.node();
  Tensor out = detail::make_result(a.shape(), {a, b}, [an, bn](TensorNode& o) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i];
  });
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a.shape(), b.shape(), "sub");
  auto an = a.node(), bn = b.node();
  Tensor out = detail::make_result(a.shape(), {a, b}, [an, bn](TensorNode& o) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
  });
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a.shape(), b.shape(), "mul");
  auto an = a.node(), bn = b.node();
  Tensor out = detail::make_result(a.shape(), {a, b}, [an, bn](TensorNode& o) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        an->grad[i] += o.grad[i] * bn->data[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        bn->grad[i] += o.grad[i] * an->data[i];
  });
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  auto an = a.node();
  const float fs = static_cast<float>(s);
  Tensor out = detail::make_result(a.shape(), {a}, [an, fs](TensorNode& o) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        an->grad[i] += o.grad[i] * fs;
  });
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] * fs;
  return out;
}

inline Tensor add_scalar(const Tensor& a, double c) {
  auto an = a.node();
  Tensor out = detail::make_result(a.shape(), {a}, [an](TensorNode& o) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
  });
  const float fc = static_cast<float>(c);
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] + fc;
  return out;
}

inline Tensor relu(const Tensor& a) {
  auto an = a.node();
  Tensor out = detail::make_result(a.shape(), {a}, [an](TensorNode& o) {
    if (!an->requires_grad) return;
    // Subgradient at 0 is 0.
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      if (an->data[i] > 0.0f) an->grad[i] += o.grad[i];
  });
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] > 0.0f ? a.data()[i] : 0.0f;
  return out;
}

inline Tensor sum(const Tensor& a) {
  auto an = a.node();
  Tensor out = detail::make_result({1}, {a}, [an](TensorNode& o) {
    if (!an->requires_grad) return;
    const float g = o.grad[0];
    for (auto& gi : an->grad) gi += g;
  });
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  out.data()[0] = static_cast<float>(acc);
  return out;
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw UsageError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a.shape(), b.shape(), "dot");
  auto an = a.node(), bn = b.node();
  Tensor out = detail::make_result({1}, {a, b}, [an, bn](TensorNode& o) {
    const float g = o.grad[0];
    if (an->requires_grad)
      for (std::size_t i = 0; i < an->grad.size(); ++i)
        an->grad[i] += g * bn->data[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < bn->grad.size(); ++i)
        bn->grad[i] += g * an->data[i];
  });
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    acc += static_cast<double>(a.data()[i]) * b.data()[i];
  out.data()[0] = static_cast<float>(acc);
  return out;
}

// Copy reshape; gradient passes through unchanged.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw UsageError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  auto an = a.node();
  Tensor out = detail::make_result(std::move(shape), {a}, [an](TensorNode& o) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
  });
  out.data() = a.data();
  return out;
}

inline Tensor softmax(const Tensor& a) {
  if (a.shape().size() != 1)
    throw UsageError("softmax: expects a 1-D tensor, got " +
                     shape_str(a.shape()));
  auto an = a.node();
  Tensor out = detail::make_result(a.shape(), {a}, [an](TensorNode& o) {
    if (!an->requires_grad) return;
    double gdot = 0.0;
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      gdot += static_cast<double>(o.grad[i]) * o.data[i];
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      an->grad[i] += o.data[i] * (o.grad[i] - static_cast<float>(gdot));
  });
  float hi = a.data()[0];
  for (float v : a.data()) hi = std::max(hi, v);
  double z = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    out.data()[i] = std::exp(a.data()[i] - hi);
    z += out.data()[i];
  }
  for (auto& v : out.data()) v = static_cast<float>(v / z);
  return out;
}

inline Tensor l2_normalize(const Tensor& a) {
  if (a.shape().size() != 1)
    throw UsageError("l2_normalize: expects a 1-D tensor, got " +
                     shape_str(a.shape()));
  auto an = a.node();
  double sq = 0.0;
  for (float v : a.data()) sq += static_cast<double>(v) * v;
  const double n = std::max(std::sqrt(sq), 1e-12);
  Tensor out = detail::make_result(a.shape(), {a}, [an, n](TensorNode& o) {
    if (!an->requires_grad) return;
    double xg = 0.0;
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      xg += static_cast<double>(an->data[i]) * o.grad[i];
    const double n3 = n * n * n;
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      an->grad[i] += static_cast<float>(o.grad[i] / n - an->data[i] * xg / n3);
  });
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = static_cast<float>(a.data()[i] / n);
  return out;
}

// sqrt(sum((a-b)^2)); subgradient at coincident inputs is 0.
inline Tensor euclidean_distance(const Tensor& a, const Tensor& b) {
  check_same_shape(a.shape(), b.shape(), "euclidean_distance");
  auto an = a.node(), bn = b.node();
  double sq = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    sq += d * d;
  }
  const double dist = std::sqrt(sq);
  Tensor out = detail::make_result({1}, {a, b}, [an, bn, dist](TensorNode& o) {
    if (dist <= 0.0) return;
    const double g = o.grad[0] / dist;
    for (std::size_t i = 0; i < an->data.size(); ++i) {
      const float d = static_cast<float>(g * (an->data[i] - bn->data[i]));
      if (an->requires_grad) an->grad[i] += d;
      if (bn->requires_grad) bn->grad[i] -= d;
    }
  });
  out.data()[0] = static_cast<float>(dist);
  return out;
}

// -log(max(p[index], floor)); no gradient once the probability is floored.
inline Tensor cross_entropy_onehot(const Tensor& p, int index,
                                   double floor = 1e-12) {
  if (p.shape().size() != 1)
    throw UsageError("cross_entropy_onehot: expects a 1-D tensor, got " +
                     shape_str(p.shape()));
  if (index < 0 || index >= p.shape()[0])
    throw UsageError("cross_entropy_onehot: index " + std::to_string(index) +
                     " out of range for " + shape_str(p.shape()));
  auto pn = p.node();
  const double v = p.data()[index];
  Tensor out =
      detail::make_result({1}, {p}, [pn, index, v, floor](TensorNode& o) {
        if (!pn->requires_grad || v <= floor) return;
        pn->grad[index] += static_cast<float>(-o.grad[0] / v);
      });
  out.data()[0] = static_cast<float>(-std::log(std::max(v, floor)));
  return out;
}

// ---------------------------------------------------------------------------
// Spatial ops ([C,H,W] layout)
// ---------------------------------------------------------------------------

enum class Pad { kZero, kCircularCols };

namespace detail {

inline void check_chw(const Tensor& x, const char* op_name) {
  if (x.shape().size() != 3)
    throw UsageError(std::string(op_name) + ": expects [C,H,W], got " +
                     shape_str(x.shape()));
}

// out_row[c] += wv * in_row[c + s] for c in [0, W), with the column index
// clamped out (zero pad) or wrapped (circular).
inline void accumulate_shifted_row(float* out_row, const float* in_row, int W,
                                   int s, float wv, Pad pad) {
  const int lo = std::max(0, -s);
  const int hi = std::min(W, W - s);
  for (int c = lo; c < hi; ++c) out_row[c] += wv * in_row[c + s];
  if (pad == Pad::kCircularCols) {
    for (int c = 0; c < lo; ++c) out_row[c] += wv * in_row[c + s + W];
    for (int c = std::max(hi, 0); c < W; ++c) out_row[c] += wv * in_row[c + s - W];
  }
}

}  // namespace detail

// 2-D convolution, stride 1, same-size output, odd kernel. Rows use zero
// padding; columns use zero or circular padding (circular keeps the
// descriptor path equivariant to sector shifts).
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                     Pad pad = Pad::kZero) {
  detail::check_chw(x, "conv2d");
  if (w.shape().size() != 4)
    throw UsageError("conv2d: weight must be [OC,IC,KH,KW], got " +
                     shape_str(w.shape()));
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int OC = w.shape()[0], IC = w.shape()[1], KH = w.shape()[2],
            KW = w.shape()[3];
  if (IC != C)
    throw UsageError("conv2d: input channels " + shape_str(x.shape()) +
                     " do not match weight " + shape_str(w.shape()));
  if (KH % 2 == 0 || KW % 2 == 0)
    throw UsageError("conv2d: kernel sides must be odd, got " +
                     shape_str(w.shape()));
  if (b.shape() != Shape{OC})
    throw UsageError("conv2d: bias must be [OC]=" + std::to_string(OC) +
                     ", got " + shape_str(b.shape()));
  const int off_h = KH / 2, off_w = KW / 2;
  auto xn = x.node(), wn = w.node(), bn = b.node();

  Tensor out = detail::make_result(
      {OC, H, W}, {x, w, b},
      [xn, wn, bn, C, H, W, OC, KH, KW, off_h, off_w, pad](TensorNode& o) {
        // d/dx: statically chunked per input channel.
        if (xn->requires_grad) {
          parallel_chunks(C, [&](int ic) {
            for (int r = 0; r < H; ++r) {
              float* dx_row = xn->grad.data() + (static_cast<std::size_t>(ic) * H + r) * W;
              for (int oc = 0; oc < OC; ++oc) {
                const float* wk =
                    wn->data.data() +
                    ((static_cast<std::size_t>(oc) * C + ic) * KH) * KW;
                for (int kh = 0; kh < KH; ++kh) {
                  const int gr = r - (kh - off_h);
                  if (gr < 0 || gr >= H) continue;
                  const float* g_row =
                      o.grad.data() + (static_cast<std::size_t>(oc) * H + gr) * W;
                  for (int kw = 0; kw < KW; ++kw)
                    detail::accumulate_shifted_row(dx_row, g_row, W,
                                                   -(kw - off_w),
                                                   wk[kh * KW + kw], pad);
                }
              }
            }
          });
        }
        // d/dw: chunked per output channel (disjoint weight slices).
        if (wn->requires_grad) {
          parallel_chunks(OC, [&](int oc) {
            for (int ic = 0; ic < C; ++ic) {
              for (int kh = 0; kh < KH; ++kh) {
                for (int kw = 0; kw < KW; ++kw) {
                  double acc = 0.0;
                  const int s = kw - off_w;
                  for (int r = 0; r < H; ++r) {
                    const int sr = r + kh - off_h;
                    if (sr < 0 || sr >= H) continue;
                    const float* g_row =
                        o.grad.data() + (static_cast<std::size_t>(oc) * H + r) * W;
                    const float* x_row =
                        xn->data.data() +
                        (static_cast<std::size_t>(ic) * H + sr) * W;
                    const int lo = std::max(0, -s), hi = std::min(W, W - s);
                    for (int c = lo; c < hi; ++c)
                      acc += static_cast<double>(g_row[c]) * x_row[c + s];
                    if (pad == Pad::kCircularCols) {
                      for (int c = 0; c < lo; ++c)
                        acc += static_cast<double>(g_row[c]) * x_row[c + s + W];
                      for (int c = std::max(hi, 0); c < W; ++c)
                        acc += static_cast<double>(g_row[c]) * x_row[c + s - W];
                    }
                  }
                  wn->grad[((static_cast<std::size_t>(oc) * C + ic) * KH + kh) *
                               KW +
                           kw] += static_cast<float>(acc);
                }
              }
            }
          });
        }
        if (bn->requires_grad) {
          for (int oc = 0; oc < OC; ++oc) {
            double acc = 0.0;
            const float* g_plane =
                o.grad.data() + static_cast<std::size_t>(oc) * H * W;
            for (int i = 0; i < H * W; ++i) acc += g_plane[i];
            bn->grad[oc] += static_cast<float>(acc);
          }
        }
      });

  parallel_chunks(OC, [&](int oc) {
    float* out_plane = out.data().data() + static_cast<std::size_t>(oc) * H * W;
    const float bias = b.data()[oc];
    for (int i = 0; i < H * W; ++i) out_plane[i] = bias;
    for (int ic = 0; ic < C; ++ic) {
      const float* x_plane =
          x.data().data() + static_cast<std::size_t>(ic) * H * W;
      const float* wk =
          w.data().data() + ((static_cast<std::size_t>(oc) * C + ic) * KH) * KW;
      for (int r = 0; r < H; ++r) {
        float* out_row = out_plane + static_cast<std::size_t>(r) * W;
        for (int kh = 0; kh < KH; ++kh) {
          const int sr = r + kh - off_h;
          if (sr < 0 || sr >= H) continue;
          const float* x_row = x_plane + static_cast<std::size_t>(sr) * W;
          for (int kw = 0; kw < KW; ++kw)
            detail::accumulate_shifted_row(out_row, x_row, W, kw - off_w,
                                           wk[kh * KW + kw], pad);
        }
      }
    }
  });
  return out;
}

inline Tensor maxpool2x2(const Tensor& x) {
  detail::check_chw(x, "maxpool2x2");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (H % 2 || W % 2)
    throw UsageError("maxpool2x2: spatial sides must be even, got " +
                     shape_str(x.shape()));
  const int OH = H / 2, OW = W / 2;
  auto xn = x.node();
  auto argmax = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(C) * OH * OW);
  Tensor out =
      detail::make_result({C, OH, OW}, {x}, [xn, argmax](TensorNode& o) {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < o.grad.size(); ++i)
          xn->grad[(*argmax)[i]] += o.grad[i];
      });
  for (int ch = 0; ch < C; ++ch) {
    const float* xp = x.data().data() + static_cast<std::size_t>(ch) * H * W;
    float* op = out.data().data() + static_cast<std::size_t>(ch) * OH * OW;
    std::int32_t* am = argmax->data() + static_cast<std::size_t>(ch) * OH * OW;
    for (int r = 0; r < OH; ++r) {
      for (int c = 0; c < OW; ++c) {
        // First max wins on ties (fixed scan order).
        int best = (2 * r) * W + 2 * c;
        const int cand[3] = {(2 * r) * W + 2 * c + 1, (2 * r + 1) * W + 2 * c,
                             (2 * r + 1) * W + 2 * c + 1};
        for (int idx : cand)
          if (xp[idx] > xp[best]) best = idx;
        op[r * OW + c] = xp[best];
        am[r * OW + c] =
            static_cast<std::int32_t>(ch * H * W + best);
      }
    }
  }
  return out;
}

inline Tensor upsample2x(const Tensor& x) {
  detail::check_chw(x, "upsample2x");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  auto xn = x.node();
  Tensor out =
      detail::make_result({C, 2 * H, 2 * W}, {x}, [xn, C, H, W](TensorNode& o) {
        if (!xn->requires_grad) return;
        for (int ch = 0; ch < C; ++ch)
          for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
              double acc = 0.0;
              for (int dr = 0; dr < 2; ++dr)
                for (int dc = 0; dc < 2; ++dc)
                  acc += o.grad[(static_cast<std::size_t>(ch) * 2 * H +
                                 2 * r + dr) *
                                    2 * W +
                                2 * c + dc];
              xn->grad[(static_cast<std::size_t>(ch) * H + r) * W + c] +=
                  static_cast<float>(acc);
            }
      });
  for (int ch = 0; ch < C; ++ch)
    for (int r = 0; r < 2 * H; ++r) {
      const float* src =
          x.data().data() + (static_cast<std::size_t>(ch) * H + r / 2) * W;
      float* dst =
          out.data().data() + (static_cast<std::size_t>(ch) * 2 * H + r) * 2 * W;
      for (int c = 0; c < 2 * W; ++c) dst[c] = src[c / 2];
    }
  return out;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  detail::check_chw(a, "concat_channels");
  detail::check_chw(b, "concat_channels");
  if (a.shape()[1] != b.shape()[1] || a.shape()[2] != b.shape()[2])
    throw UsageError("concat_channels: spatial mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int Ca = a.shape()[0], Cb = b.shape()[0];
  const std::size_t plane =
      static_cast<std::size_t>(a.shape()[1]) * a.shape()[2];
  auto an = a.node(), bn = b.node();
  Tensor out = detail::make_result({Ca + Cb, a.shape()[1], a.shape()[2]},
                                   {a, b}, [an, bn, Ca, plane](TensorNode& o) {
                                     const std::size_t na = Ca * plane;
                                     if (an->requires_grad)
                                       for (std::size_t i = 0; i < na; ++i)
                                         an->grad[i] += o.grad[i];
                                     if (bn->requires_grad)
                                       for (std::size_t i = na; i < o.grad.size(); ++i)
                                         bn->grad[i - na] += o.grad[i];
                                   });
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(),
            out.data().begin() + Ca * plane);
  return out;
}

// y = W x + b for 1-D x.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().size() != 1)
    throw UsageError("linear: input must be 1-D, got " + shape_str(x.shape()));
  if (w.shape().size() != 2 || w.shape()[1] != x.shape()[0])
    throw UsageError("linear: weight " + shape_str(w.shape()) +
                     " does not match input " + shape_str(x.shape()));
  const int M = w.shape()[0], N = w.shape()[1];
  if (b.shape() != Shape{M})
    throw UsageError("linear: bias must be [" + std::to_string(M) +
                     "], got " + shape_str(b.shape()));
  auto xn = x.node(), wn = w.node(), bn = b.node();
  Tensor out = detail::make_result({M}, {x, w, b}, [xn, wn, bn, M, N](TensorNode& o) {
    if (xn->requires_grad)
      for (int n = 0; n < N; ++n) {
        double acc = 0.0;
        for (int m = 0; m < M; ++m)
          acc += static_cast<double>(wn->data[static_cast<std::size_t>(m) * N + n]) *
                 o.grad[m];
        xn->grad[n] += static_cast<float>(acc);
      }
    if (wn->requires_grad)
      for (int m = 0; m < M; ++m) {
        const float g = o.grad[m];
        float* wrow = wn->grad.data() + static_cast<std::size_t>(m) * N;
        for (int n = 0; n < N; ++n) wrow[n] += g * xn->data[n];
      }
    if (bn->requires_grad)
      for (int m = 0; m < M; ++m) bn->grad[m] += o.grad[m];
  });
  for (int m = 0; m < M; ++m) {
    double acc = b.data()[m];
    const float* wrow = w.data().data() + static_cast<std::size_t>(m) * N;
    for (int n = 0; n < N; ++n)
      acc += static_cast<double>(wrow[n]) * x.data()[n];
    out.data()[m] = static_cast<float>(acc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// 2-D DFT magnitude
// ---------------------------------------------------------------------------

namespace detail {

struct DftBasis {
  int keep = 0;
  std::vector<float> cos_m;  // keep x dim
  std::vector<float> sin_m;
};

// Centered frequency band u_k = k - keep/2 for k in [0, keep); keep == dim
// covers the full spectrum. DC lands at row keep/2.
inline const DftBasis& dft_basis(int dim, int keep) {
  static std::map<std::pair<int, int>, DftBasis> cache;
  static std::mutex mutex;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find({dim, keep});
  if (it != cache.end()) return it->second;
  DftBasis basis;
  basis.keep = keep;
  basis.cos_m.resize(static_cast<std::size_t>(keep) * dim);
  basis.sin_m.resize(static_cast<std::size_t>(keep) * dim);
  for (int k = 0; k < keep; ++k) {
    const int u = k - keep / 2;
    for (int m = 0; m < dim; ++m) {
      const double phase = kTwoPi * u * m / dim;
      basis.cos_m[static_cast<std::size_t>(k) * dim + m] =
          static_cast<float>(std::cos(phase));
      basis.sin_m[static_cast<std::size_t>(k) * dim + m] =
          static_cast<float>(std::sin(phase));
    }
  }
  return cache.emplace(std::make_pair(dim, keep), std::move(basis))
      .first->second;
}

// c[i][j] = sum_k a[i][k] * b[j][k]  (b indexed row-major [J][K])
inline void matmul_abt(const float* a, const float* b, float* c, int I, int K,
                       int J) {
  for (int i = 0; i < I; ++i) {
    for (int j = 0; j < J; ++j) {
      double acc = 0.0;
      const float* ar = a + static_cast<std::size_t>(i) * K;
      const float* br = b + static_cast<std::size_t>(j) * K;
      for (int k = 0; k < K; ++k) acc += static_cast<double>(ar[k]) * br[k];
      c[static_cast<std::size_t>(i) * J + j] = static_cast<float>(acc);
    }
  }
}

// c[i][j] = sum_k a[k][i] * b[k][j]
inline void matmul_atb(const float* a, const float* b, float* c, int K, int I,
                       int J) {
  for (int i = 0; i < I; ++i)
    for (int j = 0; j < J; ++j) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k)
        acc += static_cast<double>(a[static_cast<std::size_t>(k) * I + i]) *
               b[static_cast<std::size_t>(k) * J + j];
      c[static_cast<std::size_t>(i) * J + j] = static_cast<float>(acc);
    }
}

}  // namespace detail

// |2-D DFT| of each channel over a centered frequency band (keep_h x keep_w;
// 0 keeps the full spectrum). Invariant to circular shifts of the input
// along either axis. Subgradient at zero magnitude is 0.
inline Tensor dft2_magnitude(const Tensor& x, int keep_h = 0, int keep_w = 0) {
  detail::check_chw(x, "dft2_magnitude");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (keep_h <= 0) keep_h = H;
  if (keep_w <= 0) keep_w = W;
  if (keep_h > H || keep_w > W)
    throw UsageError("dft2_magnitude: band exceeds input " +
                     shape_str(x.shape()));
  // Basis tables live in a never-evicted cache, so raw pointers stay valid.
  const detail::DftBasis* bh = &detail::dft_basis(H, keep_h);
  const detail::DftBasis* bw = &detail::dft_basis(W, keep_w);
  auto xn = x.node();
  const std::size_t spec = static_cast<std::size_t>(keep_h) * keep_w;
  auto re = std::make_shared<std::vector<float>>(C * spec);
  auto im = std::make_shared<std::vector<float>>(C * spec);

  Tensor out = detail::make_result(
      {C, keep_h, keep_w}, {x},
      [xn, re, im, bh, bw, C, H, W, keep_h, keep_w, spec](TensorNode& o) {
        if (!xn->requires_grad) return;
        parallel_chunks(C, [&](int ch) {
          std::vector<float> gre(spec), gim(spec);
          for (std::size_t i = 0; i < spec; ++i) {
            const float m = o.data[ch * spec + i];
            const float g = m > 0.0f ? o.grad[ch * spec + i] / m : 0.0f;
            gre[i] = g * (*re)[ch * spec + i];
            gim[i] = g * (*im)[ch * spec + i];
          }
          // dX = Ch^T Gre Cw - Sh^T Gre Sw - Ch^T Gim Sw - Sh^T Gim Cw
          std::vector<float> t(static_cast<std::size_t>(H) * keep_w);
          std::vector<float> dx(static_cast<std::size_t>(H) * W, 0.0f);
          auto accumulate = [&](const std::vector<float>& g,
                                const float* left, const float* right,
                                float sign) {
            detail::matmul_atb(left, g.data(), t.data(), keep_h, H, keep_w);
            // dx[m][n] += sign * sum_v t[m][v] * right[v][n]
            for (int m = 0; m < H; ++m)
              for (int v = 0; v < keep_w; ++v) {
                const float tv = sign * t[static_cast<std::size_t>(m) * keep_w + v];
                if (tv == 0.0f) continue;
                const float* rrow = right + static_cast<std::size_t>(v) * W;
                float* drow = dx.data() + static_cast<std::size_t>(m) * W;
                for (int n = 0; n < W; ++n) drow[n] += tv * rrow[n];
              }
          };
          accumulate(gre, bh->cos_m.data(), bw->cos_m.data(), 1.0f);
          accumulate(gre, bh->sin_m.data(), bw->sin_m.data(), -1.0f);
          accumulate(gim, bh->cos_m.data(), bw->sin_m.data(), -1.0f);
          accumulate(gim, bh->sin_m.data(), bw->cos_m.data(), -1.0f);
          float* xg = xn->grad.data() + static_cast<std::size_t>(ch) * H * W;
          for (std::size_t i = 0; i < dx.size(); ++i) xg[i] += dx[i];
        });
      });

  parallel_chunks(C, [&](int ch) {
    const float* xp = x.data().data() + static_cast<std::size_t>(ch) * H * W;
    // T1 = Ch X, T2 = Sh X  (keep_h x W)
    std::vector<float> t1(static_cast<std::size_t>(keep_h) * W);
    std::vector<float> t2(static_cast<std::size_t>(keep_h) * W);
    for (int k = 0; k < keep_h; ++k)
      for (int n = 0; n < W; ++n) {
        double ac = 0.0, as = 0.0;
        for (int m = 0; m < H; ++m) {
          const double xv = xp[static_cast<std::size_t>(m) * W + n];
          ac += bh->cos_m[static_cast<std::size_t>(k) * H + m] * xv;
          as += bh->sin_m[static_cast<std::size_t>(k) * H + m] * xv;
        }
        t1[static_cast<std::size_t>(k) * W + n] = static_cast<float>(ac);
        t2[static_cast<std::size_t>(k) * W + n] = static_cast<float>(as);
      }
    std::vector<float> a(spec), bmat(spec), c(spec), d(spec);
    detail::matmul_abt(t1.data(), bw->cos_m.data(), a.data(), keep_h, W, keep_w);
    detail::matmul_abt(t2.data(), bw->sin_m.data(), bmat.data(), keep_h, W, keep_w);
    detail::matmul_abt(t1.data(), bw->sin_m.data(), c.data(), keep_h, W, keep_w);
    detail::matmul_abt(t2.data(), bw->cos_m.data(), d.data(), keep_h, W, keep_w);
    for (std::size_t i = 0; i < spec; ++i) {
      const float rev = a[i] - bmat[i];
      const float imv = -(c[i] + d[i]);
      (*re)[ch * spec + i] = rev;
      (*im)[ch * spec + i] = imv;
      out.data()[ch * spec + i] =
          std::sqrt(rev * rev + imv * imv);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer and parameter utilities
// ---------------------------------------------------------------------------

// Uniform fan-in initialization: U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
inline Tensor make_param(Shape shape, int fan_in, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::vector<float> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<float>(rng.uniform(-s, s));
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

inline Tensor make_zeros_param(Shape shape) {
  return Tensor::zeros(std::move(shape), true);
}

class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void step(const std::vector<Tensor>& params) {
    if (velocity_.size() != params.size())
      velocity_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i].node();
      if (p.grad.size() != p.data.size()) p.ensure_grad();
      auto& v = velocity_[i];
      if (v.size() != p.data.size()) v.assign(p.data.size(), 0.0f);
      const float lr = static_cast<float>(lr_);
      const float mom = static_cast<float>(momentum_);
      for (std::size_t k = 0; k < p.data.size(); ++k) {
        v[k] = mom * v[k] + p.grad[k];
        p.data[k] -= lr * v[k];
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<float>> velocity_;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

inline std::vector<Tensor> param_list(const NamedParams& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

inline std::uint32_t params_checksum(const NamedParams& named) {
  std::uint32_t crc = 0;
  for (const auto& [name, t] : named) {
    crc = crc32(name.data(), name.size(), crc);
    crc = crc32(t.data().data(), t.data().size() * sizeof(float), crc);
  }
  return crc;
}

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json + one float32 blob per parameter, CRC-32 each.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& dir,
                            const std::string& kind,
                            const nlohmann::ordered_json& config,
                            std::uint64_t seed, std::int64_t steps,
                            const NamedParams& params) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "hetloc-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["kind"] = kind;
  manifest["config"] = config;
  manifest["seed"] = seed;
  manifest["steps"] = steps;
  manifest["params"] = nlohmann::ordered_json::array();
  for (const auto& [name, t] : params) {
    const std::string file = name + ".f32";
    write_f32(dir / file, t.data());
    manifest["params"].push_back({{"name", name},
                                  {"shape", t.shape()},
                                  {"file", file},
                                  {"crc32", crc32_f32(t.data())}});
  }
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

struct Checkpoint {
  std::string kind;
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  NamedParams params;

  Tensor take(const std::string& name, const Shape& shape) const {
    for (const auto& [n, t] : params)
      if (n == name) {
        if (t.shape() != shape)
          throw DataError("checkpoint param '" + name + "' has shape " +
                          shape_str(t.shape()) + ", expected " +
                          shape_str(shape));
        return t;
      }
    throw DataError("checkpoint is missing param '" + name + "'");
  }
};

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw MissingFileError("missing manifest: " + manifest_path.string());
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("checkpoint manifest parse error: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "hetloc-checkpoint")
    throw VersionError("not a hetloc checkpoint: " + manifest_path.string());
  if (manifest.value("version", -1) != kCheckpointVersion)
    throw VersionError("unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.kind = manifest.at("kind").get<std::string>();
  ckpt.config = manifest.at("config");
  ckpt.seed = manifest.at("seed").get<std::uint64_t>();
  ckpt.steps = manifest.at("steps").get<std::int64_t>();
  for (const auto& jp : manifest.at("params")) {
    const auto shape = jp.at("shape").get<Shape>();
    auto data = read_f32(dir / jp.at("file").get<std::string>(),
                         static_cast<std::size_t>(shape_numel(shape)),
                         jp.at("crc32").get<std::uint32_t>());
    ckpt.params.emplace_back(
        jp.at("name").get<std::string>(),
        Tensor::from_data(shape, std::move(data), true));
  }
  return ckpt;
}

}  // namespace hetloc::nn
