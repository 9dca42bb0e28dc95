/* Copyright 2026 The attnseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "attnseg/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "attnseg/error.hpp"

namespace attnseg {

using detail::Node;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Left-to-right sum. Eigen's vectorized reductions peel by address, so their
// rounding would depend on where the buffer happens to be allocated.
template <typename Vector>
double OrderedSum(const Vector& v) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) acc += v(i);
  return acc;
}

thread_local std::vector<std::uint64_t>* g_branch_log = nullptr;

std::uint64_t MixHash(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

void RequireDefined(const Tensor& t, std::string_view op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

std::size_t Offset(const Shape& s, int n, int c, int h, int w) {
  return ((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w;
}

int Extent(const Shape& s, Axis axis) {
  switch (axis) {
    case Axis::kBatch: return s.n;
    case Axis::kChannel: return s.c;
    case Axis::kHeight: return s.h;
    case Axis::kWidth: return s.w;
  }
  return 0;
}

void SetExtent(Shape& s, Axis axis, int v) {
  switch (axis) {
    case Axis::kBatch: s.n = v; break;
    case Axis::kChannel: s.c = v; break;
    case Axis::kHeight: s.h = v; break;
    case Axis::kWidth: s.w = v; break;
  }
}

// Splits a row-major (N,C,H,W) buffer around `axis` into
// outer x extent x inner blocks.
void OuterInner(const Shape& s, Axis axis, std::size_t& outer, std::size_t& inner) {
  switch (axis) {
    case Axis::kBatch: outer = 1; inner = static_cast<std::size_t>(s.c) * s.h * s.w; break;
    case Axis::kChannel: outer = s.n; inner = static_cast<std::size_t>(s.h) * s.w; break;
    case Axis::kHeight: outer = static_cast<std::size_t>(s.n) * s.c; inner = s.w; break;
    case Axis::kWidth: outer = static_cast<std::size_t>(s.n) * s.c * s.h; inner = 1; break;
  }
}

std::vector<double>& ParentGrad(Node& self, std::size_t i) {
  return self.parents[i]->GradBuffer();
}

bool ParentWants(const Node& self, std::size_t i) {
  return i < self.parents.size() && self.parents[i]->requires_grad;
}

// Lowers one sample of x into a (C_in*k*k, Ho*Wo) column matrix.
void Im2Col(const double* x, int channels, int height, int width, int k, int stride,
            int pad, int out_h, int out_w, double* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void Col2Im(const double* col, int channels, int height, int width, int k, int stride,
            int pad, int out_h, int out_w, double* x) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    double* xc = x + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row =
            col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          double* dst = xc + static_cast<std::size_t>(iy) * width;
          const double* src = row + oy * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

namespace {
Tensor MakeLeaf(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative extent in " + shape.str());
  }
  if (data.size() != shape.numel()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape.str());
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError("leaf: non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}
}  // namespace

Tensor Tensor::Zeros(Shape shape, bool requires_grad) {
  return MakeLeaf(shape, std::vector<double>(shape.numel(), 0.0), requires_grad);
}

Tensor Tensor::Full(Shape shape, double value, bool requires_grad) {
  return MakeLeaf(shape, std::vector<double>(shape.numel(), value), requires_grad);
}

Tensor Tensor::FromData(Shape shape, std::vector<double> data, bool requires_grad) {
  return MakeLeaf(shape, std::move(data), requires_grad);
}

Tensor Tensor::Scalar(double value, bool requires_grad) {
  return MakeLeaf({1, 1, 1, 1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  RequireDefined(*this, "shape");
  return node_->shape;
}

std::span<const double> Tensor::data() const {
  RequireDefined(*this, "data");
  return node_->value;
}

std::span<const double> Tensor::grad() const {
  RequireDefined(*this, "grad");
  return node_->GradBuffer();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->parents.empty() && !node_->backward; }
std::string_view Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
  return node_->value[0];
}

double Tensor::at(int n, int c, int h, int w) const {
  const Shape& s = shape();
  if (n < 0 || n >= s.n || c < 0 || c >= s.c || h < 0 || h >= s.h || w < 0 || w >= s.w) {
    throw ShapeError("index out of range for " + s.str());
  }
  return node_->value[Offset(s, n, c, h, w)];
}

void Tensor::Assign(std::span<const double> values) {
  RequireDefined(*this, "Assign");
  if (!is_leaf()) throw Error("Assign: '" + std::string(node_->op) + "' is not a leaf");
  if (values.size() != node_->value.size()) {
    throw ShapeError("Assign: expected " + std::to_string(node_->value.size()) +
                     " values, got " + std::to_string(values.size()));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("Assign: non-finite value");
  }
  std::copy(values.begin(), values.end(), node_->value.begin());
}

void Tensor::ZeroGrad() {
  RequireDefined(*this, "ZeroGrad");
  node_->grad.clear();
}

Tensor Tensor::Detach() const {
  RequireDefined(*this, "Detach");
  return MakeLeaf(node_->shape, node_->value, false);
}

Tensor MakeResult(std::string_view op, Shape shape, std::vector<double> value,
                  const std::vector<Tensor>& parents,
                  std::function<void(Node&)> backward) {
  for (double v : value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in forward pass");
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Convolution

Tensor Conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
              int pad) {
  RequireDefined(x, "conv2d");
  RequireDefined(weight, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (pad < 0) throw ConfigError("conv2d: pad must be >= 0");
  if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square, got " + ws.str());
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) +
                     " channels but kernel expects " + std::to_string(ws.c));
  }
  const bool has_bias = bias.defined();
  if (has_bias && !(bias.shape() == Shape{1, ws.n, 1, 1})) {
    throw ShapeError("conv2d: bias shape " + bias.shape().str() + " for " +
                     std::to_string(ws.n) + " output channels");
  }
  const int k = ws.h;
  const int out_h = (xs.h + 2 * pad - k) / stride + 1;
  const int out_w = (xs.w + 2 * pad - k) / stride + 1;
  if (xs.h + 2 * pad - k < 0 || xs.w + 2 * pad - k < 0 || out_h <= 0 || out_w <= 0) {
    throw ShapeError("conv2d: non-positive output extent for input " + xs.str() +
                     " kernel " + std::to_string(k) + " pad " + std::to_string(pad));
  }
  const int c_out = ws.n;
  const int depth = xs.c * k * k;
  const int plane = out_h * out_w;
  const bool pointwise = k == 1 && stride == 1 && pad == 0;
  Shape out_shape{xs.n, c_out, out_h, out_w};
  std::vector<double> out(out_shape.numel());

  ConstMatrixMap w(weight.data().data(), c_out, depth);
  std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(depth) * plane);
  const std::size_t in_stride = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
  const std::size_t out_stride = static_cast<std::size_t>(c_out) * plane;
  for (int n = 0; n < xs.n; ++n) {
    const double* xn = x.data().data() + n * in_stride;
    const double* cp = xn;
    if (!pointwise) {
      Im2Col(xn, xs.c, xs.h, xs.w, k, stride, pad, out_h, out_w, col.data());
      cp = col.data();
    }
    MatrixMap y(out.data() + n * out_stride, c_out, plane);
    y.noalias() = w * ConstMatrixMap(cp, depth, plane);
    if (has_bias) {
      for (int co = 0; co < c_out; ++co) y.row(co).array() += bias.data()[co];
    }
  }

  std::vector<Tensor> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return MakeResult(
      "conv2d", out_shape, std::move(out), parents,
      [xs, c_out, k, stride, pad, out_h, out_w, depth, plane, pointwise, has_bias, in_stride,
       out_stride](Node& self) {
        const Node& xn = *self.parents[0];
        const Node& wn = *self.parents[1];
        ConstMatrixMap w(wn.value.data(), c_out, depth);
        std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(depth) * plane);
        std::vector<double> dcol(static_cast<std::size_t>(depth) * plane);
        double* dw = ParentWants(self, 1) ? ParentGrad(self, 1).data() : nullptr;
        double* dx = ParentWants(self, 0) ? ParentGrad(self, 0).data() : nullptr;
        double* db = has_bias && ParentWants(self, 2) ? ParentGrad(self, 2).data() : nullptr;
        for (int n = 0; n < xs.n; ++n) {
          ConstMatrixMap dy(self.grad.data() + n * out_stride, c_out, plane);
          const double* cp = xn.value.data() + n * in_stride;
          if (dw != nullptr) {
            if (!pointwise) {
              Im2Col(cp, xs.c, xs.h, xs.w, k, stride, pad, out_h, out_w, col.data());
              cp = col.data();
            }
            MatrixMap(dw, c_out, depth).noalias() +=
                dy * ConstMatrixMap(cp, depth, plane).transpose();
          }
          if (db != nullptr) {
            for (int co = 0; co < c_out; ++co) db[co] += OrderedSum(dy.row(co));
          }
          if (dx != nullptr) {
            double* dxn = dx + n * in_stride;
            if (pointwise) {
              MatrixMap(dxn, depth, plane).noalias() += w.transpose() * dy;
            } else {
              MatrixMap(dcol.data(), depth, plane).noalias() = w.transpose() * dy;
              Col2Im(dcol.data(), xs.c, xs.h, xs.w, k, stride, pad, out_h, out_w, dxn);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pooling

Tensor PoolGlobal(const Tensor& x, PoolMode mode) {
  RequireDefined(x, "pool_global");
  const Shape s = x.shape();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  if (plane == 0) throw ShapeError("pool_global: empty spatial extent in " + s.str());
  const std::size_t rows = static_cast<std::size_t>(s.n) * s.c;
  std::vector<double> out(rows);
  std::vector<std::size_t> argmax;
  const double* in = x.data().data();
  if (mode == PoolMode::kAvg) {
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += in[r * plane + i];
      out[r] = acc / static_cast<double>(plane);
    }
  } else {
    argmax.resize(rows);
    std::uint64_t sig = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < plane; ++i) {
        if (in[r * plane + i] > in[r * plane + best]) best = i;
      }
      argmax[r] = best;
      out[r] = in[r * plane + best];
      sig = MixHash(sig, best);
    }
    if (detail::BranchRecordingActive()) detail::RecordBranch(sig);
  }
  return MakeResult(mode == PoolMode::kAvg ? "pool_global_avg" : "pool_global_max",
                    {s.n, s.c, 1, 1}, std::move(out), {x},
                    [rows, plane, argmax = std::move(argmax)](Node& self) {
                      auto& dx = ParentGrad(self, 0);
                      if (argmax.empty()) {
                        const double inv = 1.0 / static_cast<double>(plane);
                        for (std::size_t r = 0; r < rows; ++r) {
                          const double g = self.grad[r] * inv;
                          for (std::size_t i = 0; i < plane; ++i) dx[r * plane + i] += g;
                        }
                      } else {
                        for (std::size_t r = 0; r < rows; ++r) {
                          dx[r * plane + argmax[r]] += self.grad[r];
                        }
                      }
                    });
}

Tensor PoolDirectional(const Tensor& x, Axis axis) {
  RequireDefined(x, "pool_directional");
  const Shape s = x.shape();
  if (axis != Axis::kHeight && axis != Axis::kWidth) {
    throw ConfigError("pool_directional: axis must be height or width");
  }
  const bool over_width = axis == Axis::kWidth;
  const int extent = over_width ? s.w : s.h;
  if (extent < 1) throw ShapeError("pool_directional: zero extent in " + s.str());
  Shape os = s;
  if (over_width) os.w = 1; else os.h = 1;
  std::vector<double> out(os.numel(), 0.0);
  const double* in = x.data().data();
  const double inv = 1.0 / extent;
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t p = 0; p < planes; ++p) {
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) {
        const double v = in[(p * s.h + i) * s.w + j];
        if (over_width) out[p * s.h + i] += v; else out[p * s.w + j] += v;
      }
    }
  }
  for (double& v : out) v *= inv;
  return MakeResult(over_width ? "pool_width" : "pool_height", os, std::move(out), {x},
                    [s, over_width, inv, planes](Node& self) {
                      auto& dx = ParentGrad(self, 0);
                      for (std::size_t p = 0; p < planes; ++p) {
                        for (int i = 0; i < s.h; ++i) {
                          for (int j = 0; j < s.w; ++j) {
                            const double g = over_width ? self.grad[p * s.h + i]
                                                        : self.grad[p * s.w + j];
                            dx[(p * s.h + i) * s.w + j] += g * inv;
                          }
                        }
                      }
                    });
}

Tensor PoolAcrossChannels(const Tensor& x, PoolMode mode) {
  RequireDefined(x, "pool_across_channels");
  const Shape s = x.shape();
  if (s.c < 1) throw ShapeError("pool_across_channels: no channels in " + s.str());
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  std::vector<double> out(static_cast<std::size_t>(s.n) * plane);
  std::vector<int> argmax;
  const double* in = x.data().data();
  if (mode == PoolMode::kMax) argmax.resize(out.size());
  std::uint64_t sig = 0;
  for (int n = 0; n < s.n; ++n) {
    const double* xn = in + static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (mode == PoolMode::kAvg) {
        double acc = 0.0;
        for (int c = 0; c < s.c; ++c) acc += xn[c * plane + i];
        out[n * plane + i] = acc / s.c;
      } else {
        int best = 0;
        for (int c = 1; c < s.c; ++c) {
          if (xn[c * plane + i] > xn[best * plane + i]) best = c;
        }
        argmax[n * plane + i] = best;
        out[n * plane + i] = xn[best * plane + i];
        sig = MixHash(sig, static_cast<std::uint64_t>(best));
      }
    }
  }
  if (mode == PoolMode::kMax && detail::BranchRecordingActive()) detail::RecordBranch(sig);
  return MakeResult(mode == PoolMode::kAvg ? "pool_channels_avg" : "pool_channels_max",
                    {s.n, 1, s.h, s.w}, std::move(out), {x},
                    [s, plane, argmax = std::move(argmax)](Node& self) {
                      auto& dx = ParentGrad(self, 0);
                      for (int n = 0; n < s.n; ++n) {
                        double* dxn = dx.data() + static_cast<std::size_t>(n) * s.c * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                          const double g = self.grad[n * plane + i];
                          if (argmax.empty()) {
                            for (int c = 0; c < s.c; ++c) dxn[c * plane + i] += g / s.c;
                          } else {
                            dxn[argmax[n * plane + i] * plane + i] += g;
                          }
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Pointwise

Tensor Sigmoid(const Tensor& x) {
  RequireDefined(x, "sigmoid");
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = in[i];
    // Split by sign so exp never overflows.
    if (v >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return MakeResult("sigmoid", x.shape(), std::move(out), {x}, [](Node& self) {
    auto& dx = ParentGrad(self, 0);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double y = self.value[i];
      dx[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor Relu(const Tensor& x) {
  RequireDefined(x, "relu");
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  if (detail::BranchRecordingActive()) {
    std::uint64_t sig = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      sig = MixHash(sig, in[i] > 0.0 ? i * 2 + 1 : i * 2);
    }
    detail::RecordBranch(sig);
  }
  return MakeResult("relu", x.shape(), std::move(out), {x}, [](Node& self) {
    auto& dx = ParentGrad(self, 0);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (self.value[i] > 0.0) dx[i] += self.grad[i];
    }
  });
}

Tensor Add(const Tensor& a, const Tensor& b) {
  RequireDefined(a, "add");
  RequireDefined(b, "add");
  if (!(a.shape() == b.shape())) {
    throw ShapeError("add: shapes " + a.shape().str() + " and " + b.shape().str() +
                     " differ");
  }
  std::vector<double> out(a.numel());
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return MakeResult("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!ParentWants(self, p)) continue;
      auto& d = ParentGrad(self, p);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

namespace {
enum class Broadcast { kNone, kChannelGate, kSpatialGate };

Broadcast ClassifyGate(const Shape& gate, const Shape& full) {
  if (gate == full) return Broadcast::kNone;
  if (gate.n == full.n && gate.c == full.c && gate.h == 1 && gate.w == 1) {
    return Broadcast::kChannelGate;
  }
  if (gate.n == full.n && gate.c == 1 && gate.h == full.h && gate.w == full.w) {
    return Broadcast::kSpatialGate;
  }
  throw ShapeError("mul: gate " + gate.str() + " cannot broadcast onto " + full.str() +
                   " (only (N,C,1,1) and (N,1,H,W) gates are allowed)");
}
}  // namespace

Tensor Mul(const Tensor& a, const Tensor& b) {
  RequireDefined(a, "mul");
  RequireDefined(b, "mul");
  // Put the full-size operand first.
  const bool swap = a.numel() < b.numel();
  const Tensor& full = swap ? b : a;
  const Tensor& gate = swap ? a : b;
  const Shape fs = full.shape();
  const Broadcast mode = ClassifyGate(gate.shape(), fs);
  const std::size_t plane = static_cast<std::size_t>(fs.h) * fs.w;
  auto gate_index = [mode, fs, plane](std::size_t i) -> std::size_t {
    switch (mode) {
      case Broadcast::kNone: return i;
      case Broadcast::kChannelGate: return i / plane;
      case Broadcast::kSpatialGate: return (i / (plane * fs.c)) * plane + i % plane;
    }
    return i;
  };
  std::vector<double> out(full.numel());
  const auto df = full.data();
  const auto dg = gate.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = df[i] * dg[gate_index(i)];
  return MakeResult("mul", fs, std::move(out), {full, gate}, [gate_index](Node& self) {
    const auto& fv = self.parents[0]->value;
    const auto& gv = self.parents[1]->value;
    const bool want_f = ParentWants(self, 0);
    const bool want_g = ParentWants(self, 1);
    double* df = want_f ? ParentGrad(self, 0).data() : nullptr;
    double* dg = want_g ? ParentGrad(self, 1).data() : nullptr;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const std::size_t gi = gate_index(i);
      if (df != nullptr) df[i] += self.grad[i] * gv[gi];
      if (dg != nullptr) dg[gi] += self.grad[i] * fv[i];
    }
  });
}

Tensor Scale(const Tensor& x, double factor) {
  RequireDefined(x, "scale");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  return MakeResult("scale", x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto& dx = ParentGrad(self, 0);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * factor;
  });
}

Tensor RepeatAlong(const Tensor& x, Axis axis, int times) {
  RequireDefined(x, "repeat_along");
  const Shape s = x.shape();
  if (times < 1) throw ConfigError("repeat_along: times must be >= 1");
  if (axis != Axis::kHeight && axis != Axis::kWidth) {
    throw ConfigError("repeat_along: axis must be height or width");
  }
  if (Extent(s, axis) != 1) {
    throw ShapeError("repeat_along: axis extent must be 1 in " + s.str());
  }
  Shape os = s;
  SetExtent(os, axis, times);
  const bool along_width = axis == Axis::kWidth;
  std::vector<double> out(os.numel());
  const auto in = x.data();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  auto src_index = [=](std::size_t p, int i, int j) {
    return along_width ? p * os.h + i : p * os.w + j;
  };
  for (std::size_t p = 0; p < planes; ++p) {
    for (int i = 0; i < os.h; ++i) {
      for (int j = 0; j < os.w; ++j) out[(p * os.h + i) * os.w + j] = in[src_index(p, i, j)];
    }
  }
  return MakeResult("repeat_along", os, std::move(out), {x},
                    [os, planes, src_index](Node& self) {
                      auto& dx = ParentGrad(self, 0);
                      for (std::size_t p = 0; p < planes; ++p) {
                        for (int i = 0; i < os.h; ++i) {
                          for (int j = 0; j < os.w; ++j) {
                            dx[src_index(p, i, j)] += self.grad[(p * os.h + i) * os.w + j];
                          }
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Structural

Tensor Concat(const std::vector<Tensor>& parts, Axis axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& p : parts) RequireDefined(p, "concat");
  Shape os = parts.front().shape();
  int total = 0;
  std::vector<int> extents;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    const int e = Extent(ps, axis);
    SetExtent(ps, axis, Extent(os, axis));
    if (!(ps == os)) {
      throw ShapeError("concat: " + p.shape().str() + " incompatible with " +
                       parts.front().shape().str());
    }
    extents.push_back(e);
    total += e;
  }
  SetExtent(os, axis, total);
  std::size_t outer = 0;
  std::size_t inner = 0;
  OuterInner(os, axis, outer, inner);
  std::vector<double> out(os.numel());
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto in = parts[k].data();
    const std::size_t chunk = extents[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(in.data() + o * chunk, chunk, out.data() + o * total * inner + offset);
    }
    offset += chunk;
  }
  return MakeResult("concat", os, std::move(out), parts,
                    [extents, outer, inner, total](Node& self) {
                      std::size_t offset = 0;
                      for (std::size_t k = 0; k < extents.size(); ++k) {
                        const std::size_t chunk = extents[k] * inner;
                        if (ParentWants(self, k)) {
                          auto& d = ParentGrad(self, k);
                          for (std::size_t o = 0; o < outer; ++o) {
                            const double* src = self.grad.data() + o * total * inner + offset;
                            for (std::size_t i = 0; i < chunk; ++i) d[o * chunk + i] += src[i];
                          }
                        }
                        offset += chunk;
                      }
                    });
}

std::vector<Tensor> Split(const Tensor& x, Axis axis, const std::vector<int>& sizes) {
  RequireDefined(x, "split");
  const Shape s = x.shape();
  int total = 0;
  for (int v : sizes) {
    if (v < 1) throw ShapeError("split: sizes must be positive");
    total += v;
  }
  if (total != Extent(s, axis)) {
    throw ShapeError("split: sizes sum to " + std::to_string(total) + " but axis extent is " +
                     std::to_string(Extent(s, axis)));
  }
  std::size_t outer = 0;
  std::size_t inner = 0;
  OuterInner(s, axis, outer, inner);
  std::vector<Tensor> result;
  std::size_t offset = 0;
  for (int size : sizes) {
    Shape ps = s;
    SetExtent(ps, axis, size);
    const std::size_t chunk = size * inner;
    std::vector<double> out(ps.numel());
    const auto in = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(in.data() + o * total * inner + offset, chunk, out.data() + o * chunk);
    }
    result.push_back(MakeResult("split", ps, std::move(out), {x},
                                [outer, inner, total, offset, chunk](Node& self) {
                                  auto& dx = ParentGrad(self, 0);
                                  for (std::size_t o = 0; o < outer; ++o) {
                                    double* dst = dx.data() + o * total * inner + offset;
                                    for (std::size_t i = 0; i < chunk; ++i) {
                                      dst[i] += self.grad[o * chunk + i];
                                    }
                                  }
                                }));
    offset += chunk;
  }
  return result;
}

Tensor Reshape(const Tensor& x, Shape shape) {
  RequireDefined(x, "reshape");
  if (shape.numel() != x.numel()) {
    throw ShapeError("reshape: " + x.shape().str() + " to " + shape.str() +
                     " changes the element count");
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return MakeResult("reshape", shape, std::move(out), {x}, [](Node& self) {
    auto& dx = ParentGrad(self, 0);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
  });
}

Tensor UpsampleNearest2x(const Tensor& x) {
  RequireDefined(x, "upsample");
  const Shape s = x.shape();
  const Shape os{s.n, s.c, s.h * 2, s.w * 2};
  std::vector<double> out(os.numel());
  const auto in = x.data();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t p = 0; p < planes; ++p) {
    for (int i = 0; i < os.h; ++i) {
      for (int j = 0; j < os.w; ++j) {
        out[(p * os.h + i) * os.w + j] = in[(p * s.h + i / 2) * s.w + j / 2];
      }
    }
  }
  return MakeResult("upsample_nearest2x", os, std::move(out), {x},
                    [s, os, planes](Node& self) {
                      auto& dx = ParentGrad(self, 0);
                      for (std::size_t p = 0; p < planes; ++p) {
                        for (int i = 0; i < os.h; ++i) {
                          for (int j = 0; j < os.w; ++j) {
                            dx[(p * s.h + i / 2) * s.w + j / 2] +=
                                self.grad[(p * os.h + i) * os.w + j];
                          }
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Dense algebra

Tensor Linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  RequireDefined(x, "linear");
  RequireDefined(weight, "linear");
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const int features = xs.c * xs.h * xs.w;
  if (ws.h != 1 || ws.w != 1 || ws.c != features) {
    throw ShapeError("linear: weight " + ws.str() + " does not accept " +
                     std::to_string(features) + " input features");
  }
  const int outputs = ws.n;
  const bool has_bias = bias.defined();
  if (has_bias && !(bias.shape() == Shape{1, outputs, 1, 1})) {
    throw ShapeError("linear: bias shape " + bias.shape().str());
  }
  std::vector<double> out(static_cast<std::size_t>(xs.n) * outputs);
  ConstMatrixMap xm(x.data().data(), xs.n, features);
  ConstMatrixMap wm(weight.data().data(), outputs, features);
  MatrixMap ym(out.data(), xs.n, outputs);
  ym.noalias() = xm * wm.transpose();
  if (has_bias) {
    for (int n = 0; n < xs.n; ++n) {
      for (int o = 0; o < outputs; ++o) ym(n, o) += bias.data()[o];
    }
  }
  std::vector<Tensor> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return MakeResult("linear", {xs.n, outputs, 1, 1}, std::move(out), parents,
                    [n = xs.n, features, outputs, has_bias](Node& self) {
                      ConstMatrixMap dy(self.grad.data(), n, outputs);
                      ConstMatrixMap xm(self.parents[0]->value.data(), n, features);
                      ConstMatrixMap wm(self.parents[1]->value.data(), outputs, features);
                      if (ParentWants(self, 0)) {
                        MatrixMap(ParentGrad(self, 0).data(), n, features).noalias() += dy * wm;
                      }
                      if (ParentWants(self, 1)) {
                        MatrixMap(ParentGrad(self, 1).data(), outputs, features).noalias() +=
                            dy.transpose() * xm;
                      }
                      if (has_bias && ParentWants(self, 2)) {
                        auto& db = ParentGrad(self, 2);
                        for (int o = 0; o < outputs; ++o) db[o] += OrderedSum(dy.col(o));
                      }
                    });
}

Tensor SoftmaxLast(const Tensor& x) {
  RequireDefined(x, "softmax");
  const Shape s = x.shape();
  if (s.w < 1) throw ShapeError("softmax: empty last axis in " + s.str());
  const std::size_t rows = static_cast<std::size_t>(s.n) * s.c * s.h;
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * s.w;
    double* dst = out.data() + r * s.w;
    const double m = *std::max_element(src, src + s.w);
    double total = 0.0;
    for (int j = 0; j < s.w; ++j) {
      dst[j] = std::exp(src[j] - m);
      total += dst[j];
    }
    for (int j = 0; j < s.w; ++j) dst[j] /= total;
  }
  return MakeResult("softmax", s, std::move(out), {x}, [rows, w = s.w](Node& self) {
    auto& dx = ParentGrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * w;
      const double* g = self.grad.data() + r * w;
      double dot = 0.0;
      for (int j = 0; j < w; ++j) dot += y[j] * g[j];
      for (int j = 0; j < w; ++j) dx[r * w + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor MatMul(const Tensor& a, const Tensor& b) {
  RequireDefined(a, "matmul");
  RequireDefined(b, "matmul");
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.n != bs.n || as.c != bs.c || as.w != bs.h) {
    throw ShapeError("matmul: " + as.str() + " x " + bs.str());
  }
  const Shape os{as.n, as.c, as.h, bs.w};
  const std::size_t batches = static_cast<std::size_t>(as.n) * as.c;
  const int m = as.h;
  const int k = as.w;
  const int p = bs.w;
  std::vector<double> out(os.numel());
  for (std::size_t i = 0; i < batches; ++i) {
    MatrixMap(out.data() + i * m * p, m, p).noalias() =
        ConstMatrixMap(a.data().data() + i * m * k, m, k) *
        ConstMatrixMap(b.data().data() + i * k * p, k, p);
  }
  return MakeResult("matmul", os, std::move(out), {a, b}, [batches, m, k, p](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    double* da = ParentWants(self, 0) ? ParentGrad(self, 0).data() : nullptr;
    double* db = ParentWants(self, 1) ? ParentGrad(self, 1).data() : nullptr;
    for (std::size_t i = 0; i < batches; ++i) {
      ConstMatrixMap dy(self.grad.data() + i * m * p, m, p);
      if (da != nullptr) {
        MatrixMap(da + i * m * k, m, k).noalias() +=
            dy * ConstMatrixMap(bv.data() + i * k * p, k, p).transpose();
      }
      if (db != nullptr) {
        MatrixMap(db + i * k * p, k, p).noalias() +=
            ConstMatrixMap(av.data() + i * m * k, m, k).transpose() * dy;
      }
    }
  });
}

Tensor TransposeLast(const Tensor& x) {
  RequireDefined(x, "transpose");
  const Shape s = x.shape();
  const Shape os{s.n, s.c, s.w, s.h};
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  std::vector<double> out(os.numel());
  const auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) out[(p * s.w + j) * s.h + i] = in[(p * s.h + i) * s.w + j];
    }
  }
  return MakeResult("transpose", os, std::move(out), {x}, [s, planes](Node& self) {
    auto& dx = ParentGrad(self, 0);
    for (std::size_t p = 0; p < planes; ++p) {
      for (int i = 0; i < s.h; ++i) {
        for (int j = 0; j < s.w; ++j) {
          dx[(p * s.h + i) * s.w + j] += self.grad[(p * s.w + j) * s.h + i];
        }
      }
    }
  });
}

Tensor Sum(const Tensor& x) {
  RequireDefined(x, "sum");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return MakeResult("sum", {1, 1, 1, 1}, {acc}, {x}, [](Node& self) {
    auto& dx = ParentGrad(self, 0);
    for (double& d : dx) d += self.grad[0];
  });
}

Tensor Mean(const Tensor& x) {
  RequireDefined(x, "mean");
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return Scale(Sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// Reverse pass

std::vector<Node*> BuildTape(const Tensor& root) {
  std::vector<Node*> order;
  if (!root.requires_grad()) return order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS: (node, next parent index).
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void Backward(const Tensor& loss) {
  if (!loss.defined()) throw ShapeError("backward: undefined loss");
  if (!(loss.shape() == Shape{1, 1, 1, 1})) {
    throw ShapeError("backward: loss must be a (1,1,1,1) scalar, got " + loss.shape().str());
  }
  if (!loss.requires_grad()) return;
  std::vector<Node*> tape = BuildTape(loss);
  Node* root = loss.node().get();
  const bool root_is_leaf = root->parents.empty();
  root->GradBuffer()[0] += 1.0;
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    Node* node = *it;
    if (!node->backward) continue;
    for (double g : node->GradBuffer()) {
      if (!std::isfinite(g)) {
        throw NumericError("backward: non-finite gradient at op '" + std::string(node->op) + "'");
      }
    }
    node->backward(*node);
    // Interior gradients are scratch; leaves keep theirs.
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
  if (!root_is_leaf) root->grad.clear();
  for (Node* node : tape) {
    if (!node->parents.empty() || node->backward) continue;
    for (double g : node->grad) {
      if (!std::isfinite(g)) throw NumericError("backward: non-finite gradient on a leaf");
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient checking

namespace detail {

void RecordBranch(std::uint64_t signature) {
  if (g_branch_log != nullptr) g_branch_log->push_back(signature);
}

bool BranchRecordingActive() { return g_branch_log != nullptr; }

}  // namespace detail

namespace {

class BranchRecorder {
 public:
  explicit BranchRecorder(std::vector<std::uint64_t>& log) : previous_(g_branch_log) {
    log.clear();
    g_branch_log = &log;
  }
  ~BranchRecorder() { g_branch_log = previous_; }
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

 private:
  std::vector<std::uint64_t>* previous_;
};

double EvalScalar(const std::function<Tensor()>& f, std::vector<std::uint64_t>& log) {
  BranchRecorder recorder(log);
  Tensor out = f();
  if (!(out.shape() == Shape{1, 1, 1, 1})) {
    throw ShapeError("grad_check: function must return a scalar, got " + out.shape().str());
  }
  return out.item();
}

}  // namespace

GradCheckResult GradCheck(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                          double h, std::span<const ProbeSite> sites) {
  if (!(h > 0.0)) throw ConfigError("grad_check: step must be positive");
  for (auto& leaf : leaves) {
    if (!leaf.is_leaf() || !leaf.requires_grad()) {
      throw ConfigError("grad_check: every probed tensor must be a leaf with requires_grad");
    }
    leaf.ZeroGrad();
  }
  std::vector<std::uint64_t> base_log;
  std::vector<std::vector<double>> analytic;
  {
    BranchRecorder recorder(base_log);
    Tensor out = f();
    if (!(out.shape() == Shape{1, 1, 1, 1})) {
      throw ShapeError("grad_check: function must return a scalar, got " + out.shape().str());
    }
    Backward(out);
  }
  for (auto& leaf : leaves) analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());

  std::vector<ProbeSite> all_sites;
  if (sites.empty()) {
    for (std::size_t l = 0; l < leaves.size(); ++l) {
      for (std::size_t e = 0; e < leaves[l].numel(); ++e) all_sites.push_back({l, e});
    }
    sites = all_sites;
  }

  GradCheckResult result;
  std::vector<std::uint64_t> plus_log;
  std::vector<std::uint64_t> minus_log;
  for (const ProbeSite& site : sites) {
    if (site.leaf >= leaves.size() || site.element >= leaves[site.leaf].numel()) {
      throw ConfigError("grad_check: probe site out of range");
    }
    Tensor& leaf = leaves[site.leaf];
    std::vector<double> values(leaf.data().begin(), leaf.data().end());
    const double original = values[site.element];
    values[site.element] = original + h;
    leaf.Assign(values);
    const double f_plus = EvalScalar(f, plus_log);
    values[site.element] = original - h;
    leaf.Assign(values);
    const double f_minus = EvalScalar(f, minus_log);
    values[site.element] = original;
    leaf.Assign(values);
    if (plus_log != base_log || minus_log != base_log) {
      ++result.skipped;
      continue;
    }
    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double a = analytic[site.leaf][site.element];
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    result.max_rel_error = std::max(result.max_rel_error, err);
    ++result.checked;
  }
  for (auto& leaf : leaves) leaf.ZeroGrad();
  return result;
}

double GradCheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor probe = Tensor::FromData(x.shape(), {x.data().begin(), x.data().end()}, true);
  std::vector<Tensor> leaves{probe};
  return GradCheck([&] { return f(leaves[0]); }, leaves, h).max_rel_error;
}

}  // namespace attnseg
