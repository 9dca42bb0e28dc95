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

#ifndef ATTNSEG_TENSOR_HPP_
#define ATTNSEG_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace attnseg {

// Extents of a rank-4 (batch, channel, height, width) tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::string str() const;
  bool operator==(const Shape&) const = default;
};

enum class Axis { kBatch, kChannel, kHeight, kWidth };
enum class PoolMode { kAvg, kMax };

namespace detail {

// One vertex of the define-by-run graph. Parents always precede their
// children, so a depth-first post-order from the loss is a valid tape.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulated into
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad, accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& GradBuffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense float64 tensor participating in reverse-mode differentiation.
//
// A Tensor is a cheap handle; copies share the same storage. Values are
// immutable once an op has produced them. Only leaves (tensors created by the
// factories below) may be overwritten through Assign, which is how optimizers
// update parameters between forward passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor Zeros(Shape shape, bool requires_grad = false);
  static Tensor Full(Shape shape, double value, bool requires_grad = false);
  static Tensor FromData(Shape shape, std::vector<double> data,
                         bool requires_grad = false);
  static Tensor Scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }
  std::span<const double> data() const;
  // Accumulated gradient; zeros if nothing has flowed into this tensor.
  std::span<const double> grad() const;
  bool requires_grad() const;
  bool is_leaf() const;
  std::string_view op_name() const;

  double item() const;
  double at(int n, int c, int h, int w) const;

  // Overwrite a leaf's values in place. Throws for op outputs.
  void Assign(std::span<const double> values);
  void ZeroGrad();
  // Same values, no history, requires_grad = false.
  Tensor Detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Builds an op output. Rejects non-finite values with a NumericError naming
// `op`. History is recorded only if some parent requires a gradient.
Tensor MakeResult(std::string_view op, Shape shape, std::vector<double> value,
                  const std::vector<Tensor>& parents,
                  std::function<void(detail::Node&)> backward);

// ---------------------------------------------------------------------------
// Differentiable operations.

// Cross-correlation. weight: (C_out, C_in, k, k); bias: (1, C_out, 1, 1) or
// undefined.
Tensor Conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int stride = 1, int pad = 0);

// (N,C,H,W) -> (N,C,1,1). Max routes the gradient to the first row-major argmax.
Tensor PoolGlobal(const Tensor& x, PoolMode mode);

// Mean over one spatial axis: kWidth -> (N,C,H,1), kHeight -> (N,C,1,W).
Tensor PoolDirectional(const Tensor& x, Axis axis);

// (N,C,H,W) -> (N,1,H,W). Max ties go to the lowest channel.
Tensor PoolAcrossChannels(const Tensor& x, PoolMode mode);

Tensor Sigmoid(const Tensor& x);
Tensor Relu(const Tensor& x);

// Exact-shape sum.
Tensor Add(const Tensor& a, const Tensor& b);

// Elementwise product. Besides equal shapes, exactly two gate broadcasts are
// accepted (either operand order): (N,C,1,1) x (N,C,H,W) and
// (N,1,H,W) x (N,C,H,W).
Tensor Mul(const Tensor& a, const Tensor& b);

Tensor Scale(const Tensor& x, double factor);

// Repeat a singleton height or width axis `times` times. The adjoint of
// summing along that axis.
Tensor RepeatAlong(const Tensor& x, Axis axis, int times);

Tensor Concat(const std::vector<Tensor>& parts, Axis axis);
std::vector<Tensor> Split(const Tensor& x, Axis axis, const std::vector<int>& sizes);

// Row-major relabelling to a shape with the same element count.
Tensor Reshape(const Tensor& x, Shape shape);

// Nearest-neighbour x2 upsampling of both spatial axes.
Tensor UpsampleNearest2x(const Tensor& x);

// x flattened per sample to F = C*H*W features; weight (out, F, 1, 1);
// bias (1, out, 1, 1) or undefined. Output (N, out, 1, 1).
Tensor Linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Softmax along the width axis with max subtraction.
Tensor SoftmaxLast(const Tensor& x);

// Batched over (N, C): (N,C,M,K) x (N,C,K,P) -> (N,C,M,P).
Tensor MatMul(const Tensor& a, const Tensor& b);

// Swap height and width.
Tensor TransposeLast(const Tensor& x);

// Reductions to a (1,1,1,1) scalar.
Tensor Sum(const Tensor& x);
Tensor Mean(const Tensor& x);

// ---------------------------------------------------------------------------
// Reverse pass.

// Seeds d(loss)/d(loss) = 1 and accumulates into every reachable leaf with
// requires_grad. Leaf gradients accumulate across calls; call ZeroGrad first.
void Backward(const Tensor& loss);

// Post-order of the nodes reachable from `root` that require a gradient.
std::vector<detail::Node*> BuildTape(const Tensor& root);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Elements whose +-h probe crossed a ReLU kink or flipped a max argmax.
  std::size_t skipped = 0;
};

// One probed element: leaf index into `leaves`, flat element index.
struct ProbeSite {
  std::size_t leaf = 0;
  std::size_t element = 0;
};

// Compares the analytic gradient of f() against central differences
// (f(x+h e) - f(x-h e)) / 2h for every element of every leaf, or only for
// `sites` when non-empty. Error per element is
// |analytic - numeric| / max(1, |analytic|).
GradCheckResult GradCheck(const std::function<Tensor()>& f,
                          std::span<Tensor> leaves, double h = 1e-4,
                          std::span<const ProbeSite> sites = {});

// Single-input form: max relative error of d f(x) / dx.
double GradCheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                 double h = 1e-4);

namespace detail {
// Records the branch pattern of nonsmooth ops (ReLU signs, max argmax) while a
// gradient check is running on the current thread.
void RecordBranch(std::uint64_t signature);
bool BranchRecordingActive();
}  // namespace detail

}  // namespace attnseg

#endif  // ATTNSEG_TENSOR_HPP_
