// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a reverse-mode autodiff tape.
//
// Every op result that depends on a tensor with requires_grad() set is
// recorded: it keeps references to its inputs and a closure that pushes its
// gradient back to them. backward() replays the recorded ops reachable from a
// scalar loss in reverse creation order, so each use of a tensor contributes
// to its gradient exactly once.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prformer {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // 1-D tensor from a literal list.
  static Tensor vec(std::initializer_list<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  // Negative axes count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access, for optimizers and initializers. Does not touch the tape.
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Primitive that produced this tensor ("leaf" for user-created tensors) and
  // the kernel scope that was active at the time.
  std::string_view op() const;
  std::string_view scope() const;
  std::vector<Tensor> inputs() const;
  std::uint64_t sequence() const;

  // Same values, no tape history.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  bool same_as(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend struct NodeAccess;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::string_view op = "leaf";
  std::string_view scope;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  // Lazily allocates a zero gradient buffer.
  std::vector<double>& grad_buffer();
};

// Creates an op output and records it on the tape when any input requires
// grad and recording is enabled. Used by primitives and by custom kernels.
Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn);

// ---------------------------------------------------------------------------
// Primitive catalog

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

// a: (..., m, k); b: (k, n) shared across the batch, or (..., k, n) with the
// same leading dims as a.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
// Gathers entries along an axis; backward scatters.
Tensor index_select(const Tensor& x, int axis, const std::vector<std::size_t>& indices);

Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// Forward-only maximum along an axis (keepdim); carries no gradient.
Tensor max_detached(const Tensor& x, int axis);

Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
// Subgradient 0 at the origin.
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

// Inverted dropout: scales kept entries by 1/(1-p). Identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng);

// Generic entry point by name. Attributes not used by an op are ignored.
struct OpAttrs {
  int axis = -1;
  std::size_t begin = 0;
  std::size_t end = 0;
  bool keepdim = false;
  double value = 0.0;
  Shape shape;
};
Tensor forward_primitive(std::string_view op_id, const std::vector<Tensor>& inputs,
                         const OpAttrs& attrs = {});

// ---------------------------------------------------------------------------
// Tape control

// Populates grad() on every requires_grad leaf reachable from loss. Leaf
// gradients accumulate across calls until zero_grad().
void backward(const Tensor& loss);

// Suspends tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Labels ops created during its lifetime with a kernel name (e.g. "gru").
// The name must outlive the ops; string literals are expected.
class ScopeGuard {
 public:
  explicit ScopeGuard(std::string_view name);
  ~ScopeGuard();
  ScopeGuard(const ScopeGuard&) = delete;
  ScopeGuard& operator=(const ScopeGuard&) = delete;

 private:
  std::string_view previous_;
};

// Counts floating point operations (multiply-adds count as two) issued by
// primitives on this thread while alive. Nested counters each see all work.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;
  std::uint64_t count() const;

 private:
  std::uint64_t start_;
};

// All distinct nodes reachable from root, root included.
std::vector<Tensor> collect_graph(const Tensor& root);

}  // namespace prformer
