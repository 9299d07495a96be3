// SPDX-License-Identifier: Apache-2.0

#include "prformer/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "prformer/error.hpp"

namespace prformer {

namespace {

std::atomic<std::uint64_t> g_sequence{0};
thread_local bool t_grad_enabled = true;
thread_local std::string_view t_scope;
thread_local std::uint64_t t_flops = 0;

void count_flops(std::uint64_t n) { t_flops += n; }

std::size_t normalize_axis(int axis, std::size_t rank, std::string_view op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    std::ostringstream os;
    os << op << ": axis " << axis << " out of range for rank " << rank;
    throw UsageError(os.str());
  }
  return static_cast<std::size_t>(a);
}

[[noreturn]] void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw UsageError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_defined(const Tensor& t, std::string_view op) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor");
}

// Maps output positions back to input positions under right-aligned
// numpy-style broadcasting.
class BroadcastIndex {
 public:
  BroadcastIndex(const Shape& in, const Shape& out) : n_in_(numel(in)) {
    if (in == out) {
      kind_ = Kind::Same;
      return;
    }
    // Leading-dim broadcast: in, without leading 1s, is a suffix of out.
    std::size_t lead = 0;
    while (lead < in.size() && in[lead] == 1) ++lead;
    const std::size_t tail = in.size() - lead;
    if (tail <= out.size() &&
        std::equal(in.begin() + static_cast<std::ptrdiff_t>(lead), in.end(),
                   out.end() - static_cast<std::ptrdiff_t>(tail))) {
      kind_ = Kind::Suffix;
      return;
    }
    kind_ = Kind::General;
    const std::size_t rank = out.size();
    std::vector<std::size_t> stride(rank, 0);
    std::size_t s = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const std::size_t oi = rank - 1 - i;
      const std::size_t ii = in.size() - 1 - i;
      stride[oi] = in[ii] == 1 ? 0 : s;
      s *= in[ii];
    }
    const std::size_t n = numel(out);
    map_.resize(n);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      map_[i] = pos;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        pos += stride[d];
        if (idx[d] < out[d]) break;
        pos -= stride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }

  std::size_t operator()(std::size_t i) const {
    switch (kind_) {
      case Kind::Same: return i;
      case Kind::Suffix: return i % n_in_;
      default: return map_[i];
    }
  }

 private:
  enum class Kind { Same, Suffix, General };
  Kind kind_ = Kind::Same;
  std::size_t n_in_;
  std::vector<std::size_t> map_;
};

Shape broadcast_shape(std::string_view op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) shape_mismatch(op, a, b);
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

// Row-major kernels. C (m x n) += A (m x k) * B (k x n).
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
  count_flops(2ull * m * n * k);
}

// C (m x k) += G (m x n) * B^T where B is (k x n).
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      ci[p] += acc;
    }
  }
  count_flops(2ull * m * n * k);
}

// C (k x n) += A^T * G where A is (m x k), G is (m x n).
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
  count_flops(2ull * m * n * k);
}

// outer * axis_len * inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};
AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class Fwd, class Deriv>
Tensor unary(std::string_view op, const Tensor& x, Fwd fwd, Deriv deriv) {
  require_defined(x, op);
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  count_flops(in.size());
  return make_op_result(op, x.shape(), std::move(out), {x}, [deriv](Node& self) {
    Node& in_node = *self.inputs[0];
    if (!in_node.requires_grad) return;
    auto& g = in_node.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * deriv(in_node.value[i], self.value[i]);
  });
}

}  // namespace

struct NodeAccess {
  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
  static const std::shared_ptr<Node>& get(const Tensor& t) { return t.node_; }
};

// ---------------------------------------------------------------------------
// Shape helpers and Tensor members

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw UsageError("tensor: zero extent in shape " + shape_str(shape));
  if (prformer::numel(shape) != values.size())
    throw UsageError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
  node_->seq = g_sequence.fetch_add(1, std::memory_order_relaxed);
  node_->scope = t_scope;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = prformer::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::vec(std::initializer_list<double> values, bool requires_grad) {
  return Tensor({values.size()}, std::vector<double>(values), requires_grad);
}

const Shape& Tensor::shape() const {
  static const Shape empty;
  return node_ ? node_->shape : empty;
}

std::size_t Tensor::dim(int axis) const { return shape()[normalize_axis(axis, rank(), "dim")]; }
std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }
void Tensor::zero_grad() { node_->grad.clear(); }
std::string_view Tensor::op() const { return node_->op; }
std::string_view Tensor::scope() const { return node_->scope; }
std::uint64_t Tensor::sequence() const { return node_->seq; }

std::vector<Tensor> Tensor::inputs() const {
  std::vector<Tensor> out;
  for (const auto& n : node_->inputs) out.push_back(NodeAccess::wrap(n));
  return out;
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }

Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  node->scope = t_scope;
  node->seq = g_sequence.fetch_add(1, std::memory_order_relaxed);
  if (t_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& t : inputs) node->inputs.push_back(NodeAccess::get(t));
      node->backward_fn = std::move(backward_fn);
    }
  }
  return NodeAccess::wrap(std::move(node));
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

namespace {

struct BinaryPlan {
  Shape out;
  BroadcastIndex ia, ib;
  BinaryPlan(std::string_view op, const Tensor& a, const Tensor& b)
      : out(broadcast_shape(op, a.shape(), b.shape())), ia(a.shape(), out), ib(b.shape(), out) {}
};

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  auto plan = std::make_shared<BinaryPlan>("add", a, b);
  const auto av = a.data(), bv = b.data();
  std::vector<double> out(numel(plan->out));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[plan->ia(i)] + bv[plan->ib(i)];
  count_flops(out.size());
  return make_op_result("add", plan->out, std::move(out), {a, b}, [plan](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[plan->ia(i)] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[plan->ib(i)] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  auto plan = std::make_shared<BinaryPlan>("sub", a, b);
  const auto av = a.data(), bv = b.data();
  std::vector<double> out(numel(plan->out));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[plan->ia(i)] - bv[plan->ib(i)];
  count_flops(out.size());
  return make_op_result("sub", plan->out, std::move(out), {a, b}, [plan](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[plan->ia(i)] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[plan->ib(i)] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  auto plan = std::make_shared<BinaryPlan>("mul", a, b);
  const auto av = a.data(), bv = b.data();
  std::vector<double> out(numel(plan->out));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[plan->ia(i)] * bv[plan->ib(i)];
  count_flops(out.size());
  return make_op_result("mul", plan->out, std::move(out), {a, b}, [plan](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[plan->ia(i)] += self.grad[i] * nb.value[plan->ib(i)];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[plan->ib(i)] += self.grad[i] * na.value[plan->ia(i)];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_defined(a, "div");
  require_defined(b, "div");
  auto plan = std::make_shared<BinaryPlan>("div", a, b);
  const auto av = a.data(), bv = b.data();
  std::vector<double> out(numel(plan->out));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[plan->ia(i)] / bv[plan->ib(i)];
  count_flops(out.size());
  return make_op_result("div", plan->out, std::move(out), {a, b}, [plan](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[plan->ia(i)] += self.grad[i] / nb.value[plan->ib(i)];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double bvi = nb.value[plan->ib(i)];
        g[plan->ib(i)] -= self.grad[i] * na.value[plan->ia(i)] / (bvi * bvi);
      }
    }
  });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      "add_scalar", x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) shape_mismatch("matmul", sa, sb);
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t n = sb.back();
  if (sb[sb.size() - 2] != k) shape_mismatch("matmul", sa, sb);
  const bool shared = sb.size() == 2;
  if (!shared && (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())))
    shape_mismatch("matmul", sa, sb);
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];

  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n, 0.0);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  if (shared) {
    gemm_nn(ap, bp, out.data(), batch * m, k, n);
  } else {
    for (std::size_t t = 0; t < batch; ++t)
      gemm_nn(ap + t * m * k, bp + t * k * n, out.data() + t * m * n, m, k, n);
  }
  return make_op_result("matmul", std::move(out_shape), std::move(out), {a, b},
                        [batch, m, k, n, shared](Node& self) {
                          Node& na = *self.inputs[0];
                          Node& nb = *self.inputs[1];
                          const double* g = self.grad.data();
                          if (na.requires_grad) {
                            double* ga = na.grad_buffer().data();
                            if (shared) {
                              gemm_nt(g, nb.value.data(), ga, batch * m, n, k);
                            } else {
                              for (std::size_t t = 0; t < batch; ++t)
                                gemm_nt(g + t * m * n, nb.value.data() + t * k * n, ga + t * m * k, m, n, k);
                            }
                          }
                          if (nb.requires_grad) {
                            double* gb = nb.grad_buffer().data();
                            if (shared) {
                              gemm_tn(na.value.data(), g, gb, batch * m, k, n);
                            } else {
                              for (std::size_t t = 0; t < batch; ++t)
                                gemm_tn(na.value.data() + t * m * k, g + t * m * n, gb + t * k * n, m, k, n);
                            }
                          }
                        });
}

Tensor transpose(const Tensor& x) {
  require_defined(x, "transpose");
  const Shape& s = x.shape();
  if (s.size() < 2) throw UsageError("transpose: rank " + std::to_string(s.size()) + " < 2");
  const std::size_t r = s[s.size() - 2], c = s.back();
  const std::size_t batch = x.numel() / (r * c);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t t = 0; t < batch; ++t)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[t * r * c + j * r + i] = in[t * r * c + i * c + j];
  return make_op_result("transpose", std::move(out_shape), std::move(out), {x}, [batch, r, c](Node& self) {
    Node& in_node = *self.inputs[0];
    if (!in_node.requires_grad) return;
    auto& g = in_node.grad_buffer();
    for (std::size_t t = 0; t < batch; ++t)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[t * r * c + i * c + j] += self.grad[t * r * c + j * r + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (numel(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  for (auto d : shape)
    if (d == 0) shape_mismatch("reshape", x.shape(), shape);
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, s0.size(), "concat");
  Shape out_shape = s0;
  out_shape[ax] = 0;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_mismatch("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != ax && s[i] != s0[i]) shape_mismatch("concat", s0, s);
    lens.push_back(s[ax]);
    out_shape[ax] += s[ax];
  }
  const AxisSplit sp = split_at(out_shape, ax);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto in = parts[p].data();
    const std::size_t chunk = lens[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * sp.len * sp.inner + offset));
    offset += chunk;
  }
  return make_op_result("concat", out_shape, std::move(out), parts, [sp, lens](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < self.inputs.size(); ++p) {
      Node& in = *self.inputs[p];
      const std::size_t chunk = lens[p] * sp.inner;
      if (in.requires_grad) {
        auto& g = in.grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = self.grad.data() + o * sp.len * sp.inner + offset;
          double* dst = g.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      offset += chunk;
    }
  });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  require_defined(x, "slice");
  const std::size_t ax = normalize_axis(axis, x.rank(), "slice");
  const Shape& s = x.shape();
  if (begin >= end || end > s[ax]) {
    std::ostringstream os;
    os << "slice: range [" << begin << "," << end << ") invalid for axis " << ax << " of " << shape_str(s);
    throw UsageError(os.str());
  }
  const AxisSplit sp = split_at(s, ax);
  Shape out_shape = s;
  out_shape[ax] = end - begin;
  const std::size_t chunk = (end - begin) * sp.inner;
  const auto in = x.data();
  std::vector<double> out(sp.outer * chunk);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * sp.len * sp.inner + begin * sp.inner), chunk,
                out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  return make_op_result("slice", std::move(out_shape), std::move(out), {x}, [sp, chunk, begin](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = g.data() + o * sp.len * sp.inner + begin * sp.inner;
      const double* src = self.grad.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

Tensor index_select(const Tensor& x, int axis, const std::vector<std::size_t>& indices) {
  require_defined(x, "index_select");
  const std::size_t ax = normalize_axis(axis, x.rank(), "index_select");
  const AxisSplit sp = split_at(x.shape(), ax);
  if (indices.empty()) throw UsageError("index_select: empty index list");
  for (auto i : indices)
    if (i >= sp.len)
      throw UsageError("index_select: index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[ax] = indices.size();
  const auto in = x.data();
  std::vector<double> out(sp.outer * indices.size() * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < indices.size(); ++j)
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>((o * sp.len + indices[j]) * sp.inner), sp.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * indices.size() + j) * sp.inner));
  return make_op_result("index_select", std::move(out_shape), std::move(out), {x}, [sp, indices](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < indices.size(); ++j) {
        double* dst = g.data() + (o * sp.len + indices[j]) * sp.inner;
        const double* src = self.grad.data() + (o * indices.size() + j) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
  });
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

Tensor reduce_axis(std::string_view op, const Tensor& x, int axis, bool keepdim, double factor) {
  require_defined(x, op);
  const std::size_t ax = normalize_axis(axis, x.rank(), op);
  const AxisSplit sp = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
    if (out_shape.empty()) out_shape.push_back(1);
  }
  const auto in = x.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l) {
      const double* src = in.data() + (o * sp.len + l) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  if (factor != 1.0)
    for (auto& v : out) v *= factor;
  count_flops(x.numel());
  return make_op_result(op, std::move(out_shape), std::move(out), {x}, [sp, factor](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l) {
        double* dst = g.data() + (o * sp.len + l) * sp.inner;
        const double* src = self.grad.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i] * factor;
      }
  });
}

}  // namespace

Tensor sum(const Tensor& x, int axis, bool keepdim) { return reduce_axis("sum", x, axis, keepdim, 1.0); }

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  require_defined(x, "mean");
  const std::size_t ax = normalize_axis(axis, x.rank(), "mean");
  return reduce_axis("mean", x, axis, keepdim, 1.0 / static_cast<double>(x.shape()[ax]));
}

Tensor sum_all(const Tensor& x) {
  require_defined(x, "sum_all");
  return reduce_axis("sum", reshape(x, {x.numel()}), 0, false, 1.0);
}

Tensor mean_all(const Tensor& x) {
  require_defined(x, "mean_all");
  return reduce_axis("mean", reshape(x, {x.numel()}), 0, false, 1.0 / static_cast<double>(x.numel()));
}

Tensor max_detached(const Tensor& x, int axis) {
  require_defined(x, "max");
  const std::size_t ax = normalize_axis(axis, x.rank(), "max");
  const AxisSplit sp = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = 1;
  const auto in = x.data();
  std::vector<double> out(sp.outer * sp.inner, -HUGE_VAL);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        double& d = out[o * sp.inner + i];
        d = std::max(d, in[(o * sp.len + l) * sp.inner + i]);
      }
  return Tensor(std::move(out_shape), std::move(out));
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng) {
  require_defined(x, "dropout");
  if (p < 0.0 || p >= 1.0) throw UsageError("dropout: rate " + std::to_string(p) + " outside [0,1)");
  if (!training || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double kept_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (auto& m : *mask) m = keep(rng) ? kept_scale : 0.0;
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * (*mask)[i];
  return make_op_result("dropout", x.shape(), std::move(out), {x}, [mask](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor forward_primitive(std::string_view op_id, const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n)
      throw UsageError(std::string(op_id) + ": expected " + std::to_string(n) + " inputs, got " +
                       std::to_string(inputs.size()));
  };
  if (op_id == "add") return need(2), add(inputs[0], inputs[1]);
  if (op_id == "sub") return need(2), sub(inputs[0], inputs[1]);
  if (op_id == "mul") return need(2), mul(inputs[0], inputs[1]);
  if (op_id == "div") return need(2), div(inputs[0], inputs[1]);
  if (op_id == "matmul") return need(2), matmul(inputs[0], inputs[1]);
  if (op_id == "transpose") return need(1), transpose(inputs[0]);
  if (op_id == "reshape") return need(1), reshape(inputs[0], attrs.shape);
  if (op_id == "concat") return concat(inputs, attrs.axis);
  if (op_id == "slice") return need(1), slice(inputs[0], attrs.axis, attrs.begin, attrs.end);
  if (op_id == "sum") return need(1), sum(inputs[0], attrs.axis, attrs.keepdim);
  if (op_id == "mean") return need(1), mean(inputs[0], attrs.axis, attrs.keepdim);
  if (op_id == "sqrt") return need(1), sqrt(inputs[0]);
  if (op_id == "exp") return need(1), exp(inputs[0]);
  if (op_id == "tanh") return need(1), tanh(inputs[0]);
  if (op_id == "sigmoid") return need(1), sigmoid(inputs[0]);
  if (op_id == "relu") return need(1), relu(inputs[0]);
  if (op_id == "abs") return need(1), abs(inputs[0]);
  if (op_id == "scale") return need(1), scale(inputs[0], attrs.value);
  throw UsageError("unknown primitive '" + std::string(op_id) + "'");
}

// ---------------------------------------------------------------------------
// Tape control

std::vector<Tensor> collect_graph(const Tensor& root) {
  std::vector<Tensor> out;
  if (!root.defined()) return out;
  std::unordered_set<const Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{NodeAccess::get(root)};
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    for (const auto& in : n->inputs) stack.push_back(in);
    out.push_back(NodeAccess::wrap(std::move(n)));
  }
  return out;
}

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1)
    throw UsageError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw UsageError("backward: loss is not connected to any tensor requiring grad");

  std::vector<Node*> order;
  {
    std::unordered_set<const Node*> seen;
    std::vector<Node*> stack{loss.node()};
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      if (!seen.insert(n).second) continue;
      order.push_back(n);
      for (const auto& in : n->inputs)
        if (in->requires_grad) stack.push_back(in.get());
    }
  }
  // Reverse record order is a valid topological order: inputs are always
  // created before the ops that consume them.
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });
  for (Node* n : order)
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  loss.node()->grad_buffer()[0] += 1.0;
  for (Node* n : order)
    if (n->backward_fn) n->backward_fn(*n);
  // Intermediate gradients are scratch; only leaves keep theirs.
  for (Node* n : order)
    if (n->backward_fn) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

ScopeGuard::ScopeGuard(std::string_view name) : previous_(t_scope) { t_scope = name; }
ScopeGuard::~ScopeGuard() { t_scope = previous_; }

FlopCounter::FlopCounter() : start_(t_flops) {}
FlopCounter::~FlopCounter() = default;
std::uint64_t FlopCounter::count() const { return t_flops - start_; }

}  // namespace prformer
