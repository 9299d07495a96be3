// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prformer/error.hpp"
#include "prformer/gradcheck.hpp"
#include "prformer/nn.hpp"
#include "test_util.hpp"

using namespace prformer;
using prformer::test::check_values;
using prformer::test::max_abs_diff;
using prformer::test::randn;

namespace {

Conv1dParams conv_from(Shape w_shape, std::vector<double> w, std::vector<double> b) {
  Conv1dParams p;
  const std::size_t out = w_shape[0];
  p.stride = w_shape[2];
  p.weight = Tensor(std::move(w_shape), std::move(w));
  p.bias = Tensor({out}, std::move(b));
  return p;
}

GRUParams zero_gru(std::size_t in, std::size_t hid) {
  GRUParams p;
  for (Tensor* t : {&p.w_update, &p.w_reset, &p.w_candidate}) *t = Tensor::zeros({in, hid});
  for (Tensor* t : {&p.u_update, &p.u_reset, &p.u_candidate}) *t = Tensor::zeros({hid, hid});
  for (Tensor* t : {&p.b_update, &p.b_reset, &p.b_candidate}) *t = Tensor::zeros({hid});
  return p;
}

std::vector<Tensor> gru_tensors(const GRUParams& p) {
  return {p.w_update, p.w_reset, p.w_candidate, p.u_update, p.u_reset,
          p.u_candidate, p.b_update, p.b_reset, p.b_candidate};
}

std::vector<Tensor> attention_tensors(const AttentionParams& p) {
  return {p.query.weight, p.query.bias, p.key.weight, p.key.bias,
          p.value.weight, p.value.bias, p.output.weight, p.output.bias};
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("conv1d hand examples") {
  const Tensor x({4, 1}, {1, 2, 3, 4});
  check_values(conv1d(x, conv_from({1, 1, 2}, {1, 1}, {0})), {3, 7});
  check_values(conv1d(Tensor({1, 1}, {5}), conv_from({1, 1, 1}, {1}, {0})), {5});
  std::mt19937_64 rng(1);
  CHECK(conv1d(randn({30, 1}, rng), conv_from({1, 1, 2}, {1, 1}, {0})).dim(-2) == 15);
}

TEST_CASE("conv1d matches a direct strided loop") {
  std::mt19937_64 rng(2);
  const std::size_t len = 23, in = 3, out = 4, k = 5;
  const Tensor x = randn({2, len, in}, rng);
  const Conv1dParams p = make_conv1d(in, out, k, rng);
  const Tensor y = conv1d(x, p);
  REQUIRE(y.shape() == Shape{2, len / k, out});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < len / k; ++t)
      for (std::size_t o = 0; o < out; ++o) {
        double s = p.bias.data()[o];
        for (std::size_t i = 0; i < in; ++i)
          for (std::size_t j = 0; j < k; ++j)
            s += p.weight.data()[(o * in + i) * k + j] * x.data()[(b * len + t * k + j) * in + i];
        CHECK(std::fabs(y.data()[(b * (len / k) + t) * out + o] - s) < 1e-12);
      }
}

TEST_CASE("conv1d output length is floor(length / kernel) for every kernel <= length <= 1000") {
  std::size_t mismatches = 0;
  for (std::size_t length = 1; length <= 1000; ++length)
    for (std::size_t kernel = 1; kernel <= length; ++kernel)
      mismatches += conv1d_out_length(length, kernel) != length / kernel;
  CHECK(mismatches == 0);
  std::mt19937_64 rng(3);
  for (std::size_t length = 1; length <= 40; ++length)
    for (std::size_t kernel = 1; kernel <= length; ++kernel) {
      const Conv1dParams p = make_conv1d(2, 3, kernel, rng);
      CHECK(conv1d(Tensor::zeros({length, 2}), p).dim(-2) == length / kernel);
    }
}

TEST_CASE("conv1d errors") {
  std::mt19937_64 rng(4);
  const Conv1dParams p = make_conv1d(1, 1, 4, rng);
  CHECK_THROWS_AS(conv1d(Tensor::zeros({3, 1}), p), UsageError);
  Conv1dParams bad = p;
  bad.stride = 2;
  CHECK_THROWS_AS(conv1d(Tensor::zeros({8, 1}), bad), UsageError);
}

TEST_CASE("gru examples") {
  std::mt19937_64 rng(5);
  SUBCASE("zero parameters stay at the origin") {
    const GRUOutput out = gru_forward(randn({7, 3}, rng), zero_gru(3, 4));
    for (double v : out.all_hidden.data()) CHECK(v == 0.0);
  }
  SUBCASE("one hand-evaluated step") {
    GRUParams p = zero_gru(1, 1);
    p.w_candidate = Tensor({1, 1}, {1.0});
    const GRUOutput out = gru_forward(Tensor({1, 1}, {1.0}), p);
    CHECK(std::fabs(out.last.item() - 0.5 * std::tanh(1.0)) < 1e-15);
    CHECK(std::fabs(out.last.item() - 0.380797) < 1e-6);
  }
  SUBCASE("last equals the final step of all_hidden") {
    const GRUParams p = make_gru(3, 5, rng);
    const GRUOutput out = gru_forward(randn({2, 9, 3}, rng), p);
    REQUIRE(out.all_hidden.shape() == Shape{2, 9, 5});
    const Tensor tail = reshape(slice(out.all_hidden, 1, 8, 9), {2, 5});
    CHECK(max_abs_diff(tail.data(), out.last.data()) == 0.0);
  }
}

TEST_CASE("gru matches an independent scalar-loop recurrence") {
  std::mt19937_64 rng(6);
  const std::size_t in = 3, hid = 4, len = 6;
  const GRUParams p = make_gru(in, hid, rng);
  const Tensor seq = randn({len, in}, rng);
  const Tensor h0 = randn({hid}, rng);
  const GRUOutput out = gru_forward(seq, p, h0);
  auto w = [&](const Tensor& m, std::size_t i, std::size_t j, std::size_t cols) { return m.data()[i * cols + j]; };
  std::vector<double> h(h0.data().begin(), h0.data().end());
  for (std::size_t t = 0; t < len; ++t) {
    std::vector<double> z(hid), r(hid), next(hid);
    for (std::size_t j = 0; j < hid; ++j) {
      double az = p.b_update.data()[j], ar = p.b_reset.data()[j];
      for (std::size_t i = 0; i < in; ++i) {
        az += seq.data()[t * in + i] * w(p.w_update, i, j, hid);
        ar += seq.data()[t * in + i] * w(p.w_reset, i, j, hid);
      }
      for (std::size_t i = 0; i < hid; ++i) {
        az += h[i] * w(p.u_update, i, j, hid);
        ar += h[i] * w(p.u_reset, i, j, hid);
      }
      z[j] = sigmoid_ref(az);
      r[j] = sigmoid_ref(ar);
    }
    for (std::size_t j = 0; j < hid; ++j) {
      double ac = p.b_candidate.data()[j];
      for (std::size_t i = 0; i < in; ++i) ac += seq.data()[t * in + i] * w(p.w_candidate, i, j, hid);
      for (std::size_t i = 0; i < hid; ++i) ac += r[i] * h[i] * w(p.u_candidate, i, j, hid);
      next[j] = (1.0 - z[j]) * h[j] + z[j] * std::tanh(ac);
    }
    h = next;
    for (std::size_t j = 0; j < hid; ++j) CHECK(std::fabs(out.all_hidden.data()[t * hid + j] - h[j]) < 1e-12);
  }
}

TEST_CASE("layer_norm examples and moments") {
  const Tensor gain = Tensor::full({3}, 1.0), bias = Tensor::zeros({3});
  check_values(layer_norm(Tensor::vec({4, 4, 4}), gain, bias, 1e-5), {0, 0, 0});
  const double a = std::sqrt(1.5);
  check_values(layer_norm(Tensor::vec({1, 2, 3}), gain, bias, 1e-14), {-a, 0, a}, 1e-9);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dim = 16;
    const Tensor x = randn({dim}, rng, 3.0);
    const double g = std::uniform_real_distribution<>(-2, 2)(rng), b = std::uniform_real_distribution<>(-1, 1)(rng);
    const Tensor y = layer_norm(x, Tensor::full({dim}, g), Tensor::full({dim}, b), 1e-5);
    const double m = std::accumulate(y.data().begin(), y.data().end(), 0.0) / dim;
    double var = 0.0;
    for (double v : y.data()) var += (v - m) * (v - m);
    CHECK(std::fabs(m - b) < 1e-9);
    CHECK(std::fabs(std::sqrt(var / dim) - std::fabs(g)) < 1e-4);
  }
}

TEST_CASE("softmax_temp examples") {
  check_values(softmax_temp(Tensor::vec({0.3, 0.3, 0.3, 0.3}), 7.0), {0.25, 0.25, 0.25, 0.25}, 1e-15);
  check_values(softmax_temp(Tensor::vec({std::log(2.0), 0.0}), 1.0), {2.0 / 3.0, 1.0 / 3.0}, 1e-15);
  const double s2 = 1.0 / (1.0 + std::exp(-2.0));
  check_values(softmax_temp(Tensor::vec({0.2, 0.1}), 0.05), {s2, 1.0 - s2}, 1e-12);
  CHECK(std::fabs(s2 - 0.88080) < 1e-5);
  CHECK_THROWS_AS(softmax_temp(Tensor::vec({1, 2}), 0.0), UsageError);
  CHECK_THROWS_AS(softmax_temp(Tensor::vec({1, 2}), -1.0), UsageError);
}

TEST_CASE("softmax_temp is a simplex point and sharpens monotonically as T falls") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor logits = randn({5}, rng);
    double previous_max = 0.0;
    for (double t : {10.0, 1.0, 0.1, 0.01}) {
      const Tensor p = softmax_temp(logits, t);
      double total = 0.0;
      for (double v : p.data()) {
        CHECK(v >= 0.0);
        total += v;
      }
      CHECK(std::fabs(total - 1.0) < 1e-12);
      const double mx = *std::max_element(p.data().begin(), p.data().end());
      CHECK(mx >= previous_max);
      previous_max = mx;
    }
  }
}

TEST_CASE("multi_head_attention examples") {
  std::mt19937_64 rng(9);
  const AttentionParams p = make_attention(8, rng);
  SUBCASE("single token attends to itself") {
    std::vector<Tensor> probs;
    const Tensor h = randn({1, 8}, rng);
    const Tensor out = multi_head_attention(h, p, 2, &probs);
    REQUIRE(probs.size() == 2);
    for (const auto& w : probs) check_values(w, {1.0}, 1e-15);
    const Tensor expected = linear(linear(h, p.value), p.output);
    CHECK(max_abs_diff(out.data(), expected.data()) < 1e-12);
  }
  SUBCASE("identical tokens give identical rows") {
    const Tensor row = randn({1, 8}, rng);
    const Tensor out = multi_head_attention(concat({row, row}, 0), p, 4);
    CHECK(max_abs_diff(slice(out, 0, 0, 1).data(), slice(out, 0, 1, 2).data()) < 1e-15);
  }
  SUBCASE("every probability row sums to one") {
    std::vector<Tensor> probs;
    multi_head_attention(randn({3, 6, 8}, rng), p, 4, &probs);
    for (const auto& w : probs) {
      const Tensor sums = sum(w, -1);
      for (double v : sums.data()) CHECK(std::fabs(v - 1.0) < 1e-6);
    }
  }
  CHECK_THROWS_AS(multi_head_attention(randn({2, 8}, rng), p, 3), UsageError);
}

TEST_CASE("multi_head_attention matches a per-head reference") {
  std::mt19937_64 rng(10);
  const std::size_t c = 4, d = 6, heads = 2, dk = 3;
  const AttentionParams p = make_attention(d, rng);
  const Tensor h = randn({c, d}, rng);
  const Tensor q = linear(h, p.query), k = linear(h, p.key), v = linear(h, p.value);
  std::vector<double> merged(c * d);
  for (std::size_t hd = 0; hd < heads; ++hd)
    for (std::size_t i = 0; i < c; ++i) {
      std::vector<double> s(c);
      for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t e = 0; e < dk; ++e) s[j] += q.data()[i * d + hd * dk + e] * k.data()[j * d + hd * dk + e];
        s[j] /= std::sqrt(static_cast<double>(dk));
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (auto& x : s) z += (x = std::exp(x - mx));
      for (std::size_t e = 0; e < dk; ++e)
        for (std::size_t j = 0; j < c; ++j) merged[i * d + hd * dk + e] += s[j] / z * v.data()[j * d + hd * dk + e];
    }
  const Tensor expected = linear(Tensor({c, d}, merged), p.output);
  CHECK(max_abs_diff(multi_head_attention(h, p, heads).data(), expected.data()) < 1e-12);
}

TEST_CASE("multi_head_attention is token-order equivariant") {
  std::mt19937_64 rng(11);
  const AttentionParams p = make_attention(8, rng);
  const Tensor h = randn({5, 8}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  std::vector<std::size_t> inverse(5);
  for (std::size_t i = 0; i < 5; ++i) inverse[perm[i]] = i;
  const Tensor out = multi_head_attention(h, p, 2);
  const Tensor back = index_select(multi_head_attention(index_select(h, 0, perm), p, 2), 0, inverse);
  CHECK(max_abs_diff(out.data(), back.data()) < 1e-13);
}

TEST_CASE("upsample_repeat examples") {
  check_values(upsample_repeat(Tensor({2, 1}, {1, 2}), 4), {1, 1, 2, 2});
  check_values(upsample_repeat(Tensor({1, 1}, {7}), 3), {7, 7, 7});
  check_values(upsample_repeat(Tensor({3, 1}, {1, 2, 3}), 3), {1, 2, 3});
  check_values(upsample_repeat(Tensor({2, 1}, {1, 2}), 5), {1, 1, 1, 2, 2});
  CHECK_THROWS_AS(upsample_repeat(Tensor({3, 1}, {1, 2, 3}), 2), UsageError);
}

TEST_CASE("linear agrees with matrix-vector arithmetic") {
  LinearParams p;
  p.weight = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  p.bias = Tensor::vec({0.5, 0, -1});
  check_values(linear(Tensor::vec({1, 1}), p), {5.5, 7, 8});
  check_values(linear(Tensor({2, 2}, {1, 0, 0, 1}), p), {1.5, 2, 2, 4.5, 5, 5});
}

TEST_CASE("every kernel passes grad_check on 20 random configurations") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> small(1, 4);
  double worst_conv = 0, worst_gru = 0, worst_ln = 0, worst_soft = 0, worst_mha = 0, worst_up = 0, worst_lin = 0;
  for (int trial = 0; trial < 20; ++trial) {
    {
      const std::size_t k = small(rng), in = small(rng), out = small(rng), len = k * small(rng) + trial % 2;
      Tensor x = randn({2, len, in}, rng, 1.0, true);
      const Conv1dParams p = make_conv1d(in, out, k, rng);
      const Tensor w = randn({2, len / k, out}, rng);
      worst_conv = std::max(
          worst_conv,
          grad_check([&] { return sum_all(mul(conv1d(x, p), w)); }, {x, p.weight, p.bias}).max_rel_error);
    }
    {
      const std::size_t in = small(rng), hid = small(rng), len = small(rng) + 1;
      Tensor x = randn({2, len, in}, rng, 1.0, true);
      Tensor h0 = randn({hid}, rng, 0.5, true);
      const GRUParams p = make_gru(in, hid, rng);
      const Tensor w = randn({2, len, hid}, rng);
      auto wrt = gru_tensors(p);
      wrt.push_back(x);
      wrt.push_back(h0);
      worst_gru = std::max(
          worst_gru, grad_check([&] { return sum_all(mul(gru_forward(x, p, h0).all_hidden, w)); }, wrt).max_rel_error);
    }
    {
      const std::size_t dim = small(rng) + 1;
      Tensor x = randn({3, dim}, rng, 1.0, true);
      Tensor g = randn({dim}, rng, 1.0, true), b = randn({dim}, rng, 1.0, true);
      const Tensor w = randn({3, dim}, rng);
      worst_ln = std::max(
          worst_ln, grad_check([&] { return sum_all(mul(layer_norm(x, g, b, 1e-5), w)); }, {x, g, b}).max_rel_error);
    }
    {
      const std::size_t n = small(rng) + 1;
      const double t = std::uniform_real_distribution<>(0.2, 3.0)(rng);
      Tensor a = randn({n}, rng, 1.0, true);
      const Tensor w = randn({n}, rng);
      worst_soft = std::max(worst_soft,
                            grad_check([&] { return sum_all(mul(softmax_temp(a, t), w)); }, {a}).max_rel_error);
    }
    {
      const std::size_t heads = small(rng) % 2 + 1, d = 2 * heads, c = small(rng);
      Tensor h = randn({c, d}, rng, 1.0, true);
      const AttentionParams p = make_attention(d, rng);
      const Tensor w = randn({c, d}, rng);
      auto wrt = attention_tensors(p);
      wrt.push_back(h);
      worst_mha = std::max(
          worst_mha, grad_check([&] { return sum_all(mul(multi_head_attention(h, p, heads), w)); }, wrt).max_rel_error);
    }
    {
      const std::size_t len = small(rng), target = len + small(rng) - 1, ch = small(rng);
      Tensor x = randn({len, ch}, rng, 1.0, true);
      const Tensor w = randn({target, ch}, rng);
      worst_up = std::max(worst_up,
                          grad_check([&] { return sum_all(mul(upsample_repeat(x, target), w)); }, {x}).max_rel_error);
    }
    {
      const std::size_t in = small(rng), out = small(rng);
      Tensor x = randn({3, in}, rng, 1.0, true);
      const LinearParams p = make_linear(in, out, rng);
      const Tensor w = randn({3, out}, rng);
      worst_lin = std::max(
          worst_lin, grad_check([&] { return sum_all(mul(linear(x, p), w)); }, {x, p.weight, p.bias}).max_rel_error);
    }
  }
  CHECK(worst_conv < 1e-4);
  CHECK(worst_gru < 1e-4);
  CHECK(worst_ln < 1e-4);
  CHECK(worst_soft < 1e-4);
  CHECK(worst_mha < 1e-4);
  CHECK(worst_up < 1e-4);
  CHECK(worst_lin < 1e-4);
}
