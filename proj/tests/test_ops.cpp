#include <doctest.h>

#include <cmath>
#include <limits>

#include "rfnet/error.hpp"
#include "rfnet/ops.hpp"
#include "test_support.hpp"

using namespace rfnet;
using namespace rfnet::testing;

namespace {

Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int cin = static_cast<int>(x.dim(0)), h = static_cast<int>(x.dim(1)), wd = static_cast<int>(x.dim(2));
  const int cout = static_cast<int>(w.dim(0)), k = static_cast<int>(w.dim(2));
  const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor out(Shape{static_cast<std::size_t>(cout), static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
  for (int o = 0; o < cout; ++o)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) {
        double s = b.defined() ? b[o] : 0.0;
        for (int c = 0; c < cin; ++c)
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
              const int iy = y * stride + i - pad, ix = xx * stride + j - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              s += x[(c * h + iy) * wd + ix] * w[((o * cin + c) * k + i) * k + j];
            }
        out.data()[(o * ho + y) * wo + xx] = s;
      }
  return out;
}

double ce_pixel(const std::vector<double>& logits, int label) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  return -(logits[label] - m - std::log(z));
}

}  // namespace

TEST_SUITE("conv2d") {
  TEST_CASE("identity and sum kernels") {
    Tensor x(Shape{1, 1, 1}, 2.0);
    Tensor w(Shape{1, 1, 1, 1}, 1.0);
    CHECK(conv2d(x, w, Tensor(), 1, 0).item() == 2.0);
    Tensor ones(Shape{1, 3, 3}, 1.0);
    Tensor k3(Shape{1, 1, 3, 3}, 1.0);
    CHECK(conv2d(ones, k3, Tensor(), 1, 0).item() == 9.0);
  }

  TEST_CASE("matches nested-loop reference with stride and padding") {
    Rng rng(1);
    Tensor x = random_tensor({2, 4, 4}, rng, -1, 1, false);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, -1, 1, false);
    Tensor out = conv2d(x, w, Tensor(), 2, 1);
    Tensor ref = conv_oracle(x, w, Tensor(), 2, 1);
    REQUIRE(out.dims() == ref.dims());
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    Tensor b = random_tensor({3}, rng, -1, 1, false);
    Tensor ob = conv2d(x, w, b, 1, 0);
    Tensor rb = conv_oracle(x, w, b, 1, 0);
    for (std::size_t i = 0; i < ob.numel(); ++i) CHECK(std::abs(ob[i] - rb[i]) < 1e-12);
  }

  TEST_CASE("batched form equals per-sample evaluation") {
    Rng rng(2);
    Tensor x = random_tensor({2, 3, 5, 5}, rng, -1, 1, false);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, -1, 1, false);
    Tensor out = conv2d(x, w, Tensor(), 1, 1);
    for (std::size_t n = 0; n < 2; ++n) {
      Tensor ref = conv_oracle(select_batch(x, n), w, Tensor(), 1, 1);
      Tensor got = select_batch(out, n);
      for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(std::abs(got[i] - ref[i]) < 1e-12);
    }
  }

  TEST_CASE("gradients match finite differences") {
    Rng rng(3);
    for (auto [k, stride, pad] : {std::tuple{3, 2, 1}, std::tuple{1, 1, 0}, std::tuple{3, 1, 0}, std::tuple{7, 2, 3}}) {
      Tensor x = random_tensor({2, 2, 7, 7}, rng);
      Tensor w = random_tensor({3, 2, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, rng);
      Tensor b = random_tensor({3}, rng);
      auto f = [&](const std::vector<Tensor>& in) { return project(conv2d(in[0], in[1], in[2], stride, pad)); };
      CHECK(max_grad_error(f, {x, w, b}, rng) <= 1e-5);
    }
  }

  TEST_CASE("shape errors") {
    Tensor x(Shape{2, 4, 4});
    CHECK_THROWS_AS(conv2d(x, Tensor(Shape{1, 3, 3, 3}), Tensor(), 1, 0), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor(Shape{1, 2, 5, 5}), Tensor(), 1, 0), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor(Shape{1, 2, 3, 3}), Tensor(Shape{2}), 1, 0), ShapeError);
  }
}

TEST_SUITE("batch_norm") {
  TEST_CASE("constant channel collapses to zero and gamma=0 yields beta") {
    Tensor x(Shape{2, 1, 2, 2}, 3.5);
    BatchNormState st(1);
    Tensor out = batch_norm(x, Tensor(Shape{1}, 1.0), Tensor(Shape{1}, 0.0), st, Mode::kTrain);
    for (double v : out.data()) CHECK(v == 0.0);

    Rng rng(4);
    Tensor r = random_tensor({2, 3, 2, 2}, rng, -1, 1, false);
    BatchNormState st3(3);
    Tensor o5 = batch_norm(r, Tensor(Shape{3}, 0.0), Tensor(Shape{3}, 5.0), st3, Mode::kTrain);
    for (double v : o5.data()) CHECK(v == 5.0);
  }

  TEST_CASE("matches direct statistics and updates running stats") {
    Rng rng(5);
    Tensor x = random_tensor({2, 3, 2, 2}, rng, -2, 2, false);
    Tensor g = random_tensor({3}, rng, 0.5, 1.5, false);
    Tensor b = random_tensor({3}, rng, -1, 1, false);
    BatchNormState st(3);
    Tensor out = batch_norm(x, g, b, st, Mode::kTrain);
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 4; ++i) mean += x[(n * 3 + c) * 4 + i];
      mean /= 8;
      double var = 0.0;
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 4; ++i) var += std::pow(x[(n * 3 + c) * 4 + i] - mean, 2);
      const double unbiased = var / 7;
      var /= 8;
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 4; ++i) {
          const std::size_t j = (n * 3 + c) * 4 + i;
          CHECK(std::abs(out[j] - (g[c] * (x[j] - mean) / std::sqrt(var + 1e-5) + b[c])) < 1e-12);
        }
      CHECK(std::abs(st.running_mean[c] - 0.1 * mean) < 1e-15);
      CHECK(std::abs(st.running_var[c] - (0.9 + 0.1 * unbiased)) < 1e-15);
    }
    Tensor ev = batch_norm(x, g, b, st, Mode::kEval);
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t j = c * 4;
      const double ref = g[c] * (x[j] - st.running_mean[c]) / std::sqrt(st.running_var[c] + 1e-5) + b[c];
      CHECK(std::abs(ev[j] - ref) < 1e-12);
    }
  }

  TEST_CASE("gradients in train and eval mode") {
    Rng rng(6);
    Tensor x = random_tensor({3, 2, 3, 3}, rng, -2, 2);
    Tensor g = random_tensor({2}, rng, 0.5, 1.5);
    Tensor b = random_tensor({2}, rng);
    BatchNormState st(2);
    auto train = [&](const std::vector<Tensor>& in) { return project(batch_norm(in[0], in[1], in[2], st, Mode::kTrain)); };
    CHECK(max_grad_error(train, {x, g, b}, rng) <= 1e-5);
    auto eval = [&](const std::vector<Tensor>& in) { return project(batch_norm(in[0], in[1], in[2], st, Mode::kEval)); };
    CHECK(max_grad_error(eval, {x, g, b}, rng) <= 1e-5);
  }

  TEST_CASE("two-sample batch of 1x1 planes") {
    Rng rng(7);
    Tensor x = random_tensor({2, 3, 1, 1}, rng, -2, 2);
    Tensor g = random_tensor({3}, rng, 0.5, 1.5);
    Tensor b = random_tensor({3}, rng);
    BatchNormState st(3);
    auto f = [&](const std::vector<Tensor>& in) { return project(batch_norm(in[0], in[1], in[2], st, Mode::kTrain)); };
    CHECK(max_grad_error(f, {x, g, b}, rng) <= 1e-5);
  }

  TEST_CASE("single value per channel in train mode is rejected") {
    BatchNormState st(2);
    CHECK_THROWS(batch_norm(Tensor(Shape{1, 2, 1, 1}), Tensor(Shape{2}, 1.0), Tensor(Shape{2}), st, Mode::kTrain));
    CHECK_THROWS_AS(batch_norm(Tensor(Shape{1, 2, 2, 2}), Tensor(Shape{3}, 1.0), Tensor(Shape{3}), st, Mode::kTrain),
                    ShapeError);
  }
}

TEST_SUITE("pointwise") {
  TEST_CASE("definitions") {
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    CHECK(relu(Tensor::scalar(-3.0)).item() == 0.0);
    CHECK(relu(Tensor::scalar(3.0)).item() == 3.0);
    Rng rng(8);
    Tensor a = random_tensor({2, 3, 4}, rng, -1, 1, false);
    Tensor b = random_tensor({2, 3, 4}, rng, -1, 1, false);
    Tensor s = add(a, b);
    Tensor p = mul(a, b);
    for (std::size_t i = 0; i < a.numel(); ++i) {
      CHECK(s[i] == a[i] + b[i]);
      CHECK(p[i] == a[i] * b[i]);
    }
    CHECK(scale(a, 3.0)[5] == a[5] * 3.0);
    CHECK_THROWS_AS(add(a, Tensor(Shape{2, 3, 5})), ShapeError);
    CHECK_THROWS_AS(mul(a, Tensor(Shape{24})), ShapeError);
  }

  TEST_CASE("gradients") {
    Rng rng(9);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    for (double& v : a.data()) v += v >= 0 ? 0.05 : -0.05;  // keep away from the relu kink
    CHECK(max_grad_error([](const auto& in) { return project(relu(in[0])); }, {a}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return project(sigmoid(in[0])); }, {a}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return project(add(in[0], in[1])); }, {a, b}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return project(mul(in[0], in[1])); }, {a, b}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return project(scale(in[0], -2.5)); }, {a}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return sum(in[0]); }, {a}, rng) <= 1e-5);
  }
}

TEST_SUITE("channel_scale") {
  TEST_CASE("identity, annihilation and loop oracle") {
    Rng rng(10);
    Tensor f = random_tensor({3, 2, 2}, rng, -1, 1, false);
    Tensor same = channel_scale(f, Tensor(Shape{3}, 1.0));
    CHECK(values(same) == values(f));
    Tensor zero = channel_scale(f, Tensor(Shape{3}, 0.0));
    for (double v : zero.data()) CHECK(v == 0.0);
    Tensor w(Shape{3}, std::vector<double>{0.2, 0.5, 1.0});
    Tensor out = channel_scale(f, w);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 4; ++i) CHECK(out[c * 4 + i] == f[c * 4 + i] * w[c]);
    CHECK_THROWS_AS(channel_scale(f, Tensor(Shape{2})), ShapeError);
  }

  TEST_CASE("gradients for single and batched forms") {
    Rng rng(11);
    Tensor f = random_tensor({3, 2, 2}, rng);
    Tensor w = random_tensor({3}, rng);
    CHECK(max_grad_error([](const auto& in) { return project(channel_scale(in[0], in[1])); }, {f, w}, rng) <= 1e-5);
    Tensor fb = random_tensor({2, 3, 2, 2}, rng);
    Tensor wb = random_tensor({2, 3}, rng);
    CHECK(max_grad_error([](const auto& in) { return project(channel_scale(in[0], in[1])); }, {fb, wb}, rng) <= 1e-5);
  }
}

TEST_SUITE("pooling") {
  TEST_CASE("definitions") {
    Tensor c(Shape{2, 3, 3}, 4.25);
    Tensor pooled = global_avg_pool(c);
    for (double v : pooled.data()) CHECK(v == 4.25);
    Tensor m(Shape{1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    CHECK(max_pool2d(m, 2, 2).item() == 4.0);
    CHECK_THROWS_AS(max_pool2d(m, 3, 1), ShapeError);
    CHECK_THROWS_AS(avg_pool2d(m, 3, 1), ShapeError);
  }

  TEST_CASE("avg pool matches loop oracle") {
    Rng rng(12);
    Tensor x = random_tensor({2, 4, 4}, rng, -1, 1, false);
    Tensor out = avg_pool2d(x, 2, 2);
    REQUIRE(out.dims() == Shape{2, 2, 2});
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t xx = 0; xx < 2; ++xx) {
          double s = 0;
          for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) s += x[(c * 4 + 2 * y + i) * 4 + 2 * xx + j];
          CHECK(std::abs(out[(c * 2 + y) * 2 + xx] - s / 4) < 1e-15);
        }
  }

  TEST_CASE("max pool routes ties to the first index") {
    Tensor x(Shape{1, 2, 2}, 1.0, true);
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(sum(max_pool2d(x, 2, 2)));
    CHECK(values(Tensor(Shape{4}, std::vector<double>(x.grad().begin(), x.grad().end()))) ==
          std::vector<double>{1, 0, 0, 0});
  }

  TEST_CASE("padded max pool ignores padding") {
    Tensor x(Shape{1, 2, 2}, std::vector<double>{-4, -3, -2, -1});
    Tensor out = max_pool2d(x, 3, 2, 1);
    REQUIRE(out.dims() == Shape{1, 1, 1});
    CHECK(out.item() == -1.0);
  }

  TEST_CASE("adaptive pool partitions the plane") {
    Rng rng(13);
    Tensor x = random_tensor({1, 5, 5}, rng, -1, 1, false);
    Tensor out = adaptive_avg_pool2d(x, 2, 2);
    // rows/cols: bin 0 = [0,3), bin 1 = [2,5)
    double s = 0;
    for (int y = 2; y < 5; ++y)
      for (int xx = 0; xx < 3; ++xx) s += x[y * 5 + xx];
    CHECK(std::abs(out[2] - s / 9) < 1e-15);
    Tensor g = adaptive_avg_pool2d(x, 1, 1);
    CHECK(std::abs(g.item() - global_avg_pool(x).item()) < 1e-15);
  }

  TEST_CASE("gradients") {
    Rng rng(14);
    Tensor x = random_tensor({2, 2, 6, 6}, rng);
    CHECK(max_grad_error([](const auto& in) { return project(max_pool2d(in[0], 3, 2, 1)); }, {x}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return project(max_pool2d(in[0], 2, 2)); }, {x}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return project(avg_pool2d(in[0], 2, 2)); }, {x}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return project(global_avg_pool(in[0])); }, {x}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return project(adaptive_avg_pool2d(in[0], 4, 4)); }, {x}, rng) <= 1e-5);
    Tensor s = random_tensor({3, 5, 5}, rng);
    CHECK(max_grad_error([](const auto& in) { return project(adaptive_avg_pool2d(in[0], 2, 3)); }, {s}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return project(global_avg_pool(in[0])); }, {s}, rng) <= 1e-5);
  }
}

TEST_SUITE("bilinear_resize") {
  TEST_CASE("same size is identity and constants stay constant") {
    Rng rng(15);
    Tensor x = random_tensor({2, 3, 5}, rng, -1, 1, false);
    Tensor y = bilinear_resize(x, 3, 5);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(x[i] - y[i]) < 1e-12);
    Tensor c(Shape{1, 3, 3}, 2.5);
    for (auto [h, w] : {std::pair{7, 2}, std::pair{1, 1}, std::pair{12, 12}}) {
      Tensor r = bilinear_resize(c, h, w);
      for (double v : r.data()) CHECK(std::abs(v - 2.5) < 1e-12);
    }
  }

  TEST_CASE("2x2 to 4x4 matches hand-computed half-pixel sampling") {
    Tensor x(Shape{1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    Tensor y = bilinear_resize(x, 4, 4);
    // Source coordinate of output i is (i + 0.5) / 2 - 0.5, clamped at 0:
    // 0, 0.25, 0.75, 1.25 -> weights along each axis.
    const std::vector<double> expected{1,   1.25, 1.75, 2,   1.5, 1.75, 2.25, 2.5,
                                       2.5, 2.75, 3.25, 3.5, 3,   3.25, 3.75, 4};
    for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(y[i] - expected[i]) < 1e-12);
  }

  TEST_CASE("gradients") {
    Rng rng(16);
    Tensor x = random_tensor({2, 2, 3, 4}, rng);
    CHECK(max_grad_error([](const auto& in) { return project(bilinear_resize(in[0], 7, 5)); }, {x}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return project(bilinear_resize(in[0], 2, 2)); }, {x}, rng) <= 1e-5);
  }
}

TEST_SUITE("structural ops") {
  TEST_CASE("concat, select, stack and reshape") {
    Rng rng(17);
    Tensor a = random_tensor({2, 1, 2, 2}, rng, -1, 1, false);
    Tensor b = random_tensor({2, 2, 2, 2}, rng, -1, 1, false);
    Tensor c = concat_channels({a, b});
    REQUIRE(c.dims() == Shape{2, 3, 2, 2});
    CHECK(c[4] == b[0]);
    CHECK(c[12] == a[4]);
    Tensor s = stack_batch({select_batch(c, 0), select_batch(c, 1)});
    CHECK(values(s) == values(c));
    CHECK(reshape(c, {6, 4}).dims() == Shape{6, 4});
    CHECK_THROWS_AS(reshape(c, {5, 4}), ShapeError);
    CHECK_THROWS_AS(concat_channels({a, Tensor(Shape{1, 1, 2, 2})}), ShapeError);
  }

  TEST_CASE("gradients") {
    Rng rng(18);
    Tensor a = random_tensor({2, 1, 2, 3}, rng);
    Tensor b = random_tensor({2, 2, 2, 3}, rng);
    CHECK(max_grad_error([](const auto& in) { return project(concat_channels({in[0], in[1]})); }, {a, b}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return project(select_batch(in[1], 1)); }, {a, b}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return project(stack_batch({in[0], in[0]})); }, {a}, rng) <= 1e-5);
    CHECK(max_grad_error([](const auto& in) { return project(reshape(in[0], {12})); }, {a}, rng) <= 1e-5);
  }
}

TEST_SUITE("masked_softmax_cross_entropy") {
  TEST_CASE("uniform logits give ln 2") {
    Tensor logits(Shape{2, 1, 1}, 0.0);
    LabelMap labels(1, 1, 0);
    Tensor w(Shape{1, 1}, 1.0);
    CHECK(std::abs(masked_softmax_cross_entropy(logits, labels, w, 255).item() - std::log(2.0)) < 1e-15);
  }

  TEST_CASE("fully masked map is zero with zero gradient") {
    Rng rng(19);
    Tensor logits = random_tensor({3, 2, 2}, rng);
    LabelMap labels(2, 2, 1);
    Tensor w(Shape{2, 2}, 0.0);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = add(masked_softmax_cross_entropy(logits, labels, w, 255), sum(scale(logits, 0.0)));
    CHECK(loss.item() == 0.0);
    tape.backward(loss);
    for (double g : logits.grad()) CHECK(g == 0.0);
  }

  TEST_CASE("matches per-pixel oracle") {
    Rng rng(20);
    Tensor logits = random_tensor({3, 2, 2}, rng, -3, 3, false);
    LabelMap labels(2, 2);
    Tensor w(Shape{2, 2});
    for (std::size_t i = 0; i < 4; ++i) {
      labels.data[i] = static_cast<int>(rng.uniform_int(0, 2));
      w.data()[i] = rng.uniform(0.1, 2.0);
    }
    double num = 0, den = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      std::vector<double> l{logits[i], logits[4 + i], logits[8 + i]};
      num += w[i] * ce_pixel(l, labels.data[i]);
      den += w[i];
    }
    CHECK(std::abs(masked_softmax_cross_entropy(logits, labels, w, 255).item() - num / den) < 1e-12);
  }

  TEST_CASE("weight normalization: w and 2w give the same value") {
    Rng rng(21);
    Tensor logits = random_tensor({4, 3, 3}, rng, -3, 3, false);
    LabelMap labels(3, 3);
    Tensor w(Shape{3, 3});
    for (std::size_t i = 0; i < 9; ++i) {
      labels.data[i] = static_cast<int>(rng.uniform_int(0, 3));
      w.data()[i] = rng.uniform(0, 1);
    }
    Tensor w2 = scale(w, 2.0);
    CHECK(masked_softmax_cross_entropy(logits, labels, w, 255).item() ==
          masked_softmax_cross_entropy(logits, labels, w2, 255).item());
  }

  TEST_CASE("stable for huge logits") {
    Tensor logits(Shape{2, 1, 1}, std::vector<double>{1000.0, -1000.0});
    LabelMap labels(1, 1, 1);
    CHECK(masked_softmax_cross_entropy(logits, labels, Tensor(Shape{1, 1}, 1.0), 255).item() ==
          doctest::Approx(2000.0));
  }

  TEST_CASE("gradients") {
    Rng rng(22);
    Tensor logits = random_tensor({2, 4, 3, 3}, rng, -2, 2);
    LabelMap labels(3, 3);
    Tensor w(Shape{3, 3});
    for (std::size_t i = 0; i < 9; ++i) {
      labels.data[i] = static_cast<int>(rng.uniform_int(0, 3));
      w.data()[i] = i % 4 == 0 ? 0.0 : rng.uniform(0.2, 1.0);
    }
    auto f = [&](const std::vector<Tensor>& in) {
      return masked_softmax_cross_entropy(select_batch(in[0], 1), labels, w, 255);
    };
    CHECK(max_grad_error(f, {logits}, rng) <= 1e-5);
  }

  TEST_CASE("data errors") {
    Tensor logits(Shape{2, 1, 2});
    Tensor w(Shape{1, 2}, 1.0);
    LabelMap bad(1, 2, 0);
    bad.data[1] = 2;
    CHECK_THROWS_AS(masked_softmax_cross_entropy(logits, bad, w, 255), DataError);
    LabelMap ignored(1, 2, 255);
    CHECK_THROWS_AS(masked_softmax_cross_entropy(logits, ignored, w, 255), DataError);
    Tensor zero_w(Shape{1, 2}, 0.0);
    CHECK(masked_softmax_cross_entropy(logits, bad, zero_w, 255).item() == 0.0);
    Tensor neg(Shape{1, 2}, std::vector<double>{1.0, -1.0});
    CHECK_THROWS_AS(masked_softmax_cross_entropy(logits, LabelMap(1, 2, 0), neg, 255), DataError);
  }
}

TEST_SUITE("backward") {
  TEST_CASE("linear and quadratic functionals") {
    Tensor x(Shape{3}, std::vector<double>{1, 2, 3}, true);
    {
      Tape tape;
      Tape::Scope scope(tape);
      tape.backward(sum(x));
    }
    CHECK(values(Tensor(Shape{3}, std::vector<double>(x.grad().begin(), x.grad().end()))) ==
          std::vector<double>{1, 1, 1});
    x.zero_grad();
    {
      Tape tape;
      Tape::Scope scope(tape);
      tape.backward(sum(mul(x, x)));
    }
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});
  }

  TEST_CASE("fan-out accumulates branch gradients") {
    Rng rng(23);
    Tensor x = random_tensor({4}, rng);
    Tensor a = random_tensor({4}, rng, -1, 1, false);
    Tensor b = random_tensor({4}, rng, -1, 1, false);
    {
      Tape tape;
      Tape::Scope scope(tape);
      tape.backward(add(sum(mul(x, a)), sum(mul(sigmoid(x), b))));
    }
    for (std::size_t i = 0; i < 4; ++i) {
      const double s = 1.0 / (1.0 + std::exp(-x[i]));
      CHECK(std::abs(x.grad()[i] - (a[i] + b[i] * s * (1 - s))) < 1e-15);
    }
  }

  TEST_CASE("composite graph passes finite differences") {
    Rng rng(24);
    Tensor x = random_tensor({1, 2, 6, 6}, rng);
    Tensor w1 = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
    Tensor w2 = random_tensor({3, 3, 1, 1}, rng, -0.5, 0.5);
    Tensor g = random_tensor({3}, rng, 0.5, 1.5);
    Tensor bt = random_tensor({3}, rng);
    BatchNormState st(3);
    auto f = [&](const std::vector<Tensor>& in) {
      Tensor h = batch_norm(conv2d(in[0], in[1], Tensor(), 1, 1), in[3], in[4], st, Mode::kTrain);
      Tensor gate = sigmoid(conv2d(reshape(global_avg_pool(h), {1, 3, 1, 1}), in[2], Tensor(), 1, 0));
      Tensor z = channel_scale(h, reshape(gate, {1, 3}));
      return project(bilinear_resize(add(z, h), 9, 9));
    };
    CHECK(max_grad_error(f, {x, w1, w2, g, bt}, rng, 20) <= 1e-5);
  }

  TEST_CASE("contract errors") {
    Tensor x(Shape{3}, 1.0, true);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor y = scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
    CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), ContractError);
  }

  TEST_CASE("no recording without an active tape") {
    Tensor x(Shape{3}, 1.0, true);
    Tensor y = sum(x);
    CHECK_FALSE(y.requires_grad());
    CHECK_THROWS_AS(backward(y), ContractError);
  }
}

TEST_SUITE("numeric checks") {
  TEST_CASE("non-finite outputs raise when enabled") {
    const bool before = numeric_checks_enabled();
    set_numeric_checks(true);
    Tensor x(Shape{1}, std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(scale(x, 1.0), NumericError);
    set_numeric_checks(false);
    CHECK_NOTHROW(scale(x, 1.0));
    set_numeric_checks(before);
  }
}

TEST_SUITE("determinism") {
  TEST_CASE("identical inputs give bit-identical outputs") {
    Rng rng(25);
    Tensor x = random_tensor({2, 3, 8, 8}, rng, -1, 1, false);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, -1, 1, false);
    auto run = [&] {
      BatchNormState st(4);
      return values(bilinear_resize(
          relu(batch_norm(conv2d(x, w, Tensor(), 2, 1), Tensor(Shape{4}, 1.0), Tensor(Shape{4}), st, Mode::kTrain)), 8, 8));
    };
    CHECK(run() == run());
  }
}
