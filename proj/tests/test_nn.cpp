#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "nn/checkpoint.hpp"
#include "nn/error.hpp"
#include "nn/losses.hpp"
#include "nn/network.hpp"
#include "nn/optimizer.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace iopfl;
using namespace iopfl::nn;
using iopfl::testing::all_kinds_net;
using iopfl::testing::central_differences;
using iopfl::testing::conv_layer;
using iopfl::testing::gradient_errors;
using iopfl::testing::max_abs_diff;
using iopfl::testing::max_rel_error;
using iopfl::testing::plain;
using iopfl::testing::random_tensor;
using iopfl::testing::weighted_sum;

namespace {

// ---------------------------------------------------------------------------
// Naive reference interpreter: direct nested loops with explicit bounds tests.

Tensor naive_conv(const Tensor& x, const Tensor& k, const Tensor& b) {
  const long N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const long O = k.n(), K = k.h(), P = K / 2;
  Tensor y({x.n(), k.n(), x.h(), x.w()});
  for (long n = 0; n < N; ++n)
    for (long o = 0; o < O; ++o)
      for (long i = 0; i < H; ++i)
        for (long j = 0; j < W; ++j) {
          double s = b[o];
          for (long c = 0; c < C; ++c)
            for (long u = 0; u < K; ++u)
              for (long v = 0; v < K; ++v) {
                const long yi = i + u - P, xj = j + v - P;
                if (yi < 0 || yi >= H || xj < 0 || xj >= W) continue;
                s += k.at(o, c, u, v) * x.at(n, c, yi, xj);
              }
          y.at(n, o, i, j) = s;
        }
  return y;
}

Tensor naive_forward(const ModelWeights& m, const Tensor& x, bool batch_stats) {
  std::vector<Tensor> outs;
  auto get = [&](int i) -> const Tensor& { return i < 0 ? x : outs[i]; };
  for (const auto& l : m.layers()) {
    Tensor in = get(l.inputs[0]);
    for (std::size_t q = 1; q < l.inputs.size(); ++q) {
      const Tensor& o = get(l.inputs[q]);
      Tensor cat({in.n(), in.c() + o.c(), in.h(), in.w()});
      for (std::size_t n = 0; n < in.n(); ++n)
        for (std::size_t c = 0; c < cat.c(); ++c)
          for (std::size_t i = 0; i < in.h(); ++i)
            for (std::size_t j = 0; j < in.w(); ++j)
              cat.at(n, c, i, j) = c < in.c() ? in.at(n, c, i, j) : o.at(n, c - in.c(), i, j);
      in = cat;
    }
    Tensor out;
    switch (l.spec.kind) {
      case LayerKind::kConv3x3:
      case LayerKind::kConv1x1:
        out = naive_conv(in, l.params[0], l.params[1]);
        break;
      case LayerKind::kBatchNorm: {
        out = Tensor(in.shape());
        for (std::size_t c = 0; c < in.c(); ++c) {
          double mean = l.params[2][c], var = std::max(l.params[3][c], 1e-5);
          if (batch_stats) {
            double s = 0, cnt = 0;
            for (std::size_t n = 0; n < in.n(); ++n)
              for (std::size_t i = 0; i < in.h(); ++i)
                for (std::size_t j = 0; j < in.w(); ++j) s += in.at(n, c, i, j), cnt += 1;
            mean = s / cnt;
            double v = 0;
            for (std::size_t n = 0; n < in.n(); ++n)
              for (std::size_t i = 0; i < in.h(); ++i)
                for (std::size_t j = 0; j < in.w(); ++j)
                  v += (in.at(n, c, i, j) - mean) * (in.at(n, c, i, j) - mean);
            var = v / cnt;
          }
          for (std::size_t n = 0; n < in.n(); ++n)
            for (std::size_t i = 0; i < in.h(); ++i)
              for (std::size_t j = 0; j < in.w(); ++j)
                out.at(n, c, i, j) = l.params[0][c] * (in.at(n, c, i, j) - mean) /
                                         std::sqrt(var + 1e-5) +
                                     l.params[1][c];
        }
        break;
      }
      case LayerKind::kReLU:
        out = in;
        for (auto& v : out.raw()) v = std::max(v, 0.0);
        break;
      case LayerKind::kMaxPool2:
        out = Tensor({in.n(), in.c(), in.h() / 2, in.w() / 2});
        for (std::size_t n = 0; n < in.n(); ++n)
          for (std::size_t c = 0; c < in.c(); ++c)
            for (std::size_t i = 0; i < out.h(); ++i)
              for (std::size_t j = 0; j < out.w(); ++j)
                out.at(n, c, i, j) = std::max({in.at(n, c, 2 * i, 2 * j),
                                               in.at(n, c, 2 * i + 1, 2 * j),
                                               in.at(n, c, 2 * i, 2 * j + 1),
                                               in.at(n, c, 2 * i + 1, 2 * j + 1)});
        break;
      case LayerKind::kUpsample2:
        out = Tensor({in.n(), in.c(), in.h() * 2, in.w() * 2});
        for (std::size_t n = 0; n < in.n(); ++n)
          for (std::size_t c = 0; c < in.c(); ++c)
            for (std::size_t i = 0; i < out.h(); ++i)
              for (std::size_t j = 0; j < out.w(); ++j)
                out.at(n, c, i, j) = in.at(n, c, i / 2, j / 2);
        break;
      case LayerKind::kSoftmax:
        out = Tensor(in.shape());
        for (std::size_t n = 0; n < in.n(); ++n)
          for (std::size_t i = 0; i < in.h(); ++i)
            for (std::size_t j = 0; j < in.w(); ++j) {
              double z = 0;
              for (std::size_t c = 0; c < in.c(); ++c) z += std::exp(in.at(n, c, i, j));
              for (std::size_t c = 0; c < in.c(); ++c)
                out.at(n, c, i, j) = std::exp(in.at(n, c, i, j)) / z;
            }
        break;
    }
    outs.push_back(out);
  }
  return outs.back();
}

void check_gradients(ModelWeights& model, const Tensor& x, Mode mode, double tol) {
  for (const auto& e : gradient_errors(model, x, mode)) {
    INFO(e.where);
    CHECK(e.error < tol);
  }
}

}  // namespace

TEST_CASE("zero network produces zero logits") {
  std::vector<Layer> L;
  L.push_back(conv_layer("a", {kNetworkInput}, 1, 4, 3, 1));
  L.push_back(plain("r", LayerKind::kReLU, 0, 4));
  L.push_back(conv_layer("b", {1}, 4, 2, 1, 2));
  for (auto& l : L)
    for (auto& p : l.params) p.fill(0.0);
  ModelWeights m("zero", 1, std::move(L));
  const Tensor y = infer(m, random_tensor({2, 1, 8, 8}, 3));
  CHECK(y.shape() == Shape4{2, 2, 8, 8});
  for (double v : y.raw()) CHECK(v == 0.0);
}

TEST_CASE("centered delta kernel is the identity") {
  Layer l = conv_layer("delta", {kNetworkInput}, 1, 1, 3, 1);
  l.params[0].fill(0.0);
  l.params[0].at(0, 0, 1, 1) = 1.0;
  l.params[1].fill(0.0);
  std::vector<Layer> L{l};
  ModelWeights m("delta", 1, std::move(L));
  const Tensor x = random_tensor({1, 1, 6, 6}, 9);
  CHECK(infer(m, x) == x);
}

TEST_CASE("forward matches the naive nested-loop interpreter") {
  ModelWeights unet = build_tiny_unet(1, 3, 4, 77);
  // Non-trivial BN statistics and affine.
  for (std::size_t i = 0; i < unet.size(); ++i) {
    if (unet.layer(i).spec.kind != LayerKind::kBatchNorm) continue;
    const auto c = unet.layer(i).spec.in_channels;
    unet.mutable_param(i, kGamma) = random_tensor({1, c, 1, 1}, 100 + i, 0.3);
    unet.mutable_param(i, kBeta) = random_tensor({1, c, 1, 1}, 200 + i, 0.3);
    unet.mutable_param(i, kRunningMean) = random_tensor({1, c, 1, 1}, 300 + i, 0.3);
  }
  const Tensor x = random_tensor({2, 1, 8, 8}, 5);
  for (bool batch : {false, true}) {
    const Tensor fast = infer(unet, x, batch ? Mode::kBatchStats : Mode::kEval);
    const Tensor ref = naive_forward(unet, x, batch);
    CHECK(max_abs_diff(fast.raw(), ref.raw()) < 1e-10);
  }
  ModelWeights kinds = all_kinds_net(11);
  const Tensor x2 = random_tensor({2, 2, 4, 4}, 6);
  CHECK(max_abs_diff(infer(kinds, x2).raw(), naive_forward(kinds, x2, false).raw()) < 1e-10);
}

TEST_CASE("analytic gradients match central finite differences for every layer kind") {
  ModelWeights kinds = all_kinds_net(21);
  const Tensor x = random_tensor({2, 2, 4, 4}, 22);
  SUBCASE("batch statistics") { check_gradients(kinds, x, Mode::kBatchStats, 1e-4); }
  SUBCASE("eval statistics") { check_gradients(kinds, x, Mode::kEval, 1e-4); }
  SUBCASE("tiny unet") {
    ModelWeights unet = build_tiny_unet(1, 2, 4, 23);
    check_gradients(unet, random_tensor({2, 1, 4, 4}, 24), Mode::kBatchStats, 1e-4);
  }
}

TEST_CASE("backward is linear in the loss gradient") {
  ModelWeights unet = build_tiny_unet(1, 2, 4, 31);
  const Tensor x = random_tensor({2, 1, 8, 8}, 32);
  const Tape tape = forward(unet, x, Mode::kTrain);
  const Tensor g = random_tensor(tape.logits().shape(), 33);
  Tensor g2 = g;
  g2.scale(2.0);
  const GradientSet a = backward(tape, g);
  const GradientSet b = backward(tape, g2);
  for (std::size_t i = 0; i < a.layers().size(); ++i)
    for (std::size_t s = 0; s < a.layers()[i].size(); ++s)
      for (std::size_t j = 0; j < a.at(i, s).size(); ++j)
        CHECK(std::abs(b.at(i, s)[j] - 2.0 * a.at(i, s)[j]) <= 1e-12 * (1 + std::abs(b.at(i, s)[j])));

  const GradientSet z = backward(tape, Tensor(tape.logits().shape()));
  CHECK(z.is_zero());
}

TEST_CASE("stale tape and shape errors") {
  ModelWeights unet = build_tiny_unet(1, 2, 4, 41);
  const Tape tape = forward(unet, random_tensor({1, 1, 8, 8}, 1), Mode::kTrain);
  unet.mutable_param(0, kKernel)[0] += 1.0;
  CHECK_THROWS_AS(backward(tape, Tensor(tape.logits().shape())), Error);

  try {
    infer(unet, random_tensor({1, 2, 8, 8}, 2));
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kShape);
    CHECK(std::string(e.what()).find("enc1.conv1") != std::string::npos);
  }
  CHECK_THROWS_AS(infer(unet, random_tensor({1, 1, 6, 6}, 2)), Error);
  CHECK_THROWS_AS(forward(std::as_const(unet), random_tensor({1, 1, 8, 8}, 2), Mode::kTrain),
                  Error);
}

TEST_CASE("train mode updates BN running statistics; eval mode reads them") {
  ModelWeights unet = build_tiny_unet(1, 2, 4, 51);
  const ModelWeights before = unet;
  const Tensor x = random_tensor({2, 1, 8, 8}, 52, 3.0);
  const Tensor eval_before = infer(unet, x);
  forward(unet, x, Mode::kTrain);
  CHECK(unet.layer(1).params[kRunningMean] != before.layer(1).params[kRunningMean]);
  CHECK(unet.layer(0).params[kKernel] == before.layer(0).params[kKernel]);
  CHECK(infer(unet, x) != eval_before);
  // Batch-stat mode never writes back.
  const ModelWeights snapshot = unet;
  forward(std::as_const(unet), x, Mode::kBatchStats);
  CHECK(unet == snapshot);
}

TEST_CASE("convolution is linear in its kernel") {
  const Tensor x = random_tensor({2, 3, 8, 8}, 61);
  const Tensor w1 = random_tensor({4, 3, 3, 3}, 62), w2 = random_tensor({4, 3, 3, 3}, 63);
  const Tensor zero_bias({1, 4, 1, 1});
  const double a = 0.7, b = -1.3;
  Tensor mix = w1;
  mix.scale(a);
  mix.axpy(b, w2);
  auto conv = [&](const Tensor& k) {
    Layer l{"c", {LayerKind::kConv3x3, 3, 4}, {kNetworkInput}, {k, zero_bias}};
    return infer(ModelWeights("lin", 3, {l}), x);
  };
  Tensor expected = conv(w1);
  expected.scale(a);
  expected.axpy(b, conv(w2));
  CHECK(max_abs_diff(conv(mix).raw(), expected.raw()) < 1e-10);
}

TEST_CASE("eval forward is pure and softmax is a distribution") {
  const ModelWeights unet = build_tiny_unet(1, 3, 8, 71);
  const Tensor x = random_tensor({2, 1, 16, 16}, 72);
  const Tensor a = infer(unet, x), b = infer(unet, x);
  CHECK(a == b);
  const Tensor p = softmax(a);
  for (std::size_t n = 0; n < p.n(); ++n)
    for (std::size_t q = 0; q < p.plane(); ++q) {
      double s = 0;
      for (std::size_t c = 0; c < p.c(); ++c) {
        const double v = p.plane_ptr(n, c)[q];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("tiny unet construction") {
  const ModelWeights a = build_tiny_unet(1, 2, 8, 1234);
  const ModelWeights b = build_tiny_unet(1, 2, 8, 1234);
  CHECK(a == b);
  CHECK(a.architecture_id() == b.architecture_id());
  CHECK(a.architecture_id() == build_tiny_unet(1, 2, 8, 99).architecture_id());
  CHECK(a.architecture_id() != build_tiny_unet(1, 3, 8, 1234).architecture_id());
  CHECK_FALSE(a == build_tiny_unet(1, 2, 8, 1235));

  // Closed form: conv3x3(i,o) = 9io+o, BN(c) = 2c, conv1x1(i,o) = io+o.
  auto c3 = [](std::size_t i, std::size_t o) { return 9 * i * o + o; };
  auto blk = [&](std::size_t i, std::size_t o) { return c3(i, o) + 2 * o + c3(o, o) + 2 * o; };
  const std::size_t w = 8, in = 1, cls = 2;
  const std::size_t expected = blk(in, w) + blk(w, 2 * w) + blk(2 * w, 4 * w) +
                               c3(4 * w, 2 * w) + blk(4 * w, 2 * w) + c3(2 * w, w) +
                               blk(2 * w, w) + (w * cls + cls);
  CHECK(expected == 32850);
  CHECK(a.parameter_count() == expected);
  CHECK(a.conv_layers().size() == 13);

  const Tensor y = infer(a, Tensor({1, 1, 32, 32}));
  CHECK(y.shape() == Shape4{1, 2, 32, 32});
  CHECK(y.all_finite());
  CHECK_THROWS_AS(build_tiny_unet(1, 2, 3, 1), Error);
}

TEST_CASE("optimizer updates") {
  Layer l{"p", {LayerKind::kConv1x1, 1, 1}, {kNetworkInput},
          {Tensor({1, 1, 1, 1}, 1.0), Tensor({1, 1, 1, 1}, 0.0)}};
  ModelWeights m("scalar", 1, {l});
  GradientSet g = GradientSet::zeros_like(m);

  SUBCASE("zero gradients leave the model bitwise unchanged") {
    for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
      ModelWeights copy = m;
      OptimizerState opt(copy, {kind, 0.1});
      apply_update(copy, g, opt);
      CHECK(copy == m);
    }
  }
  SUBCASE("sgd arithmetic") {
    g.at(0, kKernel)[0] = 2.0;
    OptimizerState opt(m, {OptimizerKind::kSgd, 0.5});
    apply_update(m, g, opt);
    CHECK(m.layer(0).params[kKernel][0] == 0.0);
  }
  SUBCASE("adam first step") {
    m.mutable_param(0, kKernel)[0] = 0.0;
    g.at(0, kKernel)[0] = 1.0;
    OptimizerState opt(m, {OptimizerKind::kAdam, 1e-3, 0.9, 0.999, 1e-8});
    apply_update(m, g, opt);
    // m_hat = v_hat = 1 -> step = lr / (1 + eps)
    CHECK(m.layer(0).params[kKernel][0] == doctest::Approx(-1e-3).epsilon(1e-7));
    CHECK(opt.steps() == 1);
  }
  SUBCASE("non-finite gradients are rejected before writing") {
    g.at(0, kKernel)[0] = std::nan("");
    OptimizerState opt(m, {OptimizerKind::kSgd, 0.5});
    const ModelWeights before = m;
    try {
      apply_update(m, g, opt);
      FAIL("expected numeric error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kNumeric);
    }
    CHECK(m == before);
  }
}

TEST_CASE("supervised loss gradient matches finite differences") {
  const Tensor logits = random_tensor({2, 3, 4, 4}, 81);
  LabelBatch labels{2, 4, 4, {}};
  Rng rng(82);
  for (std::size_t i = 0; i < 32; ++i) labels.data.push_back(static_cast<int>(rng.below(3)));
  const SupervisedLoss l = segmentation_loss(logits, labels);
  CHECK(l.value == doctest::Approx(l.cross_entropy + l.dice_loss));
  Tensor z = logits;
  const auto numeric =
      central_differences(z.raw(), [&] { return segmentation_loss(z, labels).value; });
  CHECK(max_rel_error(l.grad_logits.raw(), numeric) < 1e-5);
}

TEST_CASE("checkpoint round trip is bitwise lossless") {
  const auto dir = std::filesystem::temp_directory_path() / "iopfl_test_ckpt";
  std::filesystem::remove_all(dir);
  ModelWeights m = build_tiny_unet(1, 3, 8, 91);
  forward(m, random_tensor({2, 1, 8, 8}, 92), Mode::kTrain);  // non-trivial running stats
  save_checkpoint(m, dir / "model");
  const ModelWeights back = load_checkpoint(dir / "model");
  CHECK(back == m);
  CHECK(checksum(back) == checksum(m));
  CHECK(std::filesystem::file_size(dir / "model.bin") == m.stored_value_count() * 8);

  // Truncation is detected.
  std::filesystem::resize_file(dir / "model.bin", 100);
  CHECK_THROWS_AS(load_checkpoint(dir / "model"), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), Error);
  std::filesystem::remove_all(dir);
}
