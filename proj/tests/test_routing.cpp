#include <doctest.h>

#include <cmath>

#include "nn/error.hpp"
#include "nn/kernels.hpp"
#include "nn/losses.hpp"
#include "nn/network.hpp"
#include "routing/adapt.hpp"
#include "routing/losses.hpp"
#include "routing/space.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace iopfl;
using namespace iopfl::routing;
using nn::ModelWeights;
using nn::Tensor;
using testing::random_members;
using testing::random_tensor;
using testing::randomize;
using testing::with_bn_affine;

namespace {

double max_diff(const Tensor& a, const Tensor& b) {
  return testing::max_abs_diff(a.values(), b.values());
}

}  // namespace

TEST_CASE("routing space validation") {
  auto members = random_members(2, 4, 1);
  CHECK_THROWS_AS(RoutingSpace({members[0]}), Error);
  CHECK_THROWS_AS(RoutingSpace({members[0], nn::build_tiny_unet(1, 3, 4, 1)}), Error);
  const RoutingSpace space(members);
  CHECK(space.routable().size() == 13);
  const CoefficientNets nets = CoefficientNets::init(space, 3);
  CHECK_THROWS_AS(routed_forward(space, nets, Tensor({1, 1, 6, 6})), Error);
  CHECK_THROWS_AS(routed_forward(space, nets, Tensor({1, 2, 8, 8})), Error);
  // Hidden width max(C/2, 4): enc1.conv1 sees 1 channel, up2.conv sees 16 at width 4.
  CHECK(nets.view(0, 0).hidden == 4);
  CHECK(nets.view(0, 0).in == 1);
}

TEST_CASE("initial coefficients are uniform and reproduce the averaged model") {
  const auto members = random_members(4, 4, 10);
  const RoutingSpace space(members);
  const CoefficientNets nets = CoefficientNets::init(space, 4);
  const Tensor x = random_tensor({3, 1, 8, 8}, 5);
  const RoutedTape tape = routed_forward(space, nets, x);
  for (const auto& rc : tape.routes)
    for (double r : rc.coeff) CHECK(r == doctest::Approx(0.25).epsilon(1e-15));

  // Explicit uniform weight average of the conv layers, BN affine from the global member.
  ModelWeights avg = members.back();
  for (std::size_t l : avg.conv_layers()) {
    for (std::size_t s : {nn::kKernel, nn::kBias}) {
      Tensor& t = avg.mutable_param(l, s);
      t.fill(0.0);
      for (const auto& m : members) t.axpy(0.25, m.layer(l).params[s]);
    }
  }
  const Tensor ref = nn::softmax(nn::infer(avg, x, nn::Mode::kBatchStats));
  CHECK(max_diff(tape.probs, ref) < 1e-10);
}

TEST_CASE("identical members reproduce the plain forward") {
  const ModelWeights m = random_members(1, 4, 20)[0];
  const RoutingSpace space({m, m, m});
  const CoefficientNets nets = CoefficientNets::init(space, 7);
  const Tensor x = random_tensor({2, 1, 8, 8}, 6);
  const Tensor ref = nn::softmax(nn::infer(m, x, nn::Mode::kBatchStats));
  CHECK(max_diff(routed_forward(space, nets, x).probs, ref) < 1e-10);
}

TEST_CASE("saturated coefficients select one member") {
  const auto members = random_members(4, 4, 30);
  const RoutingSpace space(members);
  const Tensor x = random_tensor({2, 1, 8, 8}, 8);
  for (std::size_t j = 0; j < members.size(); ++j) {
    CoefficientNets nets = CoefficientNets::init(space, 9);
    randomize(nets, 11 + j);
    nets.saturate(j);
    // Routed BN layers use the global member's affine; compare like with like.
    const ModelWeights ref_model = with_bn_affine(members[j], members.back());
    const Tensor ref = nn::softmax(nn::infer(ref_model, x, nn::Mode::kBatchStats));
    CHECK(max_diff(routed_forward(space, nets, x).probs, ref) < 1e-6);
  }
}

TEST_CASE("weight mixing equals output mixing at every routed layer") {
  const auto members = random_members(3, 4, 40);
  const RoutingSpace space(members);
  CoefficientNets nets = CoefficientNets::init(space, 12);
  randomize(nets, 13);
  const Tensor x = random_tensor({2, 1, 8, 8}, 14);
  const RoutedTape tape = routed_forward(space, nets, x);
  const std::size_t K1 = members.size();
  double worst = 0.0;
  for (const RouteCache& rc : tape.routes) {
    const auto& layer = members[0].layer(rc.layer);
    const Tensor& in = layer.inputs.size() > 1
                           ? tape.joined_inputs[rc.layer]
                           : (layer.inputs[0] == nn::kNetworkInput
                                  ? tape.input
                                  : tape.outputs[static_cast<std::size_t>(layer.inputs[0])]);
    const Tensor& out = tape.outputs[rc.layer];
    const nn::kernels::ConvGeom g{in.c(), out.c(), in.h(), in.w(), layer.spec.ksize()};
    for (std::size_t n = 0; n < in.n(); ++n) {
      std::vector<double> mixed(out.c() * out.plane(), 0.0), one(mixed.size());
      for (std::size_t m = 0; m < K1; ++m) {
        const auto& ml = members[m].layer(rc.layer);
        nn::kernels::conv_forward(g, in.plane_ptr(n, 0), ml.params[nn::kKernel].data(),
                                  ml.params[nn::kBias].data(), one.data());
        for (std::size_t i = 0; i < one.size(); ++i) mixed[i] += rc.coeff[n * K1 + m] * one[i];
      }
      for (std::size_t i = 0; i < mixed.size(); ++i)
        worst = std::max(worst, std::abs(mixed[i] - out.plane_ptr(n, 0)[i]));
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("consistency loss") {
  const Tensor a = nn::softmax(random_tensor({2, 3, 5, 4}, 1));
  const Tensor b = nn::softmax(random_tensor({2, 3, 5, 4}, 2));
  CHECK(consistency_loss(a, a).value == 0.0);

  Tensor z({1, 2, 1, 1}), zp({1, 2, 1, 1});
  z[0] = 1.0;
  zp[1] = 1.0;
  CHECK(consistency_loss(z, zp).value == 2.0);

  double oracle = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double d = a.at(n, c, y, x) - b.at(n, c, y, x);
          d2 += d * d;
        }
        oracle += d2;
      }
  oracle /= 2 * 5 * 4;
  CHECK(std::abs(consistency_loss(a, b).value - oracle) < 1e-12);
  CHECK(consistency_loss(a, b).value >= 0.0);
}

TEST_CASE("shape loss") {
  Tensor flat({2, 2, 6, 6});
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = (i / 36) % 2 ? 0.3 : 0.7;
  CHECK(shape_loss(flat, 2).value == 0.0);

  Tensor toy({1, 1, 1, 3});
  toy[1] = 1.0;
  CHECK(shape_loss(toy, 1).value == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(shape_loss(toy, 0), Error);

  const Tensor p = nn::softmax(random_tensor({2, 3, 7, 9}, 3));
  for (std::size_t d : {1u, 2u, 3u}) {
    double oracle = 0.0;
    const long r = static_cast<long>(d);
    for (std::size_t n = 0; n < 2; ++n)
      for (long y = 0; y < 7; ++y)
        for (long x = 0; x < 9; ++x)
          for (std::size_t c = 0; c < 3; ++c) {
            double hi = -1e300, lo = 1e300;
            for (long dy = -r; dy <= r; ++dy)
              for (long dx = -r; dx <= r; ++dx) {
                const long yy = y + dy, xx = x + dx;
                if (yy < 0 || yy >= 7 || xx < 0 || xx >= 9) continue;
                hi = std::max(hi, p.at(n, c, yy, xx));
                lo = std::min(lo, p.at(n, c, yy, xx));
              }
            oracle += hi - lo;
          }
    oracle /= 2 * 7 * 9;
    CHECK(std::abs(shape_loss(p, d).value - oracle) < 1e-12);
  }
}

TEST_CASE("entropy loss") {
  Tensor onehot({1, 3, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) onehot[16 + i] = 1.0;
  CHECK(entropy_loss(onehot).value == 0.0);
  Tensor uniform({2, 2, 4, 4}, 0.5);
  CHECK(std::abs(entropy_loss(uniform).value - std::log(2.0)) < 1e-12);

  const Tensor p = nn::softmax(random_tensor({2, 3, 5, 5}, 4, 3.0));
  double oracle = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 5; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = p.at(n, c, y, x);
          oracle -= v * std::log(std::max(v, 1e-12));
        }
  oracle /= 2 * 5 * 5;
  CHECK(std::abs(entropy_loss(p).value - oracle) < 1e-12);
  CHECK(entropy_loss(p).value >= 0.0);
}

TEST_CASE("loss gradients match finite differences") {
  const Tensor a0 = nn::softmax(random_tensor({1, 2, 5, 5}, 5));
  const Tensor b0 = nn::softmax(random_tensor({1, 2, 5, 5}, 6));
  {
    Tensor a = a0;
    const auto an = consistency_loss(a, b0);
    const auto num = testing::central_differences(a.raw(), [&] { return consistency_loss(a, b0).value; });
    CHECK(testing::max_rel_error(an.grad.values(), num, 1e-8) < 1e-6);
  }
  {
    Tensor a = a0;
    const auto an = entropy_loss(a);
    const auto num = testing::central_differences(a.raw(), [&] { return entropy_loss(a).value; });
    CHECK(testing::max_rel_error(an.grad.values(), num, 1e-8) < 1e-6);
  }
  {
    // Random continuous values have unique window extrema, so the loss is
    // locally linear.
    Tensor a = a0;
    const auto an = shape_loss(a, 2);
    const auto num = testing::central_differences(a.raw(), [&] { return shape_loss(a, 2).value; });
    CHECK(testing::max_rel_error(an.grad.values(), num, 1e-8) < 1e-6);
  }
}

TEST_CASE("perturbation") {
  const Tensor x = random_tensor({1, 1, 32, 32}, 7);
  CHECK(perturb(x, 1, 0.0) == x);
  CHECK(perturb(x, 3) == perturb(x, 3));
  CHECK(!(perturb(x, 3) == perturb(x, 4)));
  const Tensor zero({1, 1, 32, 32});
  const Tensor eps = perturb(zero, 11);
  double mean = 0, var = 0;
  for (double v : eps.raw()) mean += v;
  mean /= 1024;
  for (double v : eps.raw()) var += (v - mean) * (v - mean);
  var /= 1023;
  CHECK(std::abs(mean) < 3 * 0.5 / 32.0);
  CHECK(std::sqrt(var) == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("test-time loss degenerate case and coefficient gradients") {
  const auto members = random_members(4, 4, 50);
  const RoutingSpace space(members);
  CoefficientNets nets = CoefficientNets::init(space, 15);
  const Tensor x = random_tensor({2, 1, 4, 4}, 16);

  TestTimeConfig zero{0.0, 2, 0.0};
  CHECK(test_time_loss(space, nets, x, 1, zero).value == 0.0);

  // Move away from the symmetric initial point so every path carries gradient.
  randomize(nets, 17, 0.3);
  const TestTimeConfig cfg{0.01, 1, 0.5};
  const TestTimeLoss l = test_time_loss(space, nets, x, 21, cfg);
  const auto numeric = testing::central_differences(
      nets.params(), [&] { return test_time_loss(space, nets, x, 21, cfg, false).value; });
  const double err = testing::max_rel_error(l.grad, numeric, 1e-8);
  INFO("max relative error " << err);
  CHECK(err <= 1e-3);
}

TEST_CASE("adapt: zero epochs, best-epoch bookkeeping, frozen members") {
  const auto members = random_members(3, 4, 60);
  const RoutingSpace space(members);
  std::vector<std::uint64_t> sums;
  for (const auto& m : members) sums.push_back(nn::checksum(m));
  const Tensor images = random_tensor({6, 1, 8, 8}, 18);

  AdaptConfig cfg;
  cfg.epochs = 0;
  const AdaptResult r0 = adapt(space, images, cfg, 5);
  CHECK(r0.best_epoch == 0);
  CHECK(r0.epoch_loss.size() == 1);
  const CoefficientNets init = CoefficientNets::init(space, derive_seed(5, "routing-init"));
  CHECK(r0.nets == init);
  CHECK(r0.probs == routed_predict(space, init, images, cfg.batch));

  cfg.epochs = 4;
  cfg.optimizer.learning_rate = 1e-2;
  const AdaptResult r = adapt(space, images, cfg, 5);
  CHECK(r.epoch_loss.size() == 5);
  CHECK(r.step_loss.size() == 4 * 2);
  CHECK(r.epoch_loss[r.best_epoch] <= r.epoch_loss[0]);
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) CHECK(r.epoch_loss[r.best_epoch] <= r.epoch_loss[e]);
  CHECK(r.labels.data == r.epoch_labels[r.best_epoch].data);
  CHECK(r.probs == routed_predict(space, r.nets, images, cfg.batch));
  CHECK(r.coefficients.size() == 5 * 13 * 3);

  for (std::size_t k = 0; k < members.size(); ++k) CHECK(nn::checksum(space.member(k)) == sums[k]);

  const AdaptResult again = adapt(space, images, cfg, 5);
  CHECK(again.epoch_loss == r.epoch_loss);
  CHECK(again.probs == r.probs);
}

TEST_CASE("adapt rejects empty input and aborts on non-finite loss") {
  const auto members = random_members(2, 4, 70);
  const RoutingSpace space(members);
  AdaptConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(adapt(space, Tensor({0, 1, 8, 8}), cfg, 1), Error);
  Tensor bad = random_tensor({2, 1, 8, 8}, 3);
  bad[5] = std::nan("");
  try {
    adapt(space, bad, cfg, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumeric);
  }
}
