#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "data/synth.hpp"
#include "nn/error.hpp"

using namespace iopfl;
using namespace iopfl::data;

namespace {

ClientShift clean_shift() {
  ClientShift s;
  s.name = "clean";
  s.intensity_scale = 1.0;
  s.intensity_offset = 0.0;
  s.noise_sigma = 0.0;
  s.n_samples = 12;
  return s;
}

std::pair<double, double> fg_centroid(const SegmentationSample& s) {
  const std::size_t S = s.image.h();
  double sy = 0, sx = 0, n = 0;
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x)
      if (s.mask[y * S + x] > 0) sy += y, sx += x, n += 1;
  return {sy / n, sx / n};
}

long fg_area(const SegmentationSample& s) {
  return std::count_if(s.mask.begin(), s.mask.end(), [](int v) { return v > 0; });
}

}  // namespace

TEST_CASE("noise-free masks match the generating ellipse equation") {
  for (std::size_t classes : {2u, 3u}) {
    const ClientDataset ds = generate_client(clean_shift(), classes, 32, 7);
    REQUIRE(ds.count() == 12);
    for (const auto& s : ds.samples) {
      const auto& e = s.geometry;
      const double c = std::cos(e.angle), sn = std::sin(e.angle);
      for (std::size_t y = 0; y < 32; ++y) {
        for (std::size_t x = 0; x < 32; ++x) {
          // Brute-force membership written out independently of EllipseParams.
          auto inside = [&](double scale) {
            const double dx = x - e.cx, dy = y - e.cy;
            const double u = dx * c + dy * sn, v = -dx * sn + dy * c;
            const double a = e.semi_major * scale, b = e.semi_minor * scale;
            return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
          };
          int expected = inside(1.0) ? 1 : 0;
          if (classes == 3 && expected == 1 && inside(e.cup_scale)) expected = 2;
          CHECK(s.mask[y * 32 + x] == expected);
        }
      }
      // Every label of the legend is present.
      std::set<int> present(s.mask.begin(), s.mask.end());
      CHECK(present.size() == classes);
    }
  }
}

TEST_CASE("generation is deterministic in the seed") {
  const auto shifts = default_client_shifts();
  const ClientDataset a = generate_client(shifts[1], 2, 32, 99);
  const ClientDataset b = generate_client(shifts[1], 2, 32, 99);
  const ClientDataset c = generate_client(shifts[1], 2, 32, 100);
  REQUIRE(a.count() == b.count());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.count(); ++i) {
    CHECK(a.samples[i].image == b.samples[i].image);
    CHECK(a.samples[i].mask == b.samples[i].mask);
    any_diff |= !(a.samples[i].image == c.samples[i].image);
  }
  CHECK(any_diff);
}

TEST_CASE("images are z-scored per sample") {
  for (const auto& shift : default_client_shifts()) {
    const ClientDataset ds = generate_client(shift, 2, 32, 5);
    for (const auto& s : ds.samples) {
      double mean = 0;
      for (double v : s.image.raw()) mean += v;
      mean /= s.image.size();
      double var = 0;
      for (double v : s.image.raw()) var += (v - mean) * (v - mean);
      var /= s.image.size();
      CHECK(std::abs(mean) < 1e-10);
      CHECK(std::abs(var - 1.0) < 1e-10);
    }
  }
}

TEST_CASE("client shifts produce different raw statistics") {
  const auto shifts = default_client_shifts();
  std::vector<std::pair<double, double>> stats;
  for (const auto& shift : shifts) {
    const ClientDataset ds = generate_client(shift, 2, 32, 3);
    double m = 0, v = 0;
    for (const auto& s : ds.samples) m += s.raw_mean, v += s.raw_var;
    stats.emplace_back(m / ds.count(), v / ds.count());
  }
  for (std::size_t i = 0; i < stats.size(); ++i)
    for (std::size_t j = i + 1; j < stats.size(); ++j) {
      const bool differ = std::abs(stats[i].first - stats[j].first) > 1e-3 ||
                          std::abs(stats[i].second - stats[j].second) > 1e-3;
      CHECK(differ);
    }
}

TEST_CASE("shift validation") {
  ClientShift s = clean_shift();
  s.fg_radius_range = {5.0, 20.0};
  CHECK_THROWS_AS(generate_client(s, 2, 32, 1), Error);
  s = clean_shift();
  s.eccentricity_range = {0.6, 0.2};
  CHECK_THROWS_AS(generate_client(s, 2, 32, 1), Error);
  s = clean_shift();
  s.noise_sigma = 1.5;
  CHECK_THROWS_AS(generate_client(s, 2, 32, 1), Error);
  CHECK_THROWS_AS(generate_client(clean_shift(), 2, 30, 1), Error);
  CHECK_THROWS_AS(generate_client(clean_shift(), 4, 32, 1), Error);
}

TEST_CASE("split sizes and partition property") {
  ClientShift s = clean_shift();
  s.n_samples = 100;
  const ClientDataset ds = generate_client(s, 2, 32, 1);
  const DatasetSplit sp = split(ds, {}, 11);
  CHECK(sp.train.count() == 64);
  CHECK(sp.val.count() == 16);
  CHECK(sp.test.count() == 20);

  std::vector<std::size_t> all;
  all.insert(all.end(), sp.train_idx.begin(), sp.train_idx.end());
  all.insert(all.end(), sp.val_idx.begin(), sp.val_idx.end());
  all.insert(all.end(), sp.test_idx.begin(), sp.test_idx.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(100);
  std::iota(expected.begin(), expected.end(), 0);
  CHECK(all == expected);  // disjoint and covering

  const DatasetSplit everything = split(ds, {1.0, 0.0, 0.0}, 11);
  CHECK(everything.train.count() == 100);
  CHECK(everything.val.empty());
  CHECK(everything.test.empty());

  CHECK(split(ds, {}, 11).train_idx == sp.train_idx);
  CHECK(split(ds, {}, 12).train_idx != sp.train_idx);
  CHECK_THROWS_AS(split(ds, {0.5, 0.2, 0.2}, 1), Error);
  s.n_samples = 2;
  CHECK_THROWS_AS(split(generate_client(s, 2, 32, 1), {}, 1), Error);
}

TEST_CASE("augmentation") {
  const ClientDataset ds = generate_client(default_client_shifts()[0], 3, 32, 21);
  const SegmentationSample& s = ds.samples[0];

  CHECK(augment(s, 0, false).image == s.image);
  const auto twice = augment(augment(s, 0, true), 0, true);
  CHECK(twice.image == s.image);
  CHECK(twice.mask == s.mask);
  CHECK(augment(augment(s, 1, false), 3, false).mask == s.mask);

  for (int k = 0; k < 4; ++k)
    for (bool f : {false, true}) CHECK(fg_area(augment(s, k, f)) == fg_area(s));

  // Image and mask move together: foreground is brighter for this shift, so
  // the mean intensity inside the mask is preserved by every transform.
  auto fg_mean = [](const SegmentationSample& q) {
    double m = 0, n = 0;
    for (std::size_t i = 0; i < q.mask.size(); ++i)
      if (q.mask[i] > 0) m += q.image[i], n += 1;
    return m / n;
  };
  for (int k = 0; k < 4; ++k)
    CHECK(fg_mean(augment(s, k, true)) == doctest::Approx(fg_mean(s)).epsilon(1e-12));

  const auto [cy, cx] = fg_centroid(s);
  const auto [ry, rx] = fg_centroid(augment(s, 1, false));
  CHECK(ry == doctest::Approx(31.0 - cx));
  CHECK(rx == doctest::Approx(cy));
  const auto [fy, fx] = fg_centroid(augment(s, 0, true));
  CHECK(fy == doctest::Approx(cy));
  CHECK(fx == doctest::Approx(31.0 - cx));

  // Seeded variant is deterministic.
  CHECK(augment(s, std::uint64_t{5}).image == augment(s, std::uint64_t{5}).image);
}

TEST_CASE("export writes PGM files and a manifest") {
  const auto dir = std::filesystem::temp_directory_path() / "iopfl_test_export";
  std::filesystem::remove_all(dir);
  ClientShift s = clean_shift();
  s.n_samples = 3;
  export_client(generate_client(s, 2, 32, 1), dir);
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  CHECK(std::filesystem::exists(dir / "image_0002.pgm"));
  CHECK(std::filesystem::file_size(dir / "mask_0000.pgm") == 32 * 32 + 13);
  std::filesystem::remove_all(dir);
}
