#include "data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "nn/error.hpp"
#include "nn/rng.hpp"

namespace iopfl::data {
namespace {

constexpr double kTextureAmplitude = 0.35;
constexpr double kForegroundLevel = 1.0;
constexpr double kCupLevel = 0.6;  // added on top of the disc level
constexpr std::array<double, 2> kCupScaleRange{0.45, 0.65};

}  // namespace

void ClientShift::validate(std::size_t image_size) const {
  auto bad = [&](const std::string& what) {
    fail(ErrorKind::kConfig, "client shift '" + name + "': " + what);
  };
  if (!(noise_sigma >= 0.0 && noise_sigma < 1.0)) bad("noise_sigma must be in [0, 1)");
  if (!(texture_freq > 0.0)) bad("texture_freq must be > 0");
  if (!(fg_radius_range[0] > 0.0 && fg_radius_range[0] <= fg_radius_range[1])) {
    bad("fg_radius_range must be ordered and positive");
  }
  if (!(eccentricity_range[0] >= 0.0 && eccentricity_range[0] <= eccentricity_range[1] &&
        eccentricity_range[1] < 1.0)) {
    bad("eccentricity_range must be ordered within [0, 1)");
  }
  if (intensity_scale == 0.0 || !std::isfinite(intensity_scale)) bad("intensity_scale must be non-zero");
  if (n_samples == 0) bad("n_samples must be positive");
  if (fg_radius_range[1] > static_cast<double>(image_size) / 2.0 - 1.0) {
    bad("ellipse cannot fit: radius " + std::to_string(fg_radius_range[1]) + " in a " +
        std::to_string(image_size) + "px image");
  }
}

bool EllipseParams::contains(double x, double y, double scale) const {
  const double dx = x - cx, dy = y - cy;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = (dx * c + dy * s) / (semi_major * scale);
  const double v = (-dx * s + dy * c) / (semi_minor * scale);
  return u * u + v * v <= 1.0;
}

nn::Tensor ClientDataset::images(std::span<const std::size_t> idx) const {
  nn::Tensor out({idx.size(), 1, size, size});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& img = samples.at(idx[b]).image;
    std::copy(img.data(), img.data() + img.size(), out.plane_ptr(b, 0));
  }
  return out;
}

nn::LabelBatch ClientDataset::labels(std::span<const std::size_t> idx) const {
  nn::LabelBatch out{idx.size(), size, size, {}};
  out.data.reserve(idx.size() * size * size);
  for (std::size_t i : idx) {
    const auto& m = samples.at(i).mask;
    out.data.insert(out.data.end(), m.begin(), m.end());
  }
  return out;
}

namespace {
std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}
}  // namespace

nn::Tensor ClientDataset::all_images() const { return images(iota_n(samples.size())); }
nn::LabelBatch ClientDataset::all_labels() const { return labels(iota_n(samples.size())); }

ClientDataset ClientDataset::subset(std::span<const std::size_t> idx) const {
  ClientDataset out{shift, classes, size, {}};
  out.samples.reserve(idx.size());
  for (std::size_t i : idx) out.samples.push_back(samples.at(i));
  return out;
}

ClientDataset generate_client(const ClientShift& shift, std::size_t classes, std::size_t size,
                              std::uint64_t seed) {
  if (classes != 2 && classes != 3) fail(ErrorKind::kConfig, "classes must be 2 or 3");
  if (size == 0 || size % 4 != 0) fail(ErrorKind::kConfig, "image size must be divisible by 4");
  shift.validate(size);

  ClientDataset ds{shift, classes, size, {}};
  Rng rng(seed);
  const double S = static_cast<double>(size);
  const std::size_t P = size * size;
  for (std::size_t i = 0; i < shift.n_samples; ++i) {
    EllipseParams e;
    e.semi_major = rng.uniform(shift.fg_radius_range[0], shift.fg_radius_range[1]);
    const double ecc = rng.uniform(shift.eccentricity_range[0], shift.eccentricity_range[1]);
    e.semi_minor = e.semi_major * std::sqrt(1.0 - ecc * ecc);
    e.angle = rng.uniform(0.0, std::numbers::pi);
    const double c = std::cos(e.angle), s = std::sin(e.angle);
    const double half_w = std::sqrt(e.semi_major * e.semi_major * c * c +
                                    e.semi_minor * e.semi_minor * s * s);
    const double half_h = std::sqrt(e.semi_major * e.semi_major * s * s +
                                    e.semi_minor * e.semi_minor * c * c);
    e.cx = rng.uniform(half_w, S - 1.0 - half_w);
    e.cy = rng.uniform(half_h, S - 1.0 - half_h);
    if (classes == 3) e.cup_scale = rng.uniform(kCupScaleRange[0], kCupScaleRange[1]);

    const double fx = 2.0 * std::numbers::pi * shift.texture_freq / S;
    const double phase_x = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double phase_y = rng.uniform(0.0, 2.0 * std::numbers::pi);

    SegmentationSample sample;
    sample.geometry = e;
    sample.mask.assign(P, 0);
    sample.image = nn::Tensor({1, 1, size, size});
    double* img = sample.image.data();
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double px = static_cast<double>(x), py = static_cast<double>(y);
        std::int32_t label = e.contains(px, py) ? 1 : 0;
        if (label == 1 && classes == 3 && e.contains(px, py, e.cup_scale)) label = 2;
        sample.mask[y * size + x] = label;
        double raw = kTextureAmplitude * std::sin(fx * px + phase_x) * std::sin(fx * py + phase_y);
        if (label >= 1) raw += kForegroundLevel;
        if (label == 2) raw += kCupLevel;
        img[y * size + x] = shift.intensity_scale * raw + shift.intensity_offset;
      }
    }
    if (shift.noise_sigma > 0.0) {
      for (std::size_t p = 0; p < P; ++p) img[p] += shift.noise_sigma * rng.normal();
    }
    double mean = 0.0;
    for (std::size_t p = 0; p < P; ++p) mean += img[p];
    mean /= static_cast<double>(P);
    double var = 0.0;
    for (std::size_t p = 0; p < P; ++p) var += (img[p] - mean) * (img[p] - mean);
    var /= static_cast<double>(P);
    sample.raw_mean = mean;
    sample.raw_var = var;
    const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
    for (std::size_t p = 0; p < P; ++p) img[p] = (img[p] - mean) * inv;
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

DatasetSplit split(const ClientDataset& ds, SplitFractions f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    fail(ErrorKind::kConfig, "split fractions must be non-negative and sum to 1");
  }
  const std::size_t n = ds.count();
  auto order = iota_n(n);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train,
                              static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n))));
  const std::size_t n_test = n - n_train - n_val;
  auto check = [&](double frac, std::size_t count, const char* name) {
    if (frac > 0.0 && count == 0) {
      fail(ErrorKind::kConfig, std::string("empty ") + name + " split for " + std::to_string(n) +
                                   " samples");
    }
  };
  check(f.train, n_train, "train");
  check(f.val, n_val, "val");
  check(f.test, n_test, "test");
  if (f.test == 0.0 && n_test != 0) fail(ErrorKind::kConfig, "split rounding left test samples");

  DatasetSplit out;
  out.train_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                     order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  out.train = ds.subset(out.train_idx);
  out.val = ds.subset(out.val_idx);
  out.test = ds.subset(out.test_idx);
  return out;
}

SegmentationSample augment(const SegmentationSample& s, int quarter_turns, bool flip) {
  const std::size_t S = s.image.h();
  SegmentationSample out = s;
  const int k = ((quarter_turns % 4) + 4) % 4;
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      // Source pixel for destination (y, x): undo the flip, then undo k CCW turns.
      std::size_t sy = y, sx = flip ? S - 1 - x : x;
      for (int t = 0; t < k; ++t) {
        const std::size_t ny = sx, nx = S - 1 - sy;
        sy = ny;
        sx = nx;
      }
      out.image.data()[y * S + x] = s.image.data()[sy * S + sx];
      out.mask[y * S + x] = s.mask[sy * S + sx];
    }
  }
  return out;
}

SegmentationSample augment(const SegmentationSample& s, std::uint64_t seed) {
  Rng rng(seed);
  const int k = static_cast<int>(rng.below(4));
  const bool flip = rng.below(2) == 1;
  return augment(s, k, flip);
}

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

std::vector<std::uint8_t> label_pixels(std::span<const std::int32_t> labels,
                                       std::size_t classes) {
  std::vector<std::uint8_t> px(labels.size());
  const int step = 255 / static_cast<int>(std::max<std::size_t>(classes - 1, 1));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    px[i] = static_cast<std::uint8_t>(std::clamp(labels[i] * step, 0, 255));
  }
  return px;
}

void export_client(const ClientDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["client"] = ds.shift.name;
  manifest["classes"] = ds.classes;
  manifest["size"] = ds.size;
  manifest["shift"] = {{"intensity_scale", ds.shift.intensity_scale},
                       {"intensity_offset", ds.shift.intensity_offset},
                       {"noise_sigma", ds.shift.noise_sigma},
                       {"texture_freq", ds.shift.texture_freq},
                       {"fg_radius_range", ds.shift.fg_radius_range},
                       {"eccentricity_range", ds.shift.eccentricity_range}};
  auto& items = manifest["samples"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.count(); ++i) {
    const auto& s = ds.samples[i];
    std::vector<std::uint8_t> px(s.image.size());
    for (std::size_t p = 0; p < px.size(); ++p) {
      // z-scored values mapped from [-3, 3]
      px[p] = static_cast<std::uint8_t>(std::clamp((s.image[p] + 3.0) / 6.0 * 255.0, 0.0, 255.0));
    }
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu", i);
    write_pgm(dir / (std::string("image_") + stem + ".pgm"), ds.size, ds.size, px);
    write_pgm(dir / (std::string("mask_") + stem + ".pgm"), ds.size, ds.size,
              label_pixels(s.mask, ds.classes));
    items.push_back({{"image", std::string("image_") + stem + ".pgm"},
                     {"mask", std::string("mask_") + stem + ".pgm"},
                     {"raw_mean", s.raw_mean},
                     {"raw_var", s.raw_var}});
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

std::vector<ClientShift> default_client_shifts() {
  return {
      {"site_a", 1.0, 0.0, 0.15, 2.0, {5.0, 9.0}, {0.0, 0.5}, 60},
      {"site_b", -0.7, 0.5, 0.25, 4.0, {6.0, 10.0}, {0.2, 0.6}, 60},
      {"site_c", 1.4, -0.3, 0.10, 1.5, {4.0, 8.0}, {0.3, 0.7}, 60},
      {"site_d", -1.0, 0.2, 0.20, 3.0, {5.0, 9.0}, {0.0, 0.6}, 60},
      {"outside", -0.8, 0.4, 0.40, 5.0, {5.0, 10.0}, {0.1, 0.7}, 60},
  };
}

}  // namespace iopfl::data
