#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nn/losses.hpp"
#include "nn/tensor.hpp"

namespace iopfl::data {

/// Per-client acquisition shift. Intensities are applied as
/// scale * raw + offset + N(0, noise_sigma^2) before per-image z-scoring.
struct ClientShift {
  std::string name;
  double intensity_scale = 1.0;
  double intensity_offset = 0.0;
  double noise_sigma = 0.1;
  double texture_freq = 2.0;  // cycles per image side
  std::array<double, 2> fg_radius_range{5.0, 9.0};
  std::array<double, 2> eccentricity_range{0.0, 0.5};
  std::size_t n_samples = 60;

  /// Throws ErrorKind::kConfig when ranges are unordered or out of bounds.
  void validate(std::size_t image_size) const;
};

/// Geometry of the generated object; cup_scale is 0 for 2-class data.
struct EllipseParams {
  double cx = 0, cy = 0;
  double semi_major = 0, semi_minor = 0;
  double angle = 0;
  double cup_scale = 0;

  /// Point-in-ellipse test at pixel centre (x, y), scaled by `scale`.
  bool contains(double x, double y, double scale = 1.0) const;
};

struct SegmentationSample {
  nn::Tensor image;                  // (1, 1, S, S), z-scored
  std::vector<std::int32_t> mask;    // S*S labels
  EllipseParams geometry;
  double raw_mean = 0.0;             // pre-normalisation statistics
  double raw_var = 0.0;
};

struct ClientDataset {
  ClientShift shift;
  std::size_t classes = 2;
  std::size_t size = 32;
  std::vector<SegmentationSample> samples;

  std::size_t count() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  /// Stacks the selected samples into an image batch and a label batch.
  nn::Tensor images(std::span<const std::size_t> idx) const;
  nn::LabelBatch labels(std::span<const std::size_t> idx) const;
  nn::Tensor all_images() const;
  nn::LabelBatch all_labels() const;
  ClientDataset subset(std::span<const std::size_t> idx) const;
};

/// Seeded synthetic client: a randomly placed ellipse (3-class: nested
/// disc/cup ellipses) over a sinusoidal texture, with the client's intensity
/// affine and Gaussian noise, z-scored per image.
ClientDataset generate_client(const ClientShift& shift, std::size_t classes, std::size_t size,
                              std::uint64_t seed);

struct SplitFractions {
  double train = 0.64;
  double val = 0.16;
  double test = 0.20;
};

struct DatasetSplit {
  ClientDataset train, val, test;
  std::vector<std::size_t> train_idx, val_idx, test_idx;
};

/// Seeded shuffle, then counts round(train*n), round(val*n), remainder.
DatasetSplit split(const ClientDataset& ds, SplitFractions f, std::uint64_t seed);

/// Rotation by k*90 degrees (counter-clockwise) then optional horizontal flip,
/// applied identically to image and mask.
SegmentationSample augment(const SegmentationSample& s, int quarter_turns, bool flip);
SegmentationSample augment(const SegmentationSample& s, std::uint64_t seed);

/// PGM images/masks plus a JSON manifest, for inspection.
void export_client(const ClientDataset& ds, const std::filesystem::path& dir);
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels);
std::vector<std::uint8_t> label_pixels(std::span<const std::int32_t> labels, std::size_t classes);

/// Default federation: four inside clients and one outside client whose
/// shift lies outside the inside range (inverted, noisier).
std::vector<ClientShift> default_client_shifts();

}  // namespace iopfl::data
