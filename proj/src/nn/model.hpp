#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nn/tensor.hpp"

namespace iopfl::nn {

enum class LayerKind {
  kConv3x3,
  kConv1x1,
  kBatchNorm,
  kReLU,
  kMaxPool2,
  kUpsample2,
  kSoftmax,
};

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view s);

struct LayerSpec {
  LayerKind kind;
  std::size_t in_channels;
  std::size_t out_channels;

  bool is_conv() const noexcept {
    return kind == LayerKind::kConv3x3 || kind == LayerKind::kConv1x1;
  }
  std::size_t ksize() const noexcept { return kind == LayerKind::kConv3x3 ? 3 : 1; }
  /// Trainable tensors: conv (kernel, bias), batchnorm (gamma, beta).
  std::size_t trainable_count() const noexcept {
    return is_conv() || kind == LayerKind::kBatchNorm ? 2 : 0;
  }
  bool operator==(const LayerSpec&) const = default;
};

// Parameter slot indices.
inline constexpr std::size_t kKernel = 0;
inline constexpr std::size_t kBias = 1;
inline constexpr std::size_t kGamma = 0;
inline constexpr std::size_t kBeta = 1;
inline constexpr std::size_t kRunningMean = 2;
inline constexpr std::size_t kRunningVar = 3;

inline constexpr int kNetworkInput = -1;

struct Layer {
  std::string name;
  LayerSpec spec;
  /// Producers of this layer's input; several producers are concatenated
  /// along channels in order. kNetworkInput refers to the image.
  std::vector<int> inputs;
  std::vector<Tensor> params;
};

/// Ordered layers of a feed-forward network (a DAG in topological order).
/// The last layer's output is the network output.
class ModelWeights {
 public:
  ModelWeights() = default;
  ModelWeights(std::string architecture_id, std::size_t in_channels, std::vector<Layer> layers);

  const std::string& architecture_id() const noexcept { return architecture_id_; }
  std::size_t in_channels() const noexcept { return in_channels_; }
  std::size_t out_channels() const noexcept { return layers_.back().spec.out_channels; }
  std::size_t downsample_count() const noexcept;

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t size() const noexcept { return layers_.size(); }

  /// Mutable access invalidates outstanding tapes.
  std::vector<Layer>& mutable_layers() noexcept {
    ++revision_;
    return layers_;
  }
  Tensor& mutable_param(std::size_t layer, std::size_t slot) {
    ++revision_;
    return layers_.at(layer).params.at(slot);
  }

  /// Running-stat writes from train-mode forward; does not invalidate tapes.
  Tensor& running_stat(std::size_t layer, std::size_t slot) {
    return layers_.at(layer).params.at(slot);
  }

  std::uint64_t revision() const noexcept { return revision_; }

  /// Number of trainable scalars (conv kernels/biases, BN affine).
  std::size_t parameter_count() const noexcept;
  /// Number of stored scalars including BN running statistics.
  std::size_t stored_value_count() const noexcept;
  /// Indices of conv layers, in order.
  std::vector<std::size_t> conv_layers() const;

  bool congruent(const ModelWeights& other) const noexcept;

  /// Bitwise parameter equality (names and wiring included).
  bool operator==(const ModelWeights& other) const noexcept;

 private:
  std::string architecture_id_;
  std::size_t in_channels_ = 0;
  std::vector<Layer> layers_;
  std::uint64_t revision_ = 0;
};

/// Checks architecture compatibility, throwing a shape error naming `what`.
void require_congruent(const ModelWeights& a, const ModelWeights& b, std::string_view what);

/// Architecture fingerprint from layer names, kinds, shapes and wiring.
std::string architecture_fingerprint(std::string_view family, std::size_t in_channels,
                                     const std::vector<Layer>& layers);

/// FNV-1a over the raw bytes of every stored value, in layer order.
std::uint64_t checksum(const ModelWeights& m);

/// 2-level U-Net: conv3x3+BN+ReLU pairs at widths w, 2w, 4w; nearest x2
/// upsampling followed by conv3x3; skip concatenation; conv1x1 head.
/// Kernels use He-normal init from `seed`, biases zero, BN identity.
ModelWeights build_tiny_unet(std::size_t in_channels, std::size_t classes,
                             std::size_t base_width, std::uint64_t seed);

/// Per-layer gradients for the trainable tensors of a ModelWeights.
class GradientSet {
 public:
  GradientSet() = default;
  static GradientSet zeros_like(const ModelWeights& m);

  const std::string& architecture_id() const noexcept { return architecture_id_; }
  std::vector<std::vector<Tensor>>& layers() noexcept { return layers_; }
  const std::vector<std::vector<Tensor>>& layers() const noexcept { return layers_; }
  Tensor& at(std::size_t layer, std::size_t slot) { return layers_.at(layer).at(slot); }
  const Tensor& at(std::size_t layer, std::size_t slot) const {
    return layers_.at(layer).at(slot);
  }

  bool congruent(const GradientSet& other) const noexcept;
  bool congruent(const ModelWeights& m) const noexcept;

  /// this += alpha * other
  GradientSet& axpy(double alpha, const GradientSet& other);
  GradientSet& scale(double alpha);
  GradientSet& operator+=(const GradientSet& o) { return axpy(1.0, o); }
  GradientSet& operator-=(const GradientSet& o) { return axpy(-1.0, o); }

  bool all_finite() const noexcept;
  bool is_zero() const noexcept;
  double max_abs() const noexcept;
  bool operator==(const GradientSet& o) const noexcept;

 private:
  std::string architecture_id_;
  std::vector<std::vector<Tensor>> layers_;
};

GradientSet operator*(double alpha, GradientSet g);
GradientSet operator+(GradientSet a, const GradientSet& b);
GradientSet operator-(GradientSet a, const GradientSet& b);

/// (before - after) / step_size over trainable tensors.
GradientSet displacement(const ModelWeights& before, const ModelWeights& after,
                         double step_size);

}  // namespace iopfl::nn
