#include "nn/model.hpp"

#include <cmath>
#include <cstring>
#include <map>

#include "nn/error.hpp"
#include "nn/rng.hpp"

namespace iopfl::nn {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv3x3: return "conv3x3";
    case LayerKind::kConv1x1: return "conv1x1";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kReLU: return "relu";
    case LayerKind::kMaxPool2: return "maxpool2";
    case LayerKind::kUpsample2: return "upsample2-nearest";
    case LayerKind::kSoftmax: return "softmax-channel";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view s) {
  for (auto k : {LayerKind::kConv3x3, LayerKind::kConv1x1, LayerKind::kBatchNorm,
                 LayerKind::kReLU, LayerKind::kMaxPool2, LayerKind::kUpsample2,
                 LayerKind::kSoftmax}) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorKind::kIo, "unknown layer kind '" + std::string(s) + "'");
}

ModelWeights::ModelWeights(std::string architecture_id, std::size_t in_channels,
                           std::vector<Layer> layers)
    : architecture_id_(std::move(architecture_id)),
      in_channels_(in_channels),
      layers_(std::move(layers)) {
  if (layers_.empty()) fail(ErrorKind::kShape, "model has no layers");
}

std::size_t ModelWeights::downsample_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.spec.kind == LayerKind::kMaxPool2;
  return n;
}

std::size_t ModelWeights::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    for (std::size_t s = 0; s < l.spec.trainable_count(); ++s) n += l.params[s].size();
  }
  return n;
}

std::size_t ModelWeights::stored_value_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    for (const auto& p : l.params) n += p.size();
  }
  return n;
}

std::vector<std::size_t> ModelWeights::conv_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].spec.is_conv()) out.push_back(i);
  }
  return out;
}

bool ModelWeights::congruent(const ModelWeights& other) const noexcept {
  if (architecture_id_ != other.architecture_id_ || layers_.size() != other.layers_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& a = layers_[i];
    const auto& b = other.layers_[i];
    if (a.name != b.name || !(a.spec == b.spec) || a.inputs != b.inputs ||
        a.params.size() != b.params.size()) {
      return false;
    }
    for (std::size_t s = 0; s < a.params.size(); ++s) {
      if (!a.params[s].same_shape(b.params[s])) return false;
    }
  }
  return true;
}

bool ModelWeights::operator==(const ModelWeights& other) const noexcept {
  if (!congruent(other)) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (std::size_t s = 0; s < layers_[i].params.size(); ++s) {
      const auto& a = layers_[i].params[s].raw();
      const auto& b = other.layers_[i].params[s].raw();
      if (std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) return false;
    }
  }
  return true;
}

void require_congruent(const ModelWeights& a, const ModelWeights& b, std::string_view what) {
  if (!a.congruent(b)) {
    fail(ErrorKind::kShape, std::string(what) + ": architecture mismatch ('" +
                                a.architecture_id() + "' vs '" + b.architecture_id() + "')");
  }
}

std::string architecture_fingerprint(std::string_view family, std::size_t in_channels,
                                     const std::vector<Layer>& layers) {
  std::string sig = std::string(family) + "|in" + std::to_string(in_channels);
  for (const auto& l : layers) {
    sig += "|" + l.name + ":" + std::string(to_string(l.spec.kind)) + ":" +
           std::to_string(l.spec.in_channels) + ">" + std::to_string(l.spec.out_channels);
    for (int in : l.inputs) sig += "<" + std::to_string(in);
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(sig)));
  return std::string(family) + "-" + hex;
}

std::uint64_t checksum(const ModelWeights& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : m.layers()) {
    for (const auto& p : l.params) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.data());
      for (std::size_t i = 0; i < p.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

namespace {

class UnetBuilder {
 public:
  explicit UnetBuilder(std::uint64_t seed) : rng_(seed) {}

  int conv(const std::string& name, std::vector<int> inputs, std::size_t in, std::size_t out,
           std::size_t k) {
    Layer l{name, {k == 3 ? LayerKind::kConv3x3 : LayerKind::kConv1x1, in, out},
            std::move(inputs), {}};
    Tensor kernel({out, in, k, k});
    const double stddev = std::sqrt(2.0 / static_cast<double>(in * k * k));
    for (auto& v : kernel.raw()) v = stddev * rng_.normal();
    l.params.push_back(std::move(kernel));
    l.params.emplace_back(Shape4{1, out, 1, 1}, 0.0);
    return push(std::move(l));
  }

  int bn(const std::string& name, int input, std::size_t ch) {
    Layer l{name, {LayerKind::kBatchNorm, ch, ch}, {input}, {}};
    l.params.emplace_back(Shape4{1, ch, 1, 1}, 1.0);
    l.params.emplace_back(Shape4{1, ch, 1, 1}, 0.0);
    l.params.emplace_back(Shape4{1, ch, 1, 1}, 0.0);
    l.params.emplace_back(Shape4{1, ch, 1, 1}, 1.0);
    return push(std::move(l));
  }

  int simple(const std::string& name, LayerKind kind, int input, std::size_t ch) {
    return push(Layer{name, {kind, ch, ch}, {input}, {}});
  }

  // conv3x3 -> BN -> ReLU, twice.
  int block(const std::string& prefix, std::vector<int> inputs, std::size_t in,
            std::size_t out) {
    int x = conv(prefix + ".conv1", std::move(inputs), in, out, 3);
    x = bn(prefix + ".bn1", x, out);
    x = simple(prefix + ".relu1", LayerKind::kReLU, x, out);
    x = conv(prefix + ".conv2", {x}, out, out, 3);
    x = bn(prefix + ".bn2", x, out);
    return simple(prefix + ".relu2", LayerKind::kReLU, x, out);
  }

  std::vector<Layer> take() { return std::move(layers_); }

 private:
  int push(Layer l) {
    layers_.push_back(std::move(l));
    return static_cast<int>(layers_.size()) - 1;
  }
  Rng rng_;
  std::vector<Layer> layers_;
};

}  // namespace

ModelWeights build_tiny_unet(std::size_t in_channels, std::size_t classes,
                             std::size_t base_width, std::uint64_t seed) {
  if (base_width < 4) fail(ErrorKind::kConfig, "base_width must be >= 4");
  if (in_channels == 0 || classes < 2) fail(ErrorKind::kConfig, "invalid channel counts");
  const std::size_t w1 = base_width, w2 = 2 * base_width, w3 = 4 * base_width;
  UnetBuilder b(seed);
  const int e1 = b.block("enc1", {kNetworkInput}, in_channels, w1);
  int x = b.simple("pool1", LayerKind::kMaxPool2, e1, w1);
  const int e2 = b.block("enc2", {x}, w1, w2);
  x = b.simple("pool2", LayerKind::kMaxPool2, e2, w2);
  x = b.block("mid", {x}, w2, w3);
  x = b.simple("up2.upsample", LayerKind::kUpsample2, x, w3);
  x = b.conv("up2.conv", {x}, w3, w2, 3);
  x = b.block("dec2", {x, e2}, 2 * w2, w2);
  x = b.simple("up1.upsample", LayerKind::kUpsample2, x, w2);
  x = b.conv("up1.conv", {x}, w2, w1, 3);
  x = b.block("dec1", {x, e1}, 2 * w1, w1);
  b.conv("head", {x}, w1, classes, 1);
  auto layers = b.take();
  auto id = architecture_fingerprint("tiny-unet", in_channels, layers);
  return ModelWeights(std::move(id), in_channels, std::move(layers));
}

GradientSet GradientSet::zeros_like(const ModelWeights& m) {
  GradientSet g;
  g.architecture_id_ = m.architecture_id();
  g.layers_.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& l = m.layer(i);
    for (std::size_t s = 0; s < l.spec.trainable_count(); ++s) {
      g.layers_[i].push_back(Tensor::zeros_like(l.params[s]));
    }
  }
  return g;
}

bool GradientSet::congruent(const GradientSet& other) const noexcept {
  if (architecture_id_ != other.architecture_id_ || layers_.size() != other.layers_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].size() != other.layers_[i].size()) return false;
    for (std::size_t s = 0; s < layers_[i].size(); ++s) {
      if (!layers_[i][s].same_shape(other.layers_[i][s])) return false;
    }
  }
  return true;
}

bool GradientSet::congruent(const ModelWeights& m) const noexcept {
  if (architecture_id_ != m.architecture_id() || layers_.size() != m.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = m.layer(i);
    if (layers_[i].size() != l.spec.trainable_count()) return false;
    for (std::size_t s = 0; s < layers_[i].size(); ++s) {
      if (!layers_[i][s].same_shape(l.params[s])) return false;
    }
  }
  return true;
}

GradientSet& GradientSet::axpy(double alpha, const GradientSet& other) {
  if (!congruent(other)) fail(ErrorKind::kShape, "gradient sets are not congruent");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (std::size_t s = 0; s < layers_[i].size(); ++s) {
      layers_[i][s].axpy(alpha, other.layers_[i][s]);
    }
  }
  return *this;
}

GradientSet& GradientSet::scale(double alpha) {
  for (auto& l : layers_) {
    for (auto& t : l) t.scale(alpha);
  }
  return *this;
}

bool GradientSet::all_finite() const noexcept {
  for (const auto& l : layers_) {
    for (const auto& t : l) {
      if (!t.all_finite()) return false;
    }
  }
  return true;
}

bool GradientSet::is_zero() const noexcept { return max_abs() == 0.0; }

double GradientSet::max_abs() const noexcept {
  double m = 0.0;
  for (const auto& l : layers_) {
    for (const auto& t : l) {
      for (double v : t.raw()) m = std::max(m, std::abs(v));
    }
  }
  return m;
}

bool GradientSet::operator==(const GradientSet& o) const noexcept {
  return architecture_id_ == o.architecture_id_ && layers_ == o.layers_;
}

GradientSet operator*(double alpha, GradientSet g) { return std::move(g.scale(alpha)); }
GradientSet operator+(GradientSet a, const GradientSet& b) { return std::move(a.axpy(1.0, b)); }
GradientSet operator-(GradientSet a, const GradientSet& b) { return std::move(a.axpy(-1.0, b)); }

GradientSet displacement(const ModelWeights& before, const ModelWeights& after,
                         double step_size) {
  require_congruent(before, after, "displacement");
  GradientSet g = GradientSet::zeros_like(before);
  const double inv = 1.0 / step_size;
  for (std::size_t i = 0; i < before.size(); ++i) {
    for (std::size_t s = 0; s < g.layers()[i].size(); ++s) {
      auto& out = g.at(i, s).raw();
      const auto& b = before.layer(i).params[s].raw();
      const auto& a = after.layer(i).params[s].raw();
      for (std::size_t j = 0; j < out.size(); ++j) out[j] = (b[j] - a[j]) * inv;
    }
  }
  return g;
}

}  // namespace iopfl::nn
