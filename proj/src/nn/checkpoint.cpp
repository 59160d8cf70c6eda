#include "nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "nn/error.hpp"

namespace iopfl::nn {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "iopfl-checkpoint";
constexpr int kVersion = 1;

fs::path with_suffix(const fs::path& prefix, const char* ext) {
  fs::path p = prefix;
  p += ext;
  return p;
}

const char* slot_name(const LayerSpec& spec, std::size_t slot) {
  if (spec.is_conv()) return slot == kKernel ? "kernel" : "bias";
  static const char* bn[] = {"gamma", "beta", "running_mean", "running_var"};
  return bn[slot];
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

}  // namespace

void save_checkpoint(const ModelWeights& model, const fs::path& prefix) {
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kVersion;
  manifest["architecture_id"] = model.architecture_id();
  manifest["in_channels"] = model.in_channels();
  manifest["dtype"] = "float64-le";
  json layers = json::array();
  std::uint64_t offset = 0;

  std::ofstream bin(with_suffix(prefix, ".bin"), std::ios::binary | std::ios::trunc);
  if (!bin) fail(ErrorKind::kIo, "cannot write " + with_suffix(prefix, ".bin").string());
  for (const auto& l : model.layers()) {
    json jl;
    jl["name"] = l.name;
    jl["kind"] = std::string(to_string(l.spec.kind));
    jl["in_channels"] = l.spec.in_channels;
    jl["out_channels"] = l.spec.out_channels;
    jl["inputs"] = l.inputs;
    json tensors = json::array();
    for (std::size_t s = 0; s < l.params.size(); ++s) {
      const Tensor& t = l.params[s];
      tensors.push_back({{"name", l.name + "." + slot_name(l.spec, s)},
                         {"shape", t.shape()},
                         {"offset", offset}});
      for (double v : t.raw()) {
        const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(v));
        bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      }
      offset += t.size() * sizeof(double);
    }
    jl["tensors"] = std::move(tensors);
    layers.push_back(std::move(jl));
  }
  manifest["layers"] = std::move(layers);
  manifest["total_bytes"] = offset;
  bin.close();
  if (!bin) fail(ErrorKind::kIo, "failed writing " + with_suffix(prefix, ".bin").string());

  std::ofstream js(with_suffix(prefix, ".json"), std::ios::trunc);
  if (!js) fail(ErrorKind::kIo, "cannot write " + with_suffix(prefix, ".json").string());
  js << manifest.dump(2) << '\n';
}

bool checkpoint_exists(const fs::path& prefix) {
  return fs::exists(with_suffix(prefix, ".bin")) && fs::exists(with_suffix(prefix, ".json"));
}

ModelWeights load_checkpoint(const fs::path& prefix) {
  const fs::path jpath = with_suffix(prefix, ".json");
  const fs::path bpath = with_suffix(prefix, ".bin");
  if (!checkpoint_exists(prefix)) fail(ErrorKind::kIo, "missing checkpoint " + prefix.string());
  json manifest;
  try {
    std::ifstream js(jpath);
    manifest = json::parse(js);
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, "corrupt manifest " + jpath.string() + ": " + e.what());
  }
  std::ifstream bin(bpath, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  try {
    if (manifest.at("format") != kFormat || manifest.at("version") != kVersion) {
      fail(ErrorKind::kIo, "unsupported checkpoint format in " + jpath.string());
    }
    const auto total = manifest.at("total_bytes").get<std::uint64_t>();
    if (bytes.size() != total) {
      fail(ErrorKind::kIo, "checkpoint " + bpath.string() + " has " +
                               std::to_string(bytes.size()) + " bytes, manifest says " +
                               std::to_string(total));
    }
    std::vector<Layer> layers;
    for (const auto& jl : manifest.at("layers")) {
      Layer l;
      l.name = jl.at("name").get<std::string>();
      l.spec = {layer_kind_from_string(jl.at("kind").get<std::string>()),
                jl.at("in_channels").get<std::size_t>(), jl.at("out_channels").get<std::size_t>()};
      l.inputs = jl.at("inputs").get<std::vector<int>>();
      for (const auto& jt : jl.at("tensors")) {
        const auto shape = jt.at("shape").get<Shape4>();
        const auto off = jt.at("offset").get<std::uint64_t>();
        const std::size_t count = shape_volume(shape);
        if (off + count * sizeof(double) > bytes.size()) {
          fail(ErrorKind::kIo, "tensor " + jt.at("name").get<std::string>() + " out of range");
        }
        std::vector<double> data(count);
        for (std::size_t i = 0; i < count; ++i) {
          std::uint64_t bits;
          std::memcpy(&bits, bytes.data() + off + i * sizeof bits, sizeof bits);
          data[i] = std::bit_cast<double>(to_le(bits));
        }
        l.params.emplace_back(shape, std::move(data));
      }
      const std::size_t expected =
          l.spec.is_conv() ? 2 : (l.spec.kind == LayerKind::kBatchNorm ? 4 : 0);
      if (l.params.size() != expected) {
        fail(ErrorKind::kIo, "layer " + l.name + " has wrong tensor count");
      }
      layers.push_back(std::move(l));
    }
    return ModelWeights(manifest.at("architecture_id").get<std::string>(),
                        manifest.at("in_channels").get<std::size_t>(), std::move(layers));
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, "malformed manifest " + jpath.string() + ": " + e.what());
  }
}

}  // namespace iopfl::nn
