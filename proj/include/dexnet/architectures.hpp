#pragma once

#include <array>
#include <memory>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "dexnet/layers.hpp"

namespace dexnet {

enum class CriticId { resnet18, resnet34, resnet50, resnet101, resnet152, densenet121, densenet161, densenet169, densenet201 };

/// Canonical critic order; fused vectors are laid out in this order.
inline constexpr std::array<CriticId, 9> kCanonicalCritics = {
    CriticId::resnet18,    CriticId::resnet34,    CriticId::resnet50,    CriticId::resnet101, CriticId::resnet152,
    CriticId::densenet121, CriticId::densenet161, CriticId::densenet169, CriticId::densenet201};

enum class ArchFamily { resnet_basic, resnet_bottleneck, densenet };

struct CriticInfo {
  CriticId id;
  std::string_view name;
  ArchFamily family;
  std::array<std::size_t, 4> blocks;
  std::size_t embedding_dim;      // penultimate width at full scale
  std::size_t init_features = 0;  // densenet stem width
  std::size_t growth_rate = 0;    // densenet
};

inline constexpr std::array<CriticInfo, 9> kCriticTable = {{
    {CriticId::resnet18, "resnet18", ArchFamily::resnet_basic, {2, 2, 2, 2}, 512},
    {CriticId::resnet34, "resnet34", ArchFamily::resnet_basic, {3, 4, 6, 3}, 512},
    {CriticId::resnet50, "resnet50", ArchFamily::resnet_bottleneck, {3, 4, 6, 3}, 2048},
    {CriticId::resnet101, "resnet101", ArchFamily::resnet_bottleneck, {3, 4, 23, 3}, 2048},
    {CriticId::resnet152, "resnet152", ArchFamily::resnet_bottleneck, {3, 8, 36, 3}, 2048},
    {CriticId::densenet121, "densenet121", ArchFamily::densenet, {6, 12, 24, 16}, 1024, 64, 32},
    {CriticId::densenet161, "densenet161", ArchFamily::densenet, {6, 12, 36, 24}, 2208, 96, 48},
    {CriticId::densenet169, "densenet169", ArchFamily::densenet, {6, 12, 32, 32}, 1664, 64, 32},
    {CriticId::densenet201, "densenet201", ArchFamily::densenet, {6, 12, 48, 32}, 1920, 64, 32},
}};

inline constexpr std::size_t kFusedDim = 13984;

inline constexpr const CriticInfo& critic_info(CriticId id) { return kCriticTable[static_cast<std::size_t>(id)]; }

inline constexpr std::size_t sum_of_dims(std::size_t divisor) {
  std::size_t total = 0;
  for (const auto& c : kCriticTable) total += c.embedding_dim / divisor;
  return total;
}
static_assert(sum_of_dims(1) == kFusedDim, "critic table must fuse to 13,984 dims");

inline std::string_view to_string(CriticId id) { return critic_info(id).name; }

inline CriticId critic_from_string(std::string_view name) {
  for (const auto& c : kCriticTable) {
    if (c.name == name) return c.id;
  }
  throw ConfigError("unknown critic '" + std::string(name) + "'");
}

/// Width and input resolution of a critic family instance. Full scale is
/// the standard ImageNet architecture; smaller scales divide every channel
/// count, keeping depth and topology.
struct CriticScale {
  std::size_t width_divisor = 1;
  std::size_t input_size = 224;

  friend bool operator==(const CriticScale&, const CriticScale&) = default;
};

inline constexpr CriticScale kFullScale{1, 224};
inline constexpr CriticScale kToyScale{16, 32};

inline std::size_t embedding_dim(CriticId id, CriticScale scale = kFullScale) {
  const auto& info = critic_info(id);
  if (info.embedding_dim % scale.width_divisor != 0) throw ConfigError("width divisor does not divide critic dims");
  return info.embedding_dim / scale.width_divisor;
}

namespace nn {

/// y = relu(branch(x) + shortcut(x)); identity shortcut when none is given.
template <typename T>
class Residual : public Module<T> {
 public:
  Residual(std::unique_ptr<Sequential<T>> branch, std::unique_ptr<Sequential<T>> shortcut)
      : branch_(std::move(branch)), shortcut_(std::move(shortcut)) {}

  Tensor<T> infer(const Tensor<T>& x) const override {
    Tensor<T> y = branch_->infer(x);
    y += shortcut_ ? shortcut_->infer(x) : x;
    return relu_.infer(y);
  }
  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> y = branch_->forward(x);
    y += shortcut_ ? shortcut_->forward(x) : x;
    return relu_.forward(y);
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    const Tensor<T> d = relu_.backward(g);
    Tensor<T> dx = branch_->backward(d);
    dx += shortcut_ ? shortcut_->backward(d) : d;
    return dx;
  }
  void visit(const std::string& prefix, const ParameterVisitor<T>& fn) override {
    branch_->visit(prefix, fn);
    if (shortcut_) shortcut_->visit(join_name(prefix, "downsample"), fn);
  }
  void release() override {
    branch_->release();
    if (shortcut_) shortcut_->release();
    relu_.release();
  }
  void walk(const std::function<void(Module<T>&)>& fn) override {
    branch_->walk(fn);
    if (shortcut_) shortcut_->walk(fn);
    fn(*this);
  }

 private:
  std::unique_ptr<Sequential<T>> branch_;
  std::unique_ptr<Sequential<T>> shortcut_;
  ReLU<T> relu_;
};

/// Layers whose outputs are appended to a growing channel stack.
template <typename T>
class DenseBlock : public Module<T> {
 public:
  void add_layer(std::unique_ptr<Sequential<T>> layer, std::size_t growth) {
    layers_.push_back(std::move(layer));
    growth_.push_back(growth);
  }

  Tensor<T> infer(const Tensor<T>& x) const override {
    Tensor<T> stack = x;
    for (const auto& layer : layers_) stack = concat_channels(stack, layer->infer(stack));
    return stack;
  }
  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> stack = x;
    for (auto& layer : layers_) stack = concat_channels(stack, layer->forward(stack));
    return stack;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> grad = g;
    std::size_t width = g.c();
    for (std::size_t i = layers_.size(); i-- > 0;) {
      width -= growth_[i];
      const Tensor<T> d_new = slice_channels(grad, width, growth_[i]);
      Tensor<T> d_in = layers_[i]->backward(d_new);
      grad = slice_channels(grad, 0, width);
      grad += d_in;
    }
    return grad;
  }
  void visit(const std::string& prefix, const ParameterVisitor<T>& fn) override {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i]->visit(join_name(prefix, "denselayer" + std::to_string(i + 1)), fn);
    }
  }
  void release() override {
    for (auto& l : layers_) l->release();
  }
  void walk(const std::function<void(Module<T>&)>& fn) override {
    for (auto& l : layers_) l->walk(fn);
    fn(*this);
  }

 private:
  std::vector<std::unique_ptr<Sequential<T>>> layers_;
  std::vector<std::size_t> growth_;
};

namespace detail {

template <typename T>
std::unique_ptr<Conv2d<T>> conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad,
                                Rng& rng) {
  auto c = std::make_unique<Conv2d<T>>(in, out, k, stride, pad);
  c->init(rng);
  return c;
}

template <typename T>
std::unique_ptr<Module<T>> resnet_block(ArchFamily family, std::size_t inplanes, std::size_t planes,
                                        std::size_t stride, bool avg_down, Rng& rng) {
  const std::size_t expansion = family == ArchFamily::resnet_bottleneck ? 4 : 1;
  auto branch = std::make_unique<Sequential<T>>();
  if (family == ArchFamily::resnet_basic) {
    branch->add("conv1", conv<T>(inplanes, planes, 3, stride, 1, rng));
    branch->add("bn1", std::make_unique<BatchNorm2d<T>>(planes));
    branch->add("", std::make_unique<ReLU<T>>());
    branch->add("conv2", conv<T>(planes, planes, 3, 1, 1, rng));
    branch->add("bn2", std::make_unique<BatchNorm2d<T>>(planes));
  } else {
    branch->add("conv1", conv<T>(inplanes, planes, 1, 1, 0, rng));
    branch->add("bn1", std::make_unique<BatchNorm2d<T>>(planes));
    branch->add("", std::make_unique<ReLU<T>>());
    branch->add("conv2", conv<T>(planes, planes, 3, stride, 1, rng));
    branch->add("bn2", std::make_unique<BatchNorm2d<T>>(planes));
    branch->add("", std::make_unique<ReLU<T>>());
    branch->add("conv3", conv<T>(planes, planes * expansion, 1, 1, 0, rng));
    branch->add("bn3", std::make_unique<BatchNorm2d<T>>(planes * expansion));
  }
  // zero-init residual: each fresh block starts as its shortcut
  const std::string last_bn = family == ArchFamily::resnet_basic ? "bn2.weight" : "bn3.weight";
  branch->visit("", [&](const std::string& name, Parameter<T>& p) {
    if (name == last_bn) p.value.fill(T(0));
  });
  std::unique_ptr<Sequential<T>> shortcut;
  if (stride != 1 || inplanes != planes * expansion) {
    shortcut = std::make_unique<Sequential<T>>();
    if (avg_down && stride != 1) {
      shortcut->add("", std::make_unique<AvgPool2d<T>>(stride));
      shortcut->add("0", conv<T>(inplanes, planes * expansion, 1, 1, 0, rng));
    } else {
      shortcut->add("0", conv<T>(inplanes, planes * expansion, 1, stride, 0, rng));
    }
    shortcut->add("1", std::make_unique<BatchNorm2d<T>>(planes * expansion));
  }
  return std::make_unique<Residual<T>>(std::move(branch), std::move(shortcut));
}

template <typename T>
std::unique_ptr<Sequential<T>> build_resnet(const CriticInfo& info, std::size_t divisor, bool stem_pool, Rng& rng) {
  const std::size_t expansion = info.family == ArchFamily::resnet_bottleneck ? 4 : 1;
  const std::size_t base = 64 / divisor;
  auto net = std::make_unique<Sequential<T>>();
  net->add("conv1", conv<T>(3, base, 7, 2, 3, rng));
  net->add("bn1", std::make_unique<BatchNorm2d<T>>(base));
  net->add("", std::make_unique<ReLU<T>>());
  if (stem_pool) net->add("", std::make_unique<MaxPool2d<T>>(3, 2, 1));
  std::size_t inplanes = base;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t planes = base << stage;
    auto layer = std::make_unique<Sequential<T>>();
    for (std::size_t b = 0; b < info.blocks[stage]; ++b) {
      const std::size_t stride = (b == 0 && stage > 0) ? 2 : 1;
      layer->add(std::to_string(b), resnet_block<T>(info.family, inplanes, planes, stride, !stem_pool, rng));
      inplanes = planes * expansion;
    }
    net->add("layer" + std::to_string(stage + 1), std::move(layer));
  }
  net->add("", std::make_unique<GlobalAvgPool<T>>());
  return net;
}

template <typename T>
std::unique_ptr<Sequential<T>> build_densenet(const CriticInfo& info, std::size_t divisor, bool stem_pool, Rng& rng) {
  constexpr std::size_t bn_size = 4;
  const std::size_t growth = info.growth_rate / divisor;
  std::size_t width = info.init_features / divisor;

  auto features = std::make_unique<Sequential<T>>();
  features->add("conv0", conv<T>(3, width, 7, 2, 3, rng));
  features->add("norm0", std::make_unique<BatchNorm2d<T>>(width));
  features->add("", std::make_unique<ReLU<T>>());
  if (stem_pool) features->add("", std::make_unique<MaxPool2d<T>>(3, 2, 1));
  for (std::size_t stage = 0; stage < 4; ++stage) {
    auto block = std::make_unique<DenseBlock<T>>();
    for (std::size_t l = 0; l < info.blocks[stage]; ++l) {
      auto layer = std::make_unique<Sequential<T>>();
      layer->add("norm1", std::make_unique<BatchNorm2d<T>>(width));
      layer->add("", std::make_unique<ReLU<T>>());
      layer->add("conv1", conv<T>(width, bn_size * growth, 1, 1, 0, rng));
      layer->add("norm2", std::make_unique<BatchNorm2d<T>>(bn_size * growth));
      layer->add("", std::make_unique<ReLU<T>>());
      layer->add("conv2", conv<T>(bn_size * growth, growth, 3, 1, 1, rng));
      block->add_layer(std::move(layer), growth);
      width += growth;
    }
    features->add("denseblock" + std::to_string(stage + 1), std::move(block));
    if (stage < 3) {
      auto transition = std::make_unique<Sequential<T>>();
      transition->add("norm", std::make_unique<BatchNorm2d<T>>(width));
      transition->add("", std::make_unique<ReLU<T>>());
      transition->add("conv", conv<T>(width, width / 2, 1, 1, 0, rng));
      transition->add("", std::make_unique<AvgPool2d<T>>(2));
      features->add("transition" + std::to_string(stage + 1), std::move(transition));
      width /= 2;
    }
  }
  features->add("norm5", std::make_unique<BatchNorm2d<T>>(width));

  auto net = std::make_unique<Sequential<T>>();
  net->add("features", std::move(features));
  net->add("", std::make_unique<ReLU<T>>());
  net->add("", std::make_unique<GlobalAvgPool<T>>());
  return net;
}

}  // namespace detail

/// Headless backbone: image batch (n, 3, s, s) -> pooled embedding (n, dim).
/// Parameter names follow the torchvision state-dict layout.
template <typename T>
std::unique_ptr<Sequential<T>> build_backbone(CriticId id, CriticScale scale, std::uint64_t seed) {
  const auto& info = critic_info(id);
  if (64 % scale.width_divisor != 0 || (info.growth_rate && info.growth_rate % scale.width_divisor != 0)) {
    throw ConfigError("width divisor " + std::to_string(scale.width_divisor) + " does not divide " +
                      std::string(info.name) + " widths");
  }
  Rng rng(derive_seed(seed, info.name));
  // Small inputs skip the stem max-pool so the last stage keeps a 2x2 map
  // instead of collapsing to a single position, and downsample residual
  // shortcuts by average pooling rather than strided 1x1 sampling.
  const bool stem_pool = scale.input_size >= 64;
  return info.family == ArchFamily::densenet ? detail::build_densenet<T>(info, scale.width_divisor, stem_pool, rng)
                                             : detail::build_resnet<T>(info, scale.width_divisor, stem_pool, rng);
}

}  // namespace nn
}  // namespace dexnet
