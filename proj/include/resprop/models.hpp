#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "resprop/init.hpp"
#include "resprop/layers.hpp"

namespace resprop {

enum class Family { FcLinear, FcRelu, ConvRelu };

enum class VariantKind { BnBranch, SkipInit, DivideBySqrt2, BnBranchAndBnSkip, NoNorm, Fixup };

struct BlockVariant {
  VariantKind kind = VariantKind::BnBranch;
  double alpha = 0.0;  // SkipInit initial multiplier
};

inline std::string family_name(Family f) {
  switch (f) {
    case Family::FcLinear: return "fc-linear";
    case Family::FcRelu: return "fc-relu";
    case Family::ConvRelu: return "conv-relu";
  }
  return "?";
}

inline std::string variant_name(const BlockVariant& v) {
  switch (v.kind) {
    case VariantKind::BnBranch: return "bn";
    case VariantKind::SkipInit: {
      std::string a = std::to_string(v.alpha);
      a.erase(a.find_last_not_of('0') + 1);
      if (!a.empty() && a.back() == '.') a.pop_back();
      return "skipinit:" + a;
    }
    case VariantKind::DivideBySqrt2: return "divide-sqrt2";
    case VariantKind::BnBranchAndBnSkip: return "bn-skip";
    case VariantKind::NoNorm: return "nonorm";
    case VariantKind::Fixup: return "fixup";
  }
  return "?";
}

struct NetworkSpec {
  Family family = Family::FcRelu;
  std::size_t width = 128;      // FC features, or conv channels
  std::size_t depth = 1;        // residual block count
  BlockVariant variant{};
  std::size_t in_features = 0;  // FC input features, or conv input channels
  int classes = 0;              // 0 = headless backbone
  bool final_bn_only = false;   // strip branch norms, one norm before the readout
  double dropout = 0.0;         // drop probability before the readout
  bool use_biases = false;      // biases on linear/conv layers
  int branch_layers = 1;        // weighted layers per residual branch
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.9;
  std::size_t ghost_size = 0;   // 0 = full batch
};

/// Identity skip plus a residual branch; the block computes
/// post_merge(merge_scale * (x + branch(x))).
template <typename T>
struct ResidualBlock {
  std::vector<std::unique_ptr<Layer<T>>> branch;
  std::unique_ptr<Layer<T>> post_merge;
  T merge_scale = T(1);
};

/// Called per block during forward with (block index, skip input, branch output).
template <typename T>
using BlockObserver = std::function<void(std::size_t, const Tensor<T>&, const Tensor<T>&)>;

template <typename T>
class Network {
 public:
  explicit Network(NetworkSpec spec) : spec_(std::move(spec)) {}

  const NetworkSpec& spec() const { return spec_; }
  std::vector<std::unique_ptr<Layer<T>>>& stem() { return stem_; }
  std::vector<ResidualBlock<T>>& blocks() { return blocks_; }
  std::vector<std::unique_ptr<Layer<T>>>& head() { return head_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng,
                    const BlockObserver<T>* observer = nullptr) {
    validate_input(x);
    Tensor<T> t = x;
    for (auto& layer : stem_) t = layer->forward(t, mode, rng);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      ResidualBlock<T>& block = blocks_[b];
      Tensor<T> branch_out = t;
      for (auto& layer : block.branch) branch_out = layer->forward(branch_out, mode, rng);
      if (observer) (*observer)(b, t, branch_out);
      Tensor<T> merged = std::move(branch_out);
      merged += t;
      if (block.merge_scale != T(1)) merged.scale(block.merge_scale);
      if (block.post_merge) merged = block.post_merge->forward(merged, mode, rng);
      t = std::move(merged);
    }
    for (auto& layer : head_) t = layer->forward(t, mode, rng);
    return t;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    Tensor<T> g = grad_out;
    for (auto it = head_.rbegin(); it != head_.rend(); ++it) g = (*it)->backward(g);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      ResidualBlock<T>& block = *it;
      if (block.post_merge) g = block.post_merge->backward(g);
      if (block.merge_scale != T(1)) g.scale(block.merge_scale);
      Tensor<T> gb = g;
      for (auto lit = block.branch.rbegin(); lit != block.branch.rend(); ++lit)
        gb = (*lit)->backward(gb);
      g += gb;
    }
    for (auto it = stem_.rbegin(); it != stem_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<ParamSlot<T>*> params() {
    std::vector<ParamSlot<T>*> out;
    for_each_layer([&](Layer<T>& l) {
      for (ParamSlot<T>* p : l.params()) out.push_back(p);
    });
    return out;
  }

  void zero_grad() {
    for (ParamSlot<T>* p : params()) p->grad.fill(T(0));
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (ParamSlot<T>* p : params()) n += p->value.size();
    return n;
  }

  std::vector<BatchNorm<T>*> batchnorms() {
    std::vector<BatchNorm<T>*> out;
    for_each_layer([&](Layer<T>& l) {
      if (l.kind() == LayerKind::BatchNorm) out.push_back(static_cast<BatchNorm<T>*>(&l));
    });
    return out;
  }

  /// The branch normalization layer of one block, or null.
  BatchNorm<T>* branch_batchnorm(std::size_t block) {
    for (auto& layer : blocks_.at(block).branch)
      if (layer->kind() == LayerKind::BatchNorm) return static_cast<BatchNorm<T>*>(layer.get());
    return nullptr;
  }

  std::vector<ScalarMultiplier<T>*> multipliers() {
    std::vector<ScalarMultiplier<T>*> out;
    for_each_layer([&](Layer<T>& l) {
      if (l.kind() == LayerKind::ScalarMultiplier)
        out.push_back(static_cast<ScalarMultiplier<T>*>(&l));
    });
    return out;
  }

  std::vector<ScalarBias<T>*> scalar_biases() {
    std::vector<ScalarBias<T>*> out;
    for_each_layer([&](Layer<T>& l) {
      if (l.kind() == LayerKind::ScalarBias) out.push_back(static_cast<ScalarBias<T>*>(&l));
    });
    return out;
  }

  /// Weighted layers (Linear/Conv2D) on one residual branch, in order.
  std::vector<Layer<T>*> branch_weighted_layers(std::size_t block) {
    std::vector<Layer<T>*> out;
    for (auto& layer : blocks_.at(block).branch)
      if (layer->kind() == LayerKind::Linear || layer->kind() == LayerKind::Conv2D)
        out.push_back(layer.get());
    return out;
  }

  /// The readout linear layer, or null for headless backbones.
  Linear<T>* classifier() {
    for (auto it = head_.rbegin(); it != head_.rend(); ++it)
      if ((*it)->kind() == LayerKind::Linear) return static_cast<Linear<T>*>(it->get());
    return nullptr;
  }

  void set_ghost_size(std::size_t g) {
    for (BatchNorm<T>* bn : batchnorms()) bn->set_ghost_size(g);
  }

  template <typename Fn>
  void for_each_layer(Fn&& fn) {
    for (auto& l : stem_) fn(*l);
    for (auto& block : blocks_) {
      for (auto& l : block.branch) fn(*l);
      if (block.post_merge) fn(*block.post_merge);
    }
    for (auto& l : head_) fn(*l);
  }

 private:
  void validate_input(const Tensor<T>& x) const {
    if (spec_.family == Family::ConvRelu) {
      if (x.rank() != 4 || x.extent(3) != spec_.in_features)
        throw std::invalid_argument("Network: conv input must be N x H x W x " +
                                    std::to_string(spec_.in_features));
      if (x.extent(1) < 4 || x.extent(2) < 4)
        throw std::invalid_argument(
            "Network: spatial extents too small for two stride-2 stem convolutions");
    } else {
      if (x.rank() != 2 || x.extent(1) != spec_.in_features)
        throw std::invalid_argument("Network: input must be N x " +
                                    std::to_string(spec_.in_features));
    }
  }

  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer<T>>> stem_;
  std::vector<ResidualBlock<T>> blocks_;
  std::vector<std::unique_ptr<Layer<T>>> head_;
};

namespace detail {

template <typename T>
void init_weight(Tensor<T>& w, std::size_t fan_in, Family family, Rng& rng) {
  if (family == Family::FcLinear)
    lecun_init(w, fan_in, rng);
  else
    he_init(w, fan_in, rng);
}

template <typename T>
std::unique_ptr<Linear<T>> make_linear(std::size_t in, std::size_t out, const NetworkSpec& spec,
                                       Rng& rng) {
  auto layer = std::make_unique<Linear<T>>(in, out, spec.use_biases);
  init_weight(layer->weight().value, layer->fan_in(), spec.family, rng);
  return layer;
}

template <typename T>
std::unique_ptr<Conv2D<T>> make_conv(std::size_t cin, std::size_t cout, std::size_t stride,
                                     const NetworkSpec& spec, Rng& rng) {
  auto layer = std::make_unique<Conv2D<T>>(3, 3, cin, cout, stride, Padding::Same, spec.use_biases);
  init_weight(layer->kernel().value, layer->fan_in(), spec.family, rng);
  return layer;
}

template <typename T>
std::unique_ptr<BatchNorm<T>> make_bn(std::size_t channels, const NetworkSpec& spec) {
  return std::make_unique<BatchNorm<T>>(channels, spec.bn_epsilon, spec.bn_momentum,
                                        spec.ghost_size);
}

}  // namespace detail

template <typename T>
void apply_skipinit(Network<T>& network, double alpha);
template <typename T>
void apply_fixup(Network<T>& network, std::size_t d, int m, Rng& rng);

/// Builds the residual network described by spec. Branch layouts per family
/// (one weighted layer per branch; a second repeats the unit):
///   fc-linear: [BN] Linear            conv/fc-relu: [BN] ReLU Linear|Conv
/// SkipInit appends a scalar multiplier, Fixup brackets layers with scalar
/// biases and appends a unit multiplier, divide-sqrt2 scales the block sum,
/// bn-skip adds a normalization after the merge.
template <typename T>
Network<T> build_network(const NetworkSpec& spec, Rng& rng) {
  if (spec.depth < 1) throw std::invalid_argument("build_network: depth must be >= 1");
  if (spec.width < 2) throw std::invalid_argument("build_network: width must be >= 2");
  if (spec.in_features == 0) throw std::invalid_argument("build_network: in_features unset");
  if (spec.branch_layers < 1 || spec.branch_layers > 2)
    throw std::invalid_argument("build_network: branch_layers must be 1 or 2");
  if (spec.variant.kind == VariantKind::SkipInit && !std::isfinite(spec.variant.alpha))
    throw std::invalid_argument("build_network: non-finite SkipInit alpha");
  if (spec.final_bn_only && spec.classes == 0)
    throw std::invalid_argument("build_network: final_bn_only needs a classifier head");

  const bool conv = spec.family == Family::ConvRelu;
  const bool with_relu = spec.family != Family::FcLinear;
  const bool branch_bn = !spec.final_bn_only && (spec.variant.kind == VariantKind::BnBranch ||
                                                 spec.variant.kind == VariantKind::BnBranchAndBnSkip);
  const bool fixup = spec.variant.kind == VariantKind::Fixup;

  Network<T> net(spec);
  const std::size_t w = spec.width;

  // stem
  if (conv) {
    net.stem().push_back(detail::make_conv<T>(spec.in_features, w, 2, spec, rng));
    if (branch_bn) net.stem().push_back(detail::make_bn<T>(w, spec));
    net.stem().push_back(std::make_unique<ReLU<T>>());
    net.stem().push_back(detail::make_conv<T>(w, w, 2, spec, rng));
  } else {
    if (branch_bn) net.stem().push_back(detail::make_bn<T>(spec.in_features, spec));
    if (with_relu && branch_bn) net.stem().push_back(std::make_unique<ReLU<T>>());
    net.stem().push_back(detail::make_linear<T>(spec.in_features, w, spec, rng));
  }

  // residual blocks
  for (std::size_t b = 0; b < spec.depth; ++b) {
    ResidualBlock<T> block;
    for (int unit = 0; unit < spec.branch_layers; ++unit) {
      if (branch_bn) block.branch.push_back(detail::make_bn<T>(w, spec));
      if (with_relu) {
        if (fixup) block.branch.push_back(std::make_unique<ScalarBias<T>>());
        block.branch.push_back(std::make_unique<ReLU<T>>());
      }
      if (fixup) block.branch.push_back(std::make_unique<ScalarBias<T>>());
      if (conv)
        block.branch.push_back(detail::make_conv<T>(w, w, 1, spec, rng));
      else
        block.branch.push_back(detail::make_linear<T>(w, w, spec, rng));
    }
    if (spec.variant.kind == VariantKind::SkipInit)
      block.branch.push_back(std::make_unique<ScalarMultiplier<T>>(spec.variant.alpha));
    if (fixup) block.branch.push_back(std::make_unique<ScalarMultiplier<T>>(1.0));
    if (spec.variant.kind == VariantKind::DivideBySqrt2)
      block.merge_scale = static_cast<T>(1.0 / std::sqrt(2.0));
    if (spec.variant.kind == VariantKind::BnBranchAndBnSkip)
      block.post_merge = detail::make_bn<T>(w, spec);
    net.blocks().push_back(std::move(block));
  }

  // classifier head
  if (spec.classes > 0) {
    net.head().push_back(std::make_unique<ReLU<T>>());
    if (conv) net.head().push_back(std::make_unique<GlobalMeanPool<T>>());
    if (spec.final_bn_only) net.head().push_back(detail::make_bn<T>(w, spec));
    if (spec.dropout > 0.0) net.head().push_back(std::make_unique<Dropout<T>>(spec.dropout));
    auto readout = std::make_unique<Linear<T>>(w, static_cast<std::size_t>(spec.classes), true);
    detail::init_weight(readout->weight().value, readout->fan_in(), spec.family, rng);
    net.head().push_back(std::move(readout));
  }

  if (fixup) apply_fixup(net, spec.depth, spec.branch_layers, rng);
  return net;
}

/// Reference network: residual branches of one linear layer, LeCun init,
/// optional normalization on stem and branches.
template <typename T>
Network<T> build_fc_linear(std::size_t width, std::size_t depth, bool normalized,
                           std::size_t in_features, Rng& rng) {
  NetworkSpec spec;
  spec.family = Family::FcLinear;
  spec.width = width;
  spec.depth = depth;
  spec.in_features = in_features;
  spec.variant.kind = normalized ? VariantKind::BnBranch : VariantKind::NoNorm;
  return build_network<T>(spec, rng);
}

/// Reference network: normalized branches with a ReLU after each norm, He init.
template <typename T>
Network<T> build_fc_relu(std::size_t width, std::size_t depth, std::size_t in_features, Rng& rng) {
  NetworkSpec spec;
  spec.family = Family::FcRelu;
  spec.width = width;
  spec.depth = depth;
  spec.in_features = in_features;
  spec.variant.kind = VariantKind::BnBranch;
  return build_network<T>(spec, rng);
}

/// Reference network: two stride-2 stem convolutions then stride-1 residual
/// blocks, He init.
template <typename T>
Network<T> build_conv_resnet(std::size_t channels, std::size_t depth, std::size_t in_channels,
                             Rng& rng) {
  NetworkSpec spec;
  spec.family = Family::ConvRelu;
  spec.width = channels;
  spec.depth = depth;
  spec.in_features = in_channels;
  spec.variant.kind = VariantKind::BnBranch;
  return build_network<T>(spec, rng);
}

/// Backbone plus final ReLU, optional global pool, optional dropout, and a
/// K-way linear readout.
template <typename T>
Network<T> build_classifier(NetworkSpec spec, int classes, Rng& rng) {
  if (spec.family == Family::FcLinear)
    throw std::invalid_argument("build_classifier: family must be fc-relu or conv-relu");
  spec.classes = classes;
  return build_network<T>(spec, rng);
}

/// Sets every branch-end multiplier to alpha. With alpha = 0 each residual
/// block computes the identity at initialization.
template <typename T>
void apply_skipinit(Network<T>& network, double alpha) {
  if (!std::isfinite(alpha)) throw std::invalid_argument("apply_skipinit: non-finite alpha");
  auto mults = network.multipliers();
  if (mults.empty())
    throw std::invalid_argument("apply_skipinit: network has no scalar multipliers");
  for (ScalarMultiplier<T>* m : mults) m->set_value(static_cast<T>(alpha));
}

/// Zeroes the classifier and the final weighted layer of each branch, scales
/// the remaining branch weights by d^(-1/(2m-2)), sets multipliers to one and
/// scalar biases to zero.
template <typename T>
void apply_fixup(Network<T>& network, std::size_t d, int m, Rng& rng) {
  if (m < 2) throw std::invalid_argument("apply_fixup: m must be >= 2");
  if (d != network.blocks().size())
    throw std::invalid_argument("apply_fixup: d does not match the block count");
  const double scale =
      std::pow(static_cast<double>(d), -1.0 / (2.0 * static_cast<double>(m) - 2.0));
  for (std::size_t b = 0; b < d; ++b) {
    auto weighted = network.branch_weighted_layers(b);
    if (weighted.empty()) throw std::invalid_argument("apply_fixup: branch has no weighted layer");
    for (std::size_t i = 0; i < weighted.size(); ++i) {
      Layer<T>* layer = weighted[i];
      Tensor<T>& w = layer->kind() == LayerKind::Linear
                         ? static_cast<Linear<T>*>(layer)->weight().value
                         : static_cast<Conv2D<T>*>(layer)->kernel().value;
      const std::size_t fan_in = layer->kind() == LayerKind::Linear
                                     ? static_cast<Linear<T>*>(layer)->fan_in()
                                     : static_cast<Conv2D<T>*>(layer)->fan_in();
      if (i + 1 == weighted.size()) {
        zero_init(w);
      } else {
        he_init(w, fan_in, rng);
        w.scale(static_cast<T>(scale));
      }
    }
  }
  for (ScalarMultiplier<T>* mult : network.multipliers()) mult->set_value(T(1));
  for (ScalarBias<T>* sb : network.scalar_biases()) sb->bias().value.fill(T(0));
  if (Linear<T>* readout = network.classifier()) {
    zero_init(readout->weight().value);
    if (readout->bias()) readout->bias()->value.fill(T(0));
  }
}

}  // namespace resprop
