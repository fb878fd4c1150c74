#pragma once

// Model assembly: builds trainable modules from a NetPlan, owns the
// classifier head, and exposes stable-order walkers over parameters and
// batchnorm state. The walk order is the serialization order, so it must
// never change: stem, then stages (layers before jumpers), then fc.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cresnet/arch.hpp"
#include "cresnet/blocks.hpp"
#include "cresnet/tensor.hpp"

namespace cresnet {

template <typename T>
struct Model {
  ArchSpec spec;
  NetPlan plan;
  std::int64_t classes = 0;
  std::vector<ConvBn<T>> stem;
  std::vector<std::vector<Block<T>>> stages;
  Tensor<T> fc_w, fc_b;
  bool training = true;

  void set_training(bool on) { training = on; }

  Tensor<T> forward(const Tensor<T>& x, const Observer<T>* obs = nullptr) {
    if (x.shape().size() != 4 || x.dim(1) != spec.input_channels)
      throw ShapeError("model " + spec.name + " expects (N," +
                       std::to_string(spec.input_channels) + ",H,W), got " +
                       shape_str(x.shape()));
    Tensor<T> y = x;
    for (size_t i = 0; i < stem.size(); ++i) {
      y = relu(stem[i].forward(y, training));
      if (obs) (*obs)("stem." + std::to_string(i), y);
    }
    for (size_t s = 0; s < stages.size(); ++s)
      for (size_t b = 0; b < stages[s].size(); ++b)
        y = stages[s][b].forward(y, training, obs,
                                 "s" + std::to_string(s) + ".b" + std::to_string(b));
    y = global_avg_pool(y);
    if (obs) (*obs)("pool", y);
    y = linear(y, fc_w, fc_b);
    if (obs) (*obs)("logits", y);
    return y;
  }

  // fn(name, Tensor&) over every trainable parameter, in serialization order.
  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    auto conv_bn = [&](const std::string& prefix, ConvBn<T>& m) {
      fn(prefix + ".conv.weight", m.w);
      fn(prefix + ".bn.gamma", m.gamma);
      fn(prefix + ".bn.beta", m.beta);
    };
    for (size_t i = 0; i < stem.size(); ++i) conv_bn("stem." + std::to_string(i), stem[i]);
    for (size_t s = 0; s < stages.size(); ++s)
      for (size_t b = 0; b < stages[s].size(); ++b) {
        const std::string bp = "s" + std::to_string(s) + ".b" + std::to_string(b);
        Block<T>& block = stages[s][b];
        for (size_t l = 0; l < block.layers.size(); ++l)
          conv_bn(bp + ".l" + std::to_string(l + 1), block.layers[l]);
        for (size_t k = 0; k < block.jumpers.size(); ++k) {
          JumperMod<T>& j = block.jumpers[k];
          if (j.kind == JumperKind::Solid) continue;
          const std::string jp = bp + ".j" + std::to_string(k + 1);
          fn(jp + ".conv.weight", j.w);
          if (j.has_bn) {
            fn(jp + ".bn.gamma", j.gamma);
            fn(jp + ".bn.beta", j.beta);
          }
        }
      }
    fn("fc.weight", fc_w);
    fn("fc.bias", fc_b);
  }

  // fn(name, BnState&) over every batchnorm, same traversal order.
  template <typename Fn>
  void for_each_bn_state(Fn&& fn) {
    for (size_t i = 0; i < stem.size(); ++i)
      fn("stem." + std::to_string(i) + ".bn", stem[i].bn);
    for (size_t s = 0; s < stages.size(); ++s)
      for (size_t b = 0; b < stages[s].size(); ++b) {
        const std::string bp = "s" + std::to_string(s) + ".b" + std::to_string(b);
        Block<T>& block = stages[s][b];
        for (size_t l = 0; l < block.layers.size(); ++l)
          fn(bp + ".l" + std::to_string(l + 1) + ".bn", block.layers[l].bn);
        for (size_t k = 0; k < block.jumpers.size(); ++k)
          if (block.jumpers[k].has_bn)
            fn(bp + ".j" + std::to_string(k + 1) + ".bn", block.jumpers[k].bn);
      }
  }

  // Audit count from the live tensors; must agree with the static analyzer.
  std::int64_t parameter_count() {
    std::int64_t total = 0;
    for_each_parameter([&](const std::string&, Tensor<T>& p) { total += p.size(); });
    return total;
  }

  void zero_grad() {
    for_each_parameter([](const std::string&, Tensor<T>& p) { p.zero_grad(); });
  }

  // Name of the first activation containing a non-finite value, or "".
  std::string first_nonfinite(const Tensor<T>& x) {
    NoGradGuard no_grad;
    std::string first;
    Observer<T> obs = [&](const std::string& name, const Tensor<T>& t) {
      if (first.empty() && !all_finite(t)) first = name;
    };
    if (!all_finite(x)) return "input";
    (void)forward(x, &obs);
    return first;
  }
};

namespace detail {

template <typename T>
ConvBn<T> make_conv_bn(const LayerPlan& l, std::mt19937& rng) {
  ConvBn<T> m;
  const T stddev = std::sqrt(T(2) / static_cast<T>(l.kernel * l.kernel * l.in_channels));
  m.w = Tensor<T>::randn({l.out_channels, l.in_channels, l.kernel, l.kernel}, rng, stddev);
  m.w.set_requires_grad(true);
  m.stride = l.stride;
  m.pad = l.pad;
  m.gamma = Tensor<T>::ones({l.out_channels});
  m.beta = Tensor<T>::zeros({l.out_channels});
  m.gamma.set_requires_grad(true);
  m.beta.set_requires_grad(true);
  m.bn = BnState<T>(l.out_channels);
  return m;
}

}  // namespace detail

// Builds a model with Kaiming-normal (fan-in) conv and fc weights drawn from
// a single generator in serialization order, gamma=1, beta=0, zero fc bias.
template <typename T>
Model<T> build_model(const ArchSpec& spec, std::int64_t classes, std::uint64_t seed) {
  if (classes <= 0) throw SpecError("classes must be positive");
  Model<T> model;
  model.spec = spec;
  model.plan = expand(spec);
  model.classes = classes;
  std::mt19937 rng(static_cast<std::uint32_t>(seed));

  for (const LayerPlan& l : model.plan.stem)
    model.stem.push_back(detail::make_conv_bn<T>(l, rng));

  for (const auto& stage_plan : model.plan.stages) {
    std::vector<Block<T>> blocks;
    for (const BlockPlan& bp : stage_plan) {
      Block<T> block;
      block.kind = bp.kind;
      for (const LayerPlan& l : bp.layers)
        block.layers.push_back(detail::make_conv_bn<T>(l, rng));
      for (const JumperPlan& jp : bp.jumpers) {
        JumperMod<T> j;
        j.kind = jp.kind;
        j.has_bn = jp.bn;
        j.src_tap = jp.src_tap;
        j.dest_layer = jp.dest_layer;
        j.stride = jp.stride;
        if (jp.kind == JumperKind::Dashed) {
          const T stddev = std::sqrt(T(2) / static_cast<T>(jp.in_channels));
          j.w = Tensor<T>::randn({jp.out_channels, jp.in_channels, 1, 1}, rng, stddev);
          j.w.set_requires_grad(true);
          if (jp.bn) {
            j.gamma = Tensor<T>::ones({jp.out_channels});
            j.beta = Tensor<T>::zeros({jp.out_channels});
            j.gamma.set_requires_grad(true);
            j.beta.set_requires_grad(true);
            j.bn = BnState<T>(jp.out_channels);
          }
        }
        block.jumpers.push_back(std::move(j));
      }
      blocks.push_back(std::move(block));
    }
    model.stages.push_back(std::move(blocks));
  }

  const T fc_std = std::sqrt(T(2) / static_cast<T>(model.plan.feature_channels));
  model.fc_w = Tensor<T>::randn({classes, model.plan.feature_channels}, rng, fc_std);
  model.fc_b = Tensor<T>::zeros({classes});
  model.fc_w.set_requires_grad(true);
  model.fc_b.set_requires_grad(true);
  return model;
}

}  // namespace cresnet
