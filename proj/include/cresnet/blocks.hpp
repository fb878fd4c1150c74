#pragma once

// Trainable modules: conv+bn units, jumpers, and the block wiring.
//
// Cross blocks add shortcuts after each layer's ReLU; baseline blocks add
// before the final ReLU. Both follow from the same slot table in arch.hpp,
// so the wiring here matches what the cost analyzer counted.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cresnet/arch.hpp"
#include "cresnet/tensor.hpp"

namespace cresnet {

template <typename T>
using Observer = std::function<void(const std::string&, const Tensor<T>&)>;

template <typename T>
struct ConvBn {
  Tensor<T> w;  // (Cout, Cin, k, k)
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  Tensor<T> gamma, beta;
  BnState<T> bn{0};

  // Pre-activation output; the caller decides where ReLU goes.
  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return batchnorm2d(conv2d(x, w, stride, pad), gamma, beta, bn, training);
  }
};

template <typename T>
struct JumperMod {
  JumperKind kind = JumperKind::Solid;
  bool has_bn = false;
  int src_tap = 0;
  int dest_layer = 0;
  std::int64_t stride = 1;
  Tensor<T> w;  // dashed only: (Cout, Cin, 1, 1)
  Tensor<T> gamma, beta;
  BnState<T> bn{0};

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    if (kind == JumperKind::Solid) return x;
    Tensor<T> y = conv2d(x, w, stride, 0);
    return has_bn ? batchnorm2d(y, gamma, beta, bn, training) : y;
  }
};

template <typename T>
struct Block {
  BlockKind kind = BlockKind::Cross3x3;
  std::vector<ConvBn<T>> layers;
  std::vector<JumperMod<T>> jumpers;

  Tensor<T> forward(const Tensor<T>& x, bool training, const Observer<T>* obs = nullptr,
                    const std::string& prefix = "") {
    const bool baseline = kind == BlockKind::Basic || kind == BlockKind::Bottleneck;
    std::vector<Tensor<T>> taps = {x};
    for (size_t l = 1; l <= layers.size(); ++l) {
      Tensor<T> y = layers[l - 1].forward(taps[l - 1], training);
      const bool last = l == layers.size();
      if (baseline && last) {
        for (auto& j : jumpers)
          if (j.dest_layer == static_cast<int>(l))
            y = add(y, j.forward(taps[static_cast<size_t>(j.src_tap)], training));
        y = relu(y);
      } else {
        y = relu(y);
        for (auto& j : jumpers)
          if (j.dest_layer == static_cast<int>(l))
            y = add(y, j.forward(taps[static_cast<size_t>(j.src_tap)], training));
      }
      taps.push_back(y);
      if (obs) (*obs)(prefix + ".l" + std::to_string(l), y);
    }
    return taps.back();
  }
};

}  // namespace cresnet
