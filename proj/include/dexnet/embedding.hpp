#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dexnet/architectures.hpp"
#include "dexnet/weights.hpp"

namespace dexnet {

/// One critic's observation of one image.
struct Embedding {
  CriticId critic = CriticId::resnet18;
  std::string weights_hash;
  WeightsState state = WeightsState::generic_pretrained;
  std::string sample_id;
  std::vector<float> vector;

  bool finite() const {
    for (float v : vector) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

}  // namespace dexnet
