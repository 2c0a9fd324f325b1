#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dexnet/error.hpp"

namespace dexnet::nn {

enum class OptimizerKind { adam, rmsprop, sgd };

inline OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + name + "'");
}

inline std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::rmsprop: return "rmsprop";
    case OptimizerKind::sgd: return "sgd";
  }
  return "?";
}

/// First-order optimizer over a fixed list of parameter slots. Slot `i`
/// must refer to the same tensor on every call to `step`.
template <typename T>
class Optimizer {
 public:
  struct Slot {
    std::span<T> value;
    std::span<const T> grad;
  };

  Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {}

  void step(const std::vector<Slot>& slots) {
    if (first_.size() != slots.size()) {
      first_.assign(slots.size(), {});
      second_.assign(slots.size(), {});
      for (std::size_t i = 0; i < slots.size(); ++i) {
        first_[i].assign(slots[i].value.size(), 0.0);
        second_[i].assign(slots[i].value.size(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t s = 0; s < slots.size(); ++s) {
      auto value = slots[s].value;
      auto grad = slots[s].grad;
      auto& m = first_[s];
      auto& v = second_[s];
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        double update = 0.0;
        switch (kind_) {
          case OptimizerKind::adam:
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            update = lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            break;
          case OptimizerKind::rmsprop:
            v[i] = rho_ * v[i] + (1.0 - rho_) * g * g;
            update = lr_ * g / (std::sqrt(v[i]) + eps_);
            break;
          case OptimizerKind::sgd:
            update = lr_ * g;
            break;
        }
        value[i] = static_cast<T>(static_cast<double>(value[i]) - update);
      }
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, rho_ = 0.9, eps_ = 1e-7;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> first_, second_;
};

}  // namespace dexnet::nn
