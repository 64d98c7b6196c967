#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "crs/tensor.hpp"

namespace crs {

// Linear warmup to the peak rate, then polynomial decay to zero at
// total_updates. Updates are counted from 1.
struct WarmupPolyDecay {
  std::int64_t warmup_updates = 1000;
  std::int64_t total_updates = 1;
  double power = 1.0;

  double factor(std::int64_t update) const {
    if (update <= 0) return 0.0;
    if (warmup_updates > 0 && update <= warmup_updates) {
      return static_cast<double>(update) / static_cast<double>(warmup_updates);
    }
    if (update >= total_updates) return 0.0;
    const double span = static_cast<double>(total_updates - warmup_updates);
    if (span <= 0.0) return 0.0;
    const double remaining = 1.0 - static_cast<double>(update - warmup_updates) / span;
    return std::pow(remaining, power);
  }
};

struct ParamGroup {
  std::vector<ad::Tensor> params;
  double peak_lr = 5e-3;
};

struct AdamState {
  ad::Matrix m;
  ad::Matrix v;
};

class Adam {
 public:
  explicit Adam(std::vector<ParamGroup> groups, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& g : groups_) {
      if (!(g.peak_lr > 0.0)) throw std::invalid_argument("Adam: learning rates must be positive");
      std::vector<AdamState> st;
      for (const auto& p : g.params) {
        st.push_back({ad::Matrix::Zero(p.rows(), p.cols()), ad::Matrix::Zero(p.rows(), p.cols())});
      }
      state_.push_back(std::move(st));
    }
  }

  // Applies one update with every group's rate scaled by lr_factor.
  void step(double lr_factor) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      const double lr = groups_[gi].peak_lr * lr_factor;
      for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
        auto& p = groups_[gi].params[pi];
        if (!p.has_grad()) continue;
        auto& s = state_[gi][pi];
        s.m = beta1_ * s.m + (1.0 - beta1_) * p.grad();
        s.v = beta2_ * s.v + (1.0 - beta2_) * p.grad().cwiseAbs2();
        p.mutable_value().array() -=
            lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.zero_grad();
  }

  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t s) { steps_ = s; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  std::vector<std::vector<AdamState>>& state() { return state_; }
  const std::vector<std::vector<AdamState>>& state() const { return state_; }

 private:
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<AdamState>> state_;
  double beta1_, beta2_, eps_;
  std::int64_t steps_ = 0;
};

}  // namespace crs
