#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "crseg/numerics/params.hpp"

namespace crseg::numerics {

/// Learning rate decayed linearly from `initial` to `final` over `total_steps`.
struct LinearSchedule {
  double initial = 5e-4;
  double final = 1e-6;
  std::size_t total_steps = 1;

  double at(std::size_t step) const {
    if (total_steps <= 1) return initial;
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps - 1));
    return initial * (1.0 - t) + final * t;
  }
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Moment buffers are keyed by parameter name.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ParameterSet& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      auto& st = state_[name];
      if (st.m.size() != p.size()) {
        st.m.assign(p.size(), 0.0);
        st.v.assign(p.size(), 0.0);
      }
      auto g = p.grad();
      auto w = p.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        w[i] -= lr * cfg_.weight_decay * w[i];
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      if (!p.all_finite()) throw NumericalError("optimizer produced non-finite value in '" + name + "'");
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  std::map<std::string, Moments> state_;
  std::size_t t_ = 0;
};

}  // namespace crseg::numerics
