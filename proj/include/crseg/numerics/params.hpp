#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>

#include "crseg/numerics/tensor.hpp"

namespace crseg::numerics {

/// Named learnable tensors, iterated in name order.
class ParameterSet {
 public:
  Tensor& add(const std::string& name, Tensor init) {
    init.set_requires_grad(true);
    auto [it, inserted] = params_.insert_or_assign(name, std::move(init));
    (void)inserted;
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Tensor& operator[](const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }

  const Tensor& operator[](const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

 private:
  std::map<std::string, Tensor> params_;
};

/// Xavier-uniform matrix: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
inline Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t = Tensor::matrix(fan_in, fan_out);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace crseg::numerics
