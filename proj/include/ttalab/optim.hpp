#pragma once

#include <map>
#include <string>
#include <vector>

#include "ttalab/layers.hpp"

namespace ttalab {

// SGD with classical momentum:
//   v <- momentum * v + g
//   p <- p - lr * v
// Velocities are keyed by parameter name and created lazily at zero. Only the
// parameters passed to step() move; anything else is untouched by contract.
template <typename S>
class SgdT {
 public:
  SgdT() = default;
  SgdT(double lr, double momentum) : lr_(lr), momentum_(momentum) {
    check(lr > 0.0, "sgd: lr must be positive");
    check(momentum >= 0.0 && momentum < 1.0, "sgd: momentum must be in [0,1)");
  }

  double lr() const { return lr_; }
  double momentum() const { return momentum_; }

  void step(const std::vector<NamedParam<S>>& params) {
    for (const auto& np : params) {
      TensorT<S>* t = np.tensor;
      check(t->requires_grad(), "sgd: parameter '" + np.name + "' has no gradient storage");
      std::vector<S>& v = velocity_[np.name];
      if (v.size() != t->numel()) v.assign(t->numel(), S(0));
      const S* g = t->grad();
      S* p = t->data();
      const S m = static_cast<S>(momentum_);
      const S lr = static_cast<S>(lr_);
      for (std::size_t i = 0; i < t->numel(); ++i) {
        v[i] = m * v[i] + g[i];
        p[i] -= lr * v[i];
      }
    }
  }

  static void zero_grad(const std::vector<NamedParam<S>>& params) {
    for (const auto& np : params) np.tensor->zero_grad();
  }

  std::map<std::string, std::vector<S>>& velocities() { return velocity_; }
  const std::map<std::string, std::vector<S>>& velocities() const { return velocity_; }

 private:
  double lr_ = 0.01;
  double momentum_ = 0.0;
  std::map<std::string, std::vector<S>> velocity_;
};

using Sgd = SgdT<float>;

}  // namespace ttalab
