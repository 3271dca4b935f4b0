#pragma once

#include <functional>
#include <map>
#include <string>

#include "clvit/tensor.hpp"

namespace clvit::optim {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // L2 added to the gradient, torch-style
};

// Adam over named parameters. Moment state is keyed by name; the caller
// resolves tensors through get/set so the same optimizer drives both store
// entries and adapter factors.
class Adam {
  public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    void step(const GradMap& grads, const std::function<Tensor(const std::string&)>& get,
              const std::function<void(const std::string&, Tensor)>& set);

    std::int64_t steps() const { return t_; }

  private:
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_;
    std::map<std::string, std::vector<double>> v_;
};

}  // namespace clvit::optim
