#pragma once

#include <vector>

#include "clvit/tensor.hpp"

namespace clvit::losses {

// Weights of the combined objective: lambda1 on the classification term,
// lambda2 on the feature-distribution KL term.
struct LossWeights {
    double lambda1 = 0.6;
    double lambda2 = 0.4;

    void validate() const {
        if (lambda1 < 0.0 || lambda2 < 0.0)
            throw ConfigError("loss weights must be nonnegative");
    }
};

// Mean cross entropy of the logits against integer labels.
Tensor classification_loss(const Tensor& logits, const std::vector<int>& labels);

// KL( softmax(pre) || softmax(ft) ) over the feature axis, averaged over the
// batch. The pretrained branch is detached: gradients reach only ft_features.
Tensor kl_feature_loss(const Tensor& pre_features, const Tensor& ft_features);

Tensor combined_loss(const Tensor& cls, const Tensor& kl, const LossWeights& w);

}  // namespace clvit::losses
