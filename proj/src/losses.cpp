#include "clvit/losses.hpp"

namespace clvit::losses {

Tensor classification_loss(const Tensor& logits, const std::vector<int>& labels) {
    return cross_entropy(logits, labels);
}

Tensor kl_feature_loss(const Tensor& pre_features, const Tensor& ft_features) {
    if (pre_features.shape() != ft_features.shape())
        throw ShapeError("kl_feature_loss: feature shapes disagree, " +
                         shape_str(pre_features.shape()) + " vs " +
                         shape_str(ft_features.shape()));
    Tensor p = softmax(pre_features.detached(), -1);
    Tensor q = softmax(ft_features, -1);
    return kl_div(p, q);
}

Tensor combined_loss(const Tensor& cls, const Tensor& kl, const LossWeights& w) {
    w.validate();
    return add(scalar_mul(cls, w.lambda1), scalar_mul(kl, w.lambda2));
}

}  // namespace clvit::losses
