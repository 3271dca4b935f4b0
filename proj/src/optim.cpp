#include "clvit/optim.hpp"

#include <cmath>

namespace clvit::optim {

void Adam::step(const GradMap& grads, const std::function<Tensor(const std::string&)>& get,
                const std::function<void(const std::string&, Tensor)>& set) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    for (const auto& [name, grad] : grads.grads) {
        Tensor param = get(name);
        if (param.shape() != grad.shape())
            throw ShapeError("adam: gradient shape " + shape_str(grad.shape()) +
                             " does not match parameter '" + name + "' " +
                             shape_str(param.shape()));
        const std::int64_t n = param.numel();
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.empty()) {
            m.assign(static_cast<std::size_t>(n), 0.0);
            v.assign(static_cast<std::size_t>(n), 0.0);
        }

        std::vector<double> out = param.copy_of_data();
        const double* g = grad.data();
        for (std::int64_t i = 0; i < n; ++i) {
            const double gi = g[i] + cfg_.weight_decay * out[static_cast<std::size_t>(i)];
            m[static_cast<std::size_t>(i)] =
                cfg_.beta1 * m[static_cast<std::size_t>(i)] + (1.0 - cfg_.beta1) * gi;
            v[static_cast<std::size_t>(i)] =
                cfg_.beta2 * v[static_cast<std::size_t>(i)] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m[static_cast<std::size_t>(i)] / bc1;
            const double vhat = v[static_cast<std::size_t>(i)] / bc2;
            out[static_cast<std::size_t>(i)] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        set(name, Tensor::from_data(param.shape(), std::move(out)));
    }
}

}  // namespace clvit::optim
