#include "clvit/task_arithmetic.hpp"

#include <sstream>

#include "clvit/kernels.hpp"

namespace clvit::taskvec {

namespace {

// Full schema agreement check; lists every offending name in the error.
void check_compatible(const std::map<std::string, Tensor>& a,
                      const std::map<std::string, Tensor>& b, const char* what) {
    std::vector<std::string> bad;
    for (const auto& [name, t] : a) {
        auto it = b.find(name);
        if (it == b.end())
            bad.push_back(name + " (missing)");
        else if (it->second.shape() != t.shape())
            bad.push_back(name + " (shape " + shape_str(t.shape()) + " vs " +
                          shape_str(it->second.shape()) + ")");
    }
    for (const auto& [name, t] : b) {
        if (a.find(name) == a.end()) bad.push_back(name + " (extra)");
    }
    if (!bad.empty()) {
        std::ostringstream os;
        os << what << ": incompatible schemas:";
        for (const auto& n : bad) os << " " << n;
        throw CompatibilityError(os.str());
    }
}

}  // namespace

std::vector<std::string> TaskVector::names() const {
    std::vector<std::string> out;
    out.reserve(deltas.size());
    for (const auto& [k, v] : deltas) out.push_back(k);
    return out;
}

TaskVector compute_task_vector(const model::ParamStore& theta_i,
                               const model::ParamStore& theta_pre, std::string provenance) {
    check_compatible(theta_i.entries(), theta_pre.entries(), "compute_task_vector");

    TaskVector tv;
    tv.config = theta_pre.config();
    tv.provenance = std::move(provenance);
    for (const auto& [name, after] : theta_i.entries()) {
        const Tensor& before = theta_pre.at(name);
        const std::int64_t n = after.numel();
        std::vector<double> d(static_cast<std::size_t>(n));
        const double* pa = after.data();
        const double* pb = before.data();
        for (std::int64_t j = 0; j < n; ++j) d[static_cast<std::size_t>(j)] = pa[j] - pb[j];
        tv.deltas.emplace(name, Tensor::from_data(after.shape(), std::move(d)));
    }
    return tv;
}

TaskVector scale_and_sum(const std::vector<TaskVector>& vectors, const MergeConfig& cfg) {
    cfg.validate();
    if (vectors.empty()) throw ContractError("scale_and_sum: empty task-vector list");
    for (std::size_t i = 1; i < vectors.size(); ++i)
        check_compatible(vectors[0].deltas, vectors[i].deltas, "scale_and_sum");

    TaskVector out;
    out.config = vectors[0].config;
    out.provenance = "merged";
    for (const auto& [name, first] : vectors[0].deltas) {
        std::vector<double> acc = first.copy_of_data();
        for (std::size_t i = 1; i < vectors.size(); ++i) {
            const Tensor& t = vectors[i].deltas.at(name);
            kernels::add_inplace(acc.data(), t.data(), t.numel());
        }
        kernels::scale(acc.data(), cfg.lambda, acc.data(), static_cast<std::int64_t>(acc.size()));
        out.deltas.emplace(name, Tensor::from_data(first.shape(), std::move(acc)));
    }
    return out;
}

model::ParamStore apply(const model::ParamStore& theta_pre, const TaskVector& tau) {
    check_compatible(theta_pre.entries(), tau.deltas, "apply");

    std::map<std::string, Tensor> entries;
    for (const auto& [name, base] : theta_pre.entries()) {
        const Tensor& d = tau.deltas.at(name);
        std::vector<double> out(static_cast<std::size_t>(base.numel()));
        kernels::add(base.data(), d.data(), out.data(), base.numel());
        entries.emplace(name, Tensor::from_data(base.shape(), std::move(out)).named(name));
    }
    return model::ParamStore(theta_pre.config(), std::move(entries));
}

TaskVector negate(const TaskVector& tau) {
    TaskVector out;
    out.config = tau.config;
    out.provenance = tau.provenance.empty() ? "negated" : "-" + tau.provenance;
    for (const auto& [name, d] : tau.deltas) {
        std::vector<double> v(static_cast<std::size_t>(d.numel()));
        kernels::scale(d.data(), -1.0, v.data(), d.numel());
        out.deltas.emplace(name, Tensor::from_data(d.shape(), std::move(v)));
    }
    return out;
}

}  // namespace clvit::taskvec
