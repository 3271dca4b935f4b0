#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "clvit/model.hpp"

namespace clvit::taskvec {

// Elementwise delta between a fine-tuned store and the pretrained store,
// keyed by the canonical parameter names.
struct TaskVector {
    model::ViTConfig config;
    std::string provenance;  // task id or free-form origin tag
    std::map<std::string, Tensor> deltas;

    std::vector<std::string> names() const;
};

struct MergeConfig {
    double lambda = 0.25;

    void validate() const {
        if (!std::isfinite(lambda)) throw ConfigError("merge lambda must be finite");
    }
};

// theta_i - theta_pre per entry. Stores must agree on the full schema; any
// name or shape mismatch is rejected before arithmetic starts.
TaskVector compute_task_vector(const model::ParamStore& theta_i,
                               const model::ParamStore& theta_pre,
                               std::string provenance = "");

// lambda * sum of the vectors, accumulated in list order.
TaskVector scale_and_sum(const std::vector<TaskVector>& vectors, const MergeConfig& cfg);

// theta_pre + tau, inputs untouched.
model::ParamStore apply(const model::ParamStore& theta_pre, const TaskVector& tau);

TaskVector negate(const TaskVector& tau);

}  // namespace clvit::taskvec
