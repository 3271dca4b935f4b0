#pragma once

#include <cstdint>

// Shared FLOP cost model. The runtime counter (incremented by every tensor
// op) and the analytic estimator both price work with these functions, so
// the two routes can be compared directly. Convention: one multiply-add is
// 2 FLOPs; data movement (reshape, transpose, slicing) is free; per-element
// constants for the nonlinear ops are listed next to each function.

namespace clvit::flopcount {

using u64 = std::uint64_t;

// General matrix product m*k times k*n.
constexpr u64 matmul(u64 m, u64 k, u64 n) { return 2 * m * k * n; }

// Elementwise add/scale/mul/accumulate: 1 FLOP per output element.
constexpr u64 elementwise(u64 n) { return n; }

// Broadcast-add gradient reduction: 1 add per summed element.
constexpr u64 reduce(u64 n) { return n; }

// Softmax row: max scan + subtract + exp + sum + divide = 5 per element.
constexpr u64 softmax(u64 rows, u64 cols) { return 5 * rows * cols; }
// Backward: inner dot (2) + subtract + scale = 4 per element.
constexpr u64 softmax_backward(u64 rows, u64 cols) { return 4 * rows * cols; }

// LayerNorm row: mean (1) + var (3) + normalize (2) + affine (2) = 8.
constexpr u64 layernorm(u64 rows, u64 cols) { return 8 * rows * cols; }
// Backward dx: two row dots (4) + combine (5) = 9 per element.
constexpr u64 layernorm_backward_dx(u64 rows, u64 cols) { return 9 * rows * cols; }
// Backward dgain/dbias: 3 per element (x_hat recompute + two accumulations).
constexpr u64 layernorm_backward_affine(u64 rows, u64 cols) { return 3 * rows * cols; }

// Tanh-approximation GELU: 14 forward, 19 backward per element.
constexpr u64 gelu(u64 n) { return 14 * n; }
constexpr u64 gelu_backward(u64 n) { return 19 * n; }

// Cross entropy over logits [rows x cols]: stabilized log-sum-exp is
// softmax-priced plus 2 per row for the pick/mean. Backward: 2 per element.
constexpr u64 cross_entropy(u64 rows, u64 cols) { return 5 * rows * cols + 2 * rows; }
constexpr u64 cross_entropy_backward(u64 rows, u64 cols) { return 2 * rows * cols; }

// KL divergence over [rows x cols]: two clamped logs + mul + sub + sum = 6
// forward; dq = 3 per element, dp = 4 per element.
constexpr u64 kl_div(u64 rows, u64 cols) { return 6 * rows * cols; }
constexpr u64 kl_div_backward_dq(u64 rows, u64 cols) { return 3 * rows * cols; }
constexpr u64 kl_div_backward_dp(u64 rows, u64 cols) { return 4 * rows * cols; }

// Thread-local running counter. Enabled scopes are cheap enough to leave on
// during training; each worker thread tallies its own stream.
struct Counter {
    u64 total = 0;
    bool enabled = false;
};

Counter& counter();

inline void add(u64 flops) {
    Counter& c = counter();
    if (c.enabled) c.total += flops;
}

// RAII measurement window: resets on entry, reads with take().
class Scope {
  public:
    Scope() {
        Counter& c = counter();
        prev_total_ = c.total;
        prev_enabled_ = c.enabled;
        c.total = 0;
        c.enabled = true;
    }
    ~Scope() {
        Counter& c = counter();
        c.total = prev_total_;
        c.enabled = prev_enabled_;
    }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

    u64 take() const { return counter().total; }

  private:
    u64 prev_total_ = 0;
    bool prev_enabled_ = false;
};

}  // namespace clvit::flopcount
