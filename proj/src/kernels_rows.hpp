#pragma once

#include <cmath>

#include "clvit/kernels.hpp"

// Per-row / per-span helpers shared by the serial and OpenMP drivers. Both
// lanes inline exactly these bodies, which keeps their outputs bit-identical:
// the only difference between lanes is which thread owns a row.

namespace clvit::kernels::rows {

inline void zero(double* p, i64 n) {
    for (i64 i = 0; i < n; ++i) p[i] = 0.0;
}

// One output row of c = a*b (saxpy over k, contiguous inner loop).
inline void mm_nn_row(const double* arow, const double* b, double* crow, i64 k, i64 n,
                      bool accumulate) {
    if (!accumulate) zero(crow, n);
    for (i64 p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b + p * n;
        for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

// One output row i of c = a^T*b with a stored [r,m]: walks a column of a.
inline void mm_tn_row(const double* a, const double* b, double* crow, i64 r, i64 m, i64 n, i64 i,
                      bool accumulate) {
    if (!accumulate) zero(crow, n);
    for (i64 rr = 0; rr < r; ++rr) {
        const double av = a[rr * m + i];
        const double* brow = b + rr * n;
        for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

inline void transpose_row(const double* a, double* out, i64 rows, i64 cols, i64 r) {
    const double* arow = a + r * cols;
    for (i64 c = 0; c < cols; ++c) out[c * rows + r] = arow[c];
}

inline void add_span(const double* a, const double* b, double* out, i64 n) {
    for (i64 i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

inline void add_inplace_span(double* a, const double* b, i64 n) {
    for (i64 i = 0; i < n; ++i) a[i] += b[i];
}

inline void axpy_span(double alpha, const double* x, double* y, i64 n) {
    for (i64 i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline void scale_span(const double* a, double alpha, double* out, i64 n) {
    for (i64 i = 0; i < n; ++i) out[i] = a[i] * alpha;
}

inline void mul_span(const double* a, const double* b, double* out, i64 n) {
    for (i64 i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

inline void reduce_col(const double* a, double* out, i64 rows, i64 cols, i64 j, bool accumulate) {
    double s = accumulate ? out[j] : 0.0;
    for (i64 r = 0; r < rows; ++r) s += a[r * cols + j];
    out[j] = s;
}

// Returns false when the row contains a NaN.
inline bool softmax_row(const double* x, double* y, i64 cols) {
    double mx = x[0];
    for (i64 j = 1; j < cols; ++j) mx = x[j] > mx ? x[j] : mx;
    if (std::isnan(mx)) return false;
    double sum = 0.0;
    for (i64 j = 0; j < cols; ++j) {
        const double e = std::exp(x[j] - mx);
        y[j] = e;
        sum += e;
    }
    const double inv = 1.0 / sum;
    for (i64 j = 0; j < cols; ++j) y[j] *= inv;
    return true;
}

inline void softmax_bwd_row(const double* y, const double* gy, double* gx, i64 cols) {
    double dot = 0.0;
    for (i64 j = 0; j < cols; ++j) dot += gy[j] * y[j];
    for (i64 j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dot);
}

inline void layernorm_row(const double* x, const double* gain, const double* bias, double eps,
                          double* out, double* mean_save, double* rstd_save, i64 cols) {
    double mean = 0.0;
    for (i64 j = 0; j < cols; ++j) mean += x[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (i64 j = 0; j < cols; ++j) {
        const double d = x[j] - mean;
        var += d * d;
    }
    var /= static_cast<double>(cols);
    const double rstd = 1.0 / std::sqrt(var + eps);
    *mean_save = mean;
    *rstd_save = rstd;
    for (i64 j = 0; j < cols; ++j) out[j] = (x[j] - mean) * rstd * gain[j] + bias[j];
}

inline void layernorm_bwd_dx_row(const double* x, const double* gain, double mean, double rstd,
                                 const double* gy, double* gx, i64 cols) {
    double s1 = 0.0, s2 = 0.0;
    for (i64 j = 0; j < cols; ++j) {
        const double xhat = (x[j] - mean) * rstd;
        const double dy = gy[j] * gain[j];
        s1 += dy;
        s2 += dy * xhat;
    }
    const double inv_n = 1.0 / static_cast<double>(cols);
    for (i64 j = 0; j < cols; ++j) {
        const double xhat = (x[j] - mean) * rstd;
        const double dy = gy[j] * gain[j];
        gx[j] += rstd * (dy - s1 * inv_n - xhat * s2 * inv_n);
    }
}

inline void gelu_span(const double* x, double* out, i64 n) {
    for (i64 i = 0; i < n; ++i) {
        const double v = x[i];
        const double u = kGeluScale * (v + kGeluCubic * v * v * v);
        out[i] = 0.5 * v * (1.0 + std::tanh(u));
    }
}

inline void gelu_bwd_span(const double* x, const double* gy, double* gx, i64 n) {
    for (i64 i = 0; i < n; ++i) {
        const double v = x[i];
        const double u = kGeluScale * (v + kGeluCubic * v * v * v);
        const double t = std::tanh(u);
        const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * v * v);
        gx[i] += gy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
}

inline void cross_entropy_row(const double* logits, int label, double* row_loss, double* probs,
                              i64 cols) {
    double mx = logits[0];
    for (i64 j = 1; j < cols; ++j) mx = logits[j] > mx ? logits[j] : mx;
    double sum = 0.0;
    for (i64 j = 0; j < cols; ++j) {
        const double e = std::exp(logits[j] - mx);
        probs[j] = e;
        sum += e;
    }
    const double inv = 1.0 / sum;
    for (i64 j = 0; j < cols; ++j) probs[j] *= inv;
    *row_loss = mx + std::log(sum) - logits[label];
}

inline double log_clamped(double v) { return std::log(v > kLogFloor ? v : kLogFloor); }

inline void kl_row(const double* p, const double* q, double* row_kl, i64 cols) {
    double s = 0.0;
    for (i64 j = 0; j < cols; ++j) {
        if (p[j] == 0.0) continue;
        s += p[j] * (log_clamped(p[j]) - log_clamped(q[j]));
    }
    *row_kl = s;
}

inline void kl_dq_row(const double* p, const double* q, double gscale, double* gq, i64 cols) {
    for (i64 j = 0; j < cols; ++j) {
        if (q[j] > kLogFloor) gq[j] += gscale * (-p[j] / q[j]);
    }
}

inline void kl_dp_row(const double* p, const double* q, double gscale, double* gp, i64 cols) {
    for (i64 j = 0; j < cols; ++j) {
        const double base = log_clamped(p[j]) - log_clamped(q[j]);
        gp[j] += gscale * (base + (p[j] > kLogFloor ? 1.0 : 0.0));
    }
}

}  // namespace clvit::kernels::rows
