#include "kernels_rows.hpp"

// OpenMP lane. Rows (or output slices) are independent, so threads never
// share an output element and per-element arithmetic order is identical to
// the serial lane. Reductions that would need cross-row accumulation
// (affine layernorm grads, loss means) stay serial to keep results exact.

namespace clvit::kernels::par {

namespace r = clvit::kernels::rows;

void mm_nn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < m; ++i) r::mm_nn_row(a + i * k, b, c + i * n, k, n, accumulate);
}

void mm_tn(const double* a, const double* b, double* c, i64 r, i64 m, i64 n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < m; ++i) r::mm_tn_row(a, b, c + i * n, r, m, n, i, accumulate);
}

void bmm_nn(const double* a, const double* b, double* c, i64 nb, i64 m, i64 k, i64 n,
            i64 b_stride, bool accumulate) {
#pragma omp parallel for schedule(static) collapse(2)
    for (i64 s = 0; s < nb; ++s) {
        for (i64 i = 0; i < m; ++i) {
            r::mm_nn_row(a + (s * m + i) * k, b + s * b_stride, c + (s * m + i) * n, k, n,
                         accumulate);
        }
    }
}

void bmm_tn(const double* a, const double* b, double* c, i64 nb, i64 r, i64 m, i64 n,
            bool accumulate) {
#pragma omp parallel for schedule(static) collapse(2)
    for (i64 s = 0; s < nb; ++s) {
        for (i64 i = 0; i < m; ++i) {
            r::mm_tn_row(a + s * r * m, b + s * r * n, c + (s * m + i) * n, r, m, n, i,
                         accumulate);
        }
    }
}

void transpose_2d(const double* a, double* out, i64 rows, i64 cols) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < rows; ++i) r::transpose_row(a, out, rows, cols, i);
}

void transpose_last2(const double* a, double* out, i64 nb, i64 rows, i64 cols) {
#pragma omp parallel for schedule(static) collapse(2)
    for (i64 s = 0; s < nb; ++s) {
        for (i64 i = 0; i < rows; ++i)
            r::transpose_row(a + s * rows * cols, out + s * rows * cols, rows, cols, i);
    }
}

namespace {
constexpr i64 kSpanChunk = 8192;
inline i64 chunk_count(i64 n) { return (n + kSpanChunk - 1) / kSpanChunk; }
inline i64 chunk_len(i64 n, i64 c) {
    const i64 start = c * kSpanChunk;
    return (start + kSpanChunk <= n) ? kSpanChunk : n - start;
}
}  // namespace

void add(const double* a, const double* b, double* out, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 c = 0; c < chunk_count(n); ++c) {
        const i64 o = c * kSpanChunk;
        r::add_span(a + o, b + o, out + o, chunk_len(n, c));
    }
}

void add_inplace(double* a, const double* b, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 c = 0; c < chunk_count(n); ++c) {
        const i64 o = c * kSpanChunk;
        r::add_inplace_span(a + o, b + o, chunk_len(n, c));
    }
}

void axpy(double alpha, const double* x, double* y, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 c = 0; c < chunk_count(n); ++c) {
        const i64 o = c * kSpanChunk;
        r::axpy_span(alpha, x + o, y + o, chunk_len(n, c));
    }
}

void scale(const double* a, double alpha, double* out, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 c = 0; c < chunk_count(n); ++c) {
        const i64 o = c * kSpanChunk;
        r::scale_span(a + o, alpha, out + o, chunk_len(n, c));
    }
}

void mul(const double* a, const double* b, double* out, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 c = 0; c < chunk_count(n); ++c) {
        const i64 o = c * kSpanChunk;
        r::mul_span(a + o, b + o, out + o, chunk_len(n, c));
    }
}

void add_bcast_rows(const double* a, const double* b, double* out, i64 rows, i64 cols) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < rows; ++i) r::add_span(a + i * cols, b, out + i * cols, cols);
}

void reduce_rows(const double* a, double* out, i64 rows, i64 cols, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (i64 j = 0; j < cols; ++j) r::reduce_col(a, out, rows, cols, j, accumulate);
}

bool softmax_rows(const double* x, double* out, i64 rows, i64 cols) {
    bool ok = true;
#pragma omp parallel for schedule(static) reduction(&& : ok)
    for (i64 i = 0; i < rows; ++i) ok = ok && r::softmax_row(x + i * cols, out + i * cols, cols);
    return ok;
}

void softmax_rows_bwd(const double* y, const double* gy, double* gx, i64 rows, i64 cols) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < rows; ++i)
        r::softmax_bwd_row(y + i * cols, gy + i * cols, gx + i * cols, cols);
}

void layernorm_rows(const double* x, const double* gain, const double* bias, double eps,
                    double* out, double* mean_save, double* rstd_save, i64 rows, i64 cols) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < rows; ++i)
        r::layernorm_row(x + i * cols, gain, bias, eps, out + i * cols, mean_save + i,
                         rstd_save + i, cols);
}

void layernorm_rows_bwd(const double* x, const double* gain, const double* mean,
                        const double* rstd, const double* gy, double* gx, double* ggain,
                        double* gbias, i64 rows, i64 cols) {
    if (gx != nullptr) {
#pragma omp parallel for schedule(static)
        for (i64 i = 0; i < rows; ++i)
            r::layernorm_bwd_dx_row(x + i * cols, gain, mean[i], rstd[i], gy + i * cols,
                                    gx + i * cols, cols);
    }
    if (ggain != nullptr) {
        // cross-row reduction: identical serial pass in both lanes
        for (i64 i = 0; i < rows; ++i) {
            const double* xr = x + i * cols;
            const double* gr = gy + i * cols;
            for (i64 j = 0; j < cols; ++j) {
                ggain[j] += gr[j] * (xr[j] - mean[i]) * rstd[i];
                gbias[j] += gr[j];
            }
        }
    }
}

void gelu(const double* x, double* out, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 c = 0; c < chunk_count(n); ++c) {
        const i64 o = c * kSpanChunk;
        r::gelu_span(x + o, out + o, chunk_len(n, c));
    }
}

void gelu_bwd(const double* x, const double* gy, double* gx, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 c = 0; c < chunk_count(n); ++c) {
        const i64 o = c * kSpanChunk;
        r::gelu_bwd_span(x + o, gy + o, gx + o, chunk_len(n, c));
    }
}

void cross_entropy_rows(const double* logits, const int* labels, double* row_loss, double* probs,
                        i64 rows, i64 cols) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < rows; ++i)
        r::cross_entropy_row(logits + i * cols, labels[i], row_loss + i, probs + i * cols, cols);
}

void kl_rows(const double* p, const double* q, double* row_kl, i64 rows, i64 cols) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < rows; ++i) r::kl_row(p + i * cols, q + i * cols, row_kl + i, cols);
}

void kl_rows_bwd_dq(const double* p, const double* q, double gscale, double* gq, i64 rows,
                    i64 cols) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < rows; ++i)
        r::kl_dq_row(p + i * cols, q + i * cols, gscale, gq + i * cols, cols);
}

void kl_rows_bwd_dp(const double* p, const double* q, double gscale, double* gp, i64 rows,
                    i64 cols) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < rows; ++i)
        r::kl_dp_row(p + i * cols, q + i * cols, gscale, gp + i * cols, cols);
}

}  // namespace clvit::kernels::par
