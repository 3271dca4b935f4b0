#include "kernels_rows.hpp"

// Serial reference lane. Kept deliberately simple: straight loops over the
// shared row helpers. The OpenMP lane must match this output bit for bit.

namespace clvit::kernels::serial {

namespace r = clvit::kernels::rows;

void mm_nn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate) {
    for (i64 i = 0; i < m; ++i) r::mm_nn_row(a + i * k, b, c + i * n, k, n, accumulate);
}

void mm_tn(const double* a, const double* b, double* c, i64 r, i64 m, i64 n, bool accumulate) {
    for (i64 i = 0; i < m; ++i) r::mm_tn_row(a, b, c + i * n, r, m, n, i, accumulate);
}

void bmm_nn(const double* a, const double* b, double* c, i64 nb, i64 m, i64 k, i64 n,
            i64 b_stride, bool accumulate) {
    for (i64 s = 0; s < nb; ++s) {
        const double* as = a + s * m * k;
        const double* bs = b + s * b_stride;
        double* cs = c + s * m * n;
        for (i64 i = 0; i < m; ++i) r::mm_nn_row(as + i * k, bs, cs + i * n, k, n, accumulate);
    }
}

void bmm_tn(const double* a, const double* b, double* c, i64 nb, i64 r, i64 m, i64 n,
            bool accumulate) {
    for (i64 s = 0; s < nb; ++s) {
        const double* as = a + s * r * m;
        const double* bs = b + s * r * n;
        double* cs = c + s * m * n;
        for (i64 i = 0; i < m; ++i) r::mm_tn_row(as, bs, cs + i * n, r, m, n, i, accumulate);
    }
}

void transpose_2d(const double* a, double* out, i64 rows, i64 cols) {
    for (i64 i = 0; i < rows; ++i) r::transpose_row(a, out, rows, cols, i);
}

void transpose_last2(const double* a, double* out, i64 nb, i64 rows, i64 cols) {
    for (i64 s = 0; s < nb; ++s) transpose_2d(a + s * rows * cols, out + s * rows * cols, rows, cols);
}

void add(const double* a, const double* b, double* out, i64 n) { r::add_span(a, b, out, n); }

void add_inplace(double* a, const double* b, i64 n) { r::add_inplace_span(a, b, n); }

void axpy(double alpha, const double* x, double* y, i64 n) { r::axpy_span(alpha, x, y, n); }

void scale(const double* a, double alpha, double* out, i64 n) { r::scale_span(a, alpha, out, n); }

void mul(const double* a, const double* b, double* out, i64 n) { r::mul_span(a, b, out, n); }

void add_bcast_rows(const double* a, const double* b, double* out, i64 rows, i64 cols) {
    for (i64 i = 0; i < rows; ++i) r::add_span(a + i * cols, b, out + i * cols, cols);
}

void reduce_rows(const double* a, double* out, i64 rows, i64 cols, bool accumulate) {
    for (i64 j = 0; j < cols; ++j) r::reduce_col(a, out, rows, cols, j, accumulate);
}

bool softmax_rows(const double* x, double* out, i64 rows, i64 cols) {
    bool ok = true;
    for (i64 i = 0; i < rows; ++i) ok &= r::softmax_row(x + i * cols, out + i * cols, cols);
    return ok;
}

void softmax_rows_bwd(const double* y, const double* gy, double* gx, i64 rows, i64 cols) {
    for (i64 i = 0; i < rows; ++i)
        r::softmax_bwd_row(y + i * cols, gy + i * cols, gx + i * cols, cols);
}

void layernorm_rows(const double* x, const double* gain, const double* bias, double eps,
                    double* out, double* mean_save, double* rstd_save, i64 rows, i64 cols) {
    for (i64 i = 0; i < rows; ++i)
        r::layernorm_row(x + i * cols, gain, bias, eps, out + i * cols, mean_save + i,
                         rstd_save + i, cols);
}

void layernorm_rows_bwd(const double* x, const double* gain, const double* mean,
                        const double* rstd, const double* gy, double* gx, double* ggain,
                        double* gbias, i64 rows, i64 cols) {
    if (gx != nullptr) {
        for (i64 i = 0; i < rows; ++i)
            r::layernorm_bwd_dx_row(x + i * cols, gain, mean[i], rstd[i], gy + i * cols,
                                    gx + i * cols, cols);
    }
    if (ggain != nullptr) {
        // affine grads accumulate across rows in fixed row order
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

void gelu(const double* x, double* out, i64 n) { r::gelu_span(x, out, n); }

void gelu_bwd(const double* x, const double* gy, double* gx, i64 n) {
    r::gelu_bwd_span(x, gy, gx, n);
}

void cross_entropy_rows(const double* logits, const int* labels, double* row_loss, double* probs,
                        i64 rows, i64 cols) {
    for (i64 i = 0; i < rows; ++i)
        r::cross_entropy_row(logits + i * cols, labels[i], row_loss + i, probs + i * cols, cols);
}

void kl_rows(const double* p, const double* q, double* row_kl, i64 rows, i64 cols) {
    for (i64 i = 0; i < rows; ++i) r::kl_row(p + i * cols, q + i * cols, row_kl + i, cols);
}

void kl_rows_bwd_dq(const double* p, const double* q, double gscale, double* gq, i64 rows,
                    i64 cols) {
    for (i64 i = 0; i < rows; ++i) r::kl_dq_row(p + i * cols, q + i * cols, gscale, gq + i * cols, cols);
}

void kl_rows_bwd_dp(const double* p, const double* q, double gscale, double* gp, i64 rows,
                    i64 cols) {
    for (i64 i = 0; i < rows; ++i) r::kl_dp_row(p + i * cols, q + i * cols, gscale, gp + i * cols, cols);
}

}  // namespace clvit::kernels::serial
