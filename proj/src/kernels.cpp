#include "clvit/kernels.hpp"

#include "clvit/flop_cost.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace clvit::flopcount {

Counter& counter() {
    thread_local Counter c;
    return c;
}

}  // namespace clvit::flopcount

namespace clvit::kernels {

namespace {

thread_local bool g_parallel = true;

// Below this much arithmetic the fork/join overhead dominates.
constexpr i64 kMinParallelWork = 1 << 16;

inline bool use_par(i64 work) {
    return g_parallel && work >= kMinParallelWork && max_threads() > 1;
}

}  // namespace

void set_parallel(bool on) { g_parallel = on; }
bool parallel_enabled() { return g_parallel; }

SerialSection::SerialSection() : prev_(g_parallel) { g_parallel = false; }
SerialSection::~SerialSection() { g_parallel = prev_; }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void mm_nn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate) {
    if (use_par(2 * m * k * n))
        par::mm_nn(a, b, c, m, k, n, accumulate);
    else
        serial::mm_nn(a, b, c, m, k, n, accumulate);
}

void mm_tn(const double* a, const double* b, double* c, i64 r, i64 m, i64 n, bool accumulate) {
    if (use_par(2 * r * m * n))
        par::mm_tn(a, b, c, r, m, n, accumulate);
    else
        serial::mm_tn(a, b, c, r, m, n, accumulate);
}

void bmm_nn(const double* a, const double* b, double* c, i64 nb, i64 m, i64 k, i64 n,
            i64 b_stride, bool accumulate) {
    if (use_par(2 * nb * m * k * n))
        par::bmm_nn(a, b, c, nb, m, k, n, b_stride, accumulate);
    else
        serial::bmm_nn(a, b, c, nb, m, k, n, b_stride, accumulate);
}

void bmm_tn(const double* a, const double* b, double* c, i64 nb, i64 r, i64 m, i64 n,
            bool accumulate) {
    if (use_par(2 * nb * r * m * n))
        par::bmm_tn(a, b, c, nb, r, m, n, accumulate);
    else
        serial::bmm_tn(a, b, c, nb, r, m, n, accumulate);
}

void transpose_2d(const double* a, double* out, i64 rows, i64 cols) {
    if (use_par(rows * cols))
        par::transpose_2d(a, out, rows, cols);
    else
        serial::transpose_2d(a, out, rows, cols);
}

void transpose_last2(const double* a, double* out, i64 nb, i64 rows, i64 cols) {
    if (use_par(nb * rows * cols))
        par::transpose_last2(a, out, nb, rows, cols);
    else
        serial::transpose_last2(a, out, nb, rows, cols);
}

void add(const double* a, const double* b, double* out, i64 n) {
    if (use_par(n))
        par::add(a, b, out, n);
    else
        serial::add(a, b, out, n);
}

void add_inplace(double* a, const double* b, i64 n) {
    if (use_par(n))
        par::add_inplace(a, b, n);
    else
        serial::add_inplace(a, b, n);
}

void axpy(double alpha, const double* x, double* y, i64 n) {
    if (use_par(n))
        par::axpy(alpha, x, y, n);
    else
        serial::axpy(alpha, x, y, n);
}

void scale(const double* a, double alpha, double* out, i64 n) {
    if (use_par(n))
        par::scale(a, alpha, out, n);
    else
        serial::scale(a, alpha, out, n);
}

void mul(const double* a, const double* b, double* out, i64 n) {
    if (use_par(n))
        par::mul(a, b, out, n);
    else
        serial::mul(a, b, out, n);
}

void add_bcast_rows(const double* a, const double* b, double* out, i64 rows, i64 cols) {
    if (use_par(rows * cols))
        par::add_bcast_rows(a, b, out, rows, cols);
    else
        serial::add_bcast_rows(a, b, out, rows, cols);
}

void reduce_rows(const double* a, double* out, i64 rows, i64 cols, bool accumulate) {
    if (use_par(rows * cols))
        par::reduce_rows(a, out, rows, cols, accumulate);
    else
        serial::reduce_rows(a, out, rows, cols, accumulate);
}

bool softmax_rows(const double* x, double* out, i64 rows, i64 cols) {
    if (use_par(5 * rows * cols)) return par::softmax_rows(x, out, rows, cols);
    return serial::softmax_rows(x, out, rows, cols);
}

void softmax_rows_bwd(const double* y, const double* gy, double* gx, i64 rows, i64 cols) {
    if (use_par(4 * rows * cols))
        par::softmax_rows_bwd(y, gy, gx, rows, cols);
    else
        serial::softmax_rows_bwd(y, gy, gx, rows, cols);
}

void layernorm_rows(const double* x, const double* gain, const double* bias, double eps,
                    double* out, double* mean_save, double* rstd_save, i64 rows, i64 cols) {
    if (use_par(8 * rows * cols))
        par::layernorm_rows(x, gain, bias, eps, out, mean_save, rstd_save, rows, cols);
    else
        serial::layernorm_rows(x, gain, bias, eps, out, mean_save, rstd_save, rows, cols);
}

void layernorm_rows_bwd(const double* x, const double* gain, const double* mean,
                        const double* rstd, const double* gy, double* gx, double* ggain,
                        double* gbias, i64 rows, i64 cols) {
    if (use_par(12 * rows * cols))
        par::layernorm_rows_bwd(x, gain, mean, rstd, gy, gx, ggain, gbias, rows, cols);
    else
        serial::layernorm_rows_bwd(x, gain, mean, rstd, gy, gx, ggain, gbias, rows, cols);
}

void gelu(const double* x, double* out, i64 n) {
    if (use_par(14 * n))
        par::gelu(x, out, n);
    else
        serial::gelu(x, out, n);
}

void gelu_bwd(const double* x, const double* gy, double* gx, i64 n) {
    if (use_par(19 * n))
        par::gelu_bwd(x, gy, gx, n);
    else
        serial::gelu_bwd(x, gy, gx, n);
}

void cross_entropy_rows(const double* logits, const int* labels, double* row_loss, double* probs,
                        i64 rows, i64 cols) {
    if (use_par(5 * rows * cols))
        par::cross_entropy_rows(logits, labels, row_loss, probs, rows, cols);
    else
        serial::cross_entropy_rows(logits, labels, row_loss, probs, rows, cols);
}

void kl_rows(const double* p, const double* q, double* row_kl, i64 rows, i64 cols) {
    if (use_par(6 * rows * cols))
        par::kl_rows(p, q, row_kl, rows, cols);
    else
        serial::kl_rows(p, q, row_kl, rows, cols);
}

void kl_rows_bwd_dq(const double* p, const double* q, double gscale, double* gq, i64 rows,
                    i64 cols) {
    if (use_par(3 * rows * cols))
        par::kl_rows_bwd_dq(p, q, gscale, gq, rows, cols);
    else
        serial::kl_rows_bwd_dq(p, q, gscale, gq, rows, cols);
}

void kl_rows_bwd_dp(const double* p, const double* q, double gscale, double* gp, i64 rows,
                    i64 cols) {
    if (use_par(4 * rows * cols))
        par::kl_rows_bwd_dp(p, q, gscale, gp, rows, cols);
    else
        serial::kl_rows_bwd_dp(p, q, gscale, gp, rows, cols);
}

double sum_all(const double* a, i64 n) {
    double s = 0.0;
    for (i64 i = 0; i < n; ++i) s += a[i];
    return s;
}

}  // namespace clvit::kernels
