#pragma once

#include <cstdint>

// Dense numeric kernels. Every routine exists twice: a plain serial
// reference under kernels::serial and an OpenMP version under kernels::par.
// Both call the same per-row helpers, so for any input they produce
// bit-identical output; the tests rely on that and the bench_kernels tool
// times the two side by side. The unqualified functions dispatch at runtime
// based on problem size and the thread-local parallel switch.

namespace clvit::kernels {

using i64 = std::int64_t;

// Thread-local parallelism switch. Worker threads that already provide
// outer-level parallelism flip this off via SerialSection.
void set_parallel(bool on);
bool parallel_enabled();

class SerialSection {
  public:
    SerialSection();
    ~SerialSection();
    SerialSection(const SerialSection&) = delete;
    SerialSection& operator=(const SerialSection&) = delete;

  private:
    bool prev_;
};

int max_threads();

#define CLVIT_KERNEL_SET                                                                          \
    /* c[m,n] = a[m,k] * b[k,n]; adds into c when accumulate */                                   \
    void mm_nn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n,                  \
               bool accumulate);                                                                  \
    /* c[m,n] = a^T * b with a stored [r,m], b stored [r,n] */                                    \
    void mm_tn(const double* a, const double* b, double* c, i64 r, i64 m, i64 n,                  \
               bool accumulate);                                                                  \
    /* batched: nb independent [m,k]x[k,n] products; b_stride 0 shares b */                       \
    void bmm_nn(const double* a, const double* b, double* c, i64 nb, i64 m, i64 k, i64 n,         \
                i64 b_stride, bool accumulate);                                                   \
    void bmm_tn(const double* a, const double* b, double* c, i64 nb, i64 r, i64 m, i64 n,         \
                bool accumulate);                                                                 \
    void transpose_2d(const double* a, double* out, i64 rows, i64 cols);                          \
    /* batched transpose of the trailing two dims */                                              \
    void transpose_last2(const double* a, double* out, i64 nb, i64 rows, i64 cols);               \
    void add(const double* a, const double* b, double* out, i64 n);                               \
    void add_inplace(double* a, const double* b, i64 n);                                          \
    void axpy(double alpha, const double* x, double* y, i64 n);                                   \
    void scale(const double* a, double alpha, double* out, i64 n);                                \
    void mul(const double* a, const double* b, double* out, i64 n);                               \
    /* out[r,:] = a[r,:] + b for every row r */                                                   \
    void add_bcast_rows(const double* a, const double* b, double* out, i64 rows, i64 cols);       \
    /* out[j] (+)= sum_r a[r,j] */                                                                \
    void reduce_rows(const double* a, double* out, i64 rows, i64 cols, bool accumulate);          \
    /* returns true iff input was NaN-free */                                                     \
    bool softmax_rows(const double* x, double* out, i64 rows, i64 cols);                          \
    /* gx += softmax backward given saved output y */                                             \
    void softmax_rows_bwd(const double* y, const double* gy, double* gx, i64 rows, i64 cols);     \
    void layernorm_rows(const double* x, const double* gain, const double* bias, double eps,      \
                        double* out, double* mean_save, double* rstd_save, i64 rows, i64 cols);   \
    void layernorm_rows_bwd(const double* x, const double* gain, const double* mean,              \
                            const double* rstd, const double* gy, double* gx, double* ggain,      \
                            double* gbias, i64 rows, i64 cols);                                   \
    void gelu(const double* x, double* out, i64 n);                                               \
    void gelu_bwd(const double* x, const double* gy, double* gx, i64 n);                          \
    /* per-row stabilized -log softmax(label); probs saved for backward */                        \
    void cross_entropy_rows(const double* logits, const int* labels, double* row_loss,            \
                            double* probs, i64 rows, i64 cols);                                   \
    /* row-mean KL(p||q) terms with clamped logs; row_kl gets per-row sums */                     \
    void kl_rows(const double* p, const double* q, double* row_kl, i64 rows, i64 cols);           \
    void kl_rows_bwd_dq(const double* p, const double* q, double gscale, double* gq, i64 rows,    \
                        i64 cols);                                                                \
    void kl_rows_bwd_dp(const double* p, const double* q, double gscale, double* gp, i64 rows,    \
                        i64 cols);

namespace serial {
CLVIT_KERNEL_SET
}
namespace par {
CLVIT_KERNEL_SET
}
CLVIT_KERNEL_SET

#undef CLVIT_KERNEL_SET

// Deterministic regardless of threading: always a serial left-to-right sum.
double sum_all(const double* a, i64 n);

// Clamp floor shared by every log in the KL kernels.
inline constexpr double kLogFloor = 1e-12;

// GELU tanh approximation constants.
inline constexpr double kGeluCubic = 0.044715;
inline constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace clvit::kernels
