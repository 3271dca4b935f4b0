// Times the serial reference lane against the OpenMP lane on the matmul and
// row-kernel shapes the model actually runs, and verifies the two lanes give
// bit-identical output while at it.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "clvit/kernels.hpp"

namespace kn = clvit::kernels;
using kn::i64;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

template <typename F>
double time_gflops(F&& fn, double flops_per_call) {
    // warm up, then run until ~0.2s elapsed
    fn();
    int reps = 1;
    double secs = 0.0;
    for (;;) {
        const auto t0 = Clock::now();
        for (int r = 0; r < reps; ++r) fn();
        secs = std::chrono::duration<double>(Clock::now() - t0).count();
        if (secs > 0.2 || reps > (1 << 20)) break;
        reps *= 2;
    }
    return flops_per_call * reps / secs / 1e9;
}

void row(const char* name, double serial, double parallel, bool bitsame) {
    std::printf("%-28s %9.2f %9.2f %7.2fx   %s\n", name, serial, parallel, parallel / serial,
                bitsame ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
    std::mt19937_64 rng(42);
    std::printf("threads available: %d\n\n", kn::max_threads());
    std::printf("%-28s %9s %9s %8s\n", "kernel", "serial", "openmp", "speedup");
    std::printf("%-28s %9s %9s\n", "", "GFLOP/s", "GFLOP/s");

    // matmul shapes from the desk model: tokens*batch x dim x {dim, mlp}
    struct MM {
        const char* name;
        i64 m, k, n;
    };
    for (const MM& s : {MM{"mm_nn 544x64x64", 544, 64, 64}, MM{"mm_nn 544x64x256", 544, 64, 256},
                        MM{"mm_nn 544x256x64", 544, 256, 64}}) {
        auto a = random_vec(static_cast<std::size_t>(s.m * s.k), rng);
        auto b = random_vec(static_cast<std::size_t>(s.k * s.n), rng);
        std::vector<double> c1(static_cast<std::size_t>(s.m * s.n));
        std::vector<double> c2(c1.size());
        const double fl = 2.0 * s.m * s.k * s.n;
        const double gs = time_gflops(
            [&] { kn::serial::mm_nn(a.data(), b.data(), c1.data(), s.m, s.k, s.n, false); }, fl);
        const double gp = time_gflops(
            [&] { kn::par::mm_nn(a.data(), b.data(), c2.data(), s.m, s.k, s.n, false); }, fl);
        row(s.name, gs, gp, std::memcmp(c1.data(), c2.data(), c1.size() * 8) == 0);
    }

    {
        const i64 m = 544, k = 64, n = 64;
        auto a = random_vec(static_cast<std::size_t>(m * k), rng);
        auto g = random_vec(static_cast<std::size_t>(m * n), rng);
        std::vector<double> c1(static_cast<std::size_t>(k * n)), c2(c1.size());
        const double fl = 2.0 * m * k * n;
        const double gs = time_gflops(
            [&] { kn::serial::mm_tn(a.data(), g.data(), c1.data(), m, k, n, false); }, fl);
        const double gp = time_gflops(
            [&] { kn::par::mm_tn(a.data(), g.data(), c2.data(), m, k, n, false); }, fl);
        row("mm_tn 544x64x64", gs, gp, std::memcmp(c1.data(), c2.data(), c1.size() * 8) == 0);
    }

    {
        const i64 rows = 2176, cols = 17;  // attention scores batch*heads*tokens
        auto x = random_vec(static_cast<std::size_t>(rows * cols), rng);
        std::vector<double> y1(x.size()), y2(x.size());
        const double fl = 5.0 * rows * cols;
        const double gs =
            time_gflops([&] { kn::serial::softmax_rows(x.data(), y1.data(), rows, cols); }, fl);
        const double gp =
            time_gflops([&] { kn::par::softmax_rows(x.data(), y2.data(), rows, cols); }, fl);
        row("softmax 2176x17", gs, gp, std::memcmp(y1.data(), y2.data(), y1.size() * 8) == 0);
    }

    {
        const i64 rows = 544, cols = 64;
        auto x = random_vec(static_cast<std::size_t>(rows * cols), rng);
        auto gain = random_vec(static_cast<std::size_t>(cols), rng);
        auto bias = random_vec(static_cast<std::size_t>(cols), rng);
        std::vector<double> y1(x.size()), y2(x.size());
        std::vector<double> m1(static_cast<std::size_t>(rows)), r1(m1), m2(m1), r2(m1);
        const double fl = 8.0 * rows * cols;
        const double gs = time_gflops(
            [&] {
                kn::serial::layernorm_rows(x.data(), gain.data(), bias.data(), 1e-5, y1.data(),
                                           m1.data(), r1.data(), rows, cols);
            },
            fl);
        const double gp = time_gflops(
            [&] {
                kn::par::layernorm_rows(x.data(), gain.data(), bias.data(), 1e-5, y2.data(),
                                        m2.data(), r2.data(), rows, cols);
            },
            fl);
        row("layernorm 544x64", gs, gp, std::memcmp(y1.data(), y2.data(), y1.size() * 8) == 0);
    }

    {
        const i64 n = 544 * 256;
        auto x = random_vec(static_cast<std::size_t>(n), rng);
        std::vector<double> y1(x.size()), y2(x.size());
        const double fl = 14.0 * n;
        const double gs = time_gflops([&] { kn::serial::gelu(x.data(), y1.data(), n); }, fl);
        const double gp = time_gflops([&] { kn::par::gelu(x.data(), y2.data(), n); }, fl);
        row("gelu 139264", gs, gp, std::memcmp(y1.data(), y2.data(), y1.size() * 8) == 0);
    }

    return 0;
}
