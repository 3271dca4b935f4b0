#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "clvit/kernels.hpp"
#include "clvit/rng.hpp"

using namespace clvit;
namespace kn = clvit::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("serial and parallel lanes agree bit for bit") {
    Rng rng(42);
    for (int trial = 0; trial < 5; ++trial) {
        const kn::i64 m = 17 + trial, k = 23, n = 31;
        auto a = random_vec(static_cast<std::size_t>(m * k), rng);
        auto b = random_vec(static_cast<std::size_t>(k * n), rng);
        std::vector<double> c1(static_cast<std::size_t>(m * n)), c2 = c1;

        kn::serial::mm_nn(a.data(), b.data(), c1.data(), m, k, n, false);
        kn::par::mm_nn(a.data(), b.data(), c2.data(), m, k, n, false);
        CHECK(bit_equal(c1, c2));

        // mm_tn reads a as [r=m, k] columns and writes a [k, n] result
        std::vector<double> t1(static_cast<std::size_t>(k * n)), t2 = t1;
        kn::serial::mm_tn(a.data(), b.data(), t1.data(), m, k, n, false);
        kn::par::mm_tn(a.data(), b.data(), t2.data(), m, k, n, false);
        CHECK(bit_equal(t1, t2));
    }
}

TEST_CASE("mm_tn matches transpose-then-multiply") {
    Rng rng(1);
    const kn::i64 r = 6, m = 4, n = 5;
    auto a = random_vec(static_cast<std::size_t>(r * m), rng);  // [r,m]
    auto b = random_vec(static_cast<std::size_t>(r * n), rng);  // [r,n]

    std::vector<double> at(static_cast<std::size_t>(m * r));
    kn::serial::transpose_2d(a.data(), at.data(), r, m);
    std::vector<double> expect(static_cast<std::size_t>(m * n));
    kn::serial::mm_nn(at.data(), b.data(), expect.data(), m, r, n, false);

    std::vector<double> got(static_cast<std::size_t>(m * n));
    kn::serial::mm_tn(a.data(), b.data(), got.data(), r, m, n, false);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-13));
}

TEST_CASE("bmm slices match repeated 2-D calls") {
    Rng rng(2);
    const kn::i64 nb = 3, m = 4, k = 5, n = 6;
    auto a = random_vec(static_cast<std::size_t>(nb * m * k), rng);
    auto b = random_vec(static_cast<std::size_t>(nb * k * n), rng);
    std::vector<double> c(static_cast<std::size_t>(nb * m * n));
    kn::serial::bmm_nn(a.data(), b.data(), c.data(), nb, m, k, n, k * n, false);

    for (kn::i64 s = 0; s < nb; ++s) {
        std::vector<double> ref(static_cast<std::size_t>(m * n));
        kn::serial::mm_nn(a.data() + s * m * k, b.data() + s * k * n, ref.data(), m, k, n, false);
        for (kn::i64 i = 0; i < m * n; ++i)
            CHECK(c[static_cast<std::size_t>(s * m * n + i)] == ref[static_cast<std::size_t>(i)]);
    }

    // broadcast right operand: stride 0 shares the first slice
    std::vector<double> cb(static_cast<std::size_t>(nb * m * n));
    kn::serial::bmm_nn(a.data(), b.data(), cb.data(), nb, m, k, n, 0, false);
    std::vector<double> ref(static_cast<std::size_t>(m * n));
    kn::serial::mm_nn(a.data() + 2 * m * k, b.data(), ref.data(), m, k, n, false);
    for (kn::i64 i = 0; i < m * n; ++i)
        CHECK(cb[static_cast<std::size_t>(2 * m * n + i)] == ref[static_cast<std::size_t>(i)]);
}

TEST_CASE("row kernels agree across lanes") {
    Rng rng(3);
    const kn::i64 rows = 37, cols = 19;
    auto x = random_vec(static_cast<std::size_t>(rows * cols), rng);
    auto gain = random_vec(static_cast<std::size_t>(cols), rng);
    auto bias = random_vec(static_cast<std::size_t>(cols), rng);

    std::vector<double> y1(x.size()), y2(x.size());
    CHECK(kn::serial::softmax_rows(x.data(), y1.data(), rows, cols));
    CHECK(kn::par::softmax_rows(x.data(), y2.data(), rows, cols));
    CHECK(bit_equal(y1, y2));

    std::vector<double> m1(static_cast<std::size_t>(rows)), r1 = m1, m2 = m1, r2 = m1;
    std::vector<double> l1(x.size()), l2(x.size());
    kn::serial::layernorm_rows(x.data(), gain.data(), bias.data(), 1e-5, l1.data(), m1.data(),
                               r1.data(), rows, cols);
    kn::par::layernorm_rows(x.data(), gain.data(), bias.data(), 1e-5, l2.data(), m2.data(),
                            r2.data(), rows, cols);
    CHECK(bit_equal(l1, l2));

    std::vector<double> g1(x.size()), g2(x.size());
    kn::serial::gelu(x.data(), g1.data(), rows * cols);
    kn::par::gelu(x.data(), g2.data(), rows * cols);
    CHECK(bit_equal(g1, g2));
}

TEST_CASE("accumulate variants add instead of overwrite") {
    Rng rng(4);
    const kn::i64 m = 3, k = 4, n = 2;
    auto a = random_vec(static_cast<std::size_t>(m * k), rng);
    auto b = random_vec(static_cast<std::size_t>(k * n), rng);
    std::vector<double> base(static_cast<std::size_t>(m * n), 1.5);
    std::vector<double> fresh(static_cast<std::size_t>(m * n));
    kn::serial::mm_nn(a.data(), b.data(), fresh.data(), m, k, n, false);
    kn::serial::mm_nn(a.data(), b.data(), base.data(), m, k, n, true);
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK(base[i] == doctest::Approx(fresh[i] + 1.5).epsilon(1e-14));
}

TEST_CASE("dispatch respects the serial section") {
    CHECK(kn::parallel_enabled());
    {
        kn::SerialSection guard;
        CHECK_FALSE(kn::parallel_enabled());
        {
            kn::SerialSection nested;
            CHECK_FALSE(kn::parallel_enabled());
        }
        CHECK_FALSE(kn::parallel_enabled());
    }
    CHECK(kn::parallel_enabled());
}

TEST_CASE("transpose roundtrip") {
    Rng rng(5);
    auto a = random_vec(35, rng);
    std::vector<double> t(35), back(35);
    kn::serial::transpose_2d(a.data(), t.data(), 5, 7);
    kn::serial::transpose_2d(t.data(), back.data(), 7, 5);
    CHECK(bit_equal(a, back));
}
