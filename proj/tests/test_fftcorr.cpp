#include "test_support.hpp"

#include <vickam/fftcorr.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace vickam;
using testkit::capture_error;

namespace {

// Straight transcription of the centre-aligned, zero-extended definition.
std::vector<double> oracle_xcorr(const std::vector<double>& x, std::size_t h, std::size_t w, std::size_t c,
                                 const std::vector<double>& p, std::size_t ps) {
    std::vector<double> out(h * w, 0.0);
    const long half = static_cast<long>(ps / 2);
    for (long u = 0; u < static_cast<long>(h); ++u) {
        for (long v = 0; v < static_cast<long>(w); ++v) {
            double s = 0.0;
            for (long a = 0; a < static_cast<long>(ps); ++a) {
                for (long b = 0; b < static_cast<long>(ps); ++b) {
                    const long i = u + a - half, j = v + b - half;
                    if (i < 0 || j < 0 || i >= static_cast<long>(h) || j >= static_cast<long>(w)) continue;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        s += x[(i * w + j) * c + ch] * p[(a * ps + b) * c + ch];
                    }
                }
            }
            out[u * w + v] = s / static_cast<double>(c);
        }
    }
    return out;
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

FeatureMap fm(std::size_t h, std::size_t w, std::size_t c, const std::vector<double>& v) {
    return FeatureMap(Tensor::from_doubles({h, w, c}, v));
}

Prototype proto(std::size_t p, std::size_t c, const std::vector<double>& v) {
    return {Tensor::from_doubles({p, p, c}, v), 0};
}

} // namespace

TEST(Fft2d, ConstantGridIsDcOnly) {
    const std::vector<double> g(16, 2.5);
    const auto s = fft::fft2d(g, 4, 4);
    EXPECT_NEAR(s[0].real(), 40.0, 1e-12);
    EXPECT_NEAR(s[0].imag(), 0.0, 1e-12);
    for (std::size_t i = 1; i < 16; ++i) EXPECT_NEAR(std::abs(s[i]), 0.0, 1e-12) << i;
}

TEST(Fft2d, ImpulseIsAllOnes) {
    for (auto [r, c] : {std::pair{4, 4}, std::pair{3, 5}, std::pair{6, 7}}) {
        std::vector<double> g(r * c, 0.0);
        g[0] = 1.0;
        for (const auto& v : fft::fft2d(g, r, c)) {
            EXPECT_NEAR(v.real(), 1.0, 1e-12);
            EXPECT_NEAR(v.imag(), 0.0, 1e-12);
        }
    }
}

TEST(Fft2d, RoundTrip) {
    for (auto [r, c] : {std::pair{8, 8}, std::pair{5, 12}, std::pair{90, 160}}) {
        const auto g = testkit::random_values(r * c, 11);
        const auto back = fft::ifft2d(fft::fft2d(g, r, c), r, c);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ASSERT_NEAR(back[i].real(), g[i], 1e-9);
            ASSERT_NEAR(back[i].imag(), 0.0, 1e-9);
        }
    }
}

TEST(Fft2d, MatchesDirectDft) {
    const std::size_t r = 3, c = 5;
    const auto g = testkit::random_values(r * c, 3);
    const auto s = fft::fft2d(g, r, c);
    for (std::size_t k = 0; k < r; ++k) {
        for (std::size_t l = 0; l < c; ++l) {
            std::complex<double> acc{0, 0};
            for (std::size_t m = 0; m < r; ++m) {
                for (std::size_t n = 0; n < c; ++n) {
                    const double ang = -2 * M_PI * (double(k * m) / r + double(l * n) / c);
                    acc += g[m * c + n] * std::complex<double>(std::cos(ang), std::sin(ang));
                }
            }
            EXPECT_NEAR(std::abs(s[k * c + l] - acc), 0.0, 1e-10);
        }
    }
}

TEST(Xcorr, ImpulseAgainstOnesTemplate) {
    std::vector<double> x(16, 0.0);
    x[1 * 4 + 1] = 1.0;
    const auto X = fm(4, 4, 1, x);
    const auto P = proto(3, 1, std::vector<double>(9, 1.0));
    for (const auto& out : {xcorr_naive(X, P), xcorr_fft(X, P)}) {
        for (std::size_t u = 0; u < 4; ++u) {
            for (std::size_t v = 0; v < 4; ++v) {
                const double want = (u <= 2 && v <= 2) ? 1.0 : 0.0;
                EXPECT_NEAR(out.at(u, v), want, 1e-9) << u << "," << v;
            }
        }
    }
}

TEST(Xcorr, OneByOneTemplateIsChannelDot) {
    const std::size_t h = 5, w = 6, c = 3;
    const auto x = testkit::random_values(h * w * c, 5);
    const std::vector<double> wts{0.5, -2.0, 1.25};
    const auto X = fm(h, w, c, x);
    const auto P = proto(1, c, wts);
    const auto a = xcorr_naive(X, P), b = xcorr_fft(X, P);
    for (std::size_t i = 0; i < h * w; ++i) {
        double want = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) want += x[i * c + ch] * wts[ch];
        want /= c;
        EXPECT_NEAR(a[i], want, 1e-6);
        EXPECT_NEAR(b[i], want, 1e-6);
    }
}

TEST(Xcorr, ZeroInputGivesZero) {
    const auto X = fm(6, 6, 2, std::vector<double>(72, 0.0));
    const auto P = proto(3, 2, testkit::random_values(18, 1));
    const auto a = xcorr_fft(X, P), b = xcorr_naive(X, P);
    for (float v : a.data()) EXPECT_NEAR(v, 0.0f, 1e-12);
    for (float v : b.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Xcorr, SeededEightByEightMatchesOracle) {
    const auto xt = seeded_fill({8, 8, 2}, 42);
    const auto pt = seeded_fill({3, 3, 2}, 42);
    const auto want = oracle_xcorr(xt.to_doubles(), 8, 8, 2, pt.to_doubles(), 3);
    const auto got = correlate_fft64(xt.to_doubles(), 8, 8, 2, pt.to_doubles(), 3);
    const auto naive = correlate_naive64(xt.to_doubles(), 8, 8, 2, pt.to_doubles(), 3);
    for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_LE(std::abs(got[i] - want[i]), 1e-6 * std::max(1.0, std::abs(want[i])));
        EXPECT_NEAR(naive[i], want[i], 1e-12);
    }
}

TEST(Xcorr, WideGrid) {
    const std::size_t h = 90, w = 160, c = 8, p = 7;
    const auto x = seeded_fill({h, w, c}, 1).to_doubles();
    const auto pk = seeded_fill({p, p, c}, 2).to_doubles();
    const auto want = oracle_xcorr(x, h, w, c, pk, p);
    const auto got = correlate_fft64(x, h, w, c, pk, p);
    double diff = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i) diff = std::max(diff, std::abs(got[i] - want[i]));
    EXPECT_LE(diff / max_abs(want), 1e-6);
}

TEST(Xcorr, SizeSweepSmall) {
    std::uint32_t seed = 100;
    for (std::size_t h : {5, 7, 16}) {
        for (std::size_t w : {5, 9, 16}) {
            for (std::size_t p : {1, 3, 5}) {
                for (std::size_t c : {1, 2}) {
                    const auto x = testkit::random_values(h * w * c, ++seed);
                    const auto pk = testkit::random_values(p * p * c, ++seed);
                    const auto want = oracle_xcorr(x, h, w, c, pk, p);
                    const auto got = correlate_fft64(x, h, w, c, pk, p);
                    double diff = 0.0;
                    for (std::size_t i = 0; i < want.size(); ++i) diff = std::max(diff, std::abs(got[i] - want[i]));
                    EXPECT_LE(diff, 1e-6 * (1.0 + max_abs(want))) << h << "x" << w << "x" << c << " p" << p;
                }
            }
        }
    }
}

TEST(Xcorr, Linearity) {
    const std::size_t h = 10, w = 12, c = 2, p = 5;
    const auto x1 = testkit::random_values(h * w * c, 1), x2 = testkit::random_values(h * w * c, 2);
    const auto pk = testkit::random_values(p * p * c, 3);
    const double alpha = 1.75, beta = -0.5;
    std::vector<double> mix(x1.size());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * x1[i] + beta * x2[i];
    const auto lhs = correlate_fft64(mix, h, w, c, pk, p);
    const auto r1 = correlate_fft64(x1, h, w, c, pk, p), r2 = correlate_fft64(x2, h, w, c, pk, p);
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], alpha * r1[i] + beta * r2[i], 1e-9);
}

TEST(Xcorr, InteriorShiftEquivariance) {
    const std::size_t h = 20, w = 24, c = 2, p = 3;
    const long du = 2, dv = 3;
    const auto x = testkit::random_values(h * w * c, 9);
    std::vector<double> shifted(x.size(), 0.0);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            const long si = long(i) - du, sj = long(j) - dv;
            if (si < 0 || sj < 0) continue;
            for (std::size_t ch = 0; ch < c; ++ch) shifted[(i * w + j) * c + ch] = x[(si * w + sj) * c + ch];
        }
    }
    const auto pk = testkit::random_values(p * p * c, 10);
    const auto a = correlate_fft64(x, h, w, c, pk, p);
    const auto b = correlate_fft64(shifted, h, w, c, pk, p);
    for (std::size_t u = p + du; u + p < h; ++u) {
        for (std::size_t v = p + dv; v + p < w; ++v) {
            EXPECT_NEAR(b[u * w + v], a[(u - du) * w + (v - dv)], 1e-9);
        }
    }
}

TEST(Xcorr, ChannelAverage) {
    const std::size_t h = 9, w = 11, c = 3, p = 3;
    const auto x = testkit::random_values(h * w * c, 21);
    const auto pk = testkit::random_values(p * p * c, 22);
    const auto full = correlate_fft64(x, h, w, c, pk, p);
    std::vector<double> mean(h * w, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        std::vector<double> xc(h * w), pc(p * p);
        for (std::size_t i = 0; i < h * w; ++i) xc[i] = x[i * c + ch];
        for (std::size_t i = 0; i < p * p; ++i) pc[i] = pk[i * c + ch];
        const auto one = correlate_fft64(xc, h, w, 1, pc, p);
        for (std::size_t i = 0; i < h * w; ++i) mean[i] += one[i] / c;
    }
    for (std::size_t i = 0; i < h * w; ++i) EXPECT_NEAR(full[i], mean[i], 1e-9);
}

TEST(Xcorr, ShapeErrorsNameBothShapes) {
    const auto X = fm(4, 4, 2, std::vector<double>(32, 0.0));
    const auto e1 = capture_error([&] { xcorr_fft(X, proto(3, 1, std::vector<double>(9, 0.0))); });
    EXPECT_EQ(e1.code(), ErrorCode::shape);
    EXPECT_TRUE(testkit::mentions(e1, "[4x4x2]"));
    EXPECT_TRUE(testkit::mentions(e1, "[3x3x1]"));
    const auto e2 = capture_error([&] { xcorr_naive(X, proto(5, 2, std::vector<double>(50, 0.0))); });
    EXPECT_EQ(e2.code(), ErrorCode::shape);
}

TEST(ActionMaps, SingletonBankEqualsXcorr) {
    const auto xt = seeded_fill({12, 14, 3}, 4);
    const auto pt = seeded_fill({1, 5, 5, 3}, 5);
    const PrototypeBank bank{pt, {1}, {"a"}};
    const auto stack = gen_action_maps(FeatureMap(xt), bank);
    const auto single = xcorr_fft(FeatureMap(xt), bank.prototype(0));
    ASSERT_EQ(stack.maps.numel(), single.numel());
    for (std::size_t i = 0; i < single.numel(); ++i) EXPECT_EQ(stack.maps[i], single[i]);
}

TEST(ActionMaps, DuplicatePrototypesGiveEqualMaps) {
    auto pt = seeded_fill({3, 3, 3, 2}, 8);
    for (std::size_t i = 0; i < 18; ++i) pt[2 * 18 + i] = pt[i];
    const PrototypeBank bank{pt, {1, 1, 1}, {"a", "b", "c"}};
    const auto stack = gen_action_maps(FeatureMap(seeded_fill({10, 10, 2}, 9)), bank);
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(stack.maps[i], stack.maps[200 + i]);
}

TEST(ActionMaps, EachSliceMatchesOracle) {
    const std::size_t h = 11, w = 13, c = 2, p = 3;
    const auto xt = seeded_fill({h, w, c}, 30);
    const auto pt = seeded_fill({3, p, p, c}, 31);
    const PrototypeBank bank{pt, {1, 1, 1}, {"a", "b", "c"}};
    const auto stack = gen_action_maps(FeatureMap(xt), bank);
    ASSERT_EQ(stack.maps.dims(), (Dims{3, h, w}));
    for (std::size_t k = 0; k < 3; ++k) {
        const auto pk = bank.prototype(k).patch.to_doubles();
        const auto want = oracle_xcorr(xt.to_doubles(), h, w, c, pk, p);
        for (std::size_t i = 0; i < h * w; ++i) {
            EXPECT_NEAR(stack.maps[k * h * w + i], want[i], 1e-6 * (1.0 + max_abs(want)));
        }
    }
}

TEST(ActionMaps, EmptyBankIsAnError) {
    const PrototypeBank empty;
    const auto e = capture_error([&] { gen_action_maps(FeatureMap(seeded_fill({6, 6, 1}, 1)), empty); });
    EXPECT_EQ(e.code(), ErrorCode::shape);
    EXPECT_TRUE(testkit::mentions(e, "empty"));
}

TEST(Bench, ReportStructure) {
    BenchConfig cfg;
    cfg.h = 32;
    cfg.w = 32;
    cfg.channels = 2;
    cfg.p = 5;
    cfg.repeats = 3;
    const auto r = bench_corr(cfg);
    ASSERT_EQ(r.records.size(), 2u);
    EXPECT_EQ(r.records[0].backend, "naive");
    EXPECT_EQ(r.records[1].backend, "fft");
    EXPECT_TRUE(r.agreement);
    const auto j = to_json(r.records[1]);
    for (const char* key : {"backend", "h", "w", "C", "p", "K_a", "median_ns", "agreement"}) {
        EXPECT_TRUE(j.contains(key)) << key;
    }
}

TEST(Bench, RepeatsDoNotChangeCorrectness) {
    BenchConfig a;
    a.repeats = 1;
    BenchConfig b = a;
    b.repeats = 9;
    const auto ra = bench_corr(a), rb = bench_corr(b);
    EXPECT_EQ(ra.agreement, rb.agreement);
    EXPECT_EQ(ra.max_rel_error, rb.max_rel_error);
}
