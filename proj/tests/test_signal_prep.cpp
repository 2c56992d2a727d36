#include "rff/signal_prep.hpp"

#include <cmath>
#include <complex>

#include "doctest.h"
#include "rff/errors.hpp"
#include "rff/rng.hpp"

using namespace rff;
using sig::CirMeasurement;
using sig::StftConfig;

namespace {

CirMeasurement from_polar(const std::vector<double>& mags, const std::vector<double>& phases) {
    CirMeasurement m;
    for (size_t i = 0; i < mags.size(); ++i) m.samples.push_back(std::polar(mags[i], phases[i]));
    return m;
}

CirMeasurement random_trace(int len, uint64_t seed) {
    RngStream rng(seed);
    CirMeasurement m;
    m.samples.resize(static_cast<size_t>(len));
    for (auto& s : m.samples) s = {rng.normal(), rng.normal()};
    return m;
}

// direct evaluation of the windowed-DFT sum, kept independent of the library
// path (per-term std::exp instead of twiddle tables)
std::vector<std::complex<double>> stft_direct(const std::vector<std::complex<double>>& x, int W,
                                              int R, int N) {
    const int frames = static_cast<int>((x.size() - static_cast<size_t>(W)) / R) + 1;
    std::vector<std::complex<double>> grid(static_cast<size_t>(frames) * N);
    for (int t = 0; t < frames; ++t) {
        for (int w = 0; w < N; ++w) {
            std::complex<double> acc{0.0, 0.0};
            for (int i = 0; i < W; ++i) {
                const int n = t * R + i;
                const double hann =
                    W == 1 ? 1.0 : 0.5 * (1.0 - std::cos(2.0 * M_PI * i / (W - 1)));
                acc += x[static_cast<size_t>(n)] * hann *
                       std::exp(std::complex<double>(0.0, -2.0 * M_PI * w * n / N));
            }
            grid[static_cast<size_t>(t) * N + w] = acc;
        }
    }
    return grid;
}

}  // namespace

TEST_CASE("hann window values") {
    CHECK(sig::hann_window(1) == std::vector<double>{1.0});

    const auto w3 = sig::hann_window(3);
    CHECK(w3[0] == doctest::Approx(0.0));
    CHECK(w3[1] == doctest::Approx(1.0));
    CHECK(w3[2] == doctest::Approx(0.0));

    const auto w4 = sig::hann_window(4);
    CHECK(w4[0] == doctest::Approx(0.0));
    CHECK(w4[1] == doctest::Approx(0.75));
    CHECK(w4[2] == doctest::Approx(0.75));
    CHECK(w4[3] == doctest::Approx(0.0));

    CHECK_THROWS_AS(sig::hann_window(0), InvalidArgument);
}

TEST_CASE("normalize_amplitude rescales magnitudes and keeps phase") {
    const auto m = from_polar({0.0, 2.0, 1.0}, {0.0, M_PI / 2, 0.0});
    const auto out = sig::normalize_amplitude(m);
    CHECK(std::abs(out.samples[0]) == doctest::Approx(0.0));
    CHECK(std::abs(out.samples[1]) == doctest::Approx(1.0));
    CHECK(std::abs(out.samples[2]) == doctest::Approx(0.5));
    CHECK(std::arg(out.samples[1]) == doctest::Approx(M_PI / 2).epsilon(1e-12));
    CHECK(std::arg(out.samples[2]) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("normalize_amplitude is the identity for a [0,1] magnitude span") {
    const auto m = from_polar({0.0, 1.0, 0.25}, {0.0, 1.0, -2.0});
    const auto out = sig::normalize_amplitude(m);
    for (size_t i = 0; i < m.samples.size(); ++i) {
        CHECK(std::abs(out.samples[i] - m.samples[i]) < 1e-12);
    }
}

TEST_CASE("normalize_amplitude maps constant traces to zero") {
    const auto m = from_polar({0.7, 0.7, 0.7}, {0.0, 1.0, 2.0});
    const auto out = sig::normalize_amplitude(m);
    for (const auto& s : out.samples) CHECK(std::abs(s) == 0.0);
}

TEST_CASE("normalize_amplitude properties on random traces") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = random_trace(64, seed);
        const auto out = sig::normalize_amplitude(m);
        for (size_t i = 0; i < out.samples.size(); ++i) {
            const double mag = std::abs(out.samples[i]);
            CHECK(mag >= 0.0);
            CHECK(mag <= 1.0 + 1e-12);
            if (mag > 1e-12) {
                double dphi = std::arg(out.samples[i]) - std::arg(m.samples[i]);
                if (dphi > M_PI) dphi -= 2 * M_PI;
                if (dphi < -M_PI) dphi += 2 * M_PI;
                CHECK(std::abs(dphi) < 1e-9);
            }
        }
    }
}

TEST_CASE("center_peak leaves an already-centered trace unchanged") {
    CirMeasurement m;
    m.samples.assign(100, {0.01, 0.0});
    m.samples[50] = {5.0, 0.0};
    const auto out = sig::center_peak(m, 50);
    CHECK(out.samples == m.samples);
}

TEST_CASE("center_peak translates a unit impulse") {
    CirMeasurement m;
    m.samples.assign(100, {0.0, 0.0});
    m.samples[10] = {1.0, 0.0};
    const auto out = sig::center_peak(m, 50);
    for (int k = 0; k < 100; ++k) {
        if (k == 50) CHECK(out.samples[static_cast<size_t>(k)] == std::complex<double>{1.0, 0.0});
        else CHECK(out.samples[static_cast<size_t>(k)] == std::complex<double>{0.0, 0.0});
    }
}

TEST_CASE("center_peak breaks magnitude ties toward the earliest index") {
    CirMeasurement m;
    m.samples.assign(100, {0.0, 0.0});
    m.samples[10] = {0.0, 2.0};
    m.samples[30] = {2.0, 0.0};
    const auto out = sig::center_peak(m, 50);
    CHECK(out.samples[50] == std::complex<double>{0.0, 2.0});  // the peak at 10 moved
    CHECK(out.samples[70] == std::complex<double>{2.0, 0.0});
}

TEST_CASE("center_peak is idempotent") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        const auto m = random_trace(250, seed);
        const auto once = sig::center_peak(m);
        const auto twice = sig::center_peak(once);
        CHECK(once.samples == twice.samples);
        const int argmax = static_cast<int>(
            std::max_element(once.samples.begin(), once.samples.end(),
                             [](const auto& a, const auto& b) { return std::abs(a) < std::abs(b); }) -
            once.samples.begin());
        CHECK(argmax == 50);
    }
}

TEST_CASE("stft of all-zero input is all zero") {
    CirMeasurement m;
    m.samples.assign(250, {0.0, 0.0});
    const auto grid = sig::stft(m, {});
    for (const auto& v : grid) CHECK(std::abs(v) == 0.0);
}

TEST_CASE("stft of a pure tone peaks at its bin") {
    const int N = 32;
    const int k0 = 5;
    CirMeasurement m;
    for (int n = 0; n < N; ++n) {
        m.samples.push_back(std::exp(std::complex<double>(0.0, 2.0 * M_PI * k0 * n / N)));
    }
    StftConfig cfg;
    cfg.window_len = N;
    cfg.hop = 1;
    cfg.n_bins = N;
    const auto grid = sig::stft(m, cfg);  // one frame spanning the tone
    int best = 0;
    for (int w = 1; w < N; ++w) {
        if (std::abs(grid[static_cast<size_t>(w)]) > std::abs(grid[static_cast<size_t>(best)])) best = w;
    }
    CHECK(best == k0);
}

TEST_CASE("stft matches the direct sum across window/hop settings") {
    for (int window : {8, 16, 32}) {
        for (int hop : {4, 7, 8}) {
            for (uint64_t seed = 0; seed < 4; ++seed) {
                const auto m = random_trace(250, 1000 * static_cast<uint64_t>(window) + seed);
                StftConfig cfg;
                cfg.window_len = window;
                cfg.hop = hop;
                cfg.n_bins = window;
                const auto got = sig::stft(m, cfg);
                const auto want = stft_direct(m.samples, window, hop, window);
                REQUIRE(got.size() == want.size());
                for (size_t i = 0; i < got.size(); ++i) {
                    CHECK(std::abs(got[i] - want[i]) < 1e-6);
                }
            }
        }
    }
}

TEST_CASE("stft rejects a window longer than the signal") {
    const auto m = random_trace(16, 1);
    StftConfig cfg;
    cfg.window_len = 32;
    cfg.n_bins = 32;
    CHECK_THROWS_AS(sig::stft(m, cfg), InvalidArgument);
}

TEST_CASE("preprocess zero trace stays zero") {
    CirMeasurement m;
    m.samples.assign(250, {0.0, 0.0});
    const auto grid = sig::preprocess(m);
    CHECK(grid.rows == 32);
    CHECK(grid.cols == 32);
    for (double v : grid.grid) CHECK(v == 0.0);
}

TEST_CASE("preprocess hits [0,1] with defaults and is deterministic") {
    const auto m = random_trace(250, 99);
    const auto a = sig::preprocess(m);
    const auto b = sig::preprocess(m);
    CHECK(a.grid == b.grid);  // bit-identical
    CHECK(a.rows * a.cols == 1024);
    double lo = 1e300, hi = -1e300;
    for (double v : a.grid) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo == 0.0);
    CHECK(hi == 1.0);
}

TEST_CASE("preprocess rejects geometry that does not yield 32x32") {
    const auto m = random_trace(250, 5);
    StftConfig cfg;
    cfg.window_len = 16;
    cfg.hop = 7;
    cfg.n_bins = 16;
    CHECK_THROWS_AS(sig::preprocess(m, cfg), InvalidArgument);
}

TEST_CASE("measurement validation flags non-finite samples and bad lengths") {
    auto m = random_trace(250, 3);
    CHECK_NOTHROW(sig::validate(m, 250));
    CHECK_THROWS_AS(sig::validate(m, 251), InvalidArgument);
    m.samples[10] = {std::nan(""), 0.0};
    CHECK_THROWS_AS(sig::validate(m, 250), InvalidArgument);
}
