#include "rff/signal_prep.hpp"

#include <algorithm>
#include <cmath>

#include "rff/errors.hpp"

namespace rff::sig {

void validate(const CirMeasurement& m, size_t expected_len) {
    if (m.samples.size() != expected_len) {
        throw InvalidArgument("measurement has " + std::to_string(m.samples.size()) +
                              " samples, dataset declares " + std::to_string(expected_len));
    }
    for (const auto& s : m.samples) {
        if (!std::isfinite(s.real()) || !std::isfinite(s.imag())) {
            throw InvalidArgument("measurement contains non-finite samples");
        }
    }
}

void StftConfig::validate(size_t signal_len) const {
    if (window_len < 1) throw InvalidArgument("stft window_len must be >= 1");
    if (hop < 1) throw InvalidArgument("stft hop must be >= 1");
    if (n_bins != window_len) {
        throw InvalidArgument("stft n_bins must equal window_len (full complex DFT)");
    }
    if (static_cast<size_t>(window_len) > signal_len) {
        throw InvalidArgument("stft window_len " + std::to_string(window_len) +
                              " exceeds signal length " + std::to_string(signal_len));
    }
}

std::vector<double> hann_window(int len) {
    if (len < 1) throw InvalidArgument("hann_window length must be >= 1");
    if (len == 1) return {1.0};
    std::vector<double> w(static_cast<size_t>(len));
    for (int k = 0; k < len; ++k) {
        w[static_cast<size_t>(k)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * k / (len - 1)));
    }
    return w;
}

CirMeasurement normalize_amplitude(const CirMeasurement& m) {
    CirMeasurement out = m;
    if (m.samples.empty()) return out;

    double lo = std::abs(m.samples[0]);
    double hi = lo;
    for (const auto& s : m.samples) {
        const double a = std::abs(s);
        lo = std::min(lo, a);
        hi = std::max(hi, a);
    }
    if (hi == lo) {
        for (auto& s : out.samples) s = 0.0;
        return out;
    }
    const double span = hi - lo;
    for (size_t k = 0; k < m.samples.size(); ++k) {
        const double a = std::abs(m.samples[k]);
        if (a == 0.0) {
            out.samples[k] = 0.0;  // magnitude 0 implies lo == 0
            continue;
        }
        out.samples[k] = m.samples[k] * ((a - lo) / span / a);
    }
    return out;
}

CirMeasurement center_peak(const CirMeasurement& m, int target_index) {
    const int n = static_cast<int>(m.samples.size());
    if (target_index < 0 || target_index >= n) {
        throw InvalidArgument("center_peak target_index out of range");
    }
    int peak = 0;
    double best = -1.0;
    for (int k = 0; k < n; ++k) {
        const double a = std::abs(m.samples[static_cast<size_t>(k)]);
        if (a > best) {  // strict: earliest index wins ties
            best = a;
            peak = k;
        }
    }
    const int shift = target_index - peak;
    CirMeasurement out = m;
    for (int k = 0; k < n; ++k) {
        const int src = k - shift;
        out.samples[static_cast<size_t>(k)] =
            (src >= 0 && src < n) ? m.samples[static_cast<size_t>(src)] : 0.0;
    }
    return out;
}

std::vector<std::complex<double>> stft(const CirMeasurement& m, const StftConfig& cfg) {
    const size_t len = m.samples.size();
    cfg.validate(len);

    const int W = cfg.window_len;
    const int N = cfg.n_bins;
    const int frames = cfg.frames(len);
    const std::vector<double> hann = hann_window(W);

    // twiddle[w][i] = exp(-j * 2*pi*w*i / N)
    std::vector<std::complex<double>> twiddle(static_cast<size_t>(N) * W);
    for (int w = 0; w < N; ++w) {
        for (int i = 0; i < W; ++i) {
            const double ang = -2.0 * M_PI * w * i / N;
            twiddle[static_cast<size_t>(w) * W + i] = {std::cos(ang), std::sin(ang)};
        }
    }

    std::vector<std::complex<double>> grid(static_cast<size_t>(frames) * N);
    std::vector<std::complex<double>> windowed(static_cast<size_t>(W));
    for (int t = 0; t < frames; ++t) {
        const int start = t * cfg.hop;
        for (int i = 0; i < W; ++i) {
            windowed[static_cast<size_t>(i)] =
                m.samples[static_cast<size_t>(start + i)] * hann[static_cast<size_t>(i)];
        }
        for (int w = 0; w < N; ++w) {
            std::complex<double> acc{0.0, 0.0};
            const std::complex<double>* tw = &twiddle[static_cast<size_t>(w) * W];
            for (int i = 0; i < W; ++i) acc += windowed[static_cast<size_t>(i)] * tw[i];
            // the exponent runs over the absolute sample index n = start + i
            const double ang = -2.0 * M_PI * w * start / N;
            grid[static_cast<size_t>(t) * N + w] =
                acc * std::complex<double>{std::cos(ang), std::sin(ang)};
        }
    }
    return grid;
}

ModelInput preprocess(const CirMeasurement& m, const StftConfig& cfg) {
    validate(m, m.samples.size());
    const int frames = cfg.frames(m.samples.size());
    if (frames != 32 || cfg.n_bins != 32) {
        throw InvalidArgument("stft geometry must yield a 32x32 grid, got " +
                              std::to_string(frames) + "x" + std::to_string(cfg.n_bins));
    }

    const CirMeasurement centered = center_peak(normalize_amplitude(m));
    const auto spec = stft(centered, cfg);

    ModelInput out;
    out.rows = frames;
    out.cols = cfg.n_bins;
    out.device_id = m.device_id;
    out.location_id = m.location_id;
    out.session_id = m.session_id;
    out.grid.resize(spec.size());

    double lo = std::abs(spec[0]);
    double hi = lo;
    for (size_t i = 0; i < spec.size(); ++i) {
        out.grid[i] = std::abs(spec[i]);
        lo = std::min(lo, out.grid[i]);
        hi = std::max(hi, out.grid[i]);
    }
    if (hi == lo) {
        std::fill(out.grid.begin(), out.grid.end(), 0.0);
        return out;
    }
    const double span = hi - lo;
    for (double& v : out.grid) v = (v - lo) / span;
    return out;
}

}  // namespace rff::sig
