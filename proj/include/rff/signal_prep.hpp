#pragma once

#include <complex>
#include <cstdint>
#include <vector>

namespace rff::sig {

// One labeled CIR trace as read from the receiver's CIR register: a vector of
// complex amplitudes plus the emitter's identity/placement labels.
struct CirMeasurement {
    std::vector<std::complex<double>> samples;
    uint16_t device_id = 0;
    uint16_t location_id = 0;
    uint8_t session_id = 0;
    float distance_m = 1.0f;
};

// Throws InvalidArgument on wrong length or non-finite samples.
void validate(const CirMeasurement& m, size_t expected_len);

struct StftConfig {
    int window_len = 32;
    int hop = 7;
    int n_bins = 32;

    // Throws InvalidArgument unless window_len <= signal_len, hop >= 1 and
    // n_bins == window_len (full complex DFT of a complex input).
    void validate(size_t signal_len) const;
    int frames(size_t signal_len) const {
        return static_cast<int>((signal_len - static_cast<size_t>(window_len)) /
                                static_cast<size_t>(hop)) +
               1;
    }
};

// 32x32 real grid fed to the encoders, min-max scaled to [0,1], with the
// source labels carried along.
struct ModelInput {
    int rows = 0;
    int cols = 0;
    std::vector<double> grid;  // row-major, rows = frames, cols = bins
    uint16_t device_id = 0;
    uint16_t location_id = 0;
    uint8_t session_id = 0;

    double at(int r, int c) const { return grid[static_cast<size_t>(r) * cols + c]; }
};

// Symmetric Hann window: w[k] = 0.5*(1 - cos(2*pi*k/(len-1))); [1.0] for len 1.
std::vector<double> hann_window(int len);

// Min-max scales sample magnitudes into [0,1], keeping each sample's phase.
// A constant-magnitude trace maps to all zeros.
CirMeasurement normalize_amplitude(const CirMeasurement& m);

// Translates the trace so the strongest sample (earliest index on ties) lands
// at target_index. Vacated positions are zero-filled, nothing wraps around.
CirMeasurement center_peak(const CirMeasurement& m, int target_index = 50);

// Windowed DFT grid, frames x n_bins row-major. Bin w holds
// sum_n x[n] * hann[n - t*hop] * exp(-j * (2*pi*w/n_bins) * n)
// over the window of frame t, with n the absolute sample index.
std::vector<std::complex<double>> stft(const CirMeasurement& m, const StftConfig& cfg);

// normalize_amplitude -> center_peak -> stft -> magnitude -> per-grid min-max.
// The config must yield a 32x32 grid (the encoders' input shape).
ModelInput preprocess(const CirMeasurement& m, const StftConfig& cfg = {});

}  // namespace rff::sig
