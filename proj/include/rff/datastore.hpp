#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rff/signal_prep.hpp"

namespace rff::data {

struct SessionInfo {
    uint8_t session_id = 0;
    float distance_m = 1.0f;
    std::string day_tag;
};

struct DatasetMeta {
    int signal_len = 250;
    int num_devices = 13;
    int num_locations = 50;
    int measurements_per_cell = 2000;
    int uwb_channel = 5;
    double center_freq_mhz = 6489.6;
    double bandwidth_mhz = 500.0;
    std::vector<SessionInfo> sessions;
};

using Records = std::vector<sig::CirMeasurement>;

struct Dataset {
    DatasetMeta meta;
    Records records;
};

// Binary dataset container, little-endian:
//   "UWBF" | u16 version=1 | u32 meta_len | meta JSON | u32 num_records |
//   u16 signal_len | per record: u16 device, u16 location, u8 session,
//   f32 distance_m, signal_len x (f32 re, f32 im)
// Sample values are quantized to f32 on write; read(write(x)) is bit-exact
// for synthesized or previously loaded records.
void write_dataset(const DatasetMeta& meta, const Records& records, const std::string& path);
Dataset read_dataset(const std::string& path);

// CSV schema: device_id,location_id,session_id,distance_m,re_0,im_0,...,re_{L-1},im_{L-1}
// Meta labels are inferred from the distinct values seen.
Dataset import_csv(const std::string& path);
void export_csv(const Dataset& ds, const std::string& path);

enum class ScenarioKind { S1, S2, S3, S4 };
std::string to_string(ScenarioKind kind);
ScenarioKind scenario_from_string(const std::string& name);

struct ScenarioSplit {
    ScenarioKind kind = ScenarioKind::S1;
    std::vector<uint32_t> train_idx;
    std::vector<uint32_t> test_idx;
    std::vector<uint16_t> heldout_devices;
    std::vector<uint16_t> heldout_locations;
    uint64_t seed = 0;
};

struct SplitParams {
    int holdout_devices = 3;
    int holdout_locations = 3;
    double test_fraction = 0.2;
};

// S1: per (device, location) cell a seeded test_fraction goes to test.
// S2: records at seeded-random held-out locations form the test set.
// S3: held-out devices and locations are excluded from train; test holds every
//     record of the held-out devices.
// S4: train = 1 m session records, test = 2 m session records.
ScenarioSplit make_split(const Records& records, ScenarioKind kind, uint64_t seed,
                         const SplitParams& params = {});

void write_split(const ScenarioSplit& split, const std::string& path);
ScenarioSplit read_split(const std::string& path);

struct SynthConfig {
    int num_devices = 13;
    int num_locations = 50;
    int per_cell = 100;
    double fingerprint_strength = 1.0;
    int multipath_taps = 5;
    double noise_sigma = 0.02;
    uint64_t seed = 0;
};

// Deterministic synthetic CIR campaign: Gaussian-envelope chirp pulse,
// per-device length-3 FIR + IQ gain imbalance (both scaled by
// fingerprint_strength), per-location multipath FIR, per-measurement complex
// Gaussian noise. Record order is device-major, then location, then index.
Dataset synth_generate(const SynthConfig& cfg);

}  // namespace rff::data
