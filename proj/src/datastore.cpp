#include "rff/datastore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "rff/errors.hpp"
#include "rff/rng.hpp"

namespace rff::data {

using nlohmann::json;

// ---------------------------------------------------------------------------
// little-endian buffer primitives

namespace {

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
    put_u32(buf, std::bit_cast<uint32_t>(v));
}

struct Cursor {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size()) {
            throw FormatError(std::string("truncated file while reading ") + what, pos);
        }
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = static_cast<uint16_t>(static_cast<uint8_t>(buf[pos]) |
                                           (static_cast<uint8_t>(buf[pos + 1]) << 8));
        pos += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path, 0);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

void spill(const std::string& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path, 0);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw FormatError("short write to " + path, 0);
}

json meta_to_json(const DatasetMeta& meta) {
    json sessions = json::array();
    for (const auto& s : meta.sessions) {
        sessions.push_back({{"session_id", s.session_id},
                            {"distance_m", static_cast<double>(s.distance_m)},
                            {"day_tag", s.day_tag}});
    }
    return json{{"signal_len", meta.signal_len},
                {"num_devices", meta.num_devices},
                {"num_locations", meta.num_locations},
                {"measurements_per_cell", meta.measurements_per_cell},
                {"uwb_channel", meta.uwb_channel},
                {"center_freq_mhz", meta.center_freq_mhz},
                {"bandwidth_mhz", meta.bandwidth_mhz},
                {"sessions", sessions}};
}

DatasetMeta meta_from_json(const json& j, uint64_t offset) {
    static const std::set<std::string> known = {
        "signal_len",  "num_devices",     "num_locations", "measurements_per_cell",
        "uwb_channel", "center_freq_mhz", "bandwidth_mhz", "sessions"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw FormatError("unknown meta key '" + key + "'", offset);
    }
    DatasetMeta meta;
    try {
        meta.signal_len = j.at("signal_len").get<int>();
        meta.num_devices = j.at("num_devices").get<int>();
        meta.num_locations = j.at("num_locations").get<int>();
        meta.measurements_per_cell = j.at("measurements_per_cell").get<int>();
        meta.uwb_channel = j.at("uwb_channel").get<int>();
        meta.center_freq_mhz = j.at("center_freq_mhz").get<double>();
        meta.bandwidth_mhz = j.at("bandwidth_mhz").get<double>();
        meta.sessions.clear();
        for (const auto& s : j.at("sessions")) {
            SessionInfo info;
            info.session_id = static_cast<uint8_t>(s.at("session_id").get<int>());
            info.distance_m = static_cast<float>(s.at("distance_m").get<double>());
            info.day_tag = s.at("day_tag").get<std::string>();
            meta.sessions.push_back(std::move(info));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad meta JSON: ") + e.what(), offset);
    }
    return meta;
}

}  // namespace

// ---------------------------------------------------------------------------
// binary dataset format

static constexpr char kMagic[4] = {'U', 'W', 'B', 'F'};
static constexpr uint16_t kVersion = 1;

void write_dataset(const DatasetMeta& meta, const Records& records, const std::string& path) {
    for (size_t i = 0; i < records.size(); ++i) {
        try {
            sig::validate(records[i], static_cast<size_t>(meta.signal_len));
        } catch (const InvalidArgument& e) {
            throw InvalidArgument("record " + std::to_string(i) + ": " + e.what());
        }
    }

    std::string buf;
    buf.append(kMagic, 4);
    put_u16(buf, kVersion);
    const std::string meta_json = meta_to_json(meta).dump();
    put_u32(buf, static_cast<uint32_t>(meta_json.size()));
    buf.append(meta_json);
    put_u32(buf, static_cast<uint32_t>(records.size()));
    put_u16(buf, static_cast<uint16_t>(meta.signal_len));
    for (const auto& r : records) {
        put_u16(buf, r.device_id);
        put_u16(buf, r.location_id);
        buf.push_back(static_cast<char>(r.session_id));
        put_f32(buf, r.distance_m);
        for (const auto& s : r.samples) {
            put_f32(buf, static_cast<float>(s.real()));
            put_f32(buf, static_cast<float>(s.imag()));
        }
    }
    spill(path, buf);
}

Dataset read_dataset(const std::string& path) {
    const std::string buf = slurp(path);
    Cursor cur{buf};

    cur.need(4, "magic");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError("bad magic, expected UWBF", 0);
    cur.pos = 4;
    const uint16_t version = cur.u16("version");
    if (version != kVersion) {
        throw FormatError("unsupported version " + std::to_string(version), 4);
    }
    const uint32_t meta_len = cur.u32("meta length");
    const size_t meta_off = cur.pos;
    cur.need(meta_len, "meta JSON");
    json meta_json;
    try {
        meta_json = json::parse(buf.substr(meta_off, meta_len));
    } catch (const json::exception& e) {
        throw FormatError(std::string("meta JSON does not parse: ") + e.what(), meta_off);
    }
    Dataset ds;
    ds.meta = meta_from_json(meta_json, meta_off);
    cur.pos = meta_off + meta_len;

    const uint32_t num_records = cur.u32("record count");
    const uint16_t signal_len = cur.u16("signal length");
    if (signal_len != ds.meta.signal_len) {
        throw FormatError("record signal_len disagrees with meta", cur.pos - 2);
    }
    ds.records.resize(num_records);
    for (uint32_t i = 0; i < num_records; ++i) {
        auto& r = ds.records[i];
        r.device_id = cur.u16("device_id");
        r.location_id = cur.u16("location_id");
        r.session_id = cur.u8("session_id");
        r.distance_m = cur.f32("distance_m");
        r.samples.resize(signal_len);
        for (int k = 0; k < signal_len; ++k) {
            const float re = cur.f32("sample");
            const float im = cur.f32("sample");
            r.samples[static_cast<size_t>(k)] = {static_cast<double>(re), static_cast<double>(im)};
        }
    }
    if (cur.pos != buf.size()) {
        throw FormatError("trailing bytes after last record", cur.pos);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// CSV import / export

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

long parse_int(const std::string& tok, long lo, long hi, const char* what, size_t line_no) {
    char* end = nullptr;
    const long v = std::strtol(tok.c_str(), &end, 10);
    if (end == tok.c_str() || *end != '\0' || v < lo || v > hi) {
        throw ParseError(std::string("bad ") + what + " value '" + tok + "'", line_no);
    }
    return v;
}

float parse_float(const std::string& tok, const char* what, size_t line_no) {
    char* end = nullptr;
    const float v = std::strtof(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0' || !std::isfinite(v)) {
        throw ParseError(std::string("bad ") + what + " value '" + tok + "'", line_no);
    }
    return v;
}

}  // namespace

Dataset import_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path, 0);

    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty file, header row expected", 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = split_line(line);
    if (header.size() < 6 || header.size() % 2 != 0) {
        throw ParseError("header must be device_id,location_id,session_id,distance_m,re_0,im_0,...", 1);
    }
    const size_t L = (header.size() - 4) / 2;
    const char* fixed[4] = {"device_id", "location_id", "session_id", "distance_m"};
    for (int i = 0; i < 4; ++i) {
        if (header[static_cast<size_t>(i)] != fixed[i]) {
            throw ParseError("header column " + std::to_string(i) + " must be " + fixed[i], 1);
        }
    }
    for (size_t k = 0; k < L; ++k) {
        if (header[4 + 2 * k] != "re_" + std::to_string(k) ||
            header[5 + 2 * k] != "im_" + std::to_string(k)) {
            throw ParseError("header sample columns must be re_k,im_k pairs", 1);
        }
    }

    Dataset ds;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tok = split_line(line);
        if (tok.size() != header.size()) {
            throw ParseError("expected " + std::to_string(header.size()) + " columns, got " +
                                 std::to_string(tok.size()),
                             line_no);
        }
        sig::CirMeasurement m;
        m.device_id = static_cast<uint16_t>(parse_int(tok[0], 0, 65535, "device_id", line_no));
        m.location_id = static_cast<uint16_t>(parse_int(tok[1], 0, 65535, "location_id", line_no));
        m.session_id = static_cast<uint8_t>(parse_int(tok[2], 0, 255, "session_id", line_no));
        m.distance_m = parse_float(tok[3], "distance_m", line_no);
        m.samples.resize(L);
        for (size_t k = 0; k < L; ++k) {
            const float re = parse_float(tok[4 + 2 * k], "sample", line_no);
            const float im = parse_float(tok[5 + 2 * k], "sample", line_no);
            m.samples[k] = {static_cast<double>(re), static_cast<double>(im)};
        }
        ds.records.push_back(std::move(m));
    }

    // infer meta from the labels present
    std::set<uint16_t> devices, locations;
    std::map<uint8_t, float> sessions;
    std::map<std::pair<uint16_t, uint16_t>, int> cell_counts;
    for (const auto& r : ds.records) {
        devices.insert(r.device_id);
        locations.insert(r.location_id);
        sessions.emplace(r.session_id, r.distance_m);
        ++cell_counts[{r.device_id, r.location_id}];
    }
    ds.meta.signal_len = static_cast<int>(L);
    ds.meta.num_devices = static_cast<int>(devices.size());
    ds.meta.num_locations = static_cast<int>(locations.size());
    int max_cell = 0;
    for (const auto& [_, c] : cell_counts) max_cell = std::max(max_cell, c);
    ds.meta.measurements_per_cell = max_cell;
    for (const auto& [sid, dist] : sessions) {
        ds.meta.sessions.push_back({sid, dist, "imported"});
    }
    return ds;
}

void export_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ParseError("cannot write " + path, 0);
    out << "device_id,location_id,session_id,distance_m";
    for (int k = 0; k < ds.meta.signal_len; ++k) out << ",re_" << k << ",im_" << k;
    out << "\n";
    char num[64];
    for (const auto& r : ds.records) {
        out << r.device_id << ',' << r.location_id << ',' << static_cast<int>(r.session_id);
        std::snprintf(num, sizeof(num), ",%.9g", static_cast<double>(r.distance_m));
        out << num;
        for (const auto& s : r.samples) {
            std::snprintf(num, sizeof(num), ",%.9g,%.9g", s.real(), s.imag());
            out << num;
        }
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// scenario splits

std::string to_string(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::S1: return "S1";
        case ScenarioKind::S2: return "S2";
        case ScenarioKind::S3: return "S3";
        case ScenarioKind::S4: return "S4";
    }
    return "S?";
}

ScenarioKind scenario_from_string(const std::string& name) {
    if (name == "S1") return ScenarioKind::S1;
    if (name == "S2") return ScenarioKind::S2;
    if (name == "S3") return ScenarioKind::S3;
    if (name == "S4") return ScenarioKind::S4;
    throw InvalidArgument("unknown scenario kind '" + name + "', expected S1..S4");
}

namespace {

std::vector<uint16_t> pick_heldout(const std::set<uint16_t>& distinct, int count, RngStream& rng,
                                   const char* what) {
    if (count < 1) throw InvalidArgument(std::string("holdout count for ") + what + " must be >= 1");
    if (static_cast<size_t>(count) >= distinct.size()) {
        throw InvalidArgument(std::string("cannot hold out ") + std::to_string(count) + " " + what +
                              " from only " + std::to_string(distinct.size()));
    }
    std::vector<uint16_t> pool(distinct.begin(), distinct.end());
    rng.shuffle(pool);
    std::vector<uint16_t> held(pool.begin(), pool.begin() + count);
    std::sort(held.begin(), held.end());
    return held;
}

}  // namespace

ScenarioSplit make_split(const Records& records, ScenarioKind kind, uint64_t seed,
                         const SplitParams& params) {
    if (records.empty()) throw InvalidArgument("cannot split an empty record list");

    ScenarioSplit split;
    split.kind = kind;
    split.seed = seed;
    RngStream rng(seed);

    std::set<uint16_t> devices, locations;
    for (const auto& r : records) {
        devices.insert(r.device_id);
        locations.insert(r.location_id);
    }

    switch (kind) {
        case ScenarioKind::S1: {
            if (params.test_fraction < 0.0 || params.test_fraction >= 1.0) {
                throw InvalidArgument("test_fraction must lie in [0, 1)");
            }
            std::map<std::pair<uint16_t, uint16_t>, std::vector<uint32_t>> cells;
            for (uint32_t i = 0; i < records.size(); ++i) {
                cells[{records[i].device_id, records[i].location_id}].push_back(i);
            }
            for (auto& [_, idx] : cells) {
                rng.shuffle(idx);
                const size_t n_test =
                    static_cast<size_t>(static_cast<double>(idx.size()) * params.test_fraction);
                for (size_t k = 0; k < idx.size(); ++k) {
                    (k < n_test ? split.test_idx : split.train_idx).push_back(idx[k]);
                }
            }
            break;
        }
        case ScenarioKind::S2: {
            split.heldout_locations = pick_heldout(locations, params.holdout_locations, rng, "locations");
            for (uint32_t i = 0; i < records.size(); ++i) {
                const bool held = std::binary_search(split.heldout_locations.begin(),
                                                     split.heldout_locations.end(),
                                                     records[i].location_id);
                (held ? split.test_idx : split.train_idx).push_back(i);
            }
            break;
        }
        case ScenarioKind::S3: {
            split.heldout_devices = pick_heldout(devices, params.holdout_devices, rng, "devices");
            split.heldout_locations = pick_heldout(locations, params.holdout_locations, rng, "locations");
            for (uint32_t i = 0; i < records.size(); ++i) {
                const bool dev_held = std::binary_search(split.heldout_devices.begin(),
                                                         split.heldout_devices.end(),
                                                         records[i].device_id);
                const bool loc_held = std::binary_search(split.heldout_locations.begin(),
                                                         split.heldout_locations.end(),
                                                         records[i].location_id);
                if (dev_held) {
                    split.test_idx.push_back(i);  // held-out devices at every location
                } else if (!loc_held) {
                    split.train_idx.push_back(i);
                }
            }
            break;
        }
        case ScenarioKind::S4: {
            for (uint32_t i = 0; i < records.size(); ++i) {
                if (records[i].distance_m == 1.0f) split.train_idx.push_back(i);
                else if (records[i].distance_m == 2.0f) split.test_idx.push_back(i);
            }
            if (split.train_idx.empty() || split.test_idx.empty()) {
                throw InvalidArgument("scenario S4 needs records at 1 m (train) and 2 m (test)");
            }
            break;
        }
    }
    std::sort(split.train_idx.begin(), split.train_idx.end());
    std::sort(split.test_idx.begin(), split.test_idx.end());
    return split;
}

void write_split(const ScenarioSplit& split, const std::string& path) {
    const json j{{"kind", to_string(split.kind)},
                 {"seed", split.seed},
                 {"train_idx", split.train_idx},
                 {"test_idx", split.test_idx},
                 {"heldout_devices", split.heldout_devices},
                 {"heldout_locations", split.heldout_locations}};
    spill(path, j.dump());
}

ScenarioSplit read_split(const std::string& path) {
    const std::string buf = slurp(path);
    json j;
    try {
        j = json::parse(buf);
    } catch (const json::exception& e) {
        throw FormatError(std::string("split file does not parse: ") + e.what(), 0);
    }
    static const std::set<std::string> known = {"kind",           "seed",
                                                "train_idx",      "test_idx",
                                                "heldout_devices", "heldout_locations"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw FormatError("unknown split key '" + key + "'", 0);
    }
    ScenarioSplit split;
    try {
        split.kind = scenario_from_string(j.at("kind").get<std::string>());
        split.seed = j.at("seed").get<uint64_t>();
        split.train_idx = j.at("train_idx").get<std::vector<uint32_t>>();
        split.test_idx = j.at("test_idx").get<std::vector<uint32_t>>();
        split.heldout_devices = j.at("heldout_devices").get<std::vector<uint16_t>>();
        split.heldout_locations = j.at("heldout_locations").get<std::vector<uint16_t>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad split file: ") + e.what(), 0);
    }
    return split;
}

// ---------------------------------------------------------------------------
// synthetic campaign

Dataset synth_generate(const SynthConfig& cfg) {
    if (cfg.num_devices < 1) throw InvalidArgument("synth num_devices must be >= 1");
    if (cfg.num_locations < 1) throw InvalidArgument("synth num_locations must be >= 1");
    if (cfg.per_cell < 1) throw InvalidArgument("synth per_cell must be >= 1");
    if (cfg.multipath_taps < 1) throw InvalidArgument("synth multipath_taps must be >= 1");
    if (cfg.fingerprint_strength < 0.0) throw InvalidArgument("fingerprint_strength must be >= 0");
    if (cfg.noise_sigma < 0.0) throw InvalidArgument("noise_sigma must be >= 0");

    constexpr int kLen = 250;
    constexpr int kPeak = 50;
    constexpr int kMaxDelay = 40;
    constexpr double kFirDeviation = 0.12;
    constexpr double kIqDeviation = 0.06;

    RngStream rng(cfg.seed);

    // base pulse: Gaussian envelope, linear+quadratic phase, unit peak at kPeak
    std::vector<std::complex<double>> pulse(kLen);
    for (int n = 0; n < kLen; ++n) {
        const double t = n - kPeak;
        const double env = std::exp(-t * t / (2.0 * 6.0 * 6.0));
        const double phase = 0.9 * t + 0.015 * t * t;
        pulse[static_cast<size_t>(n)] = std::polar(env, phase);
    }

    // per-device hardware: identity FIR perturbed at strength, IQ gain imbalance
    struct DeviceFx {
        std::complex<double> fir[3];
        double gain_i, gain_q;
    };
    std::vector<DeviceFx> devices(static_cast<size_t>(cfg.num_devices));
    for (auto& d : devices) {
        const double s = cfg.fingerprint_strength * kFirDeviation;
        d.fir[0] = 1.0 + std::complex<double>(s * rng.normal(), s * rng.normal());
        d.fir[1] = std::complex<double>(s * rng.normal(), s * rng.normal());
        d.fir[2] = std::complex<double>(s * rng.normal(), s * rng.normal());
        d.gain_i = 1.0 + cfg.fingerprint_strength * kIqDeviation * rng.normal();
        d.gain_q = 1.0 + cfg.fingerprint_strength * kIqDeviation * rng.normal();
    }

    // per-location multipath: direct path plus decaying reflections
    struct Tap {
        int delay;
        std::complex<double> a;
    };
    std::vector<std::vector<Tap>> locations(static_cast<size_t>(cfg.num_locations));
    for (auto& taps : locations) {
        taps.resize(static_cast<size_t>(cfg.multipath_taps));
        for (int i = 0; i < cfg.multipath_taps; ++i) {
            const int delay = 1 + static_cast<int>(rng.below(kMaxDelay));
            const double mag = rng.uniform(0.35, 0.85) * std::pow(0.65, i);
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            taps[static_cast<size_t>(i)] = {delay, std::polar(mag, phase)};
        }
    }

    Dataset ds;
    ds.meta.signal_len = kLen;
    ds.meta.num_devices = cfg.num_devices;
    ds.meta.num_locations = cfg.num_locations;
    ds.meta.measurements_per_cell = cfg.per_cell;
    ds.meta.sessions = {{0, 1.0f, "day1"}};
    ds.records.reserve(static_cast<size_t>(cfg.num_devices) * cfg.num_locations * cfg.per_cell);

    std::vector<std::complex<double>> emitted(kLen), clean(kLen);
    for (int d = 0; d < cfg.num_devices; ++d) {
        const DeviceFx& fx = devices[static_cast<size_t>(d)];
        // transmitter chain: pulse through the device FIR, then IQ imbalance
        for (int n = 0; n < kLen; ++n) {
            std::complex<double> acc{0.0, 0.0};
            for (int k = 0; k < 3 && k <= n; ++k) acc += pulse[static_cast<size_t>(n - k)] * fx.fir[k];
            emitted[static_cast<size_t>(n)] = {acc.real() * fx.gain_i, acc.imag() * fx.gain_q};
        }
        for (int l = 0; l < cfg.num_locations; ++l) {
            const auto& taps = locations[static_cast<size_t>(l)];
            for (int n = 0; n < kLen; ++n) {
                std::complex<double> acc = emitted[static_cast<size_t>(n)];
                for (const Tap& tap : taps) {
                    if (n >= tap.delay) acc += tap.a * emitted[static_cast<size_t>(n - tap.delay)];
                }
                clean[static_cast<size_t>(n)] = acc;
            }
            for (int i = 0; i < cfg.per_cell; ++i) {
                sig::CirMeasurement m;
                m.device_id = static_cast<uint16_t>(d);
                m.location_id = static_cast<uint16_t>(l);
                m.session_id = 0;
                m.distance_m = 1.0f;
                m.samples.resize(kLen);
                for (int n = 0; n < kLen; ++n) {
                    const double re = clean[static_cast<size_t>(n)].real() + cfg.noise_sigma * rng.normal();
                    const double im = clean[static_cast<size_t>(n)].imag() + cfg.noise_sigma * rng.normal();
                    // round through f32 so the binary container is lossless
                    m.samples[static_cast<size_t>(n)] = {static_cast<double>(static_cast<float>(re)),
                                                         static_cast<double>(static_cast<float>(im))};
                }
                ds.records.push_back(std::move(m));
            }
        }
    }
    return ds;
}

}  // namespace rff::data
