#include "rff/datastore.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "rff/errors.hpp"

using namespace rff;
using data::Dataset;
using data::ScenarioKind;

namespace {

namespace fs = std::filesystem;

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("rff_test_" + name)).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spill(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Dataset small_synth(uint64_t seed = 7, int devices = 4, int locations = 3, int per_cell = 5) {
    data::SynthConfig cfg;
    cfg.num_devices = devices;
    cfg.num_locations = locations;
    cfg.per_cell = per_cell;
    cfg.fingerprint_strength = 1.0;
    cfg.multipath_taps = 3;
    cfg.noise_sigma = 0.05;
    cfg.seed = seed;
    return data::synth_generate(cfg);
}

bool records_equal(const data::Records& a, const data::Records& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].device_id != b[i].device_id || a[i].location_id != b[i].location_id ||
            a[i].session_id != b[i].session_id || a[i].distance_m != b[i].distance_m ||
            a[i].samples != b[i].samples) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("dataset file round-trips bit-exactly") {
    const Dataset ds = small_synth();
    const std::string path = temp_path("roundtrip.uwbf");
    data::write_dataset(ds.meta, ds.records, path);
    const Dataset back = data::read_dataset(path);
    CHECK(records_equal(ds.records, back.records));
    CHECK(back.meta.signal_len == ds.meta.signal_len);
    CHECK(back.meta.num_devices == ds.meta.num_devices);

    // write(read(write(x))) must produce identical bytes
    const std::string path2 = temp_path("roundtrip2.uwbf");
    data::write_dataset(back.meta, back.records, path2);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("empty record list round-trips") {
    data::DatasetMeta meta;
    meta.sessions = {{0, 1.0f, "day1"}};
    const std::string path = temp_path("empty.uwbf");
    data::write_dataset(meta, {}, path);
    const Dataset back = data::read_dataset(path);
    CHECK(back.records.empty());
}

TEST_CASE("corrupted magic and truncation are rejected") {
    const Dataset ds = small_synth(3, 2, 2, 2);
    const std::string path = temp_path("corrupt.uwbf");
    data::write_dataset(ds.meta, ds.records, path);
    std::string bytes = slurp(path);

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    spill(path, bad_magic);
    CHECK_THROWS_AS(data::read_dataset(path), FormatError);

    spill(path, bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(data::read_dataset(path), FormatError);

    spill(path, bytes + "garbage");
    CHECK_THROWS_AS(data::read_dataset(path), FormatError);

    std::string bad_version = bytes;
    bad_version[4] = 9;
    spill(path, bad_version);
    CHECK_THROWS_AS(data::read_dataset(path), FormatError);
}

TEST_CASE("csv import parses rows and infers meta") {
    const Dataset ds = small_synth(5, 3, 2, 2);
    const std::string csv = temp_path("import.csv");
    data::export_csv(ds, csv);
    const Dataset back = data::import_csv(csv);
    REQUIRE(back.records.size() == ds.records.size());
    CHECK(back.meta.num_devices == 3);
    CHECK(back.meta.num_locations == 2);
    CHECK(back.meta.signal_len == 250);
    for (size_t i = 0; i < ds.records.size(); ++i) {
        CHECK(back.records[i].device_id == ds.records[i].device_id);
        // f32 values survive the %.9g text round trip exactly
        CHECK(back.records[i].samples == ds.records[i].samples);
    }
}

TEST_CASE("csv import keeps duplicate rows") {
    const std::string csv = temp_path("dup.csv");
    std::ofstream out(csv, std::ios::trunc);
    out << "device_id,location_id,session_id,distance_m,re_0,im_0,re_1,im_1\n";
    out << "1,2,0,1.0,0.5,-0.25,0.125,0\n";
    out << "1,2,0,1.0,0.5,-0.25,0.125,0\n";
    out.close();
    const Dataset back = data::import_csv(csv);
    CHECK(back.records.size() == 2);
    CHECK(back.records[0].samples == back.records[1].samples);
}

TEST_CASE("csv import names the offending row") {
    const std::string csv = temp_path("badrow.csv");
    {
        std::ofstream out(csv, std::ios::trunc);
        out << "device_id,location_id,session_id,distance_m,re_0,im_0,re_1,im_1\n";
        out << "1,2,0,1.0,0.5,-0.25,0.125,0\n";
        out << "1,2,0,1.0,0.5,-0.25\n";  // short row
    }
    try {
        data::import_csv(csv);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 3);
    }

    {
        std::ofstream out(csv, std::ios::trunc);
        out << "device_id,location_id,session_id,distance_m,re_0,im_0\n";
        out << "1,2,0,1.0,nan,0\n";
    }
    CHECK_THROWS_AS(data::import_csv(csv), ParseError);
}

TEST_CASE("S1 keeps every (device, location) cell in train") {
    const Dataset ds = small_synth(11, 4, 3, 10);
    const auto split = data::make_split(ds.records, ScenarioKind::S1, 42);
    std::set<std::pair<uint16_t, uint16_t>> train_cells, all_cells;
    for (uint32_t i : split.train_idx) {
        train_cells.insert({ds.records[i].device_id, ds.records[i].location_id});
    }
    for (const auto& r : ds.records) all_cells.insert({r.device_id, r.location_id});
    CHECK(train_cells == all_cells);
    // default 0.2 of each 10-record cell goes to test
    CHECK(split.test_idx.size() == all_cells.size() * 2);
}

TEST_CASE("S2 holds exactly the held-out locations out of train") {
    const Dataset ds = small_synth(13, 4, 6, 4);
    data::SplitParams params;
    params.holdout_locations = 3;
    const auto split = data::make_split(ds.records, ScenarioKind::S2, 42, params);
    REQUIRE(split.heldout_locations.size() == 3);
    std::set<uint16_t> held(split.heldout_locations.begin(), split.heldout_locations.end());
    for (uint32_t i : split.train_idx) CHECK(!held.count(ds.records[i].location_id));
    std::set<uint16_t> test_locs;
    for (uint32_t i : split.test_idx) test_locs.insert(ds.records[i].location_id);
    CHECK(test_locs == held);
}

TEST_CASE("S3 excludes held-out devices from train and queries them") {
    const Dataset ds = small_synth(17, 6, 6, 4);
    const auto split = data::make_split(ds.records, ScenarioKind::S3, 42);
    REQUIRE(split.heldout_devices.size() == 3);
    REQUIRE(split.heldout_locations.size() == 3);
    std::set<uint16_t> held_dev(split.heldout_devices.begin(), split.heldout_devices.end());
    std::set<uint16_t> held_loc(split.heldout_locations.begin(), split.heldout_locations.end());
    for (uint32_t i : split.train_idx) {
        CHECK(!held_dev.count(ds.records[i].device_id));
        CHECK(!held_loc.count(ds.records[i].location_id));
    }
    std::set<uint16_t> test_devs;
    for (uint32_t i : split.test_idx) test_devs.insert(ds.records[i].device_id);
    CHECK(test_devs == held_dev);
    // held-out devices are queried at every location
    std::set<uint16_t> test_locs;
    for (uint32_t i : split.test_idx) test_locs.insert(ds.records[i].location_id);
    CHECK(test_locs.size() == 6);
}

TEST_CASE("S4 partitions by session distance") {
    Dataset ds = small_synth(19, 3, 2, 3);
    for (size_t i = 0; i < ds.records.size(); ++i) {
        if (i % 3 == 0) {
            ds.records[i].session_id = 1;
            ds.records[i].distance_m = 2.0f;
        }
    }
    const auto split = data::make_split(ds.records, ScenarioKind::S4, 0);
    for (uint32_t i : split.train_idx) CHECK(ds.records[i].distance_m == 1.0f);
    for (uint32_t i : split.test_idx) CHECK(ds.records[i].distance_m == 2.0f);
    CHECK(split.train_idx.size() + split.test_idx.size() == ds.records.size());
}

TEST_CASE("S4 without a 2 m session is rejected") {
    const Dataset ds = small_synth(23, 3, 2, 3);
    CHECK_THROWS_AS(data::make_split(ds.records, ScenarioKind::S4, 0), InvalidArgument);
}

TEST_CASE("splits are disjoint, in range and deterministic") {
    const Dataset ds = small_synth(29, 6, 6, 4);
    for (ScenarioKind kind : {ScenarioKind::S1, ScenarioKind::S2, ScenarioKind::S3}) {
        const auto a = data::make_split(ds.records, kind, 5);
        const auto b = data::make_split(ds.records, kind, 5);
        CHECK(a.train_idx == b.train_idx);
        CHECK(a.test_idx == b.test_idx);
        std::set<uint32_t> train(a.train_idx.begin(), a.train_idx.end());
        for (uint32_t i : a.test_idx) {
            CHECK(!train.count(i));
            CHECK(i < ds.records.size());
        }
        const auto c = data::make_split(ds.records, kind, 6);
        CHECK((c.train_idx != a.train_idx || c.heldout_locations != a.heldout_locations ||
               kind == ScenarioKind::S1));
    }
}

TEST_CASE("holdouts larger than the distinct pool are rejected") {
    const Dataset ds = small_synth(31, 3, 3, 2);
    data::SplitParams params;
    params.holdout_locations = 3;  // all of them
    CHECK_THROWS_AS(data::make_split(ds.records, ScenarioKind::S2, 0, params), InvalidArgument);
    params.holdout_locations = 2;
    params.holdout_devices = 5;
    CHECK_THROWS_AS(data::make_split(ds.records, ScenarioKind::S3, 0, params), InvalidArgument);
}

TEST_CASE("split file round-trips bit-exactly") {
    const Dataset ds = small_synth(37, 5, 5, 3);
    const auto split = data::make_split(ds.records, ScenarioKind::S3, 123);
    const std::string path = temp_path("split.json");
    data::write_split(split, path);
    const auto back = data::read_split(path);
    CHECK(back.train_idx == split.train_idx);
    CHECK(back.test_idx == split.test_idx);
    CHECK(back.heldout_devices == split.heldout_devices);
    CHECK(back.seed == split.seed);
    const std::string path2 = temp_path("split2.json");
    data::write_split(back, path2);
    CHECK(slurp(path) == slurp(path2));

    spill(path, "{\"kind\": \"S1\", \"bogus\": 1}");
    CHECK_THROWS_AS(data::read_split(path), FormatError);
}

TEST_CASE("synth is deterministic and counts records") {
    const Dataset a = small_synth(41);
    const Dataset b = small_synth(41);
    CHECK(records_equal(a.records, b.records));

    data::SynthConfig cfg;
    cfg.num_devices = 13;
    cfg.num_locations = 50;
    cfg.per_cell = 20;
    cfg.seed = 1;
    const Dataset big = data::synth_generate(cfg);
    CHECK(big.records.size() == 13000);
    CHECK(big.meta.num_devices == 13);
    CHECK(big.meta.num_locations == 50);
}

TEST_CASE("zero fingerprint strength makes devices indistinguishable") {
    data::SynthConfig cfg;
    cfg.num_devices = 3;
    cfg.num_locations = 2;
    cfg.per_cell = 2;
    cfg.fingerprint_strength = 0.0;
    cfg.noise_sigma = 0.0;
    cfg.seed = 11;
    const Dataset ds = data::synth_generate(cfg);
    // with no noise and no fingerprint, every device emits the same signal at
    // a fixed location
    auto find = [&](int dev, int loc) {
        for (const auto& r : ds.records) {
            if (r.device_id == dev && r.location_id == loc) return r.samples;
        }
        FAIL("missing record");
        return ds.records[0].samples;
    };
    for (int loc = 0; loc < 2; ++loc) {
        const auto base = find(0, loc);
        for (int dev = 1; dev < 3; ++dev) CHECK(find(dev, loc) == base);
    }
}

TEST_CASE("synth config validation") {
    data::SynthConfig cfg;
    cfg.per_cell = 0;
    CHECK_THROWS_AS(data::synth_generate(cfg), InvalidArgument);
    cfg.per_cell = 1;
    cfg.multipath_taps = 0;
    CHECK_THROWS_AS(data::synth_generate(cfg), InvalidArgument);
    cfg.multipath_taps = 1;
    cfg.fingerprint_strength = -1.0;
    CHECK_THROWS_AS(data::synth_generate(cfg), InvalidArgument);
}
