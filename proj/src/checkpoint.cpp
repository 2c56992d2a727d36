#include "rff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "rff/errors.hpp"

namespace rff::nn {

namespace {

constexpr char kMagic[4] = {'U', 'W', 'B', 'P'};
constexpr uint16_t kVersion = 1;

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

void save_checkpoint(const ParamSet& params, const std::string& path) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u16(buf, kVersion);
    put_u32(buf, static_cast<uint32_t>(params.count()));
    for (const auto& p : params) {
        if (p.name.size() > 65535) throw InvalidArgument("parameter name too long");
        put_u16(buf, static_cast<uint16_t>(p.name.size()));
        buf.append(p.name);
        buf.push_back(static_cast<char>(p.value.shape.size()));
        for (int d : p.value.shape) put_u32(buf, static_cast<uint32_t>(d));
        for (double v : p.value.data) put_u32(buf, std::bit_cast<uint32_t>(static_cast<float>(v)));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path, 0);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw FormatError("short write to " + path, 0);
}

void load_checkpoint(ParamSet& params, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path, 0);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    size_t pos = 0;
    auto need = [&](size_t n, const char* what) {
        if (pos + n > buf.size()) {
            throw FormatError(std::string("truncated checkpoint while reading ") + what, pos);
        }
    };
    auto u16 = [&](const char* what) {
        need(2, what);
        const uint16_t v = static_cast<uint16_t>(static_cast<uint8_t>(buf[pos]) |
                                                 (static_cast<uint8_t>(buf[pos + 1]) << 8));
        pos += 2;
        return v;
    };
    auto u32 = [&](const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    };

    need(4, "magic");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError("bad magic, expected UWBP", 0);
    pos = 4;
    const uint16_t version = u16("version");
    if (version != kVersion) throw FormatError("unsupported checkpoint version", 4);
    const uint32_t count = u32("tensor count");

    std::set<std::string> seen;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = u16("name length");
        need(name_len, "name");
        const std::string name = buf.substr(pos, name_len);
        pos += name_len;
        need(1, "ndim");
        const int ndim = static_cast<uint8_t>(buf[pos++]);
        std::vector<int> shape(static_cast<size_t>(ndim));
        size_t numel = 1;
        for (int d = 0; d < ndim; ++d) {
            shape[static_cast<size_t>(d)] = static_cast<int>(u32("dimension"));
            numel *= static_cast<size_t>(shape[static_cast<size_t>(d)]);
        }
        Parameter* p = params.find(name);
        if (!p) throw FormatError("checkpoint tensor '" + name + "' has no matching parameter", pos);
        if (p->value.shape != shape) {
            throw FormatError("checkpoint tensor '" + name + "' shape mismatch", pos);
        }
        for (size_t j = 0; j < numel; ++j) {
            p->value.data[j] = static_cast<double>(std::bit_cast<float>(u32("tensor data")));
        }
        seen.insert(name);
    }
    if (pos != buf.size()) throw FormatError("trailing bytes after last tensor", pos);
    for (const auto& p : params) {
        if (!seen.count(p.name)) {
            throw FormatError("checkpoint is missing parameter '" + p.name + "'", pos);
        }
    }
}

}  // namespace rff::nn
