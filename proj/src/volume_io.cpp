#include "qmri/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "qmri/errors.hpp"

namespace qmri {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 0;
constexpr std::uint32_t kDtypeF64 = 1;

void put_u32(std::string& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                 static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    out.append(b, 4);
}

std::uint32_t get_u32(const std::string& in, std::size_t& off, const std::string& path) {
    if (off + 4 > in.size()) throw IoError(path + ": truncated header");
    const unsigned char* p = reinterpret_cast<const unsigned char*>(in.data() + off);
    off += 4;
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::size_t Volume::raster_size() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp + " for writing");
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw IoError("cannot move " + tmp + " to " + path);
    }
}

void write_volume(const std::string& path, const Volume& v) {
    if (v.dims.empty()) throw ConfigError("volume needs at least one dimension");
    for (std::uint32_t d : v.dims)
        if (d == 0) throw ConfigError("volume dimensions must be positive");
    if (v.channels == 0) throw ConfigError("volume needs at least one channel");
    const std::size_t raster = v.raster_size();
    if (v.data.size() != raster * v.channels)
        throw ConfigError("volume payload size does not match dims and channels");
    if (!v.mask.empty() && v.mask.size() != raster)
        throw ConfigError("volume mask size does not match dims");

    std::string bytes;
    bytes.reserve(32 + v.data.size() * (v.float64 ? 8 : 4) + v.mask.size());
    bytes.append("QMV1", 4);
    put_u32(bytes, kVersion);
    put_u32(bytes, static_cast<std::uint32_t>(v.dims.size()));
    for (std::uint32_t d : v.dims) put_u32(bytes, d);
    put_u32(bytes, v.channels);
    put_u32(bytes, v.float64 ? kDtypeF64 : kDtypeF32);
    put_u32(bytes, v.mask.empty() ? 0u : 1u);

    // Payload assumes a little-endian host; the formats here are defined LE.
    if (v.float64) {
        bytes.append(reinterpret_cast<const char*>(v.data.data()), v.data.size() * 8);
    } else {
        std::vector<float> f32(v.data.size());
        for (std::size_t i = 0; i < v.data.size(); ++i) f32[i] = static_cast<float>(v.data[i]);
        bytes.append(reinterpret_cast<const char*>(f32.data()), f32.size() * 4);
    }
    if (!v.mask.empty())
        bytes.append(reinterpret_cast<const char*>(v.mask.data()), v.mask.size());

    write_file_atomic(path, bytes);
}

Volume read_volume(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string bytes = ss.str();
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "QMV1", 4) != 0)
        throw IoError(path + ": not a volume file");

    std::size_t off = 4;
    const std::uint32_t version = get_u32(bytes, off, path);
    if (version != kVersion) throw IoError(path + ": unsupported volume version");
    const std::uint32_t ndim = get_u32(bytes, off, path);
    if (ndim == 0 || ndim > 8) throw IoError(path + ": bad dimension count");

    Volume v;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        const std::uint32_t d = get_u32(bytes, off, path);
        if (d == 0) throw IoError(path + ": zero dimension");
        v.dims.push_back(d);
    }
    v.channels = get_u32(bytes, off, path);
    if (v.channels == 0) throw IoError(path + ": zero channels");
    const std::uint32_t dtype = get_u32(bytes, off, path);
    if (dtype != kDtypeF32 && dtype != kDtypeF64) throw IoError(path + ": unknown dtype code");
    v.float64 = dtype == kDtypeF64;
    const std::uint32_t has_mask = get_u32(bytes, off, path);
    if (has_mask > 1) throw IoError(path + ": bad mask flag");

    const std::size_t raster = v.raster_size();
    const std::size_t n = raster * v.channels;
    if (raster == 0 || n / v.channels != raster) throw IoError(path + ": dimension overflow");
    const std::size_t elem = v.float64 ? 8 : 4;
    const std::size_t expect = off + n * elem + (has_mask ? raster : 0);
    if (bytes.size() != expect) throw IoError(path + ": payload length mismatch");

    v.data.resize(n);
    if (v.float64) {
        std::memcpy(v.data.data(), bytes.data() + off, n * 8);
    } else {
        std::vector<float> f32(n);
        std::memcpy(f32.data(), bytes.data() + off, n * 4);
        for (std::size_t i = 0; i < n; ++i) v.data[i] = static_cast<double>(f32[i]);
    }
    off += n * elem;
    if (has_mask) {
        v.mask.resize(raster);
        std::memcpy(v.mask.data(), bytes.data() + off, raster);
    }
    return v;
}

Volume volume_from_stack(const ContrastStack& stack, const std::vector<std::uint8_t>* mask) {
    Volume v;
    v.dims = {stack.width, stack.height};
    v.channels = static_cast<std::uint32_t>(stack.channels());
    v.data = stack.intensities;
    if (mask) v.mask = *mask;
    return v;
}

ContrastStack stack_from_volume(const Volume& v, Protocol protocol) {
    if (v.dims.size() != 2) throw ValidationError("stack volume must be two-dimensional");
    if (v.channels != protocol.size())
        throw ValidationError("volume channels do not match protocol entries");
    ContrastStack stack(v.dims[0], v.dims[1], std::move(protocol));
    stack.intensities = v.data;
    return stack;
}

Volume volume_from_map(const PropertyMap& map, const std::vector<std::uint8_t>* mask) {
    Volume v;
    v.dims = {map.width, map.height};
    v.channels = 3;
    v.data.resize(map.size() * 3);
    for (std::size_t i = 0; i < map.size(); ++i) {
        v.data[i] = map.voxels[i].t1_ms;
        v.data[map.size() + i] = map.voxels[i].t2s_ms;
        v.data[2 * map.size() + i] = map.voxels[i].pd;
    }
    if (mask) v.mask = *mask;
    return v;
}

PropertyMap map_from_volume(const Volume& v) {
    if (v.dims.size() != 2) throw ValidationError("property volume must be two-dimensional");
    if (v.channels != 3) throw ValidationError("property volume must have 3 channels");
    PropertyMap map(v.dims[0], v.dims[1]);
    for (std::size_t i = 0; i < map.size(); ++i) {
        map.voxels[i].t1_ms = v.data[i];
        map.voxels[i].t2s_ms = v.data[map.size() + i];
        map.voxels[i].pd = v.data[2 * map.size() + i];
    }
    return map;
}

void write_pgm(const std::string& path, std::uint32_t width, std::uint32_t height,
               const std::vector<double>& values, double lo, double hi) {
    if (values.size() != static_cast<std::size_t>(width) * height)
        throw ConfigError("pgm value count does not match dimensions");
    std::string bytes = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    const double span = hi - lo;
    for (double x : values) {
        double t = span > 0.0 ? (x - lo) / span : 0.5;
        t = std::clamp(t, 0.0, 1.0);
        bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
    }
    write_file_atomic(path, bytes);
}

}  // namespace qmri
