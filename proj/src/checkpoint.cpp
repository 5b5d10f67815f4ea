// SPDX-License-Identifier: Apache-2.0

#include "neusg/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "neusg/error.hpp"
#include "neusg/io.hpp"
#include "neusg/rng.hpp"

namespace neusg {

namespace {

constexpr char kMagic[8] = {'N', 'E', 'U', 'S', 'G', 'C', 'K', 'P'};

template <class T>
void put(std::string& out, T v) {
    static_assert(std::is_arithmetic_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

void put_group(std::string& out, const std::string& name, const ParamList& params) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const Param& p : params) {
        put_string(out, p.name);
        put<std::uint8_t>(out, p.decay ? 1 : 0);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rows));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.cols));
        for (double v : p.value.data) put(out, v);
    }
}

std::uint64_t checksum(const char* data, std::size_t n) { return hash_name(std::string_view(data, n)); }

class Reader {
public:
    explicit Reader(const std::string& s) : s_(s) {}

    template <class T>
    T get(const char* what) {
        if (pos_ + sizeof(T) > end_) throw LoadError(std::string("checkpoint truncated in ") + what);
        unsigned char b[sizeof(T)];
        std::memcpy(b, s_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        T v;
        std::memcpy(&v, b, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string(const char* what) {
        const auto n = get<std::uint32_t>(what);
        if (pos_ + n > end_) throw LoadError(std::string("checkpoint truncated in ") + what);
        std::string out = s_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    void set_end(std::size_t e) { end_ = e; }
    [[nodiscard]] std::size_t pos() const { return pos_; }

private:
    const std::string& s_;
    std::size_t pos_ = 0;
    std::size_t end_ = 0;
};

ParamList get_group(Reader& r, const std::string& expected) {
    const std::string name = r.get_string("group name");
    if (name != expected) throw LoadError("checkpoint: expected group '" + expected + "', found '" + name + "'");
    const auto count = r.get<std::uint32_t>("group size");
    ParamList out;
    for (std::uint32_t i = 0; i < count; ++i) {
        Param p;
        p.name = r.get_string("parameter name");
        p.decay = r.get<std::uint8_t>("parameter flags") != 0;
        const auto rows = r.get<std::uint32_t>("parameter shape");
        const auto cols = r.get<std::uint32_t>("parameter shape");
        p.value = diff::Tensor(static_cast<int>(rows), static_cast<int>(cols));
        for (double& v : p.value.data) v = r.get<double>(p.name.c_str());
        out.push_back(std::move(p));
    }
    return out;
}

void copy_into(ParamList& dst, const ParamList& src, const std::string& group) {
    if (dst.size() != src.size()) throw LoadError("checkpoint: " + group + " parameter count does not match the config");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].name != src[i].name || dst[i].value.rows != src[i].value.rows || dst[i].value.cols != src[i].value.cols)
            throw LoadError("checkpoint: " + group + " parameter " + src[i].name + " does not match the config");
        dst[i].value = src[i].value;
    }
}

}  // namespace

std::string serialize_checkpoint(const AppConfig& config, const TrainState& state) {
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put_string(out, config_to_ini(config));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(state.net.grid().active_levels()));
    put_group(out, "sdf", state.net.params());
    put_group(out, "render", state.render);
    put_group(out, "gaussians", state.gaussians);
    put<std::uint64_t>(out, state.points.size());
    for (const Vec3& p : state.points)
        for (int c = 0; c < 3; ++c) put(out, p[c]);
    put<std::uint64_t>(out, checksum(out.data(), out.size()));
    return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
    if (bytes.size() < sizeof kMagic + 12 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw LoadError("checkpoint: bad magic");
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    if constexpr (std::endian::native == std::endian::big) stored = __builtin_bswap64(stored);
    if (stored != checksum(bytes.data(), bytes.size() - 8))
        throw LoadError("checkpoint: checksum mismatch (truncated or corrupt)");
    Reader r(bytes);
    r.set_end(bytes.size() - 8);
    for (std::size_t i = 0; i < sizeof kMagic; ++i) r.get<char>("magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) throw LoadError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    apply_config(ck.config, parse_config(r.get_string("config")));
    const TrainConfig& tc = ck.config.train;
    const auto levels = r.get<std::uint32_t>("levels");
    ck.state.net = SdfNetwork(tc.sdf, tc.seed);
    copy_into(ck.state.net.params(), get_group(r, "sdf"), "sdf");
    if (levels < 1 || static_cast<int>(levels) > ck.state.net.grid().levels())
        throw LoadError("checkpoint: active level count out of range");
    ck.state.net.set_active_levels(static_cast<int>(levels));
    ck.state.render = make_render_params(tc.init_inv_s);
    copy_into(ck.state.render, get_group(r, "render"), "render");
    ck.state.gaussians = get_group(r, "gaussians");
    if (ck.state.gaussians.size() != 5) throw LoadError("checkpoint: malformed Gaussian group");
    const auto n = r.get<std::uint64_t>("points");
    for (std::uint64_t i = 0; i < n; ++i) {
        Vec3 p;
        for (int c = 0; c < 3; ++c) p[c] = r.get<double>("points");
        ck.state.points.push_back(p);
    }
    if (r.pos() != bytes.size() - 8) throw LoadError("checkpoint: trailing bytes");
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const AppConfig& config, const TrainState& state) {
    write_file_atomic(path, serialize_checkpoint(config, state));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace neusg
