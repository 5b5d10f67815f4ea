// SPDX-License-Identifier: Apache-2.0

#include "neusg/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "neusg/error.hpp"
#include "neusg/flatten.hpp"

namespace neusg {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw std::runtime_error("write to " + tmp.string() + " failed");
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- PNG ------------------------------------------------------------------------

Image read_png(const fs::path& path) {
    const std::string bytes = read_file(path);
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        throw LoadError(path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw LoadError(path.string() + ": " + img.message);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height));
    for (std::size_t i = 0; i < buf.size(); ++i) out.data[i] = buf[i] / 255.0;
    return out;
}

void write_png(const fs::path& path, const Image& image) {
    std::vector<png_byte> buf(image.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = static_cast<png_byte>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0));
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_get_memory_size(img, size, 0, buf.data(), 0, nullptr))
        throw std::runtime_error("png encoding failed: " + std::string(img.message));
    std::string bytes(size, '\0');
    if (!png_image_write_to_memory(&img, bytes.data(), &size, 0, buf.data(), 0, nullptr))
        throw std::runtime_error("png encoding failed: " + std::string(img.message));
    bytes.resize(size);
    write_file_atomic(path, bytes);
}

// ---- PFM ------------------------------------------------------------------------

Image read_pfm(const fs::path& path) {
    const std::string bytes = read_file(path);
    std::istringstream in(bytes);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    in >> magic >> w >> h >> scale;
    if (magic != "PF" || w <= 0 || h <= 0 || scale == 0.0) throw ParseError("bad PFM header", 0);
    in.get();
    const std::size_t start = static_cast<std::size_t>(in.tellg());
    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3 * 4;
    if (bytes.size() < start + need) throw ParseError("truncated PFM data", bytes.size());
    const bool little = scale < 0.0;
    Image img(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                std::uint32_t u;
                std::memcpy(&u, bytes.data() + start + ((static_cast<std::size_t>(h - 1 - y) * w + x) * 3 + c) * 4, 4);
                if (little != (std::endian::native == std::endian::little)) u = __builtin_bswap32(u);
                img.at(x, y, c) = static_cast<double>(std::bit_cast<float>(u));
            }
        }
    }
    return img;
}

void write_pfm(const fs::path& path, const Image& image) {
    std::string out = "PF\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n-1.0\n";
    const std::size_t start = out.size();
    out.resize(start + image.data.size() * 4);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(image.at(x, y, c)));
                if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
                std::memcpy(out.data() + start + ((static_cast<std::size_t>(image.height - 1 - y) * image.width + x) * 3 + c) * 4,
                            &u, 4);
            }
        }
    }
    write_file_atomic(path, out);
}

// ---- PLY ------------------------------------------------------------------------

PlyType ply_type_from_name(const std::string& n) {
    if (n == "char" || n == "int8") return PlyType::Int8;
    if (n == "uchar" || n == "uint8") return PlyType::UInt8;
    if (n == "short" || n == "int16") return PlyType::Int16;
    if (n == "ushort" || n == "uint16") return PlyType::UInt16;
    if (n == "int" || n == "int32") return PlyType::Int32;
    if (n == "uint" || n == "uint32") return PlyType::UInt32;
    if (n == "float" || n == "float32") return PlyType::Float32;
    if (n == "double" || n == "float64") return PlyType::Float64;
    throw ContractViolation("unknown PLY type " + n);
}

const char* ply_type_name(PlyType t) {
    switch (t) {
        case PlyType::Int8: return "char";
        case PlyType::UInt8: return "uchar";
        case PlyType::Int16: return "short";
        case PlyType::UInt16: return "ushort";
        case PlyType::Int32: return "int";
        case PlyType::UInt32: return "uint";
        case PlyType::Float32: return "float";
        case PlyType::Float64: return "double";
    }
    return "?";
}

const PlyProperty* PlyElement::find(const std::string& p) const {
    for (const PlyProperty& q : properties)
        if (q.name == p) return &q;
    return nullptr;
}
PlyProperty* PlyElement::find(const std::string& p) {
    return const_cast<PlyProperty*>(static_cast<const PlyElement*>(this)->find(p));
}
const PlyElement* PlyData::find(const std::string& e) const {
    for (const PlyElement& q : elements)
        if (q.name == e) return &q;
    return nullptr;
}
PlyElement* PlyData::find(const std::string& e) { return const_cast<PlyElement*>(static_cast<const PlyData*>(this)->find(e)); }

namespace {

std::size_t type_size(PlyType t) {
    switch (t) {
        case PlyType::Int8:
        case PlyType::UInt8: return 1;
        case PlyType::Int16:
        case PlyType::UInt16: return 2;
        case PlyType::Int32:
        case PlyType::UInt32:
        case PlyType::Float32: return 4;
        case PlyType::Float64: return 8;
    }
    return 0;
}

bool is_integer(PlyType t) { return t != PlyType::Float32 && t != PlyType::Float64; }

template <class T>
T load_swapped(const char* p, bool swap) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, p, sizeof(T));
    if (swap) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

double load_binary(PlyType t, const char* p, bool swap) {
    switch (t) {
        case PlyType::Int8: return load_swapped<std::int8_t>(p, swap);
        case PlyType::UInt8: return load_swapped<std::uint8_t>(p, swap);
        case PlyType::Int16: return load_swapped<std::int16_t>(p, swap);
        case PlyType::UInt16: return load_swapped<std::uint16_t>(p, swap);
        case PlyType::Int32: return load_swapped<std::int32_t>(p, swap);
        case PlyType::UInt32: return load_swapped<std::uint32_t>(p, swap);
        case PlyType::Float32: return load_swapped<float>(p, swap);
        case PlyType::Float64: return load_swapped<double>(p, swap);
    }
    return 0.0;
}

template <class T>
void store_swapped(std::string& out, T v, bool swap) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if (swap) std::reverse(b, b + sizeof(T));
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

void store_binary(std::string& out, PlyType t, double v, bool swap) {
    switch (t) {
        case PlyType::Int8: store_swapped(out, static_cast<std::int8_t>(v), swap); break;
        case PlyType::UInt8: store_swapped(out, static_cast<std::uint8_t>(v), swap); break;
        case PlyType::Int16: store_swapped(out, static_cast<std::int16_t>(v), swap); break;
        case PlyType::UInt16: store_swapped(out, static_cast<std::uint16_t>(v), swap); break;
        case PlyType::Int32: store_swapped(out, static_cast<std::int32_t>(v), swap); break;
        case PlyType::UInt32: store_swapped(out, static_cast<std::uint32_t>(v), swap); break;
        case PlyType::Float32: store_swapped(out, static_cast<float>(v), swap); break;
        case PlyType::Float64: store_swapped(out, v, swap); break;
    }
}

void store_ascii(std::string& out, PlyType t, double v) {
    char buf[64];
    if (is_integer(t)) {
        std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
    } else if (t == PlyType::Float32) {
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(v)));
    } else {
        std::snprintf(buf, sizeof buf, "%.17g", v);
    }
    out += buf;
}

class Reader {
public:
    Reader(const std::string& bytes, std::size_t pos, PlyFormat f)
        : s_(bytes), pos_(pos), format_(f),
          swap_((f == PlyFormat::BinaryBigEndian) == (std::endian::native == std::endian::little)) {}

    double next(PlyType t) {
        if (format_ == PlyFormat::Ascii) {
            while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
            if (pos_ >= s_.size()) throw ParseError("PLY data ends before the declared element count", pos_);
            const std::size_t start = pos_;
            while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
            const std::string tok = s_.substr(start, pos_ - start);
            char* end = nullptr;
            const double v = std::strtod(tok.c_str(), &end);
            if (end != tok.c_str() + tok.size()) throw ParseError("bad PLY value '" + tok + "'", start);
            return t == PlyType::Float32 ? static_cast<double>(static_cast<float>(v)) : v;
        }
        const std::size_t n = type_size(t);
        if (pos_ + n > s_.size()) throw ParseError("PLY data ends before the declared element count", pos_);
        const double v = load_binary(t, s_.data() + pos_, swap_);
        pos_ += n;
        return v;
    }
    [[nodiscard]] std::size_t pos() const { return pos_; }

private:
    const std::string& s_;
    std::size_t pos_;
    PlyFormat format_;
    bool swap_;
};

}  // namespace

PlyData parse_ply(const std::string& bytes) {
    PlyData ply;
    std::size_t pos = 0;
    auto next_line = [&](std::size_t& line_start) {
        line_start = pos;
        const std::size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos) throw ParseError("PLY header is not terminated", pos);
        std::string line = bytes.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = nl + 1;
        return line;
    };
    std::size_t at = 0;
    if (next_line(at) != "ply") throw ParseError("missing 'ply' magic", 0);
    bool have_format = false;
    while (true) {
        const std::string line = next_line(at);
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (kw == "end_header") break;
        if (kw == "comment" || kw == "obj_info") {
            ply.comments.push_back(line.size() > kw.size() + 1 ? line.substr(kw.size() + 1) : "");
        } else if (kw == "format") {
            std::string f, version;
            ls >> f >> version;
            if (f == "ascii") {
                ply.format = PlyFormat::Ascii;
            } else if (f == "binary_little_endian") {
                ply.format = PlyFormat::BinaryLittleEndian;
            } else if (f == "binary_big_endian") {
                ply.format = PlyFormat::BinaryBigEndian;
            } else {
                throw ParseError("unknown PLY format '" + f + "'", at);
            }
            have_format = true;
        } else if (kw == "element") {
            PlyElement e;
            long long count = -1;
            ls >> e.name >> count;
            if (e.name.empty() || count < 0 || ls.fail()) throw ParseError("malformed element line", at);
            e.count = static_cast<std::size_t>(count);
            ply.elements.push_back(std::move(e));
        } else if (kw == "property") {
            if (ply.elements.empty()) throw ParseError("property before any element", at);
            PlyProperty p;
            std::string t;
            ls >> t;
            try {
                if (t == "list") {
                    std::string ct, it;
                    ls >> ct >> it >> p.name;
                    p.is_list = true;
                    p.count_type = ply_type_from_name(ct);
                    p.type = ply_type_from_name(it);
                } else {
                    ls >> p.name;
                    p.type = ply_type_from_name(t);
                }
            } catch (const ContractViolation& e) {
                throw ParseError(e.what(), at);
            }
            if (p.name.empty()) throw ParseError("property without a name", at);
            ply.elements.back().properties.push_back(std::move(p));
        } else {
            throw ParseError("unexpected header line '" + line + "'", at);
        }
    }
    if (!have_format) throw ParseError("PLY header has no format line", 0);

    Reader r(bytes, pos, ply.format);
    for (PlyElement& e : ply.elements) {
        for (PlyProperty& p : e.properties) {
            if (p.is_list) {
                p.lists.resize(e.count);
            } else {
                p.values.resize(e.count);
            }
        }
        for (std::size_t i = 0; i < e.count; ++i) {
            for (PlyProperty& p : e.properties) {
                if (!p.is_list) {
                    p.values[i] = r.next(p.type);
                    continue;
                }
                const std::size_t before = r.pos();
                const double n = r.next(p.count_type);
                if (n < 0 || n != std::floor(n)) throw ParseError("bad list length", before);
                auto& list = p.lists[i];
                list.resize(static_cast<std::size_t>(n));
                for (double& v : list) v = r.next(p.type);
            }
        }
    }
    return ply;
}

PlyData read_ply(const fs::path& path) { return parse_ply(read_file(path)); }

std::string serialize_ply(const PlyData& ply) {
    std::string out = "ply\nformat ";
    out += ply.format == PlyFormat::Ascii                ? "ascii"
           : ply.format == PlyFormat::BinaryLittleEndian ? "binary_little_endian"
                                                         : "binary_big_endian";
    out += " 1.0\n";
    for (const std::string& c : ply.comments) out += "comment " + c + "\n";
    for (const PlyElement& e : ply.elements) {
        out += "element " + e.name + " " + std::to_string(e.count) + "\n";
        for (const PlyProperty& p : e.properties) {
            if (p.is_list) {
                out += std::string("property list ") + ply_type_name(p.count_type) + " " + ply_type_name(p.type) + " " + p.name + "\n";
            } else {
                out += std::string("property ") + ply_type_name(p.type) + " " + p.name + "\n";
            }
            if ((p.is_list ? p.lists.size() : p.values.size()) != e.count)
                throw ContractViolation("serialize_ply: property " + p.name + " does not match the element count");
        }
    }
    out += "end_header\n";
    const bool ascii = ply.format == PlyFormat::Ascii;
    const bool swap = (ply.format == PlyFormat::BinaryBigEndian) == (std::endian::native == std::endian::little);
    for (const PlyElement& e : ply.elements) {
        for (std::size_t i = 0; i < e.count; ++i) {
            bool first = true;
            auto put = [&](PlyType t, double v) {
                if (ascii) {
                    if (!first) out += ' ';
                    store_ascii(out, t, v);
                } else {
                    store_binary(out, t, v, swap);
                }
                first = false;
            };
            for (const PlyProperty& p : e.properties) {
                if (p.is_list) {
                    put(p.count_type, static_cast<double>(p.lists[i].size()));
                    for (double v : p.lists[i]) put(p.type, v);
                } else {
                    put(p.type, p.values[i]);
                }
            }
            if (ascii) out += '\n';
        }
    }
    return out;
}

void write_ply(const fs::path& path, const PlyData& ply) { write_file_atomic(path, serialize_ply(ply)); }

namespace {

PlyProperty scalar_property(const std::string& name, PlyType t, std::vector<double> v) {
    PlyProperty p;
    p.name = name;
    p.type = t;
    p.values = std::move(v);
    return p;
}

const PlyProperty& require_property(const PlyElement& e, const std::string& name) {
    const PlyProperty* p = e.find(name);
    if (!p || p->is_list) throw ParseError("PLY vertex element lacks property " + name, 0);
    return *p;
}

}  // namespace

PointCloud point_cloud_from_ply(const PlyData& ply) {
    const PlyElement* v = ply.find("vertex");
    if (!v) throw ParseError("PLY file has no vertex element", 0);
    PointCloud cloud;
    const auto& x = require_property(*v, "x").values;
    const auto& y = require_property(*v, "y").values;
    const auto& z = require_property(*v, "z").values;
    for (std::size_t i = 0; i < v->count; ++i) cloud.points.emplace_back(x[i], y[i], z[i]);
    const bool normals = v->find("nx") && v->find("ny") && v->find("nz");
    if (normals) {
        const auto& nx = require_property(*v, "nx").values;
        const auto& ny = require_property(*v, "ny").values;
        const auto& nz = require_property(*v, "nz").values;
        for (std::size_t i = 0; i < v->count; ++i) cloud.normals.emplace_back(nx[i], ny[i], nz[i]);
    }
    for (const PlyProperty& p : v->properties) {
        const bool known = p.name == "x" || p.name == "y" || p.name == "z" ||
                           (normals && (p.name == "nx" || p.name == "ny" || p.name == "nz"));
        if (!known) cloud.extra.push_back(p);
    }
    return cloud;
}

PlyData point_cloud_to_ply(const PointCloud& cloud, PlyFormat format) {
    const std::size_t n = cloud.points.size();
    if (!cloud.normals.empty() && cloud.normals.size() != n) throw ContractViolation("PointCloud: normals count mismatch");
    PlyElement v;
    v.name = "vertex";
    v.count = n;
    const char* axes[] = {"x", "y", "z"};
    for (int c = 0; c < 3; ++c) {
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = cloud.points[i][c];
        v.properties.push_back(scalar_property(axes[c], PlyType::Float64, std::move(col)));
    }
    if (!cloud.normals.empty()) {
        const char* names[] = {"nx", "ny", "nz"};
        for (int c = 0; c < 3; ++c) {
            std::vector<double> col(n);
            for (std::size_t i = 0; i < n; ++i) col[i] = cloud.normals[i][c];
            v.properties.push_back(scalar_property(names[c], PlyType::Float64, std::move(col)));
        }
    }
    for (const PlyProperty& p : cloud.extra) {
        if ((p.is_list ? p.lists.size() : p.values.size()) != n)
            throw ContractViolation("PointCloud: extra property " + p.name + " count mismatch");
        v.properties.push_back(p);
    }
    PlyData ply;
    ply.format = format;
    ply.elements.push_back(std::move(v));
    return ply;
}

PointCloud read_point_cloud(const fs::path& path) { return point_cloud_from_ply(read_ply(path)); }

void write_point_cloud(const fs::path& path, const PointCloud& cloud, PlyFormat format) {
    write_ply(path, point_cloud_to_ply(cloud, format));
}

PlyData gaussians_to_ply(const std::vector<Gaussian3D>& gs) {
    const std::size_t n = gs.size();
    const int k = gs.empty() ? 1 : gs.front().sh_coeffs();
    PlyElement v;
    v.name = "vertex";
    v.count = n;
    auto add = [&](const std::string& name, auto&& get) {
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = get(gs[i]);
        v.properties.push_back(scalar_property(name, PlyType::Float64, std::move(col)));
    };
    const char* axes[] = {"x", "y", "z"};
    for (int c = 0; c < 3; ++c) add(axes[c], [c](const Gaussian3D& g) { return g.position[c]; });
    for (int c = 0; c < 3; ++c) {
        add(std::string("n") + axes[c], [c](const Gaussian3D& g) { return gaussian_normal(g)[c]; });
    }
    for (int c = 0; c < 3; ++c)
        add("f_dc_" + std::to_string(c), [c, k](const Gaussian3D& g) { return g.sh[static_cast<std::size_t>(c * k)]; });
    for (int c = 0; c < 3; ++c)
        for (int i = 1; i < k; ++i)
            add("f_rest_" + std::to_string(c * (k - 1) + i - 1),
                [c, i, k](const Gaussian3D& g) { return g.sh[static_cast<std::size_t>(c * k + i)]; });
    add("opacity", [](const Gaussian3D& g) { return g.opacity_logit; });
    for (int c = 0; c < 3; ++c) add("scale_" + std::to_string(c), [c](const Gaussian3D& g) { return g.log_scale[c]; });
    for (int c = 0; c < 4; ++c)
        add("rot_" + std::to_string(c), [c](const Gaussian3D& g) { return g.rotation[static_cast<std::size_t>(c)]; });
    PlyData ply;
    ply.elements.push_back(std::move(v));
    return ply;
}

std::vector<Gaussian3D> gaussians_from_ply(const PlyData& ply) {
    const PlyElement* v = ply.find("vertex");
    if (!v) throw ParseError("PLY file has no vertex element", 0);
    int rest = 0;
    while (v->find("f_rest_" + std::to_string(rest))) ++rest;
    if (rest % 3 != 0) throw ParseError("f_rest count is not a multiple of three", 0);
    const int k = rest / 3 + 1;
    std::vector<Gaussian3D> gs(v->count);
    for (std::size_t i = 0; i < v->count; ++i) {
        Gaussian3D& g = gs[i];
        g.position = Vec3(require_property(*v, "x").values[i], require_property(*v, "y").values[i],
                          require_property(*v, "z").values[i]);
        g.sh.assign(static_cast<std::size_t>(3 * k), 0.0);
        for (int c = 0; c < 3; ++c) {
            g.sh[static_cast<std::size_t>(c * k)] = require_property(*v, "f_dc_" + std::to_string(c)).values[i];
            for (int j = 1; j < k; ++j)
                g.sh[static_cast<std::size_t>(c * k + j)] =
                    require_property(*v, "f_rest_" + std::to_string(c * (k - 1) + j - 1)).values[i];
            g.log_scale[c] = require_property(*v, "scale_" + std::to_string(c)).values[i];
        }
        g.opacity_logit = require_property(*v, "opacity").values[i];
        for (int c = 0; c < 4; ++c)
            g.rotation[static_cast<std::size_t>(c)] = require_property(*v, "rot_" + std::to_string(c)).values[i];
    }
    return gs;
}

}  // namespace neusg
