// SPDX-License-Identifier: Apache-2.0

#include "neusg/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "neusg/error.hpp"

namespace neusg {

namespace {

struct Entry {
    std::string key;  ///< section.key
    std::function<void(AppConfig&, const std::string&)> set;
    std::function<std::string(const AppConfig&)> get;
};

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double to_double(const std::string& key, const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
        throw LoadError(key + ": expected a number, got '" + s + "'");
    return v;
}

template <class Int>
Int to_int(const std::string& key, const std::string& s) {
    Int v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw LoadError(key + ": expected an integer, got '" + s + "'");
    return v;
}

bool to_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw LoadError(key + ": expected true or false, got '" + s + "'");
}

template <class T>
Entry make(const std::string& key, T AppConfig::*section, auto member) {
    using V = std::remove_reference_t<decltype(std::declval<T&>().*member)>;
    Entry e;
    e.key = key;
    e.set = [key, section, member](AppConfig& c, const std::string& s) {
        V& ref = (c.*section).*member;
        if constexpr (std::is_same_v<V, bool>) {
            ref = to_bool(key, s);
        } else if constexpr (std::is_floating_point_v<V>) {
            ref = to_double(key, s);
        } else if constexpr (std::is_integral_v<V>) {
            ref = to_int<V>(key, s);
        } else {
            ref = s;
        }
    };
    e.get = [section, member](const AppConfig& c) {
        const V& ref = (c.*section).*member;
        if constexpr (std::is_same_v<V, bool>) {
            return std::string(ref ? "true" : "false");
        } else if constexpr (std::is_floating_point_v<V>) {
            return format_double(ref);
        } else if constexpr (std::is_integral_v<V>) {
            return std::to_string(ref);
        } else {
            return std::string(ref);
        }
    };
    return e;
}

Entry make_vec3(const std::string& key, Vec3 SyntheticSpec::*member) {
    Entry e;
    e.key = key;
    e.set = [key, member](AppConfig& c, const std::string& s) {
        std::istringstream in(s);
        std::string a, b, d;
        if (!std::getline(in, a, ',') || !std::getline(in, b, ',') || !std::getline(in, d) )
            throw LoadError(key + ": expected three comma-separated numbers");
        c.synth.*member = Vec3(to_double(key, a), to_double(key, b), to_double(key, d));
    };
    e.get = [member](const AppConfig& c) {
        const Vec3& v = c.synth.*member;
        return format_double(v.x()) + "," + format_double(v.y()) + "," + format_double(v.z());
    };
    return e;
}

// Nested TrainConfig members are reached through a small adapter section.
template <class Sub>
Entry make_nested(const std::string& key, Sub TrainConfig::*sub, auto member) {
    using V = std::remove_reference_t<decltype(std::declval<Sub&>().*member)>;
    Entry e;
    e.key = key;
    e.set = [key, sub, member](AppConfig& c, const std::string& s) {
        V& ref = (c.train.*sub).*member;
        if constexpr (std::is_floating_point_v<V>) {
            ref = to_double(key, s);
        } else {
            ref = to_int<V>(key, s);
        }
    };
    e.get = [sub, member](const AppConfig& c) {
        const V& ref = (c.train.*sub).*member;
        if constexpr (std::is_floating_point_v<V>) {
            return format_double(ref);
        } else {
            return std::to_string(ref);
        }
    };
    return e;
}

template <class M>
Entry make_grid(const std::string& key, M HashGridConfig::*member) {
    Entry e;
    e.key = key;
    e.set = [key, member](AppConfig& c, const std::string& s) {
        if constexpr (std::is_floating_point_v<M>) {
            c.train.sdf.grid.*member = to_double(key, s);
        } else {
            c.train.sdf.grid.*member = to_int<M>(key, s);
        }
    };
    e.get = [member](const AppConfig& c) {
        if constexpr (std::is_floating_point_v<M>) {
            return format_double(c.train.sdf.grid.*member);
        } else {
            return std::to_string(c.train.sdf.grid.*member);
        }
    };
    return e;
}

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = [] {
        using A = AppConfig;
        using T = TrainConfig;
        std::vector<Entry> v;
        // total_iters comes first: applying it rescales the schedule below it.
        v.push_back(make("train.total_iters", &A::train, &T::total_iters));
        v.push_back(make("train.gs_block_interval", &A::train, &T::gs_block_interval));
        v.push_back(make("train.gs_iters_total", &A::train, &T::gs_iters_total));
        v.push_back(make("train.warmup_iters", &A::train, &T::warmup_iters));
        v.push_back(make("train.milestone1", &A::train, &T::milestone1));
        v.push_back(make("train.milestone2", &A::train, &T::milestone2));
        v.push_back(make("train.rays_per_iter", &A::train, &T::rays_per_iter));
        v.push_back(make("train.images_per_iter", &A::train, &T::images_per_iter));
        v.push_back(make("train.samples_per_ray", &A::train, &T::samples_per_ray));
        v.push_back(make("train.lambda1", &A::train, &T::lambda1));
        v.push_back(make("train.lambda2", &A::train, &T::lambda2));
        v.push_back(make("train.lambda3", &A::train, &T::lambda3));
        v.push_back(make("train.lambda4", &A::train, &T::lambda4));
        v.push_back(make("train.w_curv", &A::train, &T::w_curv));
        v.push_back(make("train.lr", &A::train, &T::lr));
        v.push_back(make("train.weight_decay", &A::train, &T::weight_decay));
        v.push_back(make("train.init_inv_s", &A::train, &T::init_inv_s));
        v.push_back(make("train.init_background", &A::train, &T::init_background));
        v.push_back(make("train.level_interval", &A::train, &T::level_interval));
        v.push_back(make("train.points_per_iter", &A::train, &T::points_per_iter));
        v.push_back(make("train.seed", &A::train, &T::seed));
        v.push_back(make("train.merge_scene_points", &A::train, &T::merge_scene_points));
        v.push_back(make_nested("sdf.hidden", &T::sdf, &SdfConfig::hidden));
        v.push_back(make_nested("sdf.geo_features", &T::sdf, &SdfConfig::geo_features));
        v.push_back(make_nested("sdf.color_hidden", &T::sdf, &SdfConfig::color_hidden));
        v.push_back(make_nested("sdf.color_layers", &T::sdf, &SdfConfig::color_layers));
        v.push_back(make_nested("sdf.init_radius", &T::sdf, &SdfConfig::init_radius));
        v.push_back(make_grid("grid.levels", &HashGridConfig::levels));
        v.push_back(make_grid("grid.features", &HashGridConfig::features));
        v.push_back(make_grid("grid.log2_table", &HashGridConfig::log2_table));
        v.push_back(make_grid("grid.base_resolution", &HashGridConfig::base_resolution));
        v.push_back(make_grid("grid.max_resolution", &HashGridConfig::max_resolution));
        v.push_back(make_grid("grid.initial_levels", &HashGridConfig::initial_levels));
        v.push_back(make_grid("grid.init_range", &HashGridConfig::init_range));
        v.push_back(make("gaussian.sh_degree", &A::train, &T::sh_degree));
        v.push_back(make("gaussian.random_gaussians", &A::train, &T::random_gaussians));
        v.push_back(make_nested("gaussian.lr_position", &T::gs_lr, &GaussianLearningRates::position));
        v.push_back(make_nested("gaussian.lr_rotation", &T::gs_lr, &GaussianLearningRates::rotation));
        v.push_back(make_nested("gaussian.lr_scale", &T::gs_lr, &GaussianLearningRates::scale));
        v.push_back(make_nested("gaussian.lr_opacity", &T::gs_lr, &GaussianLearningRates::opacity));
        v.push_back(make_nested("gaussian.lr_sh", &T::gs_lr, &GaussianLearningRates::sh));
        v.push_back(make_nested("densify.grad_threshold", &T::densify, &DensifyConfig::grad_threshold));
        v.push_back(make_nested("densify.min_opacity", &T::densify, &DensifyConfig::min_opacity));
        v.push_back(make_nested("densify.split_scale_divisor", &T::densify, &DensifyConfig::split_scale_divisor));
        v.push_back(make_nested("densify.interval", &T::densify, &DensifyConfig::interval));
        v.push_back(make_nested("densify.max_gaussians", &T::densify, &DensifyConfig::max_gaussians));
        v.push_back(make_nested("export.max_min_scale", &T::export_points, &ExportConfig::max_min_scale));
        v.push_back(make_nested("export.min_opacity", &T::export_points, &ExportConfig::min_opacity));
        v.push_back(make("synth.preset", &A::synth, &SyntheticSpec::preset));
        v.push_back(make("synth.views", &A::synth, &SyntheticSpec::views));
        v.push_back(make("synth.resolution", &A::synth, &SyntheticSpec::resolution));
        v.push_back(make("synth.camera_distance", &A::synth, &SyntheticSpec::camera_distance));
        v.push_back(make("synth.min_elevation", &A::synth, &SyntheticSpec::min_elevation));
        v.push_back(make("synth.max_elevation", &A::synth, &SyntheticSpec::max_elevation));
        v.push_back(make("synth.focal_factor", &A::synth, &SyntheticSpec::focal_factor));
        v.push_back(make_vec3("synth.light_dir", &SyntheticSpec::light_dir));
        v.push_back(make("synth.ambient", &A::synth, &SyntheticSpec::ambient));
        v.push_back(make_vec3("synth.background", &SyntheticSpec::background));
        v.push_back(make("synth.sparse_points", &A::synth, &SyntheticSpec::sparse_points));
        v.push_back(make("synth.sparse_noise", &A::synth, &SyntheticSpec::sparse_noise));
        v.push_back(make("synth.mesh_resolution", &A::synth, &SyntheticSpec::mesh_resolution));
        v.push_back(make("eval.tau", &A::eval, &EvalConfig::tau));
        v.push_back(make("eval.samples", &A::eval, &EvalConfig::samples));
        v.push_back(make("eval.gt_samples", &A::eval, &EvalConfig::gt_samples));
        v.push_back(make("eval.mesh_resolution", &A::eval, &EvalConfig::mesh_resolution));
        v.push_back(make("render.samples", &A::render, &RenderConfig::samples));
        v.push_back(make("render.chunk", &A::render, &RenderConfig::chunk));
        return v;
    }();
    return table;
}

const Entry* find_entry(const std::string& key) {
    for (const Entry& e : entries())
        if (e.key == key) return &e;
    return nullptr;
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const Entry& e : entries()) out.push_back(e.key);
    return out;
}

std::string qualify_key(const std::string& key) {
    if (key.find('.') != std::string::npos) {
        if (!find_entry(key)) throw LoadError("unknown config key '" + key + "'");
        return key;
    }
    std::string found;
    for (const Entry& e : entries()) {
        if (e.key.substr(e.key.find('.') + 1) != key) continue;
        if (!found.empty()) throw LoadError("ambiguous config key '" + key + "' (" + found + ", " + e.key + ")");
        found = e.key;
    }
    if (found.empty()) throw LoadError("unknown config key '" + key + "'");
    return found;
}

ConfigValues parse_config(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw LoadError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    ConfigValues out;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw LoadError("config key '" + section + "' must be inside a section");
        for (const auto& [key, value] : body) {
            const std::string full = section + "." + key;
            if (!find_entry(full)) throw LoadError("unknown config key '" + full + "'");
            out.emplace_back(full, value.data());
        }
    }
    return out;
}

void apply_config(AppConfig& cfg, const ConfigValues& values) {
    std::map<std::string, std::string> last;
    for (const auto& [k, v] : values) last[qualify_key(k)] = v;
    const auto total = last.find("train.total_iters");
    if (total != last.end()) {
        find_entry("train.total_iters")->set(cfg, total->second);
        cfg.train.scale_schedule(cfg.train.total_iters);
    }
    for (const Entry& e : entries()) {
        const auto it = last.find(e.key);
        if (it != last.end()) e.set(cfg, it->second);
    }
}

std::string config_to_ini(const AppConfig& cfg) {
    std::string out;
    std::string section;
    for (const Entry& e : entries()) {
        const std::string s = e.key.substr(0, e.key.find('.'));
        if (s != section) {
            out += (section.empty() ? "[" : "\n[") + s + "]\n";
            section = s;
        }
        out += e.key.substr(e.key.find('.') + 1) + " = " + e.get(cfg) + "\n";
    }
    return out;
}

std::pair<std::string, std::string> parse_assignment(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) throw LoadError("expected key=value, got '" + text + "'");
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

}  // namespace neusg
