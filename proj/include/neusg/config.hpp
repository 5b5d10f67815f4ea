// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: INI file with sections, overridable per key.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "neusg/scene.hpp"
#include "neusg/trainer.hpp"

namespace neusg {

struct EvalConfig {
    double tau = 0.01;
    std::size_t samples = 100000;
    std::size_t gt_samples = 100000;
    int mesh_resolution = 128;
};

struct RenderConfig {
    int samples = 64;
    int chunk = 1024;
};

struct AppConfig {
    TrainConfig train;
    SyntheticSpec synth;
    EvalConfig eval;
    RenderConfig render;
};

/// "section.key" -> value, in file order.
using ConfigValues = std::vector<std::pair<std::string, std::string>>;

/// Every settable key as "section.key", in canonical order.
std::vector<std::string> config_keys();

/// Parses INI text. Throws LoadError naming the line or key.
ConfigValues parse_config(const std::string& text);

/// Resolves a bare key ("lambda2") or qualified key ("train.lambda2").
/// Throws LoadError when unknown or ambiguous.
std::string qualify_key(const std::string& key);

/// Applies values over cfg. Setting train.total_iters first rescales the
/// schedule; explicitly given schedule keys then win.
void apply_config(AppConfig& cfg, const ConfigValues& values);

/// Canonical INI text of every key; parsing it back reproduces cfg exactly.
std::string config_to_ini(const AppConfig& cfg);

/// Parses "key=value".
std::pair<std::string, std::string> parse_assignment(const std::string& text);

}  // namespace neusg
