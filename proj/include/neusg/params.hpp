// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "neusg/diff.hpp"

namespace neusg {

/// One named trainable tensor.
struct Param {
    std::string name;
    diff::Tensor value;
    /// Decoupled weight decay applies to this group (AdamW).
    bool decay = true;
};

using ParamList = std::vector<Param>;
/// Gradients aligned entry-by-entry with a ParamList.
using GradList = std::vector<std::vector<double>>;

GradList zero_grads(const ParamList& params);

/// Pushes every parameter onto the tape, as leaves when trainable, else constants.
std::vector<diff::Value> bind_params(diff::Tape& tape, const ParamList& params, bool trainable);

/// Adds the leaf gradients of a finished backward pass into grads (constants are skipped).
void accumulate_grads(GradList& grads, const std::vector<diff::Value>& bound);

Param* find_param(ParamList& params, const std::string& name);
const Param* find_param(const ParamList& params, const std::string& name);

}  // namespace neusg
