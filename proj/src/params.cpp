// SPDX-License-Identifier: Apache-2.0

#include "neusg/params.hpp"

namespace neusg {

GradList zero_grads(const ParamList& params) {
    GradList g;
    g.reserve(params.size());
    for (const Param& p : params) g.emplace_back(p.value.size(), 0.0);
    return g;
}

std::vector<diff::Value> bind_params(diff::Tape& tape, const ParamList& params, bool trainable) {
    std::vector<diff::Value> out;
    out.reserve(params.size());
    for (const Param& p : params) out.push_back(trainable ? tape.leaf(p.value) : tape.constant(p.value));
    return out;
}

void accumulate_grads(GradList& grads, const std::vector<diff::Value>& bound) {
    if (grads.size() != bound.size()) throw ContractViolation("accumulate_grads: size mismatch");
    for (std::size_t i = 0; i < bound.size(); ++i) {
        const diff::Value& v = bound[i];
        if (!v.tape()->requires_grad(v.id())) continue;
        const auto g = v.grad();
        if (g.empty()) continue;
        auto& dst = grads[i];
        for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
    }
}

Param* find_param(ParamList& params, const std::string& name) {
    for (Param& p : params)
        if (p.name == name) return &p;
    return nullptr;
}

const Param* find_param(const ParamList& params, const std::string& name) {
    for (const Param& p : params)
        if (p.name == name) return &p;
    return nullptr;
}

}  // namespace neusg
