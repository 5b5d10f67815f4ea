// SPDX-License-Identifier: Apache-2.0

#include "neusg/sdf.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "neusg/error.hpp"
#include "neusg/rng.hpp"

namespace neusg {

using diff::Tape;
using diff::Tensor;
using diff::Value;

Tensor ScalarField::sdf_batch(const Tensor& points) const {
    Tensor out(points.rows, 1);
    for (int r = 0; r < points.rows; ++r) out.data[static_cast<std::size_t>(r)] = sdf(Vec3(points(r, 0), points(r, 1), points(r, 2)));
    return out;
}

double BoxField::sdf(const Vec3& x) const {
    const Vec3 q = (x - center_).cwiseAbs() - half_;
    return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

double TorusField::sdf(const Vec3& x) const {
    const Vec3 p = x - center_;
    const double ring = std::hypot(p.x(), p.y()) - major_;
    return std::hypot(ring, p.z()) - minor_;
}

double UnionField::sdf(const Vec3& x) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& part : parts_) best = std::min(best, part->sdf(x));
    return best;
}

Vec3 sdf_gradient(const ScalarField& field, const Vec3& x, double eps) {
    Vec3 g;
    for (int i = 0; i < 3; ++i) {
        Vec3 e = Vec3::Zero();
        e[i] = eps;
        g[i] = (field.sdf(x + e) - field.sdf(x - e)) / (2.0 * eps);
    }
    return g;
}

double sdf_curvature(const ScalarField& field, const Vec3& x, double eps) {
    const double f0 = field.sdf(x);
    double lap = 0.0;
    for (int i = 0; i < 3; ++i) {
        Vec3 e = Vec3::Zero();
        e[i] = eps;
        lap += field.sdf(x + e) + field.sdf(x - e) - 2.0 * f0;
    }
    return std::fabs(lap / (eps * eps));
}

Tensor clamp_to_unit_ball(const Tensor& points) {
    Tensor out = points;
    for (int r = 0; r < out.rows; ++r) {
        const double n = std::sqrt(out(r, 0) * out(r, 0) + out(r, 1) * out(r, 1) + out(r, 2) * out(r, 2));
        if (n > 1.0)
            for (int c = 0; c < 3; ++c) out(r, c) /= n;
    }
    return out;
}

// ---- hash grid ---------------------------------------------------------------

HashGrid::HashGrid(const HashGridConfig& config) : config_(config) {
    if (config.levels < 1 || config.features < 1 || config.base_resolution < 1 ||
        config.max_resolution < config.base_resolution || config.log2_table < 1 || config.log2_table > 30)
        throw ContractViolation("HashGrid: invalid configuration");
    const std::size_t table = std::size_t{1} << config.log2_table;
    const double growth = config.levels > 1 ? std::exp((std::log(static_cast<double>(config.max_resolution)) -
                                                        std::log(static_cast<double>(config.base_resolution))) /
                                                       (config.levels - 1))
                                            : 1.0;
    offset_.push_back(0);
    for (int l = 0; l < config.levels; ++l) {
        int res = static_cast<int>(std::floor(config.base_resolution * std::pow(growth, l) + 1e-9));
        if (l == config.levels - 1) res = config.max_resolution;
        resolution_.push_back(res);
        const std::size_t vertices = static_cast<std::size_t>(res + 1) * (res + 1) * (res + 1);
        dense_.push_back(vertices <= table);
        offset_.push_back(offset_.back() + std::min(vertices, table));
    }
    active_ = std::clamp(config.initial_levels, 1, config.levels);
}

std::size_t HashGrid::level_entries(int level) const {
    return offset_[static_cast<std::size_t>(level) + 1] - offset_[static_cast<std::size_t>(level)];
}

void HashGrid::activate_level(int level) {
    if (level != active_) throw ContractViolation("activate_level: levels must be enabled in order");
    if (level >= config_.levels) throw ContractViolation("activate_level: level out of range");
    ++active_;
}

void HashGrid::set_active_levels(int n) {
    if (n < 1 || n > config_.levels) throw ContractViolation("set_active_levels: out of range");
    active_ = n;
}

std::size_t HashGrid::vertex_row(int level, std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
    const auto l = static_cast<std::size_t>(level);
    if (dense_[l]) {
        const std::size_t n = static_cast<std::size_t>(resolution_[l]) + 1;
        return offset_[l] + i + n * (j + n * k);
    }
    const std::uint32_t h = i ^ (j * 2654435761u) ^ (k * 805459861u);
    return offset_[l] + (h & ((std::uint32_t{1} << config_.log2_table) - 1));
}

Tensor HashGrid::init_table(std::uint64_t seed) const {
    Tensor t(static_cast<int>(total_entries()), config_.features);
    Rng rng = Rng::stream(seed, "hashgrid");
    const std::size_t end = offset_[static_cast<std::size_t>(active_)] * static_cast<std::size_t>(config_.features);
    for (std::size_t i = 0; i < end; ++i) t.data[i] = rng.uniform(-config_.init_range, config_.init_range);
    return t;
}

namespace {

class HashEncodeOp : public diff::CustomOp {
public:
    explicit HashEncodeOp(const HashGrid& grid) : grid_(grid) {}
    [[nodiscard]] const char* name() const override { return "hash_encode"; }

    Tensor forward(std::span<const Tensor* const> in) override {
        const Tensor& pts = *in[0];
        const Tensor& table = *in[1];
        const int L = grid_.levels();
        const int F = grid_.features();
        const int active = grid_.active_levels();
        if (pts.cols != 3) throw ContractViolation("hash_encode: points must be [N x 3]");
        if (table.rows != static_cast<int>(grid_.total_entries()) || table.cols != F)
            throw ContractViolation("hash_encode: table shape mismatch");
        const auto n = static_cast<std::size_t>(pts.rows);
        Tensor out(pts.rows, L * F);
        rows_.assign(n * static_cast<std::size_t>(active) * 8, 0);
        weights_.assign(rows_.size(), 0.0);
        for (std::size_t p = 0; p < n; ++p) {
            for (int l = 0; l < active; ++l) {
                const int res = grid_.resolution(l);
                std::uint32_t base[3];
                double w[3];
                for (int a = 0; a < 3; ++a) {
                    double u = (pts.data[p * 3 + a] + 1.0) * 0.5 * res;
                    u = std::clamp(u, 0.0, static_cast<double>(res));
                    const int i0 = std::min(static_cast<int>(std::floor(u)), res - 1);
                    base[a] = static_cast<std::uint32_t>(i0);
                    w[a] = u - i0;
                }
                double* o = &out.data[p * static_cast<std::size_t>(L * F) + static_cast<std::size_t>(l * F)];
                const std::size_t slot = (p * static_cast<std::size_t>(active) + static_cast<std::size_t>(l)) * 8;
                for (int c = 0; c < 8; ++c) {
                    const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
                    const double weight = (di ? w[0] : 1.0 - w[0]) * (dj ? w[1] : 1.0 - w[1]) * (dk ? w[2] : 1.0 - w[2]);
                    const std::size_t row = grid_.vertex_row(l, base[0] + di, base[1] + dj, base[2] + dk);
                    rows_[slot + c] = row;
                    weights_[slot + c] = weight;
                    const double* feat = &table.data[row * static_cast<std::size_t>(F)];
                    for (int f = 0; f < F; ++f) o[f] += weight * feat[f];
                }
            }
        }
        return out;
    }

    void backward(std::span<const Tensor* const> in, const Tensor&, std::span<const double> g,
                  std::span<double* const> grads) override {
        double* gt = grads[1];
        if (gt == nullptr) return;
        const int L = grid_.levels();
        const int F = grid_.features();
        const int active = grid_.active_levels();
        const auto n = static_cast<std::size_t>(in[0]->rows);
        for (std::size_t p = 0; p < n; ++p) {
            for (int l = 0; l < active; ++l) {
                const double* go = &g[p * static_cast<std::size_t>(L * F) + static_cast<std::size_t>(l * F)];
                const std::size_t slot = (p * static_cast<std::size_t>(active) + static_cast<std::size_t>(l)) * 8;
                for (int c = 0; c < 8; ++c) {
                    double* dst = &gt[rows_[slot + c] * static_cast<std::size_t>(F)];
                    const double weight = weights_[slot + c];
                    for (int f = 0; f < F; ++f) dst[f] += weight * go[f];
                }
            }
        }
    }

private:
    HashGrid grid_;
    std::vector<std::size_t> rows_;
    std::vector<double> weights_;
};

}  // namespace

Value HashGrid::encode(Value points, Value table) const {
    return points.tape()->custom(std::make_shared<HashEncodeOp>(*this), {points, table});
}

// ---- learned field -------------------------------------------------------

namespace {

constexpr int kInputDim = 3;

Tensor normal_tensor(Rng& rng, int rows, int cols, double stddev) {
    Tensor t(rows, cols);
    for (double& v : t.data) v = rng.normal() * stddev;
    return t;
}

}  // namespace

SdfNetwork::SdfNetwork(const SdfConfig& config, std::uint64_t seed) : config_(config), grid_(config.grid) {
    const int H = config.hidden;
    const int G = config.geo_features;
    const int in_dim = kInputDim + grid_.output_dim();
    if (H < 4 || G < 1 || config.color_hidden < 1 || config.color_layers < 2)
        throw ContractViolation("SdfNetwork: invalid configuration");
    Rng rng = Rng::stream(seed, "sdf_init");

    params_.push_back({"grid", grid_.init_table(seed), true});

    // Geometric initialization: hidden units are ReLU ridges along directions
    // spread evenly over the sphere, so their average approximates |x|.
    Tensor w1(in_dim, H);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < H; ++k) {
        const double z = 1.0 - (2.0 * k + 1.0) / H;
        const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * k;
        w1(0, k) = rho * std::cos(phi);
        w1(1, k) = rho * std::sin(phi);
        w1(2, k) = z;
    }
    params_.push_back({"sdf.w1", w1, true});
    params_.push_back({"sdf.b1", Tensor(1, H), true});
    Tensor w2(H, 1 + G);
    for (int k = 0; k < H; ++k) {
        w2(k, 0) = 4.0 / H;
        for (int c = 1; c <= G; ++c) w2(k, c) = rng.normal() / std::sqrt(static_cast<double>(H));
    }
    params_.push_back({"sdf.w2", w2, true});
    Tensor b2(1, 1 + G);
    b2(0, 0) = -config.init_radius;
    params_.push_back({"sdf.b2", b2, true});

    int fan_in = 9 + G;
    for (int layer = 0; layer < config.color_layers; ++layer) {
        const bool last = layer == config.color_layers - 1;
        const int fan_out = last ? 3 : config.color_hidden;
        const double stddev = std::sqrt((last ? 1.0 : 2.0) / fan_in);
        params_.push_back({"color.w" + std::to_string(layer + 1), normal_tensor(rng, fan_in, fan_out, stddev), true});
        params_.push_back({"color.b" + std::to_string(layer + 1), Tensor(1, fan_out), true});
        fan_in = fan_out;
    }
}

void SdfNetwork::activate_level(int level) {
    grid_.activate_level(level);
    Tensor& table = params_[0].value;
    const auto F = static_cast<std::size_t>(grid_.features());
    std::fill(table.data.begin() + static_cast<std::ptrdiff_t>(grid_.level_offset(level) * F),
              table.data.begin() + static_cast<std::ptrdiff_t>((grid_.level_offset(level) + grid_.level_entries(level)) * F),
              0.0);
}

Tensor SdfNetwork::eval(const Tensor& points) const {
    Tape tape;
    return bind(tape, false).eval(points).tensor();
}

Tensor SdfNetwork::sdf_batch(const Tensor& points) const {
    const Tensor full = eval(points);
    Tensor out(points.rows, 1);
    for (int r = 0; r < points.rows; ++r) out.data[static_cast<std::size_t>(r)] = full(r, 0);
    return out;
}

double SdfNetwork::sdf(const Vec3& x) const { return sdf_batch(Tensor(1, 3, {x.x(), x.y(), x.z()})).data[0]; }

SdfNetwork::Bound::Bound(const SdfNetwork& net, Tape& tape, bool trainable)
    : net_(&net), tape_(&tape), leaves_(bind_params(tape, net.params_, trainable)) {}

SdfNetwork::Bound::Bound(const SdfNetwork& net, std::vector<Value> values)
    : net_(&net), tape_(values.empty() ? nullptr : values[0].tape()), leaves_(std::move(values)) {
    if (leaves_.size() != net.params_.size()) throw ContractViolation("SdfNetwork::Bound: wrong number of values");
    for (std::size_t i = 0; i < leaves_.size(); ++i)
        if (leaves_[i].rows() != net.params_[i].value.rows || leaves_[i].cols() != net.params_[i].value.cols)
            throw ContractViolation("SdfNetwork::Bound: shape mismatch for " + net.params_[i].name);
}

Value SdfNetwork::Bound::eval(const Tensor& points) const {
    if (points.cols != 3) throw ContractViolation("SdfNetwork: points must be [N x 3]");
    const Value p = tape_->constant(clamp_to_unit_ball(points));
    const Value enc = net_->grid_.encode(p, leaves_[0]);
    const Value x = diff::concat_cols({p, enc});
    const Value h = diff::relu(diff::matmul(x, leaves_[1]) + leaves_[2]);
    return diff::matmul(h, leaves_[3]) + leaves_[4];
}

StencilEval SdfNetwork::Bound::stencil(const Tensor& points, double eps) const {
    const int m = points.rows;
    Tensor all(7 * m, 3);
    for (int block = 0; block < 7; ++block) {
        const int axis = (block - 1) / 2;
        const double offset = block == 0 ? 0.0 : (block % 2 == 1 ? eps : -eps);
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < 3; ++c) all(block * m + r, c) = points(r, c) + (c == axis ? offset : 0.0);
    }
    const Value out = eval(all);
    const Value f = diff::slice_cols(out, 0, 1);
    auto block = [&](int b) { return diff::slice_rows(f, b * m, m); };
    const Value f0 = block(0);
    std::vector<Value> grad;
    Value lap;
    for (int axis = 0; axis < 3; ++axis) {
        const Value fp = block(1 + 2 * axis);
        const Value fm = block(2 + 2 * axis);
        grad.push_back((fp - fm) / (2.0 * eps));
        const Value term = fp + fm - 2.0 * f0;
        lap = axis == 0 ? term : lap + term;
    }
    StencilEval s;
    s.sdf = f0;
    s.gradient = diff::concat_cols(grad);
    s.curvature = diff::abs(lap / (eps * eps));
    s.geo = diff::slice_rows(diff::slice_cols(out, 1, net_->config_.geo_features), 0, m);
    return s;
}

Value SdfNetwork::Bound::color(Value x, Value normal, Value view, Value geo) const {
    Value h = diff::concat_cols({x, normal, view, geo});
    const int layers = net_->config_.color_layers;
    for (int layer = 0; layer < layers; ++layer) {
        const Value w = leaves_[5 + 2 * static_cast<std::size_t>(layer)];
        const Value b = leaves_[6 + 2 * static_cast<std::size_t>(layer)];
        h = diff::matmul(h, w) + b;
        h = layer == layers - 1 ? diff::sigmoid(h) : diff::relu(h);
    }
    return h;
}

}  // namespace neusg
