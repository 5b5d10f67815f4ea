// SPDX-License-Identifier: Apache-2.0

#include "neusg/splat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "neusg/error.hpp"
#include "neusg/rng.hpp"

namespace neusg {

using diff::Tape;
using diff::Tensor;
using diff::Value;

// ---- parameter packing ---------------------------------------------------

int sh_degree_of(int coefficients) {
    for (int d = 0; d <= 3; ++d)
        if (sh_coeff_count(d) == coefficients) return d;
    throw ContractViolation("unsupported SH coefficient count " + std::to_string(coefficients));
}

ParamList gaussian_params(const std::vector<Gaussian3D>& gaussians, int sh_degree) {
    const int n = static_cast<int>(gaussians.size());
    const int k = gaussians.empty() ? sh_coeff_count(sh_degree) : gaussians.front().sh_coeffs();
    sh_degree_of(k);
    Tensor pos(n, 3), rot(n, 4), scale(n, 3), op(n, 1), sh(n, 3 * k);
    for (int i = 0; i < n; ++i) {
        const Gaussian3D& g = gaussians[static_cast<std::size_t>(i)];
        if (g.sh_coeffs() != k || g.sh.size() != static_cast<std::size_t>(3 * k))
            throw ContractViolation("gaussian_params: mixed SH sizes");
        for (int c = 0; c < 3; ++c) {
            pos(i, c) = g.position[c];
            scale(i, c) = g.log_scale[c];
        }
        for (int c = 0; c < 4; ++c) rot(i, c) = g.rotation[static_cast<std::size_t>(c)];
        op(i, 0) = g.opacity_logit;
        for (int c = 0; c < 3 * k; ++c) sh(i, c) = g.sh[static_cast<std::size_t>(c)];
    }
    ParamList p;
    p.push_back({"gs.position", std::move(pos), false});
    p.push_back({"gs.rotation", std::move(rot), false});
    p.push_back({"gs.log_scale", std::move(scale), false});
    p.push_back({"gs.opacity", std::move(op), false});
    p.push_back({"gs.sh", std::move(sh), false});
    return p;
}

std::vector<Gaussian3D> gaussians_from_params(const ParamList& p) {
    if (p.size() != 5) throw ContractViolation("gaussians_from_params: expected five parameter blocks");
    const Tensor& pos = p[kGsPosition].value;
    const Tensor& rot = p[kGsRotation].value;
    const Tensor& scale = p[kGsLogScale].value;
    const Tensor& op = p[kGsOpacity].value;
    const Tensor& sh = p[kGsSh].value;
    std::vector<Gaussian3D> out(static_cast<std::size_t>(pos.rows));
    for (int i = 0; i < pos.rows; ++i) {
        Gaussian3D& g = out[static_cast<std::size_t>(i)];
        for (int c = 0; c < 3; ++c) {
            g.position[c] = pos(i, c);
            g.log_scale[c] = scale(i, c);
        }
        for (int c = 0; c < 4; ++c) g.rotation[static_cast<std::size_t>(c)] = rot(i, c);
        g.opacity_logit = op(i, 0);
        g.sh.assign(sh.data.begin() + static_cast<std::ptrdiff_t>(i) * sh.cols,
                    sh.data.begin() + static_cast<std::ptrdiff_t>(i + 1) * sh.cols);
    }
    return out;
}

// ---- ordering ------------------------------------------------------------

std::vector<int> depth_sort(const std::vector<double>& depths) {
    std::vector<int> order(depths.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return depths[static_cast<std::size_t>(a)] < depths[static_cast<std::size_t>(b)];
    });
    return order;
}

std::vector<int> depth_sort(const std::vector<Gaussian3D>& gaussians, const Camera& cam) {
    std::vector<double> z;
    z.reserve(gaussians.size());
    for (const Gaussian3D& g : gaussians)
        z.push_back(gmath::to_camera(cam, g.position.x(), g.position.y(), g.position.z())[2]);
    return depth_sort(z);
}

// ---- blending --------------------------------------------------------------

namespace {

constexpr int kPacked = 9;
constexpr double kCutoffPower = -0.5 * kFootprintSigmas * kFootprintSigmas;

class BlendOp : public diff::CustomOp {
public:
    BlendOp(int width, int height, std::vector<int> order, std::vector<SplatFootprint> footprints,
            std::shared_ptr<SplatRecord> record)
        : width_(width), height_(height), order_(std::move(order)), base_(std::move(footprints)),
          record_(std::move(record)) {}

    [[nodiscard]] const char* name() const override { return "splat_blend"; }

    Tensor forward(std::span<const Tensor* const> in) override {
        const Tensor& p = *in[0];
        const Tensor& bg = *in[1];
        SplatRecord& rec = *record_;
        const int npix = width_ * height_;
        rec.width = width_;
        rec.height = height_;
        rec.footprints.clear();

        // Bin footprints into per-pixel candidate lists, front to back.
        std::vector<std::size_t> count(static_cast<std::size_t>(npix) + 1, 0);
        struct Box {
            int x0, x1, y0, y1;
        };
        std::vector<Box> boxes;
        for (const int slot : order_) {
            SplatFootprint f = base_[static_cast<std::size_t>(slot)];
            f.u = p(slot, 0);
            f.v = p(slot, 1);
            f.conic = {p(slot, 2), p(slot, 3), p(slot, 4)};
            const double a = f.conic[0], b = f.conic[1], c = f.conic[2];
            const double lmin = 0.5 * (a + c) - std::sqrt(0.25 * (a - c) * (a - c) + b * b);
            f.radius = lmin > 0.0 ? kFootprintSigmas * std::sqrt(1.0 / lmin) * (1.0 + 1e-6) : 0.0;
            Box box{0, -1, 0, -1};
            if (std::isfinite(f.radius) && f.radius > 0.0) {
                box.x0 = std::max(0, static_cast<int>(std::ceil(f.u - f.radius - 0.5)));
                box.x1 = std::min(width_ - 1, static_cast<int>(std::floor(f.u + f.radius - 0.5)));
                box.y0 = std::max(0, static_cast<int>(std::ceil(f.v - f.radius - 0.5)));
                box.y1 = std::min(height_ - 1, static_cast<int>(std::floor(f.v + f.radius - 0.5)));
            }
            for (int y = box.y0; y <= box.y1; ++y)
                for (int x = box.x0; x <= box.x1; ++x) ++count[static_cast<std::size_t>(y * width_ + x) + 1];
            boxes.push_back(box);
            rec.footprints.push_back(f);
        }
        std::partial_sum(count.begin(), count.end(), count.begin());
        std::vector<int> cand(count.back());
        std::vector<std::size_t> fill(count.begin(), count.end() - 1);
        for (std::size_t r = 0; r < order_.size(); ++r) {
            const Box& box = boxes[r];
            for (int y = box.y0; y <= box.y1; ++y)
                for (int x = box.x0; x <= box.x1; ++x) cand[fill[static_cast<std::size_t>(y * width_ + x)]++] = order_[r];
        }

        Tensor out(npix, 3);
        rec.offset.assign(static_cast<std::size_t>(npix) + 1, 0);
        rec.contributions.clear();
        rec.final_trans.assign(static_cast<std::size_t>(npix), 1.0);
        for (int y = 0; y < height_; ++y) {
            for (int x = 0; x < width_; ++x) {
                const int pix = y * width_ + x;
                const double px = x + 0.5;
                const double py = y + 0.5;
                double trans = 1.0;
                double col[3] = {0.0, 0.0, 0.0};
                for (std::size_t k = count[static_cast<std::size_t>(pix)]; k < count[static_cast<std::size_t>(pix) + 1]; ++k) {
                    const int s = cand[k];
                    const double dx = px - p(s, 0);
                    const double dy = py - p(s, 1);
                    const double power = -0.5 * (p(s, 2) * dx * dx + p(s, 4) * dy * dy) - p(s, 3) * dx * dy;
                    if (!(power >= kCutoffPower)) continue;
                    const double falloff = std::exp(power);
                    double alpha = p(s, 5) * falloff;
                    const bool clamped = alpha > kMaxSplatAlpha;
                    if (clamped) alpha = kMaxSplatAlpha;
                    if (alpha < kMinSplatAlpha) continue;
                    const double w = alpha * trans;
                    for (int c = 0; c < 3; ++c) col[c] += p(s, 6 + c) * w;
                    rec.contributions.push_back({s, alpha, trans, falloff, clamped});
                    trans = trans * (1.0 - alpha);
                }
                rec.offset[static_cast<std::size_t>(pix) + 1] = rec.contributions.size();
                rec.final_trans[static_cast<std::size_t>(pix)] = trans;
                for (int c = 0; c < 3; ++c) out(pix, c) = col[c] + trans * bg.data[static_cast<std::size_t>(c)];
            }
        }
        return out;
    }

    void backward(std::span<const Tensor* const> in, const Tensor&, std::span<const double> g,
                  std::span<double* const> grads) override {
        const Tensor& p = *in[0];
        const Tensor& bg = *in[1];
        const SplatRecord& rec = *record_;
        double* gp = grads[0];
        double* gbg = grads[1];
        for (int pix = 0; pix < width_ * height_; ++pix) {
            const double* go = &g[static_cast<std::size_t>(pix) * 3];
            if (go[0] == 0.0 && go[1] == 0.0 && go[2] == 0.0) continue;
            const double tf = rec.final_trans[static_cast<std::size_t>(pix)];
            if (gbg)
                for (int c = 0; c < 3; ++c) gbg[c] += go[c] * tf;
            if (!gp) continue;
            const double px = pix % width_ + 0.5;
            const double py = pix / width_ + 0.5;
            // Color of everything behind the current entry, seen through it.
            double behind[3] = {bg.data[0], bg.data[1], bg.data[2]};
            const auto list = rec.pixel(pix);
            for (std::size_t k = list.size(); k-- > 0;) {
                const SplatContribution& e = list[k];
                const int s = e.slot;
                double* row = gp + static_cast<std::size_t>(s) * kPacked;
                double d_alpha = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double col = p(s, 6 + c);
                    row[6 + c] += go[c] * e.alpha * e.trans;
                    d_alpha += go[c] * e.trans * (col - behind[c]);
                    behind[c] = col * e.alpha + (1.0 - e.alpha) * behind[c];
                }
                if (e.clamped) continue;
                row[5] += d_alpha * e.falloff;
                const double d_power = d_alpha * e.alpha;
                const double dx = px - p(s, 0);
                const double dy = py - p(s, 1);
                row[0] += d_power * (p(s, 2) * dx + p(s, 3) * dy);
                row[1] += d_power * (p(s, 3) * dx + p(s, 4) * dy);
                row[2] += d_power * (-0.5 * dx * dx);
                row[3] += d_power * (-dx * dy);
                row[4] += d_power * (-0.5 * dy * dy);
            }
        }
    }

private:
    int width_;
    int height_;
    std::vector<int> order_;
    std::vector<SplatFootprint> base_;
    std::shared_ptr<SplatRecord> record_;
};

Value col(Value a, int c) { return diff::slice_cols(a, c, 1); }

}  // namespace

SplatRender render_splats(const std::vector<Value>& gs, const Camera& cam, Value background) {
    if (gs.size() != 5) throw ContractViolation("render_splats: expected five bound parameter blocks");
    if (background.rows() != 1 || background.cols() != 3) throw ContractViolation("render_splats: background must be [1 x 3]");
    Tape& tape = *gs[kGsPosition].tape();
    const Tensor& pos = gs[kGsPosition].tensor();
    const int npix = cam.width * cam.height;

    SplatRender out;
    std::vector<double> depth;
    for (int i = 0; i < pos.rows; ++i) {
        const double z = gmath::to_camera(cam, pos(i, 0), pos(i, 1), pos(i, 2))[2];
        if (z > kNearPlane) {
            out.visible.push_back(i);
            depth.push_back(z);
        }
    }
    auto record = std::make_shared<SplatRecord>();
    if (out.visible.empty()) {
        record->width = cam.width;
        record->height = cam.height;
        record->offset.assign(static_cast<std::size_t>(npix) + 1, 0);
        record->final_trans.assign(static_cast<std::size_t>(npix), 1.0);
        out.image = tape.constant(Tensor(npix, 1, 1.0)) * background;
        out.record = std::move(record);
        return out;
    }

    const Value p = diff::gather_rows(gs[kGsPosition], out.visible);
    const Value q = diff::gather_rows(gs[kGsRotation], out.visible);
    const Value ls = diff::gather_rows(gs[kGsLogScale], out.visible);
    const Value op = diff::gather_rows(gs[kGsOpacity], out.visible);
    const Value sh = diff::gather_rows(gs[kGsSh], out.visible);
    const int k = sh.cols() / 3;
    const int degree = sh_degree_of(k);

    const Value px = col(p, 0), py = col(p, 1), pz = col(p, 2);
    const auto r = gmath::rotation_from_quaternion(col(q, 0), col(q, 1), col(q, 2), col(q, 3));
    const gmath::Vec<Value> s{diff::exp(col(ls, 0)), diff::exp(col(ls, 1)), diff::exp(col(ls, 2))};
    const auto cov = gmath::covariance(r, s);
    const auto t = gmath::to_camera(cam, px, py, pz);
    const auto uv = gmath::screen(t, cam);
    const auto con = gmath::conic(gmath::project(cov, t, cam));
    const Value opacity = diff::sigmoid(op);

    const Vec3 eye = cam.center();
    const Value dx = px - eye.x();
    const Value dy = py - eye.y();
    const Value dz = pz - eye.z();
    const Value inv = 1.0 / diff::sqrt(dx * dx + dy * dy + dz * dz);
    const Value vx = dx * inv, vy = dy * inv, vz = dz * inv;
    std::vector<Value> packed{uv[0], uv[1], con[0], con[1], con[2], opacity};
    for (int c = 0; c < 3; ++c)
        packed.push_back(gmath::clamp01(
            gmath::sh_channel<Value>(degree, vx, vy, vz, [&](int i) { return col(sh, c * k + i); })));
    out.packed = diff::concat_cols(packed);

    std::vector<SplatFootprint> base(out.visible.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        base[i].id = out.visible[i];
        base[i].depth = depth[i];
    }
    auto op_impl = std::make_shared<BlendOp>(cam.width, cam.height, depth_sort(depth), std::move(base), record);
    out.image = tape.custom(op_impl, {out.packed, background});
    out.record = std::move(record);
    return out;
}

Image to_image(const Tensor& pixels, int width, int height) {
    if (pixels.rows != width * height || pixels.cols != 3) throw ContractViolation("to_image: shape mismatch");
    Image img(width, height);
    img.data = pixels.data;
    return img;
}

Tensor from_image(const Image& image) { return Tensor(image.pixels(), 3, image.data); }

Image rasterize(const std::vector<Gaussian3D>& gaussians, const Camera& cam, const Vec3& background) {
    Tape tape;
    const int degree = gaussians.empty() ? 0 : sh_degree_of(gaussians.front().sh_coeffs());
    const auto bound = bind_params(tape, gaussian_params(gaussians, degree), false);
    const SplatRender r =
        render_splats(bound, cam, tape.constant(Tensor(1, 3, {background.x(), background.y(), background.z()})));
    return to_image(r.image.tensor(), cam.width, cam.height);
}

SplatFrame::SplatFrame(const std::vector<Gaussian3D>& gaussians, const Camera& cam, const Vec3& background)
    : tape_(std::make_unique<Tape>()), count_(gaussians.size()) {
    const int degree = gaussians.empty() ? 0 : sh_degree_of(gaussians.front().sh_coeffs());
    params_ = gaussian_params(gaussians, degree);
    leaves_ = bind_params(*tape_, params_, true);
    render_ = render_splats(leaves_, cam,
                            tape_->constant(Tensor(1, 3, {background.x(), background.y(), background.z()})));
    image_ = to_image(render_.image.tensor(), cam.width, cam.height);
}

GradList SplatFrame::backward(const Image& d_image) {
    if (d_image.width != image_.width || d_image.height != image_.height ||
        d_image.data.size() != image_.data.size())
        throw ContractViolation("rasterize_backward: image gradient shape does not match the frame");
    GradList grads = zero_grads(params_);
    if (!tape_->requires_grad(render_.image.id())) return grads;
    tape_->backward(render_.image, d_image.data);
    accumulate_grads(grads, leaves_);
    return grads;
}

// ---- density control -------------------------------------------------------

void DensifyStats::accumulate(const SplatRender& render, int width, int height) {
    if (!render.packed.valid()) return;
    const auto g = render.packed.grad();
    if (g.empty()) return;
    for (std::size_t i = 0; i < render.visible.size(); ++i) {
        const std::size_t id = static_cast<std::size_t>(render.visible[i]);
        if (id >= grad_sum.size()) throw ContractViolation("DensifyStats: render has more Gaussians than the stats");
        const double gu = g[i * kPacked] * 0.5 * width;
        const double gv = g[i * kPacked + 1] * 0.5 * height;
        grad_sum[id] += std::sqrt(gu * gu + gv * gv);
        ++count[id];
    }
}

DensifyResult densify_and_prune(const std::vector<Gaussian3D>& gaussians, const DensifyStats& stats,
                                const DensifyConfig& cfg) {
    if (stats.grad_sum.size() != gaussians.size() || stats.count.size() != gaussians.size())
        throw ContractViolation("densify_and_prune: stats are not aligned with the Gaussian list");
    DensifyResult res;
    const double shrink = std::log(cfg.split_scale_divisor);
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        const Gaussian3D& g = gaussians[i];
        if (g.opacity() < cfg.min_opacity) {
            ++res.pruned;
            continue;
        }
        const bool room = gaussians.size() + static_cast<std::size_t>(res.split) < cfg.max_gaussians;
        if (room && stats.mean(i) > cfg.grad_threshold) {
            const Vec3 s = g.scale();
            int axis = 0;
            for (int a = 1; a < 3; ++a)
                if (s[a] > s[axis]) axis = a;
            const Vec3 offset = quat_to_rotation(g.rotation).col(axis) * s[axis];
            for (const double sign : {1.0, -1.0}) {
                Gaussian3D child = g;
                child.position = g.position + sign * offset;
                child.log_scale = g.log_scale.array() - shrink;
                res.gaussians.push_back(std::move(child));
                res.source.push_back(static_cast<int>(i));
            }
            ++res.split;
            continue;
        }
        res.gaussians.push_back(g);
        res.source.push_back(static_cast<int>(i));
    }
    return res;
}

// ---- initialization --------------------------------------------------------

std::vector<Gaussian3D> init_gaussians(const std::vector<Vec3>& points, int sh_degree) {
    const std::size_t n = points.size();
    double scale = 0.01;
    if (n > 1) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = INFINITY;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) best = std::min(best, (points[i] - points[j]).squaredNorm());
            acc += std::sqrt(best);
        }
        scale = std::max(acc / static_cast<double>(n), 1e-4);
    }
    const int k = sh_coeff_count(sh_degree);
    std::vector<Gaussian3D> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].position = points[i];
        out[i].log_scale = Vec3::Constant(std::log(scale));
        out[i].opacity_logit = std::log(0.1 / 0.9);
        out[i].sh.assign(static_cast<std::size_t>(3 * k), 0.0);
    }
    return out;
}

std::vector<Gaussian3D> init_gaussians(std::size_t n, std::uint64_t seed, int sh_degree) {
    Rng rng = Rng::stream(seed, "gaussian-init");
    std::vector<Vec3> pts;
    pts.reserve(n);
    while (pts.size() < n) {
        const Vec3 p(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        if (p.squaredNorm() <= 1.0) pts.push_back(p);
    }
    return init_gaussians(pts, sh_degree);
}

}  // namespace neusg
