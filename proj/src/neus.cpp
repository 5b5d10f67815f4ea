// SPDX-License-Identifier: Apache-2.0

#include "neusg/neus.hpp"

#include <algorithm>
#include <cmath>

#include "neusg/error.hpp"
#include "neusg/parallel.hpp"

namespace neusg {

using diff::Tape;
using diff::Tensor;
using diff::Value;

std::optional<std::pair<double, double>> intersect_unit_sphere(const Vec3& o, const Vec3& d) {
    const double b = o.dot(d);
    const double c = o.squaredNorm() - 1.0;
    const double a = d.squaredNorm();
    const double disc = b * b - a * c;
    if (!(disc > 0.0)) return std::nullopt;
    const double root = std::sqrt(disc);
    const double t0 = std::max((-b - root) / a, 0.0);
    const double t1 = (-b + root) / a;
    if (!(t1 > t0)) return std::nullopt;
    return std::make_pair(t0, t1);
}

RaySample sample_ray(const Vec3& origin, const Vec3& direction, int n, Rng& rng) {
    if (n < 2) throw ContractViolation("sample_ray: need at least two samples");
    RaySample s;
    s.origin = origin;
    s.direction = direction;
    const auto hit = intersect_unit_sphere(origin, direction);
    if (!hit) return s;
    const double step = (hit->second - hit->first) / n;
    s.t.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) s.t[static_cast<std::size_t>(i)] = hit->first + (i + rng.uniform()) * step;
    return s;
}

RaySample sample_ray(const Camera& cam, double u, double v, int n, Rng& rng) {
    if (!(u >= 0.0 && u <= cam.width && v >= 0.0 && v <= cam.height))
        throw ContractViolation("sample_ray: pixel outside the image");
    return sample_ray(cam.center(), cam.ray_direction(u, v), n, rng);
}

void importance_resample(RaySample& sample, const std::vector<double>& weights, int n, Rng& rng) {
    const std::size_t k = sample.t.size();
    if (k < 2 || n <= 0) return;
    if (weights.size() != k - 1) throw ContractViolation("importance_resample: one weight per interval expected");
    std::vector<double> cdf(k, 0.0);
    for (std::size_t i = 0; i + 1 < k; ++i) cdf[i + 1] = cdf[i] + std::max(weights[i], 0.0) + 1e-5;
    const double total = cdf.back();
    for (int j = 0; j < n; ++j) {
        const double u = (j + rng.uniform()) / n * total;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), k - 1) - 1;
        const double frac = (u - cdf[i]) / (cdf[i + 1] - cdf[i]);
        sample.t.push_back(sample.t[i] + frac * (sample.t[i + 1] - sample.t[i]));
    }
    std::sort(sample.t.begin(), sample.t.end());
    sample.t.erase(std::unique(sample.t.begin(), sample.t.end()), sample.t.end());
}

double sdf_to_alpha(double f_i, double f_next, double inv_s) {
    return diff::clamp_zero(1.0 - std::exp(diff::log_sigmoid(f_next * inv_s) - diff::log_sigmoid(f_i * inv_s)));
}

Value sdf_to_alpha(Value f_i, Value f_next, Value inv_s) {
    return diff::clamp_zero(1.0 - diff::exp(diff::log_sigmoid(f_next * inv_s) - diff::log_sigmoid(f_i * inv_s)));
}

std::vector<double> blend_weights(const std::vector<double>& alpha) {
    std::vector<double> w(alpha.size());
    double trans = 1.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        w[i] = trans * alpha[i];
        trans *= 1.0 - alpha[i];
    }
    return w;
}

Composite composite(Value alpha, const std::array<Value, 3>& channels, Value background) {
    const Value trans = diff::cumprod_exclusive(1.0 - alpha);
    const Value w = trans * alpha;
    const Value opacity = diff::row_sum(w);
    std::vector<Value> rgb;
    for (const Value& c : channels) rgb.push_back(diff::row_sum(w * c));
    const Value color = diff::concat_cols(rgb) + (1.0 - opacity) * background;
    return {color, w, opacity};
}

ParamList make_render_params(double init_inv_s) {
    if (!(init_inv_s > 0.0)) throw ContractViolation("make_render_params: inv_s must be positive");
    ParamList p;
    p.push_back({"log_inv_s", Tensor::scalar(std::log(init_inv_s)), false});
    p.push_back({"background", Tensor(1, 3), false});
    return p;
}

double inv_s_of(const ParamList& p) { return std::exp(p.at(kLogInvS).value.data[0]); }

Vec3 background_of(const ParamList& p) {
    const auto& b = p.at(kBackground).value.data;
    return {diff::sigmoid(b[0]), diff::sigmoid(b[1]), diff::sigmoid(b[2])};
}

Tensor RayBatch::points() const {
    const int r = rays();
    const int n = samples();
    Tensor p(r * n, 3);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < n; ++j)
            for (int c = 0; c < 3; ++c) p(i * n + j, c) = origins(i, c) + t(i, j) * directions(i, c);
    return p;
}

RayBatch make_batch(const std::vector<RaySample>& samples) {
    RayBatch b;
    std::vector<const RaySample*> used;
    for (const RaySample& s : samples)
        if (!s.empty()) used.push_back(&s);
    if (used.empty()) throw ContractViolation("make_batch: no ray hits the unit sphere");
    const int n = static_cast<int>(used.front()->t.size());
    const int r = static_cast<int>(used.size());
    b.origins = Tensor(r, 3);
    b.directions = Tensor(r, 3);
    b.t = Tensor(r, n);
    for (int i = 0; i < r; ++i) {
        const RaySample& s = *used[static_cast<std::size_t>(i)];
        if (static_cast<int>(s.t.size()) != n) throw ContractViolation("make_batch: sample counts differ");
        for (int c = 0; c < 3; ++c) {
            b.origins(i, c) = s.origin[c];
            b.directions(i, c) = s.direction[c];
        }
        for (int j = 0; j < n; ++j) b.t(i, j) = s.t[static_cast<std::size_t>(j)];
    }
    return b;
}

NeusRender render_rays(const SdfNetwork::Bound& net, const std::vector<Value>& render_params, const RayBatch& batch,
                       double eps) {
    if (render_params.size() != 2) throw ContractViolation("render_rays: expected bound render params");
    const int r = batch.rays();
    const int n = batch.samples();
    if (n < 2) throw ContractViolation("render_rays: need at least two samples per ray");
    Tape& tape = *render_params[0].tape();
    const Tensor pts = batch.points();
    const StencilEval s = net.stencil(pts, eps);

    Tensor view(r * n, 3);
    for (int i = 0; i < r * n; ++i)
        for (int c = 0; c < 3; ++c) view(i, c) = batch.directions(i / n, c);
    const Value rgb = net.color(tape.constant(pts), s.gradient, tape.constant(view), s.geo);

    const Value inv_s = diff::exp(render_params[kLogInvS]);
    const Value f = diff::reshape(s.sdf, r, n);
    const Value alpha = sdf_to_alpha(diff::slice_cols(f, 0, n - 1), diff::slice_cols(f, 1, n - 1), inv_s);
    std::array<Value, 3> planes;
    for (int c = 0; c < 3; ++c)
        planes[static_cast<std::size_t>(c)] = diff::slice_cols(diff::reshape(diff::slice_cols(rgb, c, 1), r, n), 0, n - 1);
    const Value bg = diff::sigmoid(render_params[kBackground]);
    const Composite comp = composite(alpha, planes, bg);
    return {comp.color, comp.weights, comp.opacity, s.sdf, s.gradient, s.curvature};
}

namespace {

// Rays use the stream of their global pixel index, so any chunking gives the same image.
void render_range(const SdfNetwork& net, const ParamList& render_params, const Camera& cam,
                  const std::vector<std::pair<double, double>>& pixels, std::size_t begin, std::size_t end,
                  int samples, std::uint64_t seed, std::vector<Vec3>& out) {
    std::vector<RaySample> rays;
    std::vector<std::size_t> index;
    for (std::size_t i = begin; i < end; ++i) {
        Rng rng = Rng::stream(seed, "render", i);
        RaySample s = sample_ray(cam, pixels[i].first, pixels[i].second, samples, rng);
        if (s.empty()) continue;
        rays.push_back(std::move(s));
        index.push_back(i);
    }
    if (rays.empty()) return;
    Tape tape;
    const auto bound = net.bind(tape, false);
    const auto rp = bind_params(tape, render_params, false);
    const NeusRender res = render_rays(bound, rp, make_batch(rays), net.gradient_eps());
    for (std::size_t k = 0; k < index.size(); ++k)
        for (int c = 0; c < 3; ++c) out[index[k]][c] = res.color.at(static_cast<int>(k), c);
}

}  // namespace

std::vector<Vec3> render_pixels(const SdfNetwork& net, const ParamList& render_params, const Camera& cam,
                                const std::vector<std::pair<double, double>>& pixels, int samples,
                                std::uint64_t seed, int chunk) {
    if (chunk < 1) throw ContractViolation("render_pixels: chunk must be positive");
    std::vector<Vec3> out(pixels.size(), background_of(render_params));
    const std::size_t c = static_cast<std::size_t>(chunk);
    const std::size_t chunks = (pixels.size() + c - 1) / c;
    parallel_for(chunks, [&](std::size_t b, std::size_t e) {
        for (std::size_t k = b; k < e; ++k)
            render_range(net, render_params, cam, pixels, k * c, std::min(pixels.size(), (k + 1) * c), samples, seed, out);
    });
    return out;
}

Image render_image(const SdfNetwork& net, const ParamList& render_params, const Camera& cam, int samples,
                   std::uint64_t seed, int chunk) {
    std::vector<std::pair<double, double>> pixels;
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) pixels.emplace_back(x + 0.5, y + 0.5);
    const std::vector<Vec3> colors = render_pixels(net, render_params, cam, pixels, samples, seed, chunk);
    Image img(cam.width, cam.height);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) img.set(x, y, colors[static_cast<std::size_t>(y) * cam.width + x]);
    return img;
}

// ---- losses --------------------------------------------------------------

Value loss_rgb(Value rendered, const Tensor& target) {
    if (rendered.rows() != target.rows || rendered.cols() != target.cols)
        throw ContractViolation("loss_rgb: shape mismatch");
    return diff::mean(diff::abs(rendered - rendered.tape()->constant(target)));
}

Value loss_eikonal(Value g) {
    if (g.rows() == 0) throw ContractViolation("loss_eikonal: empty batch");
    return diff::mean(diff::square(diff::sqrt(diff::row_sum(diff::square(g))) - 1.0));
}

PointLoss loss_point(const SdfNetwork::Bound& net, const std::vector<Vec3>& points) {
    PointLoss out;
    std::vector<Vec3> inside;
    for (const Vec3& p : points) {
        if (p.squaredNorm() <= 1.0) {
            inside.push_back(p);
        } else {
            ++out.skipped;
        }
    }
    out.used = static_cast<int>(inside.size());
    Tape& tape = *net.leaves().front().tape();
    if (inside.empty()) {
        out.empty = true;
        out.value = tape.constant(0.0);
        return out;
    }
    Tensor pts(out.used, 3);
    for (int i = 0; i < out.used; ++i)
        for (int c = 0; c < 3; ++c) pts(i, c) = inside[static_cast<std::size_t>(i)][c];
    out.value = diff::mean(diff::abs(diff::slice_cols(net.eval(pts), 0, 1)));
    return out;
}

double loss_point(const ScalarField& field, const std::vector<Vec3>& points) {
    double acc = 0.0;
    int used = 0;
    for (const Vec3& p : points) {
        if (p.squaredNorm() > 1.0) continue;
        acc += std::fabs(field.sdf(p));
        ++used;
    }
    return used == 0 ? 0.0 : acc / used;
}

double loss_total(const NeusLossParts& p, const LossWeights& w) {
    const std::pair<const char*, double> parts[] = {
        {"l_rgb", p.rgb}, {"l_eik", p.eikonal}, {"l_pt", p.point}, {"l_curv", p.curvature}};
    for (const auto& [name, v] : parts)
        if (!std::isfinite(v)) throw TrainingAbort(std::string("non-finite loss term ") + name);
    return p.rgb + w.lambda1 * p.eikonal + w.lambda2 * p.point + w.w_curv * p.curvature;
}

Value loss_total(Value rgb, Value eikonal, Value point, Value curvature, const LossWeights& w) {
    return rgb + w.lambda1 * eikonal + w.lambda2 * point + w.w_curv * curvature;
}

}  // namespace neusg
