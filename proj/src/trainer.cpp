// SPDX-License-Identifier: Apache-2.0

#include "neusg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

#include "neusg/error.hpp"
#include "neusg/rng.hpp"

namespace neusg {

using diff::Tape;
using diff::Tensor;
using diff::Value;

void TrainConfig::scale_schedule(int total) {
    if (total <= 0) throw ContractViolation("scale_schedule: total must be positive");
    total_iters = total;
    warmup_iters = static_cast<int>(std::lround(total * 0.01));
    milestone1 = static_cast<int>(std::lround(total * 0.6));
    milestone2 = static_cast<int>(std::lround(total * 0.8));
    gs_block_interval = std::max(1, total / 5);
}

int TrainConfig::blocks() const {
    if (gs_block_interval <= 0) throw ContractViolation("TrainConfig: gs_block_interval must be positive");
    return (total_iters + gs_block_interval - 1) / gs_block_interval;
}

int TrainConfig::level_step() const {
    if (level_interval > 0) return level_interval;
    return std::max(1, total_iters / (2 * sdf.grid.levels));
}

const char* phase_name(Phase p) { return p == Phase::Neus ? "neus" : "gaussian"; }

std::vector<PhaseBlock> schedule(const TrainConfig& cfg) {
    if (cfg.total_iters < 0 || cfg.gs_iters_total < 0) throw ContractViolation("schedule: negative iteration count");
    std::vector<PhaseBlock> out;
    const int blocks = cfg.blocks();
    int gs_begin = 0;
    for (int b = 0; b < blocks; ++b) {
        const int begin = b * cfg.gs_block_interval;
        out.push_back({Phase::Neus, begin, std::min(cfg.gs_block_interval, cfg.total_iters - begin)});
        const int count = cfg.gs_iters_total / blocks + (b < cfg.gs_iters_total % blocks ? 1 : 0);
        if (count > 0) {
            out.push_back({Phase::Gaussian, gs_begin, count});
            gs_begin += count;
        }
    }
    return out;
}

double lr_at(int iter, const TrainConfig& cfg) {
    if (iter < 0 || iter > cfg.total_iters) throw ContractViolation("lr_at: iteration out of range");
    if (iter < cfg.warmup_iters) return cfg.lr * iter / cfg.warmup_iters;
    if (iter < cfg.milestone1) return cfg.lr;
    if (iter < cfg.milestone2) return cfg.lr / 10.0;
    return cfg.lr / 100.0;
}

double loss_gaussian(const GaussianLossParts& p, double lambda3, double lambda4) {
    const std::pair<const char*, double> parts[] = {{"l_rgb", p.rgb}, {"l_s", p.scale}, {"l_align", p.align}};
    for (const auto& [name, v] : parts)
        if (!std::isfinite(v)) throw TrainingAbort(std::string("non-finite loss term ") + name);
    return p.rgb + lambda3 * p.scale + lambda4 * p.align;
}

void AdamState::reset(const ParamList& params) {
    m = zero_grads(params);
    v = zero_grads(params);
    step = 0;
}

void adam_step(ParamList& params, const GradList& grads, AdamState& state, double lr, double weight_decay,
               const std::vector<double>& lr_scale, const AdamOptions& o) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw ContractViolation("adam_step: gradient or state count does not match the parameters");
    if (!lr_scale.empty() && lr_scale.size() != params.size())
        throw ContractViolation("adam_step: one learning-rate factor per parameter expected");
    for (std::size_t k = 0; k < params.size(); ++k) {
        const std::size_t n = params[k].value.data.size();
        if (grads[k].size() != n || state.m[k].size() != n || state.v[k].size() != n)
            throw ContractViolation("adam_step: shape mismatch for " + params[k].name);
        for (double g : grads[k])
            if (!std::isfinite(g)) throw TrainingAbort("non-finite gradient in " + params[k].name);
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double rate = lr * (lr_scale.empty() ? 1.0 : lr_scale[k]);
        const double decay = params[k].decay ? rate * weight_decay : 0.0;
        auto& theta = params[k].value.data;
        auto& m = state.m[k];
        auto& v = state.v[k];
        const auto& g = grads[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            if (decay != 0.0) theta[i] -= decay * theta[i];
            m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
            v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
            theta[i] -= rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.eps);
        }
    }
}

const char* report_csv_header() { return "iter,phase,l_rgb,l_eik,l_pt,l_curv,l_s,l_align,total,lr,n_gauss,levels"; }

std::string report_csv_row(const LossReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%d,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%d", r.iter,
                  phase_name(r.phase), r.l_rgb, r.l_eik, r.l_pt, r.l_curv, r.l_s, r.l_align, r.total, r.lr, r.n_gauss,
                  r.levels);
    return buf;
}

// ---- Gaussian phase -----------------------------------------------------------

GaussianTrainer::GaussianTrainer(ParamList gaussians, const TrainConfig& cfg)
    : params_(std::move(gaussians)), cfg_(cfg) {
    if (params_.size() != 5) throw ContractViolation("GaussianTrainer: expected Gaussian parameter blocks");
    adam_.reset(params_);
    stats_ = DensifyStats(size());
}

GaussianTrainer::Step GaussianTrainer::step(const Camera& cam, const Image& target, const Vec3& background,
                                            const std::function<Tensor(const Tensor&)>& field_gradient) {
    if (target.width != cam.width || target.height != cam.height)
        throw ContractViolation("GaussianTrainer: target image does not match the camera");
    Tape tape;
    const auto leaves = bind_params(tape, params_, true);
    const Value bg = tape.constant(Tensor(1, 3, {background.x(), background.y(), background.z()}));
    const SplatRender render = render_splats(leaves, cam, bg);
    const Value rgb = loss_rgb(render.image, from_image(target));
    Step out;
    out.parts.rgb = rgb.item();
    Value total = rgb;
    if (size() > 0) {
        const Value ls = loss_scale(leaves[kGsLogScale]);
        const AlignLoss align = loss_align(leaves[kGsRotation], leaves[kGsLogScale],
                                           tape.constant(field_gradient(params_[kGsPosition].value)));
        out.parts.scale = ls.item();
        out.parts.align = align.value.item();
        total = rgb + cfg_.lambda3 * ls + cfg_.lambda4 * align.value;
    }
    out.total = loss_gaussian(out.parts, cfg_.lambda3, cfg_.lambda4);
    ++iter_;
    if (size() == 0) return out;

    tape.backward(total);
    GradList grads = zero_grads(params_);
    accumulate_grads(grads, leaves);
    stats_.accumulate(render, cam.width, cam.height);
    const GaussianLearningRates& lr = cfg_.gs_lr;
    adam_step(params_, grads, adam_, 1.0, 0.0, {lr.position, lr.rotation, lr.scale, lr.opacity, lr.sh});
    Tensor& q = params_[kGsRotation].value;
    for (int i = 0; i < q.rows; ++i) {
        const double n = std::sqrt(q(i, 0) * q(i, 0) + q(i, 1) * q(i, 1) + q(i, 2) * q(i, 2) + q(i, 3) * q(i, 3));
        if (n > 0.0)
            for (int c = 0; c < 4; ++c) q(i, c) /= n;
    }
    if (cfg_.densify.interval > 0 && iter_ % cfg_.densify.interval == 0) densify();
    return out;
}

void GaussianTrainer::densify() {
    const int degree = sh_degree_of(params_[kGsSh].value.cols / 3);
    const DensifyResult res = densify_and_prune(gaussians_from_params(params_), stats_, cfg_.densify);
    ParamList next = gaussian_params(res.gaussians, degree);
    std::vector<int> uses(size(), 0);
    for (int s : res.source) ++uses[static_cast<std::size_t>(s)];
    AdamState moved;
    moved.reset(next);
    moved.step = adam_.step;
    for (std::size_t k = 0; k < next.size(); ++k) {
        const std::size_t w = static_cast<std::size_t>(next[k].value.cols);
        for (std::size_t r = 0; r < res.source.size(); ++r) {
            const std::size_t s = static_cast<std::size_t>(res.source[r]);
            if (uses[s] != 1) continue;
            std::copy_n(adam_.m[k].begin() + static_cast<std::ptrdiff_t>(s * w), w,
                        moved.m[k].begin() + static_cast<std::ptrdiff_t>(r * w));
            std::copy_n(adam_.v[k].begin() + static_cast<std::ptrdiff_t>(s * w), w,
                        moved.v[k].begin() + static_cast<std::ptrdiff_t>(r * w));
        }
    }
    params_ = std::move(next);
    adam_ = std::move(moved);
    stats_ = DensifyStats(size());
}

Tensor network_gradient(const SdfNetwork& net, const Tensor& positions, double eps) {
    if (positions.rows == 0) return Tensor(0, 3);
    Tape tape;
    const auto bound = net.bind(tape, false);
    return bound.stencil(positions, eps).gradient.tensor();
}

// ---- full schedule -------------------------------------------------------------

Vec3 border_color(const Scene& scene) {
    Vec3 sum = Vec3::Zero();
    double n = 0.0;
    for (int i : scene.train) {
        const Image& img = scene.views[static_cast<std::size_t>(i)].image;
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                if (x != 0 && y != 0 && x != img.width - 1 && y != img.height - 1) continue;
                sum += img.pixel(x, y);
                n += 1.0;
            }
        }
    }
    return n > 0.0 ? Vec3(sum / n) : Vec3::Constant(0.5);
}

TrainState initial_state(const Scene& scene, const TrainConfig& cfg) {
    TrainState s{SdfNetwork(cfg.sdf, cfg.seed), make_render_params(cfg.init_inv_s), {}, {}};
    if (cfg.init_background) {
        const Vec3 bg = border_color(scene);
        for (int c = 0; c < 3; ++c) {
            const double b = std::clamp(bg[c], 0.01, 0.99);
            s.render[kBackground].value.data[static_cast<std::size_t>(c)] = std::log(b / (1.0 - b));
        }
    }
    std::vector<Gaussian3D> gs;
    if (cfg.gs_iters_total > 0) {
        gs = scene.points.empty() ? init_gaussians(static_cast<std::size_t>(cfg.random_gaussians), cfg.seed, cfg.sh_degree)
                                  : init_gaussians(scene.points, cfg.sh_degree);
    }
    s.gaussians = gaussian_params(gs, cfg.sh_degree);
    s.points = scene.points;
    return s;
}

namespace {

class Runner {
public:
    Runner(const Scene& scene, const TrainConfig& cfg, const ReportSink& sink)
        : scene_(scene), cfg_(cfg), sink_(sink), state_(initial_state(scene, cfg)),
          weights_{cfg.lambda1, cfg.lambda2, cfg.w_curv} {
        neus_adam_.reset(state_.net.params());
        render_adam_.reset(state_.render);
    }

    TrainResult run() {
        std::optional<GaussianTrainer> gaussians;
        if (cfg_.gs_iters_total > 0) gaussians.emplace(state_.gaussians, cfg_);
        try {
            for (const PhaseBlock& block : schedule(cfg_)) {
                if (block.phase == Phase::Neus) {
                    for (int i = block.begin; i < block.begin + block.count; ++i) neus_step(i);
                    continue;
                }
                for (int j = block.begin; j < block.begin + block.count; ++j) gaussian_step(*gaussians, j);
                state_.gaussians = gaussians->params();
                state_.points = export_surface_points(gaussians_from_params(state_.gaussians), cfg_.export_points,
                                                      cfg_.merge_scene_points ? scene_.points : std::vector<Vec3>{});
            }
        } catch (const TrainingAbort& e) {
            const std::string last = reports_.empty() ? "none" : report_csv_row(reports_.back());
            throw TrainingAbort(std::string(e.what()) + "; last report: " + last);
        }
        if (gaussians) state_.gaussians = gaussians->params();
        return {std::move(state_), std::move(reports_)};
    }

private:
    void emit(const LossReport& r) {
        reports_.push_back(r);
        if (sink_) sink_(r);
    }

    std::size_t gaussian_count() const { return static_cast<std::size_t>(state_.gaussians[kGsPosition].value.rows); }

    void neus_step(int iter) {
        SdfNetwork& net = state_.net;
        const int step = cfg_.level_step();
        if (iter > 0 && iter % step == 0 && net.grid().active_levels() < net.grid().levels())
            net.activate_level(net.grid().active_levels());

        Rng rng = Rng::stream(cfg_.seed, "neus", static_cast<std::uint64_t>(iter));
        std::vector<int> pool = scene_.train;
        const std::size_t k = std::min(pool.size(), static_cast<std::size_t>(std::max(1, cfg_.images_per_iter)));
        for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);

        std::vector<RaySample> rays;
        std::vector<double> target;
        for (int r = 0; r < cfg_.rays_per_iter; ++r) {
            const View& view = scene_.views[static_cast<std::size_t>(pool[static_cast<std::size_t>(r) % k])];
            const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(view.image.width)));
            const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(view.image.height)));
            RaySample s = sample_ray(view.camera, x + 0.5, y + 0.5, cfg_.samples_per_ray, rng);
            if (s.empty()) continue;
            rays.push_back(std::move(s));
            for (int c = 0; c < 3; ++c) target.push_back(view.image.at(x, y, c));
        }

        Tape tape;
        const auto bound = net.bind(tape, true);
        const auto rp = bind_params(tape, state_.render, true);
        const RayBatch batch = make_batch(rays);
        const NeusRender out = render_rays(bound, rp, batch, net.gradient_eps());
        const Value rgb = loss_rgb(out.color, Tensor(batch.rays(), 3, std::move(target)));
        const Value eik = loss_eikonal(out.gradient);
        const Value curv = diff::mean(out.curvature);
        Value pt = tape.constant(0.0);
        if (!state_.points.empty()) {
            std::vector<Vec3> pts = state_.points;
            const std::size_t m = std::min(pts.size(), static_cast<std::size_t>(std::max(1, cfg_.points_per_iter)));
            for (std::size_t i = 0; i < m; ++i) std::swap(pts[i], pts[i + rng.below(pts.size() - i)]);
            pts.resize(m);
            pt = loss_point(bound, pts).value;
        }
        const NeusLossParts parts{rgb.item(), eik.item(), pt.item(), curv.item()};
        LossReport rep;
        rep.iter = iter;
        rep.phase = Phase::Neus;
        rep.l_rgb = parts.rgb;
        rep.l_eik = parts.eikonal;
        rep.l_pt = parts.point;
        rep.l_curv = parts.curvature;
        rep.lr = lr_at(iter, cfg_);
        rep.n_gauss = gaussian_count();
        rep.levels = net.grid().active_levels();
        rep.total = loss_total(parts, weights_);

        tape.backward(loss_total(rgb, eik, pt, curv, weights_));
        GradList g_net = zero_grads(net.params());
        accumulate_grads(g_net, bound.leaves());
        GradList g_render = zero_grads(state_.render);
        accumulate_grads(g_render, rp);
        adam_step(net.params(), g_net, neus_adam_, rep.lr, cfg_.weight_decay);
        adam_step(state_.render, g_render, render_adam_, rep.lr, cfg_.weight_decay);
        emit(rep);
    }

    void gaussian_step(GaussianTrainer& gt, int iter) {
        Rng rng = Rng::stream(cfg_.seed, "gaussian", static_cast<std::uint64_t>(iter));
        const View& view =
            scene_.views[static_cast<std::size_t>(scene_.train[rng.below(scene_.train.size())])];
        const SdfNetwork& net = state_.net;
        const double eps = net.gradient_eps();
        const auto res = gt.step(view.camera, view.image, background_of(state_.render),
                                 [&](const Tensor& p) { return network_gradient(net, p, eps); });
        LossReport rep;
        rep.iter = iter;
        rep.phase = Phase::Gaussian;
        rep.l_rgb = res.parts.rgb;
        rep.l_s = res.parts.scale;
        rep.l_align = res.parts.align;
        rep.total = res.total;
        rep.lr = cfg_.gs_lr.position;
        rep.n_gauss = gt.size();
        rep.levels = net.grid().active_levels();
        emit(rep);
    }

    const Scene& scene_;
    TrainConfig cfg_;
    const ReportSink& sink_;
    TrainState state_;
    LossWeights weights_;
    AdamState neus_adam_;
    AdamState render_adam_;
    std::vector<LossReport> reports_;
};

}  // namespace

TrainResult train(const Scene& scene, const TrainConfig& cfg, const ReportSink& sink) {
    if (scene.train.size() < 2) throw ContractViolation("train: need at least two training views");
    for (int i : scene.train)
        if (i < 0 || static_cast<std::size_t>(i) >= scene.views.size()) throw ContractViolation("train: bad view index");
    return Runner(scene, cfg, sink).run();
}

}  // namespace neusg
