// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include "doctest.h"
#include "neusg/error.hpp"
#include "neusg/rng.hpp"
#include "neusg/trainer.hpp"

using namespace neusg;
using diff::Tensor;

namespace {

SdfConfig tiny_sdf() {
    SdfConfig cfg;
    cfg.grid.levels = 4;
    cfg.grid.log2_table = 10;
    cfg.grid.base_resolution = 4;
    cfg.grid.max_resolution = 32;
    cfg.grid.initial_levels = 2;
    cfg.hidden = 16;
    cfg.geo_features = 4;
    cfg.color_hidden = 8;
    cfg.color_layers = 2;
    return cfg;
}

const Scene& tiny_scene() {
    static const Scene scene = [] {
        SyntheticSpec spec;
        spec.views = 6;
        spec.resolution = 24;
        spec.sparse_points = 150;
        spec.mesh_resolution = 32;
        return make_synthetic(spec, 1);
    }();
    return scene;
}

TrainConfig tiny_config(int total, int interval, int gs_total) {
    TrainConfig cfg;
    cfg.sdf = tiny_sdf();
    cfg.scale_schedule(total);
    cfg.gs_block_interval = interval;
    cfg.gs_iters_total = gs_total;
    cfg.rays_per_iter = 12;
    cfg.samples_per_ray = 12;
    cfg.points_per_iter = 32;
    cfg.densify.interval = 5;
    cfg.seed = 3;
    return cfg;
}

ParamList one_param(std::vector<double> v, bool decay) {
    const int n = static_cast<int>(v.size());
    return {Param{"p", Tensor(1, n, std::move(v)), decay}};
}

}  // namespace

TEST_CASE("loss_gaussian combines the parts") {
    CHECK(loss_gaussian({0.4, 0.001, 0.02}, 100.0, 1.0) == doctest::Approx(0.52).epsilon(1e-15));
    CHECK(loss_gaussian({0.4, 0.001, 0.02}, 0.0, 0.0) == 0.4);
    CHECK(loss_gaussian({0.0, 0.0, 0.0}, 100.0, 1.0) == 0.0);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (int k = 0; k < 3; ++k) {
        GaussianLossParts p{0.1, 0.1, 0.1};
        const char* names[] = {"l_rgb", "l_s", "l_align"};
        (k == 0 ? p.rgb : k == 1 ? p.scale : p.align) = k == 1 ? std::numeric_limits<double>::infinity() : nan;
        try {
            loss_gaussian(p, 100.0, 1.0);
            FAIL("expected TrainingAbort");
        } catch (const TrainingAbort& e) {
            CHECK(std::string(e.what()).find(names[k]) != std::string::npos);
        }
    }
}

TEST_CASE("adam: zero gradient and decay-only steps") {
    ParamList p = one_param({0.5, -2.0, 3.0}, false);
    AdamState s;
    s.reset(p);
    adam_step(p, {{0.0, 0.0, 0.0}}, s, 1e-2, 0.0);
    CHECK(p[0].value.data == std::vector<double>{0.5, -2.0, 3.0});

    ParamList q = one_param({0.5, -2.0, 3.0}, true);
    ParamList r = one_param({0.5, -2.0, 3.0}, false);
    s.reset(q);
    AdamState t;
    t.reset(r);
    adam_step(q, {{0.0, 0.0, 0.0}}, s, 1e-2, 1e-2);
    adam_step(r, {{0.0, 0.0, 0.0}}, t, 1e-2, 1e-2);
    const double f = 1.0 - 1e-2 * 1e-2;
    CHECK(q[0].value.data[0] == doctest::Approx(0.5 * f).epsilon(1e-15));
    CHECK(q[0].value.data[1] == doctest::Approx(-2.0 * f).epsilon(1e-15));
    CHECK(q[0].value.data[2] == doctest::Approx(3.0 * f).epsilon(1e-15));
    CHECK(r[0].value.data == std::vector<double>{0.5, -2.0, 3.0});
}

TEST_CASE("adam: first step and second step closed forms") {
    const std::vector<double> g1{0.3, -1e-3, 4.0, 0.0};
    const std::vector<double> g2{-0.1, 2e-3, 4.0, 1.0};
    ParamList p = one_param({1.0, 1.0, 1.0, 1.0}, false);
    AdamState s;
    s.reset(p);
    const double lr = 0.05, eps = 1e-8, b1 = 0.9, b2 = 0.999;
    adam_step(p, {g1}, s, lr, 0.0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p[0].value.data[i] == doctest::Approx(1.0 - lr * g1[i] / (std::abs(g1[i]) + eps)).epsilon(1e-14));
    const std::vector<double> after1 = p[0].value.data;
    adam_step(p, {g2}, s, lr, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
        const double m = (b1 * (1 - b1) * g1[i] + (1 - b1) * g2[i]) / (1 - b1 * b1);
        const double v = (b2 * (1 - b2) * g1[i] * g1[i] + (1 - b2) * g2[i] * g2[i]) / (1 - b2 * b2);
        CHECK(p[0].value.data[i] == doctest::Approx(after1[i] - lr * m / (std::sqrt(v) + eps)).epsilon(1e-14));
    }

    // Per-parameter learning-rate factors.
    ParamList two{Param{"a", Tensor(1, 1, 0.0), false}, Param{"b", Tensor(1, 1, 0.0), false}};
    s.reset(two);
    adam_step(two, {{1.0}, {1.0}}, s, 1.0, 0.0, {0.1, 0.001});
    CHECK(two[0].value.data[0] == doctest::Approx(-0.1));
    CHECK(two[1].value.data[0] == doctest::Approx(-0.001));
}

TEST_CASE("adam: non-finite gradient aborts naming the parameter") {
    ParamList p{Param{"net.w1", Tensor(1, 2, 0.0), true}};
    AdamState s;
    s.reset(p);
    try {
        adam_step(p, {{0.0, std::numeric_limits<double>::quiet_NaN()}}, s, 1e-3, 0.0);
        FAIL("expected TrainingAbort");
    } catch (const TrainingAbort& e) {
        CHECK(std::string(e.what()).find("net.w1") != std::string::npos);
    }
    CHECK(p[0].value.data == std::vector<double>{0.0, 0.0});
    CHECK_THROWS_AS(adam_step(p, {{0.0}}, s, 1e-3, 0.0), ContractViolation);
}

TEST_CASE("lr_at warmup and milestones") {
    TrainConfig cfg;
    CHECK(cfg.warmup_iters == 50);
    CHECK(cfg.milestone1 == 3000);
    CHECK(cfg.milestone2 == 4000);
    CHECK(lr_at(0, cfg) == 0.0);
    CHECK(lr_at(25, cfg) == doctest::Approx(cfg.lr / 2));
    CHECK(lr_at(3000, cfg) == doctest::Approx(cfg.lr / 10));
    CHECK(lr_at(2999, cfg) == cfg.lr);
    CHECK(lr_at(4000, cfg) == doctest::Approx(cfg.lr / 100));
    CHECK_THROWS_AS(lr_at(-1, cfg), ContractViolation);
    CHECK_THROWS_AS(lr_at(5001, cfg), ContractViolation);

    // Reference ratios: warmup 1%, milestones at 60% and 80%.
    TrainConfig big;
    big.scale_schedule(500000);
    CHECK(big.warmup_iters == 5000);
    CHECK(big.milestone1 == 300000);
    CHECK(big.milestone2 == 400000);
    CHECK(big.gs_block_interval == 100000);
}

TEST_CASE("schedule enumeration") {
    TrainConfig cfg;
    cfg.total_iters = 1000;
    cfg.gs_block_interval = 200;
    cfg.gs_iters_total = 60;
    std::vector<PhaseBlock> expected;
    for (int b = 0; b < 5; ++b) {
        expected.push_back({Phase::Neus, 200 * b, 200});
        expected.push_back({Phase::Gaussian, 12 * b, 12});
    }
    CHECK(schedule(cfg) == expected);

    cfg.total_iters = 1000;
    cfg.gs_block_interval = 300;
    cfg.gs_iters_total = 10;
    const std::vector<PhaseBlock> uneven{{Phase::Neus, 0, 300},     {Phase::Gaussian, 0, 3}, {Phase::Neus, 300, 300},
                                         {Phase::Gaussian, 3, 3},   {Phase::Neus, 600, 300}, {Phase::Gaussian, 6, 2},
                                         {Phase::Neus, 900, 100},   {Phase::Gaussian, 8, 2}};
    CHECK(schedule(cfg) == uneven);

    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        cfg.total_iters = 1 + static_cast<int>(rng.below(5000));
        cfg.gs_block_interval = 1 + static_cast<int>(rng.below(1200));
        cfg.gs_iters_total = static_cast<int>(rng.below(3000));
        int neus = 0, gs = 0;
        for (const PhaseBlock& b : schedule(cfg)) (b.phase == Phase::Neus ? neus : gs) += b.count;
        CHECK(neus == cfg.total_iters);
        CHECK(gs == cfg.gs_iters_total);
    }
}

TEST_CASE("training reports: order, recomposition, determinism") {
    const TrainConfig cfg = tiny_config(40, 20, 10);
    std::vector<std::string> streamed;
    const TrainResult a = train(tiny_scene(), cfg, [&](const LossReport& r) { streamed.push_back(report_csv_row(r)); });
    REQUIRE(a.reports.size() == 50);
    std::vector<std::pair<Phase, int>> trace;
    for (const PhaseBlock& b : schedule(cfg))
        for (int i = 0; i < b.count; ++i) trace.emplace_back(b.phase, b.begin + i);
    for (std::size_t i = 0; i < a.reports.size(); ++i) {
        const LossReport& r = a.reports[i];
        CHECK(r.phase == trace[i].first);
        CHECK(r.iter == trace[i].second);
        CHECK(std::isfinite(r.total));
        if (r.phase == Phase::Neus) {
            CHECK(r.total == doctest::Approx(r.l_rgb + cfg.lambda1 * r.l_eik + cfg.lambda2 * r.l_pt + cfg.w_curv * r.l_curv)
                                 .epsilon(1e-12));
            CHECK(r.lr == lr_at(r.iter, cfg));
            CHECK(r.l_pt > 0.0);
        } else {
            CHECK(r.total == doctest::Approx(r.l_rgb + cfg.lambda3 * r.l_s + cfg.lambda4 * r.l_align).epsilon(1e-12));
            CHECK(r.n_gauss > 0);
        }
    }
    CHECK(std::string(report_csv_header()) == "iter,phase,l_rgb,l_eik,l_pt,l_curv,l_s,l_align,total,lr,n_gauss,levels");
    REQUIRE(streamed.size() == 50);
    CHECK(streamed[0].rfind("0,neus,", 0) == 0);

    const TrainResult b = train(tiny_scene(), cfg);
    for (std::size_t i = 0; i < a.reports.size(); ++i) CHECK(report_csv_row(b.reports[i]) == streamed[i]);
    for (std::size_t k = 0; k < a.state.net.params().size(); ++k)
        CHECK(a.state.net.params()[k].value.data == b.state.net.params()[k].value.data);
    for (std::size_t k = 0; k < a.state.gaussians.size(); ++k)
        CHECK(a.state.gaussians[k].value.data == b.state.gaussians[k].value.data);

    TrainConfig other = cfg;
    other.seed = 4;
    CHECK(report_csv_row(train(tiny_scene(), other).reports[5]) != streamed[5]);
}

TEST_CASE("hash levels activate on schedule") {
    TrainConfig cfg = tiny_config(32, 32, 0);
    CHECK(cfg.level_step() == 4);
    const TrainResult r = train(tiny_scene(), cfg);
    CHECK(r.reports[3].levels == 2);
    CHECK(r.reports[4].levels == 3);
    CHECK(r.reports[8].levels == 4);
    CHECK(r.reports.back().levels == 4);
}

TEST_CASE("without point regularization or Gaussians the run is plain volume rendering") {
    TrainConfig cfg = tiny_config(30, 10, 0);
    cfg.lambda2 = 0.0;
    const TrainResult ablated = train(tiny_scene(), cfg);

    Scene no_points = tiny_scene();
    no_points.points.clear();
    TrainConfig plain = tiny_config(30, 10, 0);
    const TrainResult reference = train(no_points, plain);

    REQUIRE(ablated.reports.size() == reference.reports.size());
    for (std::size_t i = 0; i < ablated.reports.size(); ++i) {
        const LossReport& x = ablated.reports[i];
        const LossReport& y = reference.reports[i];
        CHECK(x.l_rgb == y.l_rgb);
        CHECK(x.l_eik == y.l_eik);
        CHECK(x.l_curv == y.l_curv);
        CHECK(x.total == y.total);
        CHECK(y.l_pt == 0.0);
    }
    for (std::size_t k = 0; k < ablated.state.net.params().size(); ++k)
        CHECK(ablated.state.net.params()[k].value.data == reference.state.net.params()[k].value.data);
}

TEST_CASE("point set is refreshed from flattened Gaussians after each block") {
    TrainConfig cfg = tiny_config(20, 10, 20);
    cfg.export_points.max_min_scale = 1.0;
    cfg.export_points.min_opacity = 0.0;
    cfg.merge_scene_points = false;
    const TrainResult r = train(tiny_scene(), cfg);
    const auto gs = gaussians_from_params(r.state.gaussians);
    CHECK(r.state.points.size() == gs.size());
    for (std::size_t i = 0; i < gs.size(); ++i) CHECK(r.state.points[i] == gs[i].position);
}

TEST_CASE("non-finite training aborts with the last report") {
    Scene scene = tiny_scene();
    for (int i : scene.train)
        for (double& v : scene.views[static_cast<std::size_t>(i)].image.data) v = std::numeric_limits<double>::quiet_NaN();
    try {
        train(scene, tiny_config(10, 10, 0));
        FAIL("expected TrainingAbort");
    } catch (const TrainingAbort& e) {
        const std::string msg = e.what();
        CHECK(msg.find("l_rgb") != std::string::npos);
        CHECK(msg.find("last report") != std::string::npos);
    }
    Scene one = tiny_scene();
    one.train.resize(1);
    CHECK_THROWS_AS(train(one, tiny_config(10, 10, 0)), ContractViolation);
}

TEST_CASE("gaussian trainer flattens against an analytic field") {
    const SphereField sphere(0.5);
    Rng rng(2);
    std::vector<Vec3> pts;
    for (int i = 0; i < 60; ++i) {
        Vec3 d(rng.normal(), rng.normal(), rng.normal());
        pts.push_back(0.5 * d.normalized());
    }
    TrainConfig cfg;
    cfg.densify.interval = 0;
    GaussianTrainer gt(gaussian_params(init_gaussians(pts, 0)), cfg);
    const Scene& scene = tiny_scene();
    const auto grad = [&](const Tensor& p) {
        Tensor g(p.rows, 3);
        for (int i = 0; i < p.rows; ++i) {
            const Vec3 n = sdf_gradient(sphere, Vec3(p(i, 0), p(i, 1), p(i, 2)), 1e-6);
            for (int c = 0; c < 3; ++c) g(i, c) = n[c];
        }
        return g;
    };
    GaussianTrainer::Step first{}, last{};
    for (int it = 0; it < 300; ++it) {
        const View& v = scene.views[static_cast<std::size_t>(scene.train[static_cast<std::size_t>(it) % scene.train.size()])];
        last = gt.step(v.camera, v.image, Vec3::Ones(), grad);
        if (it == 0) first = last;
    }
    CHECK(gt.iterations() == 300);
    CHECK(last.parts.scale < 0.5 * first.parts.scale);
    CHECK(last.parts.align < first.parts.align);
    const Tensor& q = gt.params()[kGsRotation].value;
    for (int i = 0; i < q.rows; ++i)
        CHECK(std::sqrt(q(i, 0) * q(i, 0) + q(i, 1) * q(i, 1) + q(i, 2) * q(i, 2) + q(i, 3) * q(i, 3)) ==
              doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("desk-config smoke run: windowed L_RGB decreases") {
    SyntheticSpec spec;
    spec.resolution = 64;
    const Scene scene = make_synthetic(spec, 0);
    TrainConfig cfg;
    cfg.scale_schedule(600);
    cfg.gs_iters_total = 60;
    std::vector<double> window(6, 0.0);
    train(scene, cfg, [&](const LossReport& r) {
        if (r.phase == Phase::Neus) window[static_cast<std::size_t>(r.iter / 100)] += r.l_rgb / 100.0;
    });
    // Strictly decreasing at the full learning rate, a plateau within batch noise after the milestones.
    const std::size_t full_rate = static_cast<std::size_t>(cfg.milestone1 / 100);
    for (std::size_t w = 1; w <= full_rate; ++w) {
        CAPTURE(w);
        CHECK(window[w] < window[w - 1]);
    }
    for (std::size_t w = full_rate + 1; w < window.size(); ++w) CHECK(window[w] < 1.05 * window[full_rate]);
    CHECK(window.back() < 0.5 * window.front());
}
