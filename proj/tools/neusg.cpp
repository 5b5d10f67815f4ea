// SPDX-License-Identifier: Apache-2.0
//
// neusg: synth | train | render | extract-mesh | export-points | eval

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "neusg/checkpoint.hpp"
#include "neusg/config.hpp"
#include "neusg/error.hpp"
#include "neusg/io.hpp"
#include "neusg/mesh.hpp"
#include "neusg/parallel.hpp"
#include "neusg/scene.hpp"
#include "neusg/splat.hpp"
#include "neusg/trainer.hpp"

namespace fs = std::filesystem;
using namespace neusg;

namespace {

struct Globals {
    std::string config_file;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    std::vector<std::string> sets;
};

AppConfig effective_config(const Globals& g) {
    ConfigValues values;
    if (!g.config_file.empty()) values = parse_config(read_file(g.config_file));
    for (const std::string& s : g.sets) values.push_back(parse_assignment(s));
    if (g.seed) values.emplace_back("train.seed", std::to_string(*g.seed));
    AppConfig cfg;
    apply_config(cfg, values);
    return cfg;
}

fs::path manifest_path(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.json" : p; }

Image read_image(const fs::path& p) { return p.extension() == ".pfm" ? read_pfm(p) : read_png(p); }

void write_image(const fs::path& p, const Image& img) {
    if (p.extension() == ".pfm") {
        write_pfm(p, img);
    } else {
        write_png(p, img);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint implicit-surface and Gaussian-splatting reconstruction"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_file, "INI config file")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Random seed (overrides train.seed)");
    app.add_option("--threads", g.threads, "Worker threads for rendering, extraction and metrics")
        ->check(CLI::PositiveNumber);
    app.add_option("--set", g.sets, "Override a config key: key=value (bare or section.key)")->allow_extra_args(false);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic scene directory");
    std::string preset;
    std::optional<int> views, resolution;
    std::string synth_out;
    synth->add_option("--preset", preset, "sphere | box | torus | union");
    synth->add_option("--views", views, "Number of views");
    synth->add_option("--resolution", resolution, "Image width and height");
    synth->add_option("--out", synth_out, "Output directory")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "Optimize a scene; writes checkpoint, reports and config");
    std::string scene_path, train_out;
    train_cmd->add_option("--scene", scene_path, "Manifest or scene directory")->required();
    train_cmd->add_option("--out", train_out, "Run directory")->required();
    bool quiet = false;
    train_cmd->add_flag("--quiet", quiet, "No progress output");

    // render
    auto* render = app.add_subcommand("render", "Render a view from a checkpoint");
    std::string ck_path, render_scene, render_out, renderer = "neus";
    int view = -1;
    render->add_option("--checkpoint", ck_path, "Checkpoint file")->required();
    render->add_option("--scene", render_scene, "Manifest or scene directory providing the camera")->required();
    render->add_option("--view", view, "View index (default: first test view, else 0)");
    render->add_option("--renderer", renderer, "neus | splat")->check(CLI::IsMember({"neus", "splat"}));
    render->add_option("--out", render_out, "Output image (.png or .pfm)")->required();

    // extract-mesh
    auto* extract = app.add_subcommand("extract-mesh", "Marching cubes on the learned field");
    std::string mesh_out;
    std::optional<int> mesh_res;
    extract->add_option("--checkpoint", ck_path, "Checkpoint file")->required();
    extract->add_option("--out", mesh_out, "Output mesh (.ply or .obj)")->required();
    extract->add_option("--resolution", mesh_res, "Grid cells per axis");

    // export-points
    auto* exportp = app.add_subcommand("export-points", "Write centers of flat, opaque Gaussians as PLY");
    std::string points_out;
    exportp->add_option("--checkpoint", ck_path, "Checkpoint file")->required();
    exportp->add_option("--out", points_out, "Output PLY")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "Mesh and image metrics as JSON");
    std::string eval_mesh, gt_mesh, gt_preset, eval_scene, image_a, image_b, eval_out;
    eval->add_option("--mesh", eval_mesh, "Reconstructed mesh");
    eval->add_option("--gt-mesh", gt_mesh, "Ground-truth mesh");
    eval->add_option("--gt-preset", gt_preset, "Analytic ground truth: sphere | box | torus | union");
    eval->add_option("--scene", eval_scene, "Synthetic scene whose preset is the ground truth");
    eval->add_option("--image", image_a, "Rendered image");
    eval->add_option("--reference", image_b, "Reference image");
    eval->add_option("--out", eval_out, "Output JSON (also printed)");

    for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        set_thread_count(g.threads);
        AppConfig cfg = effective_config(g);

        if (synth->parsed()) {
            SyntheticSpec spec = cfg.synth;
            if (!preset.empty()) spec.preset = preset;
            if (views) spec.views = *views;
            if (resolution) spec.resolution = *resolution;
            const fs::path m = generate_synthetic(spec, cfg.train.seed, synth_out);
            std::cout << m.string() << "\n";
        } else if (train_cmd->parsed()) {
            const Scene scene = load_scene(manifest_path(scene_path));
            const fs::path out(train_out);
            fs::create_directories(out);
            write_file_atomic(out / "config.ini", config_to_ini(cfg));
            std::string csv = std::string(report_csv_header()) + "\n";
            const auto t0 = std::chrono::steady_clock::now();
            const TrainResult res = train(scene, cfg.train, [&](const LossReport& r) {
                csv += report_csv_row(r) + "\n";
                if (!quiet && r.phase == Phase::Neus && (r.iter + 1) % 500 == 0) {
                    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                    std::fprintf(stderr, "iter %d  l_rgb %.4f  l_eik %.4f  l_pt %.5f  gaussians %zu  %.0fs\n", r.iter + 1,
                                 r.l_rgb, r.l_eik, r.l_pt, r.n_gauss, s);
                }
            });
            write_file_atomic(out / "reports.csv", csv);
            save_checkpoint(out / "checkpoint.bin", cfg, res.state);
            std::cout << (out / "checkpoint.bin").string() << "\n";
        } else if (render->parsed()) {
            const Checkpoint ck = load_checkpoint(ck_path);
            const Scene scene = load_scene(manifest_path(render_scene));
            if (view < 0) view = scene.test.empty() ? 0 : scene.test.front();
            if (view >= static_cast<int>(scene.views.size())) throw ContractViolation("--view out of range");
            const Camera& cam = scene.views[static_cast<std::size_t>(view)].camera;
            const Image img =
                renderer == "splat"
                    ? rasterize(gaussians_from_params(ck.state.gaussians), cam, background_of(ck.state.render))
                    : render_image(ck.state.net, ck.state.render, cam, cfg.render.samples, ck.config.train.seed,
                                   cfg.render.chunk);
            write_image(render_out, img);
        } else if (extract->parsed()) {
            const Checkpoint ck = load_checkpoint(ck_path);
            const TriangleMesh mesh = marching_cubes(ck.state.net, mesh_res.value_or(cfg.eval.mesh_resolution));
            write_mesh(mesh_out, mesh);
            std::cout << mesh.vertices.size() << " vertices, " << mesh.triangles.size() << " triangles\n";
        } else if (exportp->parsed()) {
            const Checkpoint ck = load_checkpoint(ck_path);
            PointCloud cloud;
            cloud.points = export_surface_points(gaussians_from_params(ck.state.gaussians), ck.config.train.export_points);
            write_point_cloud(points_out, cloud);
            std::cout << cloud.points.size() << " points\n";
        } else if (eval->parsed()) {
            MetricReport report;
            if (!eval_mesh.empty()) {
                std::vector<Vec3> gt;
                if (!gt_mesh.empty()) {
                    gt = sample_surface(read_mesh(gt_mesh), cfg.eval.gt_samples, cfg.train.seed + 1);
                } else {
                    std::string p = gt_preset;
                    if (p.empty() && !eval_scene.empty()) {
                        const auto j = nlohmann::json::parse(read_file(manifest_path(eval_scene)));
                        if (j.contains("synthetic")) p = j["synthetic"].value("preset", "");
                    }
                    if (p.empty()) throw ContractViolation("eval: --mesh needs --gt-mesh, --gt-preset or a synthetic --scene");
                    gt = sample_field_surface(*preset_field(p), cfg.eval.gt_samples, cfg.train.seed + 1);
                }
                report = evaluate_mesh(read_mesh(eval_mesh), gt, cfg.eval.tau, cfg.eval.samples, cfg.train.seed);
            }
            if (!image_a.empty() || !image_b.empty()) {
                if (image_a.empty() || image_b.empty()) throw ContractViolation("eval: --image and --reference go together");
                const Image a = read_image(image_a);
                const Image b = read_image(image_b);
                report.psnr = psnr(a, b);
                report.ssim = ssim(a, b);
            }
            if (eval_mesh.empty() && image_a.empty()) throw ContractViolation("eval: nothing to evaluate");
            const std::string json = report.to_json();
            if (!eval_out.empty()) write_file_atomic(eval_out, json);
            std::cout << json;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
