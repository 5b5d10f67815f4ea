// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <map>

#include "doctest.h"
#include "json.hpp"
#include "neusg/error.hpp"
#include "neusg/io.hpp"
#include "neusg/mesh.hpp"
#include "neusg/rng.hpp"
#include "neusg/scene.hpp"

using namespace neusg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("neusg_scene_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Vec3> pts(n);
    for (Vec3& p : pts) p = Vec3(rng.normal(), rng.normal(), rng.normal()) * rng.uniform(1e-3, 1e3);
    return pts;
}

PlyData mixed_ply(PlyFormat format) {
    Rng rng(5);
    PlyData ply;
    ply.format = format;
    ply.comments = {"mixed types"};
    PlyElement v{"vertex", 40, {}};
    const auto col = [&](const std::string& name, PlyType t, auto gen) {
        PlyProperty p;
        p.name = name;
        p.type = t;
        for (std::size_t i = 0; i < v.count; ++i) p.values.push_back(gen());
        v.properties.push_back(p);
    };
    col("x", PlyType::Float32, [&] { return static_cast<double>(static_cast<float>(rng.normal())); });
    col("y", PlyType::Float64, [&] { return rng.normal(); });
    col("z", PlyType::Float64, [&] { return rng.normal() * 1e-200; });
    col("red", PlyType::UInt8, [&] { return static_cast<double>(rng.below(256)); });
    col("label", PlyType::Int16, [&] { return static_cast<double>(static_cast<int>(rng.below(60000)) - 30000); });
    col("id", PlyType::UInt32, [&] { return static_cast<double>(rng.below(4000000000ULL)); });
    col("flag", PlyType::Int8, [&] { return static_cast<double>(static_cast<int>(rng.below(256)) - 128); });
    PlyElement f{"face", 7, {}};
    PlyProperty idx;
    idx.name = "vertex_indices";
    idx.is_list = true;
    idx.count_type = PlyType::UInt8;
    idx.type = PlyType::Int32;
    for (std::size_t i = 0; i < f.count; ++i) {
        std::vector<double> l;
        for (std::size_t k = 0; k < i % 5; ++k) l.push_back(static_cast<double>(rng.below(40)));
        idx.lists.push_back(l);
    }
    f.properties.push_back(idx);
    ply.elements = {v, f};
    return ply;
}

void check_same(const PlyData& a, const PlyData& b) {
    REQUIRE(a.elements.size() == b.elements.size());
    CHECK(a.comments == b.comments);
    for (std::size_t e = 0; e < a.elements.size(); ++e) {
        const PlyElement& x = a.elements[e];
        const PlyElement& y = b.elements[e];
        CHECK(x.name == y.name);
        CHECK(x.count == y.count);
        REQUIRE(x.properties.size() == y.properties.size());
        for (std::size_t p = 0; p < x.properties.size(); ++p) {
            CHECK(x.properties[p].name == y.properties[p].name);
            CHECK(x.properties[p].type == y.properties[p].type);
            CHECK(x.properties[p].values == y.properties[p].values);
            CHECK(x.properties[p].lists == y.properties[p].lists);
        }
    }
}

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.views = 4;
    s.resolution = 32;
    s.mesh_resolution = 32;
    s.sparse_points = 100;
    return s;
}

std::map<std::string, std::string> read_tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
    return out;
}

}  // namespace

TEST_CASE("point cloud binary round trip is exact") {
    const auto dir = temp_dir("ply");
    PointCloud cloud;
    cloud.points = random_points(1000, 1);
    cloud.normals = random_points(1000, 2);
    for (PlyFormat f : {PlyFormat::BinaryLittleEndian, PlyFormat::BinaryBigEndian, PlyFormat::Ascii}) {
        write_point_cloud(dir / "c.ply", cloud, f);
        const PointCloud back = read_point_cloud(dir / "c.ply");
        CHECK(back.points == cloud.points);
        CHECK(back.normals == cloud.normals);
        CHECK(back.extra.empty());
    }
    CHECK(!fs::exists(dir / "c.ply.tmp"));
}

TEST_CASE("ascii and binary encodings parse to identical values") {
    const PlyData ascii = parse_ply(serialize_ply(mixed_ply(PlyFormat::Ascii)));
    const PlyData le = parse_ply(serialize_ply(mixed_ply(PlyFormat::BinaryLittleEndian)));
    const PlyData be = parse_ply(serialize_ply(mixed_ply(PlyFormat::BinaryBigEndian)));
    check_same(ascii, le);
    check_same(le, be);
    check_same(le, mixed_ply(PlyFormat::BinaryLittleEndian));
}

TEST_CASE("unknown properties survive a rewrite") {
    const PlyData src = mixed_ply(PlyFormat::BinaryLittleEndian);
    const PointCloud cloud = point_cloud_from_ply(src);
    CHECK(cloud.normals.empty());
    REQUIRE(cloud.extra.size() == 4);
    const PointCloud back = point_cloud_from_ply(parse_ply(serialize_ply(point_cloud_to_ply(cloud))));
    CHECK(back.points == cloud.points);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(back.extra[i].name == cloud.extra[i].name);
        CHECK(back.extra[i].type == cloud.extra[i].type);
        CHECK(back.extra[i].values == cloud.extra[i].values);
    }
}

TEST_CASE("truncated or malformed PLY raises ParseError with an offset") {
    const std::string good = serialize_ply(mixed_ply(PlyFormat::BinaryLittleEndian));
    const std::size_t header_end = good.find("end_header\n") + 11;
    try {
        parse_ply(good.substr(0, good.size() - 3));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset() > header_end);
        CHECK(e.offset() <= good.size() - 3);
    }

    // Header claims more vertices than the data holds.
    std::string more = serialize_ply(mixed_ply(PlyFormat::Ascii));
    more.replace(more.find("element vertex 40"), 17, "element vertex 90");
    CHECK_THROWS_AS(parse_ply(more), ParseError);

    CHECK_THROWS_AS(parse_ply("plx\nformat ascii 1.0\nend_header\n"), ParseError);
    CHECK_THROWS_AS(parse_ply("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n"), ParseError);
    CHECK_THROWS_AS(parse_ply("ply\nformat ascii 1.0\nproperty float x\nend_header\n"), ParseError);
    CHECK_THROWS_AS(parse_ply("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\nabc\n"), ParseError);
    const std::string bad_type = "ply\nformat ascii 1.0\nelement vertex 1\nproperty quad x\nend_header\n1\n";
    try {
        parse_ply(bad_type);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset() == bad_type.find("property quad"));
    }
    CHECK_THROWS_AS(parse_ply("ply\nformat binary_middle_endian 1.0\nend_header\n"), ParseError);
    CHECK_THROWS_AS(point_cloud_from_ply(parse_ply("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n")),
                    ParseError);
}

TEST_CASE("gaussian PLY round trip") {
    Rng rng(3);
    std::vector<Gaussian3D> gs(20);
    for (Gaussian3D& g : gs) {
        g.position = Vec3(rng.normal(), rng.normal(), rng.normal());
        g.rotation = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        g.log_scale = Vec3(rng.normal(), rng.normal(), rng.normal());
        g.opacity_logit = rng.normal();
        g.sh.resize(12);
        for (double& s : g.sh) s = rng.normal();
    }
    const PlyData ply = parse_ply(serialize_ply(gaussians_to_ply(gs)));
    REQUIRE(ply.find("vertex")->find("f_rest_8"));
    CHECK(!ply.find("vertex")->find("f_rest_9"));
    CHECK(ply.find("vertex")->find("f_dc_0")->values[0] == gs[0].sh[0]);
    CHECK(ply.find("vertex")->find("f_rest_3")->values[0] == gs[0].sh[5]);
    const auto back = gaussians_from_ply(ply);
    REQUIRE(back.size() == gs.size());
    for (std::size_t i = 0; i < gs.size(); ++i) {
        CHECK(back[i].position == gs[i].position);
        CHECK(back[i].rotation == gs[i].rotation);
        CHECK(back[i].log_scale == gs[i].log_scale);
        CHECK(back[i].opacity_logit == gs[i].opacity_logit);
        CHECK(back[i].sh == gs[i].sh);
    }
}

TEST_CASE("PNG and PFM round trips") {
    const auto dir = temp_dir("img");
    Image img(7, 5);
    Rng rng(4);
    for (double& v : img.data) v = static_cast<double>(rng.below(256)) / 255.0;
    write_png(dir / "a.png", img);
    CHECK(read_png(dir / "a.png").data == img.data);

    for (double& v : img.data) v = static_cast<double>(static_cast<float>(rng.normal()));
    write_pfm(dir / "a.pfm", img);
    const Image back = read_pfm(dir / "a.pfm");
    CHECK(back.width == 7);
    CHECK(back.height == 5);
    CHECK(back.data == img.data);
    CHECK_THROWS_AS(read_png(dir / "missing.png"), LoadError);
}

TEST_CASE("split: floor of the test fraction, deterministic by seed") {
    Scene s;
    s.views.resize(30);
    assign_split(s, 11);
    CHECK(s.test.size() == 2);
    CHECK(s.train.size() == 28);
    Scene t = s;
    assign_split(t, 11);
    CHECK(t.test == s.test);
    bool differs = false;
    for (std::uint64_t seed = 12; seed < 20; ++seed) {
        assign_split(t, seed);
        differs = differs || t.test != s.test;
    }
    CHECK(differs);
    s.views.resize(10);
    assign_split(s, 0);
    CHECK(s.test.empty());
}

TEST_CASE("analytic presets are distance fields") {
    Rng rng(6);
    for (const char* name : {"sphere", "box", "torus", "union"}) {
        const auto f = preset_field(name);
        int checked = 0;
        for (int i = 0; i < 400; ++i) {
            const Vec3 x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
            // Stay clear of the medial axis: outside, or inside the smooth shapes.
            if (f->sdf(x) < 0.02 && std::string(name) != "sphere") continue;
            if (std::string(name) == "sphere" && x.norm() < 0.05) continue;
            CHECK(sdf_gradient(*f, x, 1e-6).norm() == doctest::Approx(1.0).epsilon(1e-6));
            ++checked;
        }
        CHECK(checked > 100);
    }
    CHECK_THROWS_AS(preset_field("teapot"), ContractViolation);
}

TEST_CASE("sphere silhouette matches the pinhole projection") {
    SyntheticSpec spec;
    spec.views = 3;
    const auto cams = camera_ring(spec, 1);
    const auto field = preset_field("sphere");
    const double expected = spec.focal_factor * spec.resolution * std::tan(std::asin(0.5 / spec.camera_distance));
    for (const Camera& cam : cams) {
        CHECK((cam.center().norm()) == doctest::Approx(2.0));
        const Image img = render_analytic(*field, "sphere", cam, spec);
        int covered = 0, left = cam.width, right = -1;
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                if (img.pixel(x, y) == spec.background) continue;
                ++covered;
                if (y == cam.height / 2) {
                    left = std::min(left, x);
                    right = std::max(right, x);
                }
            }
        }
        CHECK(std::abs(std::sqrt(covered / M_PI) - expected) < 1.0);
        CHECK(std::abs(0.5 * (right + 1 - left) - expected) <= 1.0);
    }
}

TEST_CASE("synthetic directory is byte-identical for a seed") {
    const auto a = temp_dir("synth_a");
    const auto b = temp_dir("synth_b");
    const auto c = temp_dir("synth_c");
    generate_synthetic(small_spec(), 3, a);
    generate_synthetic(small_spec(), 3, b);
    generate_synthetic(small_spec(), 4, c);
    const auto ta = read_tree(a);
    CHECK(ta.size() == 7);
    CHECK(ta == read_tree(b));
    CHECK(ta != read_tree(c));
}

TEST_CASE("ground-truth mesh is within two cells of the analytic sphere") {
    const auto dir = temp_dir("gt");
    SyntheticSpec spec = small_spec();
    spec.mesh_resolution = 64;
    generate_synthetic(spec, 0, dir);
    const TriangleMesh mesh = read_mesh(dir / "gt_mesh.ply");
    const auto gt = sample_field_surface(*preset_field("sphere"), 20000, 1);
    CHECK(chamfer(sample_surface(mesh, 20000, 2), gt) < 2.0 * (2.0 / spec.mesh_resolution));
}

TEST_CASE("manifest save and load") {
    const auto dir = temp_dir("manifest");
    const fs::path manifest = generate_synthetic(small_spec(), 5, dir);
    const Scene s = load_scene(manifest);
    CHECK(s.views.size() == 4);
    CHECK(s.preset == "sphere");
    CHECK(s.points.size() == 100);
    for (const Vec3& p : s.points) CHECK(std::abs(p.norm() - 0.5) < 0.02);
    CHECK(manifest_json(s) == read_file(manifest));

    // Non-trivial normalization: unit-space cameras survive save/load.
    Scene scaled = s;
    scaled.scale = 2.5;
    scaled.offset = Vec3(0.1, -0.2, 0.3);
    save_manifest(scaled, dir / "scaled.json");
    const Scene back = load_scene(dir / "scaled.json");
    CHECK(back.scale == 2.5);
    CHECK(back.offset == scaled.offset);
    for (std::size_t i = 0; i < s.views.size(); ++i) {
        CHECK(back.views[i].camera.rotation == s.views[i].camera.rotation);
        CHECK((back.views[i].camera.translation - s.views[i].camera.translation).norm() < 1e-14);
    }
    // Stored points are world coordinates; the unit-space copy moves with the bounds.
    CHECK((back.points[0] - (s.points[0] - scaled.offset) / 2.5).norm() < 1e-15);
}

TEST_CASE("manifest validation names the offending field") {
    const auto dir = temp_dir("invalid");
    const fs::path manifest = generate_synthetic(small_spec(), 6, dir);
    const auto base = nlohmann::json::parse(read_file(manifest));
    const auto expect_error = [&](nlohmann::json j, const std::string& needle) {
        write_file_atomic(dir / "bad.json", j.dump());
        try {
            load_scene(dir / "bad.json");
            FAIL("expected LoadError for " << needle);
        } catch (const LoadError& e) {
            CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
        }
    };
    auto j = base;
    for (auto& x : j["views"][1]["rotation"][2]) x = -x.get<double>();
    expect_error(j, "views[1].rotation");
    j = base;
    j["views"][2]["image"] = "images/missing.png";
    expect_error(j, "views[2].image");
    j = base;
    j["views"][0]["width"] = 33;
    expect_error(j, "views[0].image");
    j = base;
    j["views"][3].erase("translation");
    expect_error(j, "views[3].translation");
    j = base;
    j["bounds"]["radius"] = -1.0;
    expect_error(j, "bounds.radius");
    j = base;
    j["split"]["test"] = {9};
    expect_error(j, "split.test[0]");
    write_file_atomic(dir / "broken.json", "{\"views\": [");
    CHECK_THROWS_AS(load_scene(dir / "broken.json"), LoadError);
    CHECK_THROWS_AS(load_scene(dir / "absent.json"), LoadError);
}
