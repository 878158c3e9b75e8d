#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "ot/io.hpp"
#include "ot/rng.hpp"

using namespace ot;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "otkit_io_tests";
        fs::create_directories(d);
        return d;
    }();
    return (dir / name).string();
}

GridDensity demo_grid() {
    GridDensity g;
    g.dim = 2;
    g.lo = {-1.0, 0.0};
    g.hi = {1.0, 3.0};
    g.shape = {2, 3};
    g.values = {0.1, 0.2, 0.3, 0.15, 0.05, 0.2};
    return g;
}

} // namespace

TEST_CASE("grid json roundtrip is exact") {
    GridDensity g = demo_grid();
    g.values[0] = 0.1000000000000000055511; // exercise full double precision
    std::string path = tmp_path("grid.json");
    save_grid(g, path);
    GridDensity h = load_grid(path);
    CHECK(h.dim == 2);
    CHECK(h.lo == g.lo);
    CHECK(h.hi == g.hi);
    CHECK(h.shape == g.shape);
    CHECK(h.values == g.values);
}

TEST_CASE("grid json rejects malformed input") {
    nlohmann::json j = grid_to_json(demo_grid());
    nlohmann::json missing = j;
    missing.erase("shape");
    CHECK_THROWS_AS(grid_from_json(missing), ParseError);

    nlohmann::json wrong_dim = j;
    wrong_dim["dim"] = 3;
    CHECK_THROWS_AS(grid_from_json(wrong_dim), ParseError);

    nlohmann::json bad_geom = j;
    bad_geom["hi"] = {-1.0, 3.0}; // lo[0] == hi[0]
    CHECK_THROWS_AS(grid_from_json(bad_geom), GeometryMismatch);

    nlohmann::json short_data = j;
    short_data["data"] = {1.0, 2.0};
    CHECK_THROWS_AS(grid_from_json(short_data), DimensionMismatch);

    CHECK_THROWS_AS(load_grid(tmp_path("no_such_file.json")), ParseError);

    write_text(tmp_path("broken.json"), "{ not json");
    CHECK_THROWS_AS(load_grid(tmp_path("broken.json")), ParseError);
}

TEST_CASE("gaussian json roundtrip") {
    GaussianDensity g{(Eigen::VectorXd(2) << 0.25, -1.5).finished(),
                      (Eigen::MatrixXd(2, 2) << 2.0, 0.3, 0.3, 1.0).finished()};
    std::string path = tmp_path("gaussian.json");
    save_gaussian(g, path);
    GaussianDensity h = load_gaussian(path);
    CHECK((h.mean - g.mean).norm() == 0.0);
    CHECK((h.cov - g.cov).norm() == 0.0);

    nlohmann::json j = gaussian_to_json(g);
    j.erase("cov");
    CHECK_THROWS_AS(gaussian_from_json(j), ParseError);

    nlohmann::json asym = gaussian_to_json(g);
    asym["cov"][0][1] = 99.0;
    CHECK_THROWS_AS(gaussian_from_json(asym), NonPsdCovariance);

    nlohmann::json mismatched = gaussian_to_json(g);
    mismatched["mean"] = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(gaussian_from_json(mismatched), DimensionMismatch);
}

TEST_CASE("affine map json roundtrip") {
    AffineMap m;
    m.gamma_mat = (Eigen::MatrixXd(2, 2) << 1.5, 0.0, -0.25, 2.0).finished();
    m.gamma_vec = (Eigen::VectorXd(2) << 3.0, -1.0).finished();
    AffineMap h = affine_from_json(affine_to_json(m));
    CHECK((h.gamma_mat - m.gamma_mat).norm() == 0.0);
    CHECK((h.gamma_vec - m.gamma_vec).norm() == 0.0);

    nlohmann::json j = affine_to_json(m);
    j["gamma"] = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(affine_from_json(j), ParseError);
    j.erase("gamma");
    CHECK_THROWS_AS(affine_from_json(j), ParseError);
}

TEST_CASE("matrix and vector json guards") {
    CHECK_THROWS_AS(mat_from_json(nlohmann::json::parse("[[1,2],[3]]"), "m"), ParseError);
    CHECK_THROWS_AS(mat_from_json(nlohmann::json::parse("[[1,\"x\"]]"), "m"), ParseError);
    CHECK_THROWS_AS(mat_from_json(nlohmann::json::parse("[]"), "m"), ParseError);
    CHECK_THROWS_AS(mat_from_json(nlohmann::json::parse("3"), "m"), ParseError);
    CHECK_THROWS_AS(vec_from_json(nlohmann::json::parse("{\"a\":1}"), "v"), ParseError);
    CHECK_THROWS_AS(vec_from_json(nlohmann::json::parse("[1,null]"), "v"), ParseError);

    Eigen::MatrixXd m = (Eigen::MatrixXd(2, 3) << 1, 2, 3, 4, 5, 6).finished();
    CHECK((mat_from_json(mat_to_json(m), "m") - m).norm() == 0.0);
}

TEST_CASE("particle csv roundtrip, with and without density") {
    GaussianDensity g{(Eigen::VectorXd(2) << 1.0, -1.0).finished(),
                      (Eigen::MatrixXd(2, 2) << 0.7, 0.1, 0.1, 0.4).finished()};
    ParticleEnsemble p = sample_gaussian(g, 37, 11);
    std::string path = tmp_path("plain.csv");
    save_particles(p, path);
    ParticleEnsemble q = load_particles(path);
    CHECK(q.dim == 2);
    CHECK(q.points == p.points);
    CHECK(q.weights == p.weights);
    CHECK_FALSE(q.density_values.has_value());

    p.density_values = Eigen::VectorXd::Constant(37, 0.125);
    std::string path2 = tmp_path("dense.csv");
    save_particles(p, path2);
    ParticleEnsemble r = load_particles(path2);
    REQUIRE(r.density_values.has_value());
    CHECK(*r.density_values == *p.density_values);
}

TEST_CASE("particle csv guards") {
    write_text(tmp_path("bad_header.csv"), "a,b,weight\n0,0,1\n");
    CHECK_THROWS_AS(load_particles(tmp_path("bad_header.csv")), ParseError);

    write_text(tmp_path("trailing.csv"), "x1,weight,extra\n0,1,2\n");
    CHECK_THROWS_AS(load_particles(tmp_path("trailing.csv")), ParseError);

    write_text(tmp_path("short_row.csv"), "x1,x2,weight\n0.5,1\n");
    CHECK_THROWS_AS(load_particles(tmp_path("short_row.csv")), ParseError);

    write_text(tmp_path("bad_num.csv"), "x1,weight\nzap,1\n");
    CHECK_THROWS_AS(load_particles(tmp_path("bad_num.csv")), ParseError);

    write_text(tmp_path("no_rows.csv"), "x1,weight\n");
    CHECK_THROWS_AS(load_particles(tmp_path("no_rows.csv")), ParseError);

    write_text(tmp_path("empty.csv"), "");
    CHECK_THROWS_AS(load_particles(tmp_path("empty.csv")), ParseError);

    // weights that do not sum to one fail ensemble validation on load
    write_text(tmp_path("heavy.csv"), "x1,weight\n0,0.9\n1,0.9\n");
    CHECK_THROWS_AS(load_particles(tmp_path("heavy.csv")), UnnormalizedInput);
}

TEST_CASE("lti systems load single object or list") {
    nlohmann::json one = {{"A", {{1.0, 0.1}, {0.0, 1.0}}}, {"B", {{0.0}, {1.0}}}};
    write_text(tmp_path("sys_one.json"), one.dump());
    auto single = load_lti_systems(tmp_path("sys_one.json"));
    REQUIRE(single.size() == 1);
    CHECK(single[0].a_mat(0, 1) == 0.1);
    CHECK(single[0].b_mat.cols() == 1);

    nlohmann::json list = nlohmann::json::array({one, one});
    write_text(tmp_path("sys_list.json"), list.dump());
    CHECK(load_lti_systems(tmp_path("sys_list.json")).size() == 2);

    nlohmann::json no_b = {{"A", {{1.0}}}};
    write_text(tmp_path("sys_bad.json"), no_b.dump());
    CHECK_THROWS_AS(load_lti_systems(tmp_path("sys_bad.json")), ParseError);
}

TEST_CASE("linear model and free pair load") {
    nlohmann::json m = {{"A", {{0.5, 0.0}, {0.0, 0.25}}},
                        {"C", {{1.0, 0.0}, {0.0, 1.0}}},
                        {"mean0", {1.0, 2.0}},
                        {"P0", {{1.0, 0.0}, {0.0, 1.0}}}};
    write_text(tmp_path("model.json"), m.dump());
    LinearGaussianModel lm = load_linear_model(tmp_path("model.json"));
    CHECK(lm.a_mat(1, 1) == 0.25);
    CHECK(lm.initial.mean[1] == 2.0);

    nlohmann::json incomplete = m;
    incomplete.erase("P0");
    write_text(tmp_path("model_bad.json"), incomplete.dump());
    CHECK_THROWS_AS(load_linear_model(tmp_path("model_bad.json")), ParseError);

    nlohmann::json fp = {{"R", {{0.0, 1.0}, {1.0, 0.0}}}, {"r", {0.5, -0.5}}};
    write_text(tmp_path("pair.json"), fp.dump());
    FreePair loaded = load_free_pair(tmp_path("pair.json"));
    CHECK(loaded.R(0, 1) == 1.0);
    CHECK(loaded.r[0] == 0.5);
    nlohmann::json fp_bad = {{"R", {{1.0}}}};
    write_text(tmp_path("pair_bad.json"), fp_bad.dump());
    CHECK_THROWS_AS(load_free_pair(tmp_path("pair_bad.json")), ParseError);
}
