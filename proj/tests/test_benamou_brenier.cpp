#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "ot/benamou_brenier.hpp"
#include "ot/discrete_ot.hpp"
#include "ot/gaussian_ot.hpp"
#include "ot/measures.hpp"
#include "ot/rng.hpp"

using namespace ot;

namespace {

GridDensity raster1d(double mean, double var, int cells) {
    GaussianDensity g{(Eigen::VectorXd(1) << mean).finished(),
                      (Eigen::MatrixXd(1, 1) << var).finished()};
    return rasterize_gaussian(g, {-4.0}, {4.0}, {cells});
}

GridDensity with_background(const GridDensity& g, double rel) {
    GridDensity out = g;
    double mx = 0.0;
    for (double v : out.values) mx = std::max(mx, v);
    for (double& v : out.values) v = std::max(v, rel * mx);
    return normalize(out);
}

// one shared 1-D translation solve: N(-1, 0.25) -> N(1, 0.25), W^2 = 4
const BbSolution& translation_1d() {
    static BbSolution sol = [] {
        SolverParams p;
        p.step = 0.25;
        return bb_solve(raster1d(-1.0, 0.25, 64), raster1d(1.0, 0.25, 64), 8, p);
    }();
    return sol;
}

// one shared 2-D translation solve: isotropic pair shifted by (1.1, 0.9),
// thin Gaussian tails lifted to a flat background so the box vacuum cannot
// stall the splitting
const Eigen::Vector2d kShift(1.1, 0.9);

const BbSolution& translation_2d() {
    static BbSolution sol = [] {
        GaussianDensity a{(Eigen::VectorXd(2) << -0.6, -0.5).finished(),
                          Eigen::MatrixXd::Identity(2, 2) * 0.16};
        GaussianDensity b{a.mean + kShift, a.cov};
        GridDensity ga = with_background(rasterize_gaussian(a, {-3.5, -3.5}, {3.5, 3.5}, {40, 40}),
                                         1e-5);
        GridDensity gb = with_background(rasterize_gaussian(b, {-3.5, -3.5}, {3.5, 3.5}, {40, 40}),
                                         1e-5);
        SolverParams p;
        p.step = 0.25;
        return bb_solve(ga, gb, 8, p);
    }();
    return sol;
}

double slice_mass(const BbSolution& sol, int t) {
    return sol.field.phi[(size_t)t].sum() * sol.field.space.cell_volume();
}

} // namespace

TEST_CASE("single-node prox satisfies its first-order conditions") {
    RandomStream r(97);
    for (int trial = 0; trial < 200; ++trial) {
        double gamma = std::pow(10.0, r.uniform() * 2.0 - 1.0);
        double phb = r.uniform() * 3.0 - 1.0;
        Eigen::VectorXd mb(3);
        for (int k = 0; k < 3; ++k) mb[k] = r.normal() * 2.0;

        auto [phi, m] = kinetic_prox_point(phb, mb, gamma);
        REQUIRE(phi >= 0.0);
        if (phi > 0.0) {
            double res_phi = phi - phb - gamma * m.squaredNorm() / (phi * phi);
            Eigen::VectorXd res_m = m - mb + (2.0 * gamma / phi) * m;
            CHECK(std::abs(res_phi) <= 1e-10 * (1.0 + std::abs(phb)));
            CHECK(res_m.norm() <= 1e-10 * (1.0 + mb.norm()));
        } else {
            CHECK(m.norm() == 0.0);
            CHECK(4.0 * gamma * phb + mb.squaredNorm() <= 1e-12);
        }
    }
}

TEST_CASE("prox output beats random candidates") {
    RandomStream r(98);
    auto objective = [](double phb, const Eigen::VectorXd& mb, double gamma, double phi,
                        const Eigen::VectorXd& m) {
        double fit = 0.5 * (phi - phb) * (phi - phb) + 0.5 * (m - mb).squaredNorm();
        if (phi > 0.0) return fit + gamma * m.squaredNorm() / phi;
        return m.squaredNorm() == 0.0 ? fit : std::numeric_limits<double>::infinity();
    };
    for (int trial = 0; trial < 50; ++trial) {
        double gamma = 0.2 + r.uniform() * 3.0;
        double phb = r.uniform() * 2.0 - 0.8;
        Eigen::VectorXd mb(2);
        mb << r.normal(), r.normal();
        auto [phi, m] = kinetic_prox_point(phb, mb, gamma);
        double best = objective(phb, mb, gamma, phi, m);
        for (int c = 0; c < 100; ++c) {
            double phi_c = std::abs(phi + r.normal() * 0.3) + 1e-9;
            Eigen::VectorXd m_c = m + Eigen::VectorXd::NullaryExpr(2, [&](Eigen::Index) {
                                      return r.normal() * 0.3;
                                  });
            CHECK(best <= objective(phb, mb, gamma, phi_c, m_c) + 1e-12);
        }
        CHECK(best <= objective(phb, mb, gamma, 0.0, Eigen::VectorXd::Zero(2)) + 1e-12);
    }
    CHECK_THROWS_AS(kinetic_prox_point(1.0, Eigen::VectorXd::Zero(1), 0.0), Error);
}

TEST_CASE("1-D translation reaches the closed-form energy") {
    const BbSolution& sol = translation_1d();
    CHECK(sol.converged);
    CHECK(sol.energy == doctest::Approx(4.0).epsilon(0.05));
    CHECK(sol.continuity_residual <= 1e-3);
}

TEST_CASE("every slice keeps unit mass and nonnegative density") {
    const BbSolution& sol = translation_1d();
    for (int t = 0; t <= sol.field.time_steps; ++t) {
        CHECK(std::abs(slice_mass(sol, t) - 1.0) <= 1e-3);
        CHECK(sol.field.phi[(size_t)t].minCoeff() >= -1e-9);
    }
}

TEST_CASE("endpoint slices reproduce the inputs") {
    const BbSolution& sol = translation_1d();
    GridDensity src = normalize(raster1d(-1.0, 0.25, 64));
    GridDensity tgt = normalize(raster1d(1.0, 0.25, 64));
    double peak = sol.field.phi[0].maxCoeff();
    for (int i = 0; i < 64; ++i) {
        CHECK(std::abs(sol.field.phi[0][i] - src.values[(size_t)i]) <= 1e-6 * peak);
        CHECK(std::abs(sol.field.phi[8][i] - tgt.values[(size_t)i]) <= 1e-6 * peak);
    }
}

TEST_CASE("continuity residual survives independent recomputation") {
    const BbSolution& sol = translation_1d();
    const int T = sol.field.time_steps;
    const double h = sol.field.space.spacing(0);
    double worst = 0.0, mmax = 0.0, rhomax = 0.0;
    for (int t = 0; t < T; ++t) {
        const Eigen::VectorXd& m = sol.field.momentum[(size_t)t][0];
        mmax = std::max(mmax, m.cwiseAbs().maxCoeff());
        rhomax = std::max(rhomax, sol.field.phi[(size_t)t].maxCoeff());
        for (int i = 0; i < 64; ++i) {
            double left = i > 0 ? m[i - 1] : 0.0;
            double right = i < 63 ? m[i] : 0.0;
            double r = (sol.field.phi[(size_t)t + 1][i] - sol.field.phi[(size_t)t][i]) * T +
                       (right - left) / h;
            worst = std::max(worst, std::abs(r));
        }
    }
    CHECK(worst / std::max(rhomax, mmax / h) <= 2e-3);
}

TEST_CASE("discrete transport lower-bounds the kinetic energy") {
    const BbSolution& sol = translation_1d();
    GridDensity src = normalize(raster1d(-1.0, 0.25, 64));
    GridDensity tgt = normalize(raster1d(1.0, 0.25, 64));
    double w = wasserstein(DiscreteMeasure::from_grid(src, 1e-12),
                           DiscreteMeasure::from_grid(tgt, 1e-12));
    CHECK(sol.energy >= 0.95 * w * w);
}

TEST_CASE("midpoint density matches the closed-form interpolant") {
    const BbSolution& sol = translation_1d();
    GridDensity mid = intermediate_density(sol, 0.5);
    auto [mid_mean, mid_cov] = moments(mid);
    CHECK(std::abs(mid_mean[0]) <= 0.05);
    CHECK(mid_cov(0, 0) == doctest::Approx(0.25).epsilon(0.06));
    double mass = 0.0;
    for (double v : mid.values) mass += v;
    CHECK(std::abs(mass * mid.cell_volume() - 1.0) <= 1e-9); // normalized on output

    GridDensity s0 = intermediate_density(sol, 0.0);
    GridDensity src = normalize(raster1d(-1.0, 0.25, 64));
    double peak = *std::max_element(src.values.begin(), src.values.end());
    for (int i = 0; i < 64; ++i)
        CHECK(std::abs(s0.values[(size_t)i] - src.values[(size_t)i]) <= 1e-6 * peak);
    CHECK_THROWS_AS(intermediate_density(sol, 1.0001), SOutOfRange);
}

TEST_CASE("translation velocity is the displacement on the bulk") {
    const BbSolution& sol = translation_1d();
    GridVelocity gv = extract_velocity(sol, 0.5);
    const Eigen::VectorXd& phi = sol.field.phi[4];
    double peak = phi.maxCoeff();
    for (int i = 0; i < 64; ++i) {
        if (phi[i] < 0.1 * peak) continue;
        CHECK(gv.v(i, 0) == doctest::Approx(2.0).epsilon(0.05));
        CHECK(gv.flagged[(size_t)i] == 0);
    }

    // no interval follows the terminal slice, so its field is identically zero
    GridVelocity end = extract_velocity(sol, 1.0);
    CHECK(end.v.cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(extract_velocity(sol, -0.1), SOutOfRange);
}

TEST_CASE("distance to the source grows linearly along the path") {
    const BbSolution& sol = translation_1d();
    GridDensity src = normalize(raster1d(-1.0, 0.25, 64));
    auto prof = geodesic_w_profile(sol, src, 9);
    REQUIRE(prof.size() == 9);
    double total = prof.back().second;
    CHECK(total == doctest::Approx(2.0).epsilon(0.05));
    CHECK(prof.front().second <= 1e-9);
    for (const auto& [s, w] : prof) CHECK(std::abs(w - s * total) <= 0.05 * total);
}

TEST_CASE("2-D translation: energy, mass, velocity, curl") {
    const BbSolution& sol = translation_2d();
    CHECK(sol.converged);
    CHECK(sol.energy == doctest::Approx(kShift.squaredNorm()).epsilon(0.05));
    for (int t = 0; t <= sol.field.time_steps; ++t)
        CHECK(std::abs(slice_mass(sol, t) - 1.0) <= 1e-3);

    GridVelocity gv = extract_velocity(sol, 0.5);
    const Eigen::VectorXd& phi = sol.field.phi[4];
    double peak = phi.maxCoeff();
    const int n = 40;
    double speed_sum = 0.0;
    int bulk = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            long c = (long)i * n + j;
            if (phi[c] < 0.1 * peak) continue;
            CHECK((gv.v.row(c).transpose() - kShift).norm() <= 0.1 * kShift.norm());
            speed_sum += gv.v.row(c).norm();
            ++bulk;
        }
    REQUIRE(bulk > 20);

    // gradient flow means (numerically) curl-free on the bulk
    double h = sol.field.space.spacing(0);
    double curl_max = 0.0;
    auto is_bulk = [&](int i, int j) { return phi[(long)i * n + j] >= 0.1 * peak; };
    for (int i = 1; i + 1 < n; ++i)
        for (int j = 1; j + 1 < n; ++j) {
            if (!is_bulk(i, j) || !is_bulk(i + 1, j) || !is_bulk(i - 1, j) || !is_bulk(i, j + 1) ||
                !is_bulk(i, j - 1))
                continue;
            double dvy_dx = (gv.v((long)(i + 1) * n + j, 1) - gv.v((long)(i - 1) * n + j, 1)) /
                            (2.0 * h);
            double dvx_dy = (gv.v((long)i * n + j + 1, 0) - gv.v((long)i * n + j - 1, 0)) /
                            (2.0 * h);
            curl_max = std::max(curl_max, std::abs(dvy_dx - dvx_dy));
        }
    CHECK(curl_max * h <= 0.05 * (speed_sum / bulk));
}

TEST_CASE("2-D midpoint density matches displacement interpolation") {
    const BbSolution& sol = translation_2d();
    GaussianDensity a{(Eigen::VectorXd(2) << -0.6, -0.5).finished(),
                      Eigen::MatrixXd::Identity(2, 2) * 0.16};
    GaussianDensity b{a.mean + kShift, a.cov};
    GaussianDensity want = displacement_interpolate(a, b, 0.5);
    auto [mid_mean, mid_cov] = moments(intermediate_density(sol, 0.5));
    CHECK((mid_mean - want.mean).norm() <= 0.05 * kShift.norm());
    CHECK((mid_cov - want.cov).norm() <= 0.08 * want.cov.norm());
}

TEST_CASE("identical endpoints cost nothing") {
    GridDensity g = raster1d(0.0, 0.3, 48);
    SolverParams p;
    p.max_iter = 2000;
    BbSolution sol = bb_solve(g, g, 4, p);
    CHECK(sol.converged);
    CHECK(sol.energy <= 1e-4);
    GridVelocity gv = extract_velocity(sol, 0.5);
    CHECK(gv.v.cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("iteration cap raises with the partial iterate attached") {
    SolverParams p;
    p.max_iter = 3;
    try {
        bb_solve(raster1d(-1.0, 0.25, 64), raster1d(1.0, 0.25, 64), 8, p);
        FAIL("expected NotConverged");
    } catch (const NotConverged& e) {
        CHECK(e.partial.iterations == 3);
        CHECK_FALSE(e.partial.converged);
        CHECK(e.partial.field.phi.size() == 9);
    }
}

TEST_CASE("input validation") {
    GridDensity a = raster1d(-1.0, 0.25, 64);
    GridDensity b = raster1d(1.0, 0.25, 64);
    GridDensity shifted = b;
    shifted.lo[0] = -3.0;
    CHECK_THROWS_AS(bb_solve(a, shifted, 8, {}), GeometryMismatch);
    CHECK_THROWS_AS(bb_solve(a, b, 1, {}), Error);

    GridDensity zero = a;
    for (double& v : zero.values) v = 0.0;
    CHECK_THROWS_AS(bb_solve(zero, b, 8, {}), AllZeroDensity);

    // mass hugging the box edge violates the zero-flux containment rule
    GridDensity edge = raster1d(-3.9, 0.04, 64);
    CHECK_THROWS_AS(bb_solve(edge, b, 8, {}), OutOfDomain);

    CHECK_THROWS_AS(geodesic_w_profile(translation_1d(), a, 1), Error);
}
