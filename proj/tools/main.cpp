#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <json.hpp>

#include "ot/benamou_brenier.hpp"
#include "ot/discrete_ot.hpp"
#include "ot/error.hpp"
#include "ot/gaussian_ot.hpp"
#include "ot/io.hpp"
#include "ot/liouville.hpp"
#include "ot/lti_feedback.hpp"
#include "ot/measures.hpp"
#include "ot/parallel.hpp"
#include "ot/refine.hpp"
#include "ot/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v, int digits = 12) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

struct CsvFile {
    FILE* f = nullptr;
    explicit CsvFile(const std::string& path) {
        f = std::fopen(path.c_str(), "w");
        if (!f) throw ot::ParseError("cannot open " + path + " for writing");
    }
    ~CsvFile() {
        if (f) std::fclose(f);
    }
    CsvFile(const CsvFile&) = delete;
    CsvFile& operator=(const CsvFile&) = delete;
    void line(const std::string& s) { std::fprintf(f, "%s\n", s.c_str()); }
    void raw(const char* format, ...) {
        va_list ap;
        va_start(ap, format);
        std::vfprintf(f, format, ap);
        va_end(ap);
    }
};

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ot::ParseError("cannot create directory " + dir + ": " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

// ---------------------------------------------------------------- wasserstein

int cmd_wasserstein(const std::string& src, const std::string& tgt, const std::string& plan_out) {
    const auto a = ot::DiscreteMeasure::from_particles(ot::load_particles(src));
    const auto b = ot::DiscreteMeasure::from_particles(ot::load_particles(tgt));
    const auto plan = ot::solve_plan(a, b);
    std::printf("W=%s\n", fmt(std::sqrt(plan.cost)).c_str());
    if (!plan_out.empty()) {
        CsvFile csv(plan_out);
        csv.line("i,j,mass");
        for (const auto& e : plan.coupling) csv.raw("%d,%d,%.17g\n", e.i, e.j, e.mass);
    }
    return 0;
}

// ------------------------------------------------------- gauss-map/interpolate

int cmd_gauss_map(const std::string& src, const std::string& tgt, std::optional<double> s) {
    const auto gs = ot::load_gaussian(src);
    const auto gt = ot::load_gaussian(tgt);
    const auto map = ot::gaussian_brenier_map(gs, gt);
    std::printf("%s\n", ot::affine_to_json(map).dump(2).c_str());
    if (s) std::printf("%s\n", ot::gaussian_to_json(ot::displacement_interpolate(gs, gt, *s)).dump(2).c_str());
    return 0;
}

int cmd_interpolate(const std::string& src, const std::string& tgt, int steps,
                    const std::string& out_dir) {
    const auto gs = ot::load_gaussian(src);
    const auto gt = ot::load_gaussian(tgt);
    if (!out_dir.empty()) ensure_dir(out_dir);

    json all = json::array();
    std::string csv_body = "s,W_from_src,W_to_tgt\n";
    for (int i = 0; i <= steps; ++i) {
        const double s = static_cast<double>(i) / steps;
        const auto g = ot::displacement_interpolate(gs, gt, s);
        char row[160];
        std::snprintf(row, sizeof row, "%.17g,%.17g,%.17g\n", s, ot::gaussian_wasserstein(gs, g),
                      ot::gaussian_wasserstein(g, gt));
        csv_body += row;
        if (out_dir.empty()) {
            all.push_back(ot::gaussian_to_json(g));
        } else {
            char name[32];
            std::snprintf(name, sizeof name, "gaussian_%03d.json", i);
            ot::save_gaussian(g, join_path(out_dir, name));
        }
    }
    if (out_dir.empty()) {
        std::printf("%s\n%s", all.dump(2).c_str(), csv_body.c_str());
    } else {
        ot::write_text(join_path(out_dir, "path.csv"), csv_body);
    }
    return 0;
}

// ------------------------------------------------------------------- feedback

int cmd_feedback(const std::string& sys_path, const std::vector<std::string>& pdf_paths,
                 const std::string& free_pair_path) {
    if (pdf_paths.size() < 2) throw ot::ParseError("--pdfs needs at least two files");
    auto systems = ot::load_lti_systems(sys_path);
    std::vector<ot::GaussianDensity> pdfs;
    pdfs.reserve(pdf_paths.size());
    for (const auto& p : pdf_paths) pdfs.push_back(ot::load_gaussian(p));
    const std::size_t horizons = pdfs.size() - 1;
    if (systems.size() == 1 && horizons > 1) systems.assign(horizons, systems.front());
    if (systems.size() != horizons)
        throw ot::DimensionMismatch("system count must be 1 or match the number of horizons");
    std::optional<ot::FreePair> fp;
    if (!free_pair_path.empty()) fp = ot::load_free_pair(free_pair_path);

    json laws = json::array();
    std::string table = "horizon,feasible,residual_mat,residual_vec\n";
    bool any_infeasible = false;
    for (std::size_t h = 0; h < horizons; ++h) {
        const auto rep = ot::check_feasibility(systems[h], pdfs[h], pdfs[h + 1]);
        if (rep.feasible) {
            const auto law = ot::synthesize(systems[h], pdfs[h], pdfs[h + 1], fp);
            laws.push_back({{"K", ot::mat_to_json(law.k_mat)}, {"kappa", ot::vec_to_json(law.kappa)}});
        } else {
            laws.push_back(nullptr);
            any_infeasible = true;
        }
        char row[128];
        std::snprintf(row, sizeof row, "%zu,%d,%.17g,%.17g\n", h, rep.feasible ? 1 : 0,
                      rep.residual_mat, rep.residual_vec);
        table += row;
    }
    std::printf("%s\n%s", laws.dump(2).c_str(), table.c_str());
    return any_infeasible ? 2 : 0;
}

// ------------------------------------------------------------------- bb-solve

void write_bb_outputs(const ot::BbSolution& sol, const std::string& dir) {
    ensure_dir(dir);
    const auto& grid = sol.field.space;
    const int T = sol.field.time_steps;
    const std::size_t n = grid.cell_count();
    for (int t = 0; t <= T; ++t) {
        ot::GridDensity slice = grid;
        slice.values.assign(sol.field.phi[t].data(), sol.field.phi[t].data() + n);
        char name[32];
        std::snprintf(name, sizeof name, "slice_%03d.json", t);
        ot::save_grid(slice, join_path(dir, name));

        const auto vel = ot::extract_velocity(sol, static_cast<double>(t) / T);
        std::snprintf(name, sizeof name, "velocity_%03d.csv", t);
        CsvFile csv(join_path(dir, name));
        std::string header;
        for (int k = 0; k < grid.dim; ++k) header += "i" + std::to_string(k + 1) + ",";
        for (int k = 0; k < grid.dim; ++k)
            header += "v" + std::to_string(k + 1) + (k + 1 < grid.dim ? "," : "");
        csv.line(header);
        std::vector<int> idx(grid.dim);
        for (std::size_t c = 0; c < n; ++c) {
            std::size_t rest = c;
            for (int k = grid.dim - 1; k >= 0; --k) {
                idx[k] = static_cast<int>(rest % grid.shape[k]);
                rest /= grid.shape[k];
            }
            for (int k = 0; k < grid.dim; ++k) csv.raw("%d,", idx[k]);
            for (int k = 0; k < grid.dim; ++k)
                csv.raw("%.17g%s", vel.v(c, k), k + 1 < grid.dim ? "," : "\n");
        }
    }
}

json bb_summary(const ot::BbSolution& sol) {
    return {{"energy", sol.energy},
            {"W", std::sqrt(std::max(sol.energy, 0.0))},
            {"iterations", sol.iterations},
            {"continuity_residual", sol.continuity_residual},
            {"converged", sol.converged}};
}

int cmd_bb_solve(const std::string& src, const std::string& tgt, int time_steps, double tol,
                 int max_iter, const std::string& out_dir, bool verbose) {
    const auto a = ot::load_grid(src);
    const auto b = ot::load_grid(tgt);
    ot::SolverParams params;
    params.tol = tol;
    params.max_iter = max_iter;
    params.verbose = verbose;
    ot::BbSolution sol;
    try {
        sol = ot::bb_solve(a, b, time_steps, params);
    } catch (const ot::NotConverged& e) {
        std::fprintf(stderr, "warning: %s\n", e.what());
        sol = e.partial;
    }
    write_bb_outputs(sol, out_dir);
    ot::write_text(join_path(out_dir, "summary.json"), bb_summary(sol).dump(2) + "\n");
    std::printf("energy=%s W=%s iterations=%d converged=%d\n", fmt(sol.energy).c_str(),
                fmt(std::sqrt(std::max(sol.energy, 0.0))).c_str(), sol.iterations,
                sol.converged ? 1 : 0);
    return sol.converged ? 0 : 2;
}

// ------------------------------------------------------------------ propagate

ot::VectorFieldSpec make_field(const std::string& name, const std::vector<double>& params,
                               int dim) {
    if (name == "duffing") {
        if (params.size() != 3) throw ot::ParseError("--field duffing takes --params alpha,beta,delta");
        return ot::VectorFieldSpec::duffing(params[0], params[1], params[2]);
    }
    if (static_cast<int>(params.size()) != dim * dim + dim)
        throw ot::ParseError("--field affine takes --params with d*d matrix entries then d offsets");
    Eigen::MatrixXd m(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int k = 0; k < dim; ++k) m(i, k) = params[i * dim + k];
    Eigen::VectorXd b(dim);
    for (int i = 0; i < dim; ++i) b[i] = params[dim * dim + i];
    return ot::VectorFieldSpec::affine(m, b);
}

ot::ParticleEnsemble make_init(const std::string& spec, int dim, int n, std::uint64_t seed) {
    if (spec.rfind("csv:", 0) == 0) return ot::load_particles(spec.substr(4));
    if (spec.rfind("uniform:", 0) != 0)
        throw ot::ParseError("--init must be uniform:lo,hi or csv:path");
    double lo = 0.0, hi = 0.0;
    if (std::sscanf(spec.c_str() + 8, "%lf,%lf", &lo, &hi) != 2 || hi <= lo)
        throw ot::ParseError("--init uniform takes lo,hi with hi > lo");
    if (n < 1) throw ot::ParseError("--n must be positive");
    ot::ParticleEnsemble ens;
    ens.dim = dim;
    ens.points.resize(n, dim);
    ot::RandomStream rng(seed);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < dim; ++k) ens.points(i, k) = rng.uniform(lo, hi);
    ens.weights = Eigen::VectorXd::Constant(n, 1.0 / n);
    ens.density_values = Eigen::VectorXd::Constant(n, std::pow(1.0 / (hi - lo), dim));
    return ens;
}

std::vector<double> parse_times(const std::string& s) {
    std::vector<double> out;
    if (s.find(':') != std::string::npos) {
        double start = 0.0, step = 0.0, stop = 0.0;
        if (std::sscanf(s.c_str(), "%lf:%lf:%lf", &start, &step, &stop) != 3 || step <= 0.0)
            throw ot::ParseError("--times must be start:step:stop with step > 0");
        for (int i = 0;; ++i) {
            const double t = start + i * step;
            if (t > stop + 1e-9 * step) break;
            out.push_back(t);
        }
    } else {
        const char* p = s.c_str();
        char* end = nullptr;
        while (*p) {
            const double t = std::strtod(p, &end);
            if (end == p) throw ot::ParseError("cannot parse --times entry near '" + std::string(p) + "'");
            out.push_back(t);
            p = (*end == ',') ? end + 1 : end;
        }
    }
    if (out.empty()) throw ot::ParseError("--times is empty");
    double prev = 0.0;
    for (double t : out) {
        if (t <= prev) throw ot::ParseError("--times must be positive and strictly increasing");
        prev = t;
    }
    return out;
}

int cmd_propagate(const std::string& field_name, const std::vector<double>& params, int dim,
                  const std::string& init, int n, std::uint64_t seed, const std::string& times_str,
                  const std::string& out_dir, const std::vector<double>& kinetic, int steps,
                  bool verbose) {
    const auto field = make_field(field_name, params, dim);
    const auto init_ens = make_init(init, field.dim(), n, seed);
    if (init_ens.dim != field.dim())
        throw ot::DimensionMismatch("initial ensemble dimension does not match the field");

    const auto steps_for = [&](double dt) { return steps > 0 ? steps : ot::default_steps(dt); };
    if (!times_str.empty()) {
        const auto times = parse_times(times_str);
        ensure_dir(out_dir);
        const int width = times.size() >= 100 ? 3 : 2;
        auto ens = init_ens;
        double t_prev = 0.0;
        for (std::size_t i = 0; i < times.size(); ++i) {
            ens = ot::propagate(field, ens, t_prev, times[i], steps_for(times[i] - t_prev));
            t_prev = times[i];
            char name[32];
            std::snprintf(name, sizeof name, "eta_%0*zu.csv", width, i + 1);
            ot::save_particles(ens, join_path(out_dir, name));
            if (verbose) std::fprintf(stderr, "t=%g -> %s\n", times[i], name);
        }
    }
    if (!kinetic.empty()) {
        const double t0 = kinetic[0], t1 = kinetic[1];
        if (!(t0 >= 0.0 && t1 > t0)) throw ot::ParseError("--kinetic needs 0 <= t0 < t1");
        auto ens = init_ens;
        if (t0 > 0.0) ens = ot::propagate(field, ens, 0.0, t0, steps_for(t0));
        const double e = ot::path_kinetic_energy(field, ens, t0, t1, steps_for(t1 - t0));
        std::printf("kinetic=%s\n", fmt(e).c_str());
    }
    return 0;
}

// --------------------------------------------------------------------- refine

std::string refine_csv_header(int p) {
    std::string h = "j,s";
    for (int i = 0; i < p; ++i) h += ",mean" + std::to_string(i + 1);
    for (int i = 0; i < p; ++i)
        for (int k = 0; k < p; ++k) h += ",cov" + std::to_string(i + 1) + std::to_string(k + 1);
    return h + ",W_from_model";
}

std::string refine_csv_row(int j, double s, const ot::GaussianDensity& g, double w) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%d,%.17g", j, s);
    std::string row = buf;
    for (int i = 0; i < g.dim(); ++i) {
        std::snprintf(buf, sizeof buf, ",%.17g", g.mean[i]);
        row += buf;
    }
    for (int i = 0; i < g.dim(); ++i)
        for (int k = 0; k < g.dim(); ++k) {
            std::snprintf(buf, sizeof buf, ",%.17g", g.cov(i, k));
            row += buf;
        }
    std::snprintf(buf, sizeof buf, ",%.17g", w);
    return row + buf;
}

int cmd_refine(const std::string& truth_path, const std::string& model_path,
               const std::vector<int>& js, int path_samples, bool chained,
               const std::string& out_dir) {
    const auto truth = ot::load_linear_model(truth_path);
    const auto model = ot::load_linear_model(model_path);
    if (js.empty()) throw ot::ParseError("--j needs at least one instant");
    if (path_samples < 2) throw ot::ParseError("--path-samples must be at least 2");
    if (!out_dir.empty()) ensure_dir(out_dir);

    const int p = static_cast<int>(model.c_mat.rows());
    std::string csv_body = refine_csv_header(p) + "\n";
    json corrections = json::array();
    std::optional<ot::AffineMap> carry;
    for (int j : js) {
        auto pred_m = ot::predict_output_gaussian(model, j);
        if (chained && carry) pred_m = ot::push_gaussian(*carry, pred_m);
        const auto pred_t = ot::predict_output_gaussian(truth, j);
        const auto map = ot::gaussian_brenier_map(pred_m, pred_t);
        if (chained) carry = map;

        json cj = ot::affine_to_json(map);
        cj["j"] = j;
        corrections.push_back(cj);
        if (!out_dir.empty())
            ot::write_text(join_path(out_dir, "correction_j" + std::to_string(j) + ".json"),
                           cj.dump(2) + "\n");

        for (int i = 0; i < path_samples; ++i) {
            const double s = static_cast<double>(i) / (path_samples - 1);
            const auto g = chained ? ot::displacement_interpolate(pred_m, pred_t, s)
                                   : ot::refinement_path(truth, model, j, s);
            csv_body += refine_csv_row(j, s, g, ot::gaussian_wasserstein(pred_m, g)) + "\n";
        }
    }
    if (out_dir.empty()) {
        std::printf("%s\n%s", corrections.dump(2).c_str(), csv_body.c_str());
    } else {
        ot::write_text(join_path(out_dir, "refine_path.csv"), csv_body);
    }
    return 0;
}

int cmd_refine_empirical(const std::string& pred_path, const std::string& meas_path,
                         const std::string& out_path) {
    const auto pred = ot::load_particles(pred_path);
    const auto meas = ot::load_particles(meas_path);
    const auto ref = ot::refine_empirical(pred, meas);
    CsvFile csv(out_path);
    const int d = static_cast<int>(ref.support.cols());
    std::string header;
    for (int k = 0; k < d; ++k) header += "x" + std::to_string(k + 1) + ",";
    for (int k = 0; k < d; ++k) header += "y" + std::to_string(k + 1) + (k + 1 < d ? "," : "");
    csv.line(header);
    for (Eigen::Index i = 0; i < ref.support.rows(); ++i) {
        for (int k = 0; k < d; ++k) csv.raw("%.17g,", ref.support(i, k));
        for (int k = 0; k < d; ++k) csv.raw("%.17g%s", ref.displaced(i, k), k + 1 < d ? "," : "\n");
    }
    return 0;
}

// ------------------------------------------------------------------ reproduce

json make_check(const std::string& name, bool pass, double value, double tolerance) {
    return {{"name", name}, {"pass", pass}, {"value", value}, {"tolerance", tolerance}};
}

int finish_report(const std::string& out_dir, const std::string& experiment, const json& checks) {
    bool all_pass = true;
    for (const auto& c : checks) all_pass = all_pass && c.at("pass").get<bool>();
    const json report = {{"experiment", experiment}, {"checks", checks}};
    ot::write_text(join_path(out_dir, "report.json"), report.dump(2) + "\n");
    for (const auto& c : checks)
        std::printf("[%s] %s value=%s tolerance=%s\n",
                    c.at("pass").get<bool>() ? "PASS" : "FAIL",
                    c.at("name").get<std::string>().c_str(),
                    fmt(c.at("value").get<double>()).c_str(),
                    fmt(c.at("tolerance").get<double>()).c_str());
    std::printf("report: %s\n", join_path(out_dir, "report.json").c_str());
    return all_pass ? 0 : 2;
}

// The scattered-data interpolation paints a support halo around boundary
// particles; the dynamic solver wants the outer band empty.
ot::GridDensity trim_band(ot::GridDensity g, int band) {
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
        std::size_t rest = c;
        bool outer = false;
        for (int k = g.dim - 1; k >= 0; --k) {
            const int i = static_cast<int>(rest % g.shape[k]);
            rest /= g.shape[k];
            outer = outer || i < band || i >= g.shape[k] - band;
        }
        if (outer) g.values[c] = 0.0;
    }
    return ot::normalize(g);
}

ot::GridDensity grid_pair_member(const ot::ParticleEnsemble& a, const ot::ParticleEnsemble& b,
                                 const ot::ParticleEnsemble& which, int cells_per_axis) {
    std::vector<double> lo(a.dim), hi(a.dim);
    for (int k = 0; k < a.dim; ++k) {
        const double mn = std::min(a.points.col(k).minCoeff(), b.points.col(k).minCoeff());
        const double mx = std::max(a.points.col(k).maxCoeff(), b.points.col(k).maxCoeff());
        const double pad = 0.10 * std::max(mx - mn, 1e-6);
        lo[k] = mn - pad;
        hi[k] = mx + pad;
    }
    return trim_band(
        ot::grid_from_particles(which, lo, hi, std::vector<int>(a.dim, cells_per_axis)), 3);
}

int cmd_reproduce_duffing(const std::string& out_dir, std::uint64_t seed, bool verbose) {
    ensure_dir(out_dir);
    std::vector<double> horizons;
    for (int j = 1; j <= 10; ++j) horizons.push_back(0.5 * j);
    const auto snaps = ot::duffing_dataset(500, seed, horizons);
    for (std::size_t i = 0; i < snaps.size(); ++i) {
        char name[24];
        std::snprintf(name, sizeof name, "eta_%02zu.csv", i + 1);
        ot::save_particles(snaps[i], join_path(out_dir, name));
    }

    json checks = json::array();

    const double factor = std::exp(0.25);
    double mult_dev = 0.0;
    for (std::size_t k = 0; k < snaps.size(); ++k) {
        const Eigen::VectorXd prev = k == 0 ? Eigen::VectorXd::Constant(500, 1.0 / 16.0)
                                            : *snaps[k - 1].density_values;
        const Eigen::VectorXd ratio = snaps[k].density_values->cwiseQuotient(prev);
        mult_dev = std::max(mult_dev, (ratio.array() - factor).abs().maxCoeff());
    }
    checks.push_back(make_check("liouville_density_multiplier", mult_dev <= 1e-9, mult_dev, 1e-9));

    const auto field = ot::VectorFieldSpec::duffing(1.0, -1.0, 0.5);
    ot::SolverParams params;
    params.verbose = verbose;
    struct Segment {
        const char* name;
        int a, b; // snapshot indices
    };
    const Segment segments[] = {{"eta1_eta2", 0, 1}, {"eta8_eta9", 7, 8}};
    std::string action_csv =
        "segment,t_start,t_end,bb_energy,bb_w,path_action,path_action_rescaled\n";
    double mass_dev = 0.0;
    std::vector<ot::BbSolution> sols;
    std::vector<ot::GridDensity> src_grids;
    for (const auto& seg : segments) {
        const auto ga = grid_pair_member(snaps[seg.a], snaps[seg.b], snaps[seg.a], 64);
        const auto gb = grid_pair_member(snaps[seg.a], snaps[seg.b], snaps[seg.b], 64);
        ot::BbSolution sol;
        try {
            sol = ot::bb_solve(ga, gb, 16, params);
        } catch (const ot::NotConverged& e) {
            std::fprintf(stderr, "warning: %s: %s\n", seg.name, e.what());
            sol = e.partial;
        }
        const std::string seg_dir = join_path(out_dir, seg.name);
        write_bb_outputs(sol, seg_dir);
        ot::write_text(join_path(seg_dir, "summary.json"), bb_summary(sol).dump(2) + "\n");

        const double t0 = horizons[seg.a], t1 = horizons[seg.b], dt = t1 - t0;
        const double action =
            ot::path_kinetic_energy(field, snaps[seg.a], t0, t1, ot::default_steps(dt));
        char row[256];
        std::snprintf(row, sizeof row, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", seg.name, t0,
                      t1, sol.energy, std::sqrt(std::max(sol.energy, 0.0)), action, action * dt);
        action_csv += row;

        checks.push_back(make_check(std::string("bb_converged_") + seg.name, sol.converged,
                                    sol.continuity_residual, params.tol));
        const double ratio = action * dt / sol.energy;
        const double required = seg.a == 0 ? 1.1 : 1.0;
        checks.push_back(
            make_check(std::string("action_energy_ratio_") + seg.name, ratio >= required, ratio,
                       required));
        const double vol = sol.field.space.cell_volume();
        for (const auto& phi : sol.field.phi)
            mass_dev = std::max(mass_dev, std::abs(phi.sum() * vol - 1.0));
        sols.push_back(sol);
        src_grids.push_back(ga);
    }
    checks.push_back(make_check("slice_mass_drift", mass_dev <= 1e-3, mass_dev, 1e-3));
    ot::write_text(join_path(out_dir, "energy_vs_action.csv"), action_csv);

    std::string profile_csv = "s,W_from_eta1\n";
    for (const auto& [s, w] : ot::geodesic_w_profile(sols[0], src_grids[0], 6)) {
        char row[80];
        std::snprintf(row, sizeof row, "%.17g,%.17g\n", s, w);
        profile_csv += row;
    }
    ot::write_text(join_path(out_dir, "w_profile_eta1_eta2.csv"), profile_csv);

    return finish_report(out_dir, "duffing", checks);
}

int cmd_reproduce_refine_linear(const std::string& out_dir) {
    ensure_dir(out_dir);
    ot::LinearGaussianModel truth, model;
    truth.a_mat = (Eigen::MatrixXd(2, 2) << 0.4, -0.1, 2.0, 0.6).finished();
    truth.c_mat = (Eigen::MatrixXd(2, 2) << -1.0, 0.03, -0.2, 0.8).finished();
    model.a_mat = (Eigen::MatrixXd(2, 2) << 0.2, -0.7, -0.7, 0.1).finished();
    model.c_mat = Eigen::MatrixXd::Identity(2, 2);
    truth.initial.mean = Eigen::Vector2d(1.0, 3.0);
    truth.initial.cov = (Eigen::MatrixXd(2, 2) << 10.0, 6.0, 6.0, 7.0).finished();
    model.initial = truth.initial;

    json checks = json::array();
    std::string csv_body = refine_csv_header(2) + "\n";
    double endpoint_dev = 0.0, min_eig = std::numeric_limits<double>::infinity();
    for (int j = 1; j <= 3; ++j) {
        const auto ref = ot::refine_gaussian(truth, model, j);
        json cj = ot::affine_to_json(*ref.correction);
        cj["j"] = j;
        ot::write_text(join_path(out_dir, "correction_j" + std::to_string(j) + ".json"),
                       cj.dump(2) + "\n");

        const auto pred_m = ot::predict_output_gaussian(model, j);
        const auto pred_t = ot::predict_output_gaussian(truth, j);
        const double w_total = ot::gaussian_wasserstein(pred_m, pred_t);
        double lin_dev = 0.0;
        for (int i = 0; i <= 10; ++i) {
            const double s = 0.1 * i;
            const auto g = ot::refinement_path(truth, model, j, s);
            const double w = ot::gaussian_wasserstein(pred_m, g);
            csv_body += refine_csv_row(j, s, g, w) + "\n";
            // s = 0 and s = 1 are covered by the moment check below; W(g, g)
            // itself bottoms out at sqrt(cancellation noise).
            if (i > 0 && i < 10) lin_dev = std::max(lin_dev, std::abs(w - s * w_total));
            min_eig = std::min(min_eig,
                               Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g.cov)
                                   .eigenvalues()
                                   .minCoeff());
            if (i == 0 || i == 10) {
                const auto& want = i == 0 ? pred_m : pred_t;
                const double scale = 1.0 + want.mean.norm() + want.cov.norm();
                endpoint_dev = std::max(endpoint_dev, (g.mean - want.mean).norm() / scale);
                endpoint_dev = std::max(endpoint_dev, (g.cov - want.cov).norm() / scale);
            }
        }
        checks.push_back(make_check("w_linearity_j" + std::to_string(j),
                                    lin_dev <= 1e-8 * w_total, lin_dev / w_total, 1e-8));
    }
    checks.push_back(make_check("path_endpoints", endpoint_dev <= 1e-9, endpoint_dev, 1e-9));
    checks.push_back(make_check("pd_along_path", min_eig > 0.0, min_eig, 0.0));
    ot::write_text(join_path(out_dir, "refine_path.csv"), csv_body);
    return finish_report(out_dir, "refine-linear", checks);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"otkit: optimal transport tools for densities, Gaussians and grids"};
    app.require_subcommand(1);
    int threads = 0;
    bool verbose = false;
    app.add_option("--threads", threads, "worker thread cap, 0 = all cores")
        ->capture_default_str();
    app.add_flag("-v,--verbose", verbose, "progress messages on stderr");

    int rc = 0;

    auto* w = app.add_subcommand("wasserstein", "exact W between two particle CSV files");
    std::string w_src, w_tgt, w_plan;
    w->add_option("--src", w_src, "source particle CSV")->required()->check(CLI::ExistingFile);
    w->add_option("--tgt", w_tgt, "target particle CSV")->required()->check(CLI::ExistingFile);
    w->add_option("--plan", w_plan, "write the optimal plan as CSV i,j,mass");

    auto* gm = app.add_subcommand("gauss-map", "closed-form transport map between two Gaussians");
    std::string gm_src, gm_tgt;
    double gm_s = 0.0;
    bool gm_has_s = false;
    gm->add_option("--src", gm_src, "source Gaussian JSON")->required()->check(CLI::ExistingFile);
    gm->add_option("--tgt", gm_tgt, "target Gaussian JSON")->required()->check(CLI::ExistingFile);
    auto* gm_s_opt = gm->add_option("--s", gm_s, "also print the intermediate Gaussian at s");

    auto* ip = app.add_subcommand("interpolate", "displacement interpolation between two Gaussians");
    std::string ip_src, ip_tgt, ip_out;
    int ip_steps = 10;
    ip->add_option("--src", ip_src, "source Gaussian JSON")->required()->check(CLI::ExistingFile);
    ip->add_option("--tgt", ip_tgt, "target Gaussian JSON")->required()->check(CLI::ExistingFile);
    ip->add_option("--steps", ip_steps, "number of segments, emits steps+1 Gaussians")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    ip->add_option("--out", ip_out, "write gaussian_###.json and path.csv here instead of stdout");

    auto* fb = app.add_subcommand("feedback", "state-feedback synthesis steering Gaussian densities");
    std::string fb_sys, fb_fp;
    std::vector<std::string> fb_pdfs;
    fb->add_option("--system", fb_sys, "plant JSON {\"A\",\"B\"} or a list for time-varying plants")
        ->required()
        ->check(CLI::ExistingFile);
    fb->add_option("--pdfs", fb_pdfs, "Gaussian JSON waypoints, at least two")
        ->required()
        ->check(CLI::ExistingFile);
    fb->add_option("--free-pair", fb_fp, "degrees-of-freedom JSON {\"R\",\"r\"}")
        ->check(CLI::ExistingFile);

    auto* bb = app.add_subcommand("bb-solve", "dynamic transport between two grid densities");
    std::string bb_src, bb_tgt, bb_out;
    int bb_t = 16, bb_max_iter = 20000;
    double bb_tol = 1e-3;
    bb->add_option("--src", bb_src, "source GridDensity JSON")->required()->check(CLI::ExistingFile);
    bb->add_option("--tgt", bb_tgt, "target GridDensity JSON")->required()->check(CLI::ExistingFile);
    bb->add_option("--time-steps", bb_t, "time subdivisions")->capture_default_str();
    bb->add_option("--tol", bb_tol, "relative continuity residual target")->capture_default_str();
    bb->add_option("--max-iter", bb_max_iter, "iteration cap")->capture_default_str();
    bb->add_option("--out", bb_out, "output directory")->required();

    auto* pr = app.add_subcommand("propagate", "push an ensemble through a vector field");
    std::string pr_field = "duffing", pr_init = "uniform:-2,2", pr_times, pr_out;
    std::vector<double> pr_params{1.0, -1.0, 0.5}, pr_kinetic;
    int pr_dim = 2, pr_n = 500, pr_steps = 0;
    std::uint64_t pr_seed = 42;
    pr->add_option("--field", pr_field, "vector field kind")
        ->check(CLI::IsMember({"duffing", "affine"}))
        ->capture_default_str();
    pr->add_option("--params", pr_params,
                   "duffing: alpha,beta,delta; affine: row-major matrix then offset")
        ->delimiter(',')
        ->capture_default_str();
    pr->add_option("--dim", pr_dim, "state dimension (affine fields)")->capture_default_str();
    pr->add_option("--init", pr_init, "uniform:lo,hi box or csv:path ensemble")
        ->capture_default_str();
    pr->add_option("--n", pr_n, "particles drawn for uniform init")->capture_default_str();
    pr->add_option("--seed", pr_seed, "RNG seed")->capture_default_str();
    auto* pr_times_opt = pr->add_option("--times", pr_times, "snapshot times start:step:stop or comma list");
    auto* pr_out_opt = pr->add_option("--out", pr_out, "directory for eta_##.csv snapshots");
    pr_times_opt->needs(pr_out_opt);
    pr->add_option("--steps", pr_steps, "RK4 steps per horizon, 0 = 100 per unit time")
        ->capture_default_str();
    pr->add_option("--kinetic", pr_kinetic, "print path kinetic energy over [t0, t1]")
        ->expected(2);

    auto* rf = app.add_subcommand("refine", "closed-form output refinement of a linear Gaussian model");
    std::string rf_truth, rf_model, rf_out;
    std::vector<int> rf_js;
    int rf_samples = 11;
    bool rf_chained = false;
    rf->add_option("--truth", rf_truth, "measured plant JSON {\"A\",\"C\",\"mean0\",\"P0\"}")
        ->required()
        ->check(CLI::ExistingFile);
    rf->add_option("--model", rf_model, "baseline model JSON, same keys")
        ->required()
        ->check(CLI::ExistingFile);
    rf->add_option("--j", rf_js, "measurement instants")->required();
    rf->add_option("--path-samples", rf_samples, "samples along each refinement path")
        ->capture_default_str();
    rf->add_flag("--chained", rf_chained,
                 "apply each correction to later predictions (off: per-instant corrections)");
    rf->add_option("--out", rf_out, "write correction_j#.json and refine_path.csv here");

    auto* re = app.add_subcommand("refine-empirical", "point-map correction between sampled outputs");
    std::string re_pred, re_meas, re_out;
    re->add_option("--pred", re_pred, "predicted particle CSV")->required()->check(CLI::ExistingFile);
    re->add_option("--meas", re_meas, "measured particle CSV")->required()->check(CLI::ExistingFile);
    re->add_option("--out", re_out, "output map CSV x...,y...")->required();

    auto* rp = app.add_subcommand("reproduce", "run a packaged experiment end to end");
    std::string rp_exp, rp_out = "reproduce_out";
    std::uint64_t rp_seed = 42;
    rp->add_option("experiment", rp_exp, "duffing or refine-linear")
        ->required()
        ->check(CLI::IsMember({"duffing", "refine-linear"}));
    rp->add_option("--out", rp_out, "output directory")->capture_default_str();
    rp->add_option("--seed", rp_seed, "RNG seed (duffing)")->capture_default_str();

    for (CLI::App* sub : {w, gm, ip, fb, bb, pr, rf, re, rp}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 64;
    }

    try {
        ot::set_threads(threads);
        if (w->parsed()) {
            rc = cmd_wasserstein(w_src, w_tgt, w_plan);
        } else if (gm->parsed()) {
            gm_has_s = gm_s_opt->count() > 0;
            rc = cmd_gauss_map(gm_src, gm_tgt, gm_has_s ? std::optional<double>(gm_s) : std::nullopt);
        } else if (ip->parsed()) {
            rc = cmd_interpolate(ip_src, ip_tgt, ip_steps, ip_out);
        } else if (fb->parsed()) {
            rc = cmd_feedback(fb_sys, fb_pdfs, fb_fp);
        } else if (bb->parsed()) {
            rc = cmd_bb_solve(bb_src, bb_tgt, bb_t, bb_tol, bb_max_iter, bb_out, verbose);
        } else if (pr->parsed()) {
            rc = cmd_propagate(pr_field, pr_params, pr_dim, pr_init, pr_n, pr_seed, pr_times,
                               pr_out, pr_kinetic, pr_steps, verbose);
        } else if (rf->parsed()) {
            rc = cmd_refine(rf_truth, rf_model, rf_js, rf_samples, rf_chained, rf_out);
        } else if (re->parsed()) {
            rc = cmd_refine_empirical(re_pred, re_meas, re_out);
        } else if (rp->parsed()) {
            rc = rp_exp == "duffing" ? cmd_reproduce_duffing(rp_out, rp_seed, verbose)
                                     : cmd_reproduce_refine_linear(rp_out);
        }
    } catch (const ot::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 70;
    }
    return rc;
}
