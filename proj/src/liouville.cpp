#include "ot/liouville.hpp"

#include <cmath>

#include "ot/error.hpp"
#include "ot/parallel.hpp"
#include "ot/rng.hpp"

namespace ot {

VectorFieldSpec VectorFieldSpec::duffing(double alpha, double beta, double delta) {
    if (!std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(delta))
        throw ParseError("duffing parameters must be finite");
    VectorFieldSpec f;
    f.kind = Kind::duffing;
    f.alpha = alpha;
    f.beta = beta;
    f.delta = delta;
    return f;
}

VectorFieldSpec VectorFieldSpec::affine(Eigen::MatrixXd m, Eigen::VectorXd b) {
    if (m.rows() != m.cols() || m.rows() != b.size())
        throw DimensionMismatch("affine field needs square matrix and matching vector");
    VectorFieldSpec f;
    f.kind = Kind::affine;
    f.mat = std::move(m);
    f.vec = std::move(b);
    return f;
}

VectorFieldSpec VectorFieldSpec::tabulated(GridDensity geometry,
                                           std::vector<std::vector<double>> components) {
    geometry.validate_geometry();
    if ((int)components.size() != geometry.dim)
        throw DimensionMismatch("need one velocity component per axis");
    for (const auto& c : components)
        if (c.size() != geometry.cell_count())
            throw DimensionMismatch("velocity component size does not match grid");
    VectorFieldSpec f;
    f.kind = Kind::tabulated;
    f.geometry = std::move(geometry);
    f.components = std::move(components);
    return f;
}

int VectorFieldSpec::dim() const {
    switch (kind) {
    case Kind::duffing: return 2;
    case Kind::affine: return (int)mat.rows();
    case Kind::tabulated: return geometry.dim;
    }
    return 0;
}

namespace {

// Multilinear interpolation on the cell-center lattice; constant extension
// inside the outer half-cell.
double interp_component(const GridDensity& g, const std::vector<double>& vals,
                        const Eigen::VectorXd& x) {
    const int d = g.dim;
    int base[8];
    double frac[8];
    for (int k = 0; k < d; ++k) {
        double h = (g.hi[(size_t)k] - g.lo[(size_t)k]) / g.shape[(size_t)k];
        double s = (x(k) - g.lo[(size_t)k]) / h - 0.5;
        int n = g.shape[(size_t)k];
        int i0 = (int)std::floor(s);
        double fr = s - i0;
        if (i0 < 0) {
            i0 = 0;
            fr = 0.0;
        }
        if (i0 > n - 2) {
            i0 = n >= 2 ? n - 2 : 0;
            fr = n >= 2 ? 1.0 : 0.0;
        }
        base[k] = i0;
        frac[k] = fr;
    }
    double out = 0.0;
    for (int corner = 0; corner < (1 << d); ++corner) {
        double w = 1.0;
        int flat = 0;
        for (int k = 0; k < d; ++k) {
            int bit = (corner >> k) & 1;
            int nk = g.shape[(size_t)k];
            int idx = std::min(base[k] + bit, nk - 1);
            w *= bit ? frac[k] : 1.0 - frac[k];
            flat = flat * nk + idx;
        }
        out += w * vals[(size_t)flat];
    }
    return out;
}

void check_domain(const GridDensity& g, const Eigen::VectorXd& x) {
    for (int k = 0; k < g.dim; ++k)
        if (x(k) < g.lo[(size_t)k] || x(k) > g.hi[(size_t)k])
            throw OutOfDomain("point leaves the tabulated field domain");
}

} // namespace

Eigen::VectorXd eval_field(const VectorFieldSpec& f, const Eigen::VectorXd& x, double t) {
    (void)t;
    switch (f.kind) {
    case VectorFieldSpec::Kind::duffing: {
        if (x.size() != 2) throw DimensionMismatch("duffing field is planar");
        Eigen::VectorXd v(2);
        v(0) = x(1);
        v(1) = -f.alpha * x(0) * x(0) * x(0) - f.beta * x(0) - f.delta * x(1);
        return v;
    }
    case VectorFieldSpec::Kind::affine: {
        if (x.size() != f.mat.rows()) throw DimensionMismatch("affine field dimension mismatch");
        return f.mat * x + f.vec;
    }
    case VectorFieldSpec::Kind::tabulated: {
        if (x.size() != f.geometry.dim) throw DimensionMismatch("field dimension mismatch");
        check_domain(f.geometry, x);
        Eigen::VectorXd v(f.geometry.dim);
        for (int k = 0; k < f.geometry.dim; ++k)
            v(k) = interp_component(f.geometry, f.components[(size_t)k], x);
        return v;
    }
    }
    throw Error("unknown field kind");
}

double divergence(const VectorFieldSpec& f, const Eigen::VectorXd& x) {
    switch (f.kind) {
    case VectorFieldSpec::Kind::duffing: return -f.delta;
    case VectorFieldSpec::Kind::affine: return f.mat.trace();
    case VectorFieldSpec::Kind::tabulated: {
        check_domain(f.geometry, x);
        double div = 0.0;
        for (int k = 0; k < f.geometry.dim; ++k) {
            double span = f.geometry.hi[(size_t)k] - f.geometry.lo[(size_t)k];
            double h = 1e-5 * span;
            Eigen::VectorXd xp = x, xm = x;
            xp(k) = std::min(x(k) + h, f.geometry.hi[(size_t)k]);
            xm(k) = std::max(x(k) - h, f.geometry.lo[(size_t)k]);
            double fp = interp_component(f.geometry, f.components[(size_t)k], xp);
            double fm = interp_component(f.geometry, f.components[(size_t)k], xm);
            div += (fp - fm) / (xp(k) - xm(k));
        }
        return div;
    }
    }
    throw Error("unknown field kind");
}

namespace {

struct StepResult {
    Eigen::VectorXd x1, xmid, k_start, k_end;
};

// One classical RK4 step plus the cubic-Hermite midpoint state used by the
// Simpson accumulators.
StepResult rk4_step(const VectorFieldSpec& f, const Eigen::VectorXd& x, double t, double h) {
    StepResult s;
    s.k_start = eval_field(f, x, t);
    Eigen::VectorXd k2 = eval_field(f, x + 0.5 * h * s.k_start, t + 0.5 * h);
    Eigen::VectorXd k3 = eval_field(f, x + 0.5 * h * k2, t + 0.5 * h);
    Eigen::VectorXd k4 = eval_field(f, x + h * k3, t + h);
    s.x1 = x + (h / 6.0) * (s.k_start + 2.0 * k2 + 2.0 * k3 + k4);
    s.k_end = eval_field(f, s.x1, t + h);
    s.xmid = 0.5 * (x + s.x1) + (h / 8.0) * (s.k_start - s.k_end);
    return s;
}

void check_blowup(const Eigen::VectorXd& x) {
    if (!x.allFinite() || x.norm() > 1e6) throw BlowUp("trajectory norm exceeded 1e6");
}

} // namespace

int default_steps(double dt) { return std::max(1, (int)std::ceil(100.0 * std::abs(dt))); }

ParticleEnsemble propagate(const VectorFieldSpec& f, const ParticleEnsemble& ens, double t0,
                           double t1, int steps) {
    if (steps < 1) throw ParseError("need at least one integration step");
    if (!ens.density_values)
        throw MissingDensityValues("propagation transforms density values; none attached");
    const int n = (int)ens.points.rows();
    ParticleEnsemble out = ens;
    Eigen::VectorXd dens = *ens.density_values;
    const double h = (t1 - t0) / steps;

    parallel_for(n, [&](int i) {
        Eigen::VectorXd x = ens.points.row(i).transpose();
        double div_int = 0.0;
        double t = t0;
        for (int s = 0; s < steps; ++s) {
            StepResult st = rk4_step(f, x, t, h);
            check_blowup(st.x1);
            div_int += (h / 6.0) *
                       (divergence(f, x) + 4.0 * divergence(f, st.xmid) + divergence(f, st.x1));
            x = st.x1;
            t = t0 + (s + 1) * h;
        }
        out.points.row(i) = x.transpose();
        dens(i) = (*ens.density_values)(i)*std::exp(-div_int);
    });
    out.density_values = dens;
    return out;
}

std::vector<ParticleEnsemble> duffing_dataset(int n, std::uint64_t seed,
                                              const std::vector<double>& horizons) {
    if (n < 1) throw ParseError("need at least one sample");
    if (horizons.empty() || horizons.front() <= 0.0)
        throw ParseError("horizons must start after time zero");
    for (size_t j = 1; j < horizons.size(); ++j)
        if (horizons[j] <= horizons[j - 1]) throw ParseError("horizons must increase");

    RandomStream rng(seed);
    ParticleEnsemble ens;
    ens.dim = 2;
    ens.points.resize(n, 2);
    for (int i = 0; i < n; ++i) {
        ens.points(i, 0) = rng.uniform(-2.0, 2.0);
        ens.points(i, 1) = rng.uniform(-2.0, 2.0);
    }
    ens.weights = Eigen::VectorXd::Constant(n, 1.0 / n);
    ens.density_values = Eigen::VectorXd::Constant(n, 1.0 / 16.0);

    VectorFieldSpec field = VectorFieldSpec::duffing(1.0, -1.0, 0.5);
    std::vector<ParticleEnsemble> snaps;
    snaps.reserve(horizons.size());
    double t_prev = 0.0;
    for (double t : horizons) {
        ens = propagate(field, ens, t_prev, t, default_steps(t - t_prev));
        snaps.push_back(ens);
        t_prev = t;
    }
    return snaps;
}

double path_kinetic_energy(const VectorFieldSpec& f, const ParticleEnsemble& ens, double t0,
                           double t1, int steps) {
    if (steps < 1) throw ParseError("need at least one integration step");
    const int n = (int)ens.points.rows();
    const double h = (t1 - t0) / steps;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);

    parallel_for(n, [&](int i) {
        Eigen::VectorXd x = ens.points.row(i).transpose();
        double e = 0.0;
        double t = t0;
        for (int s = 0; s < steps; ++s) {
            StepResult st = rk4_step(f, x, t, h);
            check_blowup(st.x1);
            double gm = eval_field(f, st.xmid, t + 0.5 * h).squaredNorm();
            e += (h / 6.0) * (st.k_start.squaredNorm() + 4.0 * gm + st.k_end.squaredNorm());
            x = st.x1;
            t = t0 + (s + 1) * h;
        }
        acc(i) = e;
    });
    return ens.weights.dot(acc) / ens.weights.sum();
}

} // namespace ot
