#include "ot/benamou_brenier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>

#include "ot/discrete_ot.hpp"
#include "ot/parallel.hpp"

namespace ot {

int SpaceTimeField::face_count(int axis) const {
    int n = space.shape[(size_t)axis];
    return n < 2 ? 0 : (int)(space.cell_count() / (size_t)n) * (n - 1);
}

NotConverged::NotConverged(BbSolution partial_, const std::string& msg)
    : Error(msg), partial(std::move(partial_)) {}

namespace {

struct AxisGeom {
    int n = 0;
    long inner = 1, outer = 1;
    double h = 0.0;
    long nfaces = 0;
};

using Arr = Eigen::Map<Eigen::ArrayXd>;
using CArr = Eigen::Map<const Eigen::ArrayXd>;

struct Geom {
    int T = 0, d = 0;
    long Nc = 0;
    double ds = 0.0, vol = 0.0;
    std::vector<AxisGeom> ax;
};

Geom make_geom(const GridDensity& g, int T) {
    Geom gm;
    gm.T = T;
    gm.d = g.dim;
    gm.Nc = (long)g.cell_count();
    gm.ds = 1.0 / T;
    gm.vol = g.cell_volume();
    gm.ax.resize((size_t)g.dim);
    for (int k = 0; k < g.dim; ++k) {
        AxisGeom& a = gm.ax[(size_t)k];
        a.n = g.shape[(size_t)k];
        a.h = g.spacing(k);
        a.inner = 1;
        for (int j = k + 1; j < g.dim; ++j) a.inner *= g.shape[(size_t)j];
        a.outer = 1;
        for (int j = 0; j < k; ++j) a.outer *= g.shape[(size_t)j];
        a.nfaces = a.n < 2 ? 0 : a.outer * (a.n - 1) * a.inner;
    }
    return gm;
}

// staggered iterate: interior density slices and per-interval face momenta
struct UState {
    Eigen::MatrixXd phi;                          // Nc x (T-1)
    std::vector<std::vector<Eigen::VectorXd>> m;  // T x d x nfaces
};

// centered iterate: one node per cell and interval
struct VState {
    Eigen::MatrixXd phi;                          // Nc x T
    std::vector<std::vector<Eigen::VectorXd>> m;  // T x d x Nc
};

UState make_u(const Geom& g) {
    UState u;
    u.phi = Eigen::MatrixXd::Zero(g.Nc, g.T - 1);
    u.m.assign((size_t)g.T, {});
    for (auto& slice : u.m) {
        slice.resize((size_t)g.d);
        for (int k = 0; k < g.d; ++k)
            slice[(size_t)k] = Eigen::VectorXd::Zero(g.ax[(size_t)k].nfaces);
    }
    return u;
}

VState make_v(const Geom& g) {
    VState v;
    v.phi = Eigen::MatrixXd::Zero(g.Nc, g.T);
    v.m.assign((size_t)g.T, {});
    for (auto& slice : v.m) {
        slice.resize((size_t)g.d);
        for (int k = 0; k < g.d; ++k)
            slice[(size_t)k] =
                Eigen::VectorXd::Zero(g.ax[(size_t)k].n < 2 ? 0 : g.Nc);
    }
    return v;
}

template <class S, class F> void zip_blocks(S& a, const S& b, const S& c, F&& f) {
    f(a.phi, b.phi, c.phi);
    for (size_t t = 0; t < a.m.size(); ++t)
        for (size_t k = 0; k < a.m[t].size(); ++k) f(a.m[t][k], b.m[t][k], c.m[t][k]);
}

// a = 2b - c
template <class S> void reflect(S& a, const S& b, const S& c) {
    zip_blocks(a, b, c, [](auto& x, const auto& y, const auto& z) { x = 2.0 * y - z; });
}

// a += alpha (b - c)
template <class S> void relax_update(S& a, double alpha, const S& b, const S& c) {
    zip_blocks(a, b, c, [alpha](auto& x, const auto& y, const auto& z) { x += alpha * (y - z); });
}

// ---- constraint side ------------------------------------------------------

// r(t) = (phi(t+1) - phi(t))/ds + div m^t, endpoint slices substituted
struct ConstraintOps {
    const Geom* g;
    const Eigen::VectorXd* src;
    const Eigen::VectorXd* tgt;

    const double* phi_at(const UState& u, int t) const {
        if (t == 0) return src->data();
        if (t == g->T) return tgt->data();
        return u.phi.col(t - 1).data();
    }

    void add_div(const std::vector<Eigen::VectorXd>& m, double* r, double sign) const {
        for (int k = 0; k < g->d; ++k) {
            const AxisGeom& a = g->ax[(size_t)k];
            if (a.n < 2) continue;
            const double c = sign / a.h;
            const double* mp = m[(size_t)k].data();
            for (long o = 0; o < a.outer; ++o) {
                double* rp = r + o * a.n * a.inner;
                const double* fp = mp + o * (a.n - 1) * a.inner;
                Arr(rp, a.inner) += c * CArr(fp, a.inner);
                for (int i = 1; i < a.n - 1; ++i)
                    Arr(rp + i * a.inner, a.inner) +=
                        c * (CArr(fp + i * a.inner, a.inner) - CArr(fp + (i - 1) * a.inner, a.inner));
                Arr(rp + (long)(a.n - 1) * a.inner, a.inner) -=
                    c * CArr(fp + (long)(a.n - 2) * a.inner, a.inner);
            }
        }
    }

    void apply(const UState& u, Eigen::MatrixXd& r) const {
        const double ids = 1.0 / g->ds;
        parallel_for(g->T, [&](int t) {
            r.col(t) = ids * (CArr(phi_at(u, t + 1), g->Nc) - CArr(phi_at(u, t), g->Nc)).matrix();
            add_div(u.m[(size_t)t], r.col(t).data(), 1.0);
        });
    }

    // u -= A^T y
    void subtract_adjoint(const Eigen::MatrixXd& y, UState& u) const {
        const double ids = 1.0 / g->ds;
        for (int t = 1; t < g->T; ++t)
            u.phi.col(t - 1) -= ids * (y.col(t - 1) - y.col(t));
        parallel_for(g->T, [&](int t) {
            for (int k = 0; k < g->d; ++k) {
                const AxisGeom& a = g->ax[(size_t)k];
                if (a.n < 2) continue;
                const double c = 1.0 / a.h;
                const double* yp = y.col(t).data();
                double* mp = u.m[(size_t)t][(size_t)k].data();
                for (long o = 0; o < a.outer; ++o) {
                    const double* cy = yp + o * a.n * a.inner;
                    double* fm = mp + o * (a.n - 1) * a.inner;
                    for (int i = 0; i < a.n - 1; ++i)
                        Arr(fm + i * a.inner, a.inner) -=
                            c * (CArr(cy + i * a.inner, a.inner) - CArr(cy + (i + 1) * a.inner, a.inner));
                }
            }
        });
    }
};

// Poisson solve for (A A^T) y = r, diagonalized by DCT-II in time and space
// (Neumann Laplacians on both axes kinds).
struct PoissonSolver {
    const Geom* g;
    Eigen::MatrixXd ct;                 // T x T orthonormal DCT-II
    std::vector<Eigen::MatrixXd> cs;    // per-axis n x n
    Eigen::VectorXd time_eig;           // T
    Eigen::VectorXd space_eig;          // Nc, frequency layout = cell layout
    double eig_cut = 0.0;

    static Eigen::MatrixXd dct_matrix(int n) {
        Eigen::MatrixXd c(n, n);
        for (int p = 0; p < n; ++p) {
            double norm = std::sqrt((p == 0 ? 1.0 : 2.0) / n);
            for (int i = 0; i < n; ++i) c(p, i) = norm * std::cos(M_PI * p * (i + 0.5) / n);
        }
        return c;
    }

    explicit PoissonSolver(const Geom& gm) : g(&gm) {
        ct = dct_matrix(gm.T);
        time_eig.resize(gm.T);
        for (int p = 0; p < gm.T; ++p) {
            double s = std::sin(M_PI * p / (2.0 * gm.T));
            time_eig(p) = 4.0 * s * s / (gm.ds * gm.ds);
        }
        cs.resize((size_t)gm.d);
        space_eig = Eigen::VectorXd::Zero(gm.Nc);
        for (int k = 0; k < gm.d; ++k) {
            const AxisGeom& a = gm.ax[(size_t)k];
            cs[(size_t)k] = dct_matrix(a.n);
            for (long o = 0; o < a.outer; ++o)
                for (int q = 0; q < a.n; ++q) {
                    double s = std::sin(M_PI * q / (2.0 * a.n));
                    double lam = 4.0 * s * s / (a.h * a.h);
                    for (long j = 0; j < a.inner; ++j)
                        space_eig((o * a.n + q) * a.inner + j) += lam;
                }
        }
        eig_cut = 1e-12 * (time_eig.maxCoeff() + space_eig.maxCoeff());
    }

    void space_transform(double* slice, bool forward) const {
        using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        for (int k = 0; k < g->d; ++k) {
            const AxisGeom& a = g->ax[(size_t)k];
            if (a.n < 2) continue;
            const Eigen::MatrixXd& c = cs[(size_t)k];
            if (a.inner == 1) {
                // innermost axis: all pencils are the rows of one block
                Eigen::Map<RowMat> blk(slice, a.outer, a.n);
                if (forward)
                    blk = blk * c.transpose();
                else
                    blk = blk * c;
                continue;
            }
            RowMat tmp(a.n, a.inner);
            for (long o = 0; o < a.outer; ++o) {
                Eigen::Map<RowMat> blk(slice + o * a.n * a.inner, a.n, a.inner);
                if (forward)
                    tmp.noalias() = c * blk;
                else
                    tmp.noalias() = c.transpose() * blk;
                blk = tmp;
            }
        }
    }

    // in place
    void solve(Eigen::MatrixXd& r) const {
        r = r * ct.transpose();
        parallel_for(g->T, [&](int t) { space_transform(r.col(t).data(), true); });
        for (int p = 0; p < g->T; ++p) {
            double tl = time_eig(p);
            for (long c = 0; c < g->Nc; ++c) {
                double lam = tl + space_eig(c);
                r(c, p) = lam > eig_cut ? r(c, p) / lam : 0.0;
            }
        }
        parallel_for(g->T, [&](int t) { space_transform(r.col(t).data(), false); });
        r = r * ct;
    }
};

// ---- interpolation (graph) side -------------------------------------------

// V = I U + k: phi averaged between adjacent time slices (endpoints fixed),
// momenta averaged between adjacent faces (zero at the boundary).
struct InterpOps {
    const Geom* g;
    const Eigen::VectorXd* src;
    const Eigen::VectorXd* tgt;

    void apply(const UState& u, VState& v) const {
        const int T = g->T;
        v.phi.col(0) = 0.5 * (*src + u.phi.col(0));
        for (int t = 1; t < T - 1; ++t) v.phi.col(t) = 0.5 * (u.phi.col(t - 1) + u.phi.col(t));
        v.phi.col(T - 1) = 0.5 * (u.phi.col(T - 2) + *tgt);
        parallel_for(T, [&](int t) {
            for (int k = 0; k < g->d; ++k) face_to_center(u.m[(size_t)t][(size_t)k],
                                                          v.m[(size_t)t][(size_t)k], k);
        });
    }

    void face_to_center(const Eigen::VectorXd& m, Eigen::VectorXd& out, int k) const {
        const AxisGeom& a = g->ax[(size_t)k];
        if (a.n < 2) return;
        for (long o = 0; o < a.outer; ++o) {
            const double* fp = m.data() + o * (a.n - 1) * a.inner;
            double* cp = out.data() + o * a.n * a.inner;
            Arr(cp, a.inner) = 0.5 * CArr(fp, a.inner);
            for (int i = 1; i < a.n - 1; ++i)
                Arr(cp + i * a.inner, a.inner) =
                    0.5 * (CArr(fp + (i - 1) * a.inner, a.inner) + CArr(fp + i * a.inner, a.inner));
            Arr(cp + (long)(a.n - 1) * a.inner, a.inner) =
                0.5 * CArr(fp + (long)(a.n - 2) * a.inner, a.inner);
        }
    }

    // out(face i) = 0.5 (x(cell i) + x(cell i+1))
    void center_to_face(const Eigen::VectorXd& x, Eigen::VectorXd& out, int k) const {
        const AxisGeom& a = g->ax[(size_t)k];
        if (a.n < 2) return;
        for (long o = 0; o < a.outer; ++o) {
            const double* cp = x.data() + o * a.n * a.inner;
            double* fp = out.data() + o * (a.n - 1) * a.inner;
            for (int i = 0; i < a.n - 1; ++i)
                Arr(fp + i * a.inner, a.inner) =
                    0.5 * (CArr(cp + i * a.inner, a.inner) + CArr(cp + (i + 1) * a.inner, a.inner));
        }
    }
};

// Solves (Id + I^T I) x = rhs blockwise: every block is the constant
// tridiagonal (1/4, 3/2, 1/4).
struct TridiagSolver {
    std::vector<double> cp, inv_m; // precomputed factors for one length

    explicit TridiagSolver(int len) {
        cp.resize((size_t)len);
        inv_m.resize((size_t)len);
        double m = 1.5;
        inv_m[0] = 1.0 / m;
        cp[0] = 0.25 / m;
        for (int i = 1; i < len; ++i) {
            m = 1.5 - 0.25 * cp[(size_t)i - 1];
            inv_m[(size_t)i] = 1.0 / m;
            cp[(size_t)i] = 0.25 / m;
        }
    }

    // columns of a matrix are the pencil positions; each row entry solved
    // simultaneously (vectorized Thomas)
    void solve_cols(Eigen::MatrixXd& rhs) const {
        const int L = (int)rhs.cols();
        rhs.col(0) *= inv_m[0];
        for (int i = 1; i < L; ++i)
            rhs.col(i) = (rhs.col(i) - 0.25 * rhs.col(i - 1)) * inv_m[(size_t)i];
        for (int i = L - 2; i >= 0; --i) rhs.col(i) -= cp[(size_t)i] * rhs.col(i + 1);
    }

    // pencils along an axis inside a flat face array
    void solve_axis(Eigen::VectorXd& rhs, const AxisGeom& a) const {
        const int L = a.n - 1;
        for (long o = 0; o < a.outer; ++o) {
            double* p = rhs.data() + o * (long)L * a.inner;
            Arr(p, a.inner) *= inv_m[0];
            for (int i = 1; i < L; ++i)
                Arr(p + i * a.inner, a.inner) =
                    (CArr(p + i * a.inner, a.inner) - 0.25 * CArr(p + (i - 1) * a.inner, a.inner)) *
                    inv_m[(size_t)i];
            for (int i = L - 2; i >= 0; --i)
                Arr(p + i * a.inner, a.inner) -= cp[(size_t)i] * CArr(p + (i + 1) * a.inner, a.inner);
        }
    }
};

// ---- kinetic proximal map --------------------------------------------------

// prox of gamma * ||m||^2 / phi at (phb, mb): either (0,0) or the positive
// root of (phi - phb)(phi + 2 gamma)^2 = gamma ||mb||^2.
double prox_phi(double phb, double msq, double gamma) {
    if (4.0 * gamma * phb + msq <= 0.0) return 0.0;
    if (msq == 0.0) return phb; // phb > 0 here
    double lo = std::max(0.0, phb);
    double c2 = lo + 2.0 * gamma;
    double hi = phb + gamma * msq / (c2 * c2);
    double x = 0.5 * (lo + hi);
    for (int it = 0; it < 100; ++it) {
        double q = x + 2.0 * gamma;
        double val = (x - phb) * q * q - gamma * msq;
        double der = q * q + 2.0 * (x - phb) * q;
        if (val > 0.0)
            hi = x;
        else
            lo = x;
        double step = der != 0.0 ? val / der : 0.0;
        double xn = x - step;
        if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
        if (std::abs(xn - x) <= 1e-12 * std::max(1.0, x)) {
            x = xn;
            break;
        }
        x = xn;
    }
    return x;
}

void kinetic_prox(const Geom& g, double gamma, const VState& in, VState& out) {
    parallel_for(g.T, [&](int t) {
        std::vector<const double*> mi;
        std::vector<double*> mo;
        for (int k = 0; k < g.d; ++k) {
            if (g.ax[(size_t)k].n < 2) continue;
            mi.push_back(in.m[(size_t)t][(size_t)k].data());
            mo.push_back(out.m[(size_t)t][(size_t)k].data());
        }
        const int na = (int)mi.size();
        for (long c = 0; c < g.Nc; ++c) {
            double msq = 0.0;
            for (int k = 0; k < na; ++k) msq += mi[(size_t)k][c] * mi[(size_t)k][c];
            double phb = in.phi(c, t);
            double f = prox_phi(phb, msq, gamma);
            out.phi(c, t) = f;
            double shrink = f > 0.0 ? f / (f + 2.0 * gamma) : 0.0;
            for (int k = 0; k < na; ++k) mo[(size_t)k][c] = shrink * mi[(size_t)k][c];
        }
    });
}

// ---- diagnostics -----------------------------------------------------------

// kinetic objective of the interpolated iterate; cells at or below the
// density floor hold no transporting mass and are treated as vacuum, exactly
// the set extract_velocity flags
double energy_of(const Geom& g, const InterpOps& io, const UState& u, VState& vbuf,
                 double floor_val) {
    io.apply(u, vbuf);
    double e = 0.0;
    for (int t = 0; t < g.T; ++t) {
        for (long c = 0; c < g.Nc; ++c) {
            double msq = 0.0;
            for (int k = 0; k < g.d; ++k) {
                if (g.ax[(size_t)k].n < 2) continue;
                double mk = vbuf.m[(size_t)t][(size_t)k](c);
                msq += mk * mk;
            }
            if (msq == 0.0) continue;
            double ph = vbuf.phi(c, t);
            if (ph <= floor_val) continue;
            e += msq / ph;
        }
    }
    return e * g.ds * g.vol;
}

double residual_of(const Geom& g, const ConstraintOps& co, const UState& u, Eigen::MatrixXd& rbuf,
                   double maxrho) {
    co.apply(u, rbuf);
    double num = rbuf.cwiseAbs().maxCoeff();
    double scale = maxrho;
    for (int t = 0; t < g.T; ++t)
        for (int k = 0; k < g.d; ++k)
            if (g.ax[(size_t)k].nfaces > 0)
                scale = std::max(scale, u.m[(size_t)t][(size_t)k].cwiseAbs().maxCoeff() /
                                            g.ax[(size_t)k].h);
    return num / scale;
}

} // namespace

std::pair<double, Eigen::VectorXd> kinetic_prox_point(double phi_bar,
                                                      const Eigen::VectorXd& m_bar, double gamma) {
    if (!(gamma > 0.0)) throw Error("prox step must be positive");
    double f = prox_phi(phi_bar, m_bar.squaredNorm(), gamma);
    double shrink = f > 0.0 ? f / (f + 2.0 * gamma) : 0.0;
    return {f, shrink * m_bar};
}

BbSolution bb_solve(const GridDensity& src, const GridDensity& tgt, int time_steps,
                    const SolverParams& params) {
    src.validate_geometry();
    tgt.validate_geometry();
    if (!src.same_geometry(tgt)) throw GeometryMismatch("source and target grids differ");
    if (time_steps < 2) throw Error("need at least two time intervals");
    for (int n : src.shape)
        if (n < 2) throw Error("need at least two cells per axis");

    // density floor then renormalization keeps v = m/phi finite
    GridDensity srcf = src, tgtf = tgt;
    for (GridDensity* gd : {&srcf, &tgtf}) {
        double mx = *std::max_element(gd->values.begin(), gd->values.end());
        if (mx <= 0.0) throw AllZeroDensity("grid has no mass");
        for (double& v : gd->values) v = std::max(v, 1e-10 * mx);
        *gd = normalize(*gd);
    }

    const Geom g = make_geom(srcf, time_steps);

    // both endpoint densities must be well inside the box
    for (const GridDensity* gd : {&srcf, &tgtf}) {
        double band = 0.0;
        for (long c = 0; c < g.Nc; ++c) {
            long rem = c;
            bool edge = false;
            for (int k = 0; k < g.d; ++k) {
                long idx = rem / g.ax[(size_t)k].inner;
                rem %= g.ax[(size_t)k].inner;
                if (idx < 2 || idx >= g.ax[(size_t)k].n - 2) edge = true;
            }
            if (edge) band += gd->values[(size_t)c] * g.vol;
        }
        if (band > 1e-3)
            throw OutOfDomain("more than 0.1% of the mass sits within two cells of the boundary");
    }

    Eigen::VectorXd srcv = Eigen::Map<const Eigen::VectorXd>(srcf.values.data(), g.Nc);
    Eigen::VectorXd tgtv = Eigen::Map<const Eigen::VectorXd>(tgtf.values.data(), g.Nc);
    const double maxrho = std::max(srcv.maxCoeff(), tgtv.maxCoeff());

    ConstraintOps co{&g, &srcv, &tgtv};
    InterpOps io{&g, &srcv, &tgtv};
    PoissonSolver poisson(g);
    TridiagSolver tri_time(g.T - 1);
    std::vector<TridiagSolver> tri_space;
    for (int k = 0; k < g.d; ++k)
        tri_space.emplace_back(std::max(1, g.ax[(size_t)k].n - 1));

    UState zu = make_u(g), pu = make_u(g), qu = make_u(g), ru = make_u(g);
    VState zv = make_v(g), pv = make_v(g), qv = make_v(g), rv = make_v(g);
    Eigen::MatrixXd rbuf(g.Nc, g.T);

    for (int t = 1; t < g.T; ++t) {
        double w = (double)t / g.T;
        zu.phi.col(t - 1) = (1.0 - w) * srcv + w * tgtv;
    }
    io.apply(zu, zv);

    auto project_constraints = [&](UState& u) {
        co.apply(u, rbuf);
        poisson.solve(rbuf);
        co.subtract_adjoint(rbuf, u);
    };

    auto project_graph = [&](const UState& ub, const VState& vb, UState& u, VState& v) {
        // rhs = ub + I^T (vb - k), then the (Id + I^T I) tridiagonal solves
        u.phi = ub.phi;
        for (int t = 1; t < g.T; ++t) {
            Eigen::VectorXd col = vb.phi.col(t - 1) + vb.phi.col(t);
            if (t == 1) col -= 0.5 * srcv;      // remove the k offset folded into slice 0
            if (t == g.T - 1) col -= 0.5 * tgtv;
            u.phi.col(t - 1) += 0.5 * col;
        }
        tri_time.solve_cols(u.phi);
        parallel_for(g.T, [&](int t) {
            for (int k = 0; k < g.d; ++k) {
                const AxisGeom& a = g.ax[(size_t)k];
                if (a.n < 2) continue;
                Eigen::VectorXd& mu = u.m[(size_t)t][(size_t)k];
                mu = ub.m[(size_t)t][(size_t)k];
                Eigen::VectorXd lift(a.nfaces);
                io.center_to_face(vb.m[(size_t)t][(size_t)k], lift, k);
                mu += lift;
                tri_space[(size_t)k].solve_axis(mu, a);
            }
        });
        io.apply(u, v);
    };

    // the objective is 1-homogeneous in (phi, m), so the prox step only has
    // meaning relative to the density scale; folding maxrho in makes the
    // default step usable across grids regardless of box volume
    const double gamma = params.step * maxrho;

    // relative distance between the two half-step projections; zero exactly
    // at a splitting fixed point, so small values certify the iterate rather
    // than a slow-moving plateau
    auto fp_gap = [&]() {
        double num = (qu.phi - pu.phi).squaredNorm() + (qv.phi - pv.phi).squaredNorm();
        double den = pu.phi.squaredNorm() + pv.phi.squaredNorm();
        for (size_t t = 0; t < qu.m.size(); ++t)
            for (size_t k = 0; k < qu.m[t].size(); ++k) {
                num += (qu.m[t][k] - pu.m[t][k]).squaredNorm() +
                       (qv.m[t][k] - pv.m[t][k]).squaredNorm();
                den += pu.m[t][k].squaredNorm() + pv.m[t][k].squaredNorm();
            }
        return std::sqrt(num / std::max(den, 1e-300));
    };

    const int check_every = 10;
    std::deque<double> ehist;
    const int hist_len = std::max(1, params.energy_window / check_every);
    double energy = 0.0, rel_res = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iter = 0;

    for (iter = 1; iter <= params.max_iter; ++iter) {
        pu = zu;
        project_constraints(pu);
        kinetic_prox(g, gamma, zv, pv);

        reflect(ru, pu, zu);
        reflect(rv, pv, zv);
        project_graph(ru, rv, qu, qv);

        relax_update(zu, params.relaxation, qu, pu);
        relax_update(zv, params.relaxation, qv, pv);

        if (iter % check_every == 0) {
            energy = energy_of(g, io, pu, rv, 1e-10 * maxrho);
            rel_res = residual_of(g, co, qu, rbuf, maxrho);
            double gap = fp_gap();
            bool energy_ok = false;
            if ((int)ehist.size() >= hist_len) {
                double prev = ehist.front();
                energy_ok = std::abs(energy - prev) <= params.energy_tol * std::max(std::abs(energy), 1e-12);
                ehist.pop_front();
            }
            ehist.push_back(energy);
            if (params.verbose && iter % 200 == 0)
                std::fprintf(stderr, "bb iter %6d energy %.8e core %.8e residual %.3e gap %.3e\n",
                             iter, energy, energy_of(g, io, pu, rv, 1e-6 * maxrho), rel_res, gap);
            if (rel_res <= params.tol && energy_ok && gap <= params.fp_tol &&
                iter >= params.energy_window) {
                converged = true;
                break;
            }
        }
    }
    if (iter > params.max_iter) iter = params.max_iter;

    BbSolution sol;
    sol.field.space = srcf;
    sol.field.space.values.clear();
    sol.field.time_steps = g.T;
    sol.field.phi.resize((size_t)g.T + 1);
    sol.field.phi[0] = srcv;
    sol.field.phi[(size_t)g.T] = tgtv;
    for (int t = 1; t < g.T; ++t) sol.field.phi[(size_t)t] = pu.phi.col(t - 1).cwiseMax(0.0);
    sol.field.momentum.resize((size_t)g.T + 1);
    for (int t = 0; t <= g.T; ++t) {
        sol.field.momentum[(size_t)t].resize((size_t)g.d);
        for (int k = 0; k < g.d; ++k)
            sol.field.momentum[(size_t)t][(size_t)k] =
                t < g.T ? pu.m[(size_t)t][(size_t)k]
                        : Eigen::VectorXd::Zero(g.ax[(size_t)k].nfaces);
    }
    // faces flanked by vacuum carry only splitting noise, never mass
    const double vac = 1e-10 * maxrho;
    for (int t = 0; t < g.T; ++t) {
        Eigen::VectorXd vphi = 0.5 * (sol.field.phi[(size_t)t] + sol.field.phi[(size_t)t + 1]);
        for (int k = 0; k < g.d; ++k) {
            const AxisGeom& a = g.ax[(size_t)k];
            if (a.n < 2) continue;
            Eigen::VectorXd& m = sol.field.momentum[(size_t)t][(size_t)k];
            for (long o = 0; o < a.outer; ++o)
                for (int i = 0; i + 1 < a.n; ++i)
                    for (long j = 0; j < a.inner; ++j) {
                        long left = (o * a.n + i) * a.inner + j;
                        if (vphi(left) <= vac && vphi(left + a.inner) <= vac)
                            m[(o * (a.n - 1) + i) * a.inner + j] = 0.0;
                    }
        }
    }
    sol.energy = energy_of(g, io, pu, rv, vac);
    sol.continuity_residual = rel_res;
    sol.iterations = iter;
    sol.converged = converged;

    if (!converged)
        throw NotConverged(sol, "dynamic transport solver hit the iteration cap (residual " +
                                    std::to_string(rel_res) + ")");
    return sol;
}

GridDensity intermediate_density(const BbSolution& sol, double s) {
    if (!(s >= 0.0 && s <= 1.0)) throw SOutOfRange("time fraction must be in [0, 1]");
    const int T = sol.field.time_steps;
    double u = s * T;
    int t0 = std::min((int)std::floor(u), T - 1);
    double w = u - t0;
    Eigen::VectorXd vals =
        (1.0 - w) * sol.field.phi[(size_t)t0] + w * sol.field.phi[(size_t)t0 + 1];
    GridDensity out = sol.field.space;
    out.values.assign(vals.data(), vals.data() + vals.size());
    for (double& v : out.values) v = std::max(v, 0.0);
    return normalize(out);
}

GridVelocity extract_velocity(const BbSolution& sol, double s) {
    if (!(s >= 0.0 && s <= 1.0)) throw SOutOfRange("time fraction must be in [0, 1]");
    const int T = sol.field.time_steps;
    const GridDensity& geo = sol.field.space;
    const Geom g = make_geom(geo, T);
    int slice = std::min((int)std::lround(s * T), T);

    const Eigen::VectorXd& phi = sol.field.phi[(size_t)slice];
    double floor_val = 1e-10 * std::max(phi.maxCoeff(), 0.0);

    GridVelocity out;
    out.geometry = geo;
    out.v = Eigen::MatrixXd::Zero(g.Nc, g.d);
    out.flagged.assign((size_t)g.Nc, 0);

    InterpOps io{&g, nullptr, nullptr};
    for (int k = 0; k < g.d; ++k) {
        const AxisGeom& a = g.ax[(size_t)k];
        if (a.n < 2) continue;
        Eigen::VectorXd centered = Eigen::VectorXd::Zero(g.Nc);
        io.face_to_center(sol.field.momentum[(size_t)slice][(size_t)k], centered, k);
        out.v.col(k) = centered;
    }
    for (long c = 0; c < g.Nc; ++c) {
        if (phi(c) <= floor_val) {
            out.v.row(c).setZero();
            out.flagged[(size_t)c] = 1;
        } else {
            out.v.row(c) /= phi(c);
        }
    }
    return out;
}

std::vector<std::pair<double, double>> geodesic_w_profile(const BbSolution& sol,
                                                          const GridDensity& src, int samples) {
    if (samples < 2) throw Error("profile needs at least two samples");
    DiscreteMeasure src_m = DiscreteMeasure::from_grid(src, 1e-8).truncated(2000);
    std::vector<std::pair<double, double>> prof;
    prof.reserve((size_t)samples);
    for (int i = 0; i < samples; ++i) {
        double s = (double)i / (samples - 1);
        GridDensity slice = intermediate_density(sol, s);
        DiscreteMeasure sm = DiscreteMeasure::from_grid(slice, 1e-8).truncated(2000);
        prof.emplace_back(s, wasserstein(src_m, sm));
    }
    return prof;
}

} // namespace ot
