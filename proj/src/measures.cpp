#include "ot/measures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "ot/rng.hpp"

namespace ot {

GridDensity::GridDensity(std::vector<double> lo_, std::vector<double> hi_,
                         std::vector<int> shape_, std::vector<double> values_)
    : dim(static_cast<int>(shape_.size())),
      lo(std::move(lo_)), hi(std::move(hi_)),
      shape(std::move(shape_)), values(std::move(values_)) {
    validate_geometry();
}

std::size_t GridDensity::cell_count() const {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    return n;
}

double GridDensity::cell_volume() const {
    double v = 1.0;
    for (int k = 0; k < dim; ++k) v *= spacing(k);
    return v;
}

Eigen::VectorXd GridDensity::cell_center(std::size_t flat) const {
    Eigen::VectorXd c(dim);
    for (int k = dim - 1; k >= 0; --k) {
        const std::size_t n = static_cast<std::size_t>(shape[k]);
        const std::size_t i = flat % n;
        flat /= n;
        c[k] = lo[k] + (static_cast<double>(i) + 0.5) * spacing(k);
    }
    return c;
}

double GridDensity::mass() const {
    const double s = std::accumulate(values.begin(), values.end(), 0.0);
    return s * cell_volume();
}

void GridDensity::validate_geometry() const {
    if (dim < 1 || lo.size() != static_cast<std::size_t>(dim) ||
        hi.size() != static_cast<std::size_t>(dim) ||
        shape.size() != static_cast<std::size_t>(dim))
        throw DimensionMismatch("GridDensity: inconsistent dim/lo/hi/shape");
    for (int k = 0; k < dim; ++k) {
        if (!(lo[k] < hi[k]))
            throw GeometryMismatch("GridDensity: lo[k] must be < hi[k]");
        if (shape[k] < 1)
            throw GeometryMismatch("GridDensity: shape entries must be positive");
    }
    if (values.size() != cell_count())
        throw DimensionMismatch("GridDensity: value array does not match shape");
}

bool GridDensity::same_geometry(const GridDensity& o, double tol) const {
    if (dim != o.dim || shape != o.shape) return false;
    for (int k = 0; k < dim; ++k)
        if (std::abs(lo[k] - o.lo[k]) > tol || std::abs(hi[k] - o.hi[k]) > tol)
            return false;
    return true;
}

void ParticleEnsemble::validate() const {
    if (points.rows() != weights.size())
        throw DimensionMismatch("ParticleEnsemble: points/weights size mismatch");
    if (points.cols() != dim)
        throw DimensionMismatch("ParticleEnsemble: points do not match dim");
    if ((weights.array() < 0.0).any())
        throw NegativeDensity("ParticleEnsemble: negative weight");
    if (std::abs(weights.sum() - 1.0) > 1e-8)
        throw UnnormalizedInput("ParticleEnsemble: weights must sum to 1");
    if (density_values) {
        if (density_values->size() != points.rows())
            throw DimensionMismatch("ParticleEnsemble: density value count mismatch");
        if ((density_values->array() <= 0.0).any())
            throw NegativeDensity("ParticleEnsemble: density values must be > 0");
    }
}

void GaussianDensity::validate() const {
    if (cov.rows() != mean.size() || cov.cols() != mean.size())
        throw DimensionMismatch("GaussianDensity: cov does not match mean");
    const double scale = cov.cwiseAbs().maxCoeff();
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(scale, 1e-300))
        throw NonPsdCovariance("GaussianDensity: covariance not symmetric");
}

Eigen::MatrixXd repair_psd(const Eigen::MatrixXd& cov) {
    Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    const double tr = std::max(sym.trace(), 0.0);
    const double floor = -1e-10 * std::max(tr, 1e-300);
    Eigen::VectorXd ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < floor)
            throw NonPsdCovariance("covariance has eigenvalue below PSD repair range");
        if (ev[i] < 0.0) ev[i] = 0.0;
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

GridDensity normalize(const GridDensity& g) {
    g.validate_geometry();
    for (double v : g.values)
        if (v < 0.0) throw NegativeDensity("normalize: negative density value");
    const double m = g.mass();
    if (m <= 0.0) throw AllZeroDensity("normalize: density is identically zero");
    if (std::abs(m - 1.0) <= 1e-10) return g;
    GridDensity out = g;
    const double inv = 1.0 / m;
    for (double& v : out.values) v *= inv;
    return out;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> moments(const GridDensity& g) {
    g.validate_geometry();
    const double m = g.mass();
    if (std::abs(m - 1.0) > 1e-4)
        throw UnnormalizedInput("moments: grid mass deviates from 1 by more than 1e-4");

    const double vol = g.cell_volume();
    const std::size_t n = g.cell_count();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(g.dim);
    for (std::size_t i = 0; i < n; ++i)
        if (g.values[i] != 0.0) mean += g.values[i] * vol * g.cell_center(i);

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(g.dim, g.dim);
    for (std::size_t i = 0; i < n; ++i) {
        if (g.values[i] == 0.0) continue;
        const Eigen::VectorXd d = g.cell_center(i) - mean;
        cov += (g.values[i] * vol) * (d * d.transpose());
    }
    // Within-cell term: each cell carries its mass as a uniform patch, so the
    // exact covariance of the piecewise-constant pdf adds h^2/12 per axis.
    for (int k = 0; k < g.dim; ++k) {
        const double h = g.spacing(k);
        cov(k, k) += m * h * h / 12.0;
    }
    cov = 0.5 * (cov + cov.transpose());
    return {mean, cov};
}

namespace {

struct Neighbor {
    double dist2;
    Eigen::Index idx;
};

// Exact k-nearest-neighbor queries over a uniform bucket grid. Rings of
// buckets are scanned outward until no unvisited bucket can beat the kth
// best distance, so results match brute force.
class BucketIndex {
  public:
    explicit BucketIndex(const Eigen::MatrixXd& pts)
        : pts_(pts), d_(static_cast<int>(pts.cols())) {
        lo_ = pts.colwise().minCoeff().transpose();
        const Eigen::VectorXd hi = pts.colwise().maxCoeff().transpose();
        const int per_axis = std::max(
            1, static_cast<int>(std::pow(static_cast<double>(pts.rows()) / 4.0, 1.0 / d_)));
        nb_.assign(d_, per_axis);
        side_.resize(d_);
        min_side_ = std::numeric_limits<double>::infinity();
        std::size_t total = 1;
        for (int k = 0; k < d_; ++k) {
            side_[k] = std::max((hi[k] - lo_[k]) / nb_[k], 1e-12);
            min_side_ = std::min(min_side_, side_[k]);
            total *= static_cast<std::size_t>(nb_[k]);
        }
        buckets_.resize(total);
        for (Eigen::Index i = 0; i < pts.rows(); ++i)
            buckets_[bucket_of(pts.row(i).transpose())].push_back(i);
    }

    void k_nearest(const Eigen::VectorXd& x, int k, std::vector<Neighbor>& out) const {
        out.clear();
        const auto want = static_cast<std::size_t>(std::min<Eigen::Index>(k, pts_.rows()));
        const auto worse = [](const Neighbor& a, const Neighbor& b) { return a.dist2 < b.dist2; };
        std::vector<int> home(d_), c(d_);
        for (int kk = 0; kk < d_; ++kk)
            home[kk] = clamp_cell(static_cast<int>((x[kk] - lo_[kk]) / side_[kk]), kk);
        int max_ring = 0;
        for (int kk = 0; kk < d_; ++kk)
            max_ring = std::max(max_ring, std::max(home[kk], nb_[kk] - 1 - home[kk]));
        for (int r = 0; r <= max_ring; ++r) {
            // every unvisited bucket is at least (r-1) full cells away
            if (out.size() == want) {
                const double reach = (r - 1) * min_side_;
                if (reach > 0.0 && reach * reach > out.front().dist2) break;
            }
            scan_ring(x, r, home, c, 0, false, want, worse, out);
        }
        std::sort_heap(out.begin(), out.end(), worse);
    }

  private:
    int clamp_cell(int i, int axis) const { return std::min(std::max(i, 0), nb_[axis] - 1); }

    std::size_t bucket_of(const Eigen::VectorXd& x) const {
        std::size_t id = 0;
        for (int k = 0; k < d_; ++k)
            id = id * static_cast<std::size_t>(nb_[k]) +
                 static_cast<std::size_t>(clamp_cell(static_cast<int>((x[k] - lo_[k]) / side_[k]), k));
        return id;
    }

    // odometer over the Chebyshev ring of radius r around home
    template <typename Cmp>
    void scan_ring(const Eigen::VectorXd& x, int r, const std::vector<int>& home,
                   std::vector<int>& c, int axis, bool on_shell, std::size_t want,
                   const Cmp& worse, std::vector<Neighbor>& out) const {
        if (axis == d_) {
            if (!on_shell && r > 0) return;
            std::size_t id = 0;
            for (int k = 0; k < d_; ++k)
                id = id * static_cast<std::size_t>(nb_[k]) + static_cast<std::size_t>(c[k]);
            for (Eigen::Index i : buckets_[id]) {
                const double dist2 = (pts_.row(i).transpose() - x).squaredNorm();
                if (out.size() < want) {
                    out.push_back({dist2, i});
                    std::push_heap(out.begin(), out.end(), worse);
                } else if (dist2 < out.front().dist2) {
                    std::pop_heap(out.begin(), out.end(), worse);
                    out.back() = {dist2, i};
                    std::push_heap(out.begin(), out.end(), worse);
                }
            }
            return;
        }
        for (int off = -r; off <= r; ++off) {
            const int i = home[axis] + off;
            if (i < 0 || i >= nb_[axis]) continue;
            c[axis] = i;
            scan_ring(x, r, home, c, axis + 1, on_shell || std::abs(off) == r, want, worse, out);
        }
    }

    const Eigen::MatrixXd& pts_;
    int d_;
    Eigen::VectorXd lo_;
    std::vector<int> nb_;
    std::vector<double> side_;
    double min_side_ = 0.0;
    std::vector<std::vector<Eigen::Index>> buckets_;
};

} // namespace

GridDensity grid_from_particles(const ParticleEnsemble& p,
                                const std::vector<double>& lo,
                                const std::vector<double>& hi,
                                const std::vector<int>& shape) {
    p.validate();
    if (!p.density_values)
        throw MissingDensityValues("grid_from_particles: ensemble has no density values");
    if (p.size() < p.dim + 1)
        throw DegenerateEnsemble("grid_from_particles: need at least dim+1 particles");
    if (lo.size() != static_cast<std::size_t>(p.dim) || hi.size() != lo.size() ||
        shape.size() != lo.size())
        throw DimensionMismatch("grid_from_particles: box does not match ensemble dim");
    for (Eigen::Index i = 0; i < p.size(); ++i)
        for (int k = 0; k < p.dim; ++k)
            if (p.points(i, k) < lo[k] || p.points(i, k) > hi[k])
                throw PointOutOfBounds("grid_from_particles: particle outside box");

    constexpr int kNeighbors = 8;
    const Eigen::VectorXd& dv = *p.density_values;

    // Local support radius per particle: its own kNeighbors-th neighbor
    // distance. Grid nodes whose nearest particle is farther than that
    // particle's radius are outside the sampled support and stay zero;
    // plain IDW would otherwise paint the far field with a weighted average
    // of the nearest values, inflating the second moments badly.
    const Eigen::Index n = p.size();
    const BucketIndex index(p.points);
    Eigen::VectorXd support_radius(n);
    {
        std::vector<Neighbor> nb;
        for (Eigen::Index i = 0; i < n; ++i) {
            index.k_nearest(p.points.row(i).transpose(), kNeighbors + 1, nb);
            support_radius[i] = std::sqrt(nb.back().dist2);
        }
    }

    std::size_t cells = 1;
    for (int s : shape) cells *= static_cast<std::size_t>(std::max(s, 0));
    GridDensity g(lo, hi, shape, std::vector<double>(cells, 0.0));

    std::vector<Neighbor> nb;
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
        const Eigen::VectorXd x = g.cell_center(c);
        index.k_nearest(x, kNeighbors, nb);
        const double d_near = std::sqrt(nb.front().dist2);
        if (d_near > support_radius[nb.front().idx]) continue;
        if (nb.front().dist2 < 1e-24) {
            g.values[c] = dv[nb.front().idx];
            continue;
        }
        double num = 0.0, den = 0.0;
        for (const Neighbor& q : nb) {
            const double w = 1.0 / q.dist2; // inverse distance, power 2
            num += w * dv[q.idx];
            den += w;
        }
        g.values[c] = std::max(num / den, 0.0);
    }
    return normalize(g);
}

ParticleEnsemble sample_gaussian(const GaussianDensity& g, int n,
                                 std::uint64_t seed) {
    g.validate();
    if (n < 1) throw DimensionMismatch("sample_gaussian: n must be >= 1");
    const Eigen::MatrixXd cov = repair_psd(g.cov); // throws NonPsdCovariance
    const Eigen::Index d = g.dim();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    const Eigen::MatrixXd root =
        es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();

    RandomStream rng(seed);
    ParticleEnsemble out;
    out.dim = static_cast<int>(d);
    out.points.resize(n, d);
    out.weights = Eigen::VectorXd::Constant(n, 1.0 / n);
    Eigen::VectorXd z(d);
    for (int i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < d; ++k) z[k] = rng.normal();
        out.points.row(i) = (g.mean + root * z).transpose();
    }

    // Exact pdf values when the covariance is nonsingular.
    const double min_ev = ev.minCoeff();
    if (min_ev > 1e-12 * std::max(cov.trace(), 1e-300)) {
        const double log_norm =
            -0.5 * (d * std::log(2.0 * M_PI) + ev.array().log().sum());
        Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
        Eigen::VectorXd vals(n);
        for (int i = 0; i < n; ++i) {
            const Eigen::VectorXd r = out.points.row(i).transpose() - g.mean;
            vals[i] = std::exp(log_norm - 0.5 * r.dot(ldlt.solve(r)));
        }
        out.density_values = vals;
    }
    return out;
}

GridDensity rasterize_gaussian(const GaussianDensity& g,
                               const std::vector<double>& lo,
                               const std::vector<double>& hi,
                               const std::vector<int>& shape) {
    g.validate();
    const Eigen::MatrixXd cov = repair_psd(g.cov);
    if (cov.ldlt().isNegative() ||
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov).eigenvalues().minCoeff() <=
            1e-12 * std::max(cov.trace(), 1e-300))
        throw SingularCovariance("rasterize_gaussian: covariance is singular");

    std::size_t cells = 1;
    for (int s : shape) cells *= static_cast<std::size_t>(std::max(s, 0));
    GridDensity out(lo, hi, shape, std::vector<double>(cells, 0.0));
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
    for (std::size_t c = 0; c < out.cell_count(); ++c) {
        const Eigen::VectorXd r = out.cell_center(c) - g.mean;
        out.values[c] = std::exp(-0.5 * r.dot(ldlt.solve(r)));
    }
    return normalize(out);
}

} // namespace ot
