#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "ot/error.hpp"

namespace ot {

/// Nonnegative density values on a regular grid over a box domain.
/// Values live at cell centers (row-major storage, last axis fastest);
/// integrals are midpoint Riemann sums. Immutable by convention: operations
/// return new grids.
struct GridDensity {
    int dim = 0;
    std::vector<double> lo, hi;   // box bounds, lo[k] < hi[k]
    std::vector<int> shape;       // cells per axis
    std::vector<double> values;   // density, 1/volume units

    GridDensity() = default;
    GridDensity(std::vector<double> lo_, std::vector<double> hi_,
                std::vector<int> shape_, std::vector<double> values_);

    std::size_t cell_count() const;
    double cell_volume() const;
    double spacing(int axis) const { return (hi[axis] - lo[axis]) / shape[axis]; }

    /// Center of the cell with the given flat (row-major) index.
    Eigen::VectorXd cell_center(std::size_t flat) const;

    /// Riemann-sum mass: sum(values) * cell_volume.
    double mass() const;

    /// Checks bounds ordering, shape positivity, and value array size.
    void validate_geometry() const;

    bool same_geometry(const GridDensity& other, double tol = 1e-12) const;
};

/// Weighted scattered points with optional exact joint-PDF values attached
/// (the "colored" scattered-data form).
struct ParticleEnsemble {
    int dim = 0;
    Eigen::MatrixXd points;                        // N x dim
    Eigen::VectorXd weights;                       // N, >= 0, sum 1
    std::optional<Eigen::VectorXd> density_values; // N, > 0 when present

    Eigen::Index size() const { return points.rows(); }
    void validate() const;
};

/// Mean/covariance pair.
struct GaussianDensity {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    Eigen::Index dim() const { return mean.size(); }
    void validate() const;
};

/// Symmetrizes and clamps eigenvalues in (-1e-10*trace, 0) to zero.
/// Larger violations throw NonPsdCovariance.
Eigen::MatrixXd repair_psd(const Eigen::MatrixXd& cov);

/// Scales values so the grid integrates to one. Grids already within 1e-10
/// of unit mass are returned unchanged, which makes normalize idempotent
/// bit-for-bit.
GridDensity normalize(const GridDensity& g);

/// Exact mean/covariance of the piecewise-constant density the grid
/// represents: midpoint sums plus the per-cell uniform variance h^2/12 on
/// the covariance diagonal. Requires unit mass to 1e-4.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> moments(const GridDensity& g);

/// Scattered-data interpolation of the ensemble's exact density values onto
/// a regular grid: inverse-distance weighting (power 2) over the 8 nearest
/// particles per node, with nodes outside the ensemble's local support set
/// to zero, then normalized.
GridDensity grid_from_particles(const ParticleEnsemble& p,
                                const std::vector<double>& lo,
                                const std::vector<double>& hi,
                                const std::vector<int>& shape);

/// Draws n iid samples with weights 1/n; deterministic given seed. Attaches
/// exact pdf values when the covariance is nonsingular.
ParticleEnsemble sample_gaussian(const GaussianDensity& g, int n,
                                 std::uint64_t seed);

/// Evaluates the Gaussian pdf at cell centers and normalizes. Requires a
/// nonsingular covariance.
GridDensity rasterize_gaussian(const GaussianDensity& g,
                               const std::vector<double>& lo,
                               const std::vector<double>& hi,
                               const std::vector<int>& shape);

} // namespace ot
