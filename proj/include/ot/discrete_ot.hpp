#pragma once

#include <vector>

#include <Eigen/Core>

#include "ot/measures.hpp"

namespace ot {

/// Weighted point masses; the sample-level discretization of a PDF.
struct DiscreteMeasure {
    Eigen::MatrixXd points;  // N x d support locations
    Eigen::VectorXd weights; // N strictly positive masses, sum 1

    Eigen::Index size() const { return points.rows(); }
    Eigen::Index dim() const { return points.cols(); }
    void validate() const;

    /// Grid cells as weighted atoms at their centers; cells with mass below
    /// prune_below are dropped and the rest renormalized.
    static DiscreteMeasure from_grid(const GridDensity& g, double prune_below = 1e-12);
    static DiscreteMeasure from_particles(const ParticleEnsemble& p);

    /// Keeps the max_atoms heaviest atoms (renormalized). Identity when the
    /// measure is already small enough.
    DiscreteMeasure truncated(Eigen::Index max_atoms) const;
};

struct PlanEntry {
    int i, j;
    double mass;
};

/// Optimal coupling between two discrete measures under squared-Euclidean
/// cost. The coupling is the sparse basic solution of the transportation LP
/// (at most N_s + N_t - 1 entries).
struct TransportPlan {
    DiscreteMeasure source, target;
    std::vector<PlanEntry> coupling;
    double cost = 0.0;               // sum of mass * ||x_i - y_j||^2
    double max_dual_violation = 0.0; // certificate: most negative reduced cost seen at exit

    Eigen::MatrixXd coupling_dense() const;
    Eigen::VectorXd row_sums() const;
    Eigen::VectorXd col_sums() const;
};

/// Exact transportation simplex (network simplex on the bipartite
/// transportation graph): north-west-corner start, block pricing, Bland's
/// rule fallback for anti-cycling. Optimality certified by dual
/// feasibility: all reduced costs >= -1e-9 * max cost.
TransportPlan solve_plan(const DiscreteMeasure& src, const DiscreteMeasure& tgt);

/// sqrt of the optimal transport cost.
double wasserstein(const DiscreteMeasure& src, const DiscreteMeasure& tgt);

/// Exhaustive oracle: enumerates all N! assignments for equal-weight
/// measures with N_s = N_t <= 8. Independent of the simplex path.
TransportPlan brute_force_plan(const DiscreteMeasure& src, const DiscreteMeasure& tgt);

} // namespace ot
