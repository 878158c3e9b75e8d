#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ot/error.hpp"
#include "ot/measures.hpp"

namespace ot {

/// Space-time staggered discretization of a mass flow on [0,1]:
/// densities phi at cell centers on integer time slices 0..T, momenta
/// m_k = phi * v_k on interior faces of axis k, slice t holding the flux of
/// interval [t/T, (t+1)/T). Slice T exists for symmetry and stays zero (no
/// interval follows it), which is why extracted velocities vanish at s = 1.
struct SpaceTimeField {
    GridDensity space; // geometry only, values unused
    int time_steps = 0;
    std::vector<Eigen::VectorXd> phi;                   // T+1 x cell_count
    std::vector<std::vector<Eigen::VectorXd>> momentum; // (T+1) x dim x face_count(axis)

    int face_count(int axis) const;
};

struct BbSolution {
    SpaceTimeField field;
    // kinetic objective over cells above the density floor (vacuum holds no
    // transporting mass); equals the squared transport distance at convergence
    double energy = 0.0;
    double continuity_residual = 0.0; // relative, on the non-projected iterate
    int iterations = 0;
    bool converged = false;
};

struct SolverParams {
    double tol = 1e-3;       // continuity residual, relative to max |m|/h
    int max_iter = 20000;
    double step = 1.0;       // proximal step, in units of the peak density
    double relaxation = 1.8; // Douglas-Rachford over-relaxation, in (0,2)
    int energy_window = 50;  // iterations between energy-stability checks
    double energy_tol = 1e-5;
    double fp_tol = 1e-4;    // relative splitting fixed-point gap ||q - p||
    bool verbose = false;
};

class NotConverged : public Error {
  public:
    NotConverged(BbSolution partial_, const std::string& msg);
    BbSolution partial;
};

/// Proximal map of gamma * ||m||^2 / phi at a single node, the building
/// block applied at every cell and interval. Returns the joint minimizer
/// (phi, m) of  0.5 (phi - phi_bar)^2 + 0.5 ||m - m_bar||^2 + gamma ||m||^2 / phi
/// over phi >= 0.
std::pair<double, Eigen::VectorXd> kinetic_prox_point(double phi_bar,
                                                      const Eigen::VectorXd& m_bar, double gamma);

/// Dynamic optimal transport between two grids sharing a geometry:
/// minimizes sum ||m||^2 / phi subject to discrete continuity
/// (phi^{t+1} - phi^t)/ds + div m^t = 0, fixed endpoint slices, and zero
/// normal flux, by Douglas-Rachford splitting between the kinetic proximal
/// map and the projection onto the constraint set. The converged energy is
/// the squared Wasserstein distance of the grid pair.
BbSolution bb_solve(const GridDensity& src, const GridDensity& tgt, int time_steps,
                    const SolverParams& params = {});

/// Density slice at synthetic time s (linear between stored slices),
/// clamped nonnegative and normalized.
GridDensity intermediate_density(const BbSolution& sol, double s);

struct GridVelocity {
    GridDensity geometry; // values unused
    Eigen::MatrixXd v;    // cell_count x dim
    std::vector<std::uint8_t> flagged; // cells below the density floor (v forced to 0)
};

/// v_k = m_k/phi averaged to cell centers at the slice nearest s.
GridVelocity extract_velocity(const BbSolution& sol, double s);

/// (s, W(src, phi(s))) profile sampled uniformly on [0,1]; W by the exact
/// discrete solver on cells-as-atoms. Linear in s for a converged geodesic.
std::vector<std::pair<double, double>> geodesic_w_profile(const BbSolution& sol,
                                                          const GridDensity& src, int samples);

} // namespace ot
