#pragma once

#include <vector>

#include <Eigen/Core>

#include "ot/measures.hpp"

namespace ot {

/// ODE right-hand side; either the Duffing oscillator
///   x1' = x2,  x2' = -alpha x1^3 - beta x1 - delta x2,
/// an affine field x' = M x + b, or velocities tabulated on a grid
/// (one array per component, multilinear interpolation between cell centers).
struct VectorFieldSpec {
    enum class Kind { duffing, affine, tabulated };
    Kind kind = Kind::duffing;

    double alpha = 1.0, beta = -1.0, delta = 0.5;

    Eigen::MatrixXd mat;
    Eigen::VectorXd vec;

    GridDensity geometry; // lo/hi/shape only, values ignored
    std::vector<std::vector<double>> components;

    static VectorFieldSpec duffing(double alpha, double beta, double delta);
    static VectorFieldSpec affine(Eigen::MatrixXd m, Eigen::VectorXd b);
    static VectorFieldSpec tabulated(GridDensity geometry,
                                     std::vector<std::vector<double>> components);
    int dim() const;
};

Eigen::VectorXd eval_field(const VectorFieldSpec& f, const Eigen::VectorXd& x, double t);

/// Analytic for duffing (-delta) and affine (trace); central differences
/// with step 1e-5 of the domain span for tabulated fields.
double divergence(const VectorFieldSpec& f, const Eigen::VectorXd& x);

/// Method of characteristics: points advance by fixed-step RK4, density
/// values pick up exp(-integral of div f along the trajectory) with the
/// integral accumulated by Simpson's rule per step. Weights are untouched.
ParticleEnsemble propagate(const VectorFieldSpec& f, const ParticleEnsemble& ens, double t0,
                           double t1, int steps);

/// RK4 steps for a horizon at the default resolution (100 per unit time).
int default_steps(double dt);

/// n points uniform on [-2,2]^2 (density 1/16 each) pushed through the
/// Duffing flow (alpha=1, beta=-1, delta=0.5); one snapshot per horizon.
std::vector<ParticleEnsemble> duffing_dataset(int n, std::uint64_t seed,
                                              const std::vector<double>& horizons);

/// sum_i w_i * integral of ||f(x_i(t))||^2 dt along the flow, the kinetic
/// action of moving the ensemble with the field itself.
double path_kinetic_energy(const VectorFieldSpec& f, const ParticleEnsemble& ens, double t0,
                           double t1, int steps);

} // namespace ot
