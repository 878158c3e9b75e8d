#pragma once

#include <optional>

#include <Eigen/Core>

#include "ot/gaussian_ot.hpp"
#include "ot/measures.hpp"

namespace ot {

/// Noise-free linear plant x_{j+1} = A x_j, y_j = C x_j with Gaussian
/// initial state.
struct LinearGaussianModel {
    Eigen::MatrixXd a_mat; // d x d
    Eigen::MatrixXd c_mat; // p x d
    GaussianDensity initial;
    void validate() const;
};

/// Output-map correction at one measurement instant: the baseline output map
/// composed with the transport map from predicted to measured output PDF.
/// Closed-form refinements carry an affine correction; empirical ones carry
/// a point map on the predicted support (barycentric projection of the
/// optimal plan), extended off-support by nearest-neighbor displacement.
struct RefinedOutputMap {
    AffineMap base_output;
    int instant = 0;
    std::optional<AffineMap> correction;
    Eigen::MatrixXd support;   // empirical only: predicted points
    Eigen::MatrixXd displaced; // empirical only: their images

    Eigen::VectorXd apply_correction(const Eigen::VectorXd& y) const;
    Eigen::MatrixXd apply_correction_rows(const Eigen::MatrixXd& pts) const;
};

/// Output PDF of the model at step j: N(C A^j mu0, (C A^j) P0 (C A^j)^T).
GaussianDensity predict_output_gaussian(const LinearGaussianModel& m, int j);

/// Brenier correction from the model's predicted output Gaussian to the
/// truth's at step j.
RefinedOutputMap refine_gaussian(const LinearGaussianModel& truth, const LinearGaussianModel& model,
                                 int j);

/// Intermediate Gaussian along the refinement at pseudo-time s in [0,1]:
///   mean(s) = [(1-s) C_m A_m^j + s C_t A_t^j] mu0,
///   cov(s)  = [(1-s)I + s G] Sigma_model [(1-s)I + s G],
/// with G the correction matrix at step j. Physical time j is held fixed.
GaussianDensity refinement_path(const LinearGaussianModel& truth, const LinearGaussianModel& model,
                                int j, double s);

/// Corrects sampled predictions against sampled measurements via the optimal
/// discrete plan, barycentrically projected to a point map.
RefinedOutputMap refine_empirical(const ParticleEnsemble& predicted,
                                  const ParticleEnsemble& measured);

} // namespace ot
