#pragma once

#include <Eigen/Core>

#include "ot/measures.hpp"

namespace ot {

/// Affine map x -> Gamma * x + gamma. When produced by gaussian_brenier_map,
/// Gamma is symmetric PSD (the map is the gradient of a convex potential).
struct AffineMap {
    Eigen::MatrixXd gamma_mat; // Gamma
    Eigen::VectorXd gamma_vec; // gamma

    Eigen::Index dim() const { return gamma_vec.size(); }
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
        return gamma_mat * x + gamma_vec;
    }
    static AffineMap identity(Eigen::Index d) {
        return {Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d)};
    }
};

/// Symmetric PSD square root via eigendecomposition, eigenvalues clamped at 0.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& s);

/// Closed-form optimal transport map between nondegenerate Gaussians:
///   Gamma = sqrt(S_t) (sqrt(S_t) S_s sqrt(S_t))^{-1/2} sqrt(S_t),
///   gamma = mu_t - Gamma mu_s,
/// so push_gaussian(map, src) == tgt exactly. Both covariances must be
/// strictly positive definite (min eigenvalue > 1e-12 * trace), otherwise
/// SingularCovariance.
AffineMap gaussian_brenier_map(const GaussianDensity& src,
                               const GaussianDensity& tgt);

/// W(a,b) = sqrt(||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (sqrt(S_b) S_a sqrt(S_b))^{1/2})).
double gaussian_wasserstein(const GaussianDensity& a, const GaussianDensity& b);

/// Image of a Gaussian under an affine map: N(G mu + g, G Sigma G^T).
GaussianDensity push_gaussian(const AffineMap& m, const GaussianDensity& g);

/// Intermediate transport map (1-s) Id + s m, s in [0, 1].
AffineMap interpolate_map(const AffineMap& m, double s);

/// McCann displacement interpolation between Gaussians:
///   mean_s = (1-s) mu_src + s mu_tgt,
///   cov_s  = [(1-s)I + s Gamma] S_src [(1-s)I + s Gamma].
GaussianDensity displacement_interpolate(const GaussianDensity& src,
                                         const GaussianDensity& tgt, double s);

} // namespace ot
