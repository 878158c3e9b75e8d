#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "ot/error.hpp"
#include "ot/measures.hpp"

namespace ot {

/// Discrete-time plant x_{k+1} = A x_k + B u_k.
struct LtiSystem {
    Eigen::MatrixXd a_mat; // d x d
    Eigen::MatrixXd b_mat; // d x m
    void validate() const;
};

struct FreePair {
    Eigen::MatrixXd R; // m x d
    Eigen::VectorXd r; // m
};

/// Affine state feedback u = K x + kappa.
struct FeedbackLaw {
    Eigen::MatrixXd k_mat;
    Eigen::VectorXd kappa;
    std::optional<FreePair> free_pair_used;
};

/// Kernel-membership residuals deciding whether the optimal transport map
/// between two Gaussian state densities is realizable by state feedback.
struct FeasibilityReport {
    bool feasible = false;
    double residual_mat = 0.0; // ||(I - B B+)(Gamma - A)||_F
    double residual_vec = 0.0; // ||(I - B B+) gamma||_2
    bool b_full_rank = false;
};

class InfeasibleSteering : public Error {
  public:
    InfeasibleSteering(FeasibilityReport rep, int horizon = -1);
    FeasibilityReport report;
    int horizon; // -1 when not part of a multi-horizon plan
};

/// Moore-Penrose pseudo-inverse, SVD with singular values below
/// 1e-12 * sigma_max treated as zero.
Eigen::MatrixXd pinv(const Eigen::MatrixXd& M);

FeasibilityReport check_feasibility(const LtiSystem& sys, const GaussianDensity& src,
                                    const GaussianDensity& tgt);

/// K = B+(Gamma - A) - (I - B+B)R, kappa = B+ gamma - (I - B+B)r.
/// The free pair sweeps the solution set of the underdetermined case;
/// (A + BK, B kappa) is the same for every choice.
FeedbackLaw synthesize(const LtiSystem& sys, const GaussianDensity& src, const GaussianDensity& tgt,
                       const std::optional<FreePair>& free_pair = std::nullopt);

/// Gaussian image under the closed loop: N((A+BK)mu + B kappa, (A+BK) Sigma (A+BK)^T).
GaussianDensity closed_loop_push(const LtiSystem& sys, const FeedbackLaw& law,
                                 const GaussianDensity& src);

/// One law per horizon steering pdfs[j] -> pdfs[j+1] under systems[j].
std::vector<FeedbackLaw> plan_sequence(const std::vector<LtiSystem>& systems,
                                       const std::vector<GaussianDensity>& pdfs,
                                       const std::optional<FreePair>& free_pair = std::nullopt);

} // namespace ot
