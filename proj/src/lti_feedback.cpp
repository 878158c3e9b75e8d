#include "ot/lti_feedback.hpp"

#include <Eigen/SVD>

#include "ot/gaussian_ot.hpp"

namespace ot {

void LtiSystem::validate() const {
    if (a_mat.rows() != a_mat.cols()) throw DimensionMismatch("A must be square");
    if (b_mat.rows() != a_mat.rows()) throw DimensionMismatch("B row count must match A");
}

InfeasibleSteering::InfeasibleSteering(FeasibilityReport rep, int h)
    : Error("steering infeasible: residual_mat=" + std::to_string(rep.residual_mat) +
            " residual_vec=" + std::to_string(rep.residual_vec) +
            (h >= 0 ? " at horizon " + std::to_string(h) : "")),
      report(rep), horizon(h) {}

Eigen::MatrixXd pinv(const Eigen::MatrixXd& M) {
    if (M.size() == 0) return M.transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    double cut = 1e-12 * (s.size() ? s(0) : 0.0);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
    for (Eigen::Index k = 0; k < s.size(); ++k)
        if (s(k) > cut && s(k) > 0.0) inv(k) = 1.0 / s(k);
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

FeasibilityReport check_feasibility(const LtiSystem& sys, const GaussianDensity& src,
                                    const GaussianDensity& tgt) {
    sys.validate();
    if (sys.a_mat.rows() != src.mean.size())
        throw DimensionMismatch("system and density dimensions differ");
    AffineMap map = gaussian_brenier_map(src, tgt);

    const Eigen::Index d = sys.a_mat.rows();
    Eigen::MatrixXd bp = pinv(sys.b_mat);
    Eigen::MatrixXd left_proj = Eigen::MatrixXd::Identity(d, d) - sys.b_mat * bp;
    Eigen::MatrixXd dgam = map.gamma_mat - sys.a_mat;

    FeasibilityReport rep;
    rep.residual_mat = (left_proj * dgam).norm();
    rep.residual_vec = (left_proj * map.gamma_vec).norm();
    double tol = 1e-8 * (1.0 + dgam.norm() + map.gamma_vec.norm());
    rep.feasible = rep.residual_mat <= tol && rep.residual_vec <= tol;
    rep.b_full_rank = ((sys.b_mat * bp) - Eigen::MatrixXd::Identity(d, d)).norm() < 1e-9 * d;
    return rep;
}

FeedbackLaw synthesize(const LtiSystem& sys, const GaussianDensity& src, const GaussianDensity& tgt,
                       const std::optional<FreePair>& free_pair) {
    FeasibilityReport rep = check_feasibility(sys, src, tgt);
    if (!rep.feasible) throw InfeasibleSteering(rep);

    AffineMap map = gaussian_brenier_map(src, tgt);
    const Eigen::Index d = sys.a_mat.rows();
    const Eigen::Index m = sys.b_mat.cols();
    Eigen::MatrixXd bp = pinv(sys.b_mat);
    // right projector: the paper's left-projector form only typechecks for
    // square B, the solution set of BK = Gamma - A needs ker(B) on the right
    Eigen::MatrixXd right_proj = Eigen::MatrixXd::Identity(m, m) - bp * sys.b_mat;

    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(m, d);
    Eigen::VectorXd r = Eigen::VectorXd::Zero(m);
    if (free_pair) {
        if (free_pair->R.rows() != m || free_pair->R.cols() != d || free_pair->r.size() != m)
            throw DimensionMismatch("free pair has wrong shape");
        R = free_pair->R;
        r = free_pair->r;
    }

    FeedbackLaw law;
    law.k_mat = bp * (map.gamma_mat - sys.a_mat) - right_proj * R;
    law.kappa = bp * map.gamma_vec - right_proj * r;
    if (free_pair) law.free_pair_used = free_pair;
    return law;
}

GaussianDensity closed_loop_push(const LtiSystem& sys, const FeedbackLaw& law,
                                 const GaussianDensity& src) {
    sys.validate();
    if (law.k_mat.rows() != sys.b_mat.cols() || law.k_mat.cols() != sys.a_mat.cols() ||
        law.kappa.size() != sys.b_mat.cols())
        throw DimensionMismatch("law does not fit the system");
    if (src.mean.size() != sys.a_mat.rows()) throw DimensionMismatch("density dimension mismatch");

    Eigen::MatrixXd acl = sys.a_mat + sys.b_mat * law.k_mat;
    GaussianDensity out;
    out.mean = acl * src.mean + sys.b_mat * law.kappa;
    out.cov = acl * src.cov * acl.transpose();
    out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
    return out;
}

std::vector<FeedbackLaw> plan_sequence(const std::vector<LtiSystem>& systems,
                                       const std::vector<GaussianDensity>& pdfs,
                                       const std::optional<FreePair>& free_pair) {
    if (systems.size() + 1 != pdfs.size())
        throw DimensionMismatch("need one system per consecutive density pair");
    std::vector<FeedbackLaw> laws;
    laws.reserve(systems.size());
    for (size_t j = 0; j < systems.size(); ++j) {
        try {
            laws.push_back(synthesize(systems[j], pdfs[j], pdfs[j + 1], free_pair));
        } catch (const InfeasibleSteering& e) {
            throw InfeasibleSteering(e.report, (int)j);
        }
    }
    return laws;
}

} // namespace ot
