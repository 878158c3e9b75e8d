#include "ot/gaussian_ot.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace ot {

namespace {

void check_symmetric(const Eigen::MatrixXd& s) {
    if (s.rows() != s.cols())
        throw DimensionMismatch("sqrtm_psd: matrix must be square");
    const double scale = std::max(s.cwiseAbs().maxCoeff(), 1e-300);
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
        throw NonPsdInput("sqrtm_psd: matrix not symmetric");
}

// Requires strict positive definiteness per the module contract.
void check_pd(const Eigen::MatrixXd& cov, const char* who) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
    const double tr = std::max(cov.trace(), 1e-300);
    if (es.eigenvalues().minCoeff() <= 1e-12 * tr)
        throw SingularCovariance(std::string(who) + ": covariance is singular");
}

} // namespace

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& s) {
    check_symmetric(s);
    Eigen::MatrixXd sym = 0.5 * (s + s.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    const double tr = std::max(std::abs(sym.trace()), 1e-300);
    if (es.eigenvalues().minCoeff() < -1e-10 * tr)
        throw NonPsdInput("sqrtm_psd: matrix has negative eigenvalues");
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

AffineMap gaussian_brenier_map(const GaussianDensity& src,
                               const GaussianDensity& tgt) {
    src.validate();
    tgt.validate();
    if (src.dim() != tgt.dim())
        throw DimensionMismatch("gaussian_brenier_map: dimension mismatch");
    check_pd(src.cov, "gaussian_brenier_map(src)");
    check_pd(tgt.cov, "gaussian_brenier_map(tgt)");

    const Eigen::MatrixXd rt = sqrtm_psd(tgt.cov);
    const Eigen::MatrixXd inner = rt * src.cov * rt;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()));
    // inner is PD because both covariances are; invert its square root.
    const Eigen::VectorXd inv_root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd inner_inv_sqrt =
        es.eigenvectors() * inv_root.asDiagonal() * es.eigenvectors().transpose();

    AffineMap m;
    m.gamma_mat = rt * inner_inv_sqrt * rt;
    m.gamma_mat = 0.5 * (m.gamma_mat + m.gamma_mat.transpose());
    // offset chosen so the map itself pushes src onto tgt: Gamma mu_s + gamma
    // must equal mu_t, nothing weaker survives composition
    m.gamma_vec = tgt.mean - m.gamma_mat * src.mean;
    return m;
}

double gaussian_wasserstein(const GaussianDensity& a, const GaussianDensity& b) {
    a.validate();
    b.validate();
    if (a.dim() != b.dim())
        throw DimensionMismatch("gaussian_wasserstein: dimension mismatch");
    const Eigen::MatrixXd ca = repair_psd(a.cov);
    const Eigen::MatrixXd cb = repair_psd(b.cov);
    const Eigen::MatrixXd rb = sqrtm_psd(cb);
    const Eigen::MatrixXd cross = sqrtm_psd(rb * ca * rb);
    const double w2 = (a.mean - b.mean).squaredNorm() +
                      (ca + cb - 2.0 * cross).trace();
    return std::sqrt(std::max(w2, 0.0));
}

GaussianDensity push_gaussian(const AffineMap& m, const GaussianDensity& g) {
    if (m.gamma_mat.cols() != g.dim())
        throw DimensionMismatch("push_gaussian: dimension mismatch");
    GaussianDensity out;
    out.mean = m.apply(g.mean);
    out.cov = m.gamma_mat * g.cov * m.gamma_mat.transpose();
    out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
    return out;
}

AffineMap interpolate_map(const AffineMap& m, double s) {
    if (!(s >= 0.0 && s <= 1.0))
        throw SOutOfRange("interpolate_map: s must be in [0, 1]");
    const Eigen::Index d = m.dim();
    AffineMap out;
    out.gamma_mat = (1.0 - s) * Eigen::MatrixXd::Identity(d, d) + s * m.gamma_mat;
    out.gamma_vec = s * m.gamma_vec;
    return out;
}

GaussianDensity displacement_interpolate(const GaussianDensity& src,
                                         const GaussianDensity& tgt, double s) {
    if (!(s >= 0.0 && s <= 1.0))
        throw SOutOfRange("displacement_interpolate: s must be in [0, 1]");
    const AffineMap m = gaussian_brenier_map(src, tgt);
    const Eigen::Index d = src.dim();
    const Eigen::MatrixXd blend =
        (1.0 - s) * Eigen::MatrixXd::Identity(d, d) + s * m.gamma_mat;
    GaussianDensity out;
    out.mean = (1.0 - s) * src.mean + s * tgt.mean;
    out.cov = blend * src.cov * blend; // blend is symmetric
    out.cov = 0.5 * (out.cov + out.cov.transpose());
    return out;
}

} // namespace ot
