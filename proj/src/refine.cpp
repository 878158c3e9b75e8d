#include "ot/refine.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "ot/discrete_ot.hpp"
#include "ot/error.hpp"

namespace ot {

void LinearGaussianModel::validate() const {
    if (a_mat.rows() != a_mat.cols()) throw DimensionMismatch("state matrix must be square");
    if (c_mat.cols() != a_mat.rows()) throw DimensionMismatch("output matrix width must match state");
    if (initial.mean.size() != a_mat.rows() || initial.cov.rows() != a_mat.rows() ||
        initial.cov.cols() != a_mat.rows())
        throw DimensionMismatch("initial density does not match state dimension");
}

namespace {

Eigen::MatrixXd mat_pow(const Eigen::MatrixXd& a, int j) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Identity(a.rows(), a.cols());
    for (int k = 0; k < j; ++k) p = p * a;
    return p;
}

void require_pd(const Eigen::MatrixXd& cov, const char* who) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
    if (es.eigenvalues().minCoeff() <= 1e-12 * std::max(cov.trace(), 1e-300))
        throw SingularCovariance(std::string(who) + ": predicted output covariance is singular");
}

} // namespace

Eigen::VectorXd RefinedOutputMap::apply_correction(const Eigen::VectorXd& y) const {
    if (correction) return correction->apply(y);
    if (support.rows() == 0) throw Error("refined map carries no correction");
    Eigen::Index best = 0;
    (support.rowwise() - y.transpose()).rowwise().squaredNorm().minCoeff(&best);
    return y + (displaced.row(best) - support.row(best)).transpose();
}

Eigen::MatrixXd RefinedOutputMap::apply_correction_rows(const Eigen::MatrixXd& pts) const {
    Eigen::MatrixXd out(pts.rows(), pts.cols());
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
        out.row(i) = apply_correction(pts.row(i).transpose()).transpose();
    return out;
}

GaussianDensity predict_output_gaussian(const LinearGaussianModel& m, int j) {
    m.validate();
    if (j < 0) throw SOutOfRange("step index must be nonnegative");
    Eigen::MatrixXd caj = m.c_mat * mat_pow(m.a_mat, j);
    GaussianDensity out;
    out.mean = caj * m.initial.mean;
    out.cov = caj * m.initial.cov * caj.transpose();
    out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
    return out;
}

RefinedOutputMap refine_gaussian(const LinearGaussianModel& truth, const LinearGaussianModel& model,
                                 int j) {
    GaussianDensity pred_model = predict_output_gaussian(model, j);
    GaussianDensity pred_truth = predict_output_gaussian(truth, j);
    RefinedOutputMap out;
    out.base_output = {model.c_mat * mat_pow(model.a_mat, j),
                       Eigen::VectorXd::Zero(model.c_mat.rows())};
    out.instant = j;
    out.correction = gaussian_brenier_map(pred_model, pred_truth);
    return out;
}

GaussianDensity refinement_path(const LinearGaussianModel& truth, const LinearGaussianModel& model,
                                int j, double s) {
    if (!(s >= 0.0 && s <= 1.0)) throw SOutOfRange("pseudo-time must be in [0, 1]");
    truth.validate();
    model.validate();
    if (j < 0) throw SOutOfRange("step index must be nonnegative");

    Eigen::MatrixXd caj_t = truth.c_mat * mat_pow(truth.a_mat, j);
    Eigen::MatrixXd caj_m = model.c_mat * mat_pow(model.a_mat, j);
    Eigen::MatrixXd sig_t = caj_t * truth.initial.cov * caj_t.transpose();
    Eigen::MatrixXd sig_m = caj_m * model.initial.cov * caj_m.transpose();
    sig_t = 0.5 * (sig_t + sig_t.transpose()).eval();
    sig_m = 0.5 * (sig_m + sig_m.transpose()).eval();
    require_pd(sig_t, "refinement_path(truth)");
    require_pd(sig_m, "refinement_path(model)");

    // nested-root transport matrix, Cholesky-based inversion
    Eigen::MatrixXd rt = sqrtm_psd(sig_t);
    Eigen::MatrixXd mid = sqrtm_psd((rt * sig_m * rt).eval());
    Eigen::MatrixXd g = rt * mid.llt().solve(rt);
    g = 0.5 * (g + g.transpose()).eval();

    const Eigen::Index p = sig_m.rows();
    Eigen::MatrixXd blend = (1.0 - s) * Eigen::MatrixXd::Identity(p, p) + s * g;
    GaussianDensity out;
    out.mean = (1.0 - s) * (caj_m * model.initial.mean) + s * (caj_t * truth.initial.mean);
    out.cov = blend * sig_m * blend;
    out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
    return out;
}

RefinedOutputMap refine_empirical(const ParticleEnsemble& predicted,
                                  const ParticleEnsemble& measured) {
    if (predicted.points.rows() > 4096 || measured.points.rows() > 4096)
        throw TooLarge("empirical refinement capped at 4096 points per side");
    for (const ParticleEnsemble* e : {&predicted, &measured}) {
        if (e->weights.size() == 0) throw AllZeroDensity("empty ensemble");
        double w0 = e->weights(0);
        if (((e->weights.array() - w0).abs() > 1e-12 * std::abs(w0)).any())
            throw UnequalWeights("empirical refinement needs equal-weight ensembles");
    }

    DiscreteMeasure pm = DiscreteMeasure::from_particles(predicted);
    DiscreteMeasure mm = DiscreteMeasure::from_particles(measured);
    TransportPlan plan = solve_plan(pm, mm);

    const Eigen::Index n = pm.size(), d = pm.dim();
    Eigen::MatrixXd bary = Eigen::MatrixXd::Zero(n, d);
    Eigen::VectorXd tot = Eigen::VectorXd::Zero(n);
    for (const auto& e : plan.coupling) {
        bary.row(e.i) += e.mass * mm.points.row(e.j);
        tot(e.i) += e.mass;
    }
    for (Eigen::Index i = 0; i < n; ++i) bary.row(i) /= tot(i);

    RefinedOutputMap out;
    out.base_output = AffineMap::identity(d);
    out.instant = 0;
    out.support = pm.points;
    out.displaced = bary;
    return out;
}

} // namespace ot
