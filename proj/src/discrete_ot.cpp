#include "ot/discrete_ot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ot/error.hpp"

namespace ot {

void DiscreteMeasure::validate() const {
    if (points.rows() != weights.size())
        throw DimensionMismatch("points/weights length mismatch");
    if (points.rows() == 0) throw AllZeroDensity("empty discrete measure");
    if ((weights.array() <= 0.0).any())
        throw NegativeDensity("discrete measure weights must be strictly positive");
    double s = weights.sum();
    if (std::abs(s - 1.0) > 1e-10)
        throw UnnormalizedInput("discrete measure weights sum to " + std::to_string(s));
}

DiscreteMeasure DiscreteMeasure::from_grid(const GridDensity& g, double prune_below) {
    g.validate_geometry();
    double total = g.mass();
    if (total <= 0.0) throw AllZeroDensity("grid has no mass");
    double vol = g.cell_volume();
    std::vector<int> keep;
    keep.reserve(g.values.size());
    for (int c = 0; c < (int)g.values.size(); ++c)
        if (g.values[c] * vol / total > prune_below) keep.push_back(c);
    if (keep.empty()) throw AllZeroDensity("grid has no cells above the pruning threshold");

    DiscreteMeasure m;
    m.points.resize((Eigen::Index)keep.size(), g.dim);
    m.weights.resize((Eigen::Index)keep.size());
    for (Eigen::Index r = 0; r < (Eigen::Index)keep.size(); ++r) {
        auto x = g.cell_center(keep[(size_t)r]);
        for (int k = 0; k < g.dim; ++k) m.points(r, k) = x[(size_t)k];
        m.weights(r) = g.values[(size_t)keep[(size_t)r]] * vol;
    }
    m.weights /= m.weights.sum();
    return m;
}

DiscreteMeasure DiscreteMeasure::from_particles(const ParticleEnsemble& p) {
    if (p.points.rows() == 0) throw AllZeroDensity("empty ensemble");
    DiscreteMeasure m;
    m.points = p.points;
    m.weights = p.weights / p.weights.sum();
    m.validate();
    return m;
}

DiscreteMeasure DiscreteMeasure::truncated(Eigen::Index max_atoms) const {
    if (size() <= max_atoms) return *this;
    std::vector<Eigen::Index> idx((size_t)size());
    std::iota(idx.begin(), idx.end(), 0);
    std::nth_element(idx.begin(), idx.begin() + max_atoms, idx.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return weights(a) > weights(b); });
    idx.resize((size_t)max_atoms);
    std::sort(idx.begin(), idx.end());
    DiscreteMeasure m;
    m.points.resize(max_atoms, dim());
    m.weights.resize(max_atoms);
    for (Eigen::Index r = 0; r < max_atoms; ++r) {
        m.points.row(r) = points.row(idx[(size_t)r]);
        m.weights(r) = weights(idx[(size_t)r]);
    }
    m.weights /= m.weights.sum();
    return m;
}

Eigen::MatrixXd TransportPlan::coupling_dense() const {
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(source.size(), target.size());
    for (const auto& e : coupling) P(e.i, e.j) += e.mass;
    return P;
}

Eigen::VectorXd TransportPlan::row_sums() const {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(source.size());
    for (const auto& e : coupling) r(e.i) += e.mass;
    return r;
}

Eigen::VectorXd TransportPlan::col_sums() const {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(target.size());
    for (const auto& e : coupling) c(e.j) += e.mass;
    return c;
}

namespace {

// Squared-distance cost, cached densely when affordable.
class CostTable {
  public:
    CostTable(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) : X_(X), Y_(Y) {
        m_ = (int)X.rows();
        n_ = (int)Y.rows();
        if ((std::int64_t)m_ * n_ <= 10'000'000) {
            dense_.resize(m_, n_);
            Eigen::VectorXd xs = X.rowwise().squaredNorm();
            Eigen::VectorXd ys = Y.rowwise().squaredNorm();
            dense_.noalias() = -2.0 * X * Y.transpose();
            dense_.colwise() += xs;
            dense_.rowwise() += ys.transpose();
            dense_ = dense_.cwiseMax(0.0);
            max_ = dense_.maxCoeff();
        } else {
            // bounding-box upper bound, enough for a tolerance scale
            Eigen::VectorXd lo = X.colwise().minCoeff().cwiseMin(Y.colwise().minCoeff());
            Eigen::VectorXd hi = X.colwise().maxCoeff().cwiseMax(Y.colwise().maxCoeff());
            max_ = (hi - lo).squaredNorm();
        }
    }

    double at(int i, int j) const {
        if (dense_.size()) return dense_(i, j);
        return (X_.row(i) - Y_.row(j)).squaredNorm();
    }
    double max_cost() const { return max_; }

  private:
    const Eigen::MatrixXd& X_;
    const Eigen::MatrixXd& Y_;
    int m_ = 0, n_ = 0;
    Eigen::MatrixXd dense_;
    double max_ = 0.0;
};

// Spanning-tree basis for the transportation simplex. Nodes 0..m-1 are
// sources, m..m+n-1 targets; a basic arc (i,j) links i and m+j.
struct Basis {
    int m, n;
    std::vector<int> arc_i, arc_j;
    std::vector<double> flow;
    std::vector<std::vector<int>> adj; // node -> incident basic-arc slots
    std::vector<int> parent, parent_arc, order;
    std::vector<double> u, v;

    Basis(int m_, int n_) : m(m_), n(n_), adj((size_t)(m_ + n_)) {
        parent.resize((size_t)(m + n));
        parent_arc.resize((size_t)(m + n));
        order.reserve((size_t)(m + n));
        u.resize((size_t)m);
        v.resize((size_t)n);
    }

    int add_arc(int i, int j, double f) {
        int slot = (int)arc_i.size();
        arc_i.push_back(i);
        arc_j.push_back(j);
        flow.push_back(f);
        adj[(size_t)i].push_back(slot);
        adj[(size_t)(m + j)].push_back(slot);
        return slot;
    }

    void replace_arc(int slot, int i, int j) {
        auto drop = [&](std::vector<int>& a) { a.erase(std::find(a.begin(), a.end(), slot)); };
        drop(adj[(size_t)arc_i[(size_t)slot]]);
        drop(adj[(size_t)(m + arc_j[(size_t)slot])]);
        arc_i[(size_t)slot] = i;
        arc_j[(size_t)slot] = j;
        flow[(size_t)slot] = 0.0;
        adj[(size_t)i].push_back(slot);
        adj[(size_t)(m + j)].push_back(slot);
    }

    // BFS from node 0 rebuilds parents and the dual potentials
    // (u_i + v_j = c_ij on basic arcs, u_0 = 0).
    void refresh(const CostTable& cost) {
        order.clear();
        std::fill(parent.begin(), parent.end(), -2);
        parent[0] = -1;
        order.push_back(0);
        u[0] = 0.0;
        for (size_t head = 0; head < order.size(); ++head) {
            int x = order[head];
            for (int slot : adj[(size_t)x]) {
                int i = arc_i[(size_t)slot], j = arc_j[(size_t)slot];
                int y = (x == i) ? m + j : i;
                if (parent[(size_t)y] != -2) continue;
                parent[(size_t)y] = x;
                parent_arc[(size_t)y] = slot;
                if (y >= m)
                    v[(size_t)(y - m)] = cost.at(i, j) - u[(size_t)i];
                else
                    u[(size_t)y] = cost.at(i, j) - v[(size_t)j];
                order.push_back(y);
            }
        }
    }

    double reduced(const CostTable& cost, int i, int j) const {
        return cost.at(i, j) - u[(size_t)i] - v[(size_t)j];
    }
};

} // namespace

TransportPlan solve_plan(const DiscreteMeasure& src, const DiscreteMeasure& tgt) {
    if (src.points.rows() != src.weights.size() || tgt.points.rows() != tgt.weights.size())
        throw DimensionMismatch("points/weights length mismatch");
    if (src.size() == 0 || tgt.size() == 0) throw AllZeroDensity("empty discrete measure");
    if (src.dim() != tgt.dim()) throw DimensionMismatch("measures live in different dimensions");
    if ((src.weights.array() <= 0.0).any() || (tgt.weights.array() <= 0.0).any())
        throw NegativeDensity("discrete measure weights must be strictly positive");
    double sa = src.weights.sum(), sb = tgt.weights.sum();
    if (std::abs(sa - sb) > 1e-8)
        throw InfeasibleMarginals("marginal masses differ: " + std::to_string(sa) + " vs " +
                                  std::to_string(sb));

    const int m = (int)src.size(), n = (int)tgt.size();
    CostTable cost(src.points, tgt.points);
    const double opt_tol = 1e-9 * std::max(cost.max_cost(), 1.0);
    const double enter_tol = 0.1 * opt_tol;

    std::vector<double> a(src.weights.data(), src.weights.data() + m);
    std::vector<double> b(tgt.weights.data(), tgt.weights.data() + n);
    // exact balance so the north-west sweep closes without residue
    double scale = sa / sb;
    for (double& x : b) x *= scale;

    Basis basis(m, n);
    {
        int i = 0, j = 0;
        std::vector<double> ra = a, rb = b;
        while (true) {
            double f = std::min(ra[(size_t)i], rb[(size_t)j]);
            basis.add_arc(i, j, f);
            ra[(size_t)i] -= f;
            rb[(size_t)j] -= f;
            if (i == m - 1 && j == n - 1) break;
            if (i < m - 1 && (ra[(size_t)i] <= rb[(size_t)j] || j == n - 1))
                ++i;
            else
                ++j;
        }
    }

    const std::int64_t max_pivots = 50LL * m * n;
    const int block = std::max(64, (int)std::sqrt((double)m * (double)n));
    const std::int64_t arcs = (std::int64_t)m * n;
    std::int64_t scan_start = 0;
    int degenerate_streak = 0;
    const int bland_after = 64;

    std::vector<int> cyc_arcs;
    std::vector<int> cyc_sign;

    std::int64_t pivots = 0;
    for (;; ++pivots) {
        if (pivots > max_pivots)
            throw SolverStall("transportation simplex exceeded " + std::to_string(max_pivots) +
                              " pivots");
        basis.refresh(cost);

        int ei = -1, ej = -1;
        if (degenerate_streak >= bland_after) {
            // Bland: lowest-index arc with negative reduced cost
            for (std::int64_t t = 0; t < arcs; ++t) {
                int i = (int)(t / n), j = (int)(t % n);
                if (basis.reduced(cost, i, j) < -enter_tol) {
                    ei = i;
                    ej = j;
                    break;
                }
            }
        } else {
            double best = -enter_tol;
            std::int64_t seen = 0;
            std::int64_t t = scan_start;
            while (seen < arcs) {
                std::int64_t stop = std::min<std::int64_t>(seen + block, arcs);
                for (; seen < stop; ++seen, ++t) {
                    if (t == arcs) t = 0;
                    int i = (int)(t / n), j = (int)(t % n);
                    double r = basis.reduced(cost, i, j);
                    if (r < best) {
                        best = r;
                        ei = i;
                        ej = j;
                    }
                }
                if (ei >= 0) {
                    scan_start = t;
                    break;
                }
            }
        }
        if (ei < 0) break; // dual feasible

        // cycle: entering arc plus the tree path target-node -> source-node
        cyc_arcs.clear();
        cyc_sign.clear();
        {
            // mark path from ei to root
            std::vector<int>& par = basis.parent;
            std::vector<signed char> on_path((size_t)(m + n), 0);
            for (int x = ei; x != -1; x = par[(size_t)x]) on_path[(size_t)x] = 1;
            int lca = m + ej;
            while (!on_path[(size_t)lca]) lca = par[(size_t)lca];

            int sign = -1; // arc adjacent to entering at the target side
            for (int x = m + ej; x != lca; x = par[(size_t)x]) {
                cyc_arcs.push_back(basis.parent_arc[(size_t)x]);
                cyc_sign.push_back(sign);
                sign = -sign;
            }
            std::vector<int> up_arcs;
            for (int x = ei; x != lca; x = par[(size_t)x]) up_arcs.push_back(basis.parent_arc[(size_t)x]);
            sign = -1;
            for (int slot : up_arcs) {
                cyc_arcs.push_back(slot);
                cyc_sign.push_back(sign);
                sign = -sign;
            }
        }

        double theta = std::numeric_limits<double>::infinity();
        int leave = -1;
        for (size_t k = 0; k < cyc_arcs.size(); ++k) {
            if (cyc_sign[k] != -1) continue;
            double f = basis.flow[(size_t)cyc_arcs[k]];
            if (f < theta) {
                theta = f;
                leave = cyc_arcs[k];
            } else if (f == theta && cyc_arcs[k] < leave) {
                leave = cyc_arcs[k];
            }
        }
        if (leave < 0) throw SolverStall("transportation simplex lost the basis tree");

        for (size_t k = 0; k < cyc_arcs.size(); ++k)
            basis.flow[(size_t)cyc_arcs[k]] += cyc_sign[k] * theta;
        basis.replace_arc(leave, ei, ej);
        basis.flow[(size_t)leave] = theta;

        degenerate_streak = (theta <= 1e-16) ? degenerate_streak + 1 : 0;
    }

    TransportPlan plan;
    plan.source = src;
    plan.target = tgt;
    plan.cost = 0.0;
    double worst = 0.0;
    for (size_t k = 0; k < basis.flow.size(); ++k) {
        if (basis.flow[k] <= 0.0) continue;
        PlanEntry e{basis.arc_i[k], basis.arc_j[k], basis.flow[k]};
        plan.cost += e.mass * cost.at(e.i, e.j);
        plan.coupling.push_back(e);
    }
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) worst = std::min(worst, basis.reduced(cost, i, j));
    plan.max_dual_violation = -worst;
    if (plan.max_dual_violation > opt_tol)
        throw SolverStall("dual feasibility certificate failed");
    return plan;
}

double wasserstein(const DiscreteMeasure& src, const DiscreteMeasure& tgt) {
    return std::sqrt(std::max(0.0, solve_plan(src, tgt).cost));
}

TransportPlan brute_force_plan(const DiscreteMeasure& src, const DiscreteMeasure& tgt) {
    const Eigen::Index N = src.size();
    if (tgt.size() != N) throw UnequalWeights("brute force needs equal-size supports");
    if (N > 8) throw TooLarge("brute force enumerates permutations, capped at 8 points");
    double w = 1.0 / (double)N;
    for (Eigen::Index i = 0; i < N; ++i)
        if (std::abs(src.weights(i) - w) > 1e-12 || std::abs(tgt.weights(i) - w) > 1e-12)
            throw UnequalWeights("brute force needs uniform weights");
    if (src.dim() != tgt.dim()) throw DimensionMismatch("measures live in different dimensions");

    std::vector<int> perm((size_t)N), best_perm;
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (Eigen::Index i = 0; i < N; ++i)
            c += (src.points.row(i) - tgt.points.row(perm[(size_t)i])).squaredNorm();
        if (c < best) {
            best = c;
            best_perm = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));

    TransportPlan plan;
    plan.source = src;
    plan.target = tgt;
    plan.cost = best * w;
    for (Eigen::Index i = 0; i < N; ++i)
        plan.coupling.push_back({(int)i, best_perm[(size_t)i], w});
    return plan;
}

} // namespace ot
