#include "ot/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ot/error.hpp"

namespace ot {

using nlohmann::json;

nlohmann::json mat_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Eigen::MatrixXd mat_from_json(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw ParseError(what + ": expected an array of rows");
    const Eigen::Index rows = (Eigen::Index)j.size();
    const Eigen::Index cols = (Eigen::Index)j[0].size();
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (!j[(size_t)i].is_array() || (Eigen::Index)j[(size_t)i].size() != cols)
            throw ParseError(what + ": ragged rows");
        for (Eigen::Index c = 0; c < cols; ++c) {
            const auto& e = j[(size_t)i][(size_t)c];
            if (!e.is_number()) throw ParseError(what + ": non-numeric entry");
            m(i, c) = e.get<double>();
        }
    }
    return m;
}

Eigen::VectorXd vec_from_json(const json& j, const std::string& what) {
    if (!j.is_array()) throw ParseError(what + ": expected an array");
    Eigen::VectorXd v((Eigen::Index)j.size());
    for (size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ParseError(what + ": non-numeric entry");
        v((Eigen::Index)i) = j[i].get<double>();
    }
    return v;
}

namespace {

json parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void dump_file(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << j.dump(2) << '\n';
}

} // namespace

nlohmann::json grid_to_json(const GridDensity& g) {
    json j;
    j["dim"] = g.dim;
    j["lo"] = g.lo;
    j["hi"] = g.hi;
    j["shape"] = g.shape;
    j["data"] = g.values;
    return j;
}

GridDensity grid_from_json(const json& j) {
    for (const char* key : {"dim", "lo", "hi", "shape", "data"})
        if (!j.contains(key)) throw ParseError(std::string("grid: missing key ") + key);
    GridDensity g;
    g.dim = j["dim"].get<int>();
    g.lo = j["lo"].get<std::vector<double>>();
    g.hi = j["hi"].get<std::vector<double>>();
    g.shape = j["shape"].get<std::vector<int>>();
    g.values = j["data"].get<std::vector<double>>();
    if ((int)g.lo.size() != g.dim || (int)g.hi.size() != g.dim || (int)g.shape.size() != g.dim)
        throw ParseError("grid: dim does not match lo/hi/shape lengths");
    g.validate_geometry();
    return g;
}

void save_grid(const GridDensity& g, const std::string& path) { dump_file(grid_to_json(g), path); }
GridDensity load_grid(const std::string& path) { return grid_from_json(parse_file(path)); }

nlohmann::json gaussian_to_json(const GaussianDensity& g) {
    json j;
    j["mean"] = vec_to_json(g.mean);
    j["cov"] = mat_to_json(g.cov);
    return j;
}

GaussianDensity gaussian_from_json(const json& j) {
    if (!j.contains("mean") || !j.contains("cov"))
        throw ParseError("gaussian: need mean and cov");
    GaussianDensity g;
    g.mean = vec_from_json(j["mean"], "gaussian mean");
    g.cov = mat_from_json(j["cov"], "gaussian cov");
    g.validate();
    return g;
}

void save_gaussian(const GaussianDensity& g, const std::string& path) {
    dump_file(gaussian_to_json(g), path);
}
GaussianDensity load_gaussian(const std::string& path) {
    return gaussian_from_json(parse_file(path));
}

nlohmann::json affine_to_json(const AffineMap& m) {
    json j;
    j["Gamma"] = mat_to_json(m.gamma_mat);
    j["gamma"] = vec_to_json(m.gamma_vec);
    return j;
}

AffineMap affine_from_json(const json& j) {
    if (!j.contains("Gamma") || !j.contains("gamma"))
        throw ParseError("affine map: need Gamma and gamma");
    AffineMap m;
    m.gamma_mat = mat_from_json(j["Gamma"], "Gamma");
    m.gamma_vec = vec_from_json(j["gamma"], "gamma");
    if (m.gamma_mat.rows() != m.gamma_vec.size())
        throw ParseError("affine map: Gamma/gamma size mismatch");
    return m;
}

void save_particles(const ParticleEnsemble& p, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw ParseError("cannot write " + path);
    for (int k = 0; k < p.dim; ++k) std::fprintf(f, "x%d,", k + 1);
    std::fprintf(f, "weight%s\n", p.density_values ? ",density" : "");
    for (Eigen::Index i = 0; i < p.points.rows(); ++i) {
        for (int k = 0; k < p.dim; ++k) std::fprintf(f, "%.17g,", p.points(i, k));
        std::fprintf(f, "%.17g", p.weights(i));
        if (p.density_values) std::fprintf(f, ",%.17g", (*p.density_values)(i));
        std::fprintf(f, "\n");
    }
    std::fclose(f);
}

ParticleEnsemble load_particles(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");

    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, ',')) out.push_back(tok);
        return out;
    };

    std::vector<std::string> header = split(line);
    int dim = 0;
    while (dim < (int)header.size() && header[(size_t)dim] == "x" + std::to_string(dim + 1)) ++dim;
    if (dim == 0 || dim >= (int)header.size() || header[(size_t)dim] != "weight")
        throw ParseError(path + ": header must be x1,...,xd,weight[,density]");
    bool has_density = (int)header.size() == dim + 2 && header[(size_t)dim + 1] == "density";
    if (!has_density && (int)header.size() != dim + 1)
        throw ParseError(path + ": unexpected trailing columns");

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells = split(line);
        if ((int)cells.size() != (int)header.size())
            throw ParseError(path + ": row has wrong column count");
        std::vector<double> vals;
        for (const auto& c : cells) {
            char* end = nullptr;
            double v = std::strtod(c.c_str(), &end);
            if (end == c.c_str()) throw ParseError(path + ": bad number '" + c + "'");
            vals.push_back(v);
        }
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw ParseError(path + ": no data rows");

    ParticleEnsemble p;
    p.dim = dim;
    p.points.resize((Eigen::Index)rows.size(), dim);
    p.weights.resize((Eigen::Index)rows.size());
    Eigen::VectorXd dens((Eigen::Index)rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        for (int k = 0; k < dim; ++k) p.points((Eigen::Index)i, k) = rows[i][(size_t)k];
        p.weights((Eigen::Index)i) = rows[i][(size_t)dim];
        if (has_density) dens((Eigen::Index)i) = rows[i][(size_t)dim + 1];
    }
    if (has_density) p.density_values = dens;
    p.validate();
    return p;
}

std::vector<LtiSystem> load_lti_systems(const std::string& path) {
    json j = parse_file(path);
    auto one = [](const json& o) {
        if (!o.contains("A") || !o.contains("B")) throw ParseError("system: need A and B");
        LtiSystem s;
        s.a_mat = mat_from_json(o["A"], "A");
        s.b_mat = mat_from_json(o["B"], "B");
        s.validate();
        return s;
    };
    std::vector<LtiSystem> out;
    if (j.is_array())
        for (const auto& o : j) out.push_back(one(o));
    else
        out.push_back(one(j));
    return out;
}

LinearGaussianModel load_linear_model(const std::string& path) {
    json j = parse_file(path);
    for (const char* key : {"A", "C", "mean0", "P0"})
        if (!j.contains(key)) throw ParseError(std::string("model: missing key ") + key);
    LinearGaussianModel m;
    m.a_mat = mat_from_json(j["A"], "A");
    m.c_mat = mat_from_json(j["C"], "C");
    m.initial.mean = vec_from_json(j["mean0"], "mean0");
    m.initial.cov = mat_from_json(j["P0"], "P0");
    m.validate();
    return m;
}

FreePair load_free_pair(const std::string& path) {
    json j = parse_file(path);
    if (!j.contains("R") || !j.contains("r")) throw ParseError("free pair: need R and r");
    FreePair fp;
    fp.R = mat_from_json(j["R"], "R");
    fp.r = vec_from_json(j["r"], "r");
    return fp;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << text;
}

} // namespace ot
