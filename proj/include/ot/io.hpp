#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "ot/gaussian_ot.hpp"
#include "ot/lti_feedback.hpp"
#include "ot/measures.hpp"
#include "ot/refine.hpp"

namespace ot {

nlohmann::json mat_to_json(const Eigen::MatrixXd& m);
nlohmann::json vec_to_json(const Eigen::VectorXd& v);
Eigen::MatrixXd mat_from_json(const nlohmann::json& j, const std::string& what);
Eigen::VectorXd vec_from_json(const nlohmann::json& j, const std::string& what);

/// {"dim": d, "lo": [...], "hi": [...], "shape": [...], "data": [...]}
/// data row-major, last axis fastest.
nlohmann::json grid_to_json(const GridDensity& g);
GridDensity grid_from_json(const nlohmann::json& j);
void save_grid(const GridDensity& g, const std::string& path);
GridDensity load_grid(const std::string& path);

/// {"mean": [...], "cov": [[...]]}
nlohmann::json gaussian_to_json(const GaussianDensity& g);
GaussianDensity gaussian_from_json(const nlohmann::json& j);
void save_gaussian(const GaussianDensity& g, const std::string& path);
GaussianDensity load_gaussian(const std::string& path);

/// {"Gamma": [[...]], "gamma": [...]}
nlohmann::json affine_to_json(const AffineMap& m);
AffineMap affine_from_json(const nlohmann::json& j);

/// CSV, header x1,...,xd,weight[,density], 17 significant digits.
void save_particles(const ParticleEnsemble& p, const std::string& path);
ParticleEnsemble load_particles(const std::string& path);

/// {"A": [[...]], "B": [[...]]} or a list of such.
std::vector<LtiSystem> load_lti_systems(const std::string& path);

/// {"A": [[...]], "C": [[...]], "mean0": [...], "P0": [[...]]}
LinearGaussianModel load_linear_model(const std::string& path);

/// {"R": [[...]], "r": [...]}
FreePair load_free_pair(const std::string& path);

void write_text(const std::string& path, const std::string& text);

} // namespace ot
