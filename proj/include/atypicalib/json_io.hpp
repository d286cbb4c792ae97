#pragma once

#include "atypicalib/atypicality.hpp"
#include "atypicalib/conformal.hpp"
#include "atypicalib/metrics.hpp"
#include "atypicalib/recalibration.hpp"
#include "atypicalib/theorysim.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <variant>

namespace atypicalib {

using Json = nlohmann::json;

// Reals are written as JSON numbers with round-trip precision. JSON has no
// infinities, so +/-inf are written as the strings "inf" / "-inf" and NaN as
// null; the readers accept the same encodings.
Json real_to_json(double v);
double real_from_json(const Json &j);
Json reals_to_json(const std::vector<double> &v);
std::vector<double> reals_from_json(const Json &j);
Json matrix_to_json(const Matrix &m);
Matrix matrix_from_json(const Json &j);

Json to_json(const GmmModel &model);
Json to_json(const KnnModel &model);
GmmModel gmm_from_json(const Json &j);
KnnModel knn_from_json(const Json &j);

using AtypicalityModel = std::variant<GmmModel, KnnModel>;
AtypicalityModel atypicality_model_from_json(const Json &j);

/// A fitted recalibrator together with its class count.
struct Calibrator {
  std::variant<TemperatureModel, PerQuantileTsModel, AarModel, CfModel, GroupTsModel> model;
  Index n_classes = 0;

  std::string kind() const;
};

Json to_json(const Calibrator &calibrator);
Calibrator calibrator_from_json(const Json &j);

Json to_json(const ConformalModel &model);
ConformalModel conformal_from_json(const Json &j);

Json to_json(const GroupMetrics &metrics);
Json to_json(const QuantileGrid &grid);
Json to_json(const CoverageReport &report);

/// Stable text form used for every file the toolkit writes.
std::string dump_json(const Json &j);
Json load_json(const std::filesystem::path &path);
void save_json(const Json &j, const std::filesystem::path &path);

} // namespace atypicalib
