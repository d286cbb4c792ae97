#include "atypicalib/json_io.hpp"

#include "atypicalib/datakit.hpp"

#include <cmath>
#include <limits>

namespace atypicalib {

namespace {

const Json &field(const Json &j, const char *key) {
  if (!j.is_object() || !j.contains(key)) {
    throw FormatError(std::string("json: missing field '") + key + "'");
  }
  return j.at(key);
}

template <typename T>
T get(const Json &j, const char *key) {
  try {
    return field(j, key).get<T>();
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("json: field '") + key + "': " + e.what());
  }
}

std::string kind_of(const Json &j) {
  return get<std::string>(j, "kind");
}

} // namespace

Json real_to_json(double v) {
  if (std::isnan(v)) {
    return nullptr;
  }
  if (std::isinf(v)) {
    return v > 0 ? "inf" : "-inf";
  }
  return v;
}

double real_from_json(const Json &j) {
  if (j.is_null()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw FormatError("json: '" + s + "' is not a real");
  }
  if (!j.is_number()) {
    throw FormatError("json: expected a real, got " + std::string(j.type_name()));
  }
  return j.get<double>();
}

Json reals_to_json(const std::vector<double> &v) {
  Json out = Json::array();
  for (const double x : v) {
    out.push_back(real_to_json(x));
  }
  return out;
}

std::vector<double> reals_from_json(const Json &j) {
  if (!j.is_array()) {
    throw FormatError("json: expected an array of reals");
  }
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto &x : j) {
    out.push_back(real_from_json(x));
  }
  return out;
}

namespace {

Json vector_to_json(const VectorXd &v) {
  return reals_to_json(std::vector<double>(v.data(), v.data() + v.size()));
}

VectorXd vector_from_json(const Json &j) {
  const auto v = reals_from_json(j);
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

} // namespace

Json matrix_to_json(const Matrix &m) {
  Json out = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) {
      row.push_back(real_to_json(m(i, j)));
    }
    out.push_back(std::move(row));
  }
  return out;
}

Matrix matrix_from_json(const Json &j) {
  if (!j.is_array()) {
    throw FormatError("json: expected a nested array matrix");
  }
  const auto rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 && j[0].is_array() ? static_cast<Index>(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto row = reals_from_json(j[static_cast<std::size_t>(i)]);
    if (static_cast<Index>(row.size()) != cols) {
      throw ShapeError("json: ragged matrix");
    }
    for (Index c = 0; c < cols; ++c) {
      m(i, c) = row[static_cast<std::size_t>(c)];
    }
  }
  return m;
}

// ---------------------------------------------------------------------------

Json to_json(const GmmModel &model) {
  return Json{{"kind", "gmm"},
              {"dim", model.dim()},
              {"n_classes", model.n_classes()},
              {"class_means", matrix_to_json(model.class_means)},
              {"chol_factor", matrix_to_json(model.chol_factor)},
              {"log_det", real_to_json(model.log_det)},
              {"ridge", real_to_json(model.ridge)},
              {"class_log_priors", vector_to_json(model.class_log_priors)}};
}

GmmModel gmm_from_json(const Json &j) {
  if (kind_of(j) != "gmm") {
    throw FormatError("json: not a gmm model");
  }
  GmmModel model;
  model.class_means = matrix_from_json(field(j, "class_means"));
  model.chol_factor = matrix_from_json(field(j, "chol_factor"));
  model.log_det = real_from_json(field(j, "log_det"));
  model.ridge = real_from_json(field(j, "ridge"));
  model.class_log_priors = vector_from_json(field(j, "class_log_priors"));
  const Index d = model.class_means.cols();
  if (model.chol_factor.rows() != d || model.chol_factor.cols() != d ||
      model.class_log_priors.size() != model.class_means.rows()) {
    throw ShapeError("json: gmm fields have inconsistent shapes");
  }
  return model;
}

Json to_json(const KnnModel &model) {
  return Json{{"kind", "knn"},
              {"k", model.k},
              {"mode", model.mode == KnnMode::nearest ? "nearest" : "mean_of_k"},
              {"reference", matrix_to_json(model.reference)}};
}

KnnModel knn_from_json(const Json &j) {
  if (kind_of(j) != "knn") {
    throw FormatError("json: not a knn model");
  }
  const auto mode = get<std::string>(j, "mode");
  if (mode != "nearest" && mode != "mean_of_k") {
    throw FormatError("json: unknown knn mode '" + mode + "'");
  }
  return make_knn(matrix_from_json(field(j, "reference")), get<Index>(j, "k"),
                  mode == "nearest" ? KnnMode::nearest : KnnMode::mean_of_k);
}

AtypicalityModel atypicality_model_from_json(const Json &j) {
  const auto kind = kind_of(j);
  if (kind == "gmm") {
    return gmm_from_json(j);
  }
  if (kind == "knn") {
    return knn_from_json(j);
  }
  throw FormatError("json: unknown atypicality model kind '" + kind + "'");
}

// ---------------------------------------------------------------------------

std::string Calibrator::kind() const {
  struct Visitor {
    std::string operator()(const TemperatureModel &) const { return "ts"; }
    std::string operator()(const PerQuantileTsModel &) const { return "per_quantile_ts"; }
    std::string operator()(const AarModel &) const { return "aar"; }
    std::string operator()(const CfModel &) const { return "cf"; }
    std::string operator()(const GroupTsModel &) const { return "group_ts"; }
  };
  return std::visit(Visitor{}, model);
}

Json to_json(const Calibrator &calibrator) {
  Json j{{"kind", calibrator.kind()}, {"n_classes", calibrator.n_classes}};
  std::visit(
      [&](const auto &m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, TemperatureModel>) {
          j["tau"] = real_to_json(m.tau);
        } else if constexpr (std::is_same_v<T, PerQuantileTsModel>) {
          j["atyp_edges"] = reals_to_json(m.atyp_edges);
          j["taus"] = reals_to_json(m.taus);
          j["global_tau"] = real_to_json(m.global_tau);
        } else if constexpr (std::is_same_v<T, AarModel>) {
          j["c0"] = real_to_json(m.c0);
          j["c1"] = real_to_json(m.c1);
          j["c2"] = real_to_json(m.c2);
          j["s"] = vector_to_json(m.s);
          j["a_mean"] = real_to_json(m.a_mean);
          j["a_std"] = real_to_json(m.a_std);
        } else if constexpr (std::is_same_v<T, CfModel>) {
          j["w"] = vector_to_json(m.w);
        } else {
          j["group_ids"] = m.group_ids;
          j["taus"] = reals_to_json(m.taus);
          j["fallback_tau"] = real_to_json(m.fallback_tau);
        }
      },
      calibrator.model);
  return j;
}

Calibrator calibrator_from_json(const Json &j) {
  Calibrator c;
  c.n_classes = get<Index>(j, "n_classes");
  const auto kind = kind_of(j);
  if (kind == "ts") {
    c.model = TemperatureModel{real_from_json(field(j, "tau"))};
  } else if (kind == "per_quantile_ts") {
    PerQuantileTsModel m;
    m.atyp_edges = reals_from_json(field(j, "atyp_edges"));
    m.taus = reals_from_json(field(j, "taus"));
    m.global_tau = real_from_json(field(j, "global_tau"));
    if (m.atyp_edges.size() != m.taus.size() + 1) {
      throw ShapeError("json: per_quantile_ts needs one more edge than temperatures");
    }
    c.model = std::move(m);
  } else if (kind == "aar") {
    AarModel m;
    m.c0 = real_from_json(field(j, "c0"));
    m.c1 = real_from_json(field(j, "c1"));
    m.c2 = real_from_json(field(j, "c2"));
    m.s = vector_from_json(field(j, "s"));
    m.a_mean = real_from_json(field(j, "a_mean"));
    m.a_std = real_from_json(field(j, "a_std"));
    c.model = std::move(m);
  } else if (kind == "cf") {
    c.model = CfModel{vector_from_json(field(j, "w"))};
  } else if (kind == "group_ts") {
    GroupTsModel m;
    m.group_ids = get<std::vector<std::uint32_t>>(j, "group_ids");
    m.taus = reals_from_json(field(j, "taus"));
    m.fallback_tau = real_from_json(field(j, "fallback_tau"));
    if (m.group_ids.size() != m.taus.size() || !std::is_sorted(m.group_ids.begin(), m.group_ids.end())) {
      throw FormatError("json: group_ts needs sorted group_ids matching taus");
    }
    c.model = std::move(m);
  } else {
    throw FormatError("json: unknown calibrator kind '" + kind + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------

Json to_json(const ConformalModel &model) {
  Json j{{"method", method_name(model.method)},
         {"alpha", real_to_json(model.alpha)},
         {"k_reg", model.k_reg},
         {"lambda_reg", real_to_json(model.lambda_reg)}};
  if (is_grouped(model.method)) {
    j["group_q"] = reals_to_json(model.group_q);
    j["conf_edges"] = reals_to_json(model.conf_edges);
    j["atyp_edges"] = reals_to_json(model.atyp_edges);
  } else {
    j["q_hat"] = real_to_json(model.q_hat);
  }
  return j;
}

ConformalModel conformal_from_json(const Json &j) {
  ConformalModel model;
  try {
    model.method = parse_method(get<std::string>(j, "method"));
  } catch (const ArgumentError &e) {
    throw FormatError(e.what());
  }
  model.alpha = real_from_json(field(j, "alpha"));
  model.k_reg = get<Index>(j, "k_reg");
  model.lambda_reg = real_from_json(field(j, "lambda_reg"));
  if (is_grouped(model.method)) {
    model.group_q = reals_from_json(field(j, "group_q"));
    model.conf_edges = reals_from_json(field(j, "conf_edges"));
    model.atyp_edges = reals_from_json(field(j, "atyp_edges"));
    if (model.conf_edges.size() < 2 || model.atyp_edges.size() < 2 ||
        model.group_q.size() != (model.conf_edges.size() - 1) * (model.atyp_edges.size() - 1)) {
      throw ShapeError("json: group_q does not match the edge counts");
    }
  } else {
    model.q_hat = real_from_json(field(j, "q_hat"));
  }
  return model;
}

// ---------------------------------------------------------------------------

Json to_json(const GroupMetrics &metrics) {
  Json groups = Json::array();
  for (std::size_t g = 0; g < metrics.values.size(); ++g) {
    groups.push_back({{"index", g},
                      {"lower", real_to_json(metrics.edges[g])},
                      {"upper", real_to_json(metrics.edges[g + 1])},
                      {"count", metrics.counts[g]},
                      {"value", real_to_json(metrics.values[g])}});
  }
  return Json{{"metric", metric_name(metrics.metric)}, {"groups", std::move(groups)}};
}

Json to_json(const QuantileGrid &grid) {
  Json cells = Json::array();
  for (Index ci = 0; ci < grid.conf_groups(); ++ci) {
    for (Index ai = 0; ai < grid.atyp_groups(); ++ai) {
      const auto &cell = grid.cell(ci, ai);
      cells.push_back({{"conf_index", ci},
                       {"atyp_index", ai},
                       {"count", cell.count},
                       {"accuracy", real_to_json(cell.accuracy)},
                       {"mean_confidence", real_to_json(cell.mean_confidence)},
                       {"gap", real_to_json(cell.gap)}});
    }
  }
  return Json{{"conf_edges", reals_to_json(grid.conf_edges)},
              {"atyp_edges", reals_to_json(grid.atyp_edges)},
              {"cells", std::move(cells)}};
}

Json to_json(const CoverageReport &report) {
  Json groups = Json::array();
  for (std::size_t g = 0; g < report.groups.size(); ++g) {
    groups.push_back({{"index", g},
                      {"lower", real_to_json(report.edges[g])},
                      {"upper", real_to_json(report.edges[g + 1])},
                      {"count", report.groups[g].count},
                      {"coverage", real_to_json(report.groups[g].coverage)},
                      {"mean_size", real_to_json(report.groups[g].mean_size)}});
  }
  return Json{{"groups", std::move(groups)}};
}

// ---------------------------------------------------------------------------

std::string dump_json(const Json &j) { return j.dump(2) + "\n"; }

Json load_json(const std::filesystem::path &path) {
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("json: cannot parse '" + path.string() + "': " + e.what());
  }
}

void save_json(const Json &j, const std::filesystem::path &path) { write_file(path, dump_json(j)); }

} // namespace atypicalib
