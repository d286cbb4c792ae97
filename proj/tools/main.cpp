// atypicalib command-line interface.
//
// Exit codes: 0 success, 1 runtime or numerical error (including malformed
// input files), 2 usage error (bad flags, missing input files).

#include "atypicalib/atypicality.hpp"
#include "atypicalib/conformal.hpp"
#include "atypicalib/datakit.hpp"
#include "atypicalib/json_io.hpp"
#include "atypicalib/metrics.hpp"
#include "atypicalib/recalibration.hpp"
#include "atypicalib/theorysim.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace atypicalib;

namespace {

class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// Tracks the inputs and parameters of one invocation for its manifest.
struct Run {
  std::string command;
  CLI::App *sub = nullptr;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;
  std::vector<std::string> outputs;

  std::string load(const std::string &path) {
    if (path.empty()) {
      throw UsageError(command + ": missing input path");
    }
    if (!fs::exists(path)) {
      throw UsageError(command + ": input file '" + path + "' does not exist");
    }
    std::string bytes = read_file(path);
    inputs.emplace_back(path, hex64(fnv1a64(bytes)));
    return bytes;
  }

  Matrix matrix(const std::string &path) {
    const std::string bytes = load(path);
    return bytes.compare(0, 4, "ATYM") == 0 ? decode_matrix_binary(bytes) : decode_matrix_csv(bytes);
  }

  Labels labels(const std::string &path) {
    const std::string bytes = load(path);
    if (bytes.compare(0, 4, "ATYL") == 0) {
      return decode_labels_binary(bytes);
    }
    const Matrix m = decode_matrix_csv(bytes);
    if (m.rows() > 0 && m.cols() != 1) {
      throw ShapeError("labels csv: expected a single column");
    }
    Labels out(static_cast<std::size_t>(m.rows()));
    for (Index i = 0; i < m.rows(); ++i) {
      const double v = m(i, 0);
      if (v < 0 || v != std::floor(v)) {
        throw DataError("labels csv: '" + fmt_real(v) + "' is not a class index");
      }
      out[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(v);
    }
    return out;
  }

  VectorXd vector(const std::string &path) {
    const Matrix m = matrix(path);
    if (m.cols() == 1) {
      return m.col(0);
    }
    if (m.rows() == 1) {
      return m.row(0).transpose();
    }
    throw ShapeError("'" + path + "' must hold a single column of values");
  }

  Json json(const std::string &path) {
    const std::string bytes = load(path);
    try {
      return Json::parse(bytes);
    } catch (const nlohmann::json::exception &e) {
      throw FormatError("cannot parse '" + path + "': " + e.what());
    }
  }

  /// Probabilities from --probs, or softmax of --logits.
  Matrix probs(const std::string &probs_path, const std::string &logits_path) {
    if (!probs_path.empty()) {
      return matrix(probs_path);
    }
    if (!logits_path.empty()) {
      return softmax_rows(matrix(logits_path));
    }
    throw UsageError(command + ": give --probs or --logits");
  }

  void write_text(const std::string &path, const std::string &text) {
    write_file(path, text);
    outputs.push_back(path);
  }

  void write_matrix_out(const std::string &path, const Matrix &m) {
    write_matrix(m, path, format_for_path(path));
    outputs.push_back(path);
  }

  void write_json(const std::string &path, const Json &j) { write_text(path, dump_json(j)); }

  /// <first output>.manifest.json
  void write_manifest() {
    if (outputs.empty()) {
      return;
    }
    Json params = Json::object();
    for (const CLI::Option *opt : sub->get_options()) {
      const std::string name = opt->get_name();
      if (name == "--help" || name == "-h" || name.empty()) {
        continue;
      }
      if (opt->count() > 0) {
        const auto &res = opt->results();
        std::string joined;
        for (std::size_t i = 0; i < res.size(); ++i) {
          joined += (i ? "," : "") + res[i];
        }
        params[name] = joined;
      } else {
        params[name] = opt->get_default_str();
      }
    }
    Json in = Json::array();
    for (const auto &[path, digest] : inputs) {
      in.push_back({{"path", path}, {"fnv1a64", digest}});
    }
    const Json manifest{{"command", command},     {"parameters", params}, {"inputs", in},
                        {"outputs", outputs},     {"seed", seed},         {"tool", "atypicalib"},
                        {"version", ATYPICALIB_VERSION}};
    write_file(outputs.front() + ".manifest.json", dump_json(manifest));
  }
};

Matrix as_column(const VectorXd &v) {
  Matrix m(v.size(), 1);
  m.col(0) = v;
  return m;
}

void require(bool condition, const std::string &message) {
  if (!condition) {
    throw UsageError(message);
  }
}

std::string csv_edges_row(const std::vector<double> &edges, std::size_t g) {
  return fmt_real(edges[g]) + "," + fmt_real(edges[g + 1]);
}

// ---------------------------------------------------------------------------

struct FitAtypArgs {
  std::string method, embeddings, labels, out, priors = "empirical", mode = "mean";
  Index classes = 0, k = 5;
  std::optional<double> ridge;
};

void cmd_fit_atypicality(Run &run, const FitAtypArgs &a) {
  const Matrix x = run.matrix(a.embeddings);
  if (a.method == "gmm") {
    require(!a.labels.empty(), "fit-atypicality: --labels is required for gmm");
    const Labels y = run.labels(a.labels);
    GmmOptions opt;
    opt.ridge = a.ridge;
    opt.priors = a.priors == "uniform" ? PriorMode::uniform : PriorMode::empirical;
    const Index classes = a.classes > 0 ? a.classes : infer_n_classes(y);
    run.write_json(a.out, to_json(fit_gmm(x, y, classes, opt)));
  } else {
    const KnnMode mode = a.mode == "nearest" ? KnnMode::nearest : KnnMode::mean_of_k;
    if (a.k > x.rows() || a.k < 1) {
      throw UsageError("fit-atypicality: --k must lie in [1, " + std::to_string(x.rows()) + "]");
    }
    run.write_json(a.out, to_json(make_knn(x, a.k, mode)));
  }
}

struct ScoreArgs {
  std::string model, embeddings, out, variant = "class";
};

void cmd_score_atypicality(Run &run, const ScoreArgs &a, unsigned threads) {
  const Json j = run.json(a.model);
  const auto model = atypicality_model_from_json(j);
  const Matrix x = run.matrix(a.embeddings);
  VectorXd scores;
  if (const auto *gmm = std::get_if<GmmModel>(&model)) {
    scores = score_gmm(*gmm, x, a.variant == "marginal" ? GmmScore::marginal : GmmScore::class_conditional, threads);
  } else {
    scores = knn_atypicality(std::get<KnnModel>(model), x, threads);
  }
  run.write_matrix_out(a.out, as_column(scores));
}

struct ClassAtypArgs {
  std::string train_labels, labels, out;
  Index classes = 0;
};

void cmd_class_atypicality(Run &run, const ClassAtypArgs &a) {
  const Labels train = run.labels(a.train_labels);
  const Index classes = a.classes > 0 ? a.classes : infer_n_classes(train);
  const ClassPrior prior = class_atypicality(train, classes);
  if (prior.has_unseen_class) {
    warn("class-atypicality: some classes never occur in training; their atypicality is +inf");
  }
  VectorXd out = prior.a_y;
  if (!a.labels.empty()) {
    const Labels y = run.labels(a.labels);
    out.resize(static_cast<Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (static_cast<Index>(y[i]) >= classes) {
        throw DataError("class-atypicality: label outside the training classes");
      }
      out(static_cast<Index>(i)) = prior.a_y(y[i]);
    }
  }
  if (!out.allFinite()) {
    throw DataError("class-atypicality: infinite atypicality for unseen classes cannot be written; "
                    "pass --classes equal to the observed classes");
  }
  run.write_matrix_out(a.out, as_column(out));
}

struct CalibrateArgs {
  std::string method, logits, probs, labels, atypicality, groups, out;
  Index bins = 5;
};

void cmd_calibrate(Run &run, const CalibrateArgs &a) {
  Calibrator cal;
  if (a.method == "cf") {
    const Matrix p = run.probs(a.probs, a.logits);
    cal.n_classes = p.cols();
    cal.model = fit_cf(p);
    run.write_json(a.out, to_json(cal));
    return;
  }
  require(!a.logits.empty(), "calibrate: --logits is required");
  require(!a.labels.empty(), "calibrate: --labels is required");
  const Matrix logits = run.matrix(a.logits);
  const Labels labels = run.labels(a.labels);
  cal.n_classes = logits.cols();
  const double before = nll(softmax_rows(logits), labels);
  Matrix after;
  if (a.method == "ts") {
    const auto m = fit_ts(logits, labels);
    after = apply_ts(m, logits);
    cal.model = m;
  } else if (a.method == "aar" || a.method == "quantile-ts") {
    require(!a.atypicality.empty(), "calibrate: --method " + a.method + " requires --atypicality");
    const VectorXd atyp = run.vector(a.atypicality);
    if (a.method == "aar") {
      const auto fit = fit_aar(logits, labels, atyp);
      after = apply_aar(fit.model, logits, atyp);
      cal.model = fit.model;
    } else {
      require(a.bins >= 1, "calibrate: --bins must be at least 1");
      const auto m = fit_ts_per_quantile(logits, labels, atyp, a.bins);
      after = apply_ts_per_quantile(m, logits, atyp);
      cal.model = m;
    }
  } else if (a.method == "group-ts") {
    require(!a.groups.empty(), "calibrate: --method group-ts requires --groups");
    const Labels groups = run.labels(a.groups);
    const auto m = fit_group_ts(logits, labels, groups);
    after = apply_group_ts(m, logits, groups);
    cal.model = m;
  }
  std::cout << "calibration nll: " << fmt_real(before) << " -> " << fmt_real(nll(after, labels)) << "\n";
  run.write_json(a.out, to_json(cal));
}

struct ApplyArgs {
  std::string calibrator, logits, probs, atypicality, groups, out;
};

void cmd_apply(Run &run, const ApplyArgs &a) {
  const Calibrator cal = calibrator_from_json(run.json(a.calibrator));
  Matrix out;
  if (const auto *cf = std::get_if<CfModel>(&cal.model)) {
    out = apply_cf(*cf, run.probs(a.probs, a.logits));
  } else {
    require(!a.logits.empty(), "apply: --logits is required");
    const Matrix logits = run.matrix(a.logits);
    if (cal.n_classes != logits.cols()) {
      throw ShapeError("apply: calibrator expects " + std::to_string(cal.n_classes) + " classes, logits have " +
                       std::to_string(logits.cols()));
    }
    if (const auto *ts = std::get_if<TemperatureModel>(&cal.model)) {
      out = apply_ts(*ts, logits);
    } else if (const auto *pq = std::get_if<PerQuantileTsModel>(&cal.model)) {
      require(!a.atypicality.empty(), "apply: per_quantile_ts requires --atypicality");
      out = apply_ts_per_quantile(*pq, logits, run.vector(a.atypicality));
    } else if (const auto *aar = std::get_if<AarModel>(&cal.model)) {
      require(!a.atypicality.empty(), "apply: aar requires --atypicality");
      out = apply_aar(*aar, logits, run.vector(a.atypicality));
    } else {
      require(!a.groups.empty(), "apply: group_ts requires --groups");
      out = apply_group_ts(std::get<GroupTsModel>(cal.model), logits, run.labels(a.groups));
    }
  }
  run.write_matrix_out(a.out, out);
}

struct ConformalFitArgs {
  std::string method, probs, logits, labels, atypicality, out;
  double alpha = 0.05;
  Index groups = 6, min_cell = 20;
  std::vector<double> lambda_grid{0.001, 0.01, 0.1, 0.2, 0.5};
};

void cmd_conformal_fit(Run &run, const ConformalFitArgs &a) {
  require(a.alpha > 0.0 && a.alpha < 1.0, "conformal fit: --alpha must lie in (0, 1)");
  require(a.groups >= 1, "conformal fit: --groups must be at least 1");
  const ConformalMethod method = parse_method(a.method);
  require(!a.labels.empty(), "conformal fit: --labels is required");
  const Matrix p = run.probs(a.probs, a.logits);
  const Labels y = run.labels(a.labels);
  RapsOptions raps{a.lambda_grid, run.seed};
  ConformalModel model;
  switch (method) {
  case ConformalMethod::aps:
    model = fit_aps(p, y, a.alpha);
    break;
  case ConformalMethod::raps:
    model = fit_raps(p, y, a.alpha, raps);
    break;
  default: {
    require(!a.atypicality.empty(), "conformal fit: --method " + a.method + " requires --atypicality");
    AaOptions opt{a.groups, a.min_cell, raps};
    model = fit_aa(p, y, run.vector(a.atypicality), a.alpha,
                   method == ConformalMethod::aa_aps ? ConformalMethod::aps : ConformalMethod::raps, opt);
  }
  }
  run.write_json(a.out, to_json(model));
}

struct ConformalPredictArgs {
  std::string model, probs, logits, atypicality, labels, out, report;
  Index report_groups = 1;
};

void cmd_conformal_predict(Run &run, const ConformalPredictArgs &a, unsigned threads) {
  const ConformalModel model = conformal_from_json(run.json(a.model));
  const Matrix p = run.probs(a.probs, a.logits);
  std::optional<VectorXd> atyp;
  if (!a.atypicality.empty()) {
    atyp = run.vector(a.atypicality);
  }
  require(!is_grouped(model.method) || atyp.has_value(),
          "conformal predict: method " + method_name(model.method) + " requires --atypicality");
  std::optional<Labels> labels;
  if (!a.labels.empty()) {
    labels = run.labels(a.labels);
    if (static_cast<Index>(labels->size()) != p.rows()) {
      throw ShapeError("conformal predict: label count does not match the number of rows");
    }
  }
  const auto sets = predict_sets(model, p, atyp, threads);
  std::string csv = "index,size,members,contains_label\n";
  for (std::size_t i = 0; i < sets.size(); ++i) {
    std::string members;
    for (std::size_t m = 0; m < sets[i].size(); ++m) {
      members += (m ? "," : "") + std::to_string(sets[i][m]);
    }
    csv += std::to_string(i) + "," + std::to_string(sets[i].size()) + ",\"" + members + "\",";
    csv += labels ? (set_contains(sets[i], static_cast<Index>((*labels)[i])) ? "1" : "0") : "";
    csv += "\n";
  }
  run.write_text(a.out, csv);
  if (!a.report.empty()) {
    require(labels.has_value(), "conformal predict: --report needs --labels");
    const auto report =
        atyp ? coverage_report(sets, *labels, atyp, a.report_groups) : coverage_report(sets, *labels);
    std::string rep = "group,lower,upper,count,coverage,mean_size\n";
    for (std::size_t g = 0; g < report.groups.size(); ++g) {
      const auto &e = report.groups[g];
      rep += std::to_string(g) + "," + csv_edges_row(report.edges, g) + "," + std::to_string(e.count) + "," +
             fmt_real(e.coverage) + "," + fmt_real(e.mean_size) + "\n";
    }
    run.write_text(a.report, rep);
  }
}

struct EvaluateArgs {
  std::string probs, logits, labels, atypicality, out, json;
  Index groups = 5, bins = 10;
};

void cmd_evaluate(Run &run, const EvaluateArgs &a) {
  require(a.groups >= 1 && a.bins >= 1, "evaluate: --groups and --bins must be at least 1");
  require(!a.labels.empty(), "evaluate: --labels is required");
  const Matrix p = run.probs(a.probs, a.logits);
  const Labels y = run.labels(a.labels);
  const std::vector<Metric> metrics{Metric::ece, Metric::rmsce, Metric::accuracy, Metric::nll};
  std::string csv = "group,lower,upper,count,ece,rmsce,accuracy,nll\n";
  Json j{{"global", Json::object()}, {"groups", Json::array()}};
  csv += "all,-inf,inf," + std::to_string(p.rows());
  for (const Metric m : metrics) {
    const double v = evaluate_metric(m, p, y, a.bins);
    csv += "," + fmt_real(v);
    j["global"][metric_name(m)] = real_to_json(v);
  }
  j["global"]["count"] = p.rows();
  csv += "\n";
  if (!a.atypicality.empty()) {
    const VectorXd atyp = run.vector(a.atypicality);
    std::vector<GroupMetrics> per;
    for (const Metric m : metrics) {
      per.push_back(groupwise(m, p, y, atyp, a.groups, a.bins));
    }
    for (std::size_t g = 0; g < per.front().counts.size(); ++g) {
      csv += std::to_string(g) + "," + csv_edges_row(per.front().edges, g) + "," + std::to_string(per.front().counts[g]);
      Json row{{"index", g},
               {"lower", real_to_json(per.front().edges[g])},
               {"upper", real_to_json(per.front().edges[g + 1])},
               {"count", per.front().counts[g]}};
      for (const auto &gm : per) {
        csv += "," + fmt_real(gm.values[g]);
        row[metric_name(gm.metric)] = real_to_json(gm.values[g]);
      }
      csv += "\n";
      j["groups"].push_back(row);
    }
  }
  run.write_text(a.out, csv);
  if (!a.json.empty()) {
    run.write_json(a.json, j);
  }
}

struct ReportArgs {
  std::string probs, logits, labels, atypicality, out, json;
  Index conf_groups = 6, atyp_groups = 6;
};

void cmd_report(Run &run, const ReportArgs &a) {
  require(a.conf_groups >= 1 && a.atyp_groups >= 1, "report: group counts must be at least 1");
  require(!a.labels.empty() && !a.atypicality.empty(), "report: --labels and --atypicality are required");
  const Matrix p = run.probs(a.probs, a.logits);
  const Labels y = run.labels(a.labels);
  const VectorXd atyp = run.vector(a.atypicality);
  const QuantileGrid grid = grid_report(p, y, atyp, a.conf_groups, a.atyp_groups);
  std::string csv = "conf_index,atyp_index,conf_lower,conf_upper,atyp_lower,atyp_upper,count,accuracy,mean_confidence,gap\n";
  for (Index ci = 0; ci < grid.conf_groups(); ++ci) {
    for (Index ai = 0; ai < grid.atyp_groups(); ++ai) {
      const auto &c = grid.cell(ci, ai);
      csv += std::to_string(ci) + "," + std::to_string(ai) + "," +
             csv_edges_row(grid.conf_edges, static_cast<std::size_t>(ci)) + "," +
             csv_edges_row(grid.atyp_edges, static_cast<std::size_t>(ai)) + "," + std::to_string(c.count) + "," +
             fmt_real(c.accuracy) + "," + fmt_real(c.mean_confidence) + "," + fmt_real(c.gap) + "\n";
    }
  }
  run.write_text(a.out, csv);
  if (!a.json.empty()) {
    run.write_json(a.json, to_json(grid));
  }
}

struct TheoryArgs {
  Index d = 50, n = 500, n_test = 20000, K = 5, trials = 50;
  double beta_norm = 1.0;
  std::string estimator = "indicator", out, per_trial;
};

void cmd_theory_sim(Run &run, const TheoryArgs &a, unsigned threads) {
  if (a.d >= a.n) {
    throw UsageError("theory-sim: d = " + std::to_string(a.d) + " >= n = " + std::to_string(a.n) +
                     " risks separation (no logistic MLE); choose n > d");
  }
  SimConfig config;
  config.d = a.d;
  config.n = a.n;
  config.n_test = a.n_test;
  config.K = a.K;
  config.trials = a.trials;
  config.seed = run.seed;
  config.beta_star = default_beta_star(a.d, a.beta_norm);
  try {
    config.validate();
  } catch (const ArgumentError &e) {
    throw UsageError(e.what());
  }
  const auto estimator = a.estimator == "conditional" ? GapEstimator::conditional : GapEstimator::indicator;
  const Theorem1Report r = run_theorem1(config, threads, estimator);
  const Json j{{"config",
                {{"d", a.d},
                 {"n", a.n},
                 {"n_test", a.n_test},
                 {"kappa", real_to_json(static_cast<double>(a.d) / static_cast<double>(a.n))},
                 {"beta_norm", real_to_json(a.beta_norm)},
                 {"K", a.K},
                 {"trials", a.trials},
                 {"seed", run.seed},
                 {"estimator", a.estimator}}},
               {"per_quantile_gaps", reals_to_json(r.mean_gaps)},
               {"stderr", reals_to_json(r.std_errors)},
               {"spearman", real_to_json(r.spearman)},
               {"trials_used", r.trials_used},
               {"trials_skipped", r.trials_skipped}};
  run.write_json(a.out, j);
  if (!a.per_trial.empty()) {
    std::string csv = "trial,quantile,count,gap\n";
    for (const auto &t : r.per_trial) {
      for (std::size_t k = 0; k < t.gaps.size(); ++k) {
        csv += std::to_string(t.trial) + "," + std::to_string(k) + "," + std::to_string(t.counts[k]) + "," +
               fmt_real(t.gaps[k]) + "\n";
      }
    }
    run.write_text(a.per_trial, csv);
  }
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"atypicalib: atypicality estimation, recalibration and conformal prediction from exported "
               "embeddings and logits"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML-style key=value file replacing flags");
  unsigned threads = 1;
  std::uint64_t seed = 0;
  app.add_option("--threads", threads, "worker threads (outputs do not depend on it)")
      ->envname("ATYPICALIB_THREADS")
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "seed for every random draw");

  const auto methods = [](std::vector<std::string> v) { return CLI::IsMember(std::move(v)); };

  FitAtypArgs fa;
  auto *fit_atyp = app.add_subcommand("fit-atypicality", "fit a GMM or kNN atypicality model on training embeddings");
  fit_atyp->add_option("--method", fa.method)->required()->check(methods({"gmm", "knn"}));
  fit_atyp->add_option("--embeddings", fa.embeddings)->required();
  fit_atyp->add_option("--labels", fa.labels);
  fit_atyp->add_option("--out", fa.out)->required();
  fit_atyp->add_option("--classes", fa.classes, "number of classes (0: max label + 1)");
  fit_atyp->add_option("--ridge", fa.ridge, "covariance ridge (default 1e-6 * trace / d)");
  fit_atyp->add_option("--priors", fa.priors)->check(methods({"empirical", "uniform"}));
  fit_atyp->add_option("--k", fa.k);
  fit_atyp->add_option("--mode", fa.mode)->check(methods({"mean", "mean_of_k", "nearest"}));

  ScoreArgs sa;
  auto *score = app.add_subcommand("score-atypicality", "score inputs with a fitted atypicality model");
  score->add_option("--model", sa.model)->required();
  score->add_option("--embeddings", sa.embeddings)->required();
  score->add_option("--out", sa.out)->required();
  score->add_option("--variant", sa.variant, "gmm score: class or marginal")->check(methods({"class", "marginal"}));

  ClassAtypArgs ca;
  auto *class_atyp = app.add_subcommand("class-atypicality", "-log training frequency per class or per sample");
  class_atyp->add_option("--train-labels", ca.train_labels)->required();
  class_atyp->add_option("--labels", ca.labels, "emit a_Y(y_i) for these labels instead of per class");
  class_atyp->add_option("--classes", ca.classes);
  class_atyp->add_option("--out", ca.out)->required();

  CalibrateArgs cal;
  auto *calibrate = app.add_subcommand("calibrate", "fit a recalibrator on a calibration split");
  calibrate->add_option("--method", cal.method)->required()->check(methods({"ts", "aar", "cf", "group-ts", "quantile-ts"}));
  calibrate->add_option("--logits", cal.logits);
  calibrate->add_option("--probs", cal.probs, "content-free probabilities (cf)");
  calibrate->add_option("--labels", cal.labels);
  calibrate->add_option("--atypicality", cal.atypicality);
  calibrate->add_option("--groups", cal.groups, "group label file (group-ts)");
  calibrate->add_option("--bins", cal.bins, "atypicality quantiles (quantile-ts)");
  calibrate->add_option("--out", cal.out)->required();

  ApplyArgs ap;
  auto *apply = app.add_subcommand("apply", "apply a fitted recalibrator");
  apply->add_option("--calibrator", ap.calibrator)->required();
  apply->add_option("--logits", ap.logits);
  apply->add_option("--probs", ap.probs);
  apply->add_option("--atypicality", ap.atypicality);
  apply->add_option("--groups", ap.groups);
  apply->add_option("--out", ap.out)->required();

  auto *conformal = app.add_subcommand("conformal", "split-conformal prediction sets");
  conformal->require_subcommand(1);
  ConformalFitArgs cf;
  auto *cfit = conformal->add_subcommand("fit", "fit conformal thresholds");
  cfit->add_option("--method", cf.method)->required()->check(methods({"aps", "raps", "aa-aps", "aa-raps", "aa_aps", "aa_raps"}));
  cfit->add_option("--alpha", cf.alpha);
  cfit->add_option("--probs", cf.probs);
  cfit->add_option("--logits", cf.logits);
  cfit->add_option("--labels", cf.labels);
  cfit->add_option("--atypicality", cf.atypicality);
  cfit->add_option("--groups", cf.groups, "quantiles per axis for aa methods");
  cfit->add_option("--min-cell", cf.min_cell);
  cfit->add_option("--lambda-grid", cf.lambda_grid)->delimiter(',');
  cfit->add_option("--out", cf.out)->required();
  ConformalPredictArgs cp;
  auto *cpredict = conformal->add_subcommand("predict", "emit prediction sets");
  cpredict->add_option("--model", cp.model)->required();
  cpredict->add_option("--probs", cp.probs);
  cpredict->add_option("--logits", cp.logits);
  cpredict->add_option("--atypicality", cp.atypicality);
  cpredict->add_option("--labels", cp.labels);
  cpredict->add_option("--out", cp.out)->required();
  cpredict->add_option("--report", cp.report, "coverage report CSV");
  cpredict->add_option("--report-groups", cp.report_groups);

  EvaluateArgs ev;
  auto *evaluate = app.add_subcommand("evaluate", "global and per-atypicality-quantile metrics");
  evaluate->add_option("--probs", ev.probs);
  evaluate->add_option("--logits", ev.logits);
  evaluate->add_option("--labels", ev.labels);
  evaluate->add_option("--atypicality", ev.atypicality);
  evaluate->add_option("--groups", ev.groups);
  evaluate->add_option("--bins", ev.bins);
  evaluate->add_option("--out", ev.out)->required();
  evaluate->add_option("--json", ev.json);

  ReportArgs rp;
  auto *report = app.add_subcommand("report", "confidence x atypicality grid");
  report->add_option("--probs", rp.probs);
  report->add_option("--logits", rp.logits);
  report->add_option("--labels", rp.labels);
  report->add_option("--atypicality", rp.atypicality);
  report->add_option("--conf-groups", rp.conf_groups);
  report->add_option("--atyp-groups", rp.atyp_groups);
  report->add_option("--out", rp.out)->required();
  report->add_option("--json", rp.json);

  TheoryArgs th;
  auto *theory = app.add_subcommand("theory-sim", "overconfidence vs atypicality in the well-specified logistic model");
  theory->add_option("--d", th.d);
  theory->add_option("--n", th.n);
  theory->add_option("--n-test", th.n_test);
  theory->add_option("--beta-norm", th.beta_norm);
  theory->add_option("--K", th.K);
  theory->add_option("--trials", th.trials);
  theory->add_option("--estimator", th.estimator)->check(methods({"indicator", "conditional"}));
  theory->add_option("--out", th.out)->required();
  theory->add_option("--per-trial", th.per_trial, "per-trial per-quantile gaps CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  Run run;
  run.seed = seed;
  try {
    if (fit_atyp->parsed()) {
      run.command = "fit-atypicality";
      run.sub = fit_atyp;
      cmd_fit_atypicality(run, fa);
    } else if (score->parsed()) {
      run.command = "score-atypicality";
      run.sub = score;
      cmd_score_atypicality(run, sa, threads);
    } else if (class_atyp->parsed()) {
      run.command = "class-atypicality";
      run.sub = class_atyp;
      cmd_class_atypicality(run, ca);
    } else if (calibrate->parsed()) {
      run.command = "calibrate";
      run.sub = calibrate;
      cmd_calibrate(run, cal);
    } else if (apply->parsed()) {
      run.command = "apply";
      run.sub = apply;
      cmd_apply(run, ap);
    } else if (cfit->parsed()) {
      run.command = "conformal fit";
      run.sub = cfit;
      cmd_conformal_fit(run, cf);
    } else if (cpredict->parsed()) {
      run.command = "conformal predict";
      run.sub = cpredict;
      cmd_conformal_predict(run, cp, threads);
    } else if (evaluate->parsed()) {
      run.command = "evaluate";
      run.sub = evaluate;
      cmd_evaluate(run, ev);
    } else if (report->parsed()) {
      run.command = "report";
      run.sub = report;
      cmd_report(run, rp);
    } else if (theory->parsed()) {
      run.command = "theory-sim";
      run.sub = theory;
      cmd_theory_sim(run, th, threads);
    }
    run.write_manifest();
  } catch (const UsageError &e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ArgumentError &e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
