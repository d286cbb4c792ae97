#include "atypicalib/json_io.hpp"
#include "support/cli_util.hpp"
#include "support/oracles.hpp"
#include "support/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>

using namespace atypicalib;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char *f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Matrix random_probs(synth::Rng &rng, Index n, Index C) {
  Matrix z = rng.normal_matrix(n, C, rng.uniform(0.1, 4.0));
  for (Index i = 0; i < n; ++i) {
    z.row(i) = (z.row(i).array() - z.row(i).maxCoeff()).exp().matrix();
    z.row(i) /= z.row(i).sum();
  }
  return z;
}

// ---------------------------------------------------------------------------

Outcome oracle_equivalence() {
  synth::Rng rng(101);
  const int instances = 1000;
  double worst_comb = 0, worst_la = 0;
  int failures = 0;
  auto comb = [&](double got, double want) {
    const double err = std::abs(got - want);
    worst_comb = std::max(worst_comb, err);
    failures += !(err <= 1e-12);
  };

  for (int t = 0; t < instances; ++t) {
    const Index n = rng.integer(1, 80), C = rng.integer(2, 6), M = rng.integer(1, 15);
    const Matrix p = random_probs(rng, n, C);
    const Labels y = rng.labels(n, C);
    comb(ece(p, y, M), oracle::ece(p, y, M));
    comb(rmsce(p, y, M), oracle::rmsce(p, y, M));
  }

  for (int t = 0; t < instances; ++t) {
    const Index n = rng.integer(10, 120), C = rng.integer(2, 5), K = rng.integer(1, 6);
    const Matrix p = random_probs(rng, n, C);
    const Labels y = rng.labels(n, C);
    VectorXd a(n);
    for (Index i = 0; i < n; ++i) {
      // coarse values force ties at the edges
      a(i) = t % 2 ? rng.uniform() : std::floor(rng.uniform(0, 6));
    }
    const auto groups = oracle::quantile_groups(a, K);
    for (Metric m : {Metric::ece, Metric::rmsce, Metric::accuracy, Metric::nll}) {
      const auto g = groupwise(m, p, y, a, K);
      for (Index k = 0; k < K; ++k) {
        std::vector<Index> rows;
        for (Index i = 0; i < n; ++i) {
          if (groups[static_cast<std::size_t>(i)] == k) {
            rows.push_back(i);
          }
        }
        failures += g.counts[static_cast<std::size_t>(k)] != static_cast<Index>(rows.size());
        if (rows.empty()) {
          failures += !std::isnan(g.values[static_cast<std::size_t>(k)]);
          continue;
        }
        const Matrix sp = oracle::take_rows(p, rows);
        const Labels sy = oracle::take(y, rows);
        double want = 0;
        switch (m) {
        case Metric::ece: want = oracle::ece(sp, sy); break;
        case Metric::rmsce: want = oracle::rmsce(sp, sy); break;
        case Metric::accuracy: want = oracle::accuracy(sp, sy); break;
        case Metric::nll: want = oracle::nll(sp, sy); break;
        }
        comb(g.values[static_cast<std::size_t>(k)], want);
      }
    }
  }

  for (int t = 0; t < instances; ++t) {
    const Index C = rng.integer(2, 20);
    Eigen::RowVectorXd p(C);
    if (t % 2) {
      // small integer weights give exact ties
      for (Index c = 0; c < C; ++c) {
        p(c) = static_cast<double>(rng.integer(1, 4));
      }
      p /= p.sum();
    } else {
      p = random_probs(rng, 1, C).row(0);
    }
    const Index k_reg = rng.integer(0, 5);
    const double lambda = rng.uniform(0, 0.5);
    for (Index c = 0; c < C; ++c) {
      comb(aps_score(p, c), oracle::aps(p, c));
      comb(raps_score(p, c, k_reg, lambda), oracle::raps(p, c, k_reg, lambda));
      failures += class_rank(p, c) != oracle::rank(p, c);
    }
  }

  for (int t = 0; t < instances; ++t) {
    const Index d = rng.integer(1, 5), C = rng.integer(1, 4), n = rng.integer(d + C + 2, 60);
    Matrix x = rng.normal_matrix(n, d);
    Labels y = rng.labels(n, C);
    for (Index c = 0; c < C; ++c) {
      y[static_cast<std::size_t>(c)] = static_cast<std::uint32_t>(c);
    }
    for (Index i = 0; i < n; ++i) {
      x.row(i).array() += static_cast<double>(y[static_cast<std::size_t>(i)]);
    }
    const GmmModel m = fit_gmm(x, y, C);
    const Eigen::MatrixXd sigma = oracle::pooled_covariance(x, y, C) + m.ridge * Eigen::MatrixXd::Identity(d, d);
    const Matrix q = rng.normal_matrix(3, d, 2.0);
    const VectorXd scored = score_gmm(m, q);
    for (Index i = 0; i < q.rows(); ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (Index c = 0; c < C; ++c) {
        const double want = oracle::gaussian_logpdf(q.row(i).transpose(), m.class_means.row(c).transpose(), sigma);
        const double err = std::abs(gmm_class_log_density(m, q.row(i), c) - want) / std::max(1.0, std::abs(want));
        worst_la = std::max(worst_la, err);
        failures += !(err <= 1e-8);
        best = std::max(best, want);
      }
      const double err = std::abs(scored(i) + best) / std::max(1.0, std::abs(best));
      worst_la = std::max(worst_la, err);
      failures += !(err <= 1e-8);
    }
  }
  return {failures == 0, fmt("%d instances per family, %d mismatches, max combinatorial err %.2e, max "
                             "linear-algebra rel err %.2e",
                             instances, failures, worst_comb, worst_la)};
}

// ---------------------------------------------------------------------------

Outcome aar_gradient() {
  synth::Rng rng(202);
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const Index C = rng.integer(2, 10), n = rng.integer(20, 200);
    const Matrix logits = rng.normal_matrix(n, C, rng.uniform(0.5, 3.0));
    const Labels y = rng.labels(n, C);
    VectorXd a(n);
    for (Index i = 0; i < n; ++i) {
      a(i) = rng.normal();
    }
    const AarObjective f(logits, y, a);
    VectorXd theta(f.n_params());
    for (Index k = 0; k < theta.size(); ++k) {
      theta(k) = k < 3 ? rng.normal(0.0, 0.5) : rng.normal();
    }
    theta(0) += 1.0;
    VectorXd g(theta.size());
    f(theta, g);
    const VectorXd fd = oracle::finite_gradient([&](const VectorXd &th) { return f.value(th); }, theta);
    worst = std::max(worst, (g - fd).norm() / std::max({g.norm(), fd.norm(), 1e-300}));
  }
  return {worst < 1e-5, fmt("20 points, max relative error %.2e", worst)};
}

// ---------------------------------------------------------------------------

double aar_nll(const AarModel &m, const synth::Calibration &d) {
  return oracle::nll(apply_aar(m, d.logits, d.atypicality), d.labels);
}

Outcome nesting() {
  int violations = 0;
  double min_margin = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    synth::Rng rng(seed * 7919);
    const Index C = rng.integer(3, 10);
    const auto d = seed % 2 ? synth::tempered(2000, C, rng.uniform(0.4, 3.0), seed)
                            : synth::two_population(2000, C, seed, rng.uniform(0.8, 2.0));
    const double id = oracle::ts_nll(d.logits, d.labels, 1.0);
    const double ts = oracle::ts_nll(d.logits, d.labels, fit_ts(d.logits, d.labels).tau);
    const double aar = aar_nll(fit_aar(d.logits, d.labels, d.atypicality).model, d);
    violations += !(aar <= ts + 1e-6) + !(ts <= id + 1e-6);
    min_margin = std::min({min_margin, ts + 1e-6 - aar, id + 1e-6 - ts});
  }

  const auto two = synth::two_population(10000, 10, 33);
  const Matrix p_ts = apply_ts(fit_ts(two.logits, two.labels), two.logits);
  const Matrix p_aar = apply_aar(fit_aar(two.logits, two.labels, two.atypicality).model, two.logits, two.atypicality);
  const auto g_ts = groupwise(Metric::ece, p_ts, two.labels, two.atypicality, 2);
  const auto g_aar = groupwise(Metric::ece, p_aar, two.labels, two.atypicality, 2);
  const bool two_ok = g_aar.values[1] <= g_ts.values[1] - 0.01;
  return {violations == 0 && two_ok,
          fmt("20 sets, %d ordering violations (min slack %.2e); atypical-group ECE TS %.4f vs AAR %.4f", violations,
              min_margin, g_ts.values[1], g_aar.values[1])};
}

// ---------------------------------------------------------------------------

Outcome ts_recovery() {
  double worst = 0;
  for (double tau : {0.5, 2.0, 5.0}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto d = synth::tempered(10000, 10, tau, 1000 * seed + static_cast<std::uint64_t>(tau * 10));
      worst = std::max(worst, std::abs(fit_ts(d.logits, d.labels).tau / tau - 1.0));
    }
  }

  double worst_ratio = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto d = synth::two_population(10000, 10, 500 + seed);
    const auto m = fit_ts_per_quantile(d.logits, d.labels, d.atypicality, 2);
    worst_ratio = std::max(worst_ratio, std::abs(m.taus[1] / m.taus[0] / 3.0 - 1.0));
  }

  // Five populations whose overconfidence grows with atypicality.
  synth::Rng rng(77);
  const Index n = 10000, C = 10, K = 5;
  Matrix logits(n, C);
  Labels y(static_cast<std::size_t>(n));
  VectorXd a(n);
  for (Index i = 0; i < n; ++i) {
    const Index k = i % K;
    Eigen::RowVectorXd z(C);
    for (Index c = 0; c < C; ++c) {
      z(c) = rng.normal(0.0, 1.5);
    }
    y[static_cast<std::size_t>(i)] = rng.categorical_logits(z);
    logits.row(i) = (1.0 + 0.5 * static_cast<double>(k)) * z;
    a(i) = static_cast<double>(k) + rng.uniform(0.0, 0.5);
  }
  const auto graded = fit_ts_per_quantile(logits, y, a, K);
  const bool monotone = std::is_sorted(graded.taus.begin(), graded.taus.end(), std::less_equal<>());
  std::string taus;
  for (double t : graded.taus) {
    taus += fmt("%s%.3f", taus.empty() ? "" : ",", t);
  }
  return {worst <= 0.05 && worst_ratio <= 0.15 && monotone,
          fmt("30 fits, max rel err %.4f; x3 ratio max rel err %.4f; tau_k = [%s]", worst, worst_ratio,
              taus.c_str())};
}

// ---------------------------------------------------------------------------

struct ConformalData {
  Matrix probs;
  Labels labels;
  VectorXd atyp;
};

// Calibrated probabilities whose sharpness varies; atypicality tracks the
// flatness of the row plus noise.
ConformalData conformal_data(synth::Rng &rng, Index n, Index C) {
  ConformalData d{Matrix(n, C), Labels(static_cast<std::size_t>(n)), VectorXd(n)};
  for (Index i = 0; i < n; ++i) {
    const double s = rng.uniform(0.5, 3.0);
    Eigen::RowVectorXd z(C);
    for (Index c = 0; c < C; ++c) {
      z(c) = rng.normal(0.0, s);
    }
    d.labels[static_cast<std::size_t>(i)] = rng.categorical_logits(z);
    d.probs.row(i) = softmax_rows(Matrix(z)).row(0);
    d.atyp(i) = -std::log(s) + 0.5 * rng.normal();
  }
  return d;
}

double coverage(const std::vector<PredictionSet> &sets, const Labels &y) {
  double hit = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    hit += set_contains(sets[i], static_cast<Index>(y[i]));
  }
  return hit / static_cast<double>(sets.size());
}

Outcome conformal() {
  const Index N = 5000, C = 20;
  const double alpha = 0.05;
  double aps_lo = 1, aps_hi = 0, raps_lo = 1, raps_hi = 0, cell_lo = 1, cell_hi = 0;
  int cells_checked = 0, cells_out = 0, identity_failures = 0;
  std::map<std::pair<Index, Index>, std::pair<double, double>> pooled; // hits, count
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    synth::Rng rng(seed);
    const auto cal = conformal_data(rng, N, C);
    const auto test = conformal_data(rng, N, C);

    const auto aps = fit_aps(cal.probs, cal.labels, alpha);
    const auto aps_sets = predict_sets(aps, test.probs);
    const double ca = coverage(aps_sets, test.labels);
    aps_lo = std::min(aps_lo, ca);
    aps_hi = std::max(aps_hi, ca);

    RapsOptions ro;
    ro.seed = seed;
    const auto raps = fit_raps(cal.probs, cal.labels, alpha, ro);
    const auto raps_sets = predict_sets(raps, test.probs);
    const double cr = coverage(raps_sets, test.labels);
    raps_lo = std::min(raps_lo, cr);
    raps_hi = std::max(raps_hi, cr);

    AaOptions one;
    one.K = 1;
    one.raps = ro;
    identity_failures += predict_sets(fit_aa(cal.probs, cal.labels, cal.atyp, alpha, ConformalMethod::aps, one),
                                      test.probs, test.atyp) != aps_sets;
    identity_failures += predict_sets(fit_aa(cal.probs, cal.labels, cal.atyp, alpha, ConformalMethod::raps, one),
                                      test.probs, test.atyp) != raps_sets;

    const auto aa = fit_aa(cal.probs, cal.labels, cal.atyp, alpha, ConformalMethod::aps);
    const auto aa_sets = predict_sets(aa, test.probs, test.atyp);
    VectorXd conf(N);
    for (Index i = 0; i < N; ++i) {
      conf(i) = test.probs.row(i).maxCoeff();
    }
    const auto ci = assign_groups(conf, aa.conf_edges), ai = assign_groups(test.atyp, aa.atyp_edges);
    std::map<std::pair<Index, Index>, std::pair<double, double>> cells;
    for (Index i = 0; i < N; ++i) {
      auto &cell = cells[{ci[static_cast<std::size_t>(i)], ai[static_cast<std::size_t>(i)]}];
      cell.first += set_contains(aa_sets[static_cast<std::size_t>(i)], static_cast<Index>(test.labels[static_cast<std::size_t>(i)]));
      cell.second += 1;
    }
    for (const auto &[key, hc] : cells) {
      pooled[key].first += hc.first;
      pooled[key].second += hc.second;
      if (hc.second >= 100) {
        const double c = hc.first / hc.second;
        ++cells_checked;
        cells_out += c < 0.92 || c > 0.98;
        cell_lo = std::min(cell_lo, c);
        cell_hi = std::max(cell_hi, c);
      }
    }
  }
  double pooled_lo = 1, pooled_hi = 0;
  for (const auto &[key, hc] : pooled) {
    if (hc.second >= 100) {
      pooled_lo = std::min(pooled_lo, hc.first / hc.second);
      pooled_hi = std::max(pooled_hi, hc.first / hc.second);
    }
  }
  const bool marginal_ok = aps_lo >= 0.94 && aps_hi <= 0.97 && raps_lo >= 0.94 && raps_hi <= 0.97;
  return {marginal_ok && identity_failures == 0 && cells_out == 0,
          fmt("APS [%.4f, %.4f], RAPS [%.4f, %.4f]; K=1 mismatches %d; AA-APS cells >=100 pts: %d/%d outside "
              "[0.92, 0.98], range [%.4f, %.4f]; pooled over seeds [%.4f, %.4f]",
              aps_lo, aps_hi, raps_lo, raps_hi, identity_failures, cells_out, cells_checked, cell_lo, cell_hi,
              pooled_lo, pooled_hi)};
}

// ---------------------------------------------------------------------------

Outcome theorem1() {
  SimConfig c = default_sim_config();
  c.d = 50;
  c.n = 500;
  c.n_test = 20000;
  c.K = 5;
  c.trials = 50;
  c.beta_star = default_beta_star(c.d, 1.0);
  const auto r = run_theorem1(c, 4);
  const double lowest = *std::min_element(r.mean_gaps.begin(), r.mean_gaps.end());
  const double spread = r.mean_gaps.back() - r.mean_gaps.front();
  const bool main_ok = lowest >= -0.005 && r.spearman >= 0.9 && spread >= 0.01;

  SimConfig small = c;
  small.d = 5;
  small.n = 100000;
  small.beta_star = default_beta_star(small.d, 1.0);
  const auto s = run_theorem1(small, 4);
  double worst = 0;
  for (double g : s.mean_gaps) {
    worst = std::max(worst, std::abs(g));
  }
  std::string gaps;
  for (double g : r.mean_gaps) {
    gaps += fmt("%s%.4f", gaps.empty() ? "" : ",", g);
  }
  return {main_ok && worst <= 0.01,
          fmt("gaps [%s], spearman %.2f, top-bottom %.4f, trials %lld; small-kappa max |gap| %.4f", gaps.c_str(),
              r.spearman, spread, static_cast<long long>(r.trials_used), worst)};
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path &dir) {
  std::map<std::string, std::string> files;
  for (const auto &e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("last.", 0) != 0) {
      files[name] = clitest::slurp(e.path());
    }
  }
  return files;
}

Outcome determinism() {
  std::vector<std::map<std::string, std::string>> runs;
  int failed_commands = 0;
  for (const std::string threads : {"1", "8", "8"}) {
    const fs::path dir = clitest::fresh_dir("accept_det_" + std::to_string(runs.size()));
    clitest::write_pipeline_inputs(dir, 9, 1500);
    for (const auto &cmd : clitest::pipeline_commands()) {
      failed_commands += clitest::run(dir, "--threads " + threads + " --seed 11 " + cmd) != 0;
    }
    runs.push_back(snapshot(dir));
    fs::remove_all(dir);
  }
  int differing = 0;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    differing += runs[r] != runs[0];
  }
  std::size_t manifests = 0;
  for (const auto &[name, bytes] : runs[0]) {
    manifests += name.find(".manifest.json") != std::string::npos;
  }
  return {failed_commands == 0 && differing == 0 && manifests > 0,
          fmt("%zu commands x 3 runs (threads 1, 8, 8), %zu files incl. %zu manifests, %d failed commands, %d "
              "differing runs",
              clitest::pipeline_commands().size(), runs[0].size(), manifests, failed_commands, differing)};
}

// ---------------------------------------------------------------------------

Outcome round_trips() {
  synth::Rng rng(808);
  int failures = 0;
  const double specials[] = {-0.0, 4.9e-324, 2.2250738585072014e-308, 1.7976931348623157e308,
                             -1.7976931348623157e308, 0.1};
  for (int t = 0; t < 200; ++t) {
    Matrix m = rng.normal_matrix(rng.integer(0, 30), rng.integer(1, 8), std::pow(10.0, rng.uniform(-5, 5)));
    for (Index k = 0; k < m.size() && k < 6; ++k) {
      m.data()[rng.integer(0, m.size() - 1)] = specials[k];
    }
    const std::string bytes = encode_matrix_binary(m);
    const Matrix back = decode_matrix_binary(bytes);
    failures += back.rows() != m.rows() || back.cols() != m.cols() ||
                std::memcmp(back.data(), m.data(), sizeof(double) * static_cast<std::size_t>(m.size())) != 0 ||
                encode_matrix_binary(back) != bytes;
  }
  Matrix nonfinite = Matrix::Zero(2, 2);
  nonfinite(1, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    decode_matrix_binary(encode_matrix_binary(nonfinite));
    ++failures;
  } catch (const DataError &) {
  }
  for (int t = 0; t < 100; ++t) {
    const Labels y = rng.labels(rng.integer(0, 50), rng.integer(1, 1000));
    failures += decode_labels_binary(encode_labels_binary(y)) != y;
  }

  auto json_same = [&](const Json &j, auto from) {
    const std::string text = dump_json(j);
    failures += dump_json(to_json(from(Json::parse(text)))) != text;
  };
  const auto data = synth::two_population(800, 5, 4);
  const Matrix x = rng.normal_matrix(200, 4);
  const Labels yx = rng.labels(200, 5);
  const GmmModel gmm = fit_gmm(x, yx, 5);
  json_same(to_json(gmm), gmm_from_json);
  json_same(to_json(make_knn(x, 3, KnnMode::nearest)), knn_from_json);
  std::vector<std::uint32_t> groups(800);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    groups[i] = static_cast<std::uint32_t>(i % 4);
  }
  Matrix cf(1, 5);
  cf << 0.3, 0.25, 0.2, 0.15, 0.1;
  const std::vector<Calibrator> cals{
      {fit_ts(data.logits, data.labels), 5},
      {fit_ts_per_quantile(data.logits, data.labels, data.atypicality, 3), 5},
      {fit_aar(data.logits, data.labels, data.atypicality).model, 5},
      {fit_cf(cf), 5},
      {fit_group_ts(data.logits, data.labels, groups), 5}};
  for (const auto &c : cals) {
    json_same(to_json(c), calibrator_from_json);
  }
  const Matrix p = softmax_rows(data.logits);
  for (const auto &cm : {fit_aps(p, data.labels, 0.1), fit_raps(p, data.labels, 0.1),
                         fit_aa(p, data.labels, data.atypicality, 0.1, ConformalMethod::aps),
                         fit_aa(p, data.labels, data.atypicality, 0.1, ConformalMethod::raps)}) {
    json_same(to_json(cm), conformal_from_json);
  }

  // Corrupted inputs through the CLI.
  const fs::path dir = clitest::fresh_dir("accept_rt");
  clitest::write_pipeline_inputs(dir, 3, 100);
  if (clitest::run(dir, "fit-atypicality --method gmm --embeddings emb_train.bin --labels y_train.bin "
                        "--out gmm.json") != 0) {
    ++failures;
  }
  const std::string good = clitest::slurp(dir / "emb_test.bin");
  const std::string good_labels = clitest::slurp(dir / "y_test.bin");
  std::vector<std::pair<std::string, std::string>> corrupt{
      {"magic", "ATYX" + good.substr(4)},
      {"version", good.substr(0, 4) + std::string("\x02\x00", 2) + good.substr(6)},
      {"flags", good.substr(0, 6) + std::string("\x01\x00", 2) + good.substr(8)},
      {"truncated", good.substr(0, good.size() - 5)},
      {"short header", good.substr(0, 10)}};
  int rejected = 0;
  for (const auto &[name, bytes] : corrupt) {
    write_file(dir / "bad.bin", bytes);
    rejected += clitest::run(dir, "score-atypicality --model gmm.json --embeddings bad.bin --out s.csv") == 1;
  }
  std::string bad_labels = good_labels;
  bad_labels[3] = 'X';
  write_file(dir / "bad_y.bin", bad_labels);
  rejected += clitest::run(dir, "evaluate --logits logits_test.csv --labels bad_y.bin --out e.csv") == 1;
  fs::remove_all(dir);
  const int expected = static_cast<int>(corrupt.size()) + 1;
  return {failures == 0 && rejected == expected,
          fmt("300 binary + 13 JSON round trips, %d failures; %d/%d corrupt files rejected with exit 1", failures,
              rejected, expected)};
}

} // namespace

int main() {
  warning_handler() = [](const std::string &) {};
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle equivalence", oracle_equivalence},
      {"AAR gradient check", aar_gradient},
      {"nesting inequality and two-population ECE", nesting},
      {"temperature recovery", ts_recovery},
      {"conformal coverage", conformal},
      {"overconfidence vs atypicality simulation", theorem1},
      {"CLI determinism across thread counts", determinism},
      {"format round trips", round_trips}};
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception &e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::printf("[%s] %zu %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
