#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "atypicalib/metrics.hpp"
#include "support/oracles.hpp"
#include "support/synth.hpp"

using namespace atypicalib;

namespace {

// (0.95 correct, 0.95 correct, 0.65 wrong, 0.55 correct)
void hand_case(Matrix &p, Labels &y) {
  p.resize(4, 2);
  p << 0.95, 0.05, 0.95, 0.05, 0.65, 0.35, 0.55, 0.45;
  y = {0, 0, 1, 0};
}

Matrix peaked(synth::Rng &rng, Index n, Index C) {
  Matrix z = rng.normal_matrix(n, C, rng.uniform(0.1, 4.0));
  for (Index i = 0; i < n; ++i) {
    const double peak = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - peak).exp().matrix();
    z.row(i) /= z.row(i).sum();
  }
  return z;
}

} // namespace

TEST_CASE("ece and rmsce hand cases") {
  Matrix p;
  Labels y;
  hand_case(p, y);
  CHECK(ece(p, y) == doctest::Approx(0.30).epsilon(1e-12));
  // 0.5 * 0.05^2 + 0.25 * 0.65^2 + 0.25 * 0.45^2 = 0.1575
  CHECK(rmsce(p, y) == doctest::Approx(std::sqrt(0.1575)).epsilon(1e-12));
  CHECK(rmsce(p, y) == doctest::Approx(0.396863).epsilon(1e-6));

  Matrix certain(3, 2);
  certain << 1, 0, 0, 1, 1, 0;
  CHECK(ece(certain, {0, 1, 0}) == 0.0);
  CHECK(rmsce(certain, {0, 1, 0}) == 0.0);

  Matrix one_bin(4, 2);
  one_bin << 0.72, 0.28, 0.74, 0.26, 0.76, 0.24, 0.78, 0.22;
  const Labels yb{0, 1, 0, 1};
  CHECK(ece(one_bin, yb) == rmsce(one_bin, yb));
  CHECK(ece(one_bin, yb) == doctest::Approx(0.75 - 0.5));

  CHECK_THROWS_AS(ece(p, y, 0), ArgumentError);
  CHECK_THROWS_AS(ece(p, {0, 0, 2, 0}), DataError);
  CHECK_THROWS_AS(ece(p, {0, 0}), ShapeError);
  Matrix bad = p;
  bad(0, 0) = 0.5;
  CHECK_THROWS_AS(ece(bad, y), DataError);
}

TEST_CASE("confidence bin edges") {
  CHECK(confidence_bin(0.0, 10) == 0);
  CHECK(confidence_bin(0.1, 10) == 0);
  CHECK(confidence_bin(0.100001, 10) == 1);
  CHECK(confidence_bin(1.0, 10) == 9);
  CHECK(confidence_bin(0.5, 1) == 0);
  Matrix p;
  Labels y;
  hand_case(p, y);
  const auto bins = calibration_bins(p, y);
  REQUIRE(bins.size() == 10);
  Index total = 0;
  for (const auto &b : bins) {
    total += b.count;
    CHECK(b.lower < b.upper);
    CHECK(b.accuracy >= 0.0);
    CHECK(b.accuracy <= 1.0);
  }
  CHECK(total == 4);
  CHECK(bins[9].count == 2);
  CHECK(bins[6].count == 1);
  CHECK(bins[5].count == 1);
}

TEST_CASE("nll and accuracy") {
  Matrix sure(2, 2);
  sure << 1, 0, 0, 1;
  CHECK(nll(sure, {0, 1}) == 0.0);
  CHECK(std::isfinite(nll(sure, {1, 0})));
  CHECK(nll(sure, {1, 0}) == doctest::Approx(-std::log(1e-300)));
  Matrix half = Matrix::Constant(3, 2, 0.5);
  CHECK(nll(half, {0, 1, 0}) == doctest::Approx(0.693147).epsilon(1e-6));

  Matrix p(4, 2);
  p << 0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7;
  CHECK(accuracy(p, {0, 1, 0, 1}) == 1.0);
  CHECK(accuracy(p, {1, 0, 1, 0}) == 0.0);
  CHECK(accuracy(p, {0, 1, 0, 0}) == 0.75);
  Matrix tie(1, 3);
  tie << 0.4, 0.4, 0.2;
  CHECK(accuracy(tie, {0}) == 1.0);
  CHECK(accuracy(tie, {1}) == 0.0);
}

TEST_CASE("metrics match brute-force oracles on random instances") {
  synth::Rng rng(2024);
  for (int t = 0; t < 1000; ++t) {
    const Index n = rng.integer(1, 60), C = rng.integer(2, 6), M = rng.integer(1, 15);
    const Matrix p = peaked(rng, n, C);
    const Labels y = rng.labels(n, C);
    CHECK(std::abs(ece(p, y, M) - oracle::ece(p, y, M)) <= 1e-12);
    CHECK(std::abs(rmsce(p, y, M) - oracle::rmsce(p, y, M)) <= 1e-12);
    CHECK(accuracy(p, y) == oracle::accuracy(p, y));
    CHECK(std::abs(nll(p, y) - oracle::nll(p, y)) <= 1e-12);
    const double e = ece(p, y, M);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
  }
}

TEST_CASE("ece is invariant to class relabeling") {
  synth::Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    const Index n = 50, C = 4;
    const Matrix p = peaked(rng, n, C);
    const Labels y = rng.labels(n, C);
    std::vector<Index> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng.engine);
    Matrix q(n, C);
    Labels z(y.size());
    for (Index c = 0; c < C; ++c) {
      q.col(perm[static_cast<std::size_t>(c)]) = p.col(c);
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      z[i] = static_cast<std::uint32_t>(perm[y[i]]);
    }
    // Exact ties would change the argmax; continuous draws make them negligible.
    CHECK(ece(p, y) == doctest::Approx(ece(q, z)).epsilon(1e-12));
    CHECK(rmsce(p, y) == doctest::Approx(rmsce(q, z)).epsilon(1e-12));
  }
}

TEST_CASE("quantile_edges") {
  VectorXd v = Eigen::VectorXd::LinSpaced(10, 1, 10);
  const auto e2 = quantile_edges(v, 2);
  REQUIRE(e2.size() == 3);
  CHECK(std::isinf(e2[0]));
  CHECK(e2[0] < 0);
  CHECK(e2[1] == 5.0);
  CHECK(std::isinf(e2[2]));
  const auto g2 = assign_groups(v, e2);
  CHECK(std::count(g2.begin(), g2.end(), 0) == 5);

  const auto e1 = quantile_edges(v, 1);
  REQUIRE(e1.size() == 2);
  const auto g1 = assign_groups(v, e1);
  CHECK(std::all_of(g1.begin(), g1.end(), [](Index g) { return g == 0; }));

  CHECK_THROWS_AS(quantile_edges(v, 0), ArgumentError);
  CHECK_THROWS_AS(quantile_edges(v, 11), ArgumentError);

  VectorXd with_inf(4);
  with_inf << 1.0, std::numeric_limits<double>::infinity(), 2.0, std::numeric_limits<double>::infinity();
  const auto ei = quantile_edges(with_inf, 2);
  CHECK(quantile_group(std::numeric_limits<double>::infinity(), ei) == 1);
  const auto gi = assign_groups(with_inf, ei);
  CHECK(gi[1] == 1);
  CHECK(gi[3] == 1);

  VectorXd dup(6);
  dup << 1, 1, 1, 1, 2, 3;
  const auto ed = quantile_edges(dup, 3);
  const auto gd = assign_groups(dup, ed);
  // Values equal to an edge go to the lower group.
  CHECK(gd[0] == 0);
  CHECK(gd[3] == 0);

  synth::Rng rng(77);
  for (int t = 0; t < 300; ++t) {
    const Index n = rng.integer(1, 200), K = rng.integer(1, std::min<Index>(n, 12));
    VectorXd x(n);
    for (Index i = 0; i < n; ++i) {
      x(i) = rng.normal();
    }
    const auto edges = quantile_edges(x, K);
    CHECK(std::is_sorted(edges.begin(), edges.end()));
    const auto groups = assign_groups(x, edges);
    CHECK(groups == oracle::quantile_groups(x, K));
    std::vector<Index> counts(static_cast<std::size_t>(K), 0);
    for (Index g : groups) {
      ++counts[static_cast<std::size_t>(g)];
    }
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    CHECK(*hi - *lo <= 1);
  }
}

TEST_CASE("groupwise") {
  synth::Rng rng(13);
  const Matrix p = peaked(rng, 200, 3);
  const Labels y = rng.labels(200, 3);
  const VectorXd constant = Eigen::VectorXd::Constant(200, 2.5);
  for (Metric m : {Metric::ece, Metric::rmsce, Metric::accuracy, Metric::nll}) {
    const auto g = groupwise(m, p, y, constant, 1);
    REQUIRE(g.values.size() == 1);
    CHECK(g.values[0] == evaluate_metric(m, p, y));
    CHECK(g.counts[0] == 200);
    CHECK(parse_metric(metric_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_metric("brier"), ArgumentError);

  // Perfectly calibrated half at confidence 1, fully wrong half at confidence 1.
  Matrix q(8, 2);
  Labels z(8);
  VectorXd a(8);
  for (Index i = 0; i < 8; ++i) {
    q(i, 0) = 1.0;
    q(i, 1) = 0.0;
    z[static_cast<std::size_t>(i)] = i < 4 ? 0 : 1;
    a(i) = static_cast<double>(i);
  }
  const auto ext = groupwise(Metric::ece, q, z, a, 2);
  CHECK(ext.values[0] == 0.0);
  CHECK(ext.values[1] == 1.0);

  for (int t = 0; t < 100; ++t) {
    const Index n = rng.integer(20, 120), C = rng.integer(2, 5), K = rng.integer(1, 6);
    const Matrix pp = peaked(rng, n, C);
    const Labels yy = rng.labels(n, C);
    VectorXd av(n);
    for (Index i = 0; i < n; ++i) {
      av(i) = rng.uniform();
    }
    const auto want = oracle::quantile_groups(av, K);
    for (Metric m : {Metric::ece, Metric::rmsce, Metric::accuracy, Metric::nll}) {
      const auto g = groupwise(m, pp, yy, av, K);
      for (Index k = 0; k < K; ++k) {
        std::vector<Index> rows;
        for (Index i = 0; i < n; ++i) {
          if (want[static_cast<std::size_t>(i)] == k) {
            rows.push_back(i);
          }
        }
        CHECK(g.counts[static_cast<std::size_t>(k)] == static_cast<Index>(rows.size()));
        const Matrix sub = oracle::take_rows(pp, rows);
        const Labels suby = oracle::take(yy, rows);
        double expect = 0;
        switch (m) {
        case Metric::ece: expect = oracle::ece(sub, suby); break;
        case Metric::rmsce: expect = oracle::rmsce(sub, suby); break;
        case Metric::accuracy: expect = oracle::accuracy(sub, suby); break;
        case Metric::nll: expect = oracle::nll(sub, suby); break;
        }
        CHECK(std::abs(g.values[static_cast<std::size_t>(k)] - expect) <= 1e-12);
      }
    }
  }
}

TEST_CASE("grid_report") {
  Matrix same = Matrix::Constant(10, 2, 0.5);
  same.col(0).setConstant(0.7);
  same.col(1).setConstant(0.3);
  const VectorXd a = Eigen::VectorXd::Constant(10, 1.0);
  const QuantileGrid g = grid_report(same, Labels(10, 0), a, 3, 3);
  Index occupied = 0;
  for (const auto &c : g.cells) {
    occupied += c.count > 0 ? 1 : 0;
    if (c.count == 0) {
      CHECK(std::isnan(c.gap));
    }
  }
  CHECK(occupied == 1);
  CHECK(g.cell(0, 0).count == 10);
  CHECK(g.cell(0, 0).gap == doctest::Approx(0.7 - 1.0));

  synth::Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    const Index n = 300;
    const Matrix p = peaked(rng, n, 5);
    const Labels y = rng.labels(n, 5);
    VectorXd atyp(n);
    for (Index i = 0; i < n; ++i) {
      atyp(i) = rng.normal();
    }
    const QuantileGrid grid = grid_report(p, y, atyp, 6, 6);
    VectorXd conf(n);
    for (Index i = 0; i < n; ++i) {
      conf(i) = oracle::confidence(p, i);
    }
    const auto cg = oracle::quantile_groups(conf, 6), ag = oracle::quantile_groups(atyp, 6);
    Index total = 0;
    for (Index ci = 0; ci < 6; ++ci) {
      for (Index ai = 0; ai < 6; ++ai) {
        Index count = 0;
        double hits = 0, cs = 0;
        for (Index i = 0; i < n; ++i) {
          if (cg[static_cast<std::size_t>(i)] == ci && ag[static_cast<std::size_t>(i)] == ai) {
            ++count;
            cs += conf(i);
            hits += oracle::argmax_row(p, i) == static_cast<Index>(y[static_cast<std::size_t>(i)]) ? 1 : 0;
          }
        }
        const auto &cell = grid.cell(ci, ai);
        CHECK(cell.count == count);
        total += cell.count;
        if (count > 0) {
          CHECK(std::abs(cell.accuracy - hits / count) < 1e-12);
          CHECK(std::abs(cell.mean_confidence - cs / count) < 1e-12);
          CHECK(std::abs(cell.gap - (cs - hits) / count) < 1e-12);
        }
      }
    }
    CHECK(total == n);
  }
}
