#pragma once

#include "atypicalib/core.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <vector>

namespace atypicalib::optim {

template <typename Scalar>
struct LbfgsOptions {
  int max_iterations = 3000;
  /// Stop when the Euclidean norm of the gradient drops to this value.
  Scalar gradient_tolerance = Scalar(1e-7);
  int history = 20;
  /// Sufficient decrease and curvature constants of the strong Wolfe test.
  Scalar c1 = Scalar(1e-4);
  Scalar c2 = Scalar(0.9);
  int max_line_search = 40;
};

template <typename Scalar>
struct MinimizeSummary {
  Vector<Scalar> x;
  Scalar value = 0;
  Scalar gradient_norm = 0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

namespace detail {

/// Minimizer of the cubic matching values and slopes at a and b, clamped to
/// [lo, hi]; bisection if the interpolant has no real minimizer.
template <typename Scalar>
Scalar cubic_step(Scalar a, Scalar fa, Scalar ga, Scalar b, Scalar fb, Scalar gb, Scalar lo, Scalar hi) {
  const Scalar d1 = ga + gb - 3 * (fa - fb) / (a - b);
  const Scalar disc = d1 * d1 - ga * gb;
  Scalar t = (a + b) / 2;
  if (disc >= 0) {
    const Scalar d2 = std::copysign(std::sqrt(disc), b - a);
    const Scalar denom = gb - ga + 2 * d2;
    if (denom != 0) {
      t = b - (b - a) * (gb + d2 - d1) / denom;
    }
  }
  if (!std::isfinite(t)) {
    t = (a + b) / 2;
  }
  return std::clamp(t, lo, hi);
}

template <typename Scalar>
struct LinePoint {
  Scalar step = 0;
  Scalar value = 0;
  Scalar slope = 0;
  Vector<Scalar> x;
  Vector<Scalar> grad;
};

/// Line search for a step satisfying the strong Wolfe conditions
///   f(x + a p) <= f(x) + c1 a g'p   and   |g(x + a p)'p| <= c2 |g'p|
/// by bracketing followed by safeguarded cubic zoom. Returns false if no
/// such step was found; `out` then holds the lowest sufficient-decrease
/// point seen, if any (step > 0).
template <typename Scalar, typename Objective>
bool strong_wolfe(Objective &f, const Vector<Scalar> &x, Scalar f0, const Vector<Scalar> &g0,
                  const Vector<Scalar> &dir, Scalar initial_step, const LbfgsOptions<Scalar> &opt,
                  LinePoint<Scalar> &out, int &evaluations) {
  const Scalar slope0 = g0.dot(dir);
  LinePoint<Scalar> best;
  best.value = f0;

  auto probe = [&](Scalar step) {
    LinePoint<Scalar> p;
    p.step = step;
    p.x = x + step * dir;
    p.grad.resize(x.size());
    p.value = f(p.x, p.grad);
    p.slope = p.grad.dot(dir);
    ++evaluations;
    if (std::isfinite(p.value) && p.value <= f0 + opt.c1 * step * slope0 && p.value < best.value) {
      best = p;
    }
    return p;
  };
  auto armijo_fails = [&](const LinePoint<Scalar> &p) {
    return !std::isfinite(p.value) || p.value > f0 + opt.c1 * p.step * slope0;
  };
  auto curvature_ok = [&](const LinePoint<Scalar> &p) { return std::abs(p.slope) <= -opt.c2 * slope0; };

  auto zoom = [&](LinePoint<Scalar> lo, LinePoint<Scalar> hi, int budget) -> bool {
    for (int j = 0; j < budget; ++j) {
      const Scalar width = hi.step - lo.step;
      if (std::abs(width) <= std::numeric_limits<Scalar>::epsilon() * std::max(Scalar(1), std::abs(lo.step))) {
        break;
      }
      const Scalar left = std::min(lo.step, hi.step) + Scalar(0.1) * std::abs(width);
      const Scalar right = std::max(lo.step, hi.step) - Scalar(0.1) * std::abs(width);
      Scalar trial;
      if (std::isfinite(hi.value)) {
        trial = cubic_step(lo.step, lo.value, lo.slope, hi.step, hi.value, hi.slope, left, right);
      } else {
        trial = (lo.step + hi.step) / 2;
      }
      const auto p = probe(trial);
      if (armijo_fails(p) || p.value >= lo.value) {
        hi = p;
      } else {
        if (curvature_ok(p)) {
          out = p;
          return true;
        }
        if (p.slope * (hi.step - lo.step) >= 0) {
          hi = lo;
        }
        lo = p;
      }
    }
    return false;
  };

  LinePoint<Scalar> prev;
  prev.step = 0;
  prev.value = f0;
  prev.slope = slope0;
  prev.x = x;
  prev.grad = g0;
  Scalar step = initial_step;
  int used = 0;
  bool found = false;
  while (used < opt.max_line_search) {
    const auto p = probe(step);
    ++used;
    if (armijo_fails(p) || (used > 1 && p.value >= prev.value)) {
      found = zoom(prev, p, opt.max_line_search - used);
      break;
    }
    if (curvature_ok(p)) {
      out = p;
      found = true;
      break;
    }
    if (p.slope >= 0) {
      found = zoom(p, prev, opt.max_line_search - used);
      break;
    }
    prev = p;
    step *= 2;
  }
  if (!found && best.step > 0) {
    out = best;
  }
  return found;
}

} // namespace detail

/// Limited-memory BFGS with a strong Wolfe line search.
///
/// `f(x, grad)` returns the objective at x and writes the gradient into grad
/// (pre-sized to x.size()). Nothing here is randomized: the same objective
/// and start point always produce the same iterates.
template <typename Scalar, typename Objective>
MinimizeSummary<Scalar> minimize_lbfgs(Objective &&f, Vector<Scalar> x0, const LbfgsOptions<Scalar> &opt = {}) {
  MinimizeSummary<Scalar> s;
  s.x = std::move(x0);
  Vector<Scalar> g(s.x.size());
  s.value = f(s.x, g);
  s.evaluations = 1;
  if (!std::isfinite(s.value) || !g.allFinite()) {
    s.message = "objective not finite at the starting point";
    s.gradient_norm = std::numeric_limits<Scalar>::infinity();
    return s;
  }
  s.gradient_norm = g.norm();

  std::deque<Vector<Scalar>> s_hist, y_hist;
  std::deque<Scalar> rho_hist;
  int stalled = 0;
  std::vector<Scalar> alpha(static_cast<std::size_t>(opt.history));

  while (true) {
    if (s.gradient_norm <= opt.gradient_tolerance) {
      s.converged = true;
      s.message = "gradient norm below tolerance";
      return s;
    }
    if (s.iterations >= opt.max_iterations) {
      s.message = "iteration limit reached";
      return s;
    }

    // Two-loop recursion.
    Vector<Scalar> q = g;
    const auto m = s_hist.size();
    for (std::size_t i = m; i-- > 0;) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (m > 0) {
      q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    }
    for (std::size_t i = 0; i < m; ++i) {
      const Scalar beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Vector<Scalar> dir = -q;
    if (!(g.dot(dir) < 0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g;
    }

    const Scalar initial = s_hist.empty() ? std::min<Scalar>(1, 1 / g.template lpNorm<1>()) : Scalar(1);
    detail::LinePoint<Scalar> next;
    bool ok = detail::strong_wolfe<Scalar>(f, s.x, s.value, g, dir, initial, opt, next, s.evaluations);
    if (!ok && next.step > 0) {
      ok = true; // sufficient decrease holds even though curvature does not
    }
    if (!ok) {
      if (!s_hist.empty()) {
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        continue;
      }
      s.message = "line search failed to decrease the objective";
      return s;
    }

    const Vector<Scalar> step = next.x - s.x;
    const Vector<Scalar> dg = next.grad - g;
    const Scalar sy = step.dot(dg);
    const Scalar previous = s.value;
    s.x = next.x;
    g = next.grad;
    s.value = next.value;
    s.gradient_norm = g.norm();
    ++s.iterations;

    if (sy > std::numeric_limits<Scalar>::epsilon() * step.norm() * dg.norm()) {
      if (static_cast<int>(s_hist.size()) == opt.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      s_hist.push_back(step);
      y_hist.push_back(dg);
      rho_hist.push_back(1 / sy);
    }
    const Scalar floor = 4 * std::numeric_limits<Scalar>::epsilon() * std::max(Scalar(1), std::abs(s.value));
    stalled = previous - s.value <= floor ? stalled + 1 : 0;
    if (stalled >= 5) {
      s.message = "objective no longer decreasing at working precision";
      return s;
    }
  }
}

} // namespace atypicalib::optim
