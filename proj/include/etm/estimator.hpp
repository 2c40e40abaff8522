#pragma once

/**
 * @file estimator.hpp
 * @brief Maximum likelihood estimation for exponential trace models.
 *
 * The per-sample objective <M, Tbar> + gamma(M) is convex with gradient
 * Tbar - E_M[T] and Hessian Cov_M(T) in free coordinates, so the solver is
 * a damped Newton iteration with backtracking line search that also
 * enforces feasibility (positive definiteness where the family requires it).
 */

#include <algorithm>
#include <cmath>
#include <string>

#include "model.hpp"
#include "normalizer.hpp"

namespace etm {

// ---------------------------------------------------------------------------
// Gram matrix
// ---------------------------------------------------------------------------

/// Sample average of T over the dataset.
struct GramMatrix {
  Matrix entries; ///< q x q
  int n = 0;
};

inline GramMatrix gram_matrix(const TraceModel& model, const Dataset& data) {
  if (data.n() < 1) throw DomainError("gram_matrix: empty dataset");
  Matrix acc = Matrix::Zero(model.q, model.q);
  for (int i = 0; i < data.n(); ++i) {
    Vector x = data.rows.row(i).transpose();
    if (!model.domain.contains(x))
      throw DomainError("gram_matrix: row " + std::to_string(i + 1) +
                        " is outside the model domain");
    acc += model.stat(x);
  }
  return {acc / data.n(), data.n()};
}

// ---------------------------------------------------------------------------
// Objective and derivatives
// ---------------------------------------------------------------------------

/// Per-sample negative log-likelihood up to an M-independent constant:
/// <M, Tbar> + gamma(M).
inline double objective(const TraceModel& model, const ParameterMatrix& m,
                        const GramMatrix& gram, const EvalStrategy& strategy) {
  return trace_inner(m, gram.entries) + log_normalizer(model, m, strategy);
}

/// Gradient over free coordinates; symmetric partners are aggregated, masked
/// entries excluded: g_k = mult_k * (Tbar_ij - E_M[T_ij]).
inline Vector gradient(const TraceModel& model, const ParameterMatrix& m,
                       const GramMatrix& gram, const EvalStrategy& strategy) {
  MomentBundle bundle = moments(model, m, strategy, 1);
  const int d = model.space.dim();
  Vector g(d);
  for (int k = 0; k < d; ++k) {
    const auto& [i, j] = model.space.free_coords[k];
    g[k] = model.space.multiplicity(k) *
           (gram.entries(i, j) - bundle.mean_stat(i, j));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct FitOptions {
  int max_iter = 200;
  double grad_tol = 1e-8;       ///< on the projected gradient trace-norm
  double backtrack_factor = 0.5;
  double sufficient_decrease = 1e-4;
  double divergence_bound = 1e6; ///< max iterate trace-norm
  EvalStrategy strategy;
  std::optional<ParameterMatrix> init; ///< family default when absent

  FitOptions() { strategy = EvalStrategy::closed_form(); }
  explicit FitOptions(EvalStrategy s) : strategy(std::move(s)) {}
};

struct FitResult {
  ParameterMatrix m_hat;
  double log_norm_hat = 0.0;
  double objective = 0.0;      ///< per-sample <M,Tbar> + gamma
  double log_likelihood = 0.0; ///< full joint log-likelihood including xi terms
  int iterations = 0;
  double final_grad_norm = 0.0;
  bool converged = false;
  double stationarity_gap = 0.0; ///< max |Tbar_ij - E_Mhat T_ij| over free coords
};

namespace detail {

/// Diagonal initialization matching the independent-case moment equations.
inline ParameterMatrix default_init(const TraceModel& model, const GramMatrix& gram) {
  const int q = model.q;
  Matrix m = Matrix::Zero(q, q);
  auto clamp = [](double v, double lo, double hi) { return std::clamp(v, lo, hi); };
  for (int j = 0; j < q; ++j) {
    double tjj = gram.entries(j, j);
    double v = 0.0;
    switch (model.family) {
      case Family::gaussian:
      case Family::nonparanormal:
        v = clamp(0.5 / std::max(tjj, 1e-8), 1e-4, 1e4); // E[x^2/2] = 1/(2 M_jj)
        break;
      case Family::ising:
      case Family::multinomial_ising: {
        double f = clamp(tjj, 1e-3, 1.0 - 1e-3);
        v = clamp(-std::log(f / (1.0 - f)), -10.0, 10.0); // E[x] = sigmoid(-M_jj)
        break;
      }
      case Family::poisson_sqrt:
      case Family::poisson_naive:
        v = clamp(-std::log(std::max(tjj, 1e-6)), -10.0, 10.0); // rate e^{-M_jj}
        break;
      case Family::exponential_sqrt:
      case Family::laplace_sqrt:
        v = clamp(1.0 / std::max(tjj, 1e-8), 1e-3, 1e3); // E|x| = 1/M_jj
        break;
      case Family::composite_sqrt:
        v = j < model.p1
                ? clamp(-std::log(std::max(tjj, 1e-6)), 0.05, 10.0)
                : clamp(1.0 / std::max(tjj, 1e-8), 0.05, 1e3);
        // lower clamp keeps the joint matrix positive definite at init
        break;
      case Family::mixture_gaussian_binary:
        // block weights are unknown before the fit; a 50/50 split is close
        // enough for a feasible starting point
        v = clamp(0.25 / std::max(tjj, 1e-8), 1e-4, 1e4);
        break;
      case Family::restricted_pairwise:
        v = 0.5;
        break;
    }
    m(j, j) = v;
  }
  return m;
}

/// Grid-backed evaluation context reused across Newton iterations; rebuilt
/// when the adaptive grid outgrows the cached one.
struct FitEvaluator {
  const TraceModel& model;
  EvalStrategy strategy;
  bool grid_backed;
  std::vector<CoordGrid> grids;
  StateTable table;

  FitEvaluator(const TraceModel& mod, const EvalStrategy& st)
      : model(mod), strategy(st) {
    using K = EvalStrategy::Kind;
    grid_backed = st.kind == K::enumerate_states ||
                  st.kind == K::truncated_series || st.kind == K::quadrature;
  }

  static bool grid_compatible(const std::vector<CoordGrid>& cached,
                              const std::vector<CoordGrid>& wanted) {
    if (cached.size() != wanted.size()) return false;
    for (size_t j = 0; j < cached.size(); ++j) {
      if (cached[j].points.size() < wanted[j].points.size()) return false;
      double uc = std::abs(cached[j].points.back());
      double uw = std::abs(wanted[j].points.back());
      if (uw > 0 && (uc < 0.9 * uw || uc > 2.5 * uw)) return false;
    }
    return true;
  }

  MomentBundle eval(const ParameterMatrix& m, int order) {
    if (!grid_backed) return dispatch(model, m, strategy, order);
    auto wanted = build_grids(model, m, strategy);
    if (grids.empty() || !grid_compatible(grids, wanted)) {
      grids = std::move(wanted);
      table = build_state_table(model, grids);
    }
    MomentBundle b = eval_table(model, table, model.space.to_free(m), order);
    b.strategy_used = strategy;
    return b;
  }
};

} // namespace detail

/// Damped Newton solver for the maximum likelihood estimator.
inline FitResult fit_mle(const TraceModel& model, const Dataset& data,
                         const FitOptions& opts) {
  if (!(opts.grad_tol > 0) || opts.max_iter < 1)
    throw Error("fit_mle: invalid options");
  GramMatrix gram = gram_matrix(model, data);

  // Degenerate data makes the MLE escape to infinity along the affected
  // coordinate; fail early with a name instead of diverging silently.
  for (int j = 0; j < model.p; ++j) {
    if (model.domain.coords[j].kind == CoordKind::binary ||
        model.domain.coords[j].kind == CoordKind::finite_set) {
      double first = data.rows(0, j);
      bool constant = true;
      for (int i = 1; i < data.n() && constant; ++i)
        constant = data.rows(i, j) == first;
      if (constant && data.n() > 1)
        throw NonExistence("fit_mle: coordinate " + std::to_string(j + 1) +
                           " is constant across all samples; the MLE does "
                           "not exist");
    }
  }

  ParameterMatrix m = opts.init ? *opts.init : detail::default_init(model, gram);
  {
    auto v = model.space.violation(m);
    if (v) throw Error("fit_mle: initial point infeasible: " + *v);
  }

  const int d = model.space.dim();
  Vector sbar(d);
  for (int k = 0; k < d; ++k) {
    const auto& [i, j] = model.space.free_coords[k];
    sbar[k] = model.space.multiplicity(k) * gram.entries(i, j);
  }

  detail::FitEvaluator evaluator(model, opts.strategy);
  Vector theta = model.space.to_free(m);

  auto obj_at = [&](const Vector& th, double log_norm) {
    return sbar.dot(th) + log_norm;
  };

  MomentBundle bundle = evaluator.eval(m, 2);
  double fval = obj_at(theta, bundle.log_norm);

  FitResult res;
  res.converged = false;
  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    Vector mean_s(d);
    for (int k = 0; k < d; ++k) {
      const auto& [i, j] = model.space.free_coords[k];
      mean_s[k] = model.space.multiplicity(k) * bundle.mean_stat(i, j);
    }
    Vector g = sbar - mean_s;
    // trace norm of the expanded symmetric gradient matrix
    double gnorm = 0.0;
    for (int k = 0; k < d; ++k)
      gnorm += model.space.multiplicity(k) * (g[k] / model.space.multiplicity(k)) *
               (g[k] / model.space.multiplicity(k));
    gnorm = std::sqrt(gnorm);
    res.final_grad_norm = gnorm;
    if (gnorm <= opts.grad_tol) {
      res.converged = true;
      break;
    }

    // Newton direction with a ridge-and-retry fallback to steepest descent.
    Vector step;
    bool have_step = false;
    {
      Eigen::LDLT<Matrix> ldlt(*bundle.cov_free);
      if (ldlt.info() == Eigen::Success) {
        Vector cand = ldlt.solve(-g);
        if (cand.allFinite() && g.dot(cand) < 0) {
          step = cand;
          have_step = true;
        }
      }
    }
    if (!have_step) step = -g;

    double slope = g.dot(step);
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      Vector trial = theta + t * step;
      ParameterMatrix mt = model.space.from_free(trial);
      if (model.space.contains(mt)) {
        MomentBundle tb;
        bool eval_ok = true;
        try {
          tb = evaluator.eval(mt, 2);
        } catch (const NonExistence&) {
          eval_ok = false;
        }
        if (eval_ok) {
          double ft = obj_at(trial, tb.log_norm);
          if (std::isfinite(ft) &&
              ft <= fval + opts.sufficient_decrease * t * slope) {
            theta = trial;
            m = mt;
            bundle = tb;
            fval = ft;
            accepted = true;
            break;
          }
        }
      }
      t *= opts.backtrack_factor;
    }
    if (!accepted) break; // stalled; report best iterate with converged flag

    if (m.norm() > opts.divergence_bound)
      throw NonExistence(
          "fit_mle: iterate trace-norm exceeded the divergence bound; the MLE "
          "may not exist at this sample size");
  }

  res.m_hat = m;
  res.log_norm_hat = bundle.log_norm;
  res.objective = fval;
  res.iterations = iter;
  {
    double gap = 0.0;
    for (int k = 0; k < d; ++k) {
      const auto& [i, j] = model.space.free_coords[k];
      gap = std::max(gap, std::abs(gram.entries(i, j) - bundle.mean_stat(i, j)));
    }
    res.stationarity_gap = gap;
  }
  {
    double xi_sum = 0.0;
    for (int i = 0; i < data.n(); ++i)
      xi_sum += model.log_base(data.rows.row(i).transpose());
    res.log_likelihood =
        -static_cast<double>(data.n()) *
            (trace_inner(m, gram.entries) + bundle.log_norm) +
        xi_sum;
  }
  return res;
}

} // namespace etm
