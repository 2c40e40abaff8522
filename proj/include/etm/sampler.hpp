#pragma once

/**
 * @file sampler.hpp
 * @brief Draws from a fitted or specified model.
 *
 * Exact routes exist for the Gaussian-type families (direct or via the
 * marginal transforms), for the two-component mixture, and for any fully
 * finite domain (enumeration + inverse CDF). Everything else goes through a
 * systematic-scan Gibbs sampler built on the node conditionals
 *   f(x_j | x_-j) ~ exp(-M_jj T_jj(x) - sum_{k != j} (M_jk + M_kj) T_jk(x))
 *                   * base_j(x_j).
 */

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "model.hpp"
#include "normalizer.hpp"

namespace etm {

struct SamplerConfig {
  std::uint64_t seed = 0;
  int burn_in = 1000; ///< Gibbs full-scan sweeps discarded before recording
  int thin = 10;      ///< Gibbs sweeps between recorded draws
  std::optional<Vector> init; ///< Gibbs start; family default when absent
  double grid_tol = 1e-10; ///< relative mass resolution of inverse-CDF grids
  int count_cap = 512;     ///< discrete-conditional truncation (adaptive)
};

// ---------------------------------------------------------------------------
// Node conditionals
// ---------------------------------------------------------------------------

/// Log of the unnormalized conditional density of x_j given x_{-j},
/// keeping only terms that involve x_j.
inline double node_conditional_logpdf(const TraceModel& model,
                                      const ParameterMatrix& m, const Vector& x,
                                      int j) {
  if (j < 0 || j >= model.p) throw Error("node_conditional_logpdf: bad index");
  if (!model.domain.contains(x))
    throw DomainError("node_conditional_logpdf: point outside the domain");
  Matrix t = model.stat(x);
  double v = -m(j, j) * t(j, j);
  for (int k = 0; k < model.q; ++k)
    if (k != j) v -= (m(j, k) + m(k, j)) * t(j, k);
  return v + model.node_base(x, j);
}

namespace detail {

inline double unit_uniform(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

/// logpdf of candidate value v in coordinate j; -inf outside the domain
/// (structural constraints included).
inline double candidate_logpdf(const TraceModel& model, const ParameterMatrix& m,
                               Vector& x, int j, double v) {
  const double saved = x[j];
  x[j] = v;
  double lp = -std::numeric_limits<double>::infinity();
  if (model.domain.contains(x)) {
    Matrix t = model.stat(x);
    lp = -m(j, j) * t(j, j);
    for (int k = 0; k < model.q; ++k)
      if (k != j) lp -= (m(j, k) + m(k, j)) * t(j, k);
    lp += model.node_base(x, j);
  }
  x[j] = saved;
  return lp;
}

/// Inverse-CDF draw from unnormalized log-weights.
inline int categorical_draw(const std::vector<double>& logw,
                            std::mt19937_64& rng) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logw) mx = std::max(mx, l);
  if (!std::isfinite(mx))
    throw NormalizerFailure("conditional has no admissible values");
  double z = 0.0;
  std::vector<double> w(logw.size());
  for (size_t i = 0; i < logw.size(); ++i) {
    w[i] = std::exp(logw[i] - mx);
    z += w[i];
  }
  double u = unit_uniform(rng) * z, acc = 0.0;
  for (size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u <= acc) return static_cast<int>(i);
  }
  return static_cast<int>(w.size()) - 1;
}

/// Interaction pull on coordinate j for sqrt families: with u = sqrt(|x_j|)
/// the conditional exponent is exactly -M_jj u^2 - b u (+ base term), where
/// b collects the couplings against the current sqrt-magnitudes.
inline double sqrt_cond_pull(const TraceModel& model, const ParameterMatrix& m,
                             const Vector& x, int j) {
  double b = 0.0;
  for (int k = 0; k < model.q; ++k)
    if (k != j) b += (m(j, k) + m(k, j)) * std::sqrt(std::abs(x[k]));
  return b;
}

/// Draw a count coordinate by enumerating the conditional pmf up to
/// count_cap, doubling the cap while the tail still carries mass.
inline double draw_count_conditional(const TraceModel& model,
                                     const ParameterMatrix& m, Vector& x, int j,
                                     const SamplerConfig& cfg,
                                     std::mt19937_64& rng) {
  // Fast route for the sqrt families: closed-form exponent, no statistic
  // evaluation per candidate.
  const bool fast = model.sqrt_interactions && !model.domain.structural_constraint;
  const double pull = fast ? sqrt_cond_pull(model, m, x, j) : 0.0;
  const double saved = x[j];
  auto logpdf = [&](int v) {
    if (!fast) return candidate_logpdf(model, m, x, j, static_cast<double>(v));
    x[j] = static_cast<double>(v);
    double lp = -m(j, j) * v - pull * std::sqrt(static_cast<double>(v)) +
                model.node_base(x, j);
    x[j] = saved;
    return lp;
  };
  std::vector<double> logw;
  double mx = -std::numeric_limits<double>::infinity();
  int cap = cfg.count_cap;
  for (int v = 0; v < cap; ++v) {
    double lp = logpdf(v);
    logw.push_back(lp);
    mx = std::max(mx, lp);
    // tail mass < 1e-14 relative once the pmf has fallen 33 e-folds and is
    // decreasing (the conditional is eventually log-concave in v)
    if (v >= 8 && lp < mx - 33.0 && lp < logw[v - 1]) break;
    if (v == cap - 1) {
      if (cap >= (1 << 20))
        throw NormalizerFailure("count conditional tail not decaying; the "
                                "parameter appears outside the effective region");
      cap *= 2;
    }
  }
  return static_cast<double>(categorical_draw(logw, rng));
}

/// Numeric inverse CDF on [lo, hi] for a continuous log-density, with
/// endpoint-driven window expansion and piecewise-linear interpolation of
/// the trapezoid CDF.
inline double draw_grid_conditional(const std::function<double(double)>& logpdf,
                                    double lo, double hi, bool expand_low,
                                    double grid_tol, std::mt19937_64& rng) {
  for (int expansion = 0; expansion < 8; ++expansion) {
    // refine until the total trapezoid mass is resolved to grid_tol
    int k = 256;
    std::vector<double> pts, lp, cdf;
    double prev_mass = -1.0, mx = 0.0;
    for (; k <= 8192; k *= 2) {
      double step = (hi - lo) / (k - 1);
      pts.resize(k);
      lp.resize(k);
      mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < k; ++i) {
        pts[i] = lo + step * i;
        lp[i] = logpdf(pts[i]);
        mx = std::max(mx, lp[i]);
      }
      cdf.assign(k, 0.0);
      for (int i = 1; i < k; ++i) {
        double a = std::exp(lp[i - 1] - mx), b = std::exp(lp[i] - mx);
        cdf[i] = cdf[i - 1] + 0.5 * (a + b) * step;
      }
      double mass = cdf[k - 1];
      if (prev_mass > 0.0 &&
          std::abs(mass - prev_mass) <= grid_tol * std::max(mass, 1e-300) * 1e4)
        break;
      prev_mass = mass;
    }
    bool hi_heavy = lp.back() > mx - 30.0;
    bool lo_heavy = expand_low && lp.front() > mx - 30.0;
    if (!hi_heavy && !lo_heavy) {
      double u = unit_uniform(rng) * cdf.back();
      int n = static_cast<int>(cdf.size());
      int i = 1;
      while (i < n - 1 && cdf[i] < u) ++i;
      double seg = cdf[i] - cdf[i - 1];
      double frac = seg > 0.0 ? (u - cdf[i - 1]) / seg : 0.5;
      return pts[i - 1] + frac * (pts[i] - pts[i - 1]);
    }
    double width = hi - lo;
    if (hi_heavy) hi += width;
    if (lo_heavy) lo -= width;
  }
  throw NormalizerFailure("continuous conditional did not decay within the "
                          "expanded grid window");
}

/// Draw one continuous coordinate. Sqrt-interaction families sample the
/// magnitude in u = sqrt(|x_j|) (removing the kink at zero), with a fair
/// sign flip for coordinates on the whole line.
inline double draw_continuous_conditional(const TraceModel& model,
                                          const ParameterMatrix& m, Vector& x,
                                          int j, const SamplerConfig& cfg,
                                          std::mt19937_64& rng) {
  const CoordKind kind = model.domain.coords[j].kind;
  if (model.sqrt_interactions) {
    double r = std::max(m(j, j), 1e-3);
    double pull = sqrt_cond_pull(model, m, x, j);
    double b = std::abs(pull); // worst-case linear pull in u
    double uhi = (b + std::sqrt(b * b + 4.0 * r * 45.0)) / (2.0 * r);
    auto logq = [&](double u) {
      // exponent in u plus the magnitude Jacobian du -> dx
      return -m(j, j) * u * u - pull * u + std::log(std::max(2.0 * u, 1e-300));
    };
    double u = draw_grid_conditional(logq, 0.0, uhi, /*expand_low=*/false,
                                     cfg.grid_tol, rng);
    double mag = u * u;
    if (kind == CoordKind::real && unit_uniform(rng) < 0.5) return -mag;
    return mag;
  }
  // quadratic-type exponent in x itself
  double r = std::max(model.family == Family::restricted_pairwise ? m(j, j)
                                                                  : m(j, j) / 2.0,
                      1e-3);
  double b = 0.0;
  for (int k = 0; k < model.q; ++k)
    if (k != j) b += std::abs(m(j, k) + m(k, j)) * std::abs(x[k]);
  double w = std::sqrt(45.0 / r) + b / r;
  double lo = kind == CoordKind::nonneg_real ? 0.0 : -w;
  auto logq = [&](double v) { return candidate_logpdf(model, m, x, j, v); };
  return draw_grid_conditional(logq, lo, w, kind != CoordKind::nonneg_real,
                               cfg.grid_tol, rng);
}

inline void gibbs_sweep(const TraceModel& model, const ParameterMatrix& m,
                        Vector& x, const SamplerConfig& cfg,
                        std::mt19937_64& rng) {
  for (int j = 0; j < model.p; ++j) {
    switch (model.domain.coords[j].kind) {
      case CoordKind::binary:
      case CoordKind::finite_set: {
        int card = model.domain.coords[j].kind == CoordKind::binary
                       ? 2
                       : model.domain.coords[j].cardinality;
        std::vector<double> logw(card);
        for (int v = 0; v < card; ++v)
          logw[v] = candidate_logpdf(model, m, x, j, static_cast<double>(v));
        x[j] = static_cast<double>(categorical_draw(logw, rng));
        break;
      }
      case CoordKind::count:
        x[j] = draw_count_conditional(model, m, x, j, cfg, rng);
        break;
      case CoordKind::nonneg_real:
      case CoordKind::real:
        x[j] = draw_continuous_conditional(model, m, x, j, cfg, rng);
        break;
    }
  }
}

inline Vector gibbs_start(const TraceModel& model) {
  Vector x = Vector::Zero(model.p);
  for (int j = 0; j < model.p; ++j)
    if (model.domain.coords[j].kind == CoordKind::nonneg_real) x[j] = 1.0;
  if (!model.domain.contains(x)) x.setZero();
  if (!model.domain.contains(x))
    throw Error("sampler: no feasible starting point found");
  return x;
}

// ---------------------------------------------------------------------------
// Exact routes
// ---------------------------------------------------------------------------

inline Matrix sample_gaussian(const Matrix& m, long n, std::mt19937_64& rng) {
  const int p = static_cast<int>(m.rows());
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success)
    throw NonExistence("sampler: matrix is not positive definite");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(n, p);
  Vector z(p);
  for (long i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) z[j] = normal(rng);
    // X = L^{-T} Z has covariance (L L^T)^{-1} = M^{-1}
    out.row(i) = llt.matrixU().solve(z).transpose();
  }
  return out;
}

inline Matrix sample_mixture(const TraceModel& model, const ParameterMatrix& m,
                             long n, std::mt19937_64& rng) {
  const int r = model.block_dim;
  Matrix m1 = m.topLeftCorner(r, r), m2 = m.bottomRightCorner(r, r);
  auto block_lognorm = [r](const Matrix& blk) {
    Eigen::LLT<Matrix> llt(blk);
    if (llt.info() != Eigen::Success)
      throw NonExistence("sampler: mixture block is not positive definite");
    double logdet = 0.0;
    for (int i = 0; i < r; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    return 0.5 * (r * std::log(2.0 * M_PI) - logdet);
  };
  double g1 = block_lognorm(m1), g2 = block_lognorm(m2);
  double p1 = 1.0 / (1.0 + std::exp(g2 - g1)); // P(z = 0)
  Eigen::LLT<Matrix> llt1(m1), llt2(m2);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(n, model.p);
  Vector z(r);
  for (long i = 0; i < n; ++i) {
    bool first = unit_uniform(rng) < p1;
    for (int j = 0; j < r; ++j) z[j] = normal(rng);
    out.row(i).head(r) =
        (first ? llt1 : llt2).matrixU().solve(z).transpose();
    out(i, r) = first ? 0.0 : 1.0;
  }
  return out;
}

/// Exact draws on a fully finite domain: enumerate admissible states once,
/// then invert the CDF per draw.
inline Matrix sample_finite_exact(const TraceModel& model,
                                  const ParameterMatrix& m, long n,
                                  std::mt19937_64& rng) {
  const int p = model.p;
  long total = 1;
  for (const auto& c : model.domain.coords) {
    total *= (c.kind == CoordKind::binary ? 2 : c.cardinality);
    if (total > (1L << 22))
      throw NormalizerFailure("finite domain too large for exact sampling");
  }
  std::vector<Vector> states;
  std::vector<double> logw;
  std::vector<int> idx(p, 0);
  Vector x = Vector::Zero(p);
  while (true) {
    if (model.domain.contains(x)) {
      states.push_back(x);
      logw.push_back(log_kernel(model, m, x));
    }
    int j = 0;
    for (; j < p; ++j) {
      int card = model.domain.coords[j].kind == CoordKind::binary
                     ? 2
                     : model.domain.coords[j].cardinality;
      if (++idx[j] < card) {
        x[j] = static_cast<double>(idx[j]);
        break;
      }
      idx[j] = 0;
      x[j] = 0.0;
    }
    if (j == p) break;
  }
  double mx = *std::max_element(logw.begin(), logw.end());
  std::vector<double> cdf(logw.size());
  double acc = 0.0;
  for (size_t i = 0; i < logw.size(); ++i) {
    acc += std::exp(logw[i] - mx);
    cdf[i] = acc;
  }
  Matrix out(n, p);
  for (long i = 0; i < n; ++i) {
    double u = unit_uniform(rng) * acc;
    size_t lo = std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
    if (lo >= states.size()) lo = states.size() - 1;
    out.row(i) = states[lo].transpose();
  }
  return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// n draws from f_M, as rows of an n x p matrix. Exact where the family
/// permits it, systematic-scan Gibbs otherwise.
inline Matrix sample(const TraceModel& model, const ParameterMatrix& m, long n,
                     const SamplerConfig& config = {}) {
  if (n < 1) throw Error("sample: n must be >= 1");
  if (auto why = model.space.violation(m))
    throw DomainError("sample: parameter rejected: " + *why);
  std::mt19937_64 rng(config.seed);

  switch (model.family) {
    case Family::gaussian:
      return detail::sample_gaussian(m, n, rng);
    case Family::nonparanormal: {
      Matrix z = detail::sample_gaussian(m, n, rng);
      for (int j = 0; j < model.p; ++j) {
        if (!model.transforms[j].inverse)
          throw Error("sample: transform " + std::to_string(j + 1) +
                      " has no inverse; cannot sample this model");
        for (long i = 0; i < n; ++i) z(i, j) = model.transforms[j].inverse(z(i, j));
      }
      return z;
    }
    case Family::mixture_gaussian_binary:
      return detail::sample_mixture(model, m, n, rng);
    default:
      break;
  }
  if (model.has_finite_domain())
    return detail::sample_finite_exact(model, m, n, rng);

  // Gibbs
  if (config.burn_in < 0 || config.thin < 1)
    throw Error("sample: burn_in must be >= 0 and thin >= 1");
  Vector x;
  if (config.init) {
    x = *config.init;
    if (!model.domain.contains(x))
      throw DomainError("sample: init point outside the domain");
  } else {
    x = detail::gibbs_start(model);
  }
  for (int s = 0; s < config.burn_in; ++s)
    detail::gibbs_sweep(model, m, x, config, rng);
  Matrix out(n, model.p);
  for (long i = 0; i < n; ++i) {
    for (int s = 0; s < config.thin; ++s)
      detail::gibbs_sweep(model, m, x, config, rng);
    out.row(i) = x.transpose();
  }
  return out;
}

} // namespace etm
