#pragma once

/**
 * @file normalizer.hpp
 * @brief Log-normalizer gamma(M) and moments of the sufficient statistic.
 *
 * gamma(M) = log int_D exp(-<M,T(x)> + xi(x)) dnu is evaluated by strategy
 * dispatch: closed forms where available, exact enumeration on finite
 * domains, adaptively truncated series on count domains, tensor-product
 * quadrature on continuous domains, and importance sampling otherwise.
 *
 * Moments are reported both as the q x q mean of T and as the d x d
 * covariance of the free-coordinate sufficient statistic
 * s_k(x) = mult_k * T_{i_k j_k}(x), which is exactly the Hessian of the
 * per-sample negative log-likelihood in free coordinates.
 */

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "model.hpp"

namespace etm {

// ---------------------------------------------------------------------------
// Strategy
// ---------------------------------------------------------------------------

struct EvalStrategy {
  enum class Kind { closed_form, enumerate_states, truncated_series, quadrature, monte_carlo };
  Kind kind = Kind::closed_form;

  double tail_tol = 1e-12; ///< truncated_series tail mass bound
  int max_cap = 4096;      ///< truncated_series per-coordinate cap
  int nodes_per_dim = 64;  ///< quadrature
  long samples = 100000;   ///< monte_carlo
  std::uint64_t seed = 0;  ///< monte_carlo

  static EvalStrategy closed_form() { return {Kind::closed_form}; }
  static EvalStrategy enumerate_states() { return {Kind::enumerate_states}; }
  static EvalStrategy truncated_series(double tail_tol = 1e-12, int max_cap = 4096) {
    EvalStrategy s{Kind::truncated_series};
    s.tail_tol = tail_tol;
    s.max_cap = max_cap;
    if (!(tail_tol > 0)) throw Error("tail_tol must be > 0");
    return s;
  }
  static EvalStrategy quadrature(int nodes_per_dim = 64) {
    EvalStrategy s{Kind::quadrature};
    if (nodes_per_dim < 2) throw Error("nodes_per_dim must be >= 2");
    s.nodes_per_dim = nodes_per_dim;
    return s;
  }
  static EvalStrategy monte_carlo(long samples, std::uint64_t seed) {
    EvalStrategy s{Kind::monte_carlo};
    if (samples < 1) throw Error("samples must be >= 1");
    s.samples = samples;
    s.seed = seed;
    return s;
  }
};

struct MomentBundle {
  double log_norm = 0.0;          ///< gamma(M)
  Matrix mean_stat;               ///< q x q, E_M[T(X)]
  std::optional<Matrix> cov_free; ///< d x d, Cov(s_k, s_l) over free coords
  EvalStrategy strategy_used;
  double error_estimate = 0.0;

  /// Full-tensor view Cov_M(T_ij, T_kl), expanded from the free-coordinate
  /// store by symmetry (s_k = mult_k * T_ij for the representative entry).
  double cov_entry(const ParameterSpace& space, int i, int j, int k, int l) const {
    if (!cov_free) throw Error("covariance not computed (order 1 bundle)");
    int a = space.free_index(i, j), b = space.free_index(k, l);
    if (a < 0 || b < 0) return 0.0; // masked entries have T identically zero
    return (*cov_free)(a, b) / (space.multiplicity(a) * space.multiplicity(b));
  }
};

enum class Integrability { finite, infinite, unknown };

// ---------------------------------------------------------------------------
// Gauss-Legendre nodes (Newton on the Legendre recurrence)
// ---------------------------------------------------------------------------

namespace detail {

inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 0; k < n; ++k) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k + 1.0) * z * p1 - k * p2) / (k + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * pp * pp);
  }
}

// Kahan-compensated accumulator.
struct Kahan {
  double sum = 0.0, c = 0.0;
  void add(double v) {
    double y = v - c;
    double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
};

} // namespace detail

// ---------------------------------------------------------------------------
// Per-coordinate evaluation grids
// ---------------------------------------------------------------------------

namespace detail {

struct CoordGrid {
  std::vector<double> points;
  std::vector<double> logw;
};

/// Truncation length for a count coordinate: smallest N with the Poisson-type
/// tail bound sum_{x>N} C^x / x! below tail_tol. Throws when the family admits
/// no growth bound and M has destabilizing interactions, or when the cap is
/// exceeded (partial sums still growing).
inline int series_length(const TraceModel& model, const ParameterMatrix& m,
                         int j, const EvalStrategy& st) {
  double maxoff = 0.0;
  for (int a = 0; a < model.q; ++a)
    for (int b = 0; b < model.q; ++b)
      if (a != b) maxoff = std::max(maxoff, std::abs(m(a, b)));
  double log_c;
  if (model.pair_growth_bound >= 0.0) {
    log_c = -(m(j, j) - 2.0 * model.q * model.pair_growth_bound * maxoff);
  } else {
    // Product interactions: the series converges only when every
    // off-diagonal coefficient keeps -M_ij x_i x_j non-positive.
    for (int a = 0; a < model.q; ++a)
      for (int b = 0; b < model.q; ++b)
        if (a != b && m(a, b) < 0.0)
          throw NonExistence(
              "series diverges: positive product interaction at entry (" +
              std::to_string(a + 1) + "," + std::to_string(b + 1) +
              "); gamma(M) is infinite");
    log_c = -m(j, j);
  }
  // tail(N) <= C^{N+1}/(N+1)! * 1/(1 - C/(N+2)) for C < N+2.
  const double log_tol = std::log(st.tail_tol);
  for (int n = 8; n <= st.max_cap; n = std::max(n + 1, (n * 3) / 2)) {
    double c_over = log_c - std::log(static_cast<double>(n + 2));
    if (c_over >= 0.0) continue; // C >= N+2: bound not yet valid
    double log_tail = (n + 1) * log_c - std::lgamma(n + 2.0) -
                      std::log1p(-std::exp(c_over));
    if (log_tail < log_tol) return n;
  }
  throw NonExistence("truncated series still growing at max_cap " +
                     std::to_string(st.max_cap) + "; M appears outside the "
                     "effective parameter region");
}

/// Quadrature half-widths per continuous coordinate, from the decay of the
/// (substituted) Gaussian-type exponent with a fixed-point correction for
/// cross-coordinate drift.
inline std::vector<double> quad_bounds(const TraceModel& model,
                                       const ParameterMatrix& m,
                                       const std::vector<int>& cont_idx,
                                       const std::vector<int>& count_len) {
  const double target = 45.0; // exp(-45) ~ 3e-20 relative tail
  const int nc = static_cast<int>(cont_idx.size());
  // Quadratic decay rate per coordinate. sqrt families integrate in
  // u = sqrt(x) where the diagonal term is exactly -M_jj u^2; gaussian-type
  // families in x where it is -M_jj x^2 / 2 (restricted_pairwise: -M_jj x^2).
  auto diag_rate = [&](int j) {
    double mj = m(j, j);
    if (model.sqrt_interactions) return std::max(mj, 1e-3);
    if (model.family == Family::restricted_pairwise) return std::max(mj, 1e-3);
    return std::max(mj / 2.0, 1e-3);
  };
  std::vector<double> u(nc);
  for (int a = 0; a < nc; ++a) u[a] = std::sqrt(target / diag_rate(cont_idx[a]));
  // Linear drift from couplings shifts the effective integration box.
  for (int sweep = 0; sweep < 4; ++sweep) {
    for (int a = 0; a < nc; ++a) {
      int j = cont_idx[a];
      double b = 0.0;
      for (int bidx = 0; bidx < nc; ++bidx) {
        if (bidx == a) continue;
        int k = cont_idx[bidx];
        b += std::abs(m(j, k) + m(k, j)) * u[bidx];
      }
      for (int k = 0; k < model.q; ++k) {
        if (k < static_cast<int>(count_len.size()) && count_len[k] > 0 && k != j)
          b += std::abs(m(j, k) + m(k, j)) * std::sqrt(static_cast<double>(count_len[k]));
      }
      double r = diag_rate(j);
      u[a] = (b + std::sqrt(b * b + 4.0 * r * target)) / (2.0 * r);
    }
  }
  return u;
}

inline std::vector<CoordGrid> build_grids(const TraceModel& model,
                                          const ParameterMatrix& m,
                                          const EvalStrategy& st) {
  const int p = model.p;
  std::vector<CoordGrid> grids(p);

  std::vector<int> cont_idx;
  std::vector<int> count_len(model.q, 0);
  for (int j = 0; j < p; ++j) {
    CoordKind k = model.domain.coords[j].kind;
    if (k == CoordKind::count) count_len[j] = series_length(model, m, j, st);
    if (!is_discrete(k)) cont_idx.push_back(j);
  }

  std::vector<double> ubound;
  if (!cont_idx.empty()) ubound = quad_bounds(model, m, cont_idx, count_len);

  std::vector<double> gx, gw;
  if (!cont_idx.empty()) gauss_legendre(st.nodes_per_dim, gx, gw);

  int cont_pos = 0;
  for (int j = 0; j < p; ++j) {
    CoordKind kind = model.domain.coords[j].kind;
    CoordGrid& g = grids[j];
    switch (kind) {
      case CoordKind::binary:
      case CoordKind::finite_set: {
        int card = kind == CoordKind::binary ? 2 : model.domain.coords[j].cardinality;
        for (int v = 0; v < card; ++v) {
          g.points.push_back(static_cast<double>(v));
          g.logw.push_back(0.0);
        }
        break;
      }
      case CoordKind::count: {
        for (int v = 0; v <= count_len[j]; ++v) {
          g.points.push_back(static_cast<double>(v));
          g.logw.push_back(0.0);
        }
        break;
      }
      case CoordKind::nonneg_real:
      case CoordKind::real: {
        const double U = ubound[cont_pos++];
        const bool two_sided_magnitude =
            kind == CoordKind::real && model.sqrt_interactions;
        for (int i = 0; i < st.nodes_per_dim; ++i) {
          double t = 0.5 * U * (gx[i] + 1.0); // node on [0, U]
          double lw = std::log(0.5 * U * gw[i]);
          if (model.sqrt_interactions) {
            // x = u^2 removes the sqrt kink: dx = 2u du.
            double x = t * t;
            lw += std::log(2.0 * t);
            if (two_sided_magnitude) lw += std::log(2.0); // sign doubling
            g.points.push_back(x);
            g.logw.push_back(lw);
          } else if (kind == CoordKind::real) {
            // symmetric box [-U, U]
            g.points.push_back(-U + t);   // placeholder; replaced below
            g.logw.push_back(lw);
          } else {
            g.points.push_back(t);
            g.logw.push_back(lw);
          }
        }
        if (!model.sqrt_interactions && kind == CoordKind::real) {
          // rebuild on [-U, U] directly
          g.points.clear();
          g.logw.clear();
          for (int i = 0; i < st.nodes_per_dim; ++i) {
            g.points.push_back(U * gx[i]);
            g.logw.push_back(std::log(U * gw[i]));
          }
        }
        break;
      }
    }
  }
  return grids;
}

} // namespace detail

// ---------------------------------------------------------------------------
// State table: cached tensor-product evaluation
// ---------------------------------------------------------------------------

namespace detail {

/// All grid states with their base log-weights (grid weights + xi) and
/// free-coordinate statistic vectors. For a fixed table, any M on the same
/// grid evaluates as log-term_i = base_i - S_i . theta.
struct StateTable {
  Eigen::VectorXd base;              ///< nstates
  Matrix s;                          ///< nstates x d, s_k = mult_k T_{ij}
  std::vector<long> grid_shape;      ///< per-coordinate node counts

  long size() const { return base.size(); }
};

inline StateTable build_state_table(const TraceModel& model,
                                    const std::vector<CoordGrid>& grids) {
  const int p = model.p;
  const int d = model.space.dim();
  long total = 1;
  for (const auto& g : grids) {
    total *= static_cast<long>(g.points.size());
    if (total > 50'000'000L)
      throw NormalizerFailure("evaluation grid too large; use monte_carlo");
  }
  StateTable tab;
  tab.grid_shape.reserve(p);
  for (const auto& g : grids) tab.grid_shape.push_back(static_cast<long>(g.points.size()));

  std::vector<double> bases;
  std::vector<double> svals;
  bases.reserve(total);
  svals.reserve(total * d);

  std::vector<int> idx(p, 0);
  Vector x(p);
  for (int j = 0; j < p; ++j) x[j] = grids[j].points[0];
  while (true) {
    bool ok = !model.domain.structural_constraint ||
              model.domain.structural_constraint(x);
    if (ok) {
      double lw = 0.0;
      for (int j = 0; j < p; ++j) lw += grids[j].logw[idx[j]];
      lw += model.log_base(x);
      Matrix t = model.stat(x);
      bases.push_back(lw);
      for (int k = 0; k < d; ++k) {
        const auto& [i, j] = model.space.free_coords[k];
        svals.push_back(model.space.multiplicity(k) * t(i, j));
      }
    }
    // odometer
    int j = 0;
    for (; j < p; ++j) {
      if (++idx[j] < static_cast<int>(grids[j].points.size())) {
        x[j] = grids[j].points[idx[j]];
        break;
      }
      idx[j] = 0;
      x[j] = grids[j].points[0];
    }
    if (j == p) break;
  }

  const long n = static_cast<long>(bases.size());
  tab.base = Eigen::Map<Eigen::VectorXd>(bases.data(), n);
  tab.s = Eigen::Map<Matrix>(svals.data(), d, n).transpose();
  return tab;
}

/// gamma, E[s], and optionally Cov[s] on a fixed state table.
inline MomentBundle eval_table(const TraceModel& model, const StateTable& tab,
                               const Vector& theta, int order) {
  const long n = tab.size();
  const int d = model.space.dim();
  Eigen::VectorXd logterm = tab.base - tab.s * theta;
  const double mx = logterm.maxCoeff();
  if (!std::isfinite(mx))
    throw NormalizerFailure("normalizer evaluation produced non-finite terms");

  Kahan zsum;
  Eigen::VectorXd w(n);
  for (long i = 0; i < n; ++i) {
    w[i] = std::exp(logterm[i] - mx);
    zsum.add(w[i]);
  }
  const double z = zsum.sum;

  MomentBundle out;
  out.log_norm = mx + std::log(z);
  w /= z;

  Eigen::VectorXd mean_s = tab.s.transpose() * w;
  out.mean_stat = Matrix::Zero(model.q, model.q);
  for (int k = 0; k < d; ++k) {
    const auto& [i, j] = model.space.free_coords[k];
    double v = mean_s[k] / model.space.multiplicity(k);
    out.mean_stat(i, j) = v;
    if (model.space.symmetric) out.mean_stat(j, i) = v;
  }
  if (order >= 2) {
    Matrix second = tab.s.transpose() * w.asDiagonal() * tab.s;
    out.cov_free = second - mean_s * mean_s.transpose();
  }
  return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Closed forms
// ---------------------------------------------------------------------------

namespace detail {

/// Gaussian / non-paranormal: gamma = log((2 pi)^p |M^{-1}|) / 2,
/// E[T] = M^{-1} / 2, and Isserlis for the covariance of T.
inline MomentBundle gaussian_closed_form(const TraceModel& model,
                                         const ParameterMatrix& m, int order) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success)
    throw NormalizerFailure("closed form requires positive definite M");
  const int p = model.q;
  double logdet = 0.0;
  for (int i = 0; i < p; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  Matrix sigma = llt.solve(Matrix::Identity(p, p));

  MomentBundle out;
  out.log_norm = 0.5 * (p * std::log(2.0 * M_PI) - logdet);
  out.mean_stat = 0.5 * sigma;
  if (order >= 2) {
    const int d = model.space.dim();
    Matrix cov(d, d);
    for (int a = 0; a < d; ++a) {
      const auto& [i, j] = model.space.free_coords[a];
      for (int b = 0; b < d; ++b) {
        const auto& [k, l] = model.space.free_coords[b];
        double c = 0.25 * (sigma(i, k) * sigma(j, l) + sigma(i, l) * sigma(j, k));
        cov(a, b) = model.space.multiplicity(a) * model.space.multiplicity(b) * c;
      }
    }
    out.cov_free = std::move(cov);
  }
  return out;
}

/// Mixture of two Gaussian blocks indexed by the binary covariate:
/// gamma = logsumexp(g1, g2) with g_k the Gaussian normalizer of block k,
/// mixture weights w_k = exp(g_k - gamma).
inline MomentBundle mixture_closed_form(const TraceModel& model,
                                        const ParameterMatrix& m, int order) {
  const int r = model.block_dim;
  Matrix m1 = m.topLeftCorner(r, r), m2 = m.bottomRightCorner(r, r);
  auto block_norm = [r](const Matrix& blk, Matrix& sigma) {
    Eigen::LLT<Matrix> llt(blk);
    if (llt.info() != Eigen::Success)
      throw NormalizerFailure("mixture blocks must be positive definite");
    double logdet = 0.0;
    for (int i = 0; i < r; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    sigma = llt.solve(Matrix::Identity(r, r));
    return 0.5 * (r * std::log(2.0 * M_PI) - logdet);
  };
  Matrix s1, s2;
  double g1 = block_norm(m1, s1), g2 = block_norm(m2, s2);
  double g = std::max(g1, g2) +
             std::log(std::exp(g1 - std::max(g1, g2)) + std::exp(g2 - std::max(g1, g2)));
  double w1 = std::exp(g1 - g), w2 = std::exp(g2 - g);

  MomentBundle out;
  out.log_norm = g;
  out.mean_stat = Matrix::Zero(model.q, model.q);
  out.mean_stat.topLeftCorner(r, r) = 0.5 * w1 * s1;
  out.mean_stat.bottomRightCorner(r, r) = 0.5 * w2 * s2;
  if (order >= 2) {
    const int d = model.space.dim();
    Matrix cov(d, d);
    auto block_of = [r](int i) { return i < r ? 0 : 1; };
    const Matrix* sig[2] = {&s1, &s2};
    const double w[2] = {w1, w2};
    for (int a = 0; a < d; ++a) {
      const auto& [i, j] = model.space.free_coords[a];
      const int ba = block_of(i);
      const double si = w[ba];
      const Matrix& sa = *sig[ba];
      const int io = i - ba * r, jo = j - ba * r;
      for (int b = 0; b < d; ++b) {
        const auto& [k, l] = model.space.free_coords[b];
        const int bb = block_of(k);
        const Matrix& sb = *sig[bb];
        const int ko = k - bb * r, lo = l - bb * r;
        double c;
        if (ba == bb) {
          // E[T_ij T_kl | same block] uses the full fourth Gaussian moment.
          double e2 = 0.25 * (sa(io, jo) * sa(ko, lo) + sa(io, ko) * sa(jo, lo) +
                              sa(io, lo) * sa(jo, ko));
          c = si * e2 - (si * 0.5 * sa(io, jo)) * (w[bb] * 0.5 * sb(ko, lo));
        } else {
          // Disjoint indicators: E[T^1 T^2] = 0.
          c = -(si * 0.5 * sa(io, jo)) * (w[bb] * 0.5 * sb(ko, lo));
        }
        cov(a, b) = model.space.multiplicity(a) * model.space.multiplicity(b) * c;
      }
    }
    out.cov_free = std::move(cov);
  }
  return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Monte Carlo (importance sampling with an independent diagonal proposal)
// ---------------------------------------------------------------------------

namespace detail {

struct Proposal {
  std::function<double(std::mt19937_64&)> draw;
  std::function<double(double)> logpdf;
};

inline Proposal coord_proposal(const TraceModel& model, const ParameterMatrix& m, int j) {
  const CoordKind kind = model.domain.coords[j].kind;
  switch (kind) {
    case CoordKind::binary: {
      return {[](std::mt19937_64& g) {
                return std::uniform_int_distribution<int>(0, 1)(g) ? 1.0 : 0.0;
              },
              [](double) { return -std::log(2.0); }};
    }
    case CoordKind::finite_set: {
      int card = model.domain.coords[j].cardinality;
      return {[card](std::mt19937_64& g) {
                return static_cast<double>(std::uniform_int_distribution<int>(0, card - 1)(g));
              },
              [card](double) { return -std::log(static_cast<double>(card)); }};
    }
    case CoordKind::count: {
      double lam = std::clamp(std::exp(-m(j, j)), 0.05, 50.0);
      return {[lam](std::mt19937_64& g) {
                return static_cast<double>(std::poisson_distribution<long>(lam)(g));
              },
              [lam](double x) { return x * std::log(lam) - lam - std::lgamma(x + 1.0); }};
    }
    case CoordKind::nonneg_real: {
      double rate = std::max(m(j, j), 0.1);
      return {[rate](std::mt19937_64& g) {
                return std::exponential_distribution<double>(rate)(g);
              },
              [rate](double x) { return std::log(rate) - rate * x; }};
    }
    case CoordKind::real: {
      if (model.sqrt_interactions) { // Laplace-type tails
        double rate = std::max(m(j, j), 0.1);
        return {[rate](std::mt19937_64& g) {
                  double e = std::exponential_distribution<double>(rate)(g);
                  return std::uniform_int_distribution<int>(0, 1)(g) ? e : -e;
                },
                [rate](double x) {
                  return std::log(rate / 2.0) - rate * std::abs(x);
                }};
      }
      double prec = model.family == Family::restricted_pairwise
                        ? std::max(2.0 * m(j, j), 0.1)
                        : std::max(m(j, j), 0.1);
      double sd = 1.0 / std::sqrt(prec);
      return {[sd](std::mt19937_64& g) {
                return std::normal_distribution<double>(0.0, sd)(g);
              },
              [sd](double x) {
                return -0.5 * std::log(2.0 * M_PI * sd * sd) - x * x / (2.0 * sd * sd);
              }};
    }
  }
  throw Error("unreachable");
}

inline MomentBundle monte_carlo_bundle(const TraceModel& model,
                                       const ParameterMatrix& m,
                                       const EvalStrategy& st, int order) {
  if (model.domain.structural_constraint)
    throw NormalizerFailure(
        "monte_carlo is not supported on structurally constrained domains; "
        "use enumerate");
  std::mt19937_64 rng(st.seed);
  const int p = model.p, d = model.space.dim();
  std::vector<Proposal> props;
  props.reserve(p);
  for (int j = 0; j < p; ++j) props.push_back(coord_proposal(model, m, j));

  const long n = st.samples;
  Eigen::VectorXd logw(n);
  Matrix s(n, d);
  Vector x(p);
  for (long i = 0; i < n; ++i) {
    double lq = 0.0;
    for (int j = 0; j < p; ++j) {
      x[j] = props[j].draw(rng);
      lq += props[j].logpdf(x[j]);
    }
    Matrix t = model.stat(x);
    logw[i] = log_kernel(model, m, x) - lq;
    for (int k = 0; k < d; ++k) {
      const auto& [a, b] = model.space.free_coords[k];
      s(i, k) = model.space.multiplicity(k) * t(a, b);
    }
  }

  double mx = logw.maxCoeff();
  Eigen::VectorXd w = (logw.array() - mx).exp();
  double z = w.sum();
  MomentBundle out;
  out.log_norm = mx + std::log(z / n);
  // standard error of gamma from the weight variance
  double mean_w = z / n;
  double var_w = (w.array() - mean_w).square().sum() / (n - 1.0);
  out.error_estimate = std::sqrt(var_w / n) / mean_w;
  w /= z;
  Eigen::VectorXd mean_s = s.transpose() * w;
  out.mean_stat = Matrix::Zero(model.q, model.q);
  for (int k = 0; k < d; ++k) {
    const auto& [a, b] = model.space.free_coords[k];
    double v = mean_s[k] / model.space.multiplicity(k);
    out.mean_stat(a, b) = v;
    if (model.space.symmetric) out.mean_stat(b, a) = v;
  }
  if (order >= 2) {
    Matrix second = s.transpose() * w.asDiagonal() * s;
    out.cov_free = second - mean_s * mean_s.transpose();
  }
  return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Strategy dispatch
// ---------------------------------------------------------------------------

namespace detail {

inline void check_strategy(const TraceModel& model, const EvalStrategy& st) {
  using K = EvalStrategy::Kind;
  switch (st.kind) {
    case K::closed_form:
      if (model.family != Family::gaussian &&
          model.family != Family::nonparanormal &&
          model.family != Family::mixture_gaussian_binary)
        throw NormalizerFailure(
            "closed_form is only available for gaussian, nonparanormal, and "
            "mixture families");
      break;
    case K::enumerate_states:
      if (!model.has_finite_domain())
        throw NormalizerFailure("enumerate requires a finite domain");
      break;
    case K::truncated_series: {
      for (const auto& c : model.domain.coords)
        if (c.kind != CoordKind::count && !is_discrete(c.kind))
          throw NormalizerFailure("truncated_series requires count coordinates");
      if (!model.has_count_coords())
        throw NormalizerFailure("truncated_series requires count coordinates");
      break;
    }
    case K::quadrature: {
      if (!model.has_continuous_coords())
        throw NormalizerFailure("quadrature requires continuous coordinates");
      if (model.family == Family::mixture_gaussian_binary ||
          model.family == Family::nonparanormal)
        throw NormalizerFailure("use closed_form for this family");
      int nc = 0;
      for (const auto& c : model.domain.coords)
        if (!is_discrete(c.kind)) ++nc;
      if (nc > 4)
        throw NormalizerFailure(
            "quadrature supports at most 4 continuous dimensions; use "
            "monte_carlo");
      break;
    }
    case K::monte_carlo:
      break;
  }
}

inline MomentBundle dispatch(const TraceModel& model, const ParameterMatrix& m,
                             const EvalStrategy& st, int order) {
  check_strategy(model, st);
  auto verdict = model.space.violation(m);
  if (verdict) throw NormalizerFailure("invalid parameter: " + *verdict);

  using K = EvalStrategy::Kind;
  MomentBundle out;
  switch (st.kind) {
    case K::closed_form:
      out = model.family == Family::mixture_gaussian_binary
                ? mixture_closed_form(model, m, order)
                : gaussian_closed_form(model, m, order);
      break;
    case K::monte_carlo:
      out = monte_carlo_bundle(model, m, st, order);
      break;
    default: {
      auto grids = build_grids(model, m, st);
      auto tab = build_state_table(model, grids);
      out = eval_table(model, tab, model.space.to_free(m), order);
      if (st.kind == K::truncated_series) out.error_estimate = st.tail_tol;
      if (st.kind == K::quadrature && tab.size() < 200'000) {
        EvalStrategy half = st;
        half.nodes_per_dim = std::max(2, st.nodes_per_dim / 2);
        auto tab2 = build_state_table(model, build_grids(model, m, half));
        auto b2 = eval_table(model, tab2, model.space.to_free(m), 0);
        out.error_estimate = std::abs(out.log_norm - b2.log_norm);
      }
      break;
    }
  }
  out.strategy_used = st;
  return out;
}

} // namespace detail

/// gamma(M) = log int exp(-<M,T(x)> + xi(x)) dnu.
inline double log_normalizer(const TraceModel& model, const ParameterMatrix& m,
                             const EvalStrategy& strategy) {
  return detail::dispatch(model, m, strategy, 0).log_norm;
}

/// First and second moments of T under f_M.
inline MomentBundle moments(const TraceModel& model, const ParameterMatrix& m,
                            const EvalStrategy& strategy, int order = 1) {
  if (order != 1 && order != 2) throw Error("order must be 1 or 2");
  return detail::dispatch(model, m, strategy, order);
}

/// Family integrability rule for gamma(M) < infinity.
inline Integrability check_integrability(const TraceModel& model,
                                         const ParameterMatrix& m) {
  if (m.rows() != model.q || m.cols() != model.q)
    throw Error("check_integrability: M must be q x q");
  switch (model.family) {
    case Family::ising:
    case Family::multinomial_ising:
    case Family::poisson_sqrt:
      return Integrability::finite; // finite for every M
    case Family::poisson_naive: {
      for (int i = 0; i < model.q; ++i)
        for (int j = 0; j < model.q; ++j)
          if (i != j && m(i, j) < 0.0) return Integrability::infinite;
      return Integrability::finite;
    }
    case Family::gaussian:
    case Family::nonparanormal:
    case Family::exponential_sqrt:
    case Family::laplace_sqrt:
    case Family::composite_sqrt:
    case Family::mixture_gaussian_binary: {
      // Sufficient condition only: PD certifies finiteness, its failure
      // proves nothing (the paper's bound is one-sided).
      Matrix sym = 0.5 * (m + m.transpose());
      if (model.family == Family::mixture_gaussian_binary) {
        const int r = model.block_dim;
        Eigen::SelfAdjointEigenSolver<Matrix> e1(sym.topLeftCorner(r, r),
                                                 Eigen::EigenvaluesOnly);
        Eigen::SelfAdjointEigenSolver<Matrix> e2(sym.bottomRightCorner(r, r),
                                                 Eigen::EigenvaluesOnly);
        if (e1.eigenvalues().minCoeff() > 0 && e2.eigenvalues().minCoeff() > 0)
          return Integrability::finite;
        return Integrability::unknown;
      }
      Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() > 0) return Integrability::finite;
      return Integrability::unknown;
    }
    case Family::restricted_pairwise:
      return Integrability::unknown; // depends on the supplied base terms
  }
  return Integrability::unknown;
}

} // namespace etm
