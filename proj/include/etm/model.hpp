#pragma once

/**
 * @file model.hpp
 * @brief Model families for exponential trace graphical models.
 *
 * A trace model is a density f_M(x) = exp(-<M,T(x)> + xi(x) - gamma(M))
 * with respect to a base measure on a domain D, indexed by a q x q
 * parameter matrix M. This header defines the domains, sufficient
 * statistic maps T, base terms xi, and parameter spaces for each
 * supported family, plus parameter validation.
 */

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace etm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// q x q parameter matrix M. Validated instances satisfy their model's
/// ParameterSpace membership.
using ParameterMatrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Observation outside the model domain.
struct DomainError : Error {
  using Error::Error;
};

/// Strategy incompatible with the model, or evaluation failed.
struct NormalizerFailure : Error {
  using Error::Error;
};

/// Divergence detected: M outside the effective parameter region, or the
/// MLE does not exist at this sample size.
struct NonExistence : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Domains
// ---------------------------------------------------------------------------

enum class CoordKind {
  binary,      ///< {0, 1}
  finite_set,  ///< {0, ..., cardinality-1}
  count,       ///< {0, 1, ...}
  nonneg_real, ///< [0, inf)
  real         ///< R
};

struct Coord {
  CoordKind kind = CoordKind::real;
  int cardinality = 2; ///< used by finite_set only
};

inline bool is_discrete(CoordKind k) {
  return k == CoordKind::binary || k == CoordKind::finite_set ||
         k == CoordKind::count;
}

/// Observation domain D with the base measure implied by coordinate kinds
/// (counting measure for discrete, Lebesgue for continuous).
struct DomainSpec {
  int p = 0;
  std::vector<Coord> coords;
  /// Optional whole-vector predicate (one-hot block encoding and similar).
  std::function<bool(const Vector&)> structural_constraint;

  bool coord_contains(int j, double v) const {
    switch (coords[j].kind) {
      case CoordKind::binary:
        return v == 0.0 || v == 1.0;
      case CoordKind::finite_set:
        return v == std::floor(v) && v >= 0.0 &&
               v < static_cast<double>(coords[j].cardinality);
      case CoordKind::count:
        return v == std::floor(v) && v >= 0.0 && std::isfinite(v);
      case CoordKind::nonneg_real:
        return v >= 0.0 && std::isfinite(v);
      case CoordKind::real:
        return std::isfinite(v);
    }
    return false;
  }

  bool contains(const Vector& x) const {
    if (x.size() != p) return false;
    for (int j = 0; j < p; ++j)
      if (!coord_contains(j, x[j])) return false;
    if (structural_constraint && !structural_constraint(x)) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Parameter space
// ---------------------------------------------------------------------------

/// Affine parameter space: symmetric matrices with a zero mask and an
/// optional positive-definiteness requirement. Free coordinates are the
/// representative entries (i, j), i <= j, spanning the space.
struct ParameterSpace {
  int q = 0;
  bool symmetric = true;
  bool require_pd = false;
  /// mask(i, j) == true forces M_ij = 0.
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask;
  /// Representative free entries, ordered (i <= j when symmetric).
  std::vector<std::pair<int, int>> free_coords;

  static constexpr double kPdTol = 1e-10;

  int dim() const { return static_cast<int>(free_coords.size()); }

  /// Off-diagonal free coordinates represent the symmetric pair (i,j),(j,i);
  /// multiplicity enters inner products and derivative aggregation.
  double multiplicity(int k) const {
    const auto& [i, j] = free_coords[k];
    return (symmetric && i != j) ? 2.0 : 1.0;
  }

  /// Returns std::nullopt for members, otherwise a violation description.
  std::optional<std::string> violation(const ParameterMatrix& m) const {
    if (m.rows() != q || m.cols() != q)
      return "matrix is " + std::to_string(m.rows()) + "x" +
             std::to_string(m.cols()) + ", expected " + std::to_string(q) +
             "x" + std::to_string(q);
    if (!m.allFinite()) return std::string("matrix has non-finite entries");
    if (symmetric) {
      for (int i = 0; i < q; ++i)
        for (int j = i + 1; j < q; ++j)
          if (m(i, j) != m(j, i)) return std::string("matrix is not symmetric");
    }
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j)
        if (mask(i, j) && m(i, j) != 0.0) {
          std::ostringstream os;
          os << "entry (" << i + 1 << "," << j + 1 << ") must be zero";
          return os.str();
        }
    if (require_pd) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() <= kPdTol)
        return std::string("matrix is not positive definite (min eigenvalue ") +
               std::to_string(es.eigenvalues().minCoeff()) + ")";
    }
    return std::nullopt;
  }

  bool contains(const ParameterMatrix& m) const { return !violation(m); }

  /// Extract the free-coordinate vector theta from M.
  Vector to_free(const ParameterMatrix& m) const {
    Vector v(dim());
    for (int k = 0; k < dim(); ++k) v[k] = m(free_coords[k].first, free_coords[k].second);
    return v;
  }

  /// Expand a free-coordinate vector into a full (symmetric, masked) matrix.
  ParameterMatrix from_free(const Vector& v) const {
    ParameterMatrix m = Matrix::Zero(q, q);
    for (int k = 0; k < dim(); ++k) {
      const auto& [i, j] = free_coords[k];
      m(i, j) = v[k];
      if (symmetric) m(j, i) = v[k];
    }
    return m;
  }

  /// Index of the free coordinate representing entry (i, j); -1 if masked.
  int free_index(int i, int j) const {
    if (symmetric && i > j) std::swap(i, j);
    for (int k = 0; k < dim(); ++k)
      if (free_coords[k] == std::make_pair(i, j)) return k;
    return -1;
  }
};

// ---------------------------------------------------------------------------
// Transforms (non-paranormal)
// ---------------------------------------------------------------------------

/// Monotone differentiable map g_j with derivative; the inverse is optional
/// and only needed for sampling.
struct Transform {
  std::function<double(double)> g;
  std::function<double(double)> dg;
  std::function<double(double)> inverse; ///< may be empty

  static Transform identity() {
    return {[](double x) { return x; }, [](double) { return 1.0; },
            [](double u) { return u; }};
  }
  /// a*x + b with a != 0.
  static Transform affine(double a, double b) {
    if (a == 0.0) throw Error("affine transform requires a != 0");
    return {[a, b](double x) { return a * x + b; },
            [a](double) { return a; },
            [a, b](double u) { return (u - b) / a; }};
  }
};

// ---------------------------------------------------------------------------
// TraceModel
// ---------------------------------------------------------------------------

enum class Family {
  gaussian,
  nonparanormal,
  ising,
  multinomial_ising,
  poisson_sqrt,
  exponential_sqrt,
  laplace_sqrt,
  composite_sqrt,
  mixture_gaussian_binary,
  restricted_pairwise,
  poisson_naive, ///< diagnostic family with product interactions; not part
                 ///< of the supported model set, used for integrability checks
};

inline const char* family_name(Family f) {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::nonparanormal: return "nonparanormal";
    case Family::ising: return "ising";
    case Family::multinomial_ising: return "multinomial_ising";
    case Family::poisson_sqrt: return "poisson_sqrt";
    case Family::exponential_sqrt: return "exponential_sqrt";
    case Family::laplace_sqrt: return "laplace_sqrt";
    case Family::composite_sqrt: return "composite_sqrt";
    case Family::mixture_gaussian_binary: return "mixture_gaussian_binary";
    case Family::restricted_pairwise: return "restricted_pairwise";
    case Family::poisson_naive: return "poisson_naive";
  }
  return "?";
}

/// A model family instance: domain, statistic map T, log base term xi,
/// and parameter space. Immutable after construction.
struct TraceModel {
  Family family;
  int p = 0; ///< observation dimension
  int q = 0; ///< parameter dimension (q != p is permitted)
  DomainSpec domain;
  ParameterSpace space;
  std::function<Matrix(const Vector&)> stat;
  std::function<double(const Vector&)> log_base;
  std::vector<Transform> transforms; ///< non-paranormal only

  /// xi contribution attached to coordinate j (pairwise families); used by
  /// node conditionals. For non-separable xi (restricted_pairwise) this
  /// holds the full base term and is attached to every coordinate.
  std::function<double(const Vector&, int)> node_base;

  /// True when interactions enter through sqrt(x) per coordinate, in which
  /// case quadrature integrates in u = sqrt(x).
  bool sqrt_interactions = false;

  /// Growth constant c with |T_ij(x_i,x_j)| <= c (x_i + x_j) for count
  /// coordinates; negative when no such bound exists (poisson_naive).
  double pair_growth_bound = -1.0;

  /// composite_sqrt block sizes; zero otherwise.
  int p1 = 0, p2 = 0;
  /// mixture_gaussian_binary block dimension (p - 1); zero otherwise.
  int block_dim = 0;
  /// restricted_pairwise active entry set (unordered pairs, 0-based).
  std::vector<std::pair<int, int>> active_set;

  bool has_finite_domain() const {
    for (const auto& c : domain.coords)
      if (c.kind != CoordKind::binary && c.kind != CoordKind::finite_set)
        return false;
    return true;
  }
  bool has_count_coords() const {
    for (const auto& c : domain.coords)
      if (c.kind == CoordKind::count) return true;
    return false;
  }
  bool has_continuous_coords() const {
    for (const auto& c : domain.coords)
      if (!is_discrete(c.kind)) return true;
    return false;
  }
};

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// n observations, one p-vector per row. Every row lies in the model domain.
struct Dataset {
  Matrix rows; ///< n x p

  int n() const { return static_cast<int>(rows.rows()); }

  static Dataset validated(Matrix data, const TraceModel& model) {
    if (data.cols() != model.p)
      throw DomainError("dataset has " + std::to_string(data.cols()) +
                        " columns, model expects " + std::to_string(model.p));
    for (int i = 0; i < data.rows(); ++i)
      if (!model.domain.contains(data.row(i).transpose()))
        throw DomainError("row " + std::to_string(i + 1) +
                          " is outside the model domain");
    return Dataset{std::move(data)};
  }
};

// ---------------------------------------------------------------------------
// Family constructors
// ---------------------------------------------------------------------------

namespace detail {

inline ParameterSpace dense_symmetric_space(int q, bool require_pd) {
  ParameterSpace s;
  s.q = q;
  s.symmetric = true;
  s.require_pd = require_pd;
  s.mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(q, q, false);
  for (int i = 0; i < q; ++i)
    for (int j = i; j < q; ++j) s.free_coords.emplace_back(i, j);
  return s;
}

inline void apply_mask(ParameterSpace& s,
                       const std::function<bool(int, int)>& masked) {
  for (int i = 0; i < s.q; ++i)
    for (int j = 0; j < s.q; ++j)
      if (i != j || masked(i, j)) s.mask(i, j) = s.mask(i, j) || masked(i, j);
  std::vector<std::pair<int, int>> kept;
  for (auto& ij : s.free_coords)
    if (!s.mask(ij.first, ij.second)) kept.push_back(ij);
  s.free_coords = std::move(kept);
}

inline double log_factorial(double x) { return std::lgamma(x + 1.0); }

} // namespace detail

struct FamilyConfig {
  Family family = Family::gaussian;
  int p = 0;
  int m = 0;                   ///< multinomial_ising level count
  int l = 0;                   ///< multinomial_ising variable count
  int p1 = 0, p2 = 0;          ///< composite_sqrt block sizes
  std::vector<Transform> transforms; ///< nonparanormal; defaults to identity
  std::vector<std::pair<int, int>> active_set; ///< restricted_pairwise, 0-based
  std::function<double(const Vector&)> xi_covariates; ///< restricted_pairwise
  std::function<double(double)> xi_response;          ///< restricted_pairwise
};

inline TraceModel build_model(const FamilyConfig& cfg);

/// Convenience constructors.
inline TraceModel gaussian_model(int p) {
  FamilyConfig c; c.family = Family::gaussian; c.p = p; return build_model(c);
}
inline TraceModel nonparanormal_model(int p, std::vector<Transform> transforms = {}) {
  FamilyConfig c; c.family = Family::nonparanormal; c.p = p;
  c.transforms = std::move(transforms);
  return build_model(c);
}
inline TraceModel ising_model(int p) {
  FamilyConfig c; c.family = Family::ising; c.p = p; return build_model(c);
}
inline TraceModel multinomial_ising_model(int l, int m) {
  FamilyConfig c; c.family = Family::multinomial_ising; c.l = l; c.m = m;
  return build_model(c);
}
inline TraceModel poisson_sqrt_model(int p) {
  FamilyConfig c; c.family = Family::poisson_sqrt; c.p = p; return build_model(c);
}
inline TraceModel exponential_sqrt_model(int p) {
  FamilyConfig c; c.family = Family::exponential_sqrt; c.p = p; return build_model(c);
}
inline TraceModel laplace_sqrt_model(int p) {
  FamilyConfig c; c.family = Family::laplace_sqrt; c.p = p; return build_model(c);
}
inline TraceModel composite_sqrt_model(int p1, int p2) {
  FamilyConfig c; c.family = Family::composite_sqrt; c.p1 = p1; c.p2 = p2;
  return build_model(c);
}
inline TraceModel mixture_gaussian_binary_model(int p) {
  FamilyConfig c; c.family = Family::mixture_gaussian_binary; c.p = p;
  return build_model(c);
}
inline TraceModel restricted_pairwise_model(
    int p, std::vector<std::pair<int, int>> active_set,
    std::function<double(const Vector&)> xi_covariates,
    std::function<double(double)> xi_response) {
  FamilyConfig c; c.family = Family::restricted_pairwise; c.p = p;
  c.active_set = std::move(active_set);
  c.xi_covariates = std::move(xi_covariates);
  c.xi_response = std::move(xi_response);
  return build_model(c);
}
inline TraceModel naive_poisson_model(int p) {
  FamilyConfig c; c.family = Family::poisson_naive; c.p = p; return build_model(c);
}

inline TraceModel build_model(const FamilyConfig& cfg) {
  TraceModel m;
  m.family = cfg.family;

  auto uniform_domain = [](int p, CoordKind kind) {
    DomainSpec d;
    d.p = p;
    d.coords.assign(p, Coord{kind, 2});
    return d;
  };

  switch (cfg.family) {
    case Family::gaussian: {
      if (cfg.p < 1) throw Error("gaussian: p must be >= 1");
      m.p = m.q = cfg.p;
      m.domain = uniform_domain(m.p, CoordKind::real);
      m.space = detail::dense_symmetric_space(m.q, /*require_pd=*/true);
      m.stat = [](const Vector& x) -> Matrix { return 0.5 * x * x.transpose(); };
      m.log_base = [](const Vector&) { return 0.0; };
      m.node_base = [](const Vector&, int) { return 0.0; };
      break;
    }
    case Family::nonparanormal: {
      if (cfg.p < 1) throw Error("nonparanormal: p must be >= 1");
      m.p = m.q = cfg.p;
      m.domain = uniform_domain(m.p, CoordKind::real);
      m.space = detail::dense_symmetric_space(m.q, /*require_pd=*/true);
      m.transforms = cfg.transforms;
      if (m.transforms.empty())
        m.transforms.assign(m.p, Transform::identity());
      if (static_cast<int>(m.transforms.size()) != m.p)
        throw Error("nonparanormal: need one transform per coordinate");
      // Monotonicity probe on a coarse grid; catches sign flips in g'.
      for (const auto& t : m.transforms) {
        double sign = 0.0;
        for (double x = -3.0; x <= 3.0; x += 0.75) {
          double d = t.dg(x);
          if (d == 0.0 || (sign != 0.0 && std::signbit(d) != std::signbit(sign)))
            throw Error("nonparanormal: transform is not monotone");
          sign = d;
        }
      }
      auto ts = m.transforms;
      m.stat = [ts](const Vector& x) -> Matrix {
        Vector g(x.size());
        for (int j = 0; j < x.size(); ++j) g[j] = ts[j].g(x[j]);
        return 0.5 * g * g.transpose();
      };
      m.log_base = [ts](const Vector& x) {
        double s = 0.0;
        for (int j = 0; j < x.size(); ++j) s += std::log(std::abs(ts[j].dg(x[j])));
        return s;
      };
      m.node_base = [ts](const Vector& x, int j) {
        return std::log(std::abs(ts[j].dg(x[j])));
      };
      break;
    }
    case Family::ising: {
      if (cfg.p < 1) throw Error("ising: p must be >= 1");
      m.p = m.q = cfg.p;
      m.domain = uniform_domain(m.p, CoordKind::binary);
      m.space = detail::dense_symmetric_space(m.q, /*require_pd=*/false);
      m.stat = [](const Vector& x) -> Matrix { return x * x.transpose(); };
      m.log_base = [](const Vector&) { return 0.0; };
      m.node_base = [](const Vector&, int) { return 0.0; };
      m.pair_growth_bound = 1.0;
      break;
    }
    case Family::multinomial_ising: {
      if (cfg.l < 1 || cfg.m < 2)
        throw Error("multinomial_ising: need l >= 1 and m >= 2");
      const int l = cfg.l, levels = cfg.m, width = levels - 1;
      m.p = m.q = l * width;
      m.domain = uniform_domain(m.p, CoordKind::binary);
      // One-hot block encoding: at most one indicator per block equals 1.
      m.domain.structural_constraint = [l, width](const Vector& x) {
        for (int b = 0; b < l; ++b) {
          double s = 0.0;
          for (int k = 0; k < width; ++k) s += x[b * width + k];
          if (s > 1.0) return false;
        }
        return true;
      };
      m.space = detail::dense_symmetric_space(m.q, /*require_pd=*/false);
      // Within-block off-diagonals are zero; the diagonal stays free (it
      // carries the field terms).
      detail::apply_mask(m.space, [width](int i, int j) {
        return i != j && i / width == j / width;
      });
      m.stat = [](const Vector& x) -> Matrix { return x * x.transpose(); };
      m.log_base = [](const Vector&) { return 0.0; };
      m.node_base = [](const Vector&, int) { return 0.0; };
      m.pair_growth_bound = 1.0;
      break;
    }
    case Family::poisson_sqrt: {
      if (cfg.p < 1) throw Error("poisson_sqrt: p must be >= 1");
      m.p = m.q = cfg.p;
      m.domain = uniform_domain(m.p, CoordKind::count);
      m.space = detail::dense_symmetric_space(m.q, /*require_pd=*/false);
      m.stat = [](const Vector& x) -> Matrix {
        const int p = static_cast<int>(x.size());
        Matrix t(p, p);
        for (int i = 0; i < p; ++i)
          for (int j = 0; j < p; ++j)
            t(i, j) = (i == j) ? x[i] : std::sqrt(x[i] * x[j]);
        return t;
      };
      m.log_base = [](const Vector& x) {
        double s = 0.0;
        for (int j = 0; j < x.size(); ++j) s -= detail::log_factorial(x[j]);
        return s;
      };
      m.node_base = [](const Vector& x, int j) {
        return -detail::log_factorial(x[j]);
      };
      m.sqrt_interactions = true;
      m.pair_growth_bound = 0.5; // sqrt(x y) <= (x + y) / 2
      break;
    }
    case Family::exponential_sqrt:
    case Family::laplace_sqrt: {
      if (cfg.p < 1) throw Error("sqrt family: p must be >= 1");
      const bool laplace = cfg.family == Family::laplace_sqrt;
      m.p = m.q = cfg.p;
      m.domain = uniform_domain(
          m.p, laplace ? CoordKind::real : CoordKind::nonneg_real);
      m.space = detail::dense_symmetric_space(m.q, /*require_pd=*/true);
      m.stat = [](const Vector& x) -> Matrix {
        const int p = static_cast<int>(x.size());
        Matrix t(p, p);
        for (int i = 0; i < p; ++i)
          for (int j = 0; j < p; ++j) t(i, j) = std::sqrt(std::abs(x[i] * x[j]));
        return t;
      };
      m.log_base = [](const Vector&) { return 0.0; };
      m.node_base = [](const Vector&, int) { return 0.0; };
      m.sqrt_interactions = true;
      m.pair_growth_bound = 0.5;
      break;
    }
    case Family::composite_sqrt: {
      if (cfg.p1 < 1 || cfg.p2 < 1)
        throw Error("composite_sqrt: need p1 >= 1 and p2 >= 1");
      m.p = m.q = cfg.p1 + cfg.p2;
      m.p1 = cfg.p1;
      m.p2 = cfg.p2;
      DomainSpec d;
      d.p = m.p;
      for (int j = 0; j < cfg.p1; ++j) d.coords.push_back({CoordKind::count, 2});
      for (int j = 0; j < cfg.p2; ++j) d.coords.push_back({CoordKind::nonneg_real, 2});
      m.domain = std::move(d);
      m.space = detail::dense_symmetric_space(m.q, /*require_pd=*/true);
      m.stat = [](const Vector& x) -> Matrix {
        const int p = static_cast<int>(x.size());
        Matrix t(p, p);
        for (int i = 0; i < p; ++i)
          for (int j = 0; j < p; ++j) t(i, j) = std::sqrt(x[i] * x[j]);
        return t;
      };
      const int p1 = cfg.p1;
      m.log_base = [p1](const Vector& x) {
        double s = 0.0;
        for (int j = 0; j < p1; ++j) s -= detail::log_factorial(x[j]);
        return s;
      };
      m.node_base = [p1](const Vector& x, int j) {
        return j < p1 ? -detail::log_factorial(x[j]) : 0.0;
      };
      m.sqrt_interactions = true;
      m.pair_growth_bound = 0.5;
      break;
    }
    case Family::mixture_gaussian_binary: {
      if (cfg.p < 2) throw Error("mixture_gaussian_binary: p must be >= 2");
      m.p = cfg.p;
      const int r = cfg.p - 1;
      m.q = 2 * r;
      m.block_dim = r;
      DomainSpec d;
      d.p = m.p;
      for (int j = 0; j < r; ++j) d.coords.push_back({CoordKind::real, 2});
      d.coords.push_back({CoordKind::binary, 2});
      m.domain = std::move(d);
      m.space = detail::dense_symmetric_space(m.q, /*require_pd=*/true);
      // Cross-block entries are structurally zero: M = diag(M1, M2).
      detail::apply_mask(m.space, [r](int i, int j) {
        return (i < r) != (j < r);
      });
      m.stat = [r](const Vector& x) -> Matrix {
        Matrix t = Matrix::Zero(2 * r, 2 * r);
        const Vector y = x.head(r);
        const int z = static_cast<int>(x[r]);
        if (z == 0)
          t.topLeftCorner(r, r) = 0.5 * y * y.transpose();
        else
          t.bottomRightCorner(r, r) = 0.5 * y * y.transpose();
        return t;
      };
      m.log_base = [](const Vector&) { return 0.0; };
      m.node_base = [](const Vector&, int) { return 0.0; };
      break;
    }
    case Family::restricted_pairwise: {
      if (cfg.p < 2) throw Error("restricted_pairwise: p must be >= 2");
      if (cfg.active_set.empty())
        throw Error("restricted_pairwise: active set must be non-empty");
      if (!cfg.xi_covariates || !cfg.xi_response)
        throw Error("restricted_pairwise: xi terms must be supplied");
      m.p = m.q = cfg.p;
      for (auto [i, j] : cfg.active_set) {
        if (i < 0 || j < 0 || i >= m.p || j >= m.p || i == j)
          throw Error("restricted_pairwise: invalid active entry");
        m.active_set.emplace_back(std::min(i, j), std::max(i, j));
      }
      m.domain = uniform_domain(m.p, CoordKind::real);
      m.space = detail::dense_symmetric_space(m.q, /*require_pd=*/false);
      auto active = m.active_set;
      detail::apply_mask(m.space, [active](int i, int j) {
        if (i == j) return false;
        auto key = std::make_pair(std::min(i, j), std::max(i, j));
        for (auto& a : active)
          if (a == key) return false;
        return true;
      });
      m.stat = [active, p = m.p](const Vector& x) -> Matrix {
        Matrix t = Matrix::Zero(p, p);
        for (int i = 0; i < p; ++i) t(i, i) = x[i] * x[i];
        for (auto [i, j] : active) t(i, j) = t(j, i) = x[i] * x[j];
        return t;
      };
      auto xi_cov = cfg.xi_covariates;
      auto xi_resp = cfg.xi_response;
      const int last = m.p - 1;
      m.log_base = [xi_cov, xi_resp, last](const Vector& x) {
        return xi_cov(x.head(last)) + xi_resp(x[last]);
      };
      // xi is not coordinatewise here; node conditionals use the full term
      // (constant shifts in the conditioned coordinate are harmless).
      m.node_base = [xi_cov, xi_resp, last](const Vector& x, int) {
        return xi_cov(x.head(last)) + xi_resp(x[last]);
      };
      break;
    }
    case Family::poisson_naive: {
      if (cfg.p < 1) throw Error("poisson_naive: p must be >= 1");
      m.p = m.q = cfg.p;
      m.domain = uniform_domain(m.p, CoordKind::count);
      m.space = detail::dense_symmetric_space(m.q, /*require_pd=*/false);
      m.stat = [](const Vector& x) -> Matrix {
        const int p = static_cast<int>(x.size());
        Matrix t(p, p);
        for (int i = 0; i < p; ++i)
          for (int j = 0; j < p; ++j) t(i, j) = (i == j) ? x[i] : x[i] * x[j];
        return t;
      };
      m.log_base = [](const Vector& x) {
        double s = 0.0;
        for (int j = 0; j < x.size(); ++j) s -= detail::log_factorial(x[j]);
        return s;
      };
      m.node_base = [](const Vector& x, int j) {
        return -detail::log_factorial(x[j]);
      };
      m.pair_growth_bound = -1.0; // x_i x_j admits no linear growth bound
      break;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline Matrix evaluate_stat(const TraceModel& model, const Vector& x) {
  if (!model.domain.contains(x))
    throw DomainError("observation outside the model domain");
  return model.stat(x);
}

inline double evaluate_log_base(const TraceModel& model, const Vector& x) {
  if (!model.domain.contains(x))
    throw DomainError("observation outside the model domain");
  return model.log_base(x);
}

struct Verdict {
  bool member = false;
  std::string violation; ///< empty when member
};

inline Verdict validate_parameter(const TraceModel& model,
                                  const ParameterMatrix& m) {
  auto v = model.space.violation(m);
  if (v) return {false, *v};
  return {true, {}};
}

/// <M, T(x)> with the trace inner product.
inline double trace_inner(const Matrix& a, const Matrix& b) {
  return a.cwiseProduct(b).sum();
}

/// Unnormalized log-density exponent -<M,T(x)> + xi(x).
inline double log_kernel(const TraceModel& model, const ParameterMatrix& m,
                         const Vector& x) {
  return -trace_inner(m, model.stat(x)) + model.log_base(x);
}

} // namespace etm
