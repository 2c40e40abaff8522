#pragma once

/**
 * @file inference.hpp
 * @brief Fisher information, Wald tests, and confidence subgraphs.
 *
 * Fisher tensors are stored per-sample over free coordinates (n carried
 * separately), so test statistics compose as n * lambda' (J I^{-1} J')^{-1}
 * lambda. The flattening matches the estimator module: free coordinate k
 * represents entry (i_k, j_k) with its symmetric partner, and the stored
 * statistic is s_k = mult_k * T_{i_k j_k}.
 */

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "estimator.hpp"
#include "graph.hpp"
#include "model.hpp"
#include "normalizer.hpp"

namespace etm {

// ---------------------------------------------------------------------------
// Chi-square survival function
// ---------------------------------------------------------------------------

namespace detail {

/// Regularized upper incomplete gamma Q(a, x), absolute accuracy ~1e-14.
inline double gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw Error("gamma_q: invalid arguments");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) {
    // P(a,x) by series, Q = 1 - P
    double ap = a, sum = 1.0 / a, del = sum;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-16) break;
    }
    return 1.0 - sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  // Q(a,x) by continued fraction (modified Lentz)
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= 500; ++i) {
    double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

} // namespace detail

/// Upper-tail probability of the chi-square law with m degrees of freedom.
inline double chi_square_sf(double w, int m) {
  if (w < 0.0) throw Error("chi_square_sf: statistic must be >= 0");
  if (m < 1) throw Error("chi_square_sf: dof must be >= 1");
  return detail::gamma_q(0.5 * m, 0.5 * w);
}

// ---------------------------------------------------------------------------
// Fisher information
// ---------------------------------------------------------------------------

enum class FisherSource { empirical, model };

/// d x d per-sample information matrix over free coordinates.
struct FisherTensor {
  Matrix info; ///< Cov(s_k, s_l), s_k = mult_k * T_{i_k j_k}
  int n = 0;
  FisherSource source = FisherSource::empirical;
  double condition_number = 0.0;

  /// Full-tensor entry (I)_{ijkl} = Cov(T_ij, T_kl) per sample.
  double entry(const ParameterSpace& space, int i, int j, int k, int l) const {
    int a = space.free_index(i, j), b = space.free_index(k, l);
    if (a < 0 || b < 0) return 0.0;
    return info(a, b) / (space.multiplicity(a) * space.multiplicity(b));
  }
};

namespace detail {

inline void finish_fisher(FisherTensor& f) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(f.info, Eigen::EigenvaluesOnly);
  double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  f.condition_number = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
}

} // namespace detail

/// 1/(n-1)-normalized sample covariance of the per-observation statistics.
inline FisherTensor empirical_fisher(const TraceModel& model, const Dataset& data) {
  const int n = data.n();
  if (n < 2) throw Error("empirical_fisher: need n >= 2");
  const int d = model.space.dim();
  Matrix s(n, d);
  for (int i = 0; i < n; ++i) {
    Matrix t = evaluate_stat(model, data.rows.row(i).transpose());
    for (int k = 0; k < d; ++k) {
      const auto& [a, b] = model.space.free_coords[k];
      s(i, k) = model.space.multiplicity(k) * t(a, b);
    }
  }
  Eigen::RowVectorXd mean = s.colwise().mean();
  Matrix centered = s.rowwise() - mean;
  FisherTensor f;
  f.info = centered.transpose() * centered / (n - 1.0);
  f.n = n;
  f.source = FisherSource::empirical;
  detail::finish_fisher(f);
  return f;
}

/// Model-based information: per-sample covariance tensor of T under f_M.
inline FisherTensor model_fisher(const TraceModel& model, const ParameterMatrix& m,
                                 const EvalStrategy& strategy, int n = 1) {
  MomentBundle bundle = moments(model, m, strategy, 2);
  FisherTensor f;
  f.info = *bundle.cov_free;
  f.n = n;
  f.source = FisherSource::model;
  detail::finish_fisher(f);
  return f;
}

// ---------------------------------------------------------------------------
// Restrictions and Wald tests
// ---------------------------------------------------------------------------

/// Smooth restriction lambda: R^{qxq} -> R^m with jacobian over free
/// coordinates.
struct Restriction {
  int m = 0;
  std::function<Vector(const ParameterMatrix&)> value;
  std::function<Matrix(const ParameterMatrix&)> jacobian; ///< m x d

  /// lambda(M) = M_ij.
  static Restriction single_entry(const ParameterSpace& space, int i, int j) {
    int k = space.free_index(i, j);
    if (k < 0) throw Error("restriction: entry (" + std::to_string(i + 1) + "," +
                           std::to_string(j + 1) + ") is masked to zero");
    Restriction r;
    r.m = 1;
    r.value = [i, j](const ParameterMatrix& mat) {
      Vector v(1);
      v[0] = mat(i, j);
      return v;
    };
    int d = space.dim();
    r.jacobian = [k, d](const ParameterMatrix&) {
      Matrix jac = Matrix::Zero(1, d);
      jac(0, k) = 1.0;
      return jac;
    };
    return r;
  }

  /// lambda(M) = M_ij - M_kl.
  static Restriction entry_difference(const ParameterSpace& space, int i, int j,
                                      int k, int l) {
    int a = space.free_index(i, j), b = space.free_index(k, l);
    if (a < 0 || b < 0) throw Error("restriction: masked entry");
    if (a == b) throw Error("restriction: entries coincide");
    Restriction r;
    r.m = 1;
    r.value = [i, j, k, l](const ParameterMatrix& mat) {
      Vector v(1);
      v[0] = mat(i, j) - mat(k, l);
      return v;
    };
    int d = space.dim();
    r.jacobian = [a, b, d](const ParameterMatrix&) {
      Matrix jac = Matrix::Zero(1, d);
      jac(0, a) = 1.0;
      jac(0, b) = -1.0;
      return jac;
    };
    return r;
  }

  /// lambda(M) = (M_{i_1 j_1}, ..., M_{i_m j_m}).
  static Restriction entry_set(const ParameterSpace& space,
                               const std::vector<std::pair<int, int>>& entries) {
    if (entries.empty()) throw Error("restriction: empty entry set");
    std::vector<int> idx;
    for (auto [i, j] : entries) {
      int k = space.free_index(i, j);
      if (k < 0) throw Error("restriction: masked entry");
      idx.push_back(k);
    }
    Restriction r;
    r.m = static_cast<int>(entries.size());
    r.value = [entries](const ParameterMatrix& mat) {
      Vector v(entries.size());
      for (size_t a = 0; a < entries.size(); ++a)
        v[a] = mat(entries[a].first, entries[a].second);
      return v;
    };
    int d = space.dim();
    r.jacobian = [idx, d](const ParameterMatrix&) {
      Matrix jac = Matrix::Zero(idx.size(), d);
      for (size_t a = 0; a < idx.size(); ++a) jac(a, idx[a]) = 1.0;
      return jac;
    };
    return r;
  }
};

struct TestResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

/// Wald statistic W = lambda' Vhat^{-1} lambda with
/// Vhat = J Ihat^{-1} J' / n for the per-sample Fisher estimate Ihat.
inline TestResult wald_statistic(const FitResult& fit, const FisherTensor& fisher,
                                 const Restriction& r) {
  if (!(fisher.condition_number < 1e12))
    throw Error("wald_statistic: Fisher estimate is numerically singular "
                "(condition number " + std::to_string(fisher.condition_number) + ")");
  Vector lam = r.value(fit.m_hat);
  Matrix jac = r.jacobian(fit.m_hat);
  if (jac.rows() != r.m) throw Error("wald_statistic: jacobian row count mismatch");
  Eigen::FullPivLU<Matrix> rank_check(jac);
  if (rank_check.rank() < r.m)
    throw Error("wald_statistic: jacobian is rank deficient at the estimate");

  Eigen::LDLT<Matrix> info(fisher.info);
  Matrix v = jac * info.solve(jac.transpose()) / fisher.n;
  Eigen::FullPivLU<Matrix> vlu(v);
  if (!vlu.isInvertible())
    throw Error("wald_statistic: restriction covariance is singular");
  TestResult out;
  out.statistic = lam.dot(vlu.solve(lam));
  out.statistic = std::max(out.statistic, 0.0);
  out.dof = r.m;
  out.p_value = chi_square_sf(out.statistic, out.dof);
  return out;
}

/// Single-edge test for H_N: M_ij = 0. The default route is the general
/// Wald statistic with lambda(M) = M_ij; `simplified` switches to the
/// literal form W = n * Ihat_ijij * Mhat_ij^2, which agrees with the general
/// one exactly when Ihat is diagonal.
inline TestResult edge_test(const TraceModel& model, const FitResult& fit,
                            const FisherTensor& fisher, int i, int j,
                            bool simplified = false) {
  if (i == j) throw Error("edge_test: requires i != j");
  int k = model.space.free_index(i, j);
  if (k < 0)
    throw Error("edge_test: entry (" + std::to_string(i + 1) + "," +
                std::to_string(j + 1) + ") is masked to zero and not testable");
  if (simplified) {
    double iijij = fisher.entry(model.space, i, j, i, j);
    TestResult out;
    out.statistic = fisher.n * iijij * fit.m_hat(i, j) * fit.m_hat(i, j);
    out.dof = 1;
    out.p_value = chi_square_sf(out.statistic, 1);
    return out;
  }
  return wald_statistic(fit, fisher, Restriction::single_entry(model.space, i, j));
}

// ---------------------------------------------------------------------------
// Confidence subgraphs (Holm step-down)
// ---------------------------------------------------------------------------

struct SubgraphResult {
  Graph graph;
  double alpha = 0.0;
  std::map<std::pair<int, int>, double> p_values; ///< unordered pairs (i < j)
};

/// Holm step-down over raw p-values: reject while p_(k) <= alpha/(m - k + 1).
/// Returns the set of rejected indices.
inline std::vector<bool> holm_rejections(const std::vector<double>& pvals,
                                         double alpha) {
  const int m = static_cast<int>(pvals.size());
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return pvals[a] < pvals[b]; });
  std::vector<bool> reject(m, false);
  for (int k = 0; k < m; ++k) {
    if (pvals[order[k]] <= alpha / (m - k)) {
      reject[order[k]] = true;
    } else {
      break;
    }
  }
  return reject;
}

/// Edge tests on every free unordered pair with Holm adjustment; the
/// retained edges form a confidence subgraph at level alpha.
inline SubgraphResult confidence_subgraph(const TraceModel& model,
                                          const FitResult& fit,
                                          const FisherTensor& fisher,
                                          double alpha,
                                          bool simplified = false) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw Error("confidence_subgraph: alpha must be in (0, 1)");
  SubgraphResult out;
  out.alpha = alpha;
  out.graph.p = model.q;

  std::vector<std::pair<int, int>> pairs;
  for (const auto& [i, j] : model.space.free_coords)
    if (i != j) pairs.emplace_back(i, j);

  std::vector<double> pvals;
  pvals.reserve(pairs.size());
  for (auto [i, j] : pairs) {
    TestResult t = edge_test(model, fit, fisher, i, j, simplified);
    pvals.push_back(t.p_value);
    out.p_values[{i, j}] = t.p_value;
  }
  std::vector<bool> reject = holm_rejections(pvals, alpha);
  for (size_t k = 0; k < pairs.size(); ++k)
    if (reject[k]) out.graph.add_edge(pairs[k].first, pairs[k].second);
  return out;
}

} // namespace etm
